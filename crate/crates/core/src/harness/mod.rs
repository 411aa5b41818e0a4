//! Training phases, run directories, evaluation artifacts and ablation
//! sweeps.

pub mod ablate;
pub mod artifacts;
pub mod config;
pub mod record;
pub mod train;

pub use ablate::{ablate, AblationCell, AblationTable, Grid};
pub use artifacts::{
    decode_pgm, encode_pgm, evaluate, export_attention_files, format_matrix_csv, format_predictions, parse_matrix_csv,
    parse_predictions, AttentionExport, Prediction,
};
pub use config::{FinetuneSection, ModelSection, PhaseConfig, PretrainSection, SchedulerKind, TrainConfig};
pub use record::{EpochRecord, Phase, RecordLine, Retrieval, RunRecord};
pub use train::{
    finetune, load_model, pretrain, tokenizer_for, LoadedModel, RunOptions, RunOutcome, BEST_CKPT, CONFIG_FILE,
    LAST_CKPT, PREDICTIONS_FILE, RECORD_FILE, REPORT_FILE,
};
