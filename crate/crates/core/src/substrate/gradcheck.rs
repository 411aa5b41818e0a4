use rand::seq::index::sample;

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Absolute floor on the relative-error denominator, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Coordinates probed per entry; `None` checks all of them.
    pub max_per_entry: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_per_entry: None,
            seed: 0,
        }
    }
}

fn eval_loss<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var)>,
{
    let (g, loss) = f(params)?;
    Ok(g.value(loss).item())
}

/// Compares the tape's analytic gradient with central differences for every
/// parameter entry. `f` must be a pure function of the parameters.
pub fn grad_check<F>(f: F, params: &mut ParamStore, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var)>,
{
    let a = eval_loss(&f, params)?;
    let b = eval_loss(&f, params)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations with identical parameters gave {a} and {b}"
        )));
    }

    params.zero_grad();
    let (g, loss) = f(params)?;
    g.backward(loss, params)?;

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut entries = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let n = params.value(name)?.len();
        let coords: Vec<usize> = match opts.max_per_entry {
            Some(m) if m < n => {
                let mut rng = rng_for(opts.seed, name, k as u64);
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let analytic = params.get(name).expect("listed").grad.clone();
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = params.value(name)?.data()[c];
            params.value_mut(name).expect("listed").data_mut()[c] = orig + opts.h;
            let plus = eval_loss(&f, params)?;
            params.value_mut(name).expect("listed").data_mut()[c] = orig - opts.h;
            let minus = eval_loss(&f, params)?;
            params.value_mut(name).expect("listed").data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let an = analytic.data()[c];
            let denom = an.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            worst = worst.max((an - numeric).abs() / denom);
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            checked: coords.len(),
            max_rel_err: worst,
            passed: worst < opts.tol,
        });
    }
    params.zero_grad();
    Ok(GradCheckReport { entries, tol: opts.tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::{Array, Mode};

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut p = ParamStore::new();
        p.insert("x", Array::scalar(3.0)).unwrap();
        let report = grad_check(
            |p| {
                let mut g = Graph::new(Mode::Train);
                let x = g.param(p, "x")?;
                let y = g.mul(x, x)?;
                let s = g.sum(y)?;
                Ok((g, s))
            },
            &mut p,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.entries[0].max_rel_err < 1e-9, "{report:?}");
    }

    #[test]
    fn nondeterministic_objective_is_rejected() {
        use std::cell::Cell;
        let mut p = ParamStore::new();
        p.insert("x", Array::scalar(1.0)).unwrap();
        let calls = Cell::new(0.0);
        let err = grad_check(
            |p| {
                calls.set(calls.get() + 1.0);
                let mut g = Graph::new(Mode::Train);
                let x = g.param(p, "x")?;
                let y = g.scale(x, calls.get())?;
                let s = g.sum(y)?;
                Ok((g, s))
            },
            &mut p,
            GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic(_)));
    }
}
