//! Raw numeric kernels over flat row-major buffers. No shape checking
//! happens here; callers in `tape` validate before dispatching.

/// `c[m,n] = a[m,k] · b[k,n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c[m,n] = a[m,k] · b[n,k]ᵀ`
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `c[m,n] = a[k,m]ᵀ · b[k,n]`
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Geometry of a batched 3-D convolution over `[N, Cin, D, H, W]`.
/// 2-D convolutions use `d = kd = sd = 1`, `pd = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn output(&self) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            let span = self.input[a] + 2 * self.pad[a];
            o[a] = if span < self.kernel[a] {
                0
            } else {
                (span - self.kernel[a]) / self.stride[a] + 1
            };
        }
        o
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output().iter().product()
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Range of output indices along `axis` whose input tap `k` lands in bounds.
    fn valid(&self, axis: usize, k: usize, out_len: usize) -> (usize, usize) {
        let (s, p, len) = (self.stride[axis], self.pad[axis], self.input[axis]);
        // i = o*s + k - p must satisfy 0 <= i < len
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if len + p > k {
            ((len + p - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Visits every (output offset, input offset) pair for a fixed kernel tap.
    #[inline]
    fn for_each_tap(&self, kz: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let out = self.output();
        let (zlo, zhi) = self.valid(0, kz, out[0]);
        let (ylo, yhi) = self.valid(1, ky, out[1]);
        let (xlo, xhi) = self.valid(2, kx, out[2]);
        if xlo >= xhi {
            return;
        }
        let [_, ih, iw] = self.input;
        for oz in zlo..zhi {
            let iz = oz * self.stride[0] + kz - self.pad[0];
            for oy in ylo..yhi {
                let iy = oy * self.stride[1] + ky - self.pad[1];
                let obase = (oz * out[1] + oy) * out[2];
                let ibase = (iz * ih + iy) * iw;
                let ix0 = xlo * self.stride[2] + kx - self.pad[2];
                f(obase + xlo, ibase + ix0, xhi - xlo);
            }
        }
    }
}

pub fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (ip, op, kv) = (g.in_plane(), g.out_plane(), g.kvol());
    let [kd, kh, kw] = g.kernel;
    let sx = g.stride[2];
    let mut out = vec![0.0; g.n * g.cout * op];
    for n in 0..g.n {
        for co in 0..g.cout {
            let o = &mut out[(n * g.cout + co) * op..(n * g.cout + co + 1) * op];
            o.fill(b[co]);
            for ci in 0..g.cin {
                let xin = &x[(n * g.cin + ci) * ip..(n * g.cin + ci + 1) * ip];
                let wk = &w[(co * g.cin + ci) * kv..(co * g.cin + ci + 1) * kv];
                for kz in 0..kd {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wk[(kz * kh + ky) * kw + kx];
                            g.for_each_tap(kz, ky, kx, |ob, ib, len| {
                                let orow = &mut o[ob..ob + len];
                                if sx == 1 {
                                    for (ov, xv) in orow.iter_mut().zip(&xin[ib..ib + len]) {
                                        *ov += wv * xv;
                                    }
                                } else {
                                    for (j, ov) in orow.iter_mut().enumerate() {
                                        *ov += wv * xin[ib + j * sx];
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is skipped (empty) when `need_dx` is false.
pub fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ip, op, kv) = (g.in_plane(), g.out_plane(), g.kvol());
    let [kd, kh, kw] = g.kernel;
    let sx = g.stride[2];
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.cout];
    for n in 0..g.n {
        for co in 0..g.cout {
            let d = &dout[(n * g.cout + co) * op..(n * g.cout + co + 1) * op];
            db[co] += d.iter().sum::<f64>();
            for ci in 0..g.cin {
                let xoff = (n * g.cin + ci) * ip;
                let xin = &x[xoff..xoff + ip];
                let woff = (co * g.cin + ci) * kv;
                for kz in 0..kd {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let widx = woff + (kz * kh + ky) * kw + kx;
                            let wv = w[widx];
                            let mut acc = 0.0;
                            g.for_each_tap(kz, ky, kx, |ob, ib, len| {
                                let drow = &d[ob..ob + len];
                                if sx == 1 {
                                    acc += drow
                                        .iter()
                                        .zip(&xin[ib..ib + len])
                                        .map(|(a, b)| a * b)
                                        .sum::<f64>();
                                    if need_dx {
                                        let dxr = &mut dx[xoff + ib..xoff + ib + len];
                                        for (dv, gv) in dxr.iter_mut().zip(drow) {
                                            *dv += wv * gv;
                                        }
                                    }
                                } else {
                                    for (j, gv) in drow.iter().enumerate() {
                                        acc += gv * xin[ib + j * sx];
                                        if need_dx {
                                            dx[xoff + ib + j * sx] += wv * gv;
                                        }
                                    }
                                }
                            });
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping max pooling over `[N*C, D, H, W]` planes with window ==
/// stride. Returns the pooled values and the flat input index of each max.
pub fn maxpool_forward(
    planes: usize,
    input: [usize; 3],
    window: [usize; 3],
    x: &[f64],
) -> (Vec<f64>, Vec<usize>, [usize; 3]) {
    let out = [
        input[0] / window[0],
        input[1] / window[1],
        input[2] / window[2],
    ];
    let ip: usize = input.iter().product();
    let op: usize = out.iter().product();
    let mut vals = Vec::with_capacity(planes * op);
    let mut idx = Vec::with_capacity(planes * op);
    for p in 0..planes {
        let base = p * ip;
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for dz in 0..window[0] {
                        for dy in 0..window[1] {
                            for dx in 0..window[2] {
                                let iz = oz * window[0] + dz;
                                let iy = oy * window[1] + dy;
                                let ix = ox * window[2] + dx;
                                let i = base + (iz * input[1] + iy) * input[2] + ix;
                                if x[i] > best {
                                    best = x[i];
                                    arg = i;
                                }
                            }
                        }
                    }
                    vals.push(best);
                    idx.push(arg);
                }
            }
        }
    }
    (vals, idx, out)
}

/// Same-padded 1-D convolution over a channels-last sequence.
/// `x: [L, cin]`, `w: [cout, cin, k]`, output `[L, cout]`.
pub fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    len: usize,
    cin: usize,
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let pad = k / 2;
    let wt = tap_major(w, cin, cout, k);
    let mut out = vec![0.0; len * cout];
    for t in 0..len {
        let orow = &mut out[t * cout..(t + 1) * cout];
        orow.copy_from_slice(b);
        for tap in 0..k {
            let src = t + tap;
            if src < pad || src - pad >= len {
                continue;
            }
            let xrow = &x[(src - pad) * cin..(src - pad + 1) * cin];
            let wtap = &wt[tap * cin * cout..(tap + 1) * cin * cout];
            for (i, xv) in xrow.iter().enumerate() {
                let wrow = &wtap[i * cout..(i + 1) * cout];
                for (ov, wv) in orow.iter_mut().zip(wrow) {
                    *ov += xv * wv;
                }
            }
        }
    }
    out
}

pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    len: usize,
    cin: usize,
    cout: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = k / 2;
    let wt = tap_major(w, cin, cout, k);
    let mut dx = vec![0.0; len * cin];
    let mut dwt = vec![0.0; k * cin * cout];
    let mut db = vec![0.0; cout];
    for t in 0..len {
        let drow = &dout[t * cout..(t + 1) * cout];
        for (a, d) in db.iter_mut().zip(drow) {
            *a += d;
        }
        for tap in 0..k {
            let src = t + tap;
            if src < pad || src - pad >= len {
                continue;
            }
            let s = src - pad;
            for i in 0..cin {
                let xv = x[s * cin + i];
                let off = (tap * cin + i) * cout;
                let wrow = &wt[off..off + cout];
                let mut acc = 0.0;
                for ((dw, wv), dv) in dwt[off..off + cout].iter_mut().zip(wrow).zip(drow) {
                    *dw += xv * dv;
                    acc += wv * dv;
                }
                dx[s * cin + i] += acc;
            }
        }
    }
    // back to [cout, cin, k]
    let mut dw = vec![0.0; cout * cin * k];
    for o in 0..cout {
        for i in 0..cin {
            for tap in 0..k {
                dw[(o * cin + i) * k + tap] = dwt[(tap * cin + i) * cout + o];
            }
        }
    }
    (dx, dw, db)
}

/// Reorders `[cout, cin, k]` weights to `[k, cin, cout]`.
fn tap_major(w: &[f64], cin: usize, cout: usize, k: usize) -> Vec<f64> {
    let mut wt = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for tap in 0..k {
                wt[(tap * cin + i) * cout + o] = w[(o * cin + i) * k + tap];
            }
        }
    }
    wt
}
