//! Straight-line reference implementations used as test oracles.
//!
//! Nothing here calls into the crate's numerical kernels: matrices are plain
//! row-major `Vec<f64>` and every product is an explicit loop.

#![allow(dead_code)]

use csifeed_core::lora::LoraParams;
use csifeed_core::quant::QuantConfig;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_vec<R: Rng>(rng: &mut R, len: usize, sd: f64) -> Vec<f64> {
    (0..len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `y = W·x` for `W` stored `rows × x.len()`.
pub fn mv(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|i| (0..cols).map(|j| w[i * cols + j] * x[j]).sum()).collect()
}

/// `y = Wᵀ·x` for `W` stored `x.len() × cols`.
pub fn mv_t(w: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    let rows = x.len();
    (0..cols).map(|j| (0..rows).map(|i| w[i * cols + j] * x[i]).sum()).collect()
}

/// Quantizer replaced by its surrogate with the rounding offsets frozen:
/// `r̂ = s·(clip(u) + c) + z`, `u = (r − z)/s`.
#[derive(Clone, Debug)]
pub struct FrozenQuant {
    pub scale: f64,
    pub zero: f64,
    pub high: f64,
    pub offsets: Vec<f64>,
}

impl FrozenQuant {
    pub fn normalized(&self, r: f64) -> f64 {
        ((r - self.zero) / self.scale).clamp(0.0, self.high)
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.offsets)
            .map(|(&r, c)| self.scale * (self.normalized(r) + c) + self.zero)
            .collect()
    }
}

/// Unrolled network with one weight pair per block.
#[derive(Clone, Debug)]
pub struct NaiveNet {
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub a: Vec<f64>,
    pub alpha: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
    pub quant: Option<FrozenQuant>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveGrads {
    pub a: Vec<f64>,
    pub alpha: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
    pub scale: f64,
    pub zero: f64,
}

struct Trace {
    v_raw: Vec<f64>,
    xs: Vec<Vec<f64>>,
    res: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    dirs: Vec<Vec<f64>>,
}

impl NaiveNet {
    /// Copies `params`, sharing the MLP weights across `blocks` blocks.
    pub fn from_params(p: &LoraParams) -> Self {
        let blocks = p.alpha.len();
        Self {
            n: p.a.cols(),
            m: p.a.rows(),
            h: p.w1.rows(),
            a: p.a.as_slice().to_vec(),
            alpha: p.alpha.clone(),
            w1: vec![p.w1.as_slice().to_vec(); blocks],
            w2: vec![p.w2.as_slice().to_vec(); blocks],
            quant: None,
        }
    }

    /// Freezes the rounding offsets of the real quantizer at input `x`.
    pub fn attach_quant(&mut self, p: &LoraParams, cfg: &QuantConfig, x: &[f64]) {
        let mut fq = FrozenQuant {
            scale: p.quant.scale,
            zero: p.quant.zero_point,
            high: cfg.high() as f64,
            offsets: Vec::new(),
        };
        let raw = mv(&self.a, self.m, x);
        fq.offsets = raw
            .iter()
            .map(|&r| {
                let u = fq.normalized(r);
                u.round() - u
            })
            .collect();
        self.quant = Some(fq);
    }

    pub fn blocks(&self) -> usize {
        self.alpha.len()
    }

    fn run(&self, x_in: &[f64]) -> Trace {
        let v_raw = mv(&self.a, self.m, x_in);
        let v = match &self.quant {
            Some(q) => q.apply(&v_raw),
            None => v_raw.clone(),
        };
        let mut t = Trace {
            v_raw,
            xs: vec![vec![0.0; self.n]],
            res: vec![],
            pre: vec![],
            dirs: vec![],
        };
        for b in 0..self.blocks() {
            let x = t.xs.last().unwrap().clone();
            let ax = mv(&self.a, self.m, &x);
            let r: Vec<f64> = ax.iter().zip(&v).map(|(p, q)| p - q).collect();
            let mut d = mv_t(&self.a, self.n, &r);
            let pre = mv(&self.w1[b], self.h, &x);
            let hid: Vec<f64> = pre.iter().map(|p| p.max(0.0)).collect();
            let reg = mv(&self.w2[b], self.n, &hid);
            d.iter_mut().zip(&reg).for_each(|(di, ri)| *di += ri);
            let next: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi - self.alpha[b] * di).collect();
            t.xs.push(next);
            t.res.push(r);
            t.pre.push(pre);
            t.dirs.push(d);
        }
        t
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.run(x).xs.pop().unwrap()
    }

    /// Block outputs `x⁽⁰⁾ … x⁽ᵀ⁾`.
    pub fn iterates(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.run(x).xs
    }

    pub fn measurements(&self, x: &[f64]) -> Vec<f64> {
        let raw = mv(&self.a, self.m, x);
        match &self.quant {
            Some(q) => q.apply(&raw),
            None => raw,
        }
    }

    /// Smallest `|W₁·x⁽ᵗ⁾|` entry over blocks after the first (whose input
    /// is identically zero), to keep clear of ReLU kinks.
    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        self.run(x).pre.iter().skip(1).flatten().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Smallest distance of a normalized measurement from a clip bound.
    pub fn min_clip_margin(&self, x: &[f64]) -> f64 {
        let Some(q) = &self.quant else {
            return f64::INFINITY;
        };
        mv(&self.a, self.m, x)
            .iter()
            .map(|&r| {
                let u = (r - q.zero) / q.scale;
                u.abs().min((u - q.high).abs())
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn loss(&self, x: &[f64], target: &[f64]) -> f64 {
        self.forward(x).iter().zip(target).map(|(p, q)| (p - q) * (p - q)).sum()
    }

    /// Reverse-mode gradient of `‖x̂ − target‖²`, one weight pair per block.
    pub fn backward(&self, x_in: &[f64], target: &[f64]) -> NaiveGrads {
        let (n, m, h) = (self.n, self.m, self.h);
        let t = self.run(x_in);
        let blocks = self.blocks();
        let mut g = NaiveGrads {
            a: vec![0.0; m * n],
            alpha: vec![0.0; blocks],
            w1: vec![vec![0.0; h * n]; blocks],
            w2: vec![vec![0.0; n * h]; blocks],
            scale: 0.0,
            zero: 0.0,
        };
        let mut gx: Vec<f64> = t.xs[blocks].iter().zip(target).map(|(p, q)| 2.0 * (p - q)).collect();
        let mut gv = vec![0.0; m];
        for b in (0..blocks).rev() {
            let x = &t.xs[b];
            let d = &t.dirs[b];
            g.alpha[b] = -(0..n).map(|k| gx[k] * d[k]).sum::<f64>();
            let gd: Vec<f64> = gx.iter().map(|u| -self.alpha[b] * u).collect();
            let mut gx_prev = gx.clone();
            // d = Aᵀ r + W₂ relu(W₁ x)
            let pre = &t.pre[b];
            let mut gpre = vec![0.0; h];
            for j in 0..h {
                let hid = pre[j].max(0.0);
                let mut acc = 0.0;
                for i in 0..n {
                    g.w2[b][i * h + j] += gd[i] * hid;
                    acc += self.w2[b][i * h + j] * gd[i];
                }
                gpre[j] = if pre[j] > 0.0 { acc } else { 0.0 };
            }
            for j in 0..h {
                for k in 0..n {
                    g.w1[b][j * n + k] += gpre[j] * x[k];
                    gx_prev[k] += self.w1[b][j * n + k] * gpre[j];
                }
            }
            let r = &t.res[b];
            let mut gr = vec![0.0; m];
            for i in 0..m {
                for k in 0..n {
                    g.a[i * n + k] += r[i] * gd[k];
                    gr[i] += self.a[i * n + k] * gd[k];
                }
            }
            // r = A x − v
            for i in 0..m {
                for k in 0..n {
                    g.a[i * n + k] += gr[i] * x[k];
                    gx_prev[k] += self.a[i * n + k] * gr[i];
                }
                gv[i] -= gr[i];
            }
            gx = gx_prev;
        }
        let graw: Vec<f64> = match &self.quant {
            Some(q) => t
                .v_raw
                .iter()
                .zip(&q.offsets)
                .zip(&gv)
                .map(|((&r, &c), &up)| {
                    let u = (r - q.zero) / q.scale;
                    if u > 0.0 && u < q.high {
                        g.scale += up * c;
                        up
                    } else {
                        g.scale += up * if u <= 0.0 { 0.0 } else { q.high };
                        g.zero += up;
                        0.0
                    }
                })
                .collect(),
            None => gv,
        };
        for i in 0..m {
            for k in 0..n {
                g.a[i * n + k] += graw[i] * x_in[k];
            }
        }
        g
    }
}

/// Coordinates of a [`NaiveNet`] as a flat list of mutable handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coord {
    A(usize),
    Alpha(usize),
    /// Shared weight: perturbed in every block at once.
    W1(usize),
    W2(usize),
    Scale,
    Zero,
}

impl NaiveNet {
    pub fn coords(&self) -> Vec<Coord> {
        let mut out: Vec<Coord> = (0..self.a.len()).map(Coord::A).collect();
        out.extend((0..self.blocks()).map(Coord::Alpha));
        out.extend((0..self.h * self.n).map(Coord::W1));
        out.extend((0..self.n * self.h).map(Coord::W2));
        if self.quant.is_some() {
            out.push(Coord::Scale);
            out.push(Coord::Zero);
        }
        out
    }

    pub fn nudge(&mut self, c: Coord, delta: f64) {
        match c {
            Coord::A(i) => self.a[i] += delta,
            Coord::Alpha(i) => self.alpha[i] += delta,
            Coord::W1(i) => self.w1.iter_mut().for_each(|w| w[i] += delta),
            Coord::W2(i) => self.w2.iter_mut().for_each(|w| w[i] += delta),
            Coord::Scale => self.quant.as_mut().unwrap().scale += delta,
            Coord::Zero => self.quant.as_mut().unwrap().zero += delta,
        }
    }

    /// Central difference of the loss along `c`. The loss difference is
    /// formed as `Σ (e⁺ − e⁻)(e⁺ + e⁻)` to avoid cancelling two large sums.
    pub fn central_difference(&self, c: Coord, x: &[f64], target: &[f64], eps: f64) -> f64 {
        let mut plus = self.clone();
        plus.nudge(c, eps);
        let mut minus = self.clone();
        minus.nudge(c, -eps);
        let (hp, hm) = (plus.forward(x), minus.forward(x));
        let diff: f64 = hp
            .iter()
            .zip(&hm)
            .zip(target)
            .map(|((p, m), t)| (p - m) * ((p - t) + (m - t)))
            .sum();
        diff / (2.0 * eps)
    }
}

/// Relative error with an absolute floor for entries that are
/// numerically zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest per-coordinate relative error over `(analytic, reference)`
/// pairs. Coordinates smaller than `1e-4` of the largest reference entry
/// are compared against that floor, below which central differences at
/// `ε = 1e-6` carry no significant digits.
pub fn max_relative_error(pairs: &[(f64, f64)]) -> (f64, usize) {
    let scale = pairs.iter().fold(0.0f64, |m, &(_, b)| m.max(b.abs()));
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| (rel_err(a, b, 1e-4 * scale), i))
        .fold((0.0, 0), |acc, e| if e.0 > acc.0 { e } else { acc })
}

/// `x ← x − α·Aᵀ(A·x − v)` `iters` times from zero, one step size per
/// iteration.
pub fn landweber(a: &[f64], m: usize, n: usize, v: &[f64], steps: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for &step in steps {
        let ax = mv(a, m, &x);
        let r: Vec<f64> = ax.iter().zip(v).map(|(p, q)| p - q).collect();
        let g = mv_t(a, n, &r);
        x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= step * gi);
    }
    x
}

/// Singular values of an `m × n` matrix by one-sided Jacobi rotations,
/// in descending order.
pub fn jacobi_singular_values(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    // columns of A as vectors
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * x - s * y;
                    cols[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Least squares restricted to the columns in `support`, by Gaussian
/// elimination on the normal equations. Returns the full-length solution.
pub fn support_least_squares(a: &[f64], m: usize, n: usize, v: &[f64], support: &[usize]) -> Vec<f64> {
    let k = support.len();
    let mut g = vec![vec![0.0; k + 1]; k];
    for (r, &sr) in support.iter().enumerate() {
        for (c, &sc) in support.iter().enumerate() {
            g[r][c] = (0..m).map(|i| a[i * n + sr] * a[i * n + sc]).sum();
        }
        g[r][k] = (0..m).map(|i| a[i * n + sr] * v[i]).sum();
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&x, &y| g[x][col].abs().partial_cmp(&g[y][col].abs()).unwrap()).unwrap();
        g.swap(col, piv);
        for row in 0..k {
            if row != col {
                let f = g[row][col] / g[col][col];
                for c in col..=k {
                    g[row][c] -= f * g[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for (r, &sr) in support.iter().enumerate() {
        x[sr] = g[r][k] / g[r][r];
    }
    x
}
