//! Convex tonic/phasic decomposition of skin conductance.
//!
//! The observed signal `y` is modelled as `phasic + tonic + noise` with
//!
//! * `phasic = M q`, `driver = A q`, where `A` and `M` are the AR and MA
//!   parts of the bilinear discretisation of the biexponential (Bateman)
//!   response, so the driver is filtered into the phasic component;
//! * `tonic = B l + C d`, a cubic spline with knots every `knot_spacing`
//!   seconds plus an offset and a linear drift.
//!
//! The estimate solves
//!
//! ```text
//! minimize  ½‖Mq + Bl + Cd − y‖² + α·1ᵀAq + ½γ‖l‖²   subject to  Aq ≥ 0
//! ```
//!
//! with a primal-dual interior point method. The Newton systems are solved
//! by eliminating `q` through a banded (pentadiagonal) factorisation and
//! then solving the small dense Schur complement in `(d, l)`.
//!
//! The input mean is removed before solving and added back to the tonic
//! part; the constant lies in the unpenalised drift span, so this does not
//! change the optimum.

use nalgebra::{DMatrix, DVector};

use crate::config::CvxEdaParams;
use crate::error::{Error, Result};

/// Raw solver output in the input units.
#[derive(Debug, Clone)]
pub struct CvxEdaSolution {
    pub tonic: Vec<f64>,
    pub phasic: Vec<f64>,
    pub driver: Vec<f64>,
    pub residual: Vec<f64>,
    /// Spline and drift coefficients for the mean-removed input.
    pub spline: Vec<f64>,
    pub drift: [f64; 2],
    /// Objective value after each interior point iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

/// AR coefficients of the discretised response (`a[0]` applies to the
/// current sample).
fn ar_coefficients(tau0: f64, tau1: f64, delta: f64) -> [f64; 3] {
    let a1 = 1.0 / tau1.min(tau0);
    let a0 = 1.0 / tau1.max(tau0);
    let den = (a1 - a0) * delta * delta;
    [
        (a1 * delta + 2.0) * (a0 * delta + 2.0) / den,
        (2.0 * a1 * a0 * delta * delta - 8.0) / den,
        (a1 * delta - 2.0) * (a0 * delta - 2.0) / den,
    ]
}

const MA: [f64; 3] = [1.0, 2.0, 1.0];

/// `out[i] = c0 v[i] + c1 v[i-1] + c2 v[i-2]` for `i >= 2`, zero for `i < 2`.
fn lower3(c: &[f64; 3], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    out.iter_mut().take(2.min(n)).for_each(|o| *o = 0.0);
    for i in 2..n {
        out[i] = c[0] * v[i] + c[1] * v[i - 1] + c[2] * v[i - 2];
    }
}

/// Transpose of [`lower3`].
fn lower3_t(c: &[f64; 3], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 2..n {
        out[i] += c[0] * v[i];
        out[i - 1] += c[1] * v[i];
        out[i - 2] += c[2] * v[i];
    }
}

/// A column of the tonic basis, nonzero on `start..start + values.len()`.
struct SparseColumn {
    start: usize,
    values: Vec<f64>,
}

impl SparseColumn {
    fn end(&self) -> usize {
        self.start + self.values.len()
    }

    fn dot(&self, v: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(&v[self.start..self.end()])
            .map(|(a, b)| a * b)
            .sum()
    }

    fn axpy(&self, alpha: f64, out: &mut [f64]) {
        for (o, v) in out[self.start..self.end()].iter_mut().zip(&self.values) {
            *o += alpha * v;
        }
    }
}

/// Drift columns followed by the cubic spline columns.
fn tonic_basis(n: usize, delta: f64, knot_spacing: f64) -> Vec<SparseColumn> {
    let mut cols = vec![
        SparseColumn {
            start: 0,
            values: vec![1.0; n],
        },
        SparseColumn {
            start: 0,
            values: (1..=n).map(|i| i as f64 / n as f64).collect(),
        },
    ];

    let step = ((knot_spacing / delta).round() as usize).max(1);
    // Triangle of half-width `step`, convolved with itself.
    let tri: Vec<f64> = (1..step).chain((1..=step).rev()).map(|v| v as f64).collect();
    let mut spl = vec![0.0; 2 * tri.len() - 1];
    for (i, a) in tri.iter().enumerate() {
        for (j, b) in tri.iter().enumerate() {
            spl[i + j] += a * b;
        }
    }
    let peak = spl.iter().copied().fold(0.0, f64::max);
    spl.iter_mut().for_each(|v| *v /= peak);
    let half = (spl.len() / 2) as isize;

    for center in (0..n).step_by(step) {
        let lo = center as isize - half;
        let start = lo.max(0) as usize;
        let end = ((center as isize + half + 1) as usize).min(n);
        let values = (start..end).map(|i| spl[(i as isize - lo) as usize]).collect();
        cols.push(SparseColumn { start, values });
    }
    cols
}

/// `LDLᵀ` factorisation of a symmetric pentadiagonal matrix.
struct Pentadiagonal {
    l1: Vec<f64>,
    l2: Vec<f64>,
    d: Vec<f64>,
}

impl Pentadiagonal {
    /// `diag[i] = K[i,i]`, `off1[i] = K[i,i-1]`, `off2[i] = K[i,i-2]`.
    fn factor(diag: &[f64], off1: &[f64], off2: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            if i >= 2 {
                l2[i] = off2[i] / d[i - 2];
            }
            if i >= 1 {
                let mut k = off1[i];
                if i >= 2 {
                    k -= l2[i] * d[i - 2] * l1[i - 1];
                }
                l1[i] = k / d[i - 1];
            }
            let mut di = diag[i];
            if i >= 1 {
                di -= l1[i] * l1[i] * d[i - 1];
            }
            if i >= 2 {
                di -= l2[i] * l2[i] * d[i - 2];
            }
            if !(di > 0.0) {
                return Err(Error::validation("interior point system lost positive definiteness"));
            }
            d[i] = di;
        }
        Ok(Pentadiagonal { l1, l2, d })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut v = x[i];
            if i >= 1 {
                v -= self.l1[i] * x[i - 1];
            }
            if i >= 2 {
                v -= self.l2[i] * x[i - 2];
            }
            x[i] = v;
        }
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            if i + 1 < n {
                v -= self.l1[i + 1] * x[i + 1];
            }
            if i + 2 < n {
                v -= self.l2[i + 2] * x[i + 2];
            }
            x[i] = v;
        }
    }

    /// Solves for `m` right-hand sides stored row-major in `x` (`n × m`).
    fn solve_rows_in_place(&self, x: &mut [f64], m: usize) {
        let n = self.d.len();
        for i in 1..n {
            let (prev, cur) = x.split_at_mut(i * m);
            let cur = &mut cur[..m];
            let r1 = &prev[(i - 1) * m..i * m];
            let l1 = self.l1[i];
            if i >= 2 {
                let r2 = &prev[(i - 2) * m..(i - 1) * m];
                let l2 = self.l2[i];
                for ((c, a), b) in cur.iter_mut().zip(r1).zip(r2) {
                    *c -= l1 * a + l2 * b;
                }
            } else {
                for (c, a) in cur.iter_mut().zip(r1) {
                    *c -= l1 * a;
                }
            }
        }
        for i in 0..n {
            let inv = 1.0 / self.d[i];
            x[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= inv);
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let (cur, next) = x.split_at_mut((i + 1) * m);
            let cur = &mut cur[i * m..];
            let r1 = &next[..m];
            let l1 = self.l1[i + 1];
            if i + 2 < n {
                let r2 = &next[m..2 * m];
                let l2 = self.l2[i + 2];
                for ((c, a), b) in cur.iter_mut().zip(r1).zip(r2) {
                    *c -= l1 * a + l2 * b;
                }
            } else {
                for (c, a) in cur.iter_mut().zip(r1) {
                    *c -= l1 * a;
                }
            }
        }
    }
}

/// Adds `w_r · c_j c_k` for every row `r >= 2` of a three-band lower matrix
/// with coefficients `c` into the pentadiagonal bands.
fn add_gram(c: &[f64; 3], weight: impl Fn(usize) -> f64, diag: &mut [f64], off1: &mut [f64], off2: &mut [f64]) {
    let n = diag.len();
    for r in 2..n {
        let w = weight(r);
        if w == 0.0 {
            continue;
        }
        // Columns r, r-1, r-2 carry c[0], c[1], c[2].
        diag[r] += w * c[0] * c[0];
        diag[r - 1] += w * c[1] * c[1];
        diag[r - 2] += w * c[2] * c[2];
        off1[r] += w * c[0] * c[1];
        off1[r - 1] += w * c[1] * c[2];
        off2[r] += w * c[0] * c[2];
    }
}

struct Problem<'a> {
    y: &'a [f64],
    ar: [f64; 3],
    basis: Vec<SparseColumn>,
    alpha: f64,
    gamma: f64,
    /// Columns of `Mᵀ[C B]`, stored sparsely.
    coupling: Vec<SparseColumn>,
    /// `[C B]ᵀ[C B] + diag(0, 0, γ…)`.
    tonic_gram: DMatrix<f64>,
    /// `αAᵀ1`.
    driver_cost: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(y: &'a [f64], params: &CvxEdaParams, delta: f64) -> Self {
        let n = y.len();
        let ar = ar_coefficients(params.tau0, params.tau1, delta);
        let basis = tonic_basis(n, delta, params.knot_spacing);
        let m = basis.len();

        let mut coupling = Vec::with_capacity(m);
        let mut dense = vec![0.0; n];
        let mut out = vec![0.0; n];
        for col in &basis {
            dense.iter_mut().for_each(|v| *v = 0.0);
            col.axpy(1.0, &mut dense);
            lower3_t(&MA, &dense, &mut out);
            let start = col.start.saturating_sub(2);
            let end = col.end();
            coupling.push(SparseColumn {
                start,
                values: out[start..end].to_vec(),
            });
        }

        let mut tonic_gram = DMatrix::zeros(m, m);
        for j in 0..m {
            for k in j..m {
                let (a, b) = (&basis[j], &basis[k]);
                let lo = a.start.max(b.start);
                let hi = a.end().min(b.end());
                let mut s = 0.0;
                for i in lo..hi {
                    s += a.values[i - a.start] * b.values[i - b.start];
                }
                tonic_gram[(j, k)] = s;
                tonic_gram[(k, j)] = s;
            }
            if j >= 2 {
                tonic_gram[(j, j)] += params.gamma;
            }
        }

        let mut driver_cost = vec![0.0; n];
        let ones: Vec<f64> = (0..n).map(|i| if i >= 2 { params.alpha } else { 0.0 }).collect();
        lower3_t(&ar, &ones, &mut driver_cost);

        Problem {
            y,
            ar,
            basis,
            alpha: params.alpha,
            gamma: params.gamma,
            coupling,
            tonic_gram,
            driver_cost,
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    /// `Mq + [C B]u`.
    fn model(&self, q: &[f64], u: &[f64]) -> Vec<f64> {
        let mut e = vec![0.0; self.n()];
        lower3(&MA, q, &mut e);
        for (col, &c) in self.basis.iter().zip(u) {
            col.axpy(c, &mut e);
        }
        e
    }

    fn objective(&self, q: &[f64], u: &[f64]) -> f64 {
        let e = self.model(q, u);
        let fit: f64 = e.iter().zip(self.y).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut p = vec![0.0; self.n()];
        lower3(&self.ar, q, &mut p);
        let sparsity: f64 = p.iter().sum();
        let ridge: f64 = u[2..].iter().map(|v| v * v).sum();
        0.5 * fit + self.alpha * sparsity + 0.5 * self.gamma * ridge
    }

    /// Gradient of the objective, `Hx + g`.
    fn gradient(&self, q: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut e = self.model(q, u);
        e.iter_mut().zip(self.y).for_each(|(a, b)| *a -= b);
        let mut gq = vec![0.0; self.n()];
        lower3_t(&MA, &e, &mut gq);
        gq.iter_mut().zip(&self.driver_cost).for_each(|(a, b)| *a += b);
        let gu = self
            .basis
            .iter()
            .enumerate()
            .map(|(j, col)| col.dot(&e) + if j >= 2 { self.gamma * u[j] } else { 0.0 })
            .collect();
        (gq, gu)
    }
}

/// Newton system `(H + GᵀWG) Δx = r`, factorised once per iteration.
struct NewtonSystem {
    banded: Pentadiagonal,
    /// `K⁻¹ Mᵀ[C B]`, row-major `n × m`.
    solved_coupling: Vec<f64>,
    schur: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    m: usize,
}

impl NewtonSystem {
    fn new(p: &Problem, weights: &[f64]) -> Result<Self> {
        let n = p.n();
        let m = p.m();
        let mut diag = vec![0.0; n];
        let mut off1 = vec![0.0; n];
        let mut off2 = vec![0.0; n];
        add_gram(&MA, |_| 1.0, &mut diag, &mut off1, &mut off2);
        add_gram(&p.ar, |r| weights[r], &mut diag, &mut off1, &mut off2);
        let scale = diag.iter().copied().fold(0.0, f64::max).max(1.0);
        diag.iter_mut().for_each(|d| *d += 1e-12 * scale);
        let banded = Pentadiagonal::factor(&diag, &off1, &off2)?;

        let mut x = vec![0.0; n * m];
        for (j, col) in p.coupling.iter().enumerate() {
            for (k, v) in col.values.iter().enumerate() {
                x[(col.start + k) * m + j] = *v;
            }
        }
        banded.solve_rows_in_place(&mut x, m);

        let mut schur = p.tonic_gram.clone();
        let mut acc = vec![0.0; m];
        for (j, col) in p.coupling.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (k, v) in col.values.iter().enumerate() {
                let row = &x[(col.start + k) * m..(col.start + k + 1) * m];
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += v * r;
                }
            }
            for (k, a) in acc.iter().enumerate() {
                schur[(j, k)] -= a;
            }
        }
        let sym = (&schur + schur.transpose()) * 0.5;
        let schur = match sym.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = 1e-10 * sym.diagonal().amax().max(1.0);
                (sym + DMatrix::identity(m, m) * jitter)
                    .cholesky()
                    .ok_or_else(|| Error::validation("tonic Schur complement is not positive definite"))?
            }
        };
        Ok(NewtonSystem {
            banded,
            solved_coupling: x,
            schur,
            m,
        })
    }

    fn solve(&self, p: &Problem, rq: &[f64], ru: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        let mut w = rq.to_vec();
        self.banded.solve_in_place(&mut w);
        let t: Vec<f64> = ru.iter().zip(&p.coupling).map(|(r, col)| r - col.dot(&w)).collect();
        let du = self.schur.solve(&DVector::from_vec(t));
        let du = du.as_slice();
        for (i, wi) in w.iter_mut().enumerate() {
            let row = &self.solved_coupling[i * m..(i + 1) * m];
            *wi -= row.iter().zip(du).map(|(a, b)| a * b).sum::<f64>();
        }
        (w, du.to_vec())
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Decomposes `y`, sampled every `delta` seconds.
pub fn solve(y: &[f64], delta: f64, params: &CvxEdaParams) -> Result<CvxEdaSolution> {
    let n = y.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("{n} samples are too few to decompose")));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let ys: Vec<f64> = y.iter().map(|v| v - mean).collect();

    let p = Problem::new(&ys, params, delta);
    let m = p.m();
    let constraints = n - 2;

    // Strictly feasible start: a small constant driver, tonic fitted to the rest.
    let s0 = 0.1;
    let mut q = vec![0.0; n];
    for i in 2..n {
        q[i] = (s0 - p.ar[1] * q[i - 1] - p.ar[2] * q[i - 2]) / p.ar[0];
    }
    let mut u = {
        let mut r = vec![0.0; n];
        lower3(&MA, &q, &mut r);
        let rhs: Vec<f64> = p
            .basis
            .iter()
            .map(|col| {
                col.values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * (ys[col.start + k] - r[col.start + k]))
                    .sum()
            })
            .collect();
        p.tonic_gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&DVector::from_vec(rhs)).as_slice().to_vec())
            .unwrap_or_else(|| vec![0.0; m])
    };
    // Slack and multiplier vectors are indexed by AR row (rows 0 and 1 unused).
    let mut s = vec![0.0; n];
    lower3(&p.ar, &q, &mut s);
    let mut z = vec![0.0; n];
    z[2..].iter_mut().for_each(|v| *v = 1.0);

    let mut history = Vec::new();
    let mut last_gap = f64::INFINITY;
    let mut last_res = f64::INFINITY;
    let g_scale = 1.0 + norm_inf(&p.driver_cost).max(norm_inf(&ys));

    for iter in 0..params.max_iter {
        let (mut rdq, rdu) = p.gradient(&q, &u);
        let mut gz = vec![0.0; n];
        lower3_t(&p.ar, &z, &mut gz);
        rdq.iter_mut().zip(&gz).for_each(|(a, b)| *a -= b);
        let mut gq = vec![0.0; n];
        lower3(&p.ar, &q, &mut gq);
        let rp: Vec<f64> = (0..n).map(|i| if i >= 2 { gq[i] - s[i] } else { 0.0 }).collect();

        let gap: f64 = s[2..].iter().zip(&z[2..]).map(|(a, b)| a * b).sum();
        let obj = p.objective(&q, &u);
        history.push(obj);
        let dual_res = norm_inf(&rdq).max(norm_inf(&rdu)) / g_scale;
        let primal_res = norm_inf(&rp) / (1.0 + norm_inf(&s));
        last_gap = gap / (1.0 + obj.abs());
        last_res = dual_res.max(primal_res);
        if last_gap < params.tolerance && last_res < params.tolerance {
            return Ok(finish(&p, &q, &u, y, mean, history, iter));
        }

        let mu = gap / constraints as f64;
        let weights: Vec<f64> = (0..n).map(|i| if i >= 2 { z[i] / s[i] } else { 0.0 }).collect();
        let system = NewtonSystem::new(&p, &weights)?;

        // Returns (Δq, Δu, Δs, Δz) for a complementarity target `rc`.
        let direction = |rc: &[f64]| {
            // rhs_q = −r_dq − Gᵀ(S⁻¹ r_c + W r_p)
            let mut corr = vec![0.0; n];
            for i in 2..n {
                corr[i] = rc[i] / s[i] + weights[i] * rp[i];
            }
            let mut gt = vec![0.0; n];
            lower3_t(&p.ar, &corr, &mut gt);
            let rhs_q: Vec<f64> = rdq.iter().zip(&gt).map(|(a, b)| -a - b).collect();
            let rhs_u: Vec<f64> = rdu.iter().map(|a| -a).collect();
            let (dq, du) = system.solve(&p, &rhs_q, &rhs_u);
            let mut ds = vec![0.0; n];
            lower3(&p.ar, &dq, &mut ds);
            let mut dz = vec![0.0; n];
            for i in 2..n {
                ds[i] += rp[i];
                dz[i] = -(rc[i] + z[i] * ds[i]) / s[i];
            }
            ds[0] = 0.0;
            ds[1] = 0.0;
            (dq, du, ds, dz)
        };

        let rc_aff: Vec<f64> = (0..n).map(|i| if i >= 2 { s[i] * z[i] } else { 0.0 }).collect();
        let (_, _, ds_a, dz_a) = direction(&rc_aff);
        let a_aff = max_step(&s[2..], &ds_a[2..]).min(max_step(&z[2..], &dz_a[2..]));
        let gap_aff: f64 = (2..n)
            .map(|i| (s[i] + a_aff * ds_a[i]) * (z[i] + a_aff * dz_a[i]))
            .sum();
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);

        let rc: Vec<f64> = (0..n)
            .map(|i| {
                if i >= 2 {
                    s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu
                } else {
                    0.0
                }
            })
            .collect();
        let (dq, du, ds, dz) = direction(&rc);
        let step = 0.99 * max_step(&s[2..], &ds[2..]).min(max_step(&z[2..], &dz[2..]));
        let step = step.min(1.0);

        q.iter_mut().zip(&dq).for_each(|(a, b)| *a += step * b);
        u.iter_mut().zip(&du).for_each(|(a, b)| *a += step * b);
        for i in 2..n {
            s[i] += step * ds[i];
            z[i] += step * dz[i];
        }
    }

    Err(Error::NotConverged {
        iterations: params.max_iter,
        gap: last_gap,
        residual: last_res,
    })
}

fn finish(
    p: &Problem,
    q: &[f64],
    u: &[f64],
    y: &[f64],
    mean: f64,
    history: Vec<f64>,
    iterations: usize,
) -> CvxEdaSolution {
    let n = y.len();
    let mut phasic = vec![0.0; n];
    lower3(&MA, q, &mut phasic);
    let mut driver = vec![0.0; n];
    lower3(&p.ar, q, &mut driver);
    let mut tonic = vec![0.0; n];
    for (col, &c) in p.basis.iter().zip(u) {
        col.axpy(c, &mut tonic);
    }
    tonic.iter_mut().for_each(|v| *v += mean);
    let residual = (0..n).map(|i| y[i] - tonic[i] - phasic[i]).collect();
    CvxEdaSolution {
        tonic,
        phasic,
        driver,
        residual,
        spline: u[2..].to_vec(),
        drift: [u[0], u[1]],
        objective_history: history,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_pentadiagonal_solve(diag: &[f64], off1: &[f64], off2: &[f64], b: &[f64]) -> Vec<f64> {
        let n = diag.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = diag[i];
            if i >= 1 {
                k[(i, i - 1)] = off1[i];
                k[(i - 1, i)] = off1[i];
            }
            if i >= 2 {
                k[(i, i - 2)] = off2[i];
                k[(i - 2, i)] = off2[i];
            }
        }
        k.lu()
            .solve(&DVector::from_column_slice(b))
            .unwrap()
            .as_slice()
            .to_vec()
    }

    #[test]
    fn banded_solves_match_dense() {
        let n = 12;
        let diag: Vec<f64> = (0..n).map(|i| 6.0 + (i % 3) as f64).collect();
        let off1: Vec<f64> = (0..n)
            .map(|i| if i >= 1 { -1.5 + 0.1 * i as f64 } else { 0.0 })
            .collect();
        let off2: Vec<f64> = (0..n)
            .map(|i| if i >= 2 { 0.7 - 0.05 * i as f64 } else { 0.0 })
            .collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let f = Pentadiagonal::factor(&diag, &off1, &off2).unwrap();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        let expect = dense_pentadiagonal_solve(&diag, &off1, &off2, &b);
        for (a, e) in x.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
        // Two right-hand sides, row-major.
        let mut rows = vec![0.0; 2 * n];
        for i in 0..n {
            rows[2 * i] = b[i];
            rows[2 * i + 1] = 1.0;
        }
        f.solve_rows_in_place(&mut rows, 2);
        let ones = dense_pentadiagonal_solve(&diag, &off1, &off2, &vec![1.0; n]);
        for i in 0..n {
            assert!((rows[2 * i] - expect[i]).abs() < 1e-12);
            assert!((rows[2 * i + 1] - ones[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn newton_system_matches_dense_kkt() {
        let n = 60;
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let params = CvxEdaParams {
            knot_spacing: 2.0,
            ..CvxEdaParams::default()
        };
        let p = Problem::new(&y, &params, 0.25);
        let m = p.m();
        let weights: Vec<f64> = (0..n)
            .map(|i| if i >= 2 { 0.5 + (i % 5) as f64 } else { 0.0 })
            .collect();
        let sys = NewtonSystem::new(&p, &weights).unwrap();

        // Dense H + GᵀWG.
        let dim = n + m;
        let mut mmat = DMatrix::zeros(n, dim);
        let mut amat: DMatrix<f64> = DMatrix::zeros(n, n);
        for r in 2..n {
            for k in 0..3 {
                mmat[(r, r - k)] += MA[k];
                amat[(r, r - k)] += p.ar[k];
            }
        }
        for (j, col) in p.basis.iter().enumerate() {
            for (k, v) in col.values.iter().enumerate() {
                mmat[(col.start + k, n + j)] = *v;
            }
        }
        let mut h = mmat.transpose() * &mmat;
        for j in 2..m {
            h[(n + j, n + j)] += params.gamma;
        }
        let wdiag = DMatrix::from_diagonal(&DVector::from_vec(weights.clone()));
        let gwg = amat.transpose() * wdiag * &amat;
        for a in 0..n {
            for b in 0..n {
                h[(a, b)] += gwg[(a, b)];
            }
        }
        let rhs: Vec<f64> = (0..dim).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let expect = h.lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
        let (dq, du) = sys.solve(&p, &rhs[..n], &rhs[n..]);
        let scale = expect.amax();
        for i in 0..n {
            assert!((dq[i] - expect[i]).abs() < 1e-6 * scale, "q[{i}]");
        }
        for j in 0..m {
            assert!((du[j] - expect[n + j]).abs() < 1e-6 * scale, "u[{j}]");
        }
    }

    #[test]
    fn spline_columns_match_reference_layout() {
        let basis = tonic_basis(200, 0.25, 10.0);
        // Two drift columns plus knots at 0, 40, 80, 120, 160.
        assert_eq!(basis.len(), 7);
        let interior = &basis[5];
        assert_eq!(interior.start, 120 - 78);
        assert_eq!(interior.values.len(), 157);
        let peak = interior.values.iter().copied().fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-15);
        assert_eq!(interior.values[78], 1.0);
    }

    #[test]
    fn constant_input_is_all_tonic() {
        let y = vec![2.5; 400];
        let sol = solve(&y, 0.25, &CvxEdaParams::default()).unwrap();
        assert!(sol.tonic.iter().all(|t| (t - 2.5).abs() <= 1e-3));
        assert!(sol.phasic.iter().all(|p| p.abs() <= 1e-3));
    }

    fn bateman(t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else {
            (-t / 2.0).exp() - (-t / 0.7).exp()
        }
    }

    #[test]
    fn single_impulse_is_localized() {
        let rate = 4.0;
        let n = 240;
        let y: Vec<f64> = (0..n).map(|i| 0.5 + 1.5 * bateman(i as f64 / rate - 10.0)).collect();
        let sol = solve(&y, 1.0 / rate, &CvxEdaParams::default()).unwrap();
        let total: f64 = sol.driver.iter().map(|d| d.max(0.0)).sum();
        let near: f64 = sol
            .driver
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as f64 / rate - 10.0).abs() <= 0.5)
            .map(|(_, d)| d.max(0.0))
            .sum();
        assert!(near >= 0.9 * total, "localized fraction {}", near / total);
    }

    #[test]
    fn reconstruction_and_objective() {
        let rate = 4.0;
        let n = 600;
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                1.0 + 0.004 * t + 0.8 * bateman(t - 20.0) + 0.5 * bateman(t - 70.0) + 1.1 * bateman(t - 110.0)
            })
            .collect();
        let sol = solve(&y, 1.0 / rate, &CvxEdaParams::default()).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!(
            rms(&sol.residual) <= 0.05 * rms(&y),
            "{} vs {}",
            rms(&sol.residual),
            rms(&y)
        );
        assert!(sol.driver.iter().all(|d| *d >= -1e-8));
        assert!(sol.phasic.iter().all(|p| *p >= -1e-8));
        for w in sol.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", sol.objective_history);
        }

        let shifted: Vec<f64> = y.iter().map(|v| v + 3.0).collect();
        let sol2 = solve(&shifted, 1.0 / rate, &CvxEdaParams::default()).unwrap();
        for i in 0..n {
            assert!((sol2.tonic[i] - sol.tonic[i] - 3.0).abs() < 1e-9);
            assert!((sol2.phasic[i] - sol.phasic[i]).abs() < 1e-9);
        }
    }
}
