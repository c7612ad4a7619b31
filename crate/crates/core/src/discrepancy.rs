//! Differentiable two-sample discrepancies used as the coherence penalty:
//! Gaussian-kernel MMD, debiased Sinkhorn divergence and energy distance.
//!
//! Every discrepancy is differentiable with respect to the points of its
//! first argument; the second argument is treated as a constant target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    Mmd,
    Sinkhorn,
    Energy,
}

fn default_max_iterations() -> usize {
    500
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_true() -> bool {
    true
}

/// Configuration of the discrepancy. Unset bandwidths / epsilon are derived
/// from the target cloud by [`DiscrepancySpec::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancySpec {
    pub kind: DiscrepancyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_true")]
    pub debiased: bool,
}

impl Default for DiscrepancySpec {
    fn default() -> Self {
        DiscrepancySpec::new(DiscrepancyKind::Mmd)
    }
}

impl DiscrepancySpec {
    pub fn new(kind: DiscrepancyKind) -> Self {
        DiscrepancySpec {
            kind,
            bandwidths: None,
            epsilon: None,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            debiased: true,
        }
    }

    /// Freezes data-dependent hyperparameters against `target`.
    pub fn resolve(&self, target: &Tensor) -> Result<Discrepancy> {
        match self.kind {
            DiscrepancyKind::Mmd => {
                let bandwidths = match &self.bandwidths {
                    Some(b) => b.clone(),
                    None => {
                        let m = median_pairwise_distance(target);
                        if !(m > 0.0) {
                            return Err(Error::invalid(
                                "median pairwise distance of the target is zero; set bandwidths explicitly",
                            ));
                        }
                        vec![0.25 * m, m, 4.0 * m]
                    }
                };
                if bandwidths.is_empty() || bandwidths.iter().any(|b| !(*b > 0.0 && b.is_finite()))
                {
                    return Err(Error::invalid("bandwidths must be positive"));
                }
                Ok(Discrepancy::Mmd { bandwidths })
            }
            DiscrepancyKind::Sinkhorn => {
                let epsilon = match self.epsilon {
                    Some(e) => e,
                    None => 0.05 * mean_pairwise_sq_distance(target),
                };
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::invalid(format!(
                        "sinkhorn epsilon must be > 0, got {epsilon}"
                    )));
                }
                Ok(Discrepancy::Sinkhorn(SinkhornParams {
                    epsilon,
                    max_iterations: self.max_iterations,
                    tolerance: self.tolerance,
                    debiased: self.debiased,
                }))
            }
            DiscrepancyKind::Energy => Ok(Discrepancy::Energy),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub debiased: bool,
}

/// A discrepancy with all hyperparameters fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Discrepancy {
    Mmd { bandwidths: Vec<f64> },
    Sinkhorn(SinkhornParams),
    Energy,
}

impl Discrepancy {
    pub fn value(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        match self {
            Discrepancy::Mmd { bandwidths } => mmd2(bandwidths, a, b),
            Discrepancy::Sinkhorn(p) => sinkhorn_div(p, a, b),
            Discrepancy::Energy => energy_distance(a, b),
        }
    }

    /// Value and gradient with respect to the points of `a`.
    pub fn value_and_grad(&self, a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            Discrepancy::Mmd { bandwidths } => mmd2_with_grad(bandwidths, a, b),
            Discrepancy::Sinkhorn(p) => sinkhorn_div_with_grad(p, a, b),
            Discrepancy::Energy => energy_distance_with_grad(a, b),
        }
    }

    /// Records `D(a, target)` on the tape as a differentiable function of `a`.
    pub fn on_tape(&self, tape: &mut Tape, a: Var, target: &Tensor) -> Result<Var> {
        let (value, grad) = self.value_and_grad(tape.value(a)?, target)?;
        tape.external_scalar(a, value, grad)
    }
}

fn check_dims(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape().len() == 2
        && b.shape().len() == 2
        && a.cols() == b.cols()
        && a.rows() > 0
        && b.rows() > 0
    {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

const HEURISTIC_CAP: usize = 1000;

/// Median of `‖x_i - x_j‖` over pairs `i < j` (first 1000 points).
pub fn median_pairwise_distance(x: &Tensor) -> f64 {
    let n = x.rows().min(HEURISTIC_CAP);
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Mean of `‖x_i - x_j‖²` over pairs `i < j` (first 1000 points).
pub fn mean_pairwise_sq_distance(x: &Tensor) -> f64 {
    let n = x.rows().min(HEURISTIC_CAP);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            total += sq_dist(x.row(i), x.row(j));
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `Σ_s exp(-‖u-v‖²/(2s²))` as a function of the squared distance. When each
/// coefficient `1/(2s²)` is the smallest one times a power of two (as for the
/// default bandwidths), one exponential is computed and squared repeatedly.
struct KernelSum {
    /// `(coefficient, doublings)` sorted by coefficient.
    terms: Vec<(f64, u32)>,
    base: f64,
    squaring: bool,
}

impl KernelSum {
    fn new(bandwidths: &[f64]) -> Self {
        let mut coeffs: Vec<f64> = bandwidths.iter().map(|s| 1.0 / (2.0 * s * s)).collect();
        coeffs.sort_by(f64::total_cmp);
        let base = coeffs[0];
        let mut squaring = true;
        let terms = coeffs
            .iter()
            .map(|&c| {
                let ratio = c / base;
                let k = ratio.log2().round();
                if !(0.0..=16.0).contains(&k) || 2f64.powi(k as i32) != ratio {
                    squaring = false;
                }
                (c, k.max(0.0) as u32)
            })
            .collect();
        KernelSum {
            terms,
            base,
            squaring,
        }
    }

    fn len(&self) -> usize {
        self.terms.len()
    }

    /// Kernel value and `Σ_s 2 c_s exp(-c_s d²)`.
    #[inline]
    fn eval(&self, d2: f64) -> (f64, f64) {
        let mut k = 0.0;
        let mut slope = 0.0;
        if self.squaring {
            let mut e = (-d2 * self.base).exp();
            let mut level = 0;
            for &(c, shift) in &self.terms {
                while level < shift {
                    e *= e;
                    level += 1;
                }
                k += e;
                slope += 2.0 * c * e;
            }
        } else {
            for &(c, _) in &self.terms {
                let e = (-d2 * c).exp();
                k += e;
                slope += 2.0 * c * e;
            }
        }
        (k, slope)
    }

    #[inline]
    fn value(&self, d2: f64) -> f64 {
        self.eval(d2).0
    }
}

/// Biased (V-statistic) squared MMD, summed over Gaussian bandwidths.
pub fn mmd2(bandwidths: &[f64], a: &Tensor, b: &Tensor) -> Result<f64> {
    check_dims(a, b, "mmd2")?;
    let (n, m) = (a.rows() as f64, b.rows() as f64);
    let kernel = KernelSum::new(bandwidths);
    let block = |x: &Tensor, y: &Tensor| -> f64 {
        let mut s = 0.0;
        for i in 0..x.rows() {
            for j in 0..y.rows() {
                s += kernel.value(sq_dist(x.row(i), y.row(j)));
            }
        }
        s
    };
    let kaa = block(a, a) / (n * n);
    let kbb = block(b, b) / (m * m);
    let kab = block(a, b) / (n * m);
    Ok((kaa + kbb - 2.0 * kab).max(0.0))
}

/// Unbiased (U-statistic) squared MMD. Reporting only; may be negative.
pub fn mmd2_unbiased(bandwidths: &[f64], a: &Tensor, b: &Tensor) -> Result<f64> {
    check_dims(a, b, "mmd2_unbiased")?;
    let (n, m) = (a.rows(), b.rows());
    if n < 2 || m < 2 {
        return Err(Error::invalid(
            "unbiased MMD needs at least two points per sample",
        ));
    }
    let kernel = KernelSum::new(bandwidths);
    let within = |x: &Tensor| -> f64 {
        let mut s = 0.0;
        for i in 0..x.rows() {
            for j in 0..x.rows() {
                if i != j {
                    s += kernel.value(sq_dist(x.row(i), x.row(j)));
                }
            }
        }
        s / (x.rows() * (x.rows() - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += kernel.value(sq_dist(a.row(i), b.row(j)));
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (n * m) as f64)
}

pub fn mmd2_with_grad(bandwidths: &[f64], a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    check_dims(a, b, "mmd2")?;
    let (n, m, d) = (a.rows(), b.rows(), a.cols());
    let (nf, mf) = (n as f64, m as f64);
    // k(u,v) = Σ_s exp(-c_s ‖u-v‖²) and -∂_u k = (u-v) Σ_s 2 c_s exp(-c_s ‖u-v‖²)
    let ks = KernelSum::new(bandwidths);
    let kernel = |d2: f64| ks.eval(d2);
    let mut grad = Tensor::zeros(&[n, d]);
    let g = grad.data_mut();

    let mut kaa = nf * ks.len() as f64;
    let waa = -2.0 / (nf * nf);
    for i in 0..n {
        let ai = a.row(i);
        for j in (i + 1)..n {
            let aj = a.row(j);
            let (k, dk) = kernel(sq_dist(ai, aj));
            kaa += 2.0 * k;
            let w = waa * dk;
            for t in 0..d {
                let delta = w * (ai[t] - aj[t]);
                g[i * d + t] += delta;
                g[j * d + t] -= delta;
            }
        }
    }
    let mut kab = 0.0;
    let wab = 2.0 / (nf * mf);
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let bj = b.row(j);
            let (k, dk) = kernel(sq_dist(ai, bj));
            kab += k;
            let w = wab * dk;
            for t in 0..d {
                g[i * d + t] += w * (ai[t] - bj[t]);
            }
        }
    }
    let mut kbb = mf * ks.len() as f64;
    for i in 0..m {
        for j in (i + 1)..m {
            kbb += 2.0 * ks.value(sq_dist(b.row(i), b.row(j)));
        }
    }
    let value = kaa / (nf * nf) + kbb / (mf * mf) - 2.0 * kab / (nf * mf);
    Ok((value.max(0.0), grad))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Converged dual potentials of uniform-weight entropic OT with squared
/// Euclidean cost, and the resulting dual objective.
const SCALING: f64 = 0.5;
const OMEGA: f64 = 1.8;

struct SinkhornSolution {
    f: Vec<f64>,
    g: Vec<f64>,
    cost: Tensor,
    value: f64,
}

fn sinkhorn_solve(params: &SinkhornParams, a: &Tensor, b: &Tensor) -> Result<SinkhornSolution> {
    let (n, m) = (a.rows(), b.rows());
    let mut cost = Tensor::zeros(&[n, m]);
    let mut cmax: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = sq_dist(a.row(i), b.row(j));
            cost.set(i, j, c);
            cmax = cmax.max(c);
        }
    }
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let update_g = |f: &[f64], g: &mut [f64], eps: f64, omega: f64| {
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| log_a + (f[i] - cost.get(i, j)) / eps));
            g[j] = (1.0 - omega) * g[j] - omega * eps * lse;
        }
    };
    let update_f = |f: &mut [f64], g: &[f64], eps: f64, omega: f64| {
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| log_b + (g[j] - cost.get(i, j)) / eps));
            f[i] = (1.0 - omega) * f[i] - omega * eps * lse;
        }
    };

    // epsilon scaling warm start
    let mut eps = cmax.max(params.epsilon);
    while eps > params.epsilon {
        for _ in 0..5 {
            update_f(&mut f, &g, eps, 1.0);
            update_g(&f, &mut g, eps, 1.0);
        }
        eps = (eps * SCALING).max(params.epsilon);
    }

    let eps = params.epsilon;
    let mut residual = f64::INFINITY;
    for _ in 0..params.max_iterations {
        update_f(&mut f, &g, eps, OMEGA);
        update_g(&f, &mut g, eps, 1.0);
        // columns are exact after the g update; measure the row marginals
        residual = 0.0;
        for i in 0..n {
            let row: f64 = (0..m)
                .map(|j| (log_a + log_b + (f[i] + g[j] - cost.get(i, j)) / eps).exp())
                .sum();
            residual += (row - 1.0 / n as f64).abs();
        }
        if residual < params.tolerance {
            let value = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
            return Ok(SinkhornSolution { f, g, cost, value });
        }
    }
    Err(Error::SinkhornNotConverged {
        iterations: params.max_iterations,
        residual,
    })
}

/// `OT_ε(a, a)` via the averaged symmetric update `f ← ½(f + T(f))`, which
/// avoids the slow oscillation of alternating updates on self-transport.
fn sinkhorn_solve_symmetric(params: &SinkhornParams, a: &Tensor) -> Result<SinkhornSolution> {
    let n = a.rows();
    let mut cost = Tensor::zeros(&[n, n]);
    let mut cmax: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = sq_dist(a.row(i), a.row(j));
            cost.set(i, j, c);
            cmax = cmax.max(c);
        }
    }
    let log_a = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut next = vec![0.0; n];
    let step = |f: &[f64], next: &mut [f64], eps: f64| {
        for i in 0..n {
            let lse = log_sum_exp((0..n).map(|j| log_a + (f[j] - cost.get(i, j)) / eps));
            next[i] = 0.5 * (f[i] - eps * lse);
        }
    };

    let mut eps = cmax.max(params.epsilon);
    while eps > params.epsilon {
        for _ in 0..5 {
            step(&f, &mut next, eps);
            std::mem::swap(&mut f, &mut next);
        }
        eps = (eps * 0.5).max(params.epsilon);
    }

    let eps = params.epsilon;
    let mut residual = f64::INFINITY;
    for _ in 0..params.max_iterations {
        step(&f, &mut next, eps);
        std::mem::swap(&mut f, &mut next);
        residual = 0.0;
        for i in 0..n {
            let row: f64 = (0..n)
                .map(|j| (2.0 * log_a + (f[i] + f[j] - cost.get(i, j)) / eps).exp())
                .sum();
            residual += (row - 1.0 / n as f64).abs();
        }
        if residual < params.tolerance {
            let value = 2.0 * f.iter().sum::<f64>() / n as f64;
            return Ok(SinkhornSolution {
                g: f.clone(),
                f,
                cost,
                value,
            });
        }
    }
    Err(Error::SinkhornNotConverged {
        iterations: params.max_iterations,
        residual,
    })
}

fn sinkhorn_cross(params: &SinkhornParams, a: &Tensor, b: &Tensor) -> Result<SinkhornSolution> {
    if a == b {
        sinkhorn_solve_symmetric(params, a)
    } else {
        sinkhorn_solve(params, a, b)
    }
}

/// Gradient of `OT_ε(a, b)` in the points of `a`: `Σ_j P_ij 2(a_i - b_j)`.
fn sinkhorn_grad(
    sol: &SinkhornSolution,
    params: &SinkhornParams,
    a: &Tensor,
    b: &Tensor,
    both: bool,
) -> Tensor {
    let (n, m, d) = (a.rows(), b.rows(), a.cols());
    let log_ab = -((n * m) as f64).ln();
    let mut grad = Tensor::zeros(&[n, d]);
    let factor = if both { 4.0 } else { 2.0 };
    for i in 0..n {
        let ai = a.row(i);
        let mut gi = vec![0.0; d];
        for j in 0..m {
            let p = (log_ab + (sol.f[i] + sol.g[j] - sol.cost.get(i, j)) / params.epsilon).exp();
            let bj = b.row(j);
            for t in 0..d {
                gi[t] += factor * p * (ai[t] - bj[t]);
            }
        }
        grad.row_mut(i).copy_from_slice(&gi);
    }
    grad
}

/// Entropic OT cost `OT_ε(a, b)` (dual objective at convergence).
pub fn sinkhorn_cost(params: &SinkhornParams, a: &Tensor, b: &Tensor) -> Result<f64> {
    check_dims(a, b, "sinkhorn")?;
    Ok(sinkhorn_cross(params, a, b)?.value)
}

/// `S_ε(a,b) = OT_ε(a,b) - ½OT_ε(a,a) - ½OT_ε(b,b)` (or raw `OT_ε` when not debiased).
pub fn sinkhorn_div(params: &SinkhornParams, a: &Tensor, b: &Tensor) -> Result<f64> {
    check_dims(a, b, "sinkhorn_div")?;
    let ab = sinkhorn_cross(params, a, b)?.value;
    if !params.debiased {
        return Ok(ab);
    }
    let aa = sinkhorn_solve_symmetric(params, a)?.value;
    let bb = sinkhorn_solve_symmetric(params, b)?.value;
    Ok(ab - 0.5 * aa - 0.5 * bb)
}

pub fn sinkhorn_div_with_grad(
    params: &SinkhornParams,
    a: &Tensor,
    b: &Tensor,
) -> Result<(f64, Tensor)> {
    check_dims(a, b, "sinkhorn_div")?;
    let ab = sinkhorn_cross(params, a, b)?;
    let mut grad = sinkhorn_grad(&ab, params, a, b, false);
    if !params.debiased {
        return Ok((ab.value, grad));
    }
    let aa = sinkhorn_solve_symmetric(params, a)?;
    let bb = sinkhorn_solve_symmetric(params, b)?;
    // a appears in both slots of OT(a,a): twice the one-slot envelope gradient, times ½
    let gaa = sinkhorn_grad(&aa, params, a, a, false);
    for (g, h) in grad.data_mut().iter_mut().zip(gaa.data()) {
        *g -= h;
    }
    Ok((ab.value - 0.5 * aa.value - 0.5 * bb.value, grad))
}

/// Energy distance `2E‖a-b‖ - E‖a-a'‖ - E‖b-b'‖` (V-statistic).
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_dims(a, b, "energy_distance")?;
    let mean_dist = |x: &Tensor, y: &Tensor| -> f64 {
        let mut s = 0.0;
        for i in 0..x.rows() {
            for j in 0..y.rows() {
                s += sq_dist(x.row(i), y.row(j)).sqrt();
            }
        }
        s / (x.rows() * y.rows()) as f64
    };
    Ok((2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)).max(0.0))
}

pub fn energy_distance_with_grad(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    let value = energy_distance(a, b)?;
    let (n, m, d) = (a.rows(), b.rows(), a.cols());
    let (nf, mf) = (n as f64, m as f64);
    let mut grad = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let ai = a.row(i);
        let mut gi = vec![0.0; d];
        for j in 0..m {
            let bj = b.row(j);
            let r = sq_dist(ai, bj).sqrt();
            if r > 0.0 {
                for t in 0..d {
                    gi[t] += 2.0 / (nf * mf) * (ai[t] - bj[t]) / r;
                }
            }
        }
        for j in 0..n {
            let aj = a.row(j);
            let r = sq_dist(ai, aj).sqrt();
            if r > 0.0 {
                for t in 0..d {
                    gi[t] -= 2.0 / (nf * nf) * (ai[t] - aj[t]) / r;
                }
            }
        }
        grad.row_mut(i).copy_from_slice(&gi);
    }
    Ok((value, grad))
}

/// Result of a permutation two-sample test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub statistic: f64,
    pub threshold: f64,
    pub level: f64,
    pub permutations: usize,
    pub pass: bool,
}

/// The `level`-quantile of the discrepancy under `n_perm` random relabelings
/// of the pooled samples.
pub fn permutation_threshold(
    disc: &Discrepancy,
    a: &Tensor,
    b: &Tensor,
    n_perm: usize,
    level: f64,
    rng: &mut Rng,
) -> Result<f64> {
    check_dims(a, b, "permutation_threshold")?;
    if n_perm < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 permutations, got {n_perm}"
        )));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::invalid(format!(
            "level must be in (0, 1], got {level}"
        )));
    }
    let pooled = a.vstack(b)?;
    let total = pooled.rows();
    let n = a.rows();

    let mut stats = Vec::with_capacity(n_perm);
    match disc {
        Discrepancy::Mmd { .. } | Discrepancy::Energy => {
            // pairwise table once; each permutation is then a re-indexed sum
            let kernel = match disc {
                Discrepancy::Mmd { bandwidths } => Some(KernelSum::new(bandwidths)),
                _ => None,
            };
            let mut table = vec![0.0; total * total];
            for i in 0..total {
                for j in i..total {
                    let d2 = sq_dist(pooled.row(i), pooled.row(j));
                    let v = match &kernel {
                        Some(k) => k.value(d2),
                        None => d2.sqrt(),
                    };
                    table[i * total + j] = v;
                    table[j * total + i] = v;
                }
            }
            let mut side = vec![false; total];
            for _ in 0..n_perm {
                let perm = rng.permutation(total);
                side.iter_mut().for_each(|s| *s = false);
                for &p in &perm[..n] {
                    side[p] = true;
                }
                let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
                for i in 0..total {
                    let row = &table[i * total..(i + 1) * total];
                    for j in 0..total {
                        match (side[i], side[j]) {
                            (true, true) => xx += row[j],
                            (false, false) => yy += row[j],
                            _ => xy += row[j],
                        }
                    }
                }
                let (nf, mf) = (n as f64, (total - n) as f64);
                let xy = xy / 2.0;
                let stat = match disc {
                    Discrepancy::Mmd { .. } => {
                        xx / (nf * nf) + yy / (mf * mf) - 2.0 * xy / (nf * mf)
                    }
                    _ => 2.0 * xy / (nf * mf) - xx / (nf * nf) - yy / (mf * mf),
                };
                stats.push(stat.max(0.0));
            }
        }
        Discrepancy::Sinkhorn(_) => {
            for _ in 0..n_perm {
                let perm = rng.permutation(total);
                let x = pooled.select_rows(&perm[..n]);
                let y = pooled.select_rows(&perm[n..]);
                stats.push(disc.value(&x, &y)?);
            }
        }
    }
    stats.sort_by(f64::total_cmp);
    let idx = ((level * n_perm as f64).ceil() as usize).clamp(1, n_perm) - 1;
    Ok(stats[idx])
}

/// Observed discrepancy against its permutation threshold.
pub fn permutation_test(
    disc: &Discrepancy,
    a: &Tensor,
    b: &Tensor,
    n_perm: usize,
    level: f64,
    rng: &mut Rng,
) -> Result<PermutationTest> {
    let statistic = disc.value(a, b)?;
    let threshold = permutation_threshold(disc, a, b, n_perm, level, rng)?;
    Ok(PermutationTest {
        statistic,
        threshold,
        level,
        permutations: n_perm,
        pass: statistic <= threshold,
    })
}
