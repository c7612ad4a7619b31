//! Exact transport solutions for checking learned maps: monotone
//! rearrangement in 1-D, the closed-form Gaussian map, an exact assignment
//! solver, McCann interpolation, and the rotated-gaussianizer family of
//! coherent but non-optimal maps.

use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, GaussianParams};
use crate::numerics::{linalg, pd_inv_sqrt, plane_rotation, psd_sqrt, Tensor};

/// Largest instance accepted by [`ot_exact`].
pub const MAX_ASSIGNMENT_SIZE: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OracleMap {
    /// Point `i` of α is sent to point `permutation[i]` of β.
    Assignment { permutation: Vec<usize> },
    /// `T(x) = mean_beta + matrix (x - mean_alpha)`.
    Affine {
        mean_alpha: Vec<f64>,
        mean_beta: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub solver: String,
    pub cost: f64,
    pub map: OracleMap,
}

impl OracleResult {
    /// Images `T(x_i)` of the rows of `x`. Assignment maps need the target cloud.
    pub fn image(&self, x: &Tensor, target: Option<&Tensor>) -> Result<Tensor> {
        match &self.map {
            OracleMap::Assignment { permutation } => {
                let target = target
                    .ok_or_else(|| Error::invalid("assignment map needs the target cloud"))?;
                if permutation.len() != x.rows() || target.rows() != x.rows() {
                    return Err(Error::DimensionMismatch {
                        op: "assignment image",
                        left: x.shape().to_vec(),
                        right: target.shape().to_vec(),
                    });
                }
                Ok(target.select_rows(permutation))
            }
            OracleMap::Affine {
                mean_alpha,
                mean_beta,
                matrix,
            } => affine(x, mean_alpha, &Tensor::from_rows(matrix)?, mean_beta),
        }
    }
}

/// Rows `y_i = shift + A (x_i - center)`.
fn affine(x: &Tensor, center: &[f64], a: &Tensor, shift: &[f64]) -> Result<Tensor> {
    let d = center.len();
    if x.cols() != d || a.shape() != [shift.len(), d] {
        return Err(Error::DimensionMismatch {
            op: "affine map",
            left: x.shape().to_vec(),
            right: a.shape().to_vec(),
        });
    }
    let mut centered = x.clone();
    for i in 0..x.rows() {
        for (v, c) in centered.row_mut(i).iter_mut().zip(center) {
            *v -= c;
        }
    }
    centered
        .matmul(&a.transpose()?)?
        .add_row(&Tensor::row_vector(shift.to_vec()))
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Monotone rearrangement of two equal-size 1-D samples.
pub fn ot_1d(alpha: &EmpiricalMeasure, beta: &EmpiricalMeasure, p: f64) -> Result<OracleResult> {
    if alpha.dim() != 1 || beta.dim() != 1 {
        return Err(Error::invalid("ot_1d needs one-dimensional samples"));
    }
    if alpha.len() != beta.len() {
        return Err(Error::invalid(format!(
            "ot_1d needs equal sample counts ({} vs {}); resample first",
            alpha.len(),
            beta.len()
        )));
    }
    let cost_spec = CostSpec::power(p)?;
    let order = |m: &EmpiricalMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&i, &j| m.point(i)[0].total_cmp(&m.point(j)[0]).then(i.cmp(&j)));
        idx
    };
    let (oa, ob) = (order(alpha), order(beta));
    let mut permutation = vec![0; alpha.len()];
    let mut total = 0.0;
    for (ia, ib) in oa.iter().zip(&ob) {
        permutation[*ia] = *ib;
        total += cost_spec.ground_cost(alpha.point(*ia), beta.point(*ib))?;
    }
    Ok(OracleResult {
        solver: "monotone_1d".into(),
        cost: total / alpha.len() as f64,
        map: OracleMap::Assignment { permutation },
    })
}

/// Closed-form quadratic OT between Gaussians.
pub fn ot_gaussian(alpha: &GaussianParams, beta: &GaussianParams) -> Result<OracleResult> {
    let d = alpha.dim();
    if beta.dim() != d {
        return Err(Error::DimensionMismatch {
            op: "ot_gaussian",
            left: vec![d],
            right: vec![beta.dim()],
        });
    }
    linalg::require_pd(&alpha.cov)?;
    linalg::require_pd(&beta.cov)?;
    let sa = psd_sqrt(&alpha.cov)?;
    let sa_inv = pd_inv_sqrt(&alpha.cov)?;
    let middle = psd_sqrt(&sa.matmul(&beta.cov)?.matmul(&sa)?)?;
    let a = sa_inv.matmul(&middle)?.matmul(&sa_inv)?;
    let dm: f64 = alpha
        .mean
        .iter()
        .zip(&beta.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let cost =
        dm + linalg::trace(&alpha.cov) + linalg::trace(&beta.cov) - 2.0 * linalg::trace(&middle);
    Ok(OracleResult {
        solver: "gaussian_closed_form".into(),
        cost: cost.max(0.0),
        map: OracleMap::Affine {
            mean_alpha: alpha.mean.clone(),
            mean_beta: beta.mean.clone(),
            matrix: rows_of(&a),
        },
    })
}

/// Minimum-cost perfect matching of an `n × n` matrix (row `i` → column `result[i]`).
pub fn hungarian(cost: &Tensor) -> Result<Vec<usize>> {
    let n = cost.rows();
    if cost.shape() != [n, n] {
        return Err(Error::invalid("assignment needs a square cost matrix"));
    }
    if !cost.all_finite() {
        return Err(Error::invalid("assignment costs must be finite"));
    }
    // shortest augmenting paths with row/column potentials, 1-based with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Exact empirical Monge solution for equal counts.
pub fn ot_exact(
    alpha: &EmpiricalMeasure,
    beta: &EmpiricalMeasure,
    cost: &CostSpec,
) -> Result<OracleResult> {
    ot_exact_points(alpha.points(), beta.points(), cost)
}

pub fn ot_exact_points(a: &Tensor, b: &Tensor, cost: &CostSpec) -> Result<OracleResult> {
    if a.rows() != b.rows() {
        return Err(Error::invalid(format!(
            "ot_exact needs equal counts ({} vs {})",
            a.rows(),
            b.rows()
        )));
    }
    if a.rows() > MAX_ASSIGNMENT_SIZE {
        return Err(Error::invalid(format!(
            "ot_exact supports at most {MAX_ASSIGNMENT_SIZE} points, got {}",
            a.rows()
        )));
    }
    let c = cost.cost_matrix(a, b)?;
    let permutation = hungarian(&c)?;
    let total: f64 = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| c.get(i, j))
        .sum();
    Ok(OracleResult {
        solver: "hungarian".into(),
        cost: total / a.rows() as f64,
        map: OracleMap::Assignment { permutation },
    })
}

/// `((1-t) id + t T)♯α` given the images `T(x_i)`.
pub fn mccann(alpha: &EmpiricalMeasure, image: &Tensor, t: f64) -> Result<EmpiricalMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t must be in [0, 1], got {t}")));
    }
    if image.shape() != alpha.points().shape() {
        return Err(Error::DimensionMismatch {
            op: "mccann",
            left: alpha.points().shape().to_vec(),
            right: image.shape().to_vec(),
        });
    }
    let x = alpha.points();
    let data = x
        .data()
        .iter()
        .zip(image.data())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    alpha.with_points(Tensor::new(x.shape().to_vec(), data)?)
}

/// `T_θ = G_β⁻¹ ∘ R_θ ∘ G_α` for Gaussian α, β, where `G_α` whitens α,
/// `G_β⁻¹` colours a standard normal into β and `R_θ` rotates the first
/// two coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct IllPosedMap {
    pub theta: f64,
    pub alpha: GaussianParams,
    pub beta: GaussianParams,
    alpha_inv_sqrt: Tensor,
    alpha_sqrt: Tensor,
    beta_sqrt: Tensor,
    beta_inv_sqrt: Tensor,
    rotation: Tensor,
}

pub fn illposed_construct(
    alpha: &GaussianParams,
    beta: &GaussianParams,
    theta: f64,
) -> Result<IllPosedMap> {
    let d = alpha.dim();
    if beta.dim() != d {
        return Err(Error::DimensionMismatch {
            op: "illposed_construct",
            left: vec![d],
            right: vec![beta.dim()],
        });
    }
    Ok(IllPosedMap {
        theta,
        alpha: alpha.clone(),
        beta: beta.clone(),
        alpha_inv_sqrt: pd_inv_sqrt(&alpha.cov)?,
        alpha_sqrt: psd_sqrt(&alpha.cov)?,
        beta_sqrt: psd_sqrt(&beta.cov)?,
        beta_inv_sqrt: pd_inv_sqrt(&beta.cov)?,
        rotation: plane_rotation(d, theta)?,
    })
}

impl IllPosedMap {
    fn linear(&self) -> Result<Tensor> {
        self.beta_sqrt
            .matmul(&self.rotation)?
            .matmul(&self.alpha_inv_sqrt)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        affine(x, &self.alpha.mean, &self.linear()?, &self.beta.mean)
    }

    /// `S_θ = G_α⁻¹ ∘ R_θᵀ ∘ G_β`.
    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let m = self
            .alpha_sqrt
            .matmul(&self.rotation.transpose()?)?
            .matmul(&self.beta_inv_sqrt)?;
        affine(y, &self.beta.mean, &m, &self.alpha.mean)
    }

    /// `E‖x - T_θ(x)‖²` under α.
    pub fn expected_cost(&self) -> Result<f64> {
        let dm: f64 = self
            .alpha
            .mean
            .iter()
            .zip(&self.beta.mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let cross = linalg::trace(
            &self
                .beta_sqrt
                .matmul(&self.rotation)?
                .matmul(&self.alpha_sqrt)?,
        );
        Ok(dm + linalg::trace(&self.alpha.cov) + linalg::trace(&self.beta.cov) - 2.0 * cross)
    }

    /// Sample mean of `‖x - T_θ(x)‖²` and its standard error.
    pub fn sample_cost(&self, x: &Tensor) -> Result<(f64, f64)> {
        let y = self.forward(x)?;
        let n = x.rows();
        let costs: Vec<f64> = (0..n)
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(y.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        let mean = costs.iter().sum::<f64>() / n as f64;
        let var =
            costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
        Ok((mean, (var / n as f64).sqrt()))
    }
}
