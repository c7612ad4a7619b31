//! Ground costs `c(x, y) = Σ_i c_i |x_i - y_i|^p`, the dynamic (kinetic) cost
//! of a recorded trajectory, and the sparse-classifier coordinate mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::measures::EmpiricalMeasure;
use crate::numerics::{abs_pow, weighted_abs_pow, Tensor};

fn default_power() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(default = "default_power")]
    pub p: f64,
    /// Per-coordinate weights; `None` means all ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            p: 2.0,
            weights: None,
        }
    }
}

impl CostSpec {
    pub fn power(p: f64) -> Result<Self> {
        let spec = CostSpec { p, weights: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn weighted(p: f64, weights: Vec<f64>) -> Result<Self> {
        let spec = CostSpec {
            p,
            weights: Some(weights),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::invalid(format!(
                "cost power must be >= 1, got {}",
                self.p
            )));
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(
                    "cost weights must be finite and non-negative",
                ));
            }
            if !w.iter().any(|v| *v > 0.0) {
                return Err(Error::invalid("at least one cost weight must be positive"));
            }
        }
        Ok(())
    }

    /// Weights expanded to dimension `d`.
    pub fn weights_for(&self, d: usize) -> Result<Vec<f64>> {
        match &self.weights {
            None => Ok(vec![1.0; d]),
            Some(w) if w.len() == d => Ok(w.clone()),
            Some(w) => Err(Error::DimensionMismatch {
                op: "cost weights",
                left: vec![w.len()],
                right: vec![d],
            }),
        }
    }

    /// `h(x - y)` is strictly convex: `p > 1` and every weight positive.
    pub fn is_strictly_convex(&self) -> bool {
        self.p > 1.0
            && self
                .weights
                .as_ref()
                .is_none_or(|w| w.iter().all(|v| *v > 0.0))
    }

    pub fn ground_cost(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                op: "ground_cost",
                left: vec![x.len()],
                right: vec![y.len()],
            });
        }
        let w = self.weights_for(x.len())?;
        Ok(weighted_distance(&w, self.p, x, y))
    }

    /// `[N, M]` matrix of `c(a_i, b_j)`.
    pub fn cost_matrix(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols() != b.cols() {
            return Err(Error::DimensionMismatch {
                op: "cost_matrix",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let w = self.weights_for(a.cols())?;
        let (n, m) = (a.rows(), b.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let x = a.row(i);
            for j in 0..m {
                data.push(weighted_distance(&w, self.p, x, b.row(j)));
            }
        }
        Tensor::new(vec![n, m], data)
    }

    /// `(1/N) Σ_i c(x_i, y_i)` for row-aligned clouds.
    pub fn static_cost(&self, x: &Tensor, y: &Tensor) -> Result<f64> {
        if x.shape() != y.shape() {
            return Err(Error::DimensionMismatch {
                op: "static_cost",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let w = self.weights_for(x.cols())?;
        let total: f64 = (0..x.rows())
            .map(|i| weighted_distance(&w, self.p, x.row(i), y.row(i)))
            .sum();
        Ok(total / x.rows() as f64)
    }

    /// `(Δt/N) Σ_k Σ_x Σ_i c_i |v_k(φ_k^x)_i|^p`.
    pub fn dynamic_cost(&self, traj: &Trajectory) -> Result<f64> {
        dynamic_cost(traj, self)
    }
}

fn weighted_distance(w: &[f64], p: f64, x: &[f64], y: &[f64]) -> f64 {
    w.iter()
        .zip(x.iter().zip(y))
        .map(|(wi, (a, b))| wi * abs_pow(a - b, p))
        .sum()
}

pub fn ground_cost(spec: &CostSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.ground_cost(x, y)
}

pub fn dynamic_cost(traj: &Trajectory, spec: &CostSpec) -> Result<f64> {
    if traj.velocities.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let v0 = &traj.velocities[0];
    let n = v0.rows();
    let w = spec.weights_for(v0.cols())?;
    let per_step: f64 = traj
        .velocities
        .iter()
        .map(|v| weighted_abs_pow(v, &w, spec.p))
        .sum();
    Ok(traj.dt / n as f64 * per_step)
}

/// Coordinates selected by the sparse position classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub classifier_weights: Vec<f64>,
    pub intercept: f64,
    pub selected: Vec<usize>,
    pub cost_weights: Vec<f64>,
}

impl MaskReport {
    pub fn cost_spec(&self, p: f64) -> Result<CostSpec> {
        CostSpec::weighted(p, self.cost_weights.clone())
    }
}

pub const MASK_THRESHOLD: f64 = 1e-6;
const MASK_ITERATIONS: usize = 2000;
const MASK_STEP: f64 = 0.1;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L1-regularized logistic regression on the binary label column `attribute`
/// fitted by proximal gradient descent. Coordinates with non-zero weight get
/// cost weight 0, all others 1.
pub fn fit_sparse_mask(
    data: &EmpiricalMeasure,
    attribute: &str,
    l1_strength: f64,
) -> Result<MaskReport> {
    if !(l1_strength > 0.0 && l1_strength.is_finite()) {
        return Err(Error::invalid(
            "l1_strength must be positive for a sparse mask",
        ));
    }
    let raw = data
        .label(attribute)
        .ok_or_else(|| Error::invalid(format!("data has no label `{attribute}`")))?;
    let mut values: Vec<i64> = raw.to_vec();
    values.sort_unstable();
    values.dedup();
    if values.len() != 2 {
        return Err(Error::invalid(format!(
            "label `{attribute}` must take exactly two values, found {}",
            values.len()
        )));
    }
    let y: Vec<f64> = raw
        .iter()
        .map(|v| if *v == values[1] { 1.0 } else { 0.0 })
        .collect();
    let x = data.points();
    let (n, d) = (x.rows(), x.cols());

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let threshold = MASK_STEP * l1_strength;
    for _ in 0..MASK_ITERATIONS {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let z: f64 = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = sigmoid(z) - y[i];
            gb += r;
            for (g, xv) in gw.iter_mut().zip(row) {
                *g += r * xv;
            }
        }
        b -= MASK_STEP * gb / n as f64;
        for (wj, gj) in w.iter_mut().zip(&gw) {
            let step = *wj - MASK_STEP * gj / n as f64;
            *wj = step.signum() * (step.abs() - threshold).max(0.0);
        }
    }

    let selected: Vec<usize> = (0..d).filter(|&j| w[j].abs() > MASK_THRESHOLD).collect();
    if selected.len() == d {
        return Err(Error::invalid(
            "mask selected every coordinate; increase l1_strength",
        ));
    }
    let cost_weights = (0..d)
        .map(|j| if selected.contains(&j) { 0.0 } else { 1.0 })
        .collect();
    Ok(MaskReport {
        classifier_weights: w,
        intercept: b,
        selected,
        cost_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{gen_digit_swap_analog, DigitSwapSpec};
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn squared_euclidean() {
        assert_eq!(
            CostSpec::default()
                .ground_cost(&[0.0, 0.0], &[3.0, 4.0])
                .unwrap(),
            25.0
        );
    }

    #[test]
    fn masked_coordinate_is_free() {
        let c = CostSpec::weighted(2.0, vec![0.0, 1.0]).unwrap();
        assert_eq!(c.ground_cost(&[0.0, 1.0], &[3.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn fractional_power() {
        let c = CostSpec::power(1.5).unwrap();
        let v = c.ground_cost(&[0.0], &[8.0]).unwrap();
        assert!((v - 22.627416997969522).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(CostSpec::default()
            .ground_cost(&[0.0], &[1.0, 2.0])
            .is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(CostSpec::power(0.5).is_err());
        assert!(CostSpec::weighted(2.0, vec![0.0, 0.0]).is_err());
        assert!(CostSpec::weighted(2.0, vec![-1.0, 1.0]).is_err());
        assert!(CostSpec::default().is_strictly_convex());
        assert!(!CostSpec::weighted(2.0, vec![0.0, 1.0])
            .unwrap()
            .is_strictly_convex());
    }

    fn constant_trajectory(k: usize, v: [f64; 2]) -> Trajectory {
        let dt = 1.0 / k as f64;
        let mut positions = vec![Tensor::zeros(&[1, 2])];
        let vel = Tensor::new(vec![1, 2], v.to_vec()).unwrap();
        let mut velocities = Vec::new();
        for _ in 0..k {
            let next = positions.last().unwrap().add(&vel.scale(dt)).unwrap();
            positions.push(next);
            velocities.push(vel.clone());
        }
        Trajectory {
            positions,
            velocities,
            dt,
        }
    }

    #[test]
    fn constant_speed_cost() {
        let t = constant_trajectory(2, [1.0, 0.0]);
        assert_eq!(dynamic_cost(&t, &CostSpec::default()).unwrap(), 1.0);
        let t = constant_trajectory(3, [0.0, 0.0]);
        assert_eq!(dynamic_cost(&t, &CostSpec::default()).unwrap(), 0.0);
    }

    #[test]
    fn empty_trajectory_rejected() {
        let t = Trajectory {
            positions: vec![Tensor::zeros(&[1, 1])],
            velocities: vec![],
            dt: 1.0,
        };
        assert!(dynamic_cost(&t, &CostSpec::default()).is_err());
    }

    #[test]
    fn dynamic_cost_matches_scalar_resummation() {
        let mut rng = Rng::new(21, 0);
        let (k, n, d) = (4, 5, 3);
        let dt = 0.25;
        let velocities: Vec<Tensor> = (0..k)
            .map(|_| Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap())
            .collect();
        let traj = Trajectory {
            positions: vec![Tensor::zeros(&[n, d]); k + 1],
            velocities: velocities.clone(),
            dt,
        };
        let spec = CostSpec::weighted(1.5, vec![0.5, 1.0, 2.0]).unwrap();
        let mut oracle = 0.0;
        for v in &velocities {
            for x in 0..n {
                for i in 0..d {
                    oracle += spec.weights.as_ref().unwrap()[i] * v.get(x, i).abs().powf(1.5);
                }
            }
        }
        oracle *= dt / n as f64;
        assert!((dynamic_cost(&traj, &spec).unwrap() - oracle).abs() < 1e-12);
    }

    fn pooled_digits(n: usize, seed: u64) -> EmpiricalMeasure {
        let (a, b) = gen_digit_swap_analog(&DigitSwapSpec {
            n,
            seed,
            noise: 0.05,
        })
        .unwrap();
        let pts = a.points().vstack(b.points()).unwrap();
        let mut pos = a.label("position").unwrap().to_vec();
        pos.extend_from_slice(b.label("position").unwrap());
        EmpiricalMeasure::new(pts)
            .unwrap()
            .with_label("position", pos)
            .unwrap()
    }

    #[test]
    fn mask_selects_position_coordinate() {
        let report = fit_sparse_mask(&pooled_digits(400, 2), "position", 0.01).unwrap();
        assert_eq!(report.selected, vec![0]);
        assert_eq!(report.cost_weights, vec![0.0, 1.0]);
    }

    #[test]
    fn uninformative_labels_select_nothing() {
        let mut rng = Rng::new(8, 0);
        let n = 1000;
        let pts = Tensor::new(vec![n, 3], (0..3 * n).map(|_| rng.normal()).collect()).unwrap();
        let labels: Vec<i64> = (0..n).map(|_| (rng.uniform() < 0.5) as i64).collect();
        let data = EmpiricalMeasure::new(pts)
            .unwrap()
            .with_label("coin", labels)
            .unwrap();
        let report = fit_sparse_mask(&data, "coin", 0.1).unwrap();
        assert!(report.selected.is_empty(), "{report:?}");
        assert_eq!(report.cost_weights, vec![1.0; 3]);
    }

    #[test]
    fn mask_requires_sparsity_and_two_classes() {
        let data = pooled_digits(20, 0);
        assert!(fit_sparse_mask(&data, "position", 0.0).is_err());
        let single = data
            .subset(&[0, 2, 4])
            .with_label("position", vec![1, 1, 1])
            .unwrap();
        assert!(fit_sparse_mask(&single, "position", 0.01).is_err());
    }

    #[test]
    fn mask_monotone_in_l1_strength() {
        let data = pooled_digits(200, 5);
        let grid = [0.001, 0.01, 0.1];
        let selections: Vec<Vec<usize>> = grid
            .iter()
            .map(|l| {
                fit_sparse_mask(&data, "position", *l)
                    .map(|r| r.selected)
                    .unwrap_or_default()
            })
            .collect();
        for w in selections.windows(2) {
            let strict_superset = w[0].iter().all(|c| w[1].contains(c)) && w[1].len() > w[0].len();
            assert!(!strict_superset, "{selections:?}");
        }
    }

    proptest! {
        #[test]
        fn cost_is_symmetric_and_zero_on_diagonal(
            x in proptest::collection::vec(-10.0f64..10.0, 3),
            y in proptest::collection::vec(-10.0f64..10.0, 3),
            p in 1.0f64..4.0,
        ) {
            let c = CostSpec::weighted(p, vec![0.3, 1.0, 2.5]).unwrap();
            prop_assert_eq!(c.ground_cost(&x, &y).unwrap(), c.ground_cost(&y, &x).unwrap());
            prop_assert_eq!(c.ground_cost(&x, &x).unwrap(), 0.0);
        }
    }
}
