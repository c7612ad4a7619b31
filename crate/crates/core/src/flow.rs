//! The flow model: `K` per-step two-layer velocity networks integrated with
//! explicit Euler steps of size `1/K`, plus its reverse mode and checkpoints.

use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::numerics::{Rng, Tape, Tensor, Var};

/// Largest coordinate magnitude tolerated during a pass.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const EXACT_INVERSE_ITERATIONS: usize = 50;
const EXACT_INVERSE_TOL: f64 = 1e-10;

/// Parameters of `v(z) = W2 tanh(W1 z + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityStep {
    /// `h × d`
    pub w1: Tensor,
    /// `1 × h`
    pub b1: Tensor,
    /// `d × h`
    pub w2: Tensor,
    /// `1 × d`
    pub b2: Tensor,
}

impl VelocityStep {
    pub fn zeros(d: usize, h: usize) -> Self {
        VelocityStep {
            w1: Tensor::zeros(&[h, d]),
            b1: Tensor::zeros(&[1, h]),
            w2: Tensor::zeros(&[d, h]),
            b2: Tensor::zeros(&[1, d]),
        }
    }

    /// Velocities for every row of `z`.
    pub fn velocity(&self, z: &Tensor) -> Result<Tensor> {
        let hidden = z.matmul(&self.w1.transpose()?)?.add_row(&self.b1)?.tanh();
        hidden.matmul(&self.w2.transpose()?)?.add_row(&self.b2)
    }

    pub fn parameters(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Positions at every step (`K + 1` tensors of `N × d`) and the velocities
/// applied at each step (`K` tensors of `N × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Tensor>,
    pub velocities: Vec<Tensor>,
    pub dt: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    pub fn output(&self) -> &Tensor {
        self.positions
            .last()
            .expect("trajectory has at least one position")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    steps: Vec<VelocityStep>,
    dim: usize,
    hidden: usize,
    gain: f64,
}

fn guard(step: usize, z: &Tensor) -> Result<()> {
    if !z.all_finite() {
        return Err(Error::Divergence {
            step,
            detail: "non-finite coordinate".into(),
        });
    }
    let m = z.max_abs();
    if m > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            step,
            detail: format!("coordinate magnitude {m:e} exceeds {DIVERGENCE_LIMIT:e}"),
        });
    }
    Ok(())
}

/// Parameter handles of one step recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl StepVars {
    pub fn all(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Result of recording a forward pass on a tape.
pub struct TapeForward {
    pub params: Vec<StepVars>,
    pub output: Var,
    /// `Σ_k Σ_x Σ_i c_i |v_i|^p` scaled by `Δt / N`.
    pub dynamic_cost: Var,
}

impl FlowModel {
    /// Weights drawn from `N(0, gain²/fan_in)`, biases zero.
    pub fn init(d: usize, k: usize, h: usize, gain: f64, rng: &mut Rng) -> Result<Self> {
        if d == 0 || k == 0 || h == 0 {
            return Err(Error::invalid(format!(
                "flow needs d, K, hidden >= 1 (got {d}, {k}, {h})"
            )));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::invalid(format!("gain must be > 0, got {gain}")));
        }
        let mut steps = Vec::with_capacity(k);
        for _ in 0..k {
            let mut s = VelocityStep::zeros(d, h);
            let sd1 = gain / (d as f64).sqrt();
            s.w1.data_mut()
                .iter_mut()
                .for_each(|w| *w = sd1 * rng.normal());
            let sd2 = gain / (h as f64).sqrt();
            s.w2.data_mut()
                .iter_mut()
                .for_each(|w| *w = sd2 * rng.normal());
            steps.push(s);
        }
        Ok(FlowModel {
            steps,
            dim: d,
            hidden: h,
            gain,
        })
    }

    /// A model whose every velocity field is identically zero.
    pub fn zeros(d: usize, k: usize, h: usize) -> Result<Self> {
        if d == 0 || k == 0 || h == 0 {
            return Err(Error::invalid("flow needs d, K, hidden >= 1"));
        }
        Ok(FlowModel {
            steps: (0..k).map(|_| VelocityStep::zeros(d, h)).collect(),
            dim: d,
            hidden: h,
            gain: 0.0,
        })
    }

    pub fn from_steps(steps: Vec<VelocityStep>, gain: f64) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::invalid("flow needs at least one step"))?;
        let (h, d) = (first.w1.rows(), first.w1.cols());
        for s in &steps {
            let ok = s.w1.shape() == [h, d]
                && s.b1.shape() == [1, h]
                && s.w2.shape() == [d, h]
                && s.b2.shape() == [1, d]
                && s.parameters().iter().all(|p| p.all_finite());
            if !ok {
                return Err(Error::invalid("inconsistent or non-finite step parameters"));
            }
        }
        Ok(FlowModel {
            steps,
            dim: d,
            hidden: h,
            gain,
        })
    }

    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps.len() as f64
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn steps(&self) -> &[VelocityStep] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [VelocityStep] {
        &mut self.steps
    }

    pub fn num_parameters(&self) -> usize {
        self.steps.len() * (2 * self.dim * self.hidden + self.hidden + self.dim)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                op: "flow",
                left: x.shape().to_vec(),
                right: vec![x.rows(), self.dim],
            });
        }
        Ok(())
    }

    /// `φ_{k+1} = φ_k + Δt v_k(φ_k)` for `k = 0..K-1`.
    pub fn forward(&self, x: &Tensor, record: bool) -> Result<(Tensor, Option<Trajectory>)> {
        self.check_input(x)?;
        guard(0, x)?;
        let dt = self.dt();
        let mut z = x.clone();
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        for (k, step) in self.steps.iter().enumerate() {
            let v = step.velocity(&z)?;
            let next = z.add(&v.scale(dt))?;
            guard(k + 1, &next)?;
            if record {
                positions.push(z);
                velocities.push(v);
            }
            z = next;
        }
        if record {
            positions.push(z.clone());
            Ok((
                z,
                Some(Trajectory {
                    positions,
                    velocities,
                    dt,
                }),
            ))
        } else {
            Ok((z, None))
        }
    }

    pub fn transport(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, false)?.0)
    }

    pub fn trajectory(&self, x: &Tensor) -> Result<Trajectory> {
        Ok(self.forward(x, true)?.1.expect("recorded"))
    }

    /// Forward pass on a measure; labels travel with their points.
    pub fn push_forward(&self, m: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
        m.with_points(self.transport(m.points())?)
    }

    /// Explicit reverse steps `y_k = y_{k+1} - Δt v_k(y_{k+1})` for `k = K-1..0`.
    pub fn reverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check_input(y)?;
        guard(self.k(), y)?;
        let dt = self.dt();
        let mut z = y.clone();
        for (k, step) in self.steps.iter().enumerate().rev() {
            z = z.sub(&step.velocity(&z)?.scale(dt))?;
            guard(k, &z)?;
        }
        Ok(z)
    }

    /// Inverts each Euler step by the fixed point `z = y - Δt v_k(z)`.
    pub fn reverse_exact(&self, y: &Tensor) -> Result<Tensor> {
        self.check_input(y)?;
        guard(self.k(), y)?;
        let dt = self.dt();
        let mut target = y.clone();
        for (k, step) in self.steps.iter().enumerate().rev() {
            let mut z = target.clone();
            for _ in 0..EXACT_INVERSE_ITERATIONS {
                let next = target.sub(&step.velocity(&z)?.scale(dt))?;
                guard(k, &next)?;
                let change = next.sub(&z)?.max_abs();
                z = next;
                if change <= EXACT_INVERSE_TOL {
                    break;
                }
            }
            target = z;
        }
        Ok(target)
    }

    /// Positions after `k` steps.
    pub fn interpolate(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        if k > self.k() {
            return Err(Error::invalid(format!(
                "step {k} out of range 0..={}",
                self.k()
            )));
        }
        self.check_input(x)?;
        let dt = self.dt();
        let mut z = x.clone();
        for (i, step) in self.steps[..k].iter().enumerate() {
            z = z.add(&step.velocity(&z)?.scale(dt))?;
            guard(i + 1, &z)?;
        }
        Ok(z)
    }

    /// Registers every parameter on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<StepVars> {
        self.steps
            .iter()
            .map(|step| StepVars {
                w1: tape.leaf(step.w1.clone()),
                b1: tape.leaf(step.b1.clone()),
                w2: tape.leaf(step.w2.clone()),
                b2: tape.leaf(step.b2.clone()),
            })
            .collect()
    }

    /// Records the forward pass of `z` with previously registered parameters.
    /// When `cost` is given the dynamic cost is recorded as well.
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        params: &[StepVars],
        z: Var,
        cost: Option<&CostSpec>,
    ) -> Result<(Var, Option<Var>)> {
        if params.len() != self.k() {
            return Err(Error::invalid("parameter handles do not match the model"));
        }
        self.check_input(tape.value(z)?)?;
        let n = tape.value(z)?.rows();
        let weights = match cost {
            Some(c) => Some(c.weights_for(self.dim)?),
            None => None,
        };
        let dt = self.dt();
        let mut z = z;
        let mut total: Option<Var> = None;
        for (k, vars) in params.iter().enumerate() {
            let w1t = tape.transpose(vars.w1)?;
            let pre = tape.matmul(z, w1t)?;
            let pre = tape.add_row(pre, vars.b1)?;
            let hidden = tape.tanh(pre)?;
            let w2t = tape.transpose(vars.w2)?;
            let v = tape.matmul(hidden, w2t)?;
            let v = tape.add_row(v, vars.b2)?;
            if let (Some(w), Some(c)) = (&weights, cost) {
                let ck = tape.weighted_abs_pow_sum(v, w, c.p)?;
                total = Some(match total {
                    Some(t) => tape.add(t, ck)?,
                    None => ck,
                });
            }
            let step_v = tape.scale(v, dt)?;
            z = tape.add(z, step_v)?;
            guard(k + 1, tape.value(z)?)?;
        }
        let dynamic_cost = match total {
            Some(t) => Some(tape.scale(t, dt / n as f64)?),
            None => None,
        };
        Ok((z, dynamic_cost))
    }

    /// Records the forward pass of a constant batch and its dynamic cost.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        cost: &CostSpec,
    ) -> Result<TapeForward> {
        self.check_input(x)?;
        let params = self.register(tape);
        let z = tape.constant(x.clone());
        let (output, dynamic_cost) = self.forward_vars(tape, &params, z, Some(cost))?;
        Ok(TapeForward {
            params,
            output,
            dynamic_cost: dynamic_cost.expect("cost requested"),
        })
    }

    /// Applies `update(param, grad)` to every parameter in registration order.
    pub fn for_each_parameter_mut(&mut self, mut update: impl FnMut(usize, &mut Tensor)) {
        let mut idx = 0;
        for step in &mut self.steps {
            for p in step.parameters_mut() {
                update(idx, p);
                idx += 1;
            }
        }
    }

    /// The init gain is stored under `train_meta.gain`.
    pub fn to_checkpoint(
        &self,
        cost: &CostSpec,
        seed: u64,
        train_meta: serde_json::Value,
    ) -> Result<Checkpoint> {
        let mut meta = match train_meta {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => serde_json::Map::new(),
            other => {
                let mut m = serde_json::Map::new();
                m.insert("info".into(), other);
                m
            }
        };
        meta.insert("gain".into(), serde_json::Value::from(self.gain));
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            d: self.dim,
            k: self.k(),
            hidden: self.hidden,
            p: cost.p,
            cost_weights: cost.weights_for(self.dim)?,
            steps: self
                .steps
                .iter()
                .map(|s| StepParams {
                    w1: s.w1.data().to_vec(),
                    b1: s.b1.data().to_vec(),
                    w2: s.w2.data().to_vec(),
                    b2: s.b2.data().to_vec(),
                })
                .collect(),
            seed,
            train_meta: serde_json::Value::Object(meta),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        if ck.steps.len() != ck.k || ck.k == 0 {
            return Err(Error::Checkpoint(format!(
                "expected {} steps, found {}",
                ck.k,
                ck.steps.len()
            )));
        }
        let (d, h) = (ck.d, ck.hidden);
        let tensor = |shape: [usize; 2], data: &[f64], what: &str| {
            Tensor::new(shape.to_vec(), data.to_vec())
                .map_err(|e| Error::Checkpoint(format!("{what}: {e}")))
        };
        let steps = ck
            .steps
            .iter()
            .map(|s| {
                Ok(VelocityStep {
                    w1: tensor([h, d], &s.w1, "W1")?,
                    b1: tensor([1, h], &s.b1, "b1")?,
                    w2: tensor([d, h], &s.w2, "W2")?,
                    b2: tensor([1, d], &s.b2, "b2")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gain = ck
            .train_meta
            .get("gain")
            .and_then(|g| g.as_f64())
            .unwrap_or(0.0);
        FlowModel::from_steps(steps, gain).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Row-major parameters of one step as stored in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepParams {
    #[serde(rename = "W1")]
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub hidden: usize,
    pub p: f64,
    pub cost_weights: Vec<f64>,
    pub steps: Vec<StepParams>,
    pub seed: u64,
    pub train_meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        CostSpec::weighted(self.p, self.cost_weights.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::dynamic_cost;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_batch(rng: &mut Rng, n: usize, d: usize) -> Tensor {
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    fn unit_rows(rng: &mut Rng, n: usize, d: usize) -> Tensor {
        let mut x = random_batch(rng, n, d);
        for i in 0..n {
            let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            x.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        x
    }

    fn constant_field(d: usize, k: usize, c: &[f64]) -> FlowModel {
        let mut m = FlowModel::zeros(d, k, 3).unwrap();
        for s in m.steps_mut() {
            s.b2 = Tensor::row_vector(c.to_vec());
        }
        m
    }

    #[test]
    fn tiny_gain_is_near_identity() {
        let mut rng = Rng::new(1, 0);
        let m = FlowModel::init(3, 4, 16, 1e-8, &mut rng).unwrap();
        let x = unit_rows(&mut rng, 20, 3);
        let y = m.transport(&x).unwrap();
        assert!(y.sub(&x).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn init_is_deterministic() {
        let a = FlowModel::init(2, 3, 8, 0.5, &mut Rng::new(4, 0)).unwrap();
        let b = FlowModel::init(2, 3, 8, 0.5, &mut Rng::new(4, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a
            .steps()
            .iter()
            .all(|s| s.b1.max_abs() == 0.0 && s.b2.max_abs() == 0.0));
    }

    #[test]
    fn larger_gain_moves_more() {
        let x = random_batch(&mut Rng::new(9, 1), 64, 2);
        let cost = CostSpec::default();
        let c = |gain| {
            let m = FlowModel::init(2, 4, 32, gain, &mut Rng::new(9, 0)).unwrap();
            dynamic_cost(&m.trajectory(&x).unwrap(), &cost).unwrap()
        };
        assert!(c(1.0) > c(0.01));
    }

    #[test]
    fn invalid_init_rejected() {
        let mut rng = Rng::new(0, 0);
        assert!(FlowModel::init(0, 1, 1, 1.0, &mut rng).is_err());
        assert!(FlowModel::init(1, 1, 1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn zero_model_is_identity() {
        let m = FlowModel::zeros(2, 5, 4).unwrap();
        let x = random_batch(&mut Rng::new(2, 0), 7, 2);
        assert_eq!(m.transport(&x).unwrap(), x);
        assert_eq!(m.reverse(&x).unwrap(), x);
    }

    #[test]
    fn single_constant_step_translates() {
        let m = constant_field(2, 1, &[0.5, -2.0]);
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let y = m.transport(&x).unwrap();
        assert_eq!(
            y,
            Tensor::from_rows(&[vec![1.5, -1.0], vec![0.5, 1.0]]).unwrap()
        );
    }

    #[test]
    fn matches_hand_unrolled_steps() {
        let mut rng = Rng::new(3, 0);
        let m = FlowModel::init(3, 4, 5, 1.0, &mut rng).unwrap();
        let x = random_batch(&mut rng, 6, 3);
        let mut z = x.clone();
        for s in m.steps() {
            let mut next = z.clone();
            for r in 0..z.rows() {
                for o in 0..3 {
                    let mut v = s.b2.data()[o];
                    for j in 0..5 {
                        let mut pre = s.b1.data()[j];
                        for i in 0..3 {
                            pre += z.get(r, i) * s.w1.get(j, i);
                        }
                        v += pre.tanh() * s.w2.get(o, j);
                    }
                    next.set(r, o, z.get(r, o) + 0.25 * v);
                }
            }
            z = next;
        }
        assert_eq!(m.transport(&x).unwrap(), z);
    }

    #[test]
    fn trajectory_satisfies_recurrence() {
        let mut rng = Rng::new(5, 0);
        let m = FlowModel::init(2, 6, 8, 1.0, &mut rng).unwrap();
        let x = random_batch(&mut rng, 10, 2);
        let t = m.trajectory(&x).unwrap();
        assert_eq!(t.positions.len(), 7);
        assert_eq!(t.positions[0], x);
        for k in 0..6 {
            assert_eq!(
                t.positions[k + 1],
                t.positions[k].add(&t.velocities[k].scale(t.dt)).unwrap()
            );
        }
        assert_eq!(t.output(), &m.transport(&x).unwrap());
    }

    #[test]
    fn constant_field_reverses_exactly() {
        let m = constant_field(2, 4, &[1.0, -0.5]);
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 1.0]]).unwrap();
        let back = m.reverse(&m.transport(&x).unwrap()).unwrap();
        assert!(back.sub(&x).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn exact_inverse_recovers_input() {
        let mut rng = Rng::new(6, 0);
        let m = FlowModel::init(2, 4, 16, 0.5, &mut rng).unwrap();
        let x = random_batch(&mut rng, 30, 2);
        let y = m.transport(&x).unwrap();
        let explicit = m.reverse(&y).unwrap().sub(&x).unwrap().max_abs();
        let exact = m.reverse_exact(&y).unwrap().sub(&x).unwrap().max_abs();
        assert!(exact < 1e-9, "{exact}");
        assert!(exact <= explicit);
    }

    #[test]
    fn interpolate_endpoints() {
        let mut rng = Rng::new(7, 0);
        let m = FlowModel::init(2, 3, 4, 1.0, &mut rng).unwrap();
        let x = random_batch(&mut rng, 5, 2);
        assert_eq!(m.interpolate(&x, 0).unwrap(), x);
        assert_eq!(m.interpolate(&x, 3).unwrap(), m.transport(&x).unwrap());
        assert_eq!(
            m.interpolate(&x, 2).unwrap(),
            m.trajectory(&x).unwrap().positions[2]
        );
        assert!(m.interpolate(&x, 4).is_err());
    }

    #[test]
    fn divergence_names_step() {
        let m = constant_field(1, 2, &[2e6]);
        let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        match m.transport(&x) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = Rng::new(8, 0);
        let m = FlowModel::init(2, 3, 4, 1.0, &mut rng).unwrap();
        let x = random_batch(&mut rng, 5, 2);
        let mut tape = Tape::new();
        let cost = CostSpec::default();
        let f = m.forward_on_tape(&mut tape, &x, &cost).unwrap();
        let plain = m.trajectory(&x).unwrap();
        assert_eq!(tape.value(f.output).unwrap(), plain.output());
        let c = tape.value(f.dynamic_cost).unwrap().item().unwrap();
        assert!((c - dynamic_cost(&plain, &cost).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = Rng::new(10, 0);
        let m = FlowModel::init(3, 4, 7, 0.7, &mut rng).unwrap();
        let ck = m
            .to_checkpoint(
                &CostSpec::default(),
                10,
                serde_json::json!({"iterations": 0}),
            )
            .unwrap();
        let text = ck.to_json().unwrap();
        let back = FlowModel::from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
        assert_eq!(back, m);
        let x = random_batch(&mut rng, 9, 3);
        let (a, b) = (m.transport(&x).unwrap(), back.transport(&x).unwrap());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(text.contains("\"W1\"") && text.contains("\"K\": 4"));
    }

    #[test]
    fn checkpoint_rejects_bad_input() {
        let m = FlowModel::zeros(2, 2, 3).unwrap();
        let mut ck = m
            .to_checkpoint(&CostSpec::default(), 0, serde_json::Value::Null)
            .unwrap();
        ck.steps[1].w1.pop();
        assert!(FlowModel::from_checkpoint(&ck).is_err());
        ck.format_version = 2;
        assert!(FlowModel::from_checkpoint(&ck).is_err());
        assert!(Checkpoint::from_json("{\"format_version\": 1, \"extra\": 0}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn row_permutation_equivariance(seed in 0u64..1000, n in 2usize..12) {
            let mut rng = Rng::new(seed, 0);
            let m = FlowModel::init(2, 3, 6, 1.0, &mut rng).unwrap();
            let x = random_batch(&mut rng, n, 2);
            let perm = rng.permutation(n);
            let y = m.transport(&x).unwrap();
            let yp = m.transport(&x.select_rows(&perm)).unwrap();
            prop_assert_eq!(yp, y.select_rows(&perm));
        }

        #[test]
        fn jensen_bound_on_every_pass(seed in 0u64..1000, k in 1usize..6, p in 1.0f64..3.0) {
            let mut rng = Rng::new(seed, 0);
            let m = FlowModel::init(2, k, 6, 1.0, &mut rng).unwrap();
            let x = random_batch(&mut rng, 8, 2);
            let cost = CostSpec::power(p).unwrap();
            let t = m.trajectory(&x).unwrap();
            let dynamic = dynamic_cost(&t, &cost).unwrap();
            let static_cost = cost.static_cost(&x, t.output()).unwrap();
            prop_assert!(dynamic >= static_cost - 1e-9);
        }
    }
}
