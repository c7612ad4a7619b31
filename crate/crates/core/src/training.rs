//! Minibatch optimisation of `C_d + (1/λ_i) D(T♯α, β)` with Adam and a
//! linearly decaying multiplier, and the cycle-consistency baseline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::costs::{dynamic_cost, CostSpec};
use crate::discrepancy::{Discrepancy, DiscrepancySpec};
use crate::error::{Error, Result};
use crate::flow::{FlowModel, StepVars};
use crate::format::{csv_row, fmt_f64};
use crate::measures::EmpiricalMeasure;
use crate::numerics::{Rng, Tape, Tensor, Var};

/// `λ_i = max(λ_0 - i d, λ_min)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSchedule {
    pub lambda0: f64,
    pub lambda_min: f64,
    pub decay: f64,
    /// Index of the last training iteration; the floor is returned from here on.
    pub last: usize,
}

impl LambdaSchedule {
    /// Decay chosen so that `λ_min` is reached exactly at iteration `M - 1`.
    pub fn linear(lambda0: f64, lambda_min: f64, iterations: usize) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda0 >= lambda_min && lambda0.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < lambda_min <= lambda0, got {lambda_min} and {lambda0}"
            )));
        }
        let last = iterations.saturating_sub(1);
        Ok(LambdaSchedule {
            lambda0,
            lambda_min,
            decay: (lambda0 - lambda_min) / last.max(1) as f64,
            last,
        })
    }

    pub fn lambda(&self, i: usize) -> f64 {
        if i >= self.last && self.last > 0 {
            return self.lambda_min;
        }
        (self.lambda0 - i as f64 * self.decay).max(self.lambda_min)
    }

    pub fn penalty_weight(&self, i: usize) -> f64 {
        1.0 / self.lambda(i)
    }
}

fn default_iterations() -> usize {
    5000
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_eval_every() -> usize {
    100
}
fn default_eval_size() -> usize {
    256
}
fn default_lambda0() -> f64 {
    1.0
}
fn default_lambda_min() -> f64 {
    1e-3
}
fn default_gamma() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Points of α and β held out (from the end) for reported metrics.
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    /// Cycle-consistency weight of the baseline.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Fill the wall-time column of the report (makes it non-reproducible).
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: default_iterations(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            seed: 0,
            eval_every: default_eval_every(),
            eval_size: default_eval_size(),
            lambda0: default_lambda0(),
            lambda_min: default_lambda_min(),
            gamma: default_gamma(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "train.learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moments must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("train.adam_eps must be > 0".into());
        }
        if self.eval_every == 0 {
            return bad("train.eval_every must be >= 1".into());
        }
        if !(self.gamma >= 0.0) {
            return bad("train.gamma must be >= 0".into());
        }
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<LambdaSchedule> {
        LambdaSchedule::linear(self.lambda0, self.lambda_min, self.iterations)
    }
}

/// One evaluation of the held-out metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iter: usize,
    pub lambda: f64,
    pub penalty_weight: f64,
    pub dynamic_cost: f64,
    pub discrepancy: f64,
    pub total_loss: f64,
    pub wall_time_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "iter",
    "lambda",
    "penalty_weight",
    "dynamic_cost",
    "discrepancy",
    "total_loss",
    "wall_time_ms",
];

impl TrainReport {
    pub fn last(&self) -> Option<&ReportRow> {
        self.rows.last()
    }

    pub fn first(&self) -> Option<&ReportRow> {
        self.rows.first()
    }

    pub fn to_csv(&self) -> String {
        let mut out = csv_row(REPORT_COLUMNS);
        for r in &self.rows {
            out.push_str(&csv_row([
                r.iter.to_string(),
                fmt_f64(r.lambda),
                fmt_f64(r.penalty_weight),
                fmt_f64(r.dynamic_cost),
                fmt_f64(r.discrepancy),
                fmt_f64(r.total_loss),
                r.wall_time_ms.to_string(),
            ]));
        }
        out
    }
}

/// Shuffles once per epoch and hands out disjoint batches.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl EpochSampler {
    fn new(n: usize, rng: Rng) -> Self {
        EpochSampler {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self, batch: usize) -> &[usize] {
        if self.pos + batch > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let s = &self.order[self.pos..self.pos + batch];
        self.pos += batch;
        s
    }
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    fn new(cfg: &TrainConfig, shapes: &[Vec<usize>]) -> Self {
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            lr: cfg.learning_rate,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    fn step(&mut self, models: &mut [&mut FlowModel], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut idx = 0;
        for model in models.iter_mut() {
            model.for_each_parameter_mut(|_, p| {
                let (g, m, v) = (&grads[idx], &mut self.m[idx], &mut self.v[idx]);
                for (((w, gi), mi), vi) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                    *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                }
                idx += 1;
            });
        }
    }
}

fn parameter_shapes(model: &FlowModel) -> Vec<Vec<usize>> {
    model
        .steps()
        .iter()
        .flat_map(|s| s.parameters().map(|p| p.shape().to_vec()))
        .collect()
}

fn flat_vars(params: &[StepVars]) -> Vec<Var> {
    params.iter().flat_map(|s| s.all()).collect()
}

/// Records `C_d(x) + w D(T(x), y)` and returns the loss handle plus parameters.
fn record_penalized(
    tape: &mut Tape,
    model: &FlowModel,
    x: &Tensor,
    y: &Tensor,
    cost: &CostSpec,
    disc: &Discrepancy,
    penalty_weight: f64,
) -> Result<(Var, Vec<StepVars>)> {
    let fw = model.forward_on_tape(tape, x, cost)?;
    let d = disc.on_tape(tape, fw.output, y)?;
    let d = tape.scale(d, penalty_weight)?;
    let loss = tape.add(fw.dynamic_cost, d)?;
    Ok((loss, fw.params))
}

/// Value of the penalized objective on a batch.
pub fn penalized_loss(
    model: &FlowModel,
    x: &Tensor,
    y: &Tensor,
    cost: &CostSpec,
    disc: &Discrepancy,
    lambda: f64,
) -> Result<f64> {
    let traj = model.trajectory(x)?;
    Ok(dynamic_cost(&traj, cost)? + disc.value(traj.output(), y)? / lambda)
}

/// Value and per-parameter gradients (registration order: `W1, b1, W2, b2` per step).
pub fn penalized_loss_and_grad(
    model: &FlowModel,
    x: &Tensor,
    y: &Tensor,
    cost: &CostSpec,
    disc: &Discrepancy,
    lambda: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let (loss, params) = record_penalized(&mut tape, model, x, y, cost, disc, 1.0 / lambda)?;
    let value = tape.value(loss)?.item()?;
    let grads = tape.grad(loss, &flat_vars(&params))?;
    Ok((value, grads.into_vec()))
}

/// Splits the last `eval_size` points of each cloud off as the evaluation set.
pub fn split_eval(
    alpha: &EmpiricalMeasure,
    beta: &EmpiricalMeasure,
    eval_size: usize,
) -> Result<(
    EmpiricalMeasure,
    EmpiricalMeasure,
    EmpiricalMeasure,
    EmpiricalMeasure,
)> {
    if eval_size == 0 || eval_size >= alpha.len() || eval_size >= beta.len() {
        return Err(Error::Config(format!(
            "eval_size {eval_size} must be in 1..min(N_alpha, N_beta) = 1..{}",
            alpha.len().min(beta.len())
        )));
    }
    let (ta, ea) = alpha.split_tail(eval_size)?;
    let (tb, eb) = beta.split_tail(eval_size)?;
    Ok((ta, tb, ea, eb))
}

/// Hook invoked after every evaluation with the current model.
pub type Observer<'a> = dyn FnMut(&ReportRow, &FlowModel) -> Result<()> + 'a;

pub struct TrainOutcome {
    pub model: FlowModel,
    pub report: TrainReport,
    pub discrepancy: Discrepancy,
}

pub fn train(
    model: FlowModel,
    alpha: &EmpiricalMeasure,
    beta: &EmpiricalMeasure,
    cost: &CostSpec,
    disc: &DiscrepancySpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(model, alpha, beta, cost, disc, cfg, &mut |_, _| Ok(()))
}

pub fn train_observed(
    mut model: FlowModel,
    alpha: &EmpiricalMeasure,
    beta: &EmpiricalMeasure,
    cost: &CostSpec,
    disc_spec: &DiscrepancySpec,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cost.validate()?;
    if alpha.dim() != model.dim() || beta.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            op: "train",
            left: vec![alpha.dim(), beta.dim()],
            right: vec![model.dim()],
        });
    }
    let (train_a, train_b, eval_a, eval_b) = split_eval(alpha, beta, cfg.eval_size)?;
    let disc = disc_spec.resolve(train_b.points())?;
    let mut report = TrainReport::default();
    if cfg.iterations == 0 {
        return Ok(TrainOutcome {
            model,
            report,
            discrepancy: disc,
        });
    }
    if cfg.batch_size > train_a.len() || cfg.batch_size > train_b.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds training set size {}",
            cfg.batch_size,
            train_a.len().min(train_b.len())
        )));
    }
    let schedule = cfg.schedule()?;
    let mut sample_a = EpochSampler::new(train_a.len(), Rng::new(cfg.seed, 1));
    let mut sample_b = EpochSampler::new(train_b.len(), Rng::new(cfg.seed, 2));
    let mut adam = Adam::new(cfg, &parameter_shapes(&model));
    let start = Instant::now();
    let mut tape = Tape::new();

    let evaluate = |model: &FlowModel, iter: usize| -> Result<ReportRow> {
        let lambda = schedule.lambda(iter);
        let traj = model.trajectory(eval_a.points())?;
        let c = dynamic_cost(&traj, cost)?;
        let d = disc.value(traj.output(), eval_b.points())?;
        Ok(ReportRow {
            iter,
            lambda,
            penalty_weight: 1.0 / lambda,
            dynamic_cost: c,
            discrepancy: d,
            total_loss: c + d / lambda,
            wall_time_ms: if cfg.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    };
    let diverged = |iteration: usize| {
        move |e: Error| Error::TrainingDiverged {
            iteration,
            source: Box::new(e),
        }
    };

    let row = evaluate(&model, 0).map_err(diverged(0))?;
    observer(&row, &model)?;
    report.rows.push(row);

    for i in 0..cfg.iterations {
        let x = train_a.points().select_rows(sample_a.next(cfg.batch_size));
        let y = train_b.points().select_rows(sample_b.next(cfg.batch_size));
        let (loss, params) = record_penalized(
            &mut tape,
            &model,
            &x,
            &y,
            cost,
            &disc,
            schedule.penalty_weight(i),
        )
        .map_err(diverged(i))?;
        let grads = tape.grad(loss, &flat_vars(&params))?.into_vec();
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(diverged(i)(Error::Divergence {
                step: 0,
                detail: "non-finite gradient".into(),
            }));
        }
        adam.step(&mut [&mut model], &grads);

        let done = i + 1;
        if done % cfg.eval_every == 0 || done == cfg.iterations {
            let row = evaluate(&model, done).map_err(diverged(done))?;
            observer(&row, &model)?;
            report.rows.push(row);
        }
    }
    Ok(TrainOutcome {
        model,
        report,
        discrepancy: disc,
    })
}

/// Forward-backward pair trained for coherence and cycle consistency only.
pub struct CycleOutcome {
    pub forward: FlowModel,
    pub backward: FlowModel,
    pub report: TrainReport,
}

fn l1_mean(tape: &mut Tape, a: Var, b: Var, d: usize) -> Result<Var> {
    let n = tape.value(a)?.rows();
    let diff = tape.sub(a, b)?;
    let s = tape.weighted_abs_pow_sum(diff, &vec![1.0; d], 1.0)?;
    tape.scale(s, 1.0 / n as f64)
}

fn l1_mean_plain(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(a.sub(b)?.data().iter().map(|v| v.abs()).sum::<f64>() / a.rows() as f64)
}

/// Trains `T: α → β` and `S: β → α` on
/// `D(T♯α, β) + D(S♯β, α) + γ (‖S∘T - id‖₁ + ‖T∘S - id‖₁)`.
///
/// Report rows have `λ = 1`; `dynamic_cost` is the transport cost of `T`
/// on the evaluation batch, which the baseline does not optimise.
#[allow(clippy::too_many_arguments)]
pub fn train_cycle_baseline(
    mut forward: FlowModel,
    mut backward: FlowModel,
    alpha: &EmpiricalMeasure,
    beta: &EmpiricalMeasure,
    cost: &CostSpec,
    disc_spec: &DiscrepancySpec,
    cfg: &TrainConfig,
) -> Result<CycleOutcome> {
    cfg.validate()?;
    let d = forward.dim();
    if backward.dim() != d || alpha.dim() != d || beta.dim() != d {
        return Err(Error::DimensionMismatch {
            op: "train_cycle_baseline",
            left: vec![alpha.dim(), beta.dim()],
            right: vec![forward.dim(), backward.dim()],
        });
    }
    let (train_a, train_b, eval_a, eval_b) = split_eval(alpha, beta, cfg.eval_size)?;
    let disc_b = disc_spec.resolve(train_b.points())?;
    let disc_a = disc_spec.resolve(train_a.points())?;
    let mut report = TrainReport::default();
    if cfg.iterations == 0 {
        return Ok(CycleOutcome {
            forward,
            backward,
            report,
        });
    }
    if cfg.batch_size > train_a.len() || cfg.batch_size > train_b.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds training set size",
            cfg.batch_size
        )));
    }
    let mut sample_a = EpochSampler::new(train_a.len(), Rng::new(cfg.seed, 1));
    let mut sample_b = EpochSampler::new(train_b.len(), Rng::new(cfg.seed, 2));
    let mut shapes = parameter_shapes(&forward);
    shapes.extend(parameter_shapes(&backward));
    let mut adam = Adam::new(cfg, &shapes);
    let start = Instant::now();
    let gamma = cfg.gamma;

    let evaluate = |t: &FlowModel, s: &FlowModel, iter: usize| -> Result<ReportRow> {
        let (xa, yb) = (eval_a.points(), eval_b.points());
        let traj = t.trajectory(xa)?;
        let tx = traj.output();
        let sy = s.transport(yb)?;
        let coherence = disc_b.value(tx, yb)?;
        let total = coherence
            + disc_a.value(&sy, xa)?
            + gamma
                * (l1_mean_plain(&s.transport(tx)?, xa)? + l1_mean_plain(&t.transport(&sy)?, yb)?);
        Ok(ReportRow {
            iter,
            lambda: 1.0,
            penalty_weight: 1.0,
            dynamic_cost: dynamic_cost(&traj, cost)?,
            discrepancy: coherence,
            total_loss: total,
            wall_time_ms: if cfg.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    };
    let diverged = |iteration: usize| {
        move |e: Error| Error::TrainingDiverged {
            iteration,
            source: Box::new(e),
        }
    };

    report
        .rows
        .push(evaluate(&forward, &backward, 0).map_err(diverged(0))?);
    let mut tape = Tape::new();
    for i in 0..cfg.iterations {
        let x = train_a.points().select_rows(sample_a.next(cfg.batch_size));
        let y = train_b.points().select_rows(sample_b.next(cfg.batch_size));
        let step = |tape: &mut Tape| -> Result<Vec<Tensor>> {
            let tp = forward.register(tape);
            let sp = backward.register(tape);
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let (tx, _) = forward.forward_vars(tape, &tp, xv, None)?;
            let (sy, _) = backward.forward_vars(tape, &sp, yv, None)?;
            let (stx, _) = backward.forward_vars(tape, &sp, tx, None)?;
            let (tsy, _) = forward.forward_vars(tape, &tp, sy, None)?;
            let d1 = disc_b.on_tape(tape, tx, &y)?;
            let d2 = disc_a.on_tape(tape, sy, &x)?;
            let c1 = l1_mean(tape, stx, xv, d)?;
            let c2 = l1_mean(tape, tsy, yv, d)?;
            let cyc = tape.add(c1, c2)?;
            let cyc = tape.scale(cyc, gamma)?;
            let coh = tape.add(d1, d2)?;
            let loss = tape.add(coh, cyc)?;
            let mut vars = flat_vars(&tp);
            vars.extend(flat_vars(&sp));
            Ok(tape.grad(loss, &vars)?.into_vec())
        };
        let grads = step(&mut tape).map_err(diverged(i))?;
        adam.step(&mut [&mut forward, &mut backward], &grads);
        let done = i + 1;
        if done % cfg.eval_every == 0 || done == cfg.iterations {
            report
                .rows
                .push(evaluate(&forward, &backward, done).map_err(diverged(done))?);
        }
    }
    Ok(CycleOutcome {
        forward,
        backward,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::DiscrepancyKind;
    use crate::measures::{gen_1d_pair, Pair1dSpec};

    fn pair(n: usize, seed: u64, mb: f64, sb: f64) -> (EmpiricalMeasure, EmpiricalMeasure) {
        gen_1d_pair(&Pair1dSpec {
            n,
            seed,
            mean_alpha: 0.0,
            std_alpha: 1.0,
            mean_beta: mb,
            std_beta: sb,
        })
        .unwrap()
    }

    fn small_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 32,
            learning_rate: 1e-2,
            eval_every: 10,
            eval_size: 64,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_reaches_floor_at_last_iteration() {
        let s = LambdaSchedule::linear(1.0, 1e-3, 100).unwrap();
        assert_eq!(s.lambda(0), 1.0);
        assert_eq!(s.lambda(99), 1e-3);
        assert_eq!(s.lambda(1000), 1e-3);
        assert!(s.lambda(98) > 1e-3);
        let mut prev = 0.0;
        for i in 0..120 {
            let w = s.penalty_weight(i);
            assert!(w >= prev && s.lambda(i) >= 1e-3);
            prev = w;
        }
        assert!(LambdaSchedule::linear(1.0, 0.0, 10).is_err());
        assert_eq!(LambdaSchedule::linear(1.0, 1e-3, 1).unwrap().lambda(0), 1.0);
    }

    #[test]
    fn zero_iterations_leaves_model_unchanged() {
        let (a, b) = pair(200, 1, 3.0, 0.5);
        let model = FlowModel::init(1, 3, 8, 0.5, &mut Rng::new(1, 0)).unwrap();
        let out = train(
            model.clone(),
            &a,
            &b,
            &CostSpec::default(),
            &DiscrepancySpec::default(),
            &small_cfg(0),
        )
        .unwrap();
        assert_eq!(out.model, model);
        assert!(out.report.rows.is_empty());
    }

    #[test]
    fn report_rows_and_determinism() {
        let (a, b) = pair(200, 2, 3.0, 0.5);
        let run = || {
            let model = FlowModel::init(1, 3, 8, 0.5, &mut Rng::new(2, 0)).unwrap();
            train(
                model,
                &a,
                &b,
                &CostSpec::default(),
                &DiscrepancySpec::default(),
                &small_cfg(25),
            )
            .unwrap()
        };
        let (r1, r2) = (run(), run());
        assert_eq!(r1.report, r2.report);
        assert_eq!(r1.model, r2.model);
        let iters: Vec<usize> = r1.report.rows.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 10, 20, 25]);
        let csv = r1.report.to_csv();
        assert!(csv.starts_with(
            "iter,lambda,penalty_weight,dynamic_cost,discrepancy,total_loss,wall_time_ms\n"
        ));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn identical_domains_stay_near_identity() {
        let (a, _) = pair(400, 3, 0.0, 1.0);
        let (b, _) = pair(400, 4, 0.0, 1.0);
        let model = FlowModel::init(1, 4, 16, 0.1, &mut Rng::new(3, 0)).unwrap();
        let cfg = TrainConfig {
            lambda0: 1e-3,
            ..small_cfg(200)
        };
        let out = train(
            model,
            &a,
            &b,
            &CostSpec::default(),
            &DiscrepancySpec::default(),
            &cfg,
        )
        .unwrap();
        let scale = a.points().data().iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        let c = out.report.last().unwrap().dynamic_cost;
        assert!(c <= 0.05 * scale, "dynamic cost {c} vs scale {scale}");
    }

    #[test]
    fn training_reduces_penalized_loss() {
        let (a, b) = pair(300, 5, 3.0, 0.5);
        let model = FlowModel::init(1, 4, 16, 0.5, &mut Rng::new(5, 0)).unwrap();
        let out = train(
            model,
            &a,
            &b,
            &CostSpec::default(),
            &DiscrepancySpec::default(),
            &small_cfg(150),
        )
        .unwrap();
        let (first, last) = (out.report.first().unwrap(), out.report.last().unwrap());
        assert!(last.discrepancy < first.discrepancy);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(6, 0);
        let model = FlowModel::init(2, 2, 5, 1.0, &mut rng).unwrap();
        let x = Tensor::new(vec![6, 2], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let y = Tensor::new(vec![5, 2], (0..10).map(|_| rng.normal() + 1.0).collect()).unwrap();
        let cost = CostSpec::default();
        for kind in [DiscrepancyKind::Mmd, DiscrepancyKind::Energy] {
            let disc = DiscrepancySpec::new(kind).resolve(&y).unwrap();
            let (_, grads) = penalized_loss_and_grad(&model, &x, &y, &cost, &disc, 0.3).unwrap();
            let h = 1e-5;
            let mut idx = 0;
            let mut num = Vec::new();
            let mut ana = Vec::new();
            for k in 0..model.k() {
                for p in 0..4 {
                    for e in 0..model.steps()[k].parameters()[p].len() {
                        let mut mp = model.clone();
                        mp.steps_mut()[k].parameters_mut()[p].data_mut()[e] += h;
                        let mut mm = model.clone();
                        mm.steps_mut()[k].parameters_mut()[p].data_mut()[e] -= h;
                        let fp = penalized_loss(&mp, &x, &y, &cost, &disc, 0.3).unwrap();
                        let fm = penalized_loss(&mm, &x, &y, &cost, &disc, 0.3).unwrap();
                        num.push((fp - fm) / (2.0 * h));
                        ana.push(grads[idx].data()[e]);
                    }
                    idx += 1;
                }
            }
            let diff: f64 = num
                .iter()
                .zip(&ana)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / norm < 1e-4, "{kind:?}: {}", diff / norm);
        }
    }

    #[test]
    fn batch_larger_than_data_rejected() {
        let (a, b) = pair(100, 7, 3.0, 0.5);
        let model = FlowModel::init(1, 2, 4, 0.5, &mut Rng::new(7, 0)).unwrap();
        let cfg = TrainConfig {
            batch_size: 90,
            ..small_cfg(5)
        };
        assert!(matches!(
            train(
                model,
                &a,
                &b,
                &CostSpec::default(),
                &DiscrepancySpec::default(),
                &cfg
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_reports_iteration() {
        let (a, b) = pair(200, 8, 3.0, 0.5);
        let mut model = FlowModel::zeros(1, 2, 4).unwrap();
        for s in model.steps_mut() {
            s.b2 = Tensor::row_vector(vec![2e6]);
        }
        match train(
            model,
            &a,
            &b,
            &CostSpec::default(),
            &DiscrepancySpec::default(),
            &small_cfg(5),
        ) {
            Err(Error::TrainingDiverged { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn cycle_baseline_runs_and_is_deterministic() {
        let (a, b) = pair(200, 9, 3.0, 0.5);
        let run = || {
            let mut rng = Rng::new(9, 0);
            let t = FlowModel::init(1, 2, 8, 0.1, &mut rng).unwrap();
            let s = FlowModel::init(1, 2, 8, 0.1, &mut rng).unwrap();
            train_cycle_baseline(
                t,
                s,
                &a,
                &b,
                &CostSpec::default(),
                &DiscrepancySpec::default(),
                &small_cfg(40),
            )
            .unwrap()
        };
        let (r1, r2) = (run(), run());
        assert_eq!(r1.report, r2.report);
        let (first, last) = (r1.report.first().unwrap(), r1.report.last().unwrap());
        assert!(last.total_loss < first.total_loss);
        assert!(r1.report.rows.iter().all(|r| r.lambda == 1.0));
    }
}
