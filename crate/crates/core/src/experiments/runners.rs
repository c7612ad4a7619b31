//! End-to-end runs: training, scoring and artifact writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TargetRule};
use super::plots;
use super::scoring::{
    exact_ot, gate, mean_std, median, pairing_accuracy, pairing_loss, spearman, Clusters,
    CostChain, RoundTrip, RunStatus, ScoreReport,
};
use crate::costs::{dynamic_cost, CostSpec, MaskReport};
use crate::discrepancy::{permutation_test, Discrepancy, PermutationTest};
use crate::error::{Error, Result};
use crate::flow::{Checkpoint, FlowModel};
use crate::format::{csv_row, fmt_f64};
use crate::measures::EmpiricalMeasure;
use crate::numerics::{Rng, Tensor};
use crate::oracles::{illposed_construct, mccann, ot_1d, ot_gaussian, OracleResult};
use crate::training::{split_eval, train_cycle_baseline, train_observed, ReportRow, TrainReport};

/// Stream indices of the per-run generators.
const STREAM_FORWARD: u64 = 0;
const STREAM_BACKWARD: u64 = 1;
const STREAM_COHERENCE: u64 = 3;
const STREAM_ILLPOSED: u64 = 4;

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Invert with the fixed-point solver instead of explicit reverse steps.
    pub exact_inverse: bool,
    /// Concurrent sweep runs.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            exact_inverse: false,
            jobs: 1,
        }
    }
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Data and resolved cost for one seed of a configuration.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub hash: String,
    pub alpha: EmpiricalMeasure,
    pub beta: EmpiricalMeasure,
    pub train_a: EmpiricalMeasure,
    pub train_b: EmpiricalMeasure,
    pub eval_a: EmpiricalMeasure,
    pub eval_b: EmpiricalMeasure,
    pub cost: CostSpec,
    pub mask: Option<MaskReport>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.for_seed(seed);
        let (alpha, beta) = cfg.dataset.generate()?;
        let (train_a, train_b, eval_a, eval_b) = split_eval(&alpha, &beta, cfg.train.eval_size)?;
        let (cost, mask) = cfg.cost.resolve(&train_a, &train_b)?;
        Ok(Prepared {
            hash: cfg.hash(),
            cfg,
            seed,
            alpha,
            beta,
            train_a,
            train_b,
            eval_a,
            eval_b,
            cost,
            mask,
        })
    }

    pub fn init_model(&self, gain: f64, stream: u64) -> Result<FlowModel> {
        let f = &self.cfg.flow;
        FlowModel::init(
            self.alpha.dim(),
            f.steps,
            f.hidden,
            gain,
            &mut Rng::for_run(self.seed, stream),
        )
    }

    pub fn discrepancy(&self) -> Result<Discrepancy> {
        self.cfg.discrepancy.resolve(self.train_b.points())
    }

    pub fn checkpoint(&self, model: &FlowModel) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "config_hash": self.hash,
            "iterations": self.cfg.train.iterations,
        });
        model.to_checkpoint(&self.cost, self.seed, meta)
    }

    pub fn load_checkpoint(&self, dir: &Path) -> Result<FlowModel> {
        let path = dir.join("checkpoint.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let model = FlowModel::from_checkpoint(&Checkpoint::from_json(&text)?)?;
        let found = (model.dim(), model.k(), model.hidden());
        let expected = (self.alpha.dim(), self.cfg.flow.steps, self.cfg.flow.hidden);
        if found != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint (dim, steps, hidden) = {found:?} does not match the config {expected:?}"
            )));
        }
        Ok(model)
    }
}

/// Outcome of training one DONT model.
pub struct Fitted {
    pub model: Option<FlowModel>,
    pub report: TrainReport,
    pub failure: Option<String>,
}

/// Trains the DONT model; divergence is captured, other errors propagate.
/// With `out`, the checkpoint is rewritten at each evaluation.
pub fn fit(prep: &Prepared, gain: f64, out: Option<&Path>) -> Result<Fitted> {
    let model = prep.init_model(gain, STREAM_FORWARD)?;
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut observer = |row: &ReportRow, m: &FlowModel| -> Result<()> {
        rows.push(row.clone());
        if let Some(dir) = out {
            write_file(dir, "checkpoint.json", &prep.checkpoint(m)?.to_json()?)?;
        }
        Ok(())
    };
    let result = train_observed(
        model,
        &prep.alpha,
        &prep.beta,
        &prep.cost,
        &prep.cfg.discrepancy,
        &prep.cfg.train,
        &mut observer,
    );
    match result {
        Ok(outcome) => Ok(Fitted {
            model: Some(outcome.model),
            report: outcome.report,
            failure: None,
        }),
        Err(e) if e.is_divergence() => Ok(Fitted {
            model: None,
            report: TrainReport { rows },
            failure: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    let diff = a.sub(b)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / diff.len().max(1) as f64)
}

/// Scores a model on the held-out clouds.
pub fn score(
    prep: &Prepared,
    model: &FlowModel,
    disc: &Discrepancy,
    opts: &RunOptions,
) -> Result<ScoreReport> {
    let cfg = &prep.cfg;
    let mut report = ScoreReport::empty(
        RunStatus::Ok,
        prep.hash.clone(),
        prep.seed,
        cfg.train.iterations,
    );
    report.mask = prep.mask.clone();
    let (xa, yb) = (prep.eval_a.points(), prep.eval_b.points());
    let traj = match model.trajectory(xa) {
        Ok(t) => t,
        Err(e) if e.is_divergence() => {
            report.status = RunStatus::Diverged;
            report.error = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    let image = traj.output().clone();

    let mut rng = Rng::new(prep.seed, STREAM_COHERENCE);
    let coherence = permutation_test(
        disc,
        &image,
        yb,
        cfg.score.permutations,
        cfg.score.level,
        &mut rng,
    )?;

    if !cfg.score.targets.is_empty() {
        let clusters = Clusters::of(&prep.beta)?;
        for (name, rule) in &cfg.score.targets {
            let rule = TargetRule::parse(rule)?;
            let designated = clusters.designate(&rule, &prep.eval_a, &prep.eval_b, &prep.cost)?;
            report.semantic_ungated.insert(
                name.clone(),
                pairing_accuracy(&image, &designated, &clusters),
            );
        }
    }
    report.semantic = gate(&report.semantic_ungated, coherence.pass);
    report.coherence = Some(coherence);

    let c_dyn = dynamic_cost(&traj, &prep.cost)?;
    let c_static = prep.cost.static_cost(xa, &image)?;
    let c_image = exact_ot(xa, &image, &prep.cost)?.cost;
    report.cost_chain = Some(CostChain::new(c_dyn, c_static, c_image));
    let oracle = exact_ot(xa, yb, &prep.cost)?.cost;
    report.oracle_cost = Some(oracle);
    report.cost_ratio = (oracle > 0.0).then(|| c_dyn / oracle);

    let back = if opts.exact_inverse {
        model.reverse_exact(&image)
    } else {
        model.reverse(&image)
    };
    if let Ok(back) = back {
        report.round_trip = Some(RoundTrip {
            method: if opts.exact_inverse {
                "exact"
            } else {
                "explicit"
            }
            .into(),
            mse: mse(&back, xa)?,
        });
    }
    Ok(report)
}

fn render_model_plots(prep: &Prepared, model: &FlowModel, dir: &Path) -> Result<()> {
    let traj = model.trajectory(prep.eval_a.points())?;
    write_file(dir, "scatter.svg", &plots::scatter(prep, traj.output()))?;
    write_file(dir, "trajectories.svg", &plots::trajectories(&traj))?;
    Ok(())
}

/// Result of [`execute`], keeping the model for follow-up analyses.
pub struct Execution {
    pub prep: Prepared,
    pub report: ScoreReport,
    pub model: Option<FlowModel>,
    pub train_report: TrainReport,
}

pub fn execute(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<Execution> {
    let prep = Prepared::new(cfg, cfg.seeds[0])?;
    let fitted = fit(&prep, prep.cfg.flow.gain, Some(out))?;
    write_file(out, "metrics.csv", &fitted.report.to_csv())?;
    let Some(model) = fitted.model else {
        let mut report = ScoreReport::empty(
            RunStatus::Diverged,
            prep.hash.clone(),
            prep.seed,
            prep.cfg.train.iterations,
        );
        report.error = fitted.failure;
        report.mask = prep.mask.clone();
        write_file(out, "scores.json", &to_json(&report)?)?;
        return Ok(Execution {
            prep,
            report,
            model: None,
            train_report: fitted.report,
        });
    };
    write_file(out, "checkpoint.json", &prep.checkpoint(&model)?.to_json()?)?;
    let report = score(&prep, &model, &prep.discrepancy()?, opts)?;
    write_file(out, "scores.json", &to_json(&report)?)?;
    if report.status == RunStatus::Ok {
        render_model_plots(&prep, &model, out)?;
    }
    Ok(Execution {
        prep,
        report,
        model: Some(model),
        train_report: fitted.report,
    })
}

/// Trains, scores and writes `metrics.csv`, `scores.json`, `checkpoint.json`,
/// `scatter.svg` and `trajectories.svg` into `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    opts: &RunOptions,
) -> Result<ScoreReport> {
    Ok(execute(cfg, out, opts)?.report)
}

/// Re-scores the checkpoint stored in `dir`.
pub fn eval_checkpoint(
    cfg: &ExperimentConfig,
    dir: &Path,
    opts: &RunOptions,
) -> Result<ScoreReport> {
    let prep = Prepared::new(cfg, cfg.seeds[0])?;
    let model = prep.load_checkpoint(dir)?;
    let report = score(&prep, &model, &prep.discrepancy()?, opts)?;
    write_file(dir, "scores.json", &to_json(&report)?)?;
    Ok(report)
}

/// Redraws the SVGs of the checkpoint stored in `dir`.
pub fn plot_checkpoint(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let prep = Prepared::new(cfg, cfg.seeds[0])?;
    let model = prep.load_checkpoint(dir)?;
    render_model_plots(&prep, &model, dir)
}

/// Closed form for Gaussian datasets, exact assignment on the evaluation clouds otherwise.
pub fn oracle(cfg: &ExperimentConfig) -> Result<OracleResult> {
    let prep = Prepared::new(cfg, cfg.seeds[0])?;
    if prep.cost.weights.is_none() && prep.cost.p == 2.0 {
        if let Some((a, b)) = prep.cfg.dataset.gaussian_params() {
            return ot_gaussian(&a, &b);
        }
    }
    exact_ot(prep.eval_a.points(), prep.eval_b.points(), &prep.cost)
}

// ---------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub gain: f64,
    pub seed: u64,
    pub method: &'static str,
    pub metric: &'static str,
    pub stage: &'static str,
    pub value: f64,
}

pub const SWEEP_COLUMNS: [&str; 6] = ["gain", "seed", "method", "metric", "stage", "value"];
pub const METHODS: [&str; 2] = ["cycle", "dont"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Medians across seeds, one per gain.
    pub median_pairing_loss: Vec<f64>,
    pub median_initial_transport: Vec<f64>,
    pub pairing_spearman: f64,
    pub pairing_max_min_ratio: f64,
    pub initial_transport_increasing: bool,
    pub diverged_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub gains: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: BTreeMap<String, MethodSummary>,
}

struct CellMetrics {
    pairing: f64,
    transport: f64,
}

fn cell_metrics(
    prep: &Prepared,
    model: &FlowModel,
    designated: &[usize],
    clusters: &Clusters,
) -> CellMetrics {
    let x = prep.eval_a.points();
    match model.transport(x) {
        Ok(image) => CellMetrics {
            pairing: pairing_loss(&image, designated, clusters, &prep.cost).unwrap_or(f64::NAN),
            transport: prep.cost.static_cost(x, &image).unwrap_or(f64::NAN),
        },
        Err(_) => CellMetrics {
            pairing: f64::NAN,
            transport: f64::NAN,
        },
    }
}

fn sweep_cell(
    base: &ExperimentConfig,
    gain: f64,
    seed: u64,
    label: &str,
    dir: &Path,
) -> Result<Vec<SweepRow>> {
    let mut cfg = base.clone();
    cfg.flow.gain = gain;
    let prep = Prepared::new(&cfg, seed)?;
    let clusters = Clusters::of(&prep.beta)?;
    let designated = clusters.designate(
        &TargetRule::Label(label.into()),
        &prep.eval_a,
        &prep.eval_b,
        &prep.cost,
    )?;
    let mut rows = Vec::new();
    let mut push = |method: &'static str, init: &CellMetrics, fin: &CellMetrics| {
        for (metric, a, b) in [
            ("pairing_loss", init.pairing, fin.pairing),
            ("transport_cost", init.transport, fin.transport),
        ] {
            for (stage, value) in [("init", a), ("final", b)] {
                rows.push(SweepRow {
                    gain,
                    seed,
                    method,
                    metric,
                    stage,
                    value,
                });
            }
        }
    };
    let failed = CellMetrics {
        pairing: f64::NAN,
        transport: f64::NAN,
    };

    let t0 = prep.init_model(gain, STREAM_FORWARD)?;
    let s0 = prep.init_model(gain, STREAM_BACKWARD)?;
    let init = cell_metrics(&prep, &t0, &designated, &clusters);
    match train_cycle_baseline(
        t0,
        s0,
        &prep.alpha,
        &prep.beta,
        &prep.cost,
        &prep.cfg.discrepancy,
        &prep.cfg.train,
    ) {
        Ok(out) => {
            write_file(dir, "metrics_cycle.csv", &out.report.to_csv())?;
            push(
                "cycle",
                &init,
                &cell_metrics(&prep, &out.forward, &designated, &clusters),
            );
        }
        Err(e) if e.is_divergence() => push("cycle", &init, &failed),
        Err(e) => return Err(e),
    }

    let fitted = fit(&prep, gain, None)?;
    write_file(dir, "metrics_dont.csv", &fitted.report.to_csv())?;
    let fin = match &fitted.model {
        Some(m) => cell_metrics(&prep, m, &designated, &clusters),
        None => failed,
    };
    push("dont", &init, &fin);
    Ok(rows)
}

fn summarize(rows: &[SweepRow], gains: &[f64], seeds: &[u64], method: &str) -> MethodSummary {
    let pick = |metric: &str, stage: &str, g: f64| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.method == method && r.metric == metric && r.stage == stage && r.gain == g)
            .map(|r| r.value)
            .collect()
    };
    let diverged_runs = rows
        .iter()
        .filter(|r| {
            r.method == method
                && r.metric == "pairing_loss"
                && r.stage == "final"
                && !r.value.is_finite()
        })
        .count();
    let finite = |v: Vec<f64>| -> Vec<f64> { v.into_iter().filter(|x| x.is_finite()).collect() };
    let pairing: Vec<f64> = gains
        .iter()
        .map(|&g| median(&finite(pick("pairing_loss", "final", g))))
        .collect();
    let transport: Vec<f64> = gains
        .iter()
        .map(|&g| median(&pick("transport_cost", "init", g)))
        .collect();
    let (lo, hi) = pairing
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let _ = seeds;
    MethodSummary {
        pairing_spearman: spearman(gains, &pairing),
        pairing_max_min_ratio: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        initial_transport_increasing: transport.windows(2).all(|w| w[1] > w[0]),
        median_pairing_loss: pairing,
        median_initial_transport: transport,
        diverged_runs,
    }
}

/// Trains the cycle baseline and the DONT model for every (gain, seed) and
/// writes `sweep.csv`, `sweep_summary.json` and `sweep.svg`.
pub fn run_gain_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    opts: &RunOptions,
) -> Result<SweepSummary> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("the sweep command needs a [sweep] section".into()))?;
    let cells: Vec<(f64, u64)> = sweep
        .gains
        .iter()
        .flat_map(|&g| cfg.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let results: Vec<Result<Vec<SweepRow>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(g, s)| {
                let dir = out.join("runs").join(format!("gain_{g}_seed_{s}"));
                sweep_cell(cfg, g, s, &sweep.label, &dir)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }

    let mut csv = csv_row(SWEEP_COLUMNS);
    for r in &rows {
        csv.push_str(&csv_row([
            fmt_f64(r.gain),
            r.seed.to_string(),
            r.method.to_string(),
            r.metric.to_string(),
            r.stage.to_string(),
            fmt_f64(r.value),
        ]));
    }
    write_file(out, "sweep.csv", &csv)?;
    let summary = SweepSummary {
        config_hash: cfg.hash(),
        gains: sweep.gains.clone(),
        seeds: cfg.seeds.clone(),
        methods: METHODS
            .iter()
            .map(|m| (m.to_string(), summarize(&rows, &sweep.gains, &cfg.seeds, m)))
            .collect(),
    };
    write_file(out, "sweep_summary.json", &to_json(&summary)?)?;
    write_file(out, "sweep.svg", &plots::sweep(&summary))?;
    Ok(summary)
}

// ------------------------------------------------------------- dynamics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub k: usize,
    pub t: f64,
    pub flow_mean: f64,
    pub flow_std: f64,
    pub mccann_mean: f64,
    pub mccann_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub status: RunStatus,
    pub config_hash: String,
    pub steps: Vec<StepStats>,
    /// `max_k |flow_mean - mccann_mean|`.
    pub max_mean_gap: f64,
    /// `|mean(β) - mean(α)|` on the evaluation clouds.
    pub mean_shift: f64,
    pub start_test: Option<PermutationTest>,
    pub end_test: Option<PermutationTest>,
}

pub const DYNAMICS_COLUMNS: [&str; 6] = [
    "k",
    "t",
    "flow_mean",
    "flow_std",
    "mccann_mean",
    "mccann_std",
];

/// Trains a 1-D flow and compares its per-step marginals with the McCann
/// interpolation of the monotone oracle. Writes the run artifacts plus
/// `dynamics.csv`, `dynamics.json` and `dynamics.svg`.
pub fn run_1d_dynamics(
    cfg: &ExperimentConfig,
    out: &Path,
    opts: &RunOptions,
) -> Result<DynamicsReport> {
    if cfg.dataset.dim() != 1 {
        return Err(Error::Config(
            "the dynamics run needs a one-dimensional dataset".into(),
        ));
    }
    let exec = execute(cfg, out, opts)?;
    let prep = &exec.prep;
    let mut report = DynamicsReport {
        status: exec.report.status,
        config_hash: prep.hash.clone(),
        steps: Vec::new(),
        max_mean_gap: f64::NAN,
        mean_shift: f64::NAN,
        start_test: None,
        end_test: None,
    };
    let Some(model) = exec
        .model
        .as_ref()
        .filter(|_| exec.report.status == RunStatus::Ok)
    else {
        write_file(out, "dynamics.json", &to_json(&report)?)?;
        return Ok(report);
    };
    let (xa, yb) = (prep.eval_a.points(), prep.eval_b.points());
    let traj = model.trajectory(xa)?;
    let oracle = ot_1d(&prep.eval_a, &prep.eval_b, prep.cost.p)?;
    let target = oracle.image(xa, Some(yb))?;
    let k_total = model.k();
    let mut flow_samples = Vec::new();
    let mut oracle_samples = Vec::new();
    for (k, pos) in traj.positions.iter().enumerate() {
        let t = k as f64 / k_total as f64;
        let geo = mccann(&prep.eval_a, &target, t)?;
        let (fm, fs) = mean_std(pos.data());
        let (mm, ms) = mean_std(geo.points().data());
        report.steps.push(StepStats {
            k,
            t,
            flow_mean: fm,
            flow_std: fs,
            mccann_mean: mm,
            mccann_std: ms,
        });
        flow_samples.push(pos.data().to_vec());
        oracle_samples.push(geo.points().data().to_vec());
    }
    report.max_mean_gap = report
        .steps
        .iter()
        .map(|s| (s.flow_mean - s.mccann_mean).abs())
        .fold(0.0, f64::max);
    report.mean_shift = (mean_std(yb.data()).0 - mean_std(xa.data()).0).abs();

    let disc_a = prep.cfg.discrepancy.resolve(prep.train_a.points())?;
    let disc_b = prep.discrepancy()?;
    let (perms, level) = (prep.cfg.score.permutations, prep.cfg.score.level);
    let mut rng = Rng::new(prep.seed, STREAM_COHERENCE);
    let held_a = prep
        .train_a
        .points()
        .select_rows(&(0..xa.rows().min(prep.train_a.len())).collect::<Vec<_>>());
    report.start_test = Some(permutation_test(
        &disc_a,
        &traj.positions[0],
        &held_a,
        perms,
        level,
        &mut rng,
    )?);
    report.end_test = Some(permutation_test(
        &disc_b,
        traj.output(),
        yb,
        perms,
        level,
        &mut rng,
    )?);

    let mut csv = csv_row(DYNAMICS_COLUMNS);
    for s in &report.steps {
        csv.push_str(&csv_row([
            s.k.to_string(),
            fmt_f64(s.t),
            fmt_f64(s.flow_mean),
            fmt_f64(s.flow_std),
            fmt_f64(s.mccann_mean),
            fmt_f64(s.mccann_std),
        ]));
    }
    write_file(out, "dynamics.csv", &csv)?;
    write_file(out, "dynamics.json", &to_json(&report)?)?;
    write_file(
        out,
        "dynamics.svg",
        &plots::dynamics(&flow_samples, &oracle_samples, prep.cfg.dynamics.bins),
    )?;
    Ok(report)
}

// ------------------------------------------------------------- illposed

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IllposedRow {
    pub theta: f64,
    pub expected_cost: f64,
    pub sample_cost: f64,
    pub sample_se: f64,
    pub within_3se: bool,
    pub inverse_error: f64,
    pub coherence: PermutationTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IllposedReport {
    pub status: RunStatus,
    pub config_hash: String,
    pub rows: Vec<IllposedRow>,
    pub all_coherent: bool,
    pub all_within_3se: bool,
    /// Grid angle with the smallest sampled cost.
    pub argmin_theta: f64,
}

pub const ILLPOSED_COLUMNS: [&str; 8] = [
    "theta",
    "expected_cost",
    "sample_cost",
    "sample_se",
    "discrepancy",
    "threshold",
    "pass",
    "inverse_error",
];

/// Sweeps `T_θ = G_β⁻¹ R_θ G_α` over an even θ grid on `[0, 2π)`.
/// Writes `illposed.csv`, `scores.json` and `illposed.svg`.
pub fn run_illposed_demo(cfg: &ExperimentConfig, out: &Path) -> Result<IllposedReport> {
    let prep = Prepared::new(cfg, cfg.seeds[0])?;
    let (ga, gb) = prep
        .cfg
        .dataset
        .gaussian_params()
        .ok_or_else(|| Error::Config("the illposed demo needs a Gaussian dataset".into()))?;
    if ga.dim() < 2 {
        return Err(Error::Config(
            "the illposed demo needs at least two dimensions".into(),
        ));
    }
    let (xa, yb) = (prep.alpha.points(), prep.beta.points());
    let disc = prep.cfg.discrepancy.resolve(yb)?;
    let grid = prep.cfg.illposed.grid;
    let mut rows = Vec::with_capacity(grid);
    for j in 0..grid {
        let theta = std::f64::consts::TAU * j as f64 / grid as f64;
        let map = illposed_construct(&ga, &gb, theta)?;
        let image = map.forward(xa)?;
        let mut rng = Rng::for_run(prep.seed, STREAM_ILLPOSED + j as u64);
        let coherence = permutation_test(
            &disc,
            &image,
            yb,
            prep.cfg.score.permutations,
            prep.cfg.score.level,
            &mut rng,
        )?;
        let expected_cost = map.expected_cost()?;
        let (sample_cost, sample_se) = map.sample_cost(xa)?;
        let inverse_error = map.inverse(&image)?.sub(xa)?.max_abs();
        rows.push(IllposedRow {
            theta,
            expected_cost,
            sample_cost,
            sample_se,
            within_3se: (sample_cost - expected_cost).abs() <= 3.0 * sample_se,
            inverse_error,
            coherence,
        });
    }
    let argmin_theta = rows
        .iter()
        .min_by(|a, b| a.sample_cost.total_cmp(&b.sample_cost))
        .map(|r| r.theta)
        .unwrap_or(0.0);
    let report = IllposedReport {
        status: RunStatus::Ok,
        config_hash: prep.hash.clone(),
        all_coherent: rows.iter().all(|r| r.coherence.pass),
        all_within_3se: rows.iter().all(|r| r.within_3se),
        argmin_theta,
        rows,
    };
    let mut csv = csv_row(ILLPOSED_COLUMNS);
    for r in &report.rows {
        csv.push_str(&csv_row([
            fmt_f64(r.theta),
            fmt_f64(r.expected_cost),
            fmt_f64(r.sample_cost),
            fmt_f64(r.sample_se),
            fmt_f64(r.coherence.statistic),
            fmt_f64(r.coherence.threshold),
            r.coherence.pass.to_string(),
            fmt_f64(r.inverse_error),
        ]));
    }
    write_file(out, "illposed.csv", &csv)?;
    write_file(out, "scores.json", &to_json(&report)?)?;
    write_file(out, "illposed.svg", &plots::illposed(&report))?;
    Ok(report)
}
