//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! exits non-zero if any criterion fails. Positional arguments select
//! criteria by id (`C2`, `c7`, ...).

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dont_core::costs::{dynamic_cost, CostSpec};
use dont_core::discrepancy::{Discrepancy, SinkhornParams};
use dont_core::experiments::presets::preset;
use dont_core::experiments::runners::{
    execute, run_1d_dynamics, run_gain_sweep, run_illposed_demo, Execution,
};
use dont_core::experiments::{ExperimentConfig, RunOptions, RunStatus};
use dont_core::flow::{Checkpoint, FlowModel};
use dont_core::measures::EmpiricalMeasure;
use dont_core::numerics::{Rng, Tensor};
use dont_core::oracles::{ot_1d, ot_exact_points};
use dont_core::training::{penalized_loss, penalized_loss_and_grad};
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Models trained by earlier criteria, re-examined by the cost chain check.
#[derive(Default)]
struct Trained {
    runs: Vec<(String, Execution)>,
}

impl Trained {
    fn keep(&mut self, name: &str, exec: Execution) -> &Execution {
        self.runs.push((name.to_string(), exec));
        &self.runs.last().unwrap().1
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> std::result::Result<Execution, String> {
    let dir = tmp();
    execute(cfg, dir.path(), opts).map_err(fail)
}

fn within(elapsed: Duration, limit_s: u64) -> (bool, String) {
    (
        elapsed.as_secs_f64() < limit_s as f64,
        format!("{:.1}s < {limit_s}s", elapsed.as_secs_f64()),
    )
}

// 1. Analytic gradients of the penalized loss against central differences.
fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024, 0);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let d = 1 + rng.below(4);
        let k = 1 + rng.below(4);
        let h = 2 + rng.below(7);
        let n = 4 + rng.below(13);
        let gain = 0.3 + rng.uniform();
        let model = FlowModel::init(d, k, h, gain, &mut rng).map_err(fail)?;
        let x =
            Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).map_err(fail)?;
        let y = Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| 1.0 + 0.7 * rng.normal()).collect(),
        )
        .map_err(fail)?;
        let p = [2.0, 3.0][case % 2];
        let weights: Vec<f64> = (0..d).map(|_| 0.5 + rng.uniform()).collect();
        let cost = CostSpec::weighted(p, weights).map_err(fail)?;
        let disc = match case % 3 {
            0 => Discrepancy::Mmd {
                bandwidths: vec![0.5, 1.0, 2.0],
            },
            1 => Discrepancy::Energy,
            _ => Discrepancy::Sinkhorn(SinkhornParams {
                epsilon: 1.0,
                max_iterations: 20000,
                tolerance: 1e-13,
                debiased: true,
            }),
        };
        let lambda = 0.05 + rng.uniform();
        let (_, grads) =
            penalized_loss_and_grad(&model, &x, &y, &cost, &disc, lambda).map_err(fail)?;

        let step = 1e-5;
        let mut fd = Vec::new();
        let mut analytic = Vec::new();
        let mut shapes = Vec::new();
        model
            .clone()
            .for_each_parameter_mut(|_, t| shapes.push(t.len()));
        for (slot, len) in shapes.iter().enumerate() {
            for j in 0..*len {
                let eval = |delta: f64| -> f64 {
                    let mut m = model.clone();
                    let mut s = 0;
                    m.for_each_parameter_mut(|_, t| {
                        if s == slot {
                            t.data_mut()[j] += delta;
                        }
                        s += 1;
                    });
                    penalized_loss(&m, &x, &y, &cost, &disc, lambda).expect("loss")
                };
                fd.push((eval(step) - eval(-step)) / (2.0 * step));
                analytic.push(grads[slot].data()[j]);
            }
        }
        let diff: f64 = fd
            .iter()
            .zip(&analytic)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = fd
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(analytic.iter().map(|v| v * v).sum::<f64>().sqrt());
        let rel = diff / norm.max(1e-12);
        worst = worst.max(rel);
    }
    let (fast, t) = within(start.elapsed(), 30);
    check(
        worst <= 1e-4 && fast,
        format!("worst relative error {worst:.2e} over 20 configurations, {t}"),
    )
}

fn bootstrap_delta(eval_a: &EmpiricalMeasure, eval_b: &EmpiricalMeasure, reference: f64) -> f64 {
    let n = eval_a.len();
    let mut rng = Rng::new(99, 1);
    let costs: Vec<f64> = (0..200)
        .map(|_| {
            let ia: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            let ib: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            ot_1d(&eval_a.subset(&ia), &eval_b.subset(&ib), 2.0)
                .unwrap()
                .cost
        })
        .collect();
    let m = costs.iter().sum::<f64>() / costs.len() as f64;
    let sd =
        (costs.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (costs.len() - 1) as f64).sqrt();
    3.0 * sd / reference
}

// 2. The learned 1-D map reaches the closed-form optimum.
fn c2_gaussian(trained: &mut Trained) -> Outcome {
    let start = Instant::now();
    let cfg = preset("gaussian_1d").map_err(fail)?;
    let exec = run(&cfg, &RunOptions::default())?;
    let elapsed = start.elapsed();
    let model = exec.model.as_ref().ok_or("training diverged")?;
    let traj = model.trajectory(exec.prep.eval_a.points()).map_err(fail)?;
    let c = dynamic_cost(&traj, &exec.prep.cost).map_err(fail)?;
    let w2 = 9.25;
    let delta = bootstrap_delta(&exec.prep.eval_a, &exec.prep.eval_b, w2);
    let (lo, hi) = (w2 * (1.0 - delta), w2 * 1.15);

    let normal = Normal::new(0.0, 1.0).unwrap();
    let q: Vec<f64> = (1..=99)
        .map(|i| normal.inverse_cdf(i as f64 / 100.0))
        .collect();
    let grid = Tensor::new(vec![q.len(), 1], q.clone()).map_err(fail)?;
    let image = model.transport(&grid).map_err(fail)?;
    let rmse = (q
        .iter()
        .zip(image.data())
        .map(|(x, y)| (y - (3.0 + 0.5 * x)).powi(2))
        .sum::<f64>()
        / q.len() as f64)
        .sqrt();
    let (fast, t) = within(elapsed, 180);
    let ok = (lo..=hi).contains(&c) && rmse <= 0.1 && fast && exec.report.status == RunStatus::Ok;
    trained.keep("gaussian_1d", exec);
    check(
        ok,
        format!("C_d {c:.4} in [{lo:.4}, {hi:.4}], quantile RMSE {rmse:.4} <= 0.1, {t}"),
    )
}

// 3. dynamic >= static >= exact OT between the evaluation batch and its image.
fn c3_chain(trained: &mut Trained) -> Outcome {
    if trained.runs.is_empty() {
        let mut cfg = preset("shift").map_err(fail)?;
        cfg.train.iterations = 300;
        trained.keep("shift (short)", run(&cfg, &RunOptions::default())?);
    }
    let slack = 1e-9;
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, exec) in &trained.runs {
        let Some(model) = &exec.model else { continue };
        let x = exec.prep.eval_a.points();
        let traj = model.trajectory(x).map_err(fail)?;
        let image = traj.output();
        let c_dyn = dynamic_cost(&traj, &exec.prep.cost).map_err(fail)?;
        let mut c_static = 0.0;
        for i in 0..x.rows() {
            c_static += exec
                .prep
                .cost
                .ground_cost(x.row(i), image.row(i))
                .map_err(fail)?;
        }
        c_static /= x.rows() as f64;
        let c_ot = ot_exact_points(x, image, &exec.prep.cost)
            .map_err(fail)?
            .cost;
        let holds = c_dyn >= c_static - slack && c_static >= c_ot - slack;
        ok &= holds;
        lines.push(format!("{name}: {c_dyn:.4} >= {c_static:.4} >= {c_ot:.4}"));
    }
    check(ok && !lines.is_empty(), lines.join("; "))
}

fn round_trip(model: &FlowModel, x: &Tensor, exact: bool) -> std::result::Result<f64, String> {
    let y = model.transport(x).map_err(fail)?;
    let back = if exact {
        model.reverse_exact(&y)
    } else {
        model.reverse(&y)
    }
    .map_err(fail)?;
    let diff = back.sub(x).map_err(fail)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / diff.len() as f64)
}

// 4. Reverse-mode inversion improves with K; the fixed-point inverse is exact.
fn c4_inversion(trained: &mut Trained) -> Outcome {
    let mut base = preset("gaussian_1d").map_err(fail)?;
    base.train.iterations = 1500;
    let mut results = Vec::new();
    for k in [4usize, 32] {
        let mut cfg = base.clone();
        cfg.flow.steps = k;
        let exec = run(
            &cfg,
            &RunOptions {
                exact_inverse: true,
                jobs: 1,
            },
        )?;
        let model = exec.model.as_ref().ok_or("training diverged")?;
        let x = exec.prep.eval_a.points();
        let explicit = round_trip(model, x, false)?;
        let exact = round_trip(model, x, true)?;
        let reported = exec
            .report
            .round_trip
            .as_ref()
            .map(|r| r.mse)
            .unwrap_or(f64::NAN);
        results.push((k, explicit, exact, reported));
        trained.keep(&format!("gaussian_1d K={k}"), exec);
    }
    let (_, e4, x4, r4) = results[0];
    let (_, e32, x32, r32) = results[1];
    let ok = e32 < e4 && x4 <= 1e-12 && x32 <= 1e-12 && r4 <= 1e-12 && r32 <= 1e-12;
    check(
        ok,
        format!("explicit MSE K=4 {e4:.3e} > K=32 {e32:.3e}; exact MSE {x4:.1e}, {x32:.1e}"),
    )
}

// 5. Per-step means follow the displacement interpolation.
fn c5_geodesic() -> Outcome {
    let cfg = preset("dynamics_1d").map_err(fail)?;
    let dir = tmp();
    let report = run_1d_dynamics(&cfg, dir.path(), &RunOptions::default()).map_err(fail)?;
    let bound = 0.15 * report.mean_shift;
    let mut worst: f64 = 0.0;
    for s in &report.steps {
        worst = worst.max((s.flow_mean - s.mccann_mean).abs());
    }
    let end_ok = report.end_test.as_ref().is_some_and(|t| t.pass);
    check(
        report.status == RunStatus::Ok && report.steps.len() == 6 && worst <= bound && end_ok,
        format!(
            "max |flow mean - geodesic mean| {worst:.4} <= {bound:.4} over {} steps, final step coherent: {end_ok}",
            report.steps.len()
        ),
    )
}

// 6. Cluster translation tasks recover the minimal-cost pairing.
fn c6_clusters(trained: &mut Trained) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, need) in [("shift", 0.95), ("shift_rotate", 0.90)] {
        let exec = run(&preset(name).map_err(fail)?, &RunOptions::default())?;
        let score = exec.report.semantic.get("oracle").copied().unwrap_or(0.0);
        ok &= score >= need;
        parts.push(format!("{name} {score:.3} >= {need}"));
        trained.keep(name, exec);
    }
    check(ok, parts.join(", "))
}

// 7. Plain cost solves the class swap; the masked cost solves the position swap.
fn c7_digits(trained: &mut Trained) -> Outcome {
    let start = Instant::now();
    let plain = run(
        &preset("digit_swap_plain").map_err(fail)?,
        &RunOptions::default(),
    )?;
    let masked = run(
        &preset("digit_swap_masked").map_err(fail)?,
        &RunOptions::default(),
    )?;
    let s = |e: &Execution, k: &str| e.report.semantic.get(k).copied().unwrap_or(0.0);
    let (pc, pp, mp) = (
        s(&plain, "class_swap"),
        s(&plain, "position_swap"),
        s(&masked, "position_swap"),
    );
    let selected = masked
        .report
        .mask
        .as_ref()
        .map(|m| m.selected.clone())
        .unwrap_or_default();
    let (fast, t) = within(start.elapsed(), 300);
    let ok = pc >= 0.9 && pp <= 0.1 && mp >= 0.9 && selected == vec![0] && fast;
    trained.keep("digit_swap_plain", plain);
    trained.keep("digit_swap_masked", masked);
    check(
        ok,
        format!("plain class {pc:.3} / position {pp:.3}; mask selects {selected:?}, masked position {mp:.3}; {t}"),
    )
}

// 8. A circle of coherent invertible maps with cost 4 (1 - cos θ).
fn c8_illposed() -> Outcome {
    let cfg = preset("illposed").map_err(fail)?;
    let dir = tmp();
    let report = run_illposed_demo(&cfg, dir.path()).map_err(fail)?;
    let mut ok = report.rows.len() == 12;
    let mut worst_band: f64 = 0.0;
    for r in &report.rows {
        let expected = 4.0 * (1.0 - r.theta.cos());
        ok &= (r.expected_cost - expected).abs() < 1e-9;
        ok &= (r.sample_cost - expected).abs() <= 3.0 * r.sample_se + 1e-12;
        ok &= r.coherence.pass && r.inverse_error < 1e-9;
        if r.sample_se > 0.0 {
            worst_band = worst_band.max((r.sample_cost - expected).abs() / r.sample_se);
        }
    }
    let argmin = report
        .rows
        .iter()
        .min_by(|a, b| a.sample_cost.total_cmp(&b.sample_cost))
        .map(|r| r.theta)
        .unwrap_or(f64::NAN);
    ok &= argmin == 0.0;
    let passed = report.rows.iter().filter(|r| r.coherence.pass).count();
    check(
        ok,
        format!("{passed}/12 coherent, max deviation {worst_band:.2} se (limit 3), minimum at theta = {argmin}"),
    )
}

fn spearman_no_ties(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// 9. Initialization gain biases the cycle baseline but not DONT.
fn c9_gain() -> Outcome {
    let start = Instant::now();
    let cfg = preset("gain_sweep").map_err(fail)?;
    let dir = tmp();
    run_gain_sweep(&cfg, dir.path(), &RunOptions::default()).map_err(fail)?;
    let elapsed = start.elapsed();
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).map_err(fail)?;
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let gains = cfg.sweep.as_ref().unwrap().gains.clone();
    let medians = |method: &str, metric: &str, stage: &str| -> Vec<f64> {
        gains
            .iter()
            .map(|g| {
                median_of(
                    rows.iter()
                        .filter(|r| {
                            r[0].parse::<f64>().unwrap() == *g
                                && r[2] == method
                                && r[3] == metric
                                && r[4] == stage
                        })
                        .map(|r| r[5].parse::<f64>().unwrap())
                        .collect(),
                )
            })
            .collect()
    };
    let cycle = medians("cycle", "pairing_loss", "final");
    let dont = medians("dont", "pairing_loss", "final");
    let rho = spearman_no_ties(&gains, &cycle);
    let ratio = dont.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        / dont.iter().cloned().fold(f64::INFINITY, f64::min);
    let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    let t_cycle = increasing(&medians("cycle", "transport_cost", "init"));
    let t_dont = increasing(&medians("dont", "transport_cost", "init"));
    let (fast, t) = within(elapsed, 1200);
    check(
        rho >= 0.8 && ratio <= 2.0 && t_cycle && t_dont && fast,
        format!(
            "cycle Spearman {rho:.2} >= 0.8, DONT max/min {ratio:.2} <= 2, initial transport increasing {t_cycle}/{t_dont}, {t}"
        ),
    )
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> std::result::Result<Vec<String>, String> {
    let mut differing = Vec::new();
    for name in names {
        let x = fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if x != y {
            differing.push(name.to_string());
        }
    }
    Ok(differing)
}

// 10. Byte-identical artifacts and bit-exact checkpoints.
fn c10_determinism() -> Outcome {
    let mut cfg = preset("shift").map_err(fail)?;
    cfg.train.iterations = 200;
    let (a, b) = (tmp(), tmp());
    let ea = execute(&cfg, a.path(), &RunOptions::default()).map_err(fail)?;
    execute(&cfg, b.path(), &RunOptions::default()).map_err(fail)?;
    let files = [
        "metrics.csv",
        "scores.json",
        "checkpoint.json",
        "scatter.svg",
        "trajectories.svg",
    ];
    let mut differing = same_files(a.path(), b.path(), &files)?;

    let ill = preset("illposed").map_err(fail)?;
    run_illposed_demo(&ill, a.path()).map_err(fail)?;
    run_illposed_demo(&ill, b.path()).map_err(fail)?;
    differing.extend(same_files(
        a.path(),
        b.path(),
        &["illposed.csv", "illposed.svg", "scores.json"],
    )?);

    let text = fs::read_to_string(a.path().join("checkpoint.json")).map_err(fail)?;
    let restored =
        FlowModel::from_checkpoint(&Checkpoint::from_json(&text).map_err(fail)?).map_err(fail)?;
    let model = ea.model.as_ref().ok_or("training diverged")?;
    let x = ea.prep.eval_a.points();
    let (y1, y2) = (
        model.transport(x).map_err(fail)?,
        restored.transport(x).map_err(fail)?,
    );
    let bit_exact = y1
        .data()
        .iter()
        .zip(y2.data())
        .all(|(p, q)| p.to_bits() == q.to_bits());
    check(
        differing.is_empty() && bit_exact,
        format!(
            "{} artifacts compared, differing: {:?}; checkpoint round trip bit-exact: {bit_exact}",
            files.len() + 3,
            differing
        ),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_uppercase())
        .collect();
    let selected = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);
    let mut trained = Trained::default();
    let mut failures = 0;
    let mut report = |id: &str, title: &str, outcome: Outcome| match &outcome {
        Ok(detail) => println!("[PASS] {id} {title}: {detail}"),
        Err(detail) => {
            failures += 1;
            println!("[FAIL] {id} {title}: {detail}");
        }
    };
    if selected("C1") {
        report("C1", "gradient integrity", c1_gradients());
    }
    if selected("C2") {
        report("C2", "1-D Gaussian optimality", c2_gaussian(&mut trained));
    }
    if selected("C4") {
        report("C4", "inversion", c4_inversion(&mut trained));
    }
    if selected("C5") {
        report("C5", "geodesic interpolation", c5_geodesic());
    }
    if selected("C6") {
        report("C6", "cluster pairing", c6_clusters(&mut trained));
    }
    if selected("C7") {
        report("C7", "digit-swap analog", c7_digits(&mut trained));
    }
    if selected("C3") {
        report("C3", "lower-bound chain", c3_chain(&mut trained));
    }
    if selected("C8") {
        report("C8", "ill-posedness", c8_illposed());
    }
    if selected("C9") {
        report("C9", "initialization gain study", c9_gain());
    }
    if selected("C10") {
        report("C10", "determinism and formats", c10_determinism());
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
