//! Figures written by the runners.

use super::runners::{IllposedReport, Prepared, SweepSummary};
use super::svg::{grid, histogram_density, Figure, PALETTE};
use crate::flow::Trajectory;
use crate::numerics::Tensor;

/// Points drawn per cloud; pairing lines use the first `MAX_LINES`.
const MAX_POINTS: usize = 400;
const MAX_LINES: usize = 120;

fn coords(t: &Tensor, i: usize) -> (f64, f64) {
    let row = t.row(i);
    (row[0], if row.len() > 1 { row[1] } else { 0.0 })
}

/// Inputs, outputs, targets and the pairing lines `x → T(x)`.
pub fn scatter(prep: &Prepared, image: &Tensor) -> String {
    let (xa, yb) = (prep.eval_a.points(), prep.eval_b.points());
    let one_d = xa.cols() == 1;
    // 1-D clouds are drawn on three horizontal rails
    let place = |t: &Tensor, i: usize, rail: f64| {
        let (x, y) = coords(t, i);
        if one_d {
            (x, rail)
        } else {
            (x, y)
        }
    };
    let mut f = Figure::new(
        "inputs, outputs and targets",
        "x0",
        if one_d { "" } else { "x1" },
    );
    for i in 0..xa.rows().min(MAX_LINES) {
        f.polyline(
            vec![place(xa, i, 0.0), place(image, i, 1.0)],
            PALETTE[5],
            0.6,
            0.5,
        );
    }
    let n = xa.rows().min(MAX_POINTS);
    f.scatter((0..n).map(|i| place(xa, i, 0.0)).collect(), PALETTE[0], 2.0)
        .scatter(
            (0..yb.rows().min(MAX_POINTS))
                .map(|i| place(yb, i, 1.1))
                .collect(),
            PALETTE[2],
            2.0,
        )
        .scatter(
            (0..n).map(|i| place(image, i, 1.0)).collect(),
            PALETTE[1],
            2.0,
        )
        .legend("alpha", PALETTE[0])
        .legend("T(alpha)", PALETTE[1])
        .legend("beta", PALETTE[2]);
    f.render()
}

/// Per-step positions; in 1-D plotted against time.
pub fn trajectories(traj: &Trajectory) -> String {
    let k = traj.steps();
    let x0 = &traj.positions[0];
    let one_d = x0.cols() == 1;
    let n = x0.rows().min(MAX_LINES);
    let mut f = if one_d {
        Figure::new("trajectories", "t", "x")
    } else {
        Figure::new("trajectories", "x0", "x1")
    };
    for i in 0..n {
        let path = traj
            .positions
            .iter()
            .enumerate()
            .map(|(s, p)| {
                if one_d {
                    (s as f64 / k as f64, p.row(i)[0])
                } else {
                    coords(p, i)
                }
            })
            .collect();
        f.polyline(path, PALETTE[5], 0.7, 0.6);
    }
    if !one_d {
        for (s, p) in traj.positions.iter().enumerate() {
            let color = if s == 0 {
                PALETTE[0]
            } else if s == k {
                PALETTE[1]
            } else {
                PALETTE[4]
            };
            f.scatter((0..n).map(|i| coords(p, i)).collect(), color, 1.5);
        }
        f.legend("step 0", PALETTE[0]).legend("step K", PALETTE[1]);
    }
    f.render()
}

/// One panel per step: flow histogram and the McCann marginal outline.
pub fn dynamics(flow: &[Vec<f64>], oracle: &[Vec<f64>], bins: usize) -> String {
    let all = flow
        .iter()
        .chain(oracle)
        .flatten()
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let k = flow.len().saturating_sub(1).max(1);
    let figures: Vec<Figure> = flow
        .iter()
        .zip(oracle)
        .enumerate()
        .map(|(s, (fv, ov))| {
            let mut f = Figure::new(
                &format!("step {s} (t = {:.2})", s as f64 / k as f64),
                "x",
                "density",
            );
            let (edges, heights) = histogram_density(fv, lo, hi, bins);
            f.histogram(edges, heights, PALETTE[0], 0.5);
            let (edges, heights) = histogram_density(ov, lo, hi, bins);
            let mut outline = Vec::with_capacity(2 * bins + 2);
            outline.push((edges[0], 0.0));
            for (i, h) in heights.iter().enumerate() {
                outline.push((edges[i], *h));
                outline.push((edges[i + 1], *h));
            }
            outline.push((edges[bins], 0.0));
            f.polyline(outline, PALETTE[3], 1.5, 1.0)
                .legend("flow", PALETTE[0])
                .legend("geodesic", PALETTE[3]);
            f
        })
        .collect();
    grid(&figures, 3)
}

pub fn sweep(summary: &SweepSummary) -> String {
    let mut pairing = Figure::new(
        "pairing loss at convergence (median)",
        "gain",
        "pairing loss",
    );
    let mut transport = Figure::new("transport cost at init (median)", "gain", "transport cost");
    for (i, (name, m)) in summary.methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line = |v: &[f64]| {
            summary
                .gains
                .iter()
                .copied()
                .zip(v.iter().copied())
                .collect::<Vec<_>>()
        };
        pairing
            .polyline(line(&m.median_pairing_loss), color, 1.5, 1.0)
            .scatter(line(&m.median_pairing_loss), color, 3.0)
            .legend(name, color);
        transport
            .polyline(line(&m.median_initial_transport), color, 1.5, 1.0)
            .scatter(line(&m.median_initial_transport), color, 3.0)
            .legend(name, color);
    }
    grid(&[pairing, transport], 2)
}

pub fn illposed(report: &IllposedReport) -> String {
    let mut f = Figure::new(
        "transport cost of coherent invertible maps",
        "theta",
        "cost",
    );
    f.polyline(
        report
            .rows
            .iter()
            .map(|r| (r.theta, r.expected_cost))
            .collect(),
        PALETTE[0],
        1.5,
        1.0,
    );
    for r in &report.rows {
        let band = 3.0 * r.sample_se;
        f.polyline(
            vec![
                (r.theta, r.sample_cost - band),
                (r.theta, r.sample_cost + band),
            ],
            PALETTE[1],
            1.0,
            1.0,
        );
    }
    f.scatter(
        report
            .rows
            .iter()
            .map(|r| (r.theta, r.sample_cost))
            .collect(),
        PALETTE[1],
        3.0,
    )
    .legend("expected", PALETTE[0])
    .legend("sampled (3 se)", PALETTE[1]);
    f.render()
}
