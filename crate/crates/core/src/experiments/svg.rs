//! Small deterministic SVG writer: scatter, polyline and histogram layers on
//! a shared linear axis box. Every coordinate is printed with three decimals.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;

pub const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#7f7f7f",
];

#[derive(Clone, Debug)]
enum Layer {
    Points {
        xy: Vec<(f64, f64)>,
        color: String,
        radius: f64,
    },
    Line {
        xy: Vec<(f64, f64)>,
        color: String,
        width: f64,
        opacity: f64,
    },
    Bars {
        edges: Vec<f64>,
        heights: Vec<f64>,
        color: String,
        opacity: f64,
    },
}

#[derive(Clone, Debug)]
pub struct Figure {
    title: String,
    x_label: String,
    y_label: String,
    layers: Vec<Layer>,
    legend: Vec<(String, String)>,
}

fn n3(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    // avoid "-0.000"
    format!("{:.3}", if r == 0.0 { 0.0 } else { r })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Figure {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Figure {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            layers: Vec::new(),
            legend: Vec::new(),
        }
    }

    pub fn scatter(&mut self, xy: Vec<(f64, f64)>, color: &str, radius: f64) -> &mut Self {
        self.layers.push(Layer::Points {
            xy,
            color: color.to_string(),
            radius,
        });
        self
    }

    pub fn polyline(
        &mut self,
        xy: Vec<(f64, f64)>,
        color: &str,
        width: f64,
        opacity: f64,
    ) -> &mut Self {
        self.layers.push(Layer::Line {
            xy,
            color: color.to_string(),
            width,
            opacity,
        });
        self
    }

    /// Bars over `edges.len() - 1` bins.
    pub fn histogram(
        &mut self,
        edges: Vec<f64>,
        heights: Vec<f64>,
        color: &str,
        opacity: f64,
    ) -> &mut Self {
        assert_eq!(
            edges.len(),
            heights.len() + 1,
            "histogram needs one more edge than bins"
        );
        self.layers.push(Layer::Bars {
            edges,
            heights,
            color: color.to_string(),
            opacity,
        });
        self
    }

    pub fn legend(&mut self, label: &str, color: &str) -> &mut Self {
        self.legend.push((label.to_string(), color.to_string()));
        self
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        let mut take = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        };
        for layer in &self.layers {
            match layer {
                Layer::Points { xy, .. } | Layer::Line { xy, .. } => {
                    xy.iter().for_each(|&(x, y)| take(x, y))
                }
                Layer::Bars { edges, heights, .. } => {
                    for (i, h) in heights.iter().enumerate() {
                        take(edges[i], 0.0);
                        take(edges[i + 1], *h);
                    }
                }
            }
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            let span = if hi > lo { hi - lo } else { 1.0 };
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        (x0, x1, y0, y1)
    }

    pub fn render(&self) -> String {
        self.render_with(&format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = WIDTH,
            h = HEIGHT
        ))
    }

    fn render_with(&self, header: &str) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let mut out = String::new();
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black" stroke-width="1"/>"#,
            n3(WIDTH - 2.0 * MARGIN),
            n3(HEIGHT - 2.0 * MARGIN),
            m = n3(MARGIN)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            n3(WIDTH / 2.0),
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            n3(WIDTH / 2.0),
            n3(HEIGHT - 10.0),
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {y})">{}</text>"#,
            escape(&self.y_label),
            y = n3(HEIGHT / 2.0)
        );
        for (lo, hi, horizontal) in [(x0, x1, true), (y0, y1, false)] {
            for i in 0..=4 {
                let v = lo + (hi - lo) * i as f64 / 4.0;
                let label = format!("{:.2}", if v.abs() < 5e-3 { 0.0 } else { v });
                if horizontal {
                    let _ = writeln!(
                        out,
                        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{label}</text>"#,
                        n3(sx(v)),
                        n3(HEIGHT - MARGIN + 14.0)
                    );
                } else {
                    let _ = writeln!(
                        out,
                        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{label}</text>"#,
                        n3(MARGIN - 4.0),
                        n3(sy(v) + 3.0)
                    );
                }
            }
        }
        for layer in &self.layers {
            match layer {
                Layer::Bars {
                    edges,
                    heights,
                    color,
                    opacity,
                } => {
                    for (i, h) in heights.iter().enumerate() {
                        let (l, r) = (sx(edges[i]), sx(edges[i + 1]));
                        let (top, base) = (sy(*h), sy(0.0));
                        let _ = writeln!(
                            out,
                            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="{}"/>"#,
                            n3(l),
                            n3(top),
                            n3(r - l),
                            n3(base - top),
                            n3(*opacity)
                        );
                    }
                }
                Layer::Line {
                    xy,
                    color,
                    width,
                    opacity,
                } => {
                    let pts: Vec<String> = xy
                        .iter()
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .map(|&(x, y)| format!("{},{}", n3(sx(x)), n3(sy(y))))
                        .collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{}" stroke-opacity="{}"/>"#,
                        pts.join(" "),
                        n3(*width),
                        n3(*opacity)
                    );
                }
                Layer::Points { xy, color, radius } => {
                    for &(x, y) in xy.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                        let _ = writeln!(
                            out,
                            r#"<circle cx="{}" cy="{}" r="{}" fill="{color}"/>"#,
                            n3(sx(x)),
                            n3(sy(y)),
                            n3(*radius)
                        );
                    }
                }
            }
        }
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = MARGIN + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#,
                n3(WIDTH - MARGIN - 120.0),
                n3(y - 9.0)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
                n3(WIDTH - MARGIN - 104.0),
                n3(y),
                escape(label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Lays figures out row by row, `cols` per row, in one document.
pub fn grid(figures: &[Figure], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = figures.len().div_ceil(cols).max(1);
    let (w, h) = (WIDTH * cols as f64, HEIGHT * rows as f64);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    for (i, f) in figures.iter().enumerate() {
        let (x, y) = (WIDTH * (i % cols) as f64, HEIGHT * (i / cols) as f64);
        out.push_str(&f.render_with(&format!(
            r#"<svg x="{x}" y="{y}" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        )));
    }
    out.push_str("</svg>\n");
    out
}

/// Equal-width bin edges over `[lo, hi]` and densities of `values`.
pub fn histogram_density(values: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0.0; bins];
    for &v in values {
        if v.is_finite() && v >= lo && v <= hi {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1.0;
        }
    }
    let total = values.len().max(1) as f64;
    let heights = counts.iter().map(|c| c / (total * width)).collect();
    (edges, heights)
}
