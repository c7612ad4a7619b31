//! Empirical measures and the toy dataset generators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::numerics::{linalg, Rng, Tensor};

/// A uniformly weighted cloud of `N` points in `R^d`, with optional integer
/// label columns used only for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Tensor,
    labels: BTreeMap<String, Vec<i64>>,
}

impl EmpiricalMeasure {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.shape().len() != 2 || points.rows() == 0 || points.cols() == 0 {
            return Err(Error::invalid(format!(
                "a measure needs an N x d point matrix with N, d >= 1, got {:?}",
                points.shape()
            )));
        }
        if !points.all_finite() {
            return Err(Error::invalid("measure contains non-finite coordinates"));
        }
        Ok(EmpiricalMeasure {
            points,
            labels: BTreeMap::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        EmpiricalMeasure::new(Tensor::from_rows(rows)?)
    }

    pub fn with_label(mut self, name: &str, values: Vec<i64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!(
                "label `{name}` has {} entries for {} points",
                values.len(),
                self.len()
            )));
        }
        self.labels.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn labels(&self) -> &BTreeMap<String, Vec<i64>> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Option<&[i64]> {
        self.labels.get(name).map(Vec::as_slice)
    }

    /// Same labels, new coordinates (e.g. the image of the cloud under a map).
    pub fn with_points(&self, points: Tensor) -> Result<Self> {
        if points.rows() != self.len() {
            return Err(Error::DimensionMismatch {
                op: "with_points",
                left: self.points.shape().to_vec(),
                right: points.shape().to_vec(),
            });
        }
        let mut m = EmpiricalMeasure::new(points)?;
        m.labels = self.labels.clone();
        Ok(m)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        EmpiricalMeasure {
            points: self.points.select_rows(indices),
            labels: self
                .labels
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// Splits off the last `tail` points: `(head, tail)`.
    pub fn split_tail(&self, tail: usize) -> Result<(Self, Self)> {
        if tail == 0 || tail >= self.len() {
            return Err(Error::invalid(format!(
                "cannot hold out {tail} of {} points",
                self.len()
            )));
        }
        let cut = self.len() - tail;
        let head: Vec<usize> = (0..cut).collect();
        let rest: Vec<usize> = (cut..self.len()).collect();
        Ok((self.subset(&head), self.subset(&rest)))
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim()];
        for i in 0..self.len() {
            for (acc, v) in m.iter_mut().zip(self.point(i)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Sample covariance with the `1/N` normalization.
    pub fn covariance(&self) -> Tensor {
        let d = self.dim();
        let mean = self.mean();
        let mut c = Tensor::zeros(&[d, d]);
        for i in 0..self.len() {
            let p = self.point(i);
            for a in 0..d {
                for b in 0..d {
                    let v = c.get(a, b) + (p[a] - mean[a]) * (p[b] - mean[b]);
                    c.set(a, b, v);
                }
            }
        }
        c.scale(1.0 / self.len() as f64)
    }

    /// CSV with header `x0,...,x{d-1}[,label_*]` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.extend(self.labels.keys().map(|k| format!("label_{k}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            let mut fields: Vec<String> = self.point(i).iter().map(|v| fmt_f64(*v)).collect();
            fields.extend(self.labels.values().map(|v| v[i].to_string()));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty CSV"))?
            .split(',')
            .map(str::trim)
            .collect::<Vec<_>>();
        let mut coord_cols = 0;
        let mut label_names = Vec::new();
        for (i, h) in header.iter().enumerate() {
            if let Some(name) = h.strip_prefix("label_") {
                label_names.push(name.to_string());
            } else if *h == format!("x{i}") && label_names.is_empty() {
                coord_cols += 1;
            } else {
                return Err(Error::invalid(format!("unexpected CSV column `{h}`")));
            }
        }
        let mut data = Vec::new();
        let mut labels: Vec<Vec<i64>> = vec![Vec::new(); label_names.len()];
        let mut rows = 0;
        for (line_no, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != header.len() {
                return Err(Error::invalid(format!(
                    "CSV row {} has {} fields, expected {}",
                    line_no + 2,
                    fields.len(),
                    header.len()
                )));
            }
            for f in &fields[..coord_cols] {
                data.push(
                    f.parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad float `{f}`: {e}")))?,
                );
            }
            for (col, f) in labels.iter_mut().zip(&fields[coord_cols..]) {
                col.push(
                    f.parse::<i64>()
                        .map_err(|e| Error::invalid(format!("bad label `{f}`: {e}")))?,
                );
            }
            rows += 1;
        }
        let mut m = EmpiricalMeasure::new(Tensor::new(vec![rows, coord_cols], data)?)?;
        for (name, values) in label_names.into_iter().zip(labels) {
            m = m.with_label(&name, values)?;
        }
        Ok(m)
    }
}

fn default_centers() -> Vec<[f64; 2]> {
    vec![[-1.0, -0.5], [1.0, -0.5], [0.0, 1.2]]
}

fn default_shift() -> [f64; 2] {
    [4.0, 0.0]
}

fn default_cluster_noise() -> f64 {
    0.15
}

fn default_digit_noise() -> f64 {
    0.05
}

/// Multivariate Gaussian pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub n: usize,
    pub seed: u64,
    pub mean_alpha: Vec<f64>,
    pub cov_alpha: Vec<Vec<f64>>,
    pub mean_beta: Vec<f64>,
    pub cov_beta: Vec<Vec<f64>>,
}

/// Labeled 2-D cluster mixture and its rotated, translated copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftRotateSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_centers")]
    pub centers: Vec<[f64; 2]>,
    #[serde(default = "default_cluster_noise")]
    pub noise: f64,
    #[serde(default)]
    pub angle: f64,
    #[serde(default = "default_shift")]
    pub shift: [f64; 2],
    /// Defaults to the mean of `centers`.
    #[serde(default)]
    pub rotation_center: Option<[f64; 2]>,
}

/// Two-attribute analog of the digit position swap task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DigitSwapSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_digit_noise")]
    pub noise: f64,
}

/// One-dimensional Gaussian pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair1dSpec {
    pub n: usize,
    pub seed: u64,
    pub mean_alpha: f64,
    pub std_alpha: f64,
    pub mean_beta: f64,
    pub std_beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DatasetSpec {
    Gaussian(GaussianSpec),
    ShiftRotate(ShiftRotateSpec),
    DigitSwap(DigitSwapSpec),
    Pair1d(Pair1dSpec),
}

/// Mean and covariance of a Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub cov: Tensor,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, cov: Tensor) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != [d, d] {
            return Err(Error::DimensionMismatch {
                op: "gaussian",
                left: vec![d],
                right: cov.shape().to_vec(),
            });
        }
        linalg::require_pd(&cov)?;
        Ok(GaussianParams { mean, cov })
    }

    pub fn standard(d: usize) -> Self {
        GaussianParams {
            mean: vec![0.0; d],
            cov: Tensor::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `n` iid draws `m + Σ^{1/2} z`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<EmpiricalMeasure> {
        let root = linalg::psd_sqrt(&self.cov)?;
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut z = vec![0.0; d];
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = rng.normal());
            for a in 0..d {
                let mut s = self.mean[a];
                for (b, zb) in z.iter().enumerate() {
                    s += root.get(a, b) * zb;
                }
                data.push(s);
            }
        }
        EmpiricalMeasure::new(Tensor::new(vec![n, d], data)?)
    }
}

impl DatasetSpec {
    pub fn n(&self) -> usize {
        match self {
            DatasetSpec::Gaussian(s) => s.n,
            DatasetSpec::ShiftRotate(s) => s.n,
            DatasetSpec::DigitSwap(s) => s.n,
            DatasetSpec::Pair1d(s) => s.n,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DatasetSpec::Gaussian(s) => s.seed,
            DatasetSpec::ShiftRotate(s) => s.seed,
            DatasetSpec::DigitSwap(s) => s.seed,
            DatasetSpec::Pair1d(s) => s.seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Gaussian(_) => "gaussian",
            DatasetSpec::ShiftRotate(_) => "shift_rotate",
            DatasetSpec::DigitSwap(_) => "digit_swap",
            DatasetSpec::Pair1d(_) => "pair_1d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::Gaussian(s) => s.mean_alpha.len(),
            DatasetSpec::ShiftRotate(_) | DatasetSpec::DigitSwap(_) => 2,
            DatasetSpec::Pair1d(_) => 1,
        }
    }

    /// Closed-form Gaussian parameters of `(α, β)` when the generator is Gaussian.
    pub fn gaussian_params(&self) -> Option<(GaussianParams, GaussianParams)> {
        match self {
            DatasetSpec::Gaussian(s) => {
                let a = GaussianParams::new(
                    s.mean_alpha.clone(),
                    Tensor::from_rows(&s.cov_alpha).ok()?,
                );
                let b =
                    GaussianParams::new(s.mean_beta.clone(), Tensor::from_rows(&s.cov_beta).ok()?);
                Some((a.ok()?, b.ok()?))
            }
            DatasetSpec::Pair1d(s) => Some((
                GaussianParams {
                    mean: vec![s.mean_alpha],
                    cov: Tensor::diag(&[s.std_alpha * s.std_alpha]),
                },
                GaussianParams {
                    mean: vec![s.mean_beta],
                    cov: Tensor::diag(&[s.std_beta * s.std_beta]),
                },
            )),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::invalid(format!(
                "dataset needs n >= 2, got {}",
                self.n()
            )));
        }
        match self {
            DatasetSpec::Gaussian(s) => {
                let params = |m: &[f64], c: &[Vec<f64>]| {
                    GaussianParams::new(m.to_vec(), Tensor::from_rows(c)?)
                };
                let a = params(&s.mean_alpha, &s.cov_alpha)?;
                let b = params(&s.mean_beta, &s.cov_beta)?;
                if a.dim() != b.dim() {
                    return Err(Error::invalid("alpha and beta dimensions differ"));
                }
            }
            DatasetSpec::ShiftRotate(s) => {
                if !(s.noise > 0.0) {
                    return Err(Error::invalid("noise scale must be > 0"));
                }
                if s.centers.is_empty() {
                    return Err(Error::invalid("at least one cluster center is required"));
                }
                if !(0.0..std::f64::consts::TAU).contains(&s.angle) {
                    return Err(Error::invalid(format!("angle {} outside [0, 2π)", s.angle)));
                }
            }
            DatasetSpec::DigitSwap(s) => {
                if !(s.noise > 0.0) {
                    return Err(Error::invalid("noise scale must be > 0"));
                }
                if s.n % 2 != 0 {
                    return Err(Error::invalid("digit swap needs an even n"));
                }
            }
            DatasetSpec::Pair1d(s) => {
                if !(s.std_alpha > 0.0 && s.std_beta > 0.0) {
                    return Err(Error::invalid("standard deviations must be > 0"));
                }
            }
        }
        Ok(())
    }

    /// Draws `(α, β)`. Pure function of the spec.
    pub fn generate(&self) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
        self.validate()?;
        match self {
            DatasetSpec::Gaussian(s) => gen_gaussian(s),
            DatasetSpec::ShiftRotate(s) => gen_shift_rotate(s),
            DatasetSpec::DigitSwap(s) => gen_digit_swap_analog(s),
            DatasetSpec::Pair1d(s) => gen_1d_pair(s),
        }
    }
}

pub fn gen_gaussian(spec: &GaussianSpec) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    let a = GaussianParams::new(spec.mean_alpha.clone(), Tensor::from_rows(&spec.cov_alpha)?)?;
    let b = GaussianParams::new(spec.mean_beta.clone(), Tensor::from_rows(&spec.cov_beta)?)?;
    if a.dim() != b.dim() {
        return Err(Error::invalid("alpha and beta dimensions differ"));
    }
    let mut rng = Rng::new(spec.seed, 0);
    let alpha = a.sample(spec.n, &mut rng)?;
    let beta = b.sample(spec.n, &mut rng)?;
    Ok((alpha, beta))
}

pub fn gen_1d_pair(spec: &Pair1dSpec) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    if !(spec.std_alpha > 0.0 && spec.std_beta > 0.0) {
        return Err(Error::invalid("standard deviations must be > 0"));
    }
    gen_gaussian(&GaussianSpec {
        n: spec.n,
        seed: spec.seed,
        mean_alpha: vec![spec.mean_alpha],
        cov_alpha: vec![vec![spec.std_alpha * spec.std_alpha]],
        mean_beta: vec![spec.mean_beta],
        cov_beta: vec![vec![spec.std_beta * spec.std_beta]],
    })
}

/// α: clusters around `centers`; β: each cluster rotated about the rotation
/// center by `angle` then translated by `shift`, with fresh noise. Point `i`
/// of both clouds belongs to cluster `i mod C` (label `cluster`).
pub fn gen_shift_rotate(spec: &ShiftRotateSpec) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    let c = spec.centers.len();
    let center = spec.rotation_center.unwrap_or_else(|| {
        let mut m = [0.0, 0.0];
        for p in &spec.centers {
            m[0] += p[0] / c as f64;
            m[1] += p[1] / c as f64;
        }
        m
    });
    let (s, co) = spec.angle.sin_cos();
    let rotate = |p: [f64; 2]| {
        let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
        [
            co * dx - s * dy + center[0] + spec.shift[0],
            s * dx + co * dy + center[1] + spec.shift[1],
        ]
    };
    let mut rng = Rng::new(spec.seed, 0);
    let mut a = Vec::with_capacity(spec.n * 2);
    let mut b = Vec::with_capacity(spec.n * 2);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let k = i % c;
        let mu = spec.centers[k];
        a.push(mu[0] + spec.noise * rng.normal());
        a.push(mu[1] + spec.noise * rng.normal());
        let nu = rotate(mu);
        b.push(nu[0] + spec.noise * rng.normal());
        b.push(nu[1] + spec.noise * rng.normal());
        labels.push(k as i64);
    }
    let alpha = EmpiricalMeasure::new(Tensor::new(vec![spec.n, 2], a)?)?
        .with_label("cluster", labels.clone())?;
    let beta =
        EmpiricalMeasure::new(Tensor::new(vec![spec.n, 2], b)?)?.with_label("cluster", labels)?;
    Ok((alpha, beta))
}

/// Cluster centers of the digit swap analog: `(position, class)` labels and
/// coordinates. Coordinate 0 encodes position (±2), coordinate 1 the class
/// signature (±1).
pub const DIGIT_ALPHA: [([i64; 2], [f64; 2]); 2] = [([0, 0], [-2.0, -1.0]), ([1, 1], [2.0, 1.0])];
pub const DIGIT_BETA: [([i64; 2], [f64; 2]); 2] = [([1, 0], [2.0, -1.0]), ([0, 1], [-2.0, 1.0])];

pub fn gen_digit_swap_analog(spec: &DigitSwapSpec) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    if spec.n % 2 != 0 {
        return Err(Error::invalid("digit swap needs an even n"));
    }
    let mut rng = Rng::new(spec.seed, 0);
    let mut draw = |layout: &[([i64; 2], [f64; 2]); 2]| -> Result<EmpiricalMeasure> {
        let mut data = Vec::with_capacity(spec.n * 2);
        let mut position = Vec::with_capacity(spec.n);
        let mut class = Vec::with_capacity(spec.n);
        for i in 0..spec.n {
            let (lab, mu) = layout[i % 2];
            data.push(mu[0] + spec.noise * rng.normal());
            data.push(mu[1] + spec.noise * rng.normal());
            position.push(lab[0]);
            class.push(lab[1]);
        }
        EmpiricalMeasure::new(Tensor::new(vec![spec.n, 2], data)?)?
            .with_label("position", position)?
            .with_label("class", class)
    };
    let alpha = draw(&DIGIT_ALPHA)?;
    let beta = draw(&DIGIT_BETA)?;
    Ok((alpha, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostSpec;

    fn pair(n: usize, seed: u64) -> Pair1dSpec {
        Pair1dSpec {
            n,
            seed,
            mean_alpha: 0.0,
            std_alpha: 1.0,
            mean_beta: 3.0,
            std_beta: 0.5,
        }
    }

    #[test]
    fn gaussian_mean_within_clt_band() {
        let (_, beta) = gen_1d_pair(&pair(1000, 1)).unwrap();
        let m = beta.mean()[0];
        assert!((m - 3.0).abs() < 3.0 * 0.5 / (1000f64).sqrt(), "mean {m}");
    }

    #[test]
    fn zero_covariance_rejected() {
        let spec = GaussianSpec {
            n: 10,
            seed: 0,
            mean_alpha: vec![0.0],
            cov_alpha: vec![vec![0.0]],
            mean_beta: vec![0.0],
            cov_beta: vec![vec![1.0]],
        };
        assert!(gen_gaussian(&spec).is_err());
        let mut p = pair(10, 0);
        p.std_beta = 0.0;
        assert!(gen_1d_pair(&p).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            gen_1d_pair(&pair(50, 9)).unwrap(),
            gen_1d_pair(&pair(50, 9)).unwrap()
        );
        let spec = DatasetSpec::DigitSwap(DigitSwapSpec {
            n: 20,
            seed: 4,
            noise: 0.05,
        });
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
    }

    fn shift_rotate(angle: f64, shift: [f64; 2], n: usize) -> ShiftRotateSpec {
        ShiftRotateSpec {
            n,
            seed: 3,
            centers: default_centers(),
            noise: 0.15,
            angle,
            shift,
            rotation_center: None,
        }
    }

    fn centroids(m: &EmpiricalMeasure) -> Vec<[f64; 2]> {
        let labels = m.label("cluster").unwrap();
        let k = *labels.iter().max().unwrap() as usize + 1;
        let mut sums = vec![[0.0, 0.0, 0.0]; k];
        for i in 0..m.len() {
            let c = labels[i] as usize;
            sums[c][0] += m.point(i)[0];
            sums[c][1] += m.point(i)[1];
            sums[c][2] += 1.0;
        }
        sums.iter().map(|s| [s[0] / s[2], s[1] / s[2]]).collect()
    }

    #[test]
    fn zero_angle_is_a_translation() {
        let (a, b) = gen_shift_rotate(&shift_rotate(0.0, [4.0, 0.0], 3000)).unwrap();
        let tol = 3.0 * 0.15 * (2.0f64 / 1000.0).sqrt();
        for (ca, cb) in centroids(&a).iter().zip(centroids(&b)) {
            assert!((cb[0] - ca[0] - 4.0).abs() < tol);
            assert!((cb[1] - ca[1]).abs() < tol);
        }
    }

    #[test]
    fn half_turn_gives_antipodal_centroids() {
        let spec = shift_rotate(std::f64::consts::PI, [0.0, 0.0], 3000);
        let (a, b) = gen_shift_rotate(&spec).unwrap();
        let centers = default_centers();
        let center = [
            centers.iter().map(|c| c[0]).sum::<f64>() / 3.0,
            centers.iter().map(|c| c[1]).sum::<f64>() / 3.0,
        ];
        let tol = 3.0 * 0.15 * (2.0f64 / 1000.0).sqrt();
        for (ca, cb) in centroids(&a).iter().zip(centroids(&b)) {
            assert!((cb[0] - (2.0 * center[0] - ca[0])).abs() < tol);
            assert!((cb[1] - (2.0 * center[1] - ca[1])).abs() < tol);
        }
    }

    #[test]
    fn shift_rotate_labels_pair_one_to_one() {
        let (a, b) = gen_shift_rotate(&shift_rotate(1.0, [4.0, 0.0], 30)).unwrap();
        assert_eq!(a.label("cluster"), b.label("cluster"));
    }

    #[test]
    fn digit_swap_geometry() {
        let cost = CostSpec::default();
        let from = [-2.0, -1.0];
        let class_swap = cost.ground_cost(&from, &[-2.0, 1.0]).unwrap();
        let position_swap = cost.ground_cost(&from, &[2.0, -1.0]).unwrap();
        assert_eq!(class_swap, 4.0);
        assert_eq!(position_swap, 16.0);
        let masked = CostSpec::weighted(2.0, vec![0.0, 1.0]).unwrap();
        assert_eq!(masked.ground_cost(&from, &[2.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn digit_swap_cluster_counts() {
        let (a, b) = gen_digit_swap_analog(&DigitSwapSpec {
            n: 200,
            seed: 1,
            noise: 0.05,
        })
        .unwrap();
        for m in [&a, &b] {
            let pos = m.label("position").unwrap();
            let cls = m.label("class").unwrap();
            for p in 0..2 {
                let count = pos.iter().zip(cls).filter(|(x, _)| **x == p).count();
                assert_eq!(count, 100);
            }
        }
        // α pairs position with class; β anti-pairs them
        assert!(a
            .label("position")
            .unwrap()
            .iter()
            .zip(a.label("class").unwrap())
            .all(|(p, c)| p == c));
        assert!(b
            .label("position")
            .unwrap()
            .iter()
            .zip(b.label("class").unwrap())
            .all(|(p, c)| p != c));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (a, _) = gen_shift_rotate(&shift_rotate(0.5, [4.0, 0.0], 25)).unwrap();
        let text = a.to_csv();
        assert!(text.starts_with("x0,x1,label_cluster\n"));
        let back = EmpiricalMeasure::from_csv(&text).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = DatasetSpec::DigitSwap(DigitSwapSpec {
            n: 3,
            seed: 0,
            noise: 0.05,
        });
        assert!(spec.generate().is_err());
        let spec = DatasetSpec::ShiftRotate(ShiftRotateSpec {
            noise: 0.0,
            ..shift_rotate(0.0, [1.0, 0.0], 10)
        });
        assert!(spec.generate().is_err());
        let spec = DatasetSpec::Pair1d(pair(1, 0));
        assert!(spec.generate().is_err());
    }
}
