//! Coherence, semantic and transport-cost scores of a trained map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::TargetRule;
use crate::costs::{CostSpec, MaskReport};
use crate::discrepancy::PermutationTest;
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::numerics::Tensor;
use crate::oracles::{ot_1d, ot_exact_points, OracleMap, OracleResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// Costs that must satisfy `image_ot <= static <= dynamic`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostChain {
    pub dynamic_cost: f64,
    pub static_cost: f64,
    pub image_ot_cost: f64,
    pub holds: bool,
}

pub const CHAIN_SLACK: f64 = 1e-9;

impl CostChain {
    pub fn new(dynamic_cost: f64, static_cost: f64, image_ot_cost: f64) -> Self {
        let holds =
            dynamic_cost >= static_cost - CHAIN_SLACK && static_cost >= image_ot_cost - CHAIN_SLACK;
        CostChain {
            dynamic_cost,
            static_cost,
            image_ot_cost,
            holds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub method: String,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    pub iterations: usize,
    pub error: Option<String>,
    pub coherence: Option<PermutationTest>,
    /// Zero for every target when coherence fails.
    pub semantic: BTreeMap<String, f64>,
    pub semantic_ungated: BTreeMap<String, f64>,
    pub cost_chain: Option<CostChain>,
    /// Exact OT cost between the evaluation clouds.
    pub oracle_cost: Option<f64>,
    pub cost_ratio: Option<f64>,
    pub round_trip: Option<RoundTrip>,
    pub mask: Option<MaskReport>,
}

impl ScoreReport {
    pub fn empty(status: RunStatus, config_hash: String, seed: u64, iterations: usize) -> Self {
        ScoreReport {
            status,
            config_hash,
            seed,
            iterations,
            error: None,
            coherence: None,
            semantic: BTreeMap::new(),
            semantic_ungated: BTreeMap::new(),
            cost_chain: None,
            oracle_cost: None,
            cost_ratio: None,
            round_trip: None,
            mask: None,
        }
    }
}

/// Exact OT between equal-size clouds: monotone pairing in 1-D, Hungarian otherwise.
pub fn exact_ot(a: &Tensor, b: &Tensor, cost: &CostSpec) -> Result<OracleResult> {
    if a.cols() == 1 && cost.weights.is_none() {
        let ea = EmpiricalMeasure::new(a.clone())?;
        let eb = EmpiricalMeasure::new(b.clone())?;
        ot_1d(&ea, &eb, cost.p)
    } else {
        ot_exact_points(a, b, cost)
    }
}

/// β clusters keyed by the full label tuple, with their centroids.
#[derive(Clone, Debug)]
pub struct Clusters {
    names: Vec<String>,
    keys: Vec<Vec<i64>>,
    pub centroids: Vec<Vec<f64>>,
}

fn label_tuple(m: &EmpiricalMeasure, names: &[String], i: usize) -> Vec<i64> {
    names.iter().map(|n| m.labels()[n][i]).collect()
}

impl Clusters {
    pub fn of(beta: &EmpiricalMeasure) -> Result<Self> {
        let names: Vec<String> = beta.labels().keys().cloned().collect();
        if names.is_empty() {
            return Err(Error::Config("semantic scores need labeled data".into()));
        }
        let mut sums: BTreeMap<Vec<i64>, (Vec<f64>, usize)> = BTreeMap::new();
        for i in 0..beta.len() {
            let entry = sums
                .entry(label_tuple(beta, &names, i))
                .or_insert_with(|| (vec![0.0; beta.dim()], 0));
            for (s, v) in entry.0.iter_mut().zip(beta.point(i)) {
                *s += v;
            }
            entry.1 += 1;
        }
        let (keys, centroids) = sums
            .into_iter()
            .map(|(k, (s, c))| (k, s.iter().map(|v| v / c as f64).collect()))
            .unzip();
        Ok(Clusters {
            names,
            keys,
            centroids,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn index_of(&self, m: &EmpiricalMeasure, i: usize) -> Result<usize> {
        let key = self
            .names
            .iter()
            .map(|n| m.label(n).map(|v| v[i]))
            .collect::<Option<Vec<i64>>>()
            .ok_or_else(|| Error::Config("β evaluation points lack cluster labels".into()))?;
        self.keys
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Config(format!("label tuple {key:?} is not a β cluster")))
    }

    /// Index of the centroid closest to `point` in Euclidean distance.
    pub fn nearest(&self, point: &[f64]) -> usize {
        let d2 = |c: &[f64]| {
            c.iter()
                .zip(point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        (0..self.len())
            .min_by(|&a, &b| d2(&self.centroids[a]).total_cmp(&d2(&self.centroids[b])))
            .unwrap_or(0)
    }

    /// For each α point, the β cluster designated by `rule`.
    pub fn designate(
        &self,
        rule: &TargetRule,
        alpha: &EmpiricalMeasure,
        beta: &EmpiricalMeasure,
        cost: &CostSpec,
    ) -> Result<Vec<usize>> {
        match rule {
            TargetRule::Oracle => {
                let oracle = exact_ot(alpha.points(), beta.points(), cost)?;
                let OracleMap::Assignment { permutation } = oracle.map else {
                    return Err(Error::invalid("exact oracle returned a non-assignment map"));
                };
                permutation
                    .iter()
                    .map(|&j| self.index_of(beta, j))
                    .collect()
            }
            TargetRule::Label(name) => {
                let col = self
                    .names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Config(format!("β has no label `{name}`")))?;
                let values = alpha
                    .label(name)
                    .ok_or_else(|| Error::Config(format!("α has no label `{name}`")))?;
                values
                    .iter()
                    .map(|v| {
                        let hits: Vec<usize> = (0..self.len())
                            .filter(|&c| self.keys[c][col] == *v)
                            .collect();
                        match hits.as_slice() {
                            [one] => Ok(*one),
                            _ => Err(Error::Config(format!(
                                "label `{name}` = {v} matches {} β clusters, expected one",
                                hits.len()
                            ))),
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Fraction of images whose nearest β centroid is the designated one.
pub fn pairing_accuracy(image: &Tensor, designated: &[usize], clusters: &Clusters) -> f64 {
    let hits = (0..image.rows())
        .filter(|&i| clusters.nearest(image.row(i)) == designated[i])
        .count();
    hits as f64 / image.rows().max(1) as f64
}

/// Mean ground cost between images and their designated centroids.
pub fn pairing_loss(
    image: &Tensor,
    designated: &[usize],
    clusters: &Clusters,
    cost: &CostSpec,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..image.rows() {
        total += cost.ground_cost(image.row(i), &clusters.centroids[designated[i]])?;
    }
    Ok(total / image.rows().max(1) as f64)
}

/// Semantic scores gated by coherence.
pub fn gate(ungated: &BTreeMap<String, f64>, coherent: bool) -> BTreeMap<String, f64> {
    ungated
        .iter()
        .map(|(k, v)| (k.clone(), if coherent { *v } else { 0.0 }))
        .collect()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}
