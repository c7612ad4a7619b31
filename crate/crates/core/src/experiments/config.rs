//! Experiment configuration: one TOML (or JSON) document per run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::{fit_sparse_mask, CostSpec, MaskReport};
use crate::discrepancy::DiscrepancySpec;
use crate::error::{Error, Result};
use crate::measures::{DatasetSpec, EmpiricalMeasure};
use crate::oracles::MAX_ASSIGNMENT_SIZE;
use crate::training::TrainConfig;

fn default_steps() -> usize {
    8
}
fn default_hidden() -> usize {
    64
}
fn default_gain() -> f64 {
    0.1
}
fn default_power() -> f64 {
    2.0
}
fn default_l1() -> f64 {
    0.01
}
fn default_permutations() -> usize {
    200
}
fn default_level() -> f64 {
    0.99
}
fn default_output_dir() -> String {
    "out".to_string()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_bins() -> usize {
    30
}
fn default_grid() -> usize {
    12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_gain")]
    pub gain: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            steps: default_steps(),
            hidden: default_hidden(),
            gain: default_gain(),
        }
    }
}

/// Either explicit weights or a mask learned from a binary label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "default_power")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Label whose sparse classifier selects the coordinates to ignore.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_from: Option<String>,
    #[serde(default = "default_l1")]
    pub l1_strength: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            p: default_power(),
            weights: None,
            mask_from: None,
            l1_strength: default_l1(),
        }
    }
}

impl CostSection {
    /// The ground cost, fitting the mask on the pooled clouds when requested.
    pub fn resolve(
        &self,
        alpha: &EmpiricalMeasure,
        beta: &EmpiricalMeasure,
    ) -> Result<(CostSpec, Option<MaskReport>)> {
        match &self.mask_from {
            None => {
                let spec = CostSpec {
                    p: self.p,
                    weights: self.weights.clone(),
                };
                spec.validate()?;
                Ok((spec, None))
            }
            Some(attr) => {
                let pooled = pool_labeled(alpha, beta)?;
                let mask = fit_sparse_mask(&pooled, attr, self.l1_strength)?;
                Ok((mask.cost_spec(self.p)?, Some(mask)))
            }
        }
    }
}

fn pool_labeled(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    let mut pooled = EmpiricalMeasure::new(a.points().vstack(b.points())?)?;
    for (name, va) in a.labels() {
        if let Some(vb) = b.label(name) {
            let mut v = va.clone();
            v.extend_from_slice(vb);
            pooled = pooled.with_label(name, v)?;
        }
    }
    Ok(pooled)
}

/// Semantic targets are `oracle` (cluster of the exact-OT partner) or
/// `label:<name>` (the β cluster sharing the point's value of `<name>`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    #[serde(default)]
    pub targets: BTreeMap<String, String>,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection {
            targets: BTreeMap::new(),
            permutations: default_permutations(),
            level: default_level(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetRule {
    Oracle,
    Label(String),
}

impl TargetRule {
    pub fn parse(text: &str) -> Result<Self> {
        if text == "oracle" {
            return Ok(TargetRule::Oracle);
        }
        match text.strip_prefix("label:") {
            Some(name) if !name.is_empty() => Ok(TargetRule::Label(name.to_string())),
            _ => Err(Error::Config(format!(
                "score target `{text}` must be `oracle` or `label:<name>`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub gains: Vec<f64>,
    /// Label used to match outputs with their target cluster.
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    #[serde(default = "default_bins")]
    pub bins: usize,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            bins: default_bins(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IllposedSection {
    #[serde(default = "default_grid")]
    pub grid: usize,
}

impl Default for IllposedSection {
    fn default() -> Self {
        IllposedSection {
            grid: default_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub discrepancy: DiscrepancySpec,
    /// `train.seed` is replaced by the run seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub illposed: IllposedSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.dataset.validate().map_err(cfg_err)?;
        if self.flow.steps == 0 || self.flow.hidden == 0 {
            return Err(Error::Config(
                "flow.steps and flow.hidden must be >= 1".into(),
            ));
        }
        if !(self.flow.gain > 0.0 && self.flow.gain.is_finite()) {
            return Err(Error::Config(format!(
                "flow.gain must be > 0, got {}",
                self.flow.gain
            )));
        }
        if self.cost.mask_from.is_some() && self.cost.weights.is_some() {
            return Err(Error::Config(
                "cost.weights and cost.mask_from are exclusive".into(),
            ));
        }
        if self.cost.mask_from.is_none() {
            CostSpec {
                p: self.cost.p,
                weights: self.cost.weights.clone(),
            }
            .validate()
            .map_err(cfg_err)?;
            if let Some(w) = &self.cost.weights {
                if w.len() != self.dataset.dim() {
                    return Err(Error::Config(format!(
                        "cost.weights has {} entries for a {}-dimensional dataset",
                        w.len(),
                        self.dataset.dim()
                    )));
                }
            }
        }
        self.train.validate()?;
        if self.train.eval_size >= self.dataset.n() {
            return Err(Error::Config(format!(
                "train.eval_size {} must be smaller than dataset.n {}",
                self.train.eval_size,
                self.dataset.n()
            )));
        }
        if self.train.eval_size > MAX_ASSIGNMENT_SIZE {
            return Err(Error::Config(format!(
                "train.eval_size must be <= {MAX_ASSIGNMENT_SIZE} for the exact oracle"
            )));
        }
        if self.train.iterations > 0
            && self.train.batch_size > self.dataset.n() - self.train.eval_size
        {
            return Err(Error::Config(
                "train.batch_size exceeds the training split".into(),
            ));
        }
        for rule in self.score.targets.values() {
            TargetRule::parse(rule)?;
        }
        if self.score.permutations < 100 {
            return Err(Error::Config("score.permutations must be >= 100".into()));
        }
        if !(self.score.level > 0.0 && self.score.level <= 1.0) {
            return Err(Error::Config("score.level must be in (0, 1]".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if let Some(s) = &self.sweep {
            if s.gains.len() < 2 || self.seeds.len() < 3 {
                return Err(Error::Config(
                    "a sweep needs at least 2 gains and 3 seeds".into(),
                ));
            }
            if s.gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                return Err(Error::Config("sweep gains must be > 0".into()));
            }
        }
        if self.dynamics.bins == 0 {
            return Err(Error::Config("dynamics.bins must be >= 1".into()));
        }
        if self.illposed.grid == 0 {
            return Err(Error::Config("illposed.grid must be >= 1".into()));
        }
        Ok(())
    }

    /// The configuration used for a single run with seed `seed`.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seeds = vec![seed];
        cfg.train.seed = seed;
        cfg
    }

    /// SHA-256 of the canonical JSON encoding, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir.clear();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
