use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AttributeQuery, PromptSource, Reviewer};
use crate::error::{Error, IoContext, Result};
use crate::evalharness::DEFAULT_LAMBDAS;
use crate::personalize::{DualTrainConfig, PrelearnConfig};
use crate::synthdata::{Axis, CorpusConfig};
use crate::toydiff::checkpoint::ScheduleParams;
use crate::toydiff::sampler::SamplerConfig;
use crate::toydiff::train::BaseTrainConfig;
use crate::toydiff::ModelConfig;

use super::state::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub target_axis: Axis,
    pub n_each: usize,
    pub per_prompt: usize,
    pub fraction: f64,
    pub source: PromptSource,
    /// Who reviews the auto-kept candidates when curating headlessly.
    pub reviewer: Reviewer,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_axis: Axis::Color,
            n_each: 10,
            per_prompt: 20,
            fraction: 0.10,
            source: PromptSource::Template,
            reviewer: Reviewer::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualStageConfig {
    #[serde(flatten)]
    pub train: DualTrainConfig,
    /// Curated samples per set.
    pub m: usize,
}

impl Default for DualStageConfig {
    fn default() -> Self {
        Self {
            train: DualTrainConfig::default(),
            m: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub steps: usize,
    pub guidance: f64,
    pub lambda: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 7.5,
            lambda: 0.3,
        }
    }
}

impl InferenceConfig {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            guidance: self.guidance as f32,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Minimum number of images per evaluated condition.
    pub seeds_per_condition: usize,
    pub lambdas: Vec<f64>,
    pub m_values: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds_per_condition: 64,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            m_values: vec![4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: usize,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleParams,
    pub base: BaseTrainConfig,
    pub prelearn: PrelearnConfig,
    pub augment: AugmentConfig,
    pub dual: DualStageConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 32,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleParams {
                t_train: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            base: BaseTrainConfig::default(),
            prelearn: PrelearnConfig::default(),
            augment: AugmentConfig::default(),
            dual: DualStageConfig::default(),
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A tiny configuration that runs every stage in seconds. Its outputs
    /// are meaningless; it exists to exercise plumbing.
    pub fn smoke() -> Self {
        let mut c = RunConfig {
            image_size: 16,
            ..RunConfig::default()
        };
        c.corpus.seeds_per_tuple = 1;
        c.model = ModelConfig {
            image_size: 16,
            d_tok: 8,
            d_cond: 8,
            widths: [4, 8],
            time_dim: 8,
            emb_dim: 16,
        };
        c.base.steps = 20;
        c.base.batch_size = 4;
        c.base.warmup_steps = 2;
        c.prelearn.steps = 4;
        c.prelearn.n_prior = 2;
        c.prelearn.batch_size = 2;
        c.augment.n_each = 2;
        c.augment.per_prompt = 3;
        c.augment.fraction = 0.5;
        c.dual.train.steps = 4;
        c.dual.train.batch_size = 2;
        c.dual.m = 2;
        c.inference.steps = 4;
        c.inference.guidance = 2.0;
        c.eval.seeds_per_condition = 4;
        c.eval.lambdas = vec![0.0, 0.3];
        c.eval.m_values = vec![2, 3];
        c
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// `image_size` is authoritative for the corpus and the model.
    pub fn normalized(mut self) -> Self {
        self.corpus.image_size = self.image_size;
        self.model.image_size = self.image_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn query(&self) -> AttributeQuery {
        let mut q = AttributeQuery::new(self.augment.target_axis, self.corpus.reference);
        q.identifier = self.prelearn.identifier.clone();
        q.tgt = self.dual.train.tgt.clone();
        q.ngt = self.dual.train.ngt.clone();
        q
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = self.clone().normalized();
        cfg.corpus.validate()?;
        cfg.model.validate()?;
        cfg.base.validate()?;
        cfg.prelearn.validate()?;
        cfg.dual.train.validate()?;
        if cfg.prelearn.class_word != cfg.corpus.reference.shape.word() {
            return Err(Error::Config(format!(
                "prelearn class word {} differs from the reference shape {}",
                cfg.prelearn.class_word, cfg.corpus.reference.shape
            )));
        }
        let a = &cfg.augment;
        if !(a.fraction > 0.0 && a.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} outside (0, 1]", a.fraction)));
        }
        if a.n_each == 0 || a.per_prompt == 0 {
            return Err(Error::Config("n_each and per_prompt must be positive".into()));
        }
        if !(2..=cfg.dual_m_limit()).contains(&cfg.dual.m) {
            return Err(Error::Config(format!(
                "m = {} must lie in 2..={}",
                cfg.dual.m,
                cfg.dual_m_limit()
            )));
        }
        let i = &cfg.inference;
        if i.steps == 0 || i.steps > cfg.schedule.t_train {
            return Err(Error::Config(format!("inference steps {} out of range", i.steps)));
        }
        if !i.guidance.is_finite() || !i.lambda.is_finite() {
            return Err(Error::Config("guidance and lambda must be finite".into()));
        }
        if cfg.eval.seeds_per_condition == 0 || cfg.eval.lambdas.is_empty() {
            return Err(Error::Config("eval needs seeds and at least one lambda".into()));
        }
        if cfg.eval.m_values.contains(&0) {
            return Err(Error::Config("m values must be positive".into()));
        }
        Ok(())
    }

    /// Largest m the auto-filtered pool can supply per set.
    pub fn dual_m_limit(&self) -> usize {
        crate::augment::keep_count(self.augment.n_each * self.augment.per_prompt, self.augment.fraction)
    }

    /// Earliest stage whose inputs differ between two configurations; every
    /// stage from there on has to be recomputed.
    pub fn first_invalidated(&self, other: &RunConfig) -> Option<Stage> {
        let a = self.clone().normalized();
        let b = other.clone().normalized();
        if (a.seed, &a.corpus, &a.model, &a.schedule, &a.base) != (b.seed, &b.corpus, &b.model, &b.schedule, &b.base) {
            return Some(Stage::BaseTrained);
        }
        if a.prelearn != b.prelearn || a.inference.steps != b.inference.steps || a.inference.guidance != b.inference.guidance {
            return Some(Stage::Prelearned);
        }
        let generation = |c: &RunConfig| AugmentConfig {
            reviewer: Reviewer::Auto,
            ..c.augment.clone()
        };
        if generation(&a) != generation(&b) {
            return Some(Stage::CandidatesReady);
        }
        if a.augment.reviewer != b.augment.reviewer || a.dual.m != b.dual.m || a.dual.train.tgt != b.dual.train.tgt || a.dual.train.ngt != b.dual.train.ngt {
            return Some(Stage::Curated);
        }
        if a.dual != b.dual {
            return Some(Stage::DualTrained);
        }
        if a != b {
            return Some(Stage::Evaluated);
        }
        None
    }

    pub fn hash(&self) -> String {
        crate::config_hash(&self.clone().normalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_is_valid() {
        RunConfig::smoke().validate().unwrap();
    }

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_slice(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.augment.fraction, 0.10);
        assert_eq!(cfg.dual_m_limit(), 20);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7, "dual": {"m": 6}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dual.m, 6);
        assert_eq!(cfg.dual.train.tgt, "tgt");
        cfg.validate().unwrap();
    }

    #[test]
    fn invalidation_follows_stage_order() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.eval.lambdas = vec![0.0];
        assert_eq!(a.first_invalidated(&b), Some(Stage::Evaluated));
        b.dual.m = 5;
        assert_eq!(a.first_invalidated(&b), Some(Stage::Curated));
        b.base.steps = 1;
        assert_eq!(a.first_invalidated(&b), Some(Stage::BaseTrained));
        assert_eq!(a.first_invalidated(&a.clone()), None);
    }
}
