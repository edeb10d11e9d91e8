use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::model::{Model, ModelConfig};
use super::schedule::{q_sample, NoiseSchedule};
use super::text::{TokenTable, NULL_TOKEN};
use crate::error::{Error, Result};
use crate::nn::adam::{Adam, AdamConfig, UpdateMask};
use crate::nn::ParamSet;
use crate::par::Exec;
use crate::rng::{self, Stream};
use crate::synthdata::{AttributeTuple, Image, CAPTION_PREFIX};

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_recon: Option<f64>,
    pub loss_prior_or_minus: Option<f64>,
    pub lr: f64,
    pub seed: u64,
}

/// Sink for training logs; `Vec<LogRecord>` and JSON-lines writers both work.
pub trait LogSink {
    fn record(&mut self, rec: &LogRecord) -> Result<()>;
}

impl LogSink for Vec<LogRecord> {
    fn record(&mut self, rec: &LogRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

pub struct JsonLines<W: Write>(pub W);

impl<W: Write> LogSink for JsonLines<W> {
    fn record(&mut self, rec: &LogRecord) -> Result<()> {
        serde_json::to_writer(&mut self.0, rec)?;
        self.0
            .write_all(b"\n")
            .map_err(|e| Error::Config(format!("log write failed: {e}")))
    }
}

pub struct NoLog;

impl LogSink for NoLog {
    fn record(&mut self, _: &LogRecord) -> Result<()> {
        Ok(())
    }
}

/// A single noised training example with its loss weight.
pub struct BatchItem<'a> {
    pub ids: Vec<usize>,
    pub latent: &'a [f32],
    pub t: usize,
    pub eps: Vec<f32>,
    pub weight: f32,
}

impl<'a> BatchItem<'a> {
    /// Draws a timestep uniformly from 1..=T and fresh unit Gaussian noise.
    pub fn draw(ids: Vec<usize>, latent: &'a [f32], weight: f32, t_train: usize, r: &mut Stream) -> Self {
        let t = r.random_range(1..=t_train);
        let eps = rng::normal_vec(r, latent.len());
        Self {
            ids,
            latent,
            t,
            eps,
            weight,
        }
    }
}

/// Per-item losses and the weighted gradient sum. Items are processed
/// independently and summed in input order, so the result does not depend
/// on the execution mode.
pub fn accumulate(
    model: &Model<f32>,
    schedule: &NoiseSchedule,
    items: &[BatchItem<'_>],
    exec: Exec,
) -> Result<(Vec<f64>, ParamSet<f32>)> {
    let per_item = exec.map(items, |it| -> Result<(f64, ParamSet<f32>)> {
        let z_t = q_sample(it.latent, it.t, &it.eps, schedule)?;
        let mut g = model.params.zeros_like();
        let loss = model.example_loss_grad(&it.ids, &z_t, it.t, &it.eps, it.weight, &mut g)?;
        Ok((f64::from(loss), g))
    });
    let mut grads = model.params.zeros_like();
    let mut losses = Vec::with_capacity(items.len());
    for r in per_item {
        let (l, g) = r?;
        losses.push(l);
        grads.add_scaled(&g, 1.0);
    }
    Ok((losses, grads))
}

/// Owns the optimizer state for one training stage.
pub struct Trainer {
    adam: Adam<f32>,
    mask: UpdateMask,
    pub exec: Exec,
}

impl Trainer {
    pub fn new(model: &Model<f32>, adam: AdamConfig, mask: UpdateMask, exec: Exec) -> Self {
        Self {
            adam: Adam::new(&model.params, adam),
            mask,
            exec,
        }
    }

    pub fn apply(&mut self, model: &mut Model<f32>, grads: &ParamSet<f32>, lr: f64) {
        self.adam.update(&mut model.params, grads, lr, &self.mask);
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseTrainConfig {
    /// Set by the caller; run configurations derive it from the run seed.
    #[serde(skip)]
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Probability of replacing the caption by the null token.
    pub p_uncond: f64,
    /// Independent probability of dropping each attribute word, so that
    /// partial prompts such as "a photo of a star" are in distribution.
    pub p_drop_attr: f64,
    /// Linear warmup length; afterwards the rate follows a cosine decay to zero.
    pub warmup_steps: usize,
    pub cosine_decay: bool,
    pub adam: AdamConfig,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 3000,
            lr: 2e-3,
            batch_size: 16,
            p_uncond: 0.1,
            p_drop_attr: 0.3,
            warmup_steps: 100,
            cosine_decay: true,
            adam: AdamConfig::default(),
        }
    }
}

/// Half-cosine from 1 at step 0 towards 0 at `steps`.
pub fn cosine_factor(step: usize, steps: usize) -> f64 {
    if steps == 0 {
        return 1.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos())
}

impl BaseTrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = if step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        let decay = if self.cosine_decay { cosine_factor(step, self.steps) } else { 1.0 };
        self.lr * warm * decay
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, p) in [("p_uncond", self.p_uncond), ("p_drop_attr", self.p_drop_attr)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Caption with attribute words independently dropped, or the null token.
pub fn augment_caption(attrs: &AttributeTuple, p_uncond: f64, p_drop: f64, r: &mut Stream) -> String {
    if r.random::<f64>() < p_uncond {
        return NULL_TOKEN.to_string();
    }
    let mut words = vec![CAPTION_PREFIX.to_string()];
    for w in [attrs.color.word(), attrs.pattern.word(), attrs.shape.word()] {
        if r.random::<f64>() >= p_drop {
            words.push(w.to_string());
        }
    }
    words.join(" ")
}

pub struct LabeledImage {
    pub attrs: AttributeTuple,
    pub image: Image,
}

/// Trains denoiser, text encoder and token table from scratch on the corpus.
pub fn train_base(
    corpus: &[LabeledImage],
    model_cfg: &ModelConfig,
    schedule: &NoiseSchedule,
    cfg: &BaseTrainConfig,
    log: &mut dyn LogSink,
    exec: Exec,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptySet("base corpus".into()));
    }
    for item in corpus {
        if item.image.size != model_cfg.image_size {
            return Err(Error::Shape(format!(
                "corpus image size {} != model size {}",
                item.image.size, model_cfg.image_size
            )));
        }
    }
    let mut model = Model::<f32>::init(model_cfg.clone(), TokenTable::default(), cfg.seed)?;
    let latents: Vec<Vec<f32>> = corpus.iter().map(|c| c.image.to_latent()).collect();
    let mut trainer = Trainer::new(&model, cfg.adam, UpdateMask::All, exec);
    let w = 1.0 / cfg.batch_size as f32;
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, "base-step", step as u64);
        let mut items = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let k = r.random_range(0..corpus.len());
            let caption = augment_caption(&corpus[k].attrs, cfg.p_uncond, cfg.p_drop_attr, &mut r);
            let ids = model.vocab.tokenize(&caption)?;
            items.push(BatchItem::draw(ids, &latents[k], w, schedule.t_train, &mut r));
        }
        let (losses, grads) = accumulate(&model, schedule, &items, exec)?;
        let loss = mean(&losses);
        let lr = cfg.lr_at(step);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, lr });
        }
        trainer.apply(&mut model, &grads, lr);
        log.record(&LogRecord {
            step,
            loss_total: loss,
            loss_recon: Some(loss),
            loss_prior_or_minus: None,
            lr,
            seed: cfg.seed,
        })?;
    }
    Ok(Checkpoint {
        model,
        schedule: schedule.clone(),
        config_hash: crate::config_hash(&(model_cfg, cfg, cfg.seed)),
        step_count: cfg.steps as u64,
    })
}
