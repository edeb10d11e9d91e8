//! Concept pre-learning with prior preservation, and dual concept learning of
//! target / non-target identifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::adam::{AdamConfig, UpdateMask};
use crate::par::Exec;
use crate::rng;
use crate::synthdata::Image;
use crate::toydiff::sampler::{ddim_sample, SamplerConfig};
use crate::toydiff::train::{accumulate, cosine_factor, mean, BatchItem, LogRecord, LogSink, Trainer};
use crate::toydiff::{Checkpoint, Overrides};

/// Learning rate used for SD-scale fine-tuning; the toy model multiplies it.
pub const BASE_LR: f64 = 5e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Full,
    EmbeddingOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetTag {
    Reference,
    Prior,
    Target,
    Nontarget,
}

/// A caption and the image it describes.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub caption: String,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrelearnConfig {
    pub identifier: String,
    pub class_word: String,
    pub alpha: f64,
    pub steps: usize,
    pub base_lr: f64,
    pub lr_multiplier: f64,
    /// Anneal the learning rate to zero over the run instead of holding it.
    pub cosine_decay: bool,
    pub n_prior: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PrelearnConfig {
    fn default() -> Self {
        Self {
            identifier: "sks".into(),
            class_word: "star".into(),
            alpha: 1.0,
            steps: 500,
            base_lr: BASE_LR,
            lr_multiplier: 100.0,
            cosine_decay: false,
            n_prior: 16,
            batch_size: 8,
            adam: AdamConfig::default(),
        }
    }
}

impl PrelearnConfig {
    pub fn lr(&self) -> f64 {
        self.base_lr * self.lr_multiplier
    }

    pub fn reference_caption(&self) -> String {
        format!("a photo of a {} {}", self.identifier, self.class_word)
    }

    pub fn prior_caption(&self) -> String {
        prior_caption(&self.class_word)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        check_lr(self.lr())?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualTrainConfig {
    pub tgt: String,
    pub ngt: String,
    pub steps: usize,
    pub base_lr: f64,
    pub lr_multiplier: f64,
    /// Anneal the learning rate to zero over the run instead of holding it.
    pub cosine_decay: bool,
    pub mode: TrainMode,
    /// Consecutive plus batches followed by consecutive minus batches.
    pub ratio: [usize; 2],
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for DualTrainConfig {
    fn default() -> Self {
        Self {
            tgt: "tgt".into(),
            ngt: "ngt".into(),
            steps: 1000,
            base_lr: BASE_LR,
            lr_multiplier: 100.0,
            cosine_decay: false,
            mode: TrainMode::Full,
            ratio: [1, 1],
            batch_size: 4,
            adam: AdamConfig::default(),
        }
    }
}

impl DualTrainConfig {
    pub fn lr(&self) -> f64 {
        self.base_lr * self.lr_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        if self.tgt == self.ngt {
            return Err(Error::Config(format!("tgt and ngt are both {:?}", self.tgt)));
        }
        if self.ratio.contains(&0) {
            return Err(Error::Config("interleave ratio entries must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        check_lr(self.lr())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr.is_finite() && lr > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("learning rate {lr} must be positive")))
    }
}

pub fn prior_caption(class_word: &str) -> String {
    format!("a photo of a {class_word}")
}

fn require_placeholder(ckpt: &Checkpoint, token: &str) -> Result<usize> {
    let vocab = &ckpt.model.vocab;
    match vocab.id(token) {
        Some(id) if vocab.is_placeholder(token) => Ok(id),
        _ => Err(Error::Config(format!("{token:?} is not a placeholder token"))),
    }
}

fn check_sizes(ckpt: &Checkpoint, images: &[&Image], what: &str) -> Result<()> {
    let size = ckpt.model.config.image_size;
    match images.iter().position(|im| im.size != size) {
        Some(i) => Err(Error::Shape(format!(
            "{what} image {i} is {}x{0}, model expects {size}x{size}",
            images[i].size
        ))),
        None => Ok(()),
    }
}

/// Samples `n` class images from the frozen base model.
pub fn make_prior_set(
    base: &Checkpoint,
    class_word: &str,
    n: usize,
    seed: u64,
    sampler: &SamplerConfig,
    exec: Exec,
) -> Result<Vec<Image>> {
    let cond = base.model.encode_text(&prior_caption(class_word), &Overrides::new())?;
    exec.map_range(n, |k| {
        ddim_sample(base, &cond, sampler, rng::derive(seed, "prior", k as u64)).map(|im| im.quantized())
    })
    .into_iter()
    .collect()
}

struct Encoded {
    ids: Vec<usize>,
    latent: Vec<f32>,
}

fn encode_pairs(ckpt: &Checkpoint, pairs: &[(&str, &Image)]) -> Result<Vec<Encoded>> {
    pairs
        .iter()
        .map(|(caption, image)| {
            Ok(Encoded {
                ids: ckpt.model.vocab.tokenize(caption)?,
                latent: image.to_latent(),
            })
        })
        .collect()
}

fn draw<'a>(set: &'a [Encoded], n: usize, weight: f32, t_train: usize, r: &mut rng::Stream) -> Vec<BatchItem<'a>> {
    (0..n)
        .map(|_| {
            let e = &set[r.random_range(0..set.len())];
            BatchItem::draw(e.ids.clone(), &e.latent, weight, t_train, r)
        })
        .collect()
}

fn step_lr(lr: f64, decay: bool, step: usize, steps: usize) -> f64 {
    if decay {
        lr * cosine_factor(step, steps)
    } else {
        lr
    }
}

/// Fine-tunes the whole model on the references under "a photo of a sks
/// {class}" with an `alpha`-weighted reconstruction term on prior images under
/// "a photo of a {class}".
pub fn prelearn(
    base: &Checkpoint,
    refs: &[Image],
    priors: &[Image],
    cfg: &PrelearnConfig,
    seed: u64,
    log: &mut dyn LogSink,
    exec: Exec,
) -> Result<Checkpoint> {
    cfg.validate()?;
    require_placeholder(base, &cfg.identifier)?;
    if refs.is_empty() {
        return Err(Error::EmptySet("reference images".into()));
    }
    check_sizes(base, &refs.iter().collect::<Vec<_>>(), "reference")?;
    check_sizes(base, &priors.iter().collect::<Vec<_>>(), "prior")?;
    let ref_caption = cfg.reference_caption();
    let prior_caption = cfg.prior_caption();
    let ref_set = encode_pairs(base, &refs.iter().map(|im| (ref_caption.as_str(), im)).collect::<Vec<_>>())?;
    let prior_set = encode_pairs(base, &priors.iter().map(|im| (prior_caption.as_str(), im)).collect::<Vec<_>>())?;
    let use_prior = cfg.alpha > 0.0 && !prior_set.is_empty();

    let mut ckpt = base.clone();
    let t_train = ckpt.schedule.t_train;
    let lr = cfg.lr();
    let mut trainer = Trainer::new(&ckpt.model, cfg.adam, UpdateMask::All, exec);
    let w = 1.0 / cfg.batch_size as f32;
    for step in 0..cfg.steps {
        let mut items = draw(
            &ref_set,
            cfg.batch_size,
            w,
            t_train,
            &mut rng::stream(seed, "prelearn-ref", step as u64),
        );
        if use_prior {
            let mut r = rng::stream(seed, "prelearn-prior", step as u64);
            items.extend(draw(&prior_set, cfg.batch_size, w * cfg.alpha as f32, t_train, &mut r));
        }
        let (losses, grads) = accumulate(&ckpt.model, &ckpt.schedule, &items, exec)?;
        let recon = mean(&losses[..cfg.batch_size]);
        let prior = use_prior.then(|| mean(&losses[cfg.batch_size..]));
        let total = recon + prior.map_or(0.0, |p| cfg.alpha * p);
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { step, lr });
        }
        let lr = step_lr(lr, cfg.cosine_decay, step, cfg.steps);
        trainer.apply(&mut ckpt.model, &grads, lr);
        log.record(&LogRecord {
            step,
            loss_total: total,
            loss_recon: Some(recon),
            loss_prior_or_minus: prior,
            lr,
            seed,
        })?;
    }
    ckpt.step_count += cfg.steps as u64;
    ckpt.config_hash = crate::config_hash(&(&base.config_hash, cfg, seed, priors.len()));
    Ok(ckpt)
}

/// One identifier pair with its curated plus and minus sets.
#[derive(Debug, Clone, Copy)]
pub struct DualSets<'a> {
    pub tgt: &'a str,
    pub ngt: &'a str,
    pub plus: &'a [TrainingPair],
    pub minus: &'a [TrainingPair],
}

/// Checks that every caption carries its identifier; the error names the
/// offending sample.
pub fn validate_captions(ckpt: &Checkpoint, sets: &DualSets<'_>) -> Result<()> {
    let vocab = &ckpt.model.vocab;
    for (name, token, pairs) in [("plus", sets.tgt, sets.plus), ("minus", sets.ngt, sets.minus)] {
        if pairs.is_empty() {
            return Err(Error::EmptySet(format!("{name} set for {token}")));
        }
        let id = require_placeholder(ckpt, token)?;
        for (i, p) in pairs.iter().enumerate() {
            if !vocab.tokenize(&p.caption)?.contains(&id) {
                return Err(Error::Validation(format!(
                    "{name} sample {i} caption {:?} lacks identifier {token}",
                    p.caption
                )));
            }
        }
    }
    Ok(())
}

/// Dual concept learning for a single tgt/ngt pair.
pub fn dual_train(
    g0: &Checkpoint,
    plus: &[TrainingPair],
    minus: &[TrainingPair],
    cfg: &DualTrainConfig,
    seed: u64,
    log: &mut dyn LogSink,
    exec: Exec,
) -> Result<Checkpoint> {
    let sets = DualSets {
        tgt: &cfg.tgt,
        ngt: &cfg.ngt,
        plus,
        minus,
    };
    dual_train_multi(g0, &[sets], cfg, seed, log, exec)
}

/// Dual concept learning over one or more disjoint identifier pairs. Steps
/// cycle through the pairs; within a pair, `ratio[0]` plus batches are
/// followed by `ratio[1]` minus batches. The identifier fields of `cfg` are
/// ignored here; each pair names its own.
pub fn dual_train_multi(
    g0: &Checkpoint,
    tasks: &[DualSets<'_>],
    cfg: &DualTrainConfig,
    seed: u64,
    log: &mut dyn LogSink,
    exec: Exec,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::EmptySet("identifier pairs".into()));
    }
    let mut tokens: Vec<&str> = Vec::new();
    for t in tasks {
        for tok in [t.tgt, t.ngt] {
            if tokens.contains(&tok) {
                return Err(Error::Validation(format!("identifier {tok} used twice")));
            }
            tokens.push(tok);
        }
        validate_captions(g0, t)?;
        let images: Vec<&Image> = t.plus.iter().chain(t.minus).map(|p| &p.image).collect();
        check_sizes(g0, &images, "curated")?;
    }
    let mut encoded = Vec::with_capacity(tasks.len());
    for t in tasks {
        let enc = |pairs: &[TrainingPair]| {
            encode_pairs(g0, &pairs.iter().map(|p| (p.caption.as_str(), &p.image)).collect::<Vec<_>>())
        };
        encoded.push([enc(t.plus)?, enc(t.minus)?]);
    }

    let mut ckpt = g0.clone();
    let mask = match cfg.mode {
        TrainMode::Full => UpdateMask::All,
        TrainMode::EmbeddingOnly => UpdateMask::Rows {
            tensor: ckpt.model.table_index(),
            row_len: ckpt.model.config.d_tok,
            rows: tokens.iter().map(|t| ckpt.model.vocab.id(t).expect("validated")).collect(),
        },
    };
    let t_train = ckpt.schedule.t_train;
    let lr = cfg.lr();
    let mut trainer = Trainer::new(&ckpt.model, cfg.adam, mask, exec);
    let cycle = cfg.ratio[0] + cfg.ratio[1];
    let w = 1.0 / cfg.batch_size as f32;
    for step in 0..cfg.steps {
        let pos = step % (cycle * tasks.len());
        let (task, within) = (pos / cycle, pos % cycle);
        let side = usize::from(within >= cfg.ratio[0]);
        let mut r = rng::stream(seed, "dual", step as u64);
        let items = draw(&encoded[task][side], cfg.batch_size, w, t_train, &mut r);
        let (losses, grads) = accumulate(&ckpt.model, &ckpt.schedule, &items, exec)?;
        let loss = mean(&losses);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, lr });
        }
        let lr = step_lr(lr, cfg.cosine_decay, step, cfg.steps);
        trainer.apply(&mut ckpt.model, &grads, lr);
        log.record(&LogRecord {
            step,
            loss_total: loss,
            loss_recon: (side == 0).then_some(loss),
            loss_prior_or_minus: (side == 1).then_some(loss),
            lr,
            seed,
        })?;
    }
    ckpt.step_count += cfg.steps as u64;
    ckpt.config_hash = crate::config_hash(&(&g0.config_hash, cfg, seed, &tokens));
    Ok(ckpt)
}
