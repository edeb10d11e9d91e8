use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::schedule::NoiseSchedule;
use super::text::{Overrides, NULL_TOKEN};
use crate::error::{Error, Result};
use crate::nn::Float;
use crate::rng;
use crate::synthdata::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f32,
    /// Clamp the predicted clean latent to [-1, 1] at every step.
    pub clip_denoised: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 7.5,
            clip_denoised: true,
        }
    }
}

/// Classifier-free guidance, written as `(1 - s) u + s c` so that scales 0
/// and 1 return the unconditional and conditional predictions exactly.
pub fn cfg_combine(eps_cond: &[f32], eps_uncond: &[f32], scale: f32) -> Vec<f32> {
    eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(&c, &u)| (1.0 - scale) * u + scale * c)
        .collect()
}

/// Uniformly strided timesteps, descending from `T`.
pub fn ddim_timesteps(t_train: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_train {
        return Err(Error::Config(format!(
            "sampling steps {steps} must lie in 1..={t_train}"
        )));
    }
    let stride = t_train / steps;
    Ok((0..steps).map(|i| t_train - i * stride).collect())
}

/// Deterministic (eta = 0) DDIM trajectory from `z` through `timesteps`.
pub fn ddim_loop<T: Float>(
    mut z: Vec<T>,
    schedule: &NoiseSchedule,
    timesteps: &[usize],
    clip: bool,
    mut predict: impl FnMut(&[T], usize) -> Vec<T>,
) -> Vec<T> {
    for (i, &t) in timesteps.iter().enumerate() {
        let prev = timesteps.get(i + 1).copied().unwrap_or(0);
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(prev);
        let eps = predict(&z, t);
        let (sa, sb) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
        let (pa, pb) = (T::of(ab_prev.sqrt()), T::of((1.0 - ab_prev).sqrt()));
        let one = T::one();
        for (zi, &e) in z.iter_mut().zip(&eps) {
            let mut x0 = (*zi - sb * e) / sa;
            if clip {
                x0 = x0.max(-one).min(one);
            }
            *zi = pa * x0 + pb * e;
        }
    }
    z
}

/// Samples one image for a conditioning vector. Initial noise comes from
/// `seed` alone, so identical arguments give bit-identical images.
pub fn ddim_sample(ckpt: &Checkpoint, cond: &[f32], sampler: &SamplerConfig, seed: u64) -> Result<Image> {
    let uncond = ckpt.model.encode_text(NULL_TOKEN, &Overrides::new())?;
    ddim_sample_with_uncond(ckpt, cond, &uncond, sampler, seed)
}

pub fn ddim_sample_with_uncond(
    ckpt: &Checkpoint,
    cond: &[f32],
    uncond: &[f32],
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Image> {
    let timesteps = ddim_timesteps(ckpt.schedule.t_train, sampler.steps)?;
    if cond.len() != ckpt.model.config.d_cond {
        return Err(Error::Shape(format!(
            "cond has dim {}, model expects {}",
            cond.len(),
            ckpt.model.config.d_cond
        )));
    }
    let n = ckpt.model.config.latent_len();
    let z = rng::normal_vec(&mut rng::stream(seed, "ddim-init", 0), n);
    let model = &ckpt.model;
    let g = sampler.guidance;
    let z0 = ddim_loop(z, &ckpt.schedule, &timesteps, sampler.clip_denoised, |z, t| {
        let (ec, _) = model.denoise(z, t, cond);
        if g == 1.0 {
            return ec;
        }
        let (eu, _) = model.denoise(z, t, uncond);
        cfg_combine(&ec, &eu, g)
    });
    Ok(Image::from_latent(model.config.image_size, &z0))
}
