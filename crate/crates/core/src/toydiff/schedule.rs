use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear beta schedule. Index `t` runs 1..=T; `alpha_bar(0)` is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_train {
            return Err(Error::Index(format!(
                "timestep {t} outside 1..={}",
                self.t_train
            )));
        }
        Ok(())
    }
}

pub fn build_schedule(t_train: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_train < 2 {
        return Err(Error::Config(format!("T_train {t_train} < 2")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let n = t_train as f64 - 1.0;
    let betas: Vec<f64> = (0..t_train)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / n)
        .collect();
    let mut alpha_bars = Vec::with_capacity(t_train);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        t_train,
        beta_start,
        beta_end,
        betas,
        alpha_bars,
    })
}

/// Closed-form forward process: `sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`.
pub fn q_sample(z0: &[f32], t: usize, eps: &[f32], s: &NoiseSchedule) -> Result<Vec<f32>> {
    s.check_timestep(t)?;
    if z0.len() != eps.len() {
        return Err(Error::Shape(format!(
            "latent has {} values, noise {}",
            z0.len(),
            eps.len()
        )));
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    Ok(z0.iter().zip(eps).map(|(&z, &e)| a * z + b * e).collect())
}

pub fn q_sample_f64(z0: &[f64], t: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>> {
    s.check_timestep(t)?;
    if z0.len() != eps.len() {
        return Err(Error::Shape("latent/noise length mismatch".into()));
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(eps).map(|(&z, &e)| a * z + b * e).collect())
}
