use serde::{Deserialize, Serialize};

use super::{Float, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Which scalars an update may touch: whole tensors, or row ranges of one
/// tensor (used to train only identifier embeddings).
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateMask {
    All,
    Rows {
        tensor: usize,
        row_len: usize,
        rows: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamSet<T>, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Applies one update in place. Scalars outside `mask` are never written.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64, mask: &UpdateMask) {
        self.step += 1;
        let mut clip = 1.0;
        if let Some(max) = self.cfg.clip_norm {
            let norm = masked_sq_norm(grads, mask).sqrt();
            if norm > max {
                clip = max / norm;
            }
        }
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t, eps, clip_t) = (T::of(b1), T::of(b2), T::of(self.cfg.eps), T::of(clip));
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let sizes: Vec<usize> = params.tensors.iter().map(|t| t.data.len()).collect();
        let mut apply = |ti: usize, range: std::ops::Range<usize>| {
            let p = &mut params.tensors[ti].data[range.clone()];
            let g = &grads.tensors[ti].data[range.clone()];
            let m = &mut self.m.tensors[ti].data[range.clone()];
            let v = &mut self.v.tensors[ti].data[range];
            for i in 0..p.len() {
                let gi = g[i] * clip_t;
                m[i] = b1t * m[i] + (T::one() - b1t) * gi;
                v[i] = b2t * v[i] + (T::one() - b2t) * gi * gi;
                p[i] = p[i] - step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        };
        match mask {
            UpdateMask::All => {
                for (ti, n) in sizes.into_iter().enumerate() {
                    apply(ti, 0..n);
                }
            }
            UpdateMask::Rows {
                tensor,
                row_len,
                rows,
            } => {
                for &r in rows {
                    apply(*tensor, r * row_len..(r + 1) * row_len);
                }
            }
        }
    }
}

fn masked_sq_norm<T: Float>(grads: &ParamSet<T>, mask: &UpdateMask) -> f64 {
    match mask {
        UpdateMask::All => grads.sq_norm().to64(),
        UpdateMask::Rows {
            tensor,
            row_len,
            rows,
        } => rows
            .iter()
            .flat_map(|&r| grads.tensors[*tensor].data[r * row_len..(r + 1) * row_len].iter())
            .map(|&x| x.to64() * x.to64())
            .sum(),
    }
}
