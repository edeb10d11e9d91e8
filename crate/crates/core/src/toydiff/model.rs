//! Text encoder and denoiser sharing one parameter set.
//!
//! Text path: token rows -> mean-pool -> affine -> SiLU -> affine.
//! Denoiser: conv encoder-decoder with two 2x downsamplings and skip
//! concatenations. Every conv stage is modulated per channel by a FiLM
//! projection of `SiLU(W [time_embedding; cond] + b)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::text::{Overrides, TokenTable};
use crate::error::{Error, Result};
use crate::nn::ops::{self, ConvCache};
use crate::nn::{Float, ParamSet, Tensor};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub d_tok: usize,
    pub d_cond: usize,
    pub widths: [usize; 2],
    pub time_dim: usize,
    pub emb_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            d_tok: 48,
            d_cond: 64,
            widths: [32, 64],
            time_dim: 32,
            emb_dim: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size % 4 != 0 || self.image_size < 4 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        if self.time_dim % 2 != 0 || self.time_dim == 0 {
            return Err(Error::Config("time_dim must be even and positive".into()));
        }
        if [self.d_tok, self.d_cond, self.widths[0], self.widths[1], self.emb_dim].contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_len(&self) -> usize {
        3 * self.image_size * self.image_size
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Stage {
    conv: Lin,
    /// Learned per-position bias added to the conv output.
    pos: usize,
    film: Lin,
    cin: usize,
    cout: usize,
    res: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    table: usize,
    text1: Lin,
    text2: Lin,
    embed: Lin,
    stages: [Stage; 5],
    out: Lin,
}

const STAGE_NAMES: [&str; 5] = ["enc1", "enc2", "mid", "dec2", "dec1"];

/// Builds parameter names and shapes. Init std per tensor is returned
/// alongside so construction and validation share one source.
fn plan(cfg: &ModelConfig, vocab: usize) -> (Vec<(String, Vec<usize>, f64)>, Layout) {
    let mut specs: Vec<(String, Vec<usize>, f64)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, std: f64| {
        specs.push((name, shape, std));
        specs.len() - 1
    };
    let table = push("tokens.embedding".into(), vec![vocab, cfg.d_tok], 1.0);
    let lin = |name: &str, n_out: usize, n_in: usize, scale: f64, push: &mut dyn FnMut(String, Vec<usize>, f64) -> usize| Lin {
        w: push(format!("{name}.weight"), vec![n_out, n_in], scale / (n_in as f64).sqrt()),
        b: push(format!("{name}.bias"), vec![n_out], 0.0),
    };
    let text1 = lin("text.fc1", cfg.d_cond, cfg.d_tok, 1.0, &mut push);
    let text2 = lin("text.fc2", cfg.d_cond, cfg.d_cond, 1.0, &mut push);
    let embed = lin("denoiser.embed", cfg.emb_dim, cfg.time_dim + cfg.d_cond, 1.0, &mut push);
    let [w1, w2] = cfg.widths;
    let s = cfg.image_size;
    let dims = [
        (3, w1, s),
        (w1, w2, s / 2),
        (w2, w2, s / 4),
        (2 * w2, w1, s / 2),
        (2 * w1, w1, s),
    ];
    let stages = std::array::from_fn(|k| {
        let (cin, cout, res) = dims[k];
        let name = STAGE_NAMES[k];
        Stage {
            conv: lin(&format!("denoiser.{name}.conv"), cout, cin * 9, 1.0, &mut push),
            pos: push(format!("denoiser.{name}.pos"), vec![cout, res, res], 0.0),
            film: lin(&format!("denoiser.{name}.film"), 2 * cout, cfg.emb_dim, 0.1, &mut push),
            cin,
            cout,
            res,
        }
    });
    let out = lin("denoiser.out.conv", 3, w1 * 9, 0.1, &mut push);
    (
        specs,
        Layout {
            table,
            text1,
            text2,
            embed,
            stages,
            out,
        },
    )
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab: TokenTable,
    pub params: ParamSet<T>,
    layout: Layout,
}

pub struct TextCache<T> {
    ids: Vec<usize>,
    overridden: Vec<bool>,
    mean: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
}

struct StageCache<T> {
    conv: ConvCache<T>,
    a: Vec<T>,
    gamma_beta: Vec<T>,
    f: Vec<T>,
}

pub struct DenoiserCache<T> {
    h0: Vec<T>,
    e_pre: Vec<T>,
    e: Vec<T>,
    stages: Vec<StageCache<T>>,
    out: ConvCache<T>,
}

impl<T: Float> Model<T> {
    pub fn init(config: ModelConfig, vocab: TokenTable, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(&config, vocab.len());
        let mut params = ParamSet::default();
        for (i, (name, shape, std)) in specs.into_iter().enumerate() {
            let mut t = Tensor::<T>::zeros(&shape);
            if std > 0.0 {
                let mut r = rng::stream(seed, "init", i as u64);
                for v in &mut t.data {
                    *v = T::of(std * r.sample::<f64, _>(StandardNormal));
                }
            }
            params.push(name, t);
        }
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    /// Rebuilds a model around loaded tensors, checking names and shapes.
    pub fn from_params(config: ModelConfig, vocab: TokenTable, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(&config, vocab.len());
        if specs.len() != params.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.tensors.len()
            )));
        }
        for ((name, shape, _), (pn, pt)) in specs.iter().zip(params.names.iter().zip(&params.tensors)) {
            if name != pn || shape != &pt.shape {
                return Err(Error::Format(format!(
                    "tensor {pn} {:?} does not match expected {name} {shape:?}",
                    pt.shape
                )));
            }
        }
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn table_index(&self) -> usize {
        self.layout.table
    }

    pub fn token_row(&self, id: usize) -> &[T] {
        let d = self.config.d_tok;
        &self.params.get(self.layout.table)[id * d..(id + 1) * d]
    }

    pub fn token_vector(&self, token: &str) -> Result<Vec<T>> {
        let id = self.vocab.id(token).ok_or_else(|| Error::Tokenization {
            token: token.into(),
            prompt: token.into(),
        })?;
        Ok(self.token_row(id).to_vec())
    }

    fn lin(&self, l: Lin) -> (&[T], &[T]) {
        (self.params.get(l.w), self.params.get(l.b))
    }

    /// Encodes token ids; rows listed in `overrides` replace the table rows.
    pub fn encode_ids(&self, ids: &[usize], overrides: &[(usize, Vec<T>)]) -> Result<(Vec<T>, TextCache<T>)> {
        let d = self.config.d_tok;
        if ids.is_empty() {
            return Err(Error::Shape("empty token sequence".into()));
        }
        for (_, v) in overrides {
            if v.len() != d {
                return Err(Error::Shape(format!("override has dim {}, expected {d}", v.len())));
            }
        }
        let mut mean = vec![T::zero(); d];
        let mut overridden = Vec::with_capacity(ids.len());
        for &id in ids {
            let row = match overrides.iter().find(|(oid, _)| *oid == id) {
                Some((_, v)) => {
                    overridden.push(true);
                    v.as_slice()
                }
                None => {
                    overridden.push(false);
                    self.token_row(id)
                }
            };
            for (m, &r) in mean.iter_mut().zip(row) {
                *m += r;
            }
        }
        let inv = T::one() / T::of(ids.len() as f64);
        mean.iter_mut().for_each(|m| *m *= inv);
        let (w1, b1) = self.lin(self.layout.text1);
        let pre = ops::linear(w1, b1, &mean);
        let hidden = ops::silu_vec(&pre);
        let (w2, b2) = self.lin(self.layout.text2);
        let cond = ops::linear(w2, b2, &hidden);
        Ok((
            cond,
            TextCache {
                ids: ids.to_vec(),
                overridden,
                mean,
                pre,
                hidden,
            },
        ))
    }

    pub fn encode_text(&self, prompt: &str, overrides: &Overrides) -> Result<Vec<T>> {
        let ids = self.vocab.tokenize(prompt)?;
        let mut ov = Vec::with_capacity(overrides.len());
        for (tok, v) in overrides {
            let id = self.vocab.id(tok).ok_or_else(|| Error::Tokenization {
                token: tok.clone(),
                prompt: prompt.into(),
            })?;
            ov.push((id, v.iter().map(|&x| T::of(f64::from(x))).collect()));
        }
        Ok(self.encode_ids(&ids, &ov)?.0)
    }

    pub fn text_backward(&self, cache: &TextCache<T>, dcond: &[T], grads: &mut ParamSet<T>) {
        let l = self.layout;
        let dhidden = {
            let (w2, _) = self.lin(l.text2);
            let (dw, db) = two_mut(grads, l.text2);
            ops::linear_backward(w2, &cache.hidden, dcond, dw, db)
        };
        let dpre = ops::silu_backward(&cache.pre, &dhidden);
        let dmean = {
            let (w1, _) = self.lin(l.text1);
            let (dw, db) = two_mut(grads, l.text1);
            ops::linear_backward(w1, &cache.mean, &dpre, dw, db)
        };
        let d = self.config.d_tok;
        let inv = T::one() / T::of(cache.ids.len() as f64);
        let table = grads.get_mut(l.table);
        for (&id, &ov) in cache.ids.iter().zip(&cache.overridden) {
            if ov {
                continue;
            }
            for (g, &dm) in table[id * d..(id + 1) * d].iter_mut().zip(&dmean) {
                *g += dm * inv;
            }
        }
    }

    fn stage_forward(&self, s: &Stage, x: &[T], e: &[T]) -> (Vec<T>, StageCache<T>) {
        let (cw, cb) = self.lin(s.conv);
        let (mut a, conv) = ops::conv3x3(cw, cb, x, s.cin, s.res, s.res);
        for (v, &p) in a.iter_mut().zip(&self.params.tensors[s.pos].data) {
            *v += p;
        }
        let (fw, fb) = self.lin(s.film);
        let gamma_beta = ops::linear(fw, fb, e);
        let hw = s.res * s.res;
        let mut f = a.clone();
        for c in 0..s.cout {
            let g = T::one() + gamma_beta[c];
            let b = gamma_beta[s.cout + c];
            for v in &mut f[c * hw..(c + 1) * hw] {
                *v = *v * g + b;
            }
        }
        let out = ops::silu_vec(&f);
        (
            out,
            StageCache {
                conv,
                a,
                gamma_beta,
                f,
            },
        )
    }

    /// Returns `dL/dx` (when asked) and accumulates into `de`.
    fn stage_backward(
        &self,
        s: &Stage,
        cache: &StageCache<T>,
        e: &[T],
        dout: &[T],
        de: &mut [T],
        grads: &mut ParamSet<T>,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let hw = s.res * s.res;
        let df = ops::silu_backward(&cache.f, dout);
        let mut dfilm = vec![T::zero(); 2 * s.cout];
        let mut da = df.clone();
        for c in 0..s.cout {
            let g = T::one() + cache.gamma_beta[c];
            let (mut dg, mut db) = (T::zero(), T::zero());
            for i in c * hw..(c + 1) * hw {
                dg += df[i] * cache.a[i];
                db += df[i];
                da[i] = df[i] * g;
            }
            dfilm[c] = dg;
            dfilm[s.cout + c] = db;
        }
        for (g, &d) in grads.tensors[s.pos].data.iter_mut().zip(&da) {
            *g += d;
        }
        {
            let (fw, _) = self.lin(s.film);
            let (dw, db) = two_mut(grads, s.film);
            let d = ops::linear_backward(fw, e, &dfilm, dw, db);
            for (a, b) in de.iter_mut().zip(d) {
                *a += b;
            }
        }
        let (cw, _) = self.lin(s.conv);
        let (dw, db) = two_mut(grads, s.conv);
        ops::conv3x3_backward(cw, &cache.conv, &da, s.cin, s.res, s.res, dw, db, need_dx)
    }

    pub fn denoise(&self, z: &[T], t: usize, cond: &[T]) -> (Vec<T>, DenoiserCache<T>) {
        let l = &self.layout;
        let mut h0 = ops::timestep_embedding::<T>(t, self.config.time_dim);
        h0.extend_from_slice(cond);
        let (ew, eb) = self.lin(l.embed);
        let e_pre = ops::linear(ew, eb, &h0);
        let e = ops::silu_vec(&e_pre);
        let st = &l.stages;
        let [w1, w2] = self.config.widths;
        let s = self.config.image_size;

        let (s1, c0) = self.stage_forward(&st[0], z, &e);
        let p1 = ops::avgpool2(&s1, w1, s, s);
        let (s2, c1) = self.stage_forward(&st[1], &p1, &e);
        let p2 = ops::avgpool2(&s2, w2, s / 2, s / 2);
        let (s3, c2) = self.stage_forward(&st[2], &p2, &e);
        let mut cat2 = ops::upsample2(&s3, w2, s / 4, s / 4);
        cat2.extend_from_slice(&s2);
        let (s4, c3) = self.stage_forward(&st[3], &cat2, &e);
        let mut cat1 = ops::upsample2(&s4, w1, s / 2, s / 2);
        cat1.extend_from_slice(&s1);
        let (s5, c4) = self.stage_forward(&st[4], &cat1, &e);
        let (ow, ob) = self.lin(l.out);
        let (eps, out) = ops::conv3x3(ow, ob, &s5, w1, s, s);
        (
            eps,
            DenoiserCache {
                h0,
                e_pre,
                e,
                stages: vec![c0, c1, c2, c3, c4],
                out,
            },
        )
    }

    /// Backpropagates `deps` into `grads`; returns `dL/dcond`.
    pub fn denoise_backward(&self, cache: &DenoiserCache<T>, deps: &[T], grads: &mut ParamSet<T>) -> Vec<T> {
        let l = &self.layout;
        let st = &l.stages;
        let [w1, w2] = self.config.widths;
        let s = self.config.image_size;
        let e = &cache.e;
        let mut de = vec![T::zero(); e.len()];
        let cs = &cache.stages;

        let ds5 = {
            let (ow, _) = self.lin(l.out);
            let (dw, db) = two_mut(grads, l.out);
            ops::conv3x3_backward(ow, &cache.out, deps, w1, s, s, dw, db, true).unwrap()
        };
        let dcat1 = self.stage_backward(&st[4], &cs[4], e, &ds5, &mut de, grads, true).unwrap();
        let (du4, ds1_skip) = dcat1.split_at(w1 * s * s);
        let ds4 = ops::upsample2_backward(du4, w1, s / 2, s / 2);
        let dcat2 = self.stage_backward(&st[3], &cs[3], e, &ds4, &mut de, grads, true).unwrap();
        let q = (s / 2) * (s / 2);
        let (du3, ds2_skip) = dcat2.split_at(w2 * q);
        let ds3 = ops::upsample2_backward(du3, w2, s / 4, s / 4);
        let dp2 = self.stage_backward(&st[2], &cs[2], e, &ds3, &mut de, grads, true).unwrap();
        let mut ds2 = ops::avgpool2_backward(&dp2, w2, s / 2, s / 2);
        for (a, &b) in ds2.iter_mut().zip(ds2_skip) {
            *a += b;
        }
        let dp1 = self.stage_backward(&st[1], &cs[1], e, &ds2, &mut de, grads, true).unwrap();
        let mut ds1 = ops::avgpool2_backward(&dp1, w1, s, s);
        for (a, &b) in ds1.iter_mut().zip(ds1_skip) {
            *a += b;
        }
        self.stage_backward(&st[0], &cs[0], e, &ds1, &mut de, grads, false);

        let de_pre = ops::silu_backward(&cache.e_pre, &de);
        let (ew, _) = self.lin(l.embed);
        let (dw, db) = two_mut(grads, l.embed);
        let dh0 = ops::linear_backward(ew, &cache.h0, &de_pre, dw, db);
        dh0[self.config.time_dim..].to_vec()
    }

    /// Epsilon-prediction squared error (mean over elements) for one example
    /// and its gradient, accumulated into `grads` with weight `weight`.
    pub fn example_loss_grad(
        &self,
        ids: &[usize],
        z_t: &[T],
        t: usize,
        eps: &[T],
        weight: T,
        grads: &mut ParamSet<T>,
    ) -> Result<T> {
        let (cond, tcache) = self.encode_ids(ids, &[])?;
        let (pred, dcache) = self.denoise(z_t, t, &cond);
        let n = T::of(pred.len() as f64);
        let mut loss = T::zero();
        let mut deps = Vec::with_capacity(pred.len());
        let two = T::of(2.0);
        for (&p, &e) in pred.iter().zip(eps) {
            let r = p - e;
            loss += r * r;
            deps.push(two * r / n * weight);
        }
        let dcond = self.denoise_backward(&dcache, &deps, grads);
        self.text_backward(&tcache, &dcond, grads);
        Ok(loss / n)
    }

    pub fn example_loss(&self, ids: &[usize], z_t: &[T], t: usize, eps: &[T]) -> Result<T> {
        let (cond, _) = self.encode_ids(ids, &[])?;
        let (pred, _) = self.denoise(z_t, t, &cond);
        let n = T::of(pred.len() as f64);
        Ok(pred
            .iter()
            .zip(eps)
            .map(|(&p, &e)| (p - e) * (p - e))
            .sum::<T>()
            / n)
    }
}

fn two_mut<T: Float>(grads: &mut ParamSet<T>, l: Lin) -> (&mut [T], &mut [T]) {
    assert!(l.w < l.b);
    let (lo, hi) = grads.tensors.split_at_mut(l.b);
    (&mut lo[l.w].data, &mut hi[0].data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 4,
            d_tok: 3,
            d_cond: 3,
            widths: [2, 2],
            time_dim: 2,
            emb_dim: 3,
        }
    }

    #[test]
    fn tiny_model_is_small() {
        let m = Model::<f64>::init(tiny(), TokenTable::default(), 0).unwrap();
        assert!(m.params.num_scalars() <= 2000, "{}", m.params.num_scalars());
    }

    #[test]
    fn from_params_rejects_mismatch() {
        let m = Model::<f32>::init(tiny(), TokenTable::default(), 0).unwrap();
        let mut p = m.params.clone();
        p.names[3] = "bogus".into();
        assert!(matches!(
            Model::from_params(tiny(), TokenTable::default(), p),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn override_with_same_row_is_noop() {
        let m = Model::<f32>::init(tiny(), TokenTable::default(), 1).unwrap();
        let plain = m.encode_text("a photo of a sks star", &Overrides::new()).unwrap();
        let mut ov = Overrides::new();
        ov.insert("sks".into(), m.token_vector("sks").unwrap());
        assert_eq!(plain, m.encode_text("a photo of a sks star", &ov).unwrap());
    }
}
