#![allow(dead_code)]

use uvap_core::rng;
use uvap_core::synthdata::{render_scene, AttributeTuple, ColorScheme, Image, Pattern, Shape};
use uvap_core::toydiff::schedule::q_sample_f64;
use uvap_core::toydiff::{build_schedule, Checkpoint, Model, ModelConfig, TokenTable};

pub const SIZE: usize = 16;

pub fn reference() -> AttributeTuple {
    AttributeTuple::new(Shape::Star, ColorScheme::RedBlue, Pattern::HStripes)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: SIZE,
        d_tok: 6,
        d_cond: 6,
        widths: [3, 4],
        time_dim: 4,
        emb_dim: 8,
    }
}

/// Untrained checkpoint; good enough wherever only plumbing is checked.
pub fn tiny_checkpoint(seed: u64) -> Checkpoint {
    Checkpoint {
        model: Model::init(tiny_config(), TokenTable::default(), seed).unwrap(),
        schedule: build_schedule(1000, 1e-4, 0.02).unwrap(),
        config_hash: "test".into(),
        step_count: 0,
    }
}

pub fn render(shape: Shape, color: ColorScheme, pattern: Pattern, seed: u64) -> Image {
    render_scene(&AttributeTuple::new(shape, color, pattern), seed, SIZE).unwrap()
}

pub fn reference_images(n: u64) -> Vec<Image> {
    (0..n).map(|s| render_scene(&reference(), s, SIZE).unwrap()).collect()
}

pub fn gray() -> Image {
    Image::filled(SIZE, [0.5, 0.5, 0.5])
}

fn grad_config() -> ModelConfig {
    ModelConfig {
        image_size: 4,
        d_tok: 3,
        d_cond: 3,
        widths: [2, 2],
        time_dim: 2,
        emb_dim: 3,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Largest relative error between the analytic gradient of a tiny f64
/// denoiser and central differences, the parameter it occurs at, and the
/// number of parameters checked.
pub fn worst_gradient_error() -> (f64, String, usize) {
    let mut model = Model::<f64>::init(grad_config(), TokenTable::default(), 11).unwrap();
    // Push the zero-initialised biases away from zero so their paths are exercised.
    let mut r = rng::stream(5, "perturb", 0);
    for t in &mut model.params.tensors {
        let noise = rng::normal_vec_f64(&mut r, t.len());
        for (v, n) in t.data.iter_mut().zip(noise) {
            *v += 0.1 * n;
        }
    }
    let schedule = build_schedule(1000, 1e-4, 0.02).unwrap();
    let ids = model.vocab.tokenize("a photo of a red sks star").unwrap();
    let n = model.config.latent_len();
    let x0: Vec<f64> = rng::normal_vec_f64(&mut rng::stream(1, "x0", 0), n)
        .iter()
        .map(|v| v.tanh())
        .collect();
    let eps = rng::normal_vec_f64(&mut rng::stream(1, "eps", 0), n);
    let t = 400;
    let z = q_sample_f64(&x0, t, &eps, &schedule).unwrap();

    let mut grads = model.params.zeros_like();
    model.example_loss_grad(&ids, &z, t, &eps, 1.0, &mut grads).unwrap();

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for ti in 0..model.params.tensors.len() {
        for j in 0..model.params.tensors[ti].len() {
            let orig = model.params.tensors[ti].data[j];
            model.params.tensors[ti].data[j] = orig + h;
            let lp = model.example_loss(&ids, &z, t, &eps).unwrap();
            model.params.tensors[ti].data[j] = orig - h;
            let lm = model.example_loss(&ids, &z, t, &eps).unwrap();
            model.params.tensors[ti].data[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let e = rel_err(grads.tensors[ti].data[j], numeric);
            if e > worst.0 {
                worst = (e, format!("{}[{j}]", model.params.names[ti]));
            }
            checked += 1;
        }
    }
    (worst.0, worst.1, checked)
}
