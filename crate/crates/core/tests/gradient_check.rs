mod common;

use uvap_core::rng;
use uvap_core::toydiff::schedule::{build_schedule, q_sample_f64};
use uvap_core::toydiff::{Model, ModelConfig, TokenTable};

use common::worst_gradient_error;

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
fn analytic_gradient_matches_central_differences() {
    let (worst, at, checked) = worst_gradient_error();
    assert!(checked <= 2000 && checked > 100, "checked {checked}");
    assert!(worst < 1e-3, "max relative error {worst} at {at}");
}

#[test]
fn unused_token_rows_get_no_gradient() {
    let model = Model::<f64>::init(tiny(), TokenTable::default(), 3).unwrap();
    let schedule = build_schedule(1000, 1e-4, 0.02).unwrap();
    let ids = model.vocab.tokenize("a photo of a star").unwrap();
    let n = model.config.latent_len();
    let eps = rng::normal_vec_f64(&mut rng::stream(2, "eps", 0), n);
    let z = q_sample_f64(&vec![0.0; n], 10, &eps, &schedule).unwrap();
    let mut grads = model.params.zeros_like();
    model.example_loss_grad(&ids, &z, 10, &eps, 1.0, &mut grads).unwrap();
    let table = model.table_index();
    let d = model.config.d_tok;
    let unused = model.vocab.id("circle").unwrap();
    assert!(grads.tensors[table].data[unused * d..(unused + 1) * d].iter().all(|&g| g == 0.0));
    let used = model.vocab.id("star").unwrap();
    assert!(grads.tensors[table].data[used * d..(used + 1) * d].iter().any(|&g| g != 0.0));
}
