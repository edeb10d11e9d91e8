mod common;

use proptest::prelude::*;
use uvap_core::adjust_infer::{
    combine_attributes, literal_sample, personalized_sample, save_samples, semantic_adjust,
    semantic_adjust_normalized, AdjustmentSpec, InferenceRequest, REQUEST_ECHO,
};
use uvap_core::par::Exec;
use uvap_core::rng;
use uvap_core::Error;

use common::tiny_checkpoint;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn cosine_to_ngt_never_rises_with_lambda() {
    for trial in 0..1000u64 {
        let dim = 2 + (trial % 15) as usize;
        let mut r = rng::stream(trial, "monotone", 0);
        let tgt = unit(rng::normal_vec_f64(&mut r, dim));
        let ngt = unit(rng::normal_vec_f64(&mut r, dim));
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let lambda = f64::from(k) / 100.0;
            let c = cosine(&semantic_adjust(&tgt, &ngt, lambda).unwrap(), &ngt);
            assert!(c <= prev + 1e-12, "trial {trial}, lambda {lambda}: {c} > {prev}");
            prev = c;
        }
    }
}

proptest! {
    #[test]
    fn adjust_is_linear_in_each_argument(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 6),
        n in prop::collection::vec(-5.0f64..5.0, 6),
        k in -3.0f64..3.0,
        lambda in -1.0f64..2.0,
    ) {
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let lhs = semantic_adjust(&combo, &n, lambda).unwrap();
        let ra = semantic_adjust(&a, &n, lambda).unwrap();
        let rb = semantic_adjust(&b, &[0.0; 6], lambda).unwrap();
        for i in 0..6 {
            prop_assert!((lhs[i] - (ra[i] + k * rb[i])).abs() < 1e-12);
        }
        let lhs = semantic_adjust(&n, &combo, lambda).unwrap();
        let ra = semantic_adjust(&n, &a, lambda).unwrap();
        let rb = semantic_adjust(&[0.0; 6], &b, lambda).unwrap();
        for i in 0..6 {
            prop_assert!((lhs[i] - (ra[i] + k * rb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn adjusting_towards_itself_is_identity(v in prop::collection::vec(-5.0f64..5.0, 1..10), lambda in -2.0f64..2.0) {
        prop_assert_eq!(semantic_adjust(&v, &v, lambda).unwrap(), v.clone());
        prop_assert_eq!(semantic_adjust_normalized(&v, &v, lambda).unwrap(), v);
    }
}

fn request(prompt: &str, lambda: f64) -> InferenceRequest {
    let mut req = InferenceRequest::new(prompt, lambda, 4, 3);
    req.steps = 5;
    req
}

#[test]
fn zero_lambda_matches_literal_tgt() {
    let ckpt = tiny_checkpoint(1);
    let adjusted = personalized_sample(&request("a photo of a sks color circle", 0.0), &ckpt, Exec::Parallel).unwrap();
    let literal = literal_sample(&request("a photo of a tgt color circle", 0.0), &ckpt, Exec::Parallel).unwrap();
    assert_eq!(adjusted, literal);
    let shifted = personalized_sample(&request("a photo of a sks color circle", 0.3), &ckpt, Exec::Parallel).unwrap();
    assert_ne!(shifted, literal);
}

#[test]
fn both_zero_lambdas_match_literal_identifiers() {
    let ckpt = tiny_checkpoint(2);
    let adjusted = combine_attributes(&request("a photo of a sks1 pattern sks2 star", 0.0), &ckpt, Exec::Parallel).unwrap();
    let literal = literal_sample(&request("a photo of a tgt1 pattern tgt2 star", 0.0), &ckpt, Exec::Parallel).unwrap();
    assert_eq!(adjusted, literal);
}

#[test]
fn swapping_specs_changes_the_images() {
    let ckpt = tiny_checkpoint(3);
    let req = request("a photo of a sks1 pattern sks2 star", 0.3);
    let mut swapped = req.clone();
    swapped.specs.swap(0, 1);
    swapped.specs[0].placeholder = "sks1".into();
    swapped.specs[1].placeholder = "sks2".into();
    let a = combine_attributes(&req, &ckpt, Exec::Parallel).unwrap();
    let b = combine_attributes(&swapped, &ckpt, Exec::Parallel).unwrap();
    assert_ne!(a, b);
}

#[test]
fn single_placeholder_through_combine_is_unchanged() {
    let ckpt = tiny_checkpoint(4);
    let req = request("a photo of a sks color ring", 0.3);
    assert_eq!(
        combine_attributes(&req, &ckpt, Exec::Parallel).unwrap(),
        personalized_sample(&req, &ckpt, Exec::Parallel).unwrap()
    );
}

#[test]
fn shared_identifiers_are_rejected() {
    let ckpt = tiny_checkpoint(5);
    let mut req = request("a photo of a sks1 pattern sks2 star", 0.3);
    req.specs[1].ngt = "ngt1".into();
    assert!(matches!(combine_attributes(&req, &ckpt, Exec::Parallel), Err(Error::Validation(_))));
}

#[test]
fn requests_are_validated() {
    let ckpt = tiny_checkpoint(6);
    let mut no_spec = request("a photo of a sks color circle", 0.3);
    no_spec.specs.clear();
    assert!(matches!(personalized_sample(&no_spec, &ckpt, Exec::Parallel), Err(Error::Validation(_))));
    let unknown = request("a photo of a sks colour circle", 0.3);
    assert!(matches!(personalized_sample(&unknown, &ckpt, Exec::Parallel), Err(Error::Tokenization { .. })));
    let mut bad_token = request("a photo of a sks color circle", 0.3);
    bad_token.specs[0] = AdjustmentSpec::new("sks", "tgt", "zzz", 0.3);
    assert!(personalized_sample(&bad_token, &ckpt, Exec::Parallel).is_err());
    let mut zero = request("a photo of a sks color circle", 0.3);
    zero.count = 0;
    assert!(matches!(personalized_sample(&zero, &ckpt, Exec::Parallel), Err(Error::Validation(_))));
}

#[test]
fn identical_requests_give_identical_images() {
    let ckpt = tiny_checkpoint(7);
    let req = request("a photo of a sks color square", 0.3);
    let a = personalized_sample(&req, &ckpt, Exec::Parallel).unwrap();
    assert_eq!(a, personalized_sample(&req, &ckpt, Exec::Sequential).unwrap());
    assert_eq!(a.len(), 3);
    assert_ne!(a[0], a[1]);
}

#[test]
fn samples_are_saved_with_request_echo() {
    let ckpt = tiny_checkpoint(8);
    let req = request("a photo of a sks color square", 0.3);
    let images = personalized_sample(&req, &ckpt, Exec::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_samples(dir.path(), &req, &images).unwrap();
    let echo: InferenceRequest = serde_json::from_slice(&std::fs::read(dir.path().join(REQUEST_ECHO)).unwrap()).unwrap();
    assert_eq!(echo, req);
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, images.len() + 1);
}
