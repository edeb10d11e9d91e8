//! Attribute-level personalization for a small text-conditioned diffusion
//! model: synthetic data with exact oracles, a toy DDIM model, concept
//! pre-learning, decoupled self-augmentation, dual identifier learning,
//! inference-time semantic adjustment and an evaluation harness.

pub mod adjust_infer;
pub mod augment;
pub mod error;
pub mod evalharness;
pub mod par;
pub mod personalize;
pub mod rng;
pub mod runhub;
pub mod synthdata;

pub use error::{Error, Result};
pub mod nn;
pub mod toydiff;

/// Short stable digest of any serializable configuration.
pub fn config_hash<T: serde::Serialize + ?Sized>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}
