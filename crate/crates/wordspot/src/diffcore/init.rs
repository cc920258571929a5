//! Weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Array;

/// He initialization: i.i.d. zero-mean normal samples with variance
/// `2 / n_l`, where `n_l` is the number of trainable weights in the
/// layer. Biases are initialized to zero separately ([`Array::zeros`]).
pub fn he_init(shape: &[usize], n_l: usize, rng: &mut impl Rng) -> Array {
    assert!(n_l > 0, "he_init requires a positive weight count");
    let normal = Normal::new(0.0, (2.0 / n_l as f64).sqrt()).expect("valid std dev");
    let mut out = Array::zeros(shape);
    for v in out.data_mut() {
        *v = normal.sample(rng);
    }
    out
}
