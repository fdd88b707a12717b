//! Unit-norm visual descriptors compared by cosine similarity.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Normalizes `v` in place; fails for a zero or non-finite vector.
pub fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = l2_norm(v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidInput("descriptor has zero or non-finite norm"));
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

pub fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    normalize_in_place(&mut v)?;
    Ok(v)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two arbitrary (non-zero) vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        return 0.0;
    }
    dot(a, b) / denom
}

/// `normalize(w_a·a + w_b·b)`.
pub fn blend(a: &[f64], w_a: f64, b: &[f64], w_b: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    normalized(a.iter().zip(b).map(|(x, y)| w_a * x + w_b * y).collect())
}

/// Moving-average update giving weight `w_new` to the incoming descriptor.
pub fn moving_average(old: &[f64], new: &[f64], w_new: f64) -> Result<Vec<f64>> {
    blend(new, w_new, old, 1.0 - w_new)
}

pub fn is_unit(v: &[f64]) -> bool {
    (l2_norm(v) - 1.0).abs() < 1e-5
}
