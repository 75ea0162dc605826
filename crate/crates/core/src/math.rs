//! Small numeric helpers shared by the trainers.

use rand::Rng;
use sha2::{Digest, Sha256};

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^u)` without overflow.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `sigmoid(logit)` against `target` in {0, 1}.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = m · x + b` for a row-major `rows × x.len()` matrix.
pub fn affine(m: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = b[r] + dot(&m[r * cols..(r + 1) * cols], x);
    }
}

/// `m += scale · a ⊗ b` for a row-major `a.len() × b.len()` matrix.
pub fn add_outer(m: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        let s = scale * ar;
        if s == 0.0 {
            continue;
        }
        for (mv, &bv) in m[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *mv += s * bv;
        }
    }
}

/// `out += mᵀ · a` for a row-major `a.len() × out.len()` matrix.
pub fn add_transpose_mul(m: &[f64], a: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (o, &mv) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += ar * mv;
        }
    }
}

pub fn fill_uniform<R: Rng + ?Sized>(rng: &mut R, xs: &mut [f64], scale: f64) {
    for x in xs {
        *x = rng.random_range(-scale..=scale);
    }
}

/// Stable 64-bit seed derived from a base seed and a list of string keys.
pub fn derive_seed(seed: u64, keys: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for k in keys {
        h.update((k.len() as u64).to_le_bytes());
        h.update(k.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_finite() {
        for u in [-800.0, -3.0, 0.0, 2.5, 800.0] {
            let s = sigmoid(u);
            assert!(s.is_finite());
            assert!((s + sigmoid(-u) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn bce_matches_naive_form() {
        for (u, y) in [(0.3, 1.0), (-1.2, 0.0), (2.0, 0.0), (-0.1, 1.0)] {
            let s = sigmoid(u);
            let naive = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
            assert!((bce_with_logit(u, y) - naive).abs() < 1e-12);
        }
        assert!(bce_with_logit(1000.0, 0.0).is_finite());
    }

    #[test]
    fn derived_seeds_differ_by_key() {
        assert_eq!(derive_seed(1, &["a", "b"]), derive_seed(1, &["a", "b"]));
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(1, &["ab"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
    }
}
