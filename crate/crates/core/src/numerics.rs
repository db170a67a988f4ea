//! Dense math kernel: matrices, probability functions, cosine similarity,
//! a seeded random stream, and a central-difference gradient oracle.
//!
//! Everything is `f64`. Vectors are plain slices; the only owned container is
//! [`Matrix`], a row-major dense matrix.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Norm below which a vector is treated as zero by [`cosine_similarity`].
pub const ZERO_NORM: f64 = 1e-12;

static ZERO_NORM_COSINES: AtomicU64 = AtomicU64::new(0);

/// Number of cosine similarities (process-wide) that hit a zero-norm operand.
pub fn zero_norm_cosine_count() -> u64 {
    ZERO_NORM_COSINES.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `y = self * x + bias`
    pub fn affine(&self, x: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
        check_len("Matrix::affine(x)", self.cols, x.len())?;
        check_len("Matrix::affine(bias)", self.rows, bias.len())?;
        Ok((0..self.rows)
            .map(|r| dot_unchecked(self.row(r), x) + bias[r])
            .collect())
    }

    /// `y = self^T * v`
    pub fn transpose_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("Matrix::transpose_mul", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += m * vr;
            }
        }
        Ok(out)
    }

    /// `self += scale * u v^T`
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) -> Result<()> {
        check_len("Matrix::add_outer(u)", self.rows, u.len())?;
        check_len("Matrix::add_outer(v)", self.cols, v.len())?;
        for (r, &ur) in u.iter().enumerate() {
            let s = scale * ur;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (m, &vc) in row.iter_mut().zip(v) {
                *m += s * vc;
            }
        }
        Ok(())
    }
}

fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("dot", a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

pub fn norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Result<usize> {
    if v.is_empty() {
        return Err(Error::Empty("argmax"));
    }
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// `-sum_k y_k ln(max(p_k, 1e-12))`
pub fn cross_entropy(target: &[f64], probs: &[f64]) -> Result<f64> {
    check_len("cross_entropy", target.len(), probs.len())?;
    Ok(target
        .iter()
        .zip(probs)
        .filter(|(&y, _)| y != 0.0)
        .map(|(&y, &p)| -y * p.max(LOG_EPS).ln())
        .sum())
}

/// Cross-entropy against a class index, i.e. against the one-hot vector for it.
pub fn cross_entropy_index(label: usize, probs: &[f64]) -> Result<f64> {
    match probs.get(label) {
        Some(&p) => Ok(-p.max(LOG_EPS).ln()),
        None => Err(Error::Index {
            index: label,
            len: probs.len(),
        }),
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.max(LOG_EPS).ln())
        .sum()
}

/// Cosine similarity; returns 0 when either operand has (near) zero norm.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("cosine_similarity", u.len(), v.len())?;
    let nu = norm(u);
    let nv = norm(v);
    if nu < ZERO_NORM || nv < ZERO_NORM {
        ZERO_NORM_COSINES.fetch_add(1, Ordering::Relaxed);
        return Ok(0.0);
    }
    Ok((dot_unchecked(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn one_hot(label: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}

/// Central-difference gradient `(f(x+e) - f(x-e)) / 2e`, one coordinate at a time.
pub fn finite_diff_gradient<F>(mut objective: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = objective(&probe);
            probe[i] = orig - eps;
            let minus = objective(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Deterministic, portable random stream (ChaCha8).
///
/// Separate concerns draw from separate streams so that, for example,
/// changing the augmentation policy never shifts the batch order.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

/// Stream identifiers used across the crate.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const LABELED_AUGMENT: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner }
    }

    /// Stream keyed by `(seed, stream, tag)`; used for per-iteration draws that
    /// must not disturb the main streams.
    pub fn derived(seed: u64, stream: u64, tag: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
        inner.set_stream(stream);
        SeededRng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in p {
            assert!(close(x, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_is_stable_on_large_logits() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_of_log_weights_normalises_them() {
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (a, b) in p.iter().zip(expected) {
            assert!(close(*a, b, 1e-15));
        }
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let ce = cross_entropy(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(close(ce, 2f64.ln(), 1e-15));
        let ce = cross_entropy(&[0.0, 0.0, 1.0], &[0.2, 0.3, 0.5]).unwrap();
        assert!(close(ce, 0.693_147_180_559_945_3, 1e-12));
        assert!(cross_entropy(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let ce = cross_entropy(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(close(ce, -(1e-12f64).ln(), 1e-9));
    }

    #[test]
    fn entropy_examples() {
        assert!(close(entropy(&[0.25; 4]), 4f64.ln(), 1e-15));
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!(close(entropy(&[0.5, 0.25, 0.25]), 1.5 * 2f64.ln(), 1e-15));
    }

    #[test]
    fn cosine_examples() {
        assert!(close(cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(close(c, std::f64::consts::FRAC_1_SQRT_2, 1e-15));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cosine_zero_norm_is_neutral_and_counted() {
        let before = zero_norm_cosine_count();
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(zero_norm_cosine_count() > before);
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_gradient(|t| t[0] * t[0], &[3.0], 1e-5);
        assert!(close(g[0], 6.0, 1e-6));
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]).unwrap(), 1);
        assert_eq!(argmax(&[1.0, 1.0]).unwrap(), 0);
    }

    #[test]
    fn matrix_kernels() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.affine(&[1.0, 0.0, -1.0], &[0.5, 0.0]).unwrap(), vec![-1.5, -2.0]);
        assert_eq!(m.transpose_mul(&[1.0, 1.0]).unwrap(), vec![5.0, 7.0, 9.0]);
        let mut z = Matrix::zeros(2, 3);
        z.add_outer(&[1.0, 2.0], &[1.0, 0.0, 3.0], 0.5).unwrap();
        assert_eq!(z.as_slice(), &[0.5, 0.0, 1.5, 1.0, 0.0, 3.0]);
        assert!(m.affine(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn seeded_streams_reproduce_and_differ() {
        let a: Vec<u64> = {
            let mut r = SeededRng::stream(7, streams::BATCH);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SeededRng::stream(7, streams::BATCH);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = SeededRng::stream(7, streams::AUGMENT);
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut d1 = SeededRng::derived(7, streams::LABELED_AUGMENT, 200);
        let mut d2 = SeededRng::derived(7, streams::LABELED_AUGMENT, 400);
        assert_ne!(d1.next_u64(), d2.next_u64());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
                let p = softmax(&logits).unwrap();
                let total: f64 = p.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(p.iter().all(|&x| x > 0.0));
            }

            #[test]
            fn entropy_is_bounded(logits in prop::collection::vec(-30.0f64..30.0, 1..10)) {
                let k = logits.len() as f64;
                let h = entropy(&softmax(&logits).unwrap());
                prop_assert!(h >= 0.0 && h <= k.ln() + 1e-12);
            }

            #[test]
            fn cosine_symmetric_and_scale_invariant(
                u in prop::collection::vec(-5.0f64..5.0, 4),
                v in prop::collection::vec(-5.0f64..5.0, 4),
                alpha in 0.01f64..100.0,
            ) {
                prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
                let uv = cosine_similarity(&u, &v).unwrap();
                let vu = cosine_similarity(&v, &u).unwrap();
                let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
                let su = cosine_similarity(&scaled, &v).unwrap();
                prop_assert_eq!(uv, vu);
                prop_assert!((uv - su).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&uv));
            }
        }
    }
}
