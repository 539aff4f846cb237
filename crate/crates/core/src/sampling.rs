//! Seeded generators for synthetic weights, whitened latents and directions.
//!
//! Every generator takes an explicit RNG; [`stream_rng`] derives independent,
//! reproducible streams from one user seed so results do not depend on how
//! work is split up.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{AttentionWeights, LatentTokens, PerturbationDirection};
use crate::linalg::{dot, Matrix};

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std_dev: f64) -> Matrix {
    let data = gaussian_vec(rng, rows * cols).into_iter().map(|x| x * std_dev).collect();
    Matrix::new(rows, cols, data).expect("gaussian samples are finite")
}

/// Projections with i.i.d. `N(0, 1/d)` entries, which keep token norms and
/// attention logits at unit scale for whitened inputs.
pub fn gaussian_weights<R: Rng + ?Sized>(rng: &mut R, d: usize) -> AttentionWeights {
    let std_dev = 1.0 / (d as f64).sqrt();
    AttentionWeights::new(
        gaussian_matrix(rng, d, d, std_dev),
        gaussian_matrix(rng, d, d, std_dev),
        gaussian_matrix(rng, d, d, std_dev),
    )
    .expect("square weights of equal size")
}

/// Token matrix with i.i.d. standard normal rows, so `E[z zᵀ] = I`.
pub fn whitened_tokens<R: Rng + ?Sized>(rng: &mut R, n_tokens: usize, d: usize) -> LatentTokens {
    LatentTokens::new(gaussian_matrix(rng, n_tokens, d, 1.0))
}

/// `m` whitened samples; sample `i` draws from its own stream of `seed`.
pub fn whitened_samples(seed: u64, m: usize, n_tokens: usize, d: usize) -> Vec<LatentTokens> {
    (0..m)
        .map(|i| whitened_tokens(&mut stream_rng(seed, i as u64), n_tokens, d))
        .collect()
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> PerturbationDirection {
    PerturbationDirection::normalized(random_unit_vector(rng, d)).expect("nonzero sample")
}

/// Random symmetric positive-semidefinite `d x d` matrix `AᵀA` with Gaussian `A`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Matrix {
    gaussian_matrix(rng, d, d, 1.0).gram()
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian rows (rows orthonormal).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v = gaussian_vec(rng, d);
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for r in &rows {
                let p = dot(&v, r);
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_rows(&rows).expect("finite orthonormal rows")
}
