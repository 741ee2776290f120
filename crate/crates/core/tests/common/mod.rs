//! Shared fixtures and an independent linear-algebra oracle.
#![allow(dead_code)]

use dbp_eq::numerics::CMatrix;
use dbp_eq::scenario::{gen_realization, Realization, SystemConfig};
use dbp_eq::Complex64;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type NaMatrix = DMatrix<Complex64>;

pub fn to_na(a: &CMatrix) -> NaMatrix {
    NaMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)])
}

pub fn from_na(a: &NaMatrix) -> CMatrix {
    CMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Explicit inverse through nalgebra's LU.
pub fn na_inverse(a: &CMatrix) -> CMatrix {
    from_na(&to_na(a).try_inverse().expect("invertible"))
}

/// Ascending eigenvalues of a Hermitian matrix via nalgebra.
pub fn na_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let e = to_na(a).symmetric_eigen();
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn na_singular_values(a: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = to_na(a).singular_values().iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

pub fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).frob_norm() / b.frob_norm().max(f64::MIN_POSITIVE)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

pub fn cfg(m: usize, k: usize, c: usize, n: usize, seed: u64) -> SystemConfig {
    SystemConfig { m, k, c, n, n_interf: k, seed, ..SystemConfig::default() }
}

/// Per-cluster views of one realization.
pub struct Split {
    pub real: Realization,
    pub x: CMatrix,
    pub rhat: CMatrix,
    pub h_blocks: Vec<CMatrix>,
    pub x_blocks: Vec<CMatrix>,
    pub r_blocks: Vec<CMatrix>,
}

pub fn split(cfg: &SystemConfig, trial: u64) -> Split {
    let real = gen_realization(cfg, trial);
    let x = real.scaled_samples();
    let rhat = real.sample_covariance();
    let h_blocks = real.partition.split_rows(&real.h);
    let x_blocks = real.partition.split_rows(&x);
    let r_blocks = real.partition.diag_blocks(&rhat);
    Split { real, x, rhat, h_blocks, x_blocks, r_blocks }
}
