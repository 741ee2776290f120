//! Experiment instances: configuration, channels, colored-noise samples,
//! constellations and the antenna-cluster partition.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::numerics::{hermitize, matmul_nh, CMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown {kind} '{value}'")]
    UnknownVariant { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl FromStr for Modulation {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Self::Qpsk),
            "qam16" | "16qam" | "16-qam" => Ok(Self::Qam16),
            _ => Err(ConfigError::UnknownVariant { kind: "modulation", value: s.into() }),
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Qpsk => "qpsk",
            Self::Qam16 => "qam16",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelModel {
    /// i.i.d. CN(0, 1) entries.
    Rayleigh,
    /// Per-UE clustered steering vectors on a half-wavelength ULA.
    OneRing,
}

impl FromStr for ChannelModel {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rayleigh" => Ok(Self::Rayleigh),
            "one_ring" | "one-ring" | "onering" => Ok(Self::OneRing),
            _ => Err(ConfigError::UnknownVariant { kind: "channel model", value: s.into() }),
        }
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rayleigh => "rayleigh",
            Self::OneRing => "one_ring",
        })
    }
}

/// All scalar knobs of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// Target UEs.
    pub k: usize,
    /// Antenna clusters (DUs).
    pub c: usize,
    /// Noise samples (pilot REs).
    pub n: usize,
    /// Average symbol energy.
    pub es: f64,
    pub snr_db: f64,
    pub iot_db: f64,
    /// Interfering UEs.
    pub n_interf: usize,
    /// Symbols per coherence block.
    pub n_coh: usize,
    pub modulation: Modulation,
    pub channel_model: ChannelModel,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m: 32,
            k: 4,
            c: 4,
            n: 64,
            es: 1.0,
            snr_db: 10.0,
            iot_db: 10.0,
            n_interf: 4,
            n_coh: 480,
            modulation: Modulation::Qam16,
            channel_model: ChannelModel::Rayleigh,
            seed: 1,
        }
    }
}

impl SystemConfig {
    /// Checks the structural invariants. Note that `n > k` is required but
    /// the concatenated compression additionally needs `n >= c*k`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.m <= self.k {
            return bad(format!("M ({}) must exceed K ({})", self.m, self.k));
        }
        if self.c == 0 || self.c > self.m {
            return bad(format!("C ({}) must be in 1..=M", self.c));
        }
        if self.n <= self.k {
            return bad(format!("N ({}) must exceed K ({})", self.n, self.k));
        }
        if !(self.es > 0.0) || !self.es.is_finite() {
            return bad(format!("Es ({}) must be positive", self.es));
        }
        if !self.snr_db.is_finite() {
            return bad("SNR must be finite".into());
        }
        if !(self.iot_db >= 0.0) || !self.iot_db.is_finite() {
            return bad(format!("IoT ({} dB) must be >= 0", self.iot_db));
        }
        if self.n_coh == 0 {
            return bad("n_coh must be at least 1".into());
        }
        Ok(())
    }

    pub fn partition(&self) -> ClusterPartition {
        ClusterPartition::balanced(self.m, self.c)
    }
}

/// Background noise power `N0` and interference power `β` implied by the
/// SNR and IoT settings.
pub fn derive_powers(cfg: &SystemConfig) -> (f64, f64) {
    let n0 = cfg.es / 10f64.powf(cfg.snr_db / 10.0);
    let beta = n0 * (10f64.powf(cfg.iot_db / 10.0) - 1.0) / cfg.es;
    (n0, beta.max(0.0))
}

/// Contiguous antenna clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl ClusterPartition {
    /// The first `M mod C` clusters get `⌈M/C⌉` antennas, the rest `⌊M/C⌋`.
    pub fn balanced(m: usize, c: usize) -> Self {
        assert!(c >= 1 && c <= m, "need 1 <= C <= M");
        let base = m / c;
        let extra = m % c;
        let sizes: Vec<usize> = (0..c).map(|i| base + usize::from(i < extra)).collect();
        Self::from_sizes(sizes)
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { sizes, offsets }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Rows of `x` belonging to cluster `c`.
    pub fn rows_of(&self, x: &CMatrix, c: usize) -> CMatrix {
        x.row_block(self.offsets[c], self.sizes[c])
    }

    /// Splits the rows of `x` into per-cluster blocks.
    pub fn split_rows(&self, x: &CMatrix) -> Vec<CMatrix> {
        (0..self.len()).map(|c| self.rows_of(x, c)).collect()
    }

    /// Splits the columns of `x` into per-cluster blocks.
    pub fn split_cols(&self, x: &CMatrix) -> Vec<CMatrix> {
        (0..self.len()).map(|c| x.col_block(self.offsets[c], self.sizes[c])).collect()
    }

    /// Block-diagonal part of a square `M×M` matrix, as a list of blocks.
    pub fn diag_blocks(&self, r: &CMatrix) -> Vec<CMatrix> {
        (0..self.len())
            .map(|c| r.block(self.offsets[c], self.offsets[c], self.sizes[c], self.sizes[c]))
            .collect()
    }

    /// `blkdiag(R_11, …, R_CC)`.
    pub fn block_diagonal(&self, r: &CMatrix) -> CMatrix {
        let blocks = self.diag_blocks(r);
        let refs: Vec<&CMatrix> = blocks.iter().collect();
        CMatrix::blkdiag(&refs)
    }
}

/// One channel draw with its pilot noise samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// Target channel, `M×K`.
    pub h: CMatrix,
    /// Interference channel, `M×n_interf`.
    pub hbar: CMatrix,
    /// Raw noise samples `[n^1 … n^N]`, `M×N`.
    pub noise: CMatrix,
    pub partition: ClusterPartition,
    pub n0: f64,
    pub beta: f64,
}

impl Realization {
    /// `noise / √N`, so that the sample covariance is `X X^H`.
    pub fn scaled_samples(&self) -> CMatrix {
        self.noise.scale(1.0 / (self.noise.cols() as f64).sqrt())
    }

    pub fn sample_covariance(&self) -> CMatrix {
        sample_covariance(&self.noise)
    }

    /// Population covariance `βEs·H̄H̄^H + N0·I`.
    pub fn population_covariance(&self, es: f64) -> CMatrix {
        matmul_nh(&self.hbar, &self.hbar)
            .expect("square by construction")
            .scale(self.beta * es)
            .add_diag(self.n0)
    }
}

/// Transmitted and received symbols over one coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    /// Constellation indices, `K×n_coh`, row-major.
    pub indices: Vec<usize>,
    /// Transmitted symbols, `K×n_coh`.
    pub s: CMatrix,
    /// Received signals `H·S + noise`, `M×n_coh`.
    pub y: CMatrix,
}

const STREAM_REALIZATION: u64 = 0;
const STREAM_SYMBOLS: u64 = 1;

/// Per-trial substream of the named generator.
pub fn trial_rng(seed: u64, trial: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(4).wrapping_add(purpose));
    rng
}

fn cn01(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn cn_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cn01(rng))
}

const ONE_RING_PATHS: usize = 20;
const ONE_RING_SPREAD_DEG: f64 = 10.0;
const SECTOR_DEG: f64 = 120.0;

// Clustered-path channel around a mean angle in the sector; unit average
// per-entry power.
fn one_ring_channel(m: usize, users: usize, rng: &mut impl Rng) -> CMatrix {
    let mut h = CMatrix::zeros(m, users);
    let half_sector = SECTOR_DEG.to_radians() / 2.0;
    let spread = ONE_RING_SPREAD_DEG.to_radians();
    let norm = 1.0 / (ONE_RING_PATHS as f64).sqrt();
    for u in 0..users {
        let theta = rng.random_range(-half_sector..half_sector);
        for _ in 0..ONE_RING_PATHS {
            let phi = theta + rng.random_range(-spread..spread);
            let gain = cn01(rng) * norm;
            for a in 0..m {
                let phase = -PI * (a as f64) * phi.sin();
                h[(a, u)] += gain * Complex64::from_polar(1.0, phase);
            }
        }
    }
    h
}

fn draw_channel(model: ChannelModel, m: usize, users: usize, rng: &mut impl Rng) -> CMatrix {
    match model {
        ChannelModel::Rayleigh => cn_matrix(m, users, rng),
        ChannelModel::OneRing => one_ring_channel(m, users, rng),
    }
}

// √(βEs)·H̄·W + √N0·Z with standard CN draws.
fn colored_noise(hbar: &CMatrix, cols: usize, es: f64, n0: f64, beta: f64, rng: &mut impl Rng) -> CMatrix {
    let m = hbar.rows();
    let w = cn_matrix(hbar.cols(), cols, rng);
    let z = cn_matrix(m, cols, rng);
    let mut out = z.scale(n0.sqrt());
    if beta > 0.0 && hbar.cols() > 0 {
        out += &(hbar * &w).scale((beta * es).sqrt());
    }
    out
}

/// Draws the channels and pilot noise for `trial`. The standard-normal draws
/// depend only on `(seed, trial)`; SNR and IoT only rescale them.
pub fn gen_realization(cfg: &SystemConfig, trial: u64) -> Realization {
    let mut rng = trial_rng(cfg.seed, trial, STREAM_REALIZATION);
    let (n0, beta) = derive_powers(cfg);
    let h = draw_channel(cfg.channel_model, cfg.m, cfg.k, &mut rng);
    let hbar = draw_channel(cfg.channel_model, cfg.m, cfg.n_interf, &mut rng);
    let noise = colored_noise(&hbar, cfg.n, cfg.es, n0, beta, &mut rng);
    Realization { h, hbar, noise, partition: cfg.partition(), n0, beta }
}

/// Draws `n_coh` uniformly chosen constellation symbols per UE and the
/// matching received signals.
pub fn gen_symbols(cfg: &SystemConfig, real: &Realization, trial: u64) -> SymbolBlock {
    let mut rng = trial_rng(cfg.seed, trial, STREAM_SYMBOLS);
    let order = constellation_size(cfg.modulation);
    let indices: Vec<usize> = (0..cfg.k * cfg.n_coh).map(|_| rng.random_range(0..order)).collect();
    let s = CMatrix::from_row_major(cfg.k, cfg.n_coh, modulate(&indices, cfg.modulation, cfg.es));
    let noise = colored_noise(&real.hbar, cfg.n_coh, cfg.es, real.n0, real.beta, &mut rng);
    let y = &(&real.h * &s) + &noise;
    SymbolBlock { indices, s, y }
}

/// `(1/N)·Σ n^i (n^i)^H`, hermitized.
pub fn sample_covariance(noise: &CMatrix) -> CMatrix {
    let n = noise.cols().max(1) as f64;
    let r = matmul_nh(noise, noise).expect("always conformable").scale(1.0 / n);
    hermitize(&r).expect("square")
}

pub fn constellation_size(modulation: Modulation) -> usize {
    match modulation {
        Modulation::Qpsk => 4,
        Modulation::Qam16 => 16,
    }
}

// Gray-coded per-axis amplitude levels, indexed by the axis bits.
fn axis_levels(modulation: Modulation) -> &'static [f64] {
    match modulation {
        Modulation::Qpsk => &[-1.0, 1.0],
        // 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
        Modulation::Qam16 => &[-3.0, -1.0, 3.0, 1.0],
    }
}

fn axis_bits(modulation: Modulation) -> u32 {
    match modulation {
        Modulation::Qpsk => 1,
        Modulation::Qam16 => 2,
    }
}

fn axis_scale(modulation: Modulation, es: f64) -> f64 {
    match modulation {
        Modulation::Qpsk => (es / 2.0).sqrt(),
        Modulation::Qam16 => (es / 10.0).sqrt(),
    }
}

/// Constellation point for a Gray-coded index (in-phase bits high).
pub fn constellation_point(index: usize, modulation: Modulation, es: f64) -> Complex64 {
    let bits = axis_bits(modulation);
    let levels = axis_levels(modulation);
    let mask = (1usize << bits) - 1;
    let i = levels[(index >> bits) & mask];
    let q = levels[index & mask];
    Complex64::new(i, q) * axis_scale(modulation, es)
}

/// Maps constellation indices to symbols with average energy `es`.
pub fn modulate(indices: &[usize], modulation: Modulation, es: f64) -> Vec<Complex64> {
    indices.iter().map(|&i| constellation_point(i, modulation, es)).collect()
}

// Nearest per-axis level; an exact tie keeps the smaller level.
fn slice_axis(x: f64, levels: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].partial_cmp(&levels[b]).unwrap());
    let mut best = order[0];
    let mut best_d = (x - levels[best]).abs();
    for &i in &order[1..] {
        let d = (x - levels[i]).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Index of the Euclidean-nearest constellation point. Exact midpoints go to
/// the point with the smaller real part, then the smaller imaginary part.
pub fn slice_index(symbol: Complex64, modulation: Modulation, es: f64) -> usize {
    let scale = axis_scale(modulation, es);
    let levels = axis_levels(modulation);
    let i = slice_axis(symbol.re / scale, levels);
    let q = slice_axis(symbol.im / scale, levels);
    (i << axis_bits(modulation)) | q
}

/// Nearest constellation point.
pub fn slice(symbol: Complex64, modulation: Modulation, es: f64) -> Complex64 {
    constellation_point(slice_index(symbol, modulation, es), modulation, es)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matmul_nh;

    fn approx(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn powers_pure_awgn() {
        let cfg = SystemConfig { es: 1.0, snr_db: 0.0, iot_db: 0.0, ..Default::default() };
        let (n0, beta) = derive_powers(&cfg);
        assert!((n0 - 1.0).abs() < 1e-15);
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn powers_invert_iot_definition() {
        for (snr, iot, n0_exp, beta_exp) in [(10.0, 10.0, 0.1, 0.9), (20.0, 10.0, 0.01, 0.09)] {
            let cfg = SystemConfig { es: 1.0, snr_db: snr, iot_db: iot, ..Default::default() };
            let (n0, beta) = derive_powers(&cfg);
            assert!((n0 - n0_exp).abs() < 1e-12);
            assert!((beta - beta_exp).abs() < 1e-12);
            // forward IoT definition reproduces the knob
            let iot_back = 10.0 * ((beta * cfg.es + n0) / n0).log10();
            assert!((iot_back - iot).abs() < 1e-10);
        }
    }

    #[test]
    fn balanced_partition() {
        assert_eq!(ClusterPartition::balanced(8, 3).sizes(), &[3, 3, 2]);
        assert_eq!(ClusterPartition::balanced(8, 3).offsets(), &[0, 3, 6]);
        assert_eq!(ClusterPartition::balanced(32, 4).sizes(), &[8, 8, 8, 8]);
        let p = ClusterPartition::balanced(17, 5);
        assert_eq!(p.total(), 17);
        let (lo, hi) = (p.sizes().iter().min().unwrap(), p.sizes().iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn realization_is_deterministic() {
        let cfg = SystemConfig::default();
        let a = gen_realization(&cfg, 5);
        let b = gen_realization(&cfg, 5);
        assert_eq!(a, b);
        let c = gen_realization(&cfg, 6);
        assert_ne!(a.h, c.h);
        let cfg2 = SystemConfig { channel_model: ChannelModel::OneRing, ..cfg };
        assert_eq!(gen_realization(&cfg2, 1), gen_realization(&cfg2, 1));
    }

    #[test]
    fn white_noise_sample_covariance_converges() {
        let cfg = SystemConfig { m: 8, k: 2, c: 2, n: 10_000, snr_db: 3.0, iot_db: 0.0, ..Default::default() };
        let real = gen_realization(&cfg, 0);
        let r = real.sample_covariance();
        let target = CMatrix::identity(8).scale(real.n0);
        let rel = (&r - &target).frob_norm() / target.frob_norm();
        assert!(rel < 0.1, "rel = {rel}");
    }

    #[test]
    fn sample_covariance_outer_product() {
        let n = CMatrix::from_rows(&[vec![(1.0, 0.0)], vec![(0.0, 1.0)]]);
        let r = sample_covariance(&n);
        let expect = CMatrix::from_rows(&[vec![(1.0, 0.0), (0.0, -1.0)], vec![(0.0, 1.0), (1.0, 0.0)]]);
        assert!((&r - &expect).frob_norm() < 1e-15);
        assert_eq!(sample_covariance(&CMatrix::zeros(3, 4)), CMatrix::zeros(3, 3));
    }

    #[test]
    fn sample_covariance_matches_loop_oracle() {
        let cfg = SystemConfig { m: 4, k: 1, c: 1, n: 6, ..Default::default() };
        let noise = gen_realization(&cfg, 3).noise;
        let mut oracle = CMatrix::zeros(4, 4);
        for i in 0..6 {
            let col = noise.column(i);
            oracle += &matmul_nh(&col, &col).unwrap();
        }
        let oracle = oracle.scale(1.0 / 6.0);
        assert!((&sample_covariance(&noise) - &oracle).frob_norm() < 1e-12);
    }

    #[test]
    fn constellation_energy() {
        for modulation in [Modulation::Qpsk, Modulation::Qam16] {
            for es in [1.0, 2.5] {
                let q = constellation_size(modulation);
                let e: f64 = (0..q).map(|i| constellation_point(i, modulation, es).norm_sqr()).sum::<f64>() / q as f64;
                assert!((e - es).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        // adjacent per-axis levels must differ in exactly one bit
        let levels = axis_levels(Modulation::Qam16);
        let mut by_level: Vec<(f64, usize)> = levels.iter().copied().zip(0..).collect();
        by_level.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in by_level.windows(2) {
            assert_eq!((w[0].1 ^ w[1].1).count_ones(), 1);
        }
    }

    #[test]
    fn slicing_examples() {
        let s10 = 10f64.sqrt();
        let got = slice(Complex64::new(0.9, 0.9), Modulation::Qam16, 1.0);
        assert!(approx(got, Complex64::new(3.0, 3.0) / s10));
        for i in 0..16 {
            let p = constellation_point(i, Modulation::Qam16, 1.0);
            assert_eq!(slice_index(p, Modulation::Qam16, 1.0), i);
        }
        // tie at the origin: smaller real part, then smaller imaginary part
        let origin = slice(Complex64::new(0.0, 0.0), Modulation::Qam16, 1.0);
        assert!(approx(origin, Complex64::new(-1.0, -1.0) / s10));
        let qpsk = slice(Complex64::new(0.3, -2.0), Modulation::Qpsk, 2.0);
        assert!(approx(qpsk, Complex64::new(1.0, -1.0)));
    }

    #[test]
    fn symbols_follow_model() {
        let cfg = SystemConfig { m: 8, k: 2, c: 2, n: 16, n_coh: 10, ..Default::default() };
        let real = gen_realization(&cfg, 0);
        let block = gen_symbols(&cfg, &real, 0);
        assert_eq!(block.s.shape(), (2, 10));
        assert_eq!(block.y.shape(), (8, 10));
        for (idx, z) in block.indices.iter().zip(block.s.data()) {
            assert!(approx(constellation_point(*idx, cfg.modulation, cfg.es), *z));
        }
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::default().validate().is_ok());
        let bad = [
            SystemConfig { k: 0, ..Default::default() },
            SystemConfig { m: 4, k: 4, ..Default::default() },
            SystemConfig { c: 0, ..Default::default() },
            SystemConfig { n: 4, ..Default::default() },
            SystemConfig { iot_db: -1.0, ..Default::default() },
            SystemConfig { es: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert_eq!("qam16".parse::<Modulation>().unwrap(), Modulation::Qam16);
        assert_eq!("one_ring".parse::<ChannelModel>().unwrap(), ChannelModel::OneRing);
        assert!("bpsk".parse::<Modulation>().is_err());
    }
}
