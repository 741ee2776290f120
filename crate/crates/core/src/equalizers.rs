//! Equalizers and decompositions.
//!
//! Every routine works on pre-scaled noise samples `X = [n^1 … n^N]/√N`, so
//! that the sample covariance is `R̂ = X X^H`. The same convention lets the
//! rank-`r` factor `G` from the low-rank decomposition stand in for `X`
//! without any other change.
//!
//! The centralized forms double as oracles for the per-cluster forms that the
//! fabric protocols in [`crate::dbpnet`] invoke.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numerics::{
    hermitize, hpd_solve, matmul_hn, matmul_nh, svd, CMatrix, Cholesky, NumericsError,
};
use crate::scenario::ClusterPartition;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EqualizerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    /// The concatenated effective covariance is `CK×CK` but has rank at most
    /// the number of samples.
    #[error("{algorithm} needs at least {needed} noise samples, got {got}")]
    InsufficientSamples { algorithm: Algorithm, needed: usize, got: usize },
    #[error("inconsistent inputs: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, EqualizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Zf,
    Lmmse,
    Bdac,
    Sdr,
    Cdr,
    Bcd,
    BcdLrd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Zf,
        Algorithm::Lmmse,
        Algorithm::Bdac,
        Algorithm::Sdr,
        Algorithm::Cdr,
        Algorithm::Bcd,
        Algorithm::BcdLrd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Zf => "zf",
            Algorithm::Lmmse => "lmmse",
            Algorithm::Bdac => "bdac",
            Algorithm::Sdr => "sdr",
            Algorithm::Cdr => "cdr",
            Algorithm::Bcd => "bcd",
            Algorithm::BcdLrd => "bcd-lrd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown algorithm '{s}' (expected zf,lmmse,bdac,sdr,cdr,bcd,bcd-lrd)"))
    }
}

/// A `K×M` equalization matrix with its per-cluster column blocks.
#[derive(Debug, Clone)]
pub struct EqualizerResult {
    pub w: CMatrix,
    pub blocks: Vec<CMatrix>,
    pub algorithm: Algorithm,
    /// BCD sweeps performed; 0 for closed-form equalizers.
    pub iterations: usize,
}

impl EqualizerResult {
    pub fn from_full(w: CMatrix, partition: &ClusterPartition, algorithm: Algorithm, iterations: usize) -> Self {
        let blocks = partition.split_cols(&w);
        Self { w, blocks, algorithm, iterations }
    }

    pub fn from_blocks(blocks: Vec<CMatrix>, algorithm: Algorithm, iterations: usize) -> Self {
        let refs: Vec<&CMatrix> = blocks.iter().collect();
        let w = CMatrix::hstack(&refs);
        Self { w, blocks, algorithm, iterations }
    }

    /// `ŝ = W·y` for every column of `y`.
    pub fn apply(&self, y: &CMatrix) -> CMatrix {
        &self.w * y
    }
}

/// Generic LMMSE weights `(H^H R^{-1} H + I/Es)^{-1} H^H R^{-1}` via two
/// Hermitian solves.
pub fn lmmse_weights(h: &CMatrix, r: &CMatrix, es: f64) -> Result<CMatrix> {
    if r.rows() != h.rows() {
        return Err(EqualizerError::Shape(format!("R is {:?} but H is {:?}", r.shape(), h.shape())));
    }
    let rinv_h = hpd_solve(r, h)?;
    let z = hermitize(&matmul_hn(h, &rinv_h)?)?.add_diag(1.0 / es);
    Ok(hpd_solve(&z, &rinv_h.h())?)
}

/// Centralized LMMSE equalizer with the sample covariance `rhat`.
pub fn lmmse_centralized(h: &CMatrix, rhat: &CMatrix, es: f64, partition: &ClusterPartition) -> Result<EqualizerResult> {
    let w = lmmse_weights(h, rhat, es)?;
    Ok(EqualizerResult::from_full(w, partition, Algorithm::Lmmse, 0))
}

/// Zero-forcing `(H^H H)^{-1} H^H`.
pub fn zf_centralized(h: &CMatrix, partition: &ClusterPartition) -> Result<EqualizerResult> {
    let gram = hermitize(&matmul_hn(h, h)?)?;
    let w = Cholesky::factor_strict(&gram)?.solve(&h.h())?;
    Ok(EqualizerResult::from_full(w, partition, Algorithm::Zf, 0))
}

/// What a DU computes locally from `H_c` and `R̂_cc`: the compression matrix
/// `Q_c = H_c^H R̂_cc^{-1}` and its Gram contribution `Q_c H_c`.
#[derive(Debug, Clone)]
pub struct LocalCompression {
    pub q: CMatrix,
    pub gram: CMatrix,
}

pub fn local_compression(h_c: &CMatrix, r_cc: &CMatrix) -> Result<LocalCompression> {
    let q = hpd_solve(r_cc, h_c)?.h();
    let gram = hermitize(&(&q * h_c))?;
    Ok(LocalCompression { q, gram })
}

/// `Σ_c Q_c H_c + I/Es`, accumulated in cluster order.
pub fn bdac_gram<'a>(grams: impl IntoIterator<Item = &'a CMatrix>, es: f64) -> CMatrix {
    gram_sum(grams).add_diag(1.0 / es)
}

pub fn gram_sum<'a>(grams: impl IntoIterator<Item = &'a CMatrix>) -> CMatrix {
    let mut it = grams.into_iter();
    let mut acc = it.next().expect("at least one cluster").clone();
    for g in it {
        acc += g;
    }
    acc
}

/// Block-diagonal approximate covariance MMSE:
/// `W_c = (Σ_j H_j^H R_jj^{-1} H_j + I/Es)^{-1} H_c^H R_cc^{-1}`.
pub fn bdac_mmse(h_blocks: &[CMatrix], r_blocks: &[CMatrix], es: f64) -> Result<EqualizerResult> {
    if h_blocks.len() != r_blocks.len() || h_blocks.is_empty() {
        return Err(EqualizerError::Shape("need one covariance block per channel block".into()));
    }
    let locals = h_blocks
        .iter()
        .zip(r_blocks)
        .map(|(h, r)| local_compression(h, r))
        .collect::<Result<Vec<_>>>()?;
    let z = bdac_gram(locals.iter().map(|l| &l.gram), es);
    let factor = Cholesky::factor(&z)?;
    let blocks = locals.iter().map(|l| factor.solve(&l.q)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(EqualizerResult::from_blocks(blocks, Algorithm::Bdac, 0))
}

/// Compressed data a DU ships to the CU in the dimensionality-reduction
/// equalizers.
#[derive(Debug, Clone)]
pub struct CompressedView {
    /// `Q_c y_c` for each symbol, `K×n_sym`.
    pub qy: CMatrix,
    /// `Q_c H_c`, `K×K`.
    pub qh: CMatrix,
    /// `Q_c X_c`, `K×L`.
    pub qn: CMatrix,
}

pub fn compress_local(q: &CMatrix, h_c: &CMatrix, x_c: &CMatrix, y_c: &CMatrix) -> CompressedView {
    CompressedView { qy: q * y_c, qh: q * h_c, qn: q * x_c }
}

/// CU-side output of a dimensionality-reduction equalizer.
#[derive(Debug, Clone)]
pub struct DrOutput {
    /// Equalizer in the compressed domain: `K×K` (sDR) or `K×CK` (cDR).
    pub compressed_w: CMatrix,
    /// `ŝ`, `K×n_sym`.
    pub estimate: CMatrix,
}

/// Superimposes the compressed views and equalizes.
pub fn sdr_combine(views: &[CompressedView], es: f64) -> Result<DrOutput> {
    let first = views.first().ok_or_else(|| EqualizerError::Shape("no clusters".into()))?;
    let mut ybar = first.qy.clone();
    let mut hbar = first.qh.clone();
    let mut nbar = first.qn.clone();
    for v in &views[1..] {
        ybar += &v.qy;
        hbar += &v.qh;
        nbar += &v.qn;
    }
    let rbar = hermitize(&matmul_nh(&nbar, &nbar)?)?;
    let w = lmmse_weights(&hbar, &rbar, es)?;
    let estimate = &w * &ybar;
    Ok(DrOutput { compressed_w: w, estimate })
}

/// Concatenates the compressed views and equalizes. Refuses when there are
/// fewer samples than the `CK` effective dimensions.
pub fn cdr_combine(views: &[CompressedView], es: f64) -> Result<DrOutput> {
    let first = views.first().ok_or_else(|| EqualizerError::Shape("no clusters".into()))?;
    let dim: usize = views.iter().map(|v| v.qh.rows()).sum();
    let samples = first.qn.cols();
    if samples < dim {
        return Err(EqualizerError::InsufficientSamples { algorithm: Algorithm::Cdr, needed: dim, got: samples });
    }
    let ys: Vec<&CMatrix> = views.iter().map(|v| &v.qy).collect();
    let hs: Vec<&CMatrix> = views.iter().map(|v| &v.qh).collect();
    let ns: Vec<&CMatrix> = views.iter().map(|v| &v.qn).collect();
    let ytil = CMatrix::vstack(&ys);
    let htil = CMatrix::vstack(&hs);
    let ntil = CMatrix::vstack(&ns);
    let rtil = hermitize(&matmul_nh(&ntil, &ntil)?)?;
    let w = lmmse_weights(&htil, &rtil, es)?;
    let estimate = &w * &ytil;
    Ok(DrOutput { compressed_w: w, estimate })
}

/// Library form of a dimensionality-reduction equalizer.
#[derive(Debug, Clone)]
pub struct DrResult {
    pub output: DrOutput,
    /// The equivalent `K×M` equalizer acting on uncompressed `y`.
    pub effective: EqualizerResult,
    pub compression: Vec<CMatrix>,
}

/// Per-cluster inputs for the dimensionality-reduction equalizers.
#[derive(Debug, Clone)]
pub struct ClusterInput {
    pub h: CMatrix,
    /// Scaled samples `X_c`.
    pub x: CMatrix,
    /// Received signals `y_c`, `M_c×n_sym`.
    pub y: CMatrix,
}

fn compress_all(clusters: &[ClusterInput]) -> Result<(Vec<CMatrix>, Vec<CompressedView>)> {
    let mut qs = Vec::with_capacity(clusters.len());
    let mut views = Vec::with_capacity(clusters.len());
    for cl in clusters {
        let r_cc = hermitize(&matmul_nh(&cl.x, &cl.x)?)?;
        let local = local_compression(&cl.h, &r_cc)?;
        views.push(compress_local(&local.q, &cl.h, &cl.x, &cl.y));
        qs.push(local.q);
    }
    Ok((qs, views))
}

/// Superimposed dimensionality-reduction MMSE.
pub fn sdr_mmse(clusters: &[ClusterInput], es: f64) -> Result<DrResult> {
    let (qs, views) = compress_all(clusters)?;
    let output = sdr_combine(&views, es)?;
    let blocks: Vec<CMatrix> = qs.iter().map(|q| &output.compressed_w * q).collect();
    Ok(DrResult { output, effective: EqualizerResult::from_blocks(blocks, Algorithm::Sdr, 0), compression: qs })
}

/// Concatenated dimensionality-reduction MMSE.
pub fn cdr_mmse(clusters: &[ClusterInput], es: f64) -> Result<DrResult> {
    let (qs, views) = compress_all(clusters)?;
    let output = cdr_combine(&views, es)?;
    let mut blocks = Vec::with_capacity(qs.len());
    let mut c0 = 0;
    for q in &qs {
        let part = output.compressed_w.col_block(c0, q.rows());
        blocks.push(&part * q);
        c0 += q.rows();
    }
    Ok(DrResult { output, effective: EqualizerResult::from_blocks(blocks, Algorithm::Cdr, 0), compression: qs })
}

/// Superimposed global compression `[Q_1, …, Q_C]`.
pub fn superimposed_compression(qs: &[CMatrix]) -> CMatrix {
    let refs: Vec<&CMatrix> = qs.iter().collect();
    CMatrix::hstack(&refs)
}

/// Concatenated global compression `blkdiag(Q_1, …, Q_C)`.
pub fn concatenated_compression(qs: &[CMatrix]) -> CMatrix {
    let refs: Vec<&CMatrix> = qs.iter().collect();
    CMatrix::blkdiag(&refs)
}

/// MSE matrix of LMMSE estimation from `Q·y`:
/// `Es·I − Es·H^HQ^H(QHH^HQ^H + QR̂Q^H/Es)^{-1}QH`.
pub fn mse_matrix(h: &CMatrix, rhat: &CMatrix, q: &CMatrix, es: f64) -> Result<CMatrix> {
    let qh = q * h;
    let qrq = matmul_nh(&(q * rhat), q)?;
    let inner = hermitize(&(&matmul_nh(&qh, &qh)? + &qrq.scale(1.0 / es)))?;
    let x = hpd_solve(&inner, &qh)?;
    let k = h.cols();
    let e = &CMatrix::identity(k).scale(es) - &matmul_hn(&qh, &x)?.scale(es);
    Ok(hermitize(&e)?)
}

/// Error covariance `E[(Wy − s)(Wy − s)^H] = Es(WH − I)(WH − I)^H + W R W^H`
/// of any linear equalizer.
pub fn error_covariance(w: &CMatrix, h: &CMatrix, r: &CMatrix, es: f64) -> Result<CMatrix> {
    let k = h.cols();
    let bias = &(w * h) - &CMatrix::identity(k);
    let signal = matmul_nh(&bias, &bias)?.scale(es);
    let noise = matmul_nh(&(w * r), w)?;
    Ok(hermitize(&(&signal + &noise))?)
}

fn check_blocks(w_blocks: &[CMatrix], h_blocks: &[CMatrix], x_blocks: &[CMatrix]) -> Result<()> {
    if w_blocks.len() != h_blocks.len() || h_blocks.len() != x_blocks.len() || w_blocks.is_empty() {
        return Err(EqualizerError::Shape("block counts differ".into()));
    }
    Ok(())
}

// Σ_c W_c H_c and Σ_c W_c X_c.
fn block_products(w_blocks: &[CMatrix], h_blocks: &[CMatrix], x_blocks: &[CMatrix]) -> (CMatrix, CMatrix) {
    let mut wh = &w_blocks[0] * &h_blocks[0];
    let mut wx = &w_blocks[0] * &x_blocks[0];
    for c in 1..w_blocks.len() {
        wh += &(&w_blocks[c] * &h_blocks[c]);
        wx += &(&w_blocks[c] * &x_blocks[c]);
    }
    (wh, wx)
}

/// Sample-form MMSE objective `Es·‖WH − I‖_F² + ‖W X‖_F²`, the closed-form
/// expectation over `s` of `(1/N)Σ_i ‖WHs + Wn^i − s‖²`.
pub fn objective_sample(w_blocks: &[CMatrix], h_blocks: &[CMatrix], x_blocks: &[CMatrix], es: f64) -> Result<f64> {
    check_blocks(w_blocks, h_blocks, x_blocks)?;
    let (wh, wx) = block_products(w_blocks, h_blocks, x_blocks);
    let k = wh.rows();
    Ok(es * (&wh - &CMatrix::identity(k)).frob_norm_sq() + wx.frob_norm_sq())
}

/// Gradient of [`objective_sample`] with respect to block `c`:
/// `2Es(WH − I)H_c^H + 2(WX)X_c^H`. Its real and imaginary parts are the
/// partial derivatives along the real and imaginary parts of `W_c`.
pub fn objective_gradient(
    w_blocks: &[CMatrix],
    h_blocks: &[CMatrix],
    x_blocks: &[CMatrix],
    es: f64,
    c: usize,
) -> Result<CMatrix> {
    check_blocks(w_blocks, h_blocks, x_blocks)?;
    let (wh, wx) = block_products(w_blocks, h_blocks, x_blocks);
    let k = wh.rows();
    let bias = &wh - &CMatrix::identity(k);
    let g = &matmul_nh(&bias, &h_blocks[c])?.scale(2.0 * es) + &matmul_nh(&wx, &x_blocks[c])?.scale(2.0);
    Ok(g)
}

/// Per-cluster state for block coordinate descent. The local Gram
/// `Es·H_cH_c^H + X_cX_c^H` is factored once and reused in every sweep.
#[derive(Debug, Clone)]
pub struct BcdBlock {
    pub h: CMatrix,
    pub x: CMatrix,
    gram: Cholesky,
    xxh: CMatrix,
}

impl BcdBlock {
    pub fn new(h: CMatrix, x: CMatrix, es: f64) -> Result<Self> {
        if h.rows() != x.rows() {
            return Err(EqualizerError::Shape(format!("H_c has {} rows, samples have {}", h.rows(), x.rows())));
        }
        let xxh = hermitize(&matmul_nh(&x, &x)?)?;
        let gram = Cholesky::factor(&hermitize(&(&matmul_nh(&h, &h)?.scale(es) + &xxh))?)?;
        Ok(Self { h, x, gram, xxh })
    }

    pub fn antennas(&self) -> usize {
        self.h.rows()
    }

    pub fn samples(&self) -> usize {
        self.x.cols()
    }
}

/// Communication variables circulating around the ring: `A = Σ W_j H_j`
/// (`K×K`) and `B = Σ W_j X_j` (`K×L`).
#[derive(Debug, Clone, PartialEq)]
pub struct CommVars {
    pub a: CMatrix,
    pub b: CMatrix,
}

impl CommVars {
    pub fn zeros(k: usize, samples: usize) -> Self {
        Self { a: CMatrix::zeros(k, k), b: CMatrix::zeros(k, samples) }
    }
}

/// Exact minimizer of the sample objective in `W_c` with the other blocks
/// fixed, given the running sums `A`, `B` that still include `W_c^prev`:
///
/// `W_c = (Es(I − A + W_c^prev H_c)H_c^H − (B − W_c^prev X_c)X_c^H)
///        · (Es H_cH_c^H + X_cX_c^H)^{-1}`
pub fn bcd_block_update(block: &BcdBlock, comm: &CommVars, w_prev: &CMatrix, es: f64) -> Result<CMatrix> {
    let k = comm.a.rows();
    let own_h = w_prev * &block.h;
    let mut lhs = &CMatrix::identity(k) - &comm.a;
    lhs += &own_h;
    let signal = matmul_nh(&lhs, &block.h)?.scale(es);
    let cross = &matmul_nh(&comm.b, &block.x)? - &(w_prev * &block.xxh);
    let rhs = &signal - &cross;
    Ok(block.gram.solve_right(&rhs)?)
}

/// Replaces block `c`'s contribution in the running sums:
/// `A ← A + (W_new − W_old)H_c`, `B ← B + (W_new − W_old)X_c`.
pub fn advance_comm(block: &BcdBlock, comm: &mut CommVars, w_old: &CMatrix, w_new: &CMatrix) {
    let delta = w_new - w_old;
    comm.a += &(&delta * &block.h);
    comm.b += &(&delta * &block.x);
}

/// Starting point for BCD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcdInit {
    /// Block-diagonal approximate covariance MMSE.
    Bdac,
    Zero,
}

/// Sweep budget and optional early stop on relative block change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdStop {
    pub max_sweeps: usize,
    pub tol: Option<f64>,
}

impl BcdStop {
    pub fn sweeps(t: usize) -> Self {
        Self { max_sweeps: t, tol: None }
    }

    pub fn tolerance(tol: f64, max_sweeps: usize) -> Self {
        Self { max_sweeps, tol: Some(tol) }
    }

    pub fn done(&self, sweep: usize, rel_change: f64) -> bool {
        sweep >= self.max_sweeps || self.tol.is_some_and(|t| rel_change < t)
    }
}

impl Default for BcdStop {
    fn default() -> Self {
        Self::sweeps(4)
    }
}

/// Initial blocks and communication variables.
#[derive(Debug, Clone)]
pub struct BcdStart {
    pub w: Vec<CMatrix>,
    pub comm: CommVars,
}

/// BDAC initialization. `A⁰ = Z^{-1} Σ_c Q_cH_c` equals `Σ_c W_c⁰H_c` and is
/// formed from the Gram sum directly; `B⁰ = Σ_c W_c⁰X_c` is accumulated in
/// cluster order.
pub fn bcd_start_bdac(blocks: &[BcdBlock], r_local: &[CMatrix], es: f64) -> Result<BcdStart> {
    if blocks.len() != r_local.len() || blocks.is_empty() {
        return Err(EqualizerError::Shape("need one local covariance per block".into()));
    }
    let locals = blocks
        .iter()
        .zip(r_local)
        .map(|(b, r)| local_compression(&b.h, r))
        .collect::<Result<Vec<_>>>()?;
    let s = gram_sum(locals.iter().map(|l| &l.gram));
    let z = s.add_diag(1.0 / es);
    let factor = Cholesky::factor(&z)?;
    let w = locals.iter().map(|l| factor.solve(&l.q)).collect::<std::result::Result<Vec<_>, _>>()?;
    let a = factor.solve(&s)?;
    let mut b = &w[0] * &blocks[0].x;
    for c in 1..blocks.len() {
        b += &(&w[c] * &blocks[c].x);
    }
    Ok(BcdStart { w, comm: CommVars { a, b } })
}

pub fn bcd_start_zero(blocks: &[BcdBlock]) -> BcdStart {
    let k = blocks[0].h.cols();
    let w = blocks.iter().map(|b| CMatrix::zeros(k, b.antennas())).collect();
    BcdStart { w, comm: CommVars::zeros(k, blocks[0].samples()) }
}

/// Library form of Gauss–Seidel BCD over per-cluster blocks.
#[derive(Debug, Clone)]
pub struct BcdSolver {
    blocks: Vec<BcdBlock>,
    w: Vec<CMatrix>,
    comm: CommVars,
    es: f64,
    sweeps: usize,
}

impl BcdSolver {
    pub fn new(blocks: Vec<BcdBlock>, start: BcdStart, es: f64) -> Self {
        Self { blocks, w: start.w, comm: start.comm, es, sweeps: 0 }
    }

    pub fn blocks(&self) -> &[BcdBlock] {
        &self.blocks
    }

    pub fn w(&self) -> &[CMatrix] {
        &self.w
    }

    pub fn comm(&self) -> &CommVars {
        &self.comm
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Updates block `c` in place and returns `‖ΔW_c‖_F²`.
    pub fn update_block(&mut self, c: usize) -> Result<f64> {
        let w_new = bcd_block_update(&self.blocks[c], &self.comm, &self.w[c], self.es)?;
        advance_comm(&self.blocks[c], &mut self.comm, &self.w[c], &w_new);
        let delta = (&w_new - &self.w[c]).frob_norm_sq();
        self.w[c] = w_new;
        Ok(delta)
    }

    /// One pass over all blocks; returns `‖ΔW‖_F / ‖W‖_F`.
    pub fn sweep(&mut self) -> Result<f64> {
        let mut delta = 0.0;
        for c in 0..self.blocks.len() {
            delta += self.update_block(c)?;
        }
        self.sweeps += 1;
        let norm: f64 = self.w.iter().map(CMatrix::frob_norm_sq).sum();
        Ok(if norm > 0.0 { (delta / norm).sqrt() } else { delta.sqrt() })
    }

    pub fn run(&mut self, stop: BcdStop) -> Result<f64> {
        let mut change = f64::INFINITY;
        while !stop.done(self.sweeps, change) {
            change = self.sweep()?;
        }
        Ok(change)
    }

    pub fn objective(&self) -> f64 {
        let hs: Vec<CMatrix> = self.blocks.iter().map(|b| b.h.clone()).collect();
        let xs: Vec<CMatrix> = self.blocks.iter().map(|b| b.x.clone()).collect();
        objective_sample(&self.w, &hs, &xs, self.es).expect("consistent blocks")
    }

    pub fn into_result(self, algorithm: Algorithm) -> EqualizerResult {
        EqualizerResult::from_blocks(self.w, algorithm, self.sweeps)
    }
}

/// BCD-MMSE from BDAC (or zero) initialization. `r_local` are the local
/// covariances used by the BDAC start; they differ from `X_cX_c^H` only when
/// the samples have been replaced by a low-rank factor.
pub fn bcd_mmse(
    h_blocks: &[CMatrix],
    x_blocks: &[CMatrix],
    r_local: &[CMatrix],
    es: f64,
    init: BcdInit,
    stop: BcdStop,
) -> Result<EqualizerResult> {
    let blocks = h_blocks
        .iter()
        .zip(x_blocks)
        .map(|(h, x)| BcdBlock::new(h.clone(), x.clone(), es))
        .collect::<Result<Vec<_>>>()?;
    let start = match init {
        BcdInit::Bdac => bcd_start_bdac(&blocks, r_local, es)?,
        BcdInit::Zero => bcd_start_zero(&blocks),
    };
    let mut solver = BcdSolver::new(blocks, start, es);
    solver.run(stop)?;
    Ok(solver.into_result(Algorithm::Bcd))
}

/// How many singular triplets each low-rank step keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    Fixed(usize),
    /// Keep `σ_i > τ·σ_1`.
    Threshold(f64),
}

impl RankRule {
    pub const DEFAULT_THRESHOLD: f64 = 0.05;

    fn resolve(&self, s: &[f64]) -> usize {
        let cap = s.len();
        match *self {
            RankRule::Fixed(r) => r.min(cap),
            RankRule::Threshold(tau) => {
                let s1 = s.first().copied().unwrap_or(0.0);
                s.iter().filter(|&&x| x > tau * s1).count().clamp(1, cap.max(1))
            }
        }
    }
}

/// What one DU passes on in the low-rank relay: `D_c = U_cΣ_c` and `V_c`.
#[derive(Debug, Clone)]
pub struct LrdRelay {
    pub d: CMatrix,
    pub v: CMatrix,
}

/// One step of the low-rank relay: rank-`r` decomposition of
/// `[D_{c−1}V_{c−1}^H ; X_c]`.
pub fn lrd_step(prev: Option<&LrdRelay>, x_c: &CMatrix, rule: RankRule) -> Result<LrdRelay> {
    let stacked = match prev {
        Some(p) => CMatrix::vstack(&[&matmul_nh(&p.d, &p.v)?, x_c]),
        None => x_c.clone(),
    };
    let full = svd(&stacked)?;
    let r = rule.resolve(&full.s);
    let t = full.truncate(r);
    Ok(LrdRelay { d: t.us(), v: t.v })
}

fn check_rank(rule: RankRule, m: usize, n: usize) -> Result<()> {
    if let RankRule::Fixed(r) = rule {
        if r == 0 || r > m.min(n) {
            return Err(NumericsError::RankOutOfRange { rank: r, rows: m, cols: n }.into());
        }
    }
    Ok(())
}

/// Sequential low-rank decomposition over the daisy chain. Returns the
/// per-cluster factors `G_c = X_c V_C` with `Σ_c`-stacked `G G^H ≈ X X^H`.
pub fn lrd_sequential(x_blocks: &[CMatrix], rule: RankRule) -> Result<Vec<CMatrix>> {
    let first = x_blocks.first().ok_or_else(|| EqualizerError::Shape("no clusters".into()))?;
    let m: usize = x_blocks.iter().map(CMatrix::rows).sum();
    check_rank(rule, m, first.cols())?;
    let mut relay: Option<LrdRelay> = None;
    for x in x_blocks {
        relay = Some(lrd_step(relay.as_ref(), x, rule)?);
    }
    let v = relay.expect("non-empty").v;
    Ok(x_blocks.iter().map(|x| x * &v).collect())
}

/// Rank-`r` factor of the full sample matrix by a single global SVD.
pub fn lrd_global(x: &CMatrix, r: usize) -> Result<CMatrix> {
    let t = crate::numerics::truncated_svd(x, r)?;
    Ok(x * &t.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{gen_realization, sample_covariance, SystemConfig};

    fn scalar(v: f64) -> CMatrix {
        CMatrix::from_diag(&[v])
    }

    #[test]
    fn lmmse_scalar_cases() {
        let p = ClusterPartition::balanced(1, 1);
        let w = lmmse_centralized(&scalar(1.0), &scalar(1.0), 1.0, &p).unwrap();
        assert!((w.w[(0, 0)].re - 0.5).abs() < 1e-15);
        let w = lmmse_centralized(&scalar(2.0), &scalar(1.0), 1.0, &p).unwrap();
        assert!((w.w[(0, 0)].re - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zf_cases() {
        let p = ClusterPartition::balanced(3, 1);
        let w = zf_centralized(&CMatrix::identity(3), &p).unwrap();
        assert!((&w.w - &CMatrix::identity(3)).frob_norm() < 1e-15);
        let w = zf_centralized(&CMatrix::identity(3).scale(2.0), &p).unwrap();
        assert!((&w.w - &CMatrix::identity(3).scale(0.5)).frob_norm() < 1e-15);
        let rank_deficient = CMatrix::from_rows(&[vec![(1.0, 0.0), (1.0, 0.0)], vec![(1.0, 0.0), (1.0, 0.0)], vec![(0.0, 0.0), (0.0, 0.0)]]);
        assert!(zf_centralized(&rank_deficient, &p).is_err());
    }

    #[test]
    fn result_blocks_concatenate_to_w() {
        let cfg = SystemConfig { m: 8, k: 2, c: 3, n: 16, ..Default::default() };
        let real = gen_realization(&cfg, 0);
        let res = lmmse_centralized(&real.h, &real.sample_covariance(), 1.0, &real.partition).unwrap();
        assert_eq!(res.blocks.iter().map(CMatrix::cols).collect::<Vec<_>>(), vec![3, 3, 2]);
        let rebuilt = EqualizerResult::from_blocks(res.blocks.clone(), Algorithm::Lmmse, 0);
        assert_eq!(rebuilt.w, res.w);
    }

    #[test]
    fn cdr_refuses_too_few_samples() {
        let cfg = SystemConfig { m: 16, k: 4, c: 4, n: 8, ..Default::default() };
        let real = gen_realization(&cfg, 0);
        let x = real.scaled_samples();
        let clusters: Vec<ClusterInput> = (0..4)
            .map(|c| ClusterInput {
                h: real.partition.rows_of(&real.h, c),
                x: real.partition.rows_of(&x, c),
                y: CMatrix::zeros(4, 1),
            })
            .collect();
        let err = cdr_mmse(&clusters, 1.0).unwrap_err();
        assert_eq!(err, EqualizerError::InsufficientSamples { algorithm: Algorithm::Cdr, needed: 16, got: 8 });
    }

    #[test]
    fn objective_at_zero_is_es_k() {
        let cfg = SystemConfig { m: 8, k: 3, c: 2, n: 16, ..Default::default() };
        let real = gen_realization(&cfg, 1);
        let x = real.scaled_samples();
        let hs = real.partition.split_rows(&real.h);
        let xs = real.partition.split_rows(&x);
        let w: Vec<CMatrix> = hs.iter().map(|h| CMatrix::zeros(3, h.rows())).collect();
        for es in [1.0, 2.5] {
            let f = objective_sample(&w, &hs, &xs, es).unwrap();
            assert!((f - es * 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_scalar_closed_form() {
        // M = K = 1, H = 1, R̂ = ε: f(w) = Es|w − 1|² + ε|w|²
        let eps: f64 = 0.01;
        let es = 2.0;
        let h = vec![scalar(1.0)];
        let x = vec![scalar(eps.sqrt())];
        let w_opt = es / (es + eps);
        let f = objective_sample(&[scalar(w_opt)], &h, &x, es).unwrap();
        let expect = es * (w_opt - 1.0f64).powi(2) + eps * w_opt * w_opt;
        assert!((f - expect).abs() < 1e-15);
        assert!((expect - es * eps / (es + eps)).abs() < 1e-15);
        let p = ClusterPartition::balanced(1, 1);
        let lm = lmmse_centralized(&h[0], &sample_covariance(&CMatrix::from_diag(&[eps.sqrt()])), es, &p).unwrap();
        assert!((lm.w[(0, 0)].re - w_opt).abs() < 1e-14);
    }

    #[test]
    fn rank_rule_resolution() {
        let s = [10.0, 5.0, 0.4, 0.1];
        assert_eq!(RankRule::Fixed(2).resolve(&s), 2);
        assert_eq!(RankRule::Fixed(9).resolve(&s), 4);
        assert_eq!(RankRule::Threshold(0.05).resolve(&s), 2);
        assert_eq!(RankRule::Threshold(0.9).resolve(&s), 1);
    }

    #[test]
    fn lrd_rejects_bad_rank() {
        let x = vec![CMatrix::identity(3), CMatrix::identity(3).row_block(0, 2)];
        assert!(matches!(
            lrd_sequential(&x, RankRule::Fixed(0)),
            Err(EqualizerError::Numerics(NumericsError::RankOutOfRange { .. }))
        ));
        assert!(lrd_sequential(&x, RankRule::Fixed(4)).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("mrc".parse::<Algorithm>().is_err());
    }
}
