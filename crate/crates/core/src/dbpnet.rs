//! Simulated decentralized baseband processing fabric.
//!
//! Distributed units (DUs) own their antenna cluster's channel, noise samples
//! and received signals. Everything that crosses a DU boundary is a
//! [`Message`] sent through a [`Fabric`], which validates the link against the
//! [`Topology`], logs it and charges it to the [`BandwidthLedger`] at
//! `2 × rows × cols` real entries. Messages from a node to itself never leave
//! the node and are not counted.
//!
//! Symbol-rate payloads carry one column per symbol, so a single message
//! stands for a whole coherence block of per-symbol transfers.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

use crate::equalizers::{
    advance_comm, bcd_block_update, cdr_combine, gram_sum, lmmse_weights, local_compression, sdr_combine,
    Algorithm, BcdBlock, BcdStop, CommVars, CompressedView, EqualizerError, EqualizerResult, LrdRelay, RankRule,
};
use crate::numerics::{hermitize, matmul_hn, matmul_nh, CMatrix, Cholesky, NumericsError};
use crate::scenario::Realization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Du(usize),
    Cu,
    /// Sink for the symbol estimate leaving a daisy chain.
    Decoder,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Du(c) => write!(f, "du{c}"),
            NodeId::Cu => f.write_str("cu"),
            NodeId::Decoder => f.write_str("dec"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Lrd,
    Preprocessing,
    /// Sweep number, starting at 1.
    Iteration(usize),
    Symbol,
}

impl Phase {
    /// One-time phases are amortized over the coherence block.
    pub fn is_per_symbol(self) -> bool {
        self == Phase::Symbol
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Lrd => f.write_str("lrd"),
            Phase::Preprocessing => f.write_str("preprocessing"),
            Phase::Iteration(t) => write!(f, "iteration{t}"),
            Phase::Symbol => f.write_str("symbol"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PayloadKind {
    RawChannel,
    RawSamples,
    RawSignal,
    /// `Q_c H_c`.
    CompressedChannel,
    /// `Q_c X_c`.
    CompressedSamples,
    /// `Q_c y_c`.
    CompressedSignal,
    /// Running sum of `H_c^H R_cc^{-1} H_c`.
    GramPartial,
    /// `Σ_c H_c^H R_cc^{-1} H_c + I/Es`.
    Gram,
    Amat,
    Bmat,
    Dmat,
    Vmat,
    /// Running sum of `W_c y_c`.
    SymbolPartial,
    /// `(Σ‖ΔW_c‖², Σ‖W_c‖²)` packed as one complex entry.
    Control,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadKind::RawChannel => "raw_channel",
            PayloadKind::RawSamples => "raw_samples",
            PayloadKind::RawSignal => "raw_signal",
            PayloadKind::CompressedChannel => "compressed_channel",
            PayloadKind::CompressedSamples => "compressed_samples",
            PayloadKind::CompressedSignal => "compressed_signal",
            PayloadKind::GramPartial => "gram_partial",
            PayloadKind::Gram => "gram",
            PayloadKind::Amat => "amat",
            PayloadKind::Bmat => "bmat",
            PayloadKind::Dmat => "dmat",
            PayloadKind::Vmat => "vmat",
            PayloadKind::SymbolPartial => "symbol_partial",
            PayloadKind::Control => "control",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Message {
    pub phase: Phase,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: PayloadKind,
    pub payload: CMatrix,
}

impl Message {
    /// One complex entry counts as two real entries.
    pub fn real_entry_count(&self) -> u64 {
        2 * (self.payload.rows() * self.payload.cols()) as u64
    }

    pub fn entry(&self) -> LogEntry {
        LogEntry {
            phase: self.phase,
            src: self.src,
            dst: self.dst,
            kind: self.kind,
            rows: self.payload.rows(),
            cols: self.payload.cols(),
            real_entries: self.real_entry_count(),
        }
    }
}

/// Shape-only record of a delivered message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry {
    pub phase: Phase,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: PayloadKind,
    pub rows: usize,
    pub cols: usize,
    pub real_entries: u64,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.phase, self.src, self.dst, self.kind, self.rows, self.cols, self.real_entries
        )
    }
}

pub const LOG_HEADER: &str = "phase,src,dst,payload_kind,rows,cols,real_entries";

/// Real-entry counts per phase and per directed link.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BandwidthLedger {
    pub phases: BTreeMap<Phase, u64>,
    pub links: BTreeMap<(NodeId, NodeId), u64>,
    pub n_coh: u64,
    /// Symbols carried by the symbol-phase traffic.
    pub symbols: u64,
}

impl BandwidthLedger {
    pub fn new(n_coh: usize) -> Self {
        Self { n_coh: n_coh as u64, ..Self::default() }
    }

    pub fn charge(&mut self, phase: Phase, src: NodeId, dst: NodeId, entries: u64) {
        *self.phases.entry(phase).or_default() += entries;
        *self.links.entry((src, dst)).or_default() += entries;
    }

    pub fn phase(&self, phase: Phase) -> u64 {
        self.phases.get(&phase).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.phases.values().sum()
    }

    pub fn one_time(&self) -> u64 {
        self.phases.iter().filter(|(p, _)| !p.is_per_symbol()).map(|(_, v)| v).sum()
    }

    pub fn iterations(&self) -> u64 {
        self.phases.iter().filter(|(p, _)| matches!(p, Phase::Iteration(_))).map(|(_, v)| v).sum()
    }

    /// `one-time/n_coh + symbol-phase/symbols`, exactly.
    pub fn per_symbol_average(&self) -> Ratio<u64> {
        let one = Ratio::new(self.one_time(), self.n_coh.max(1));
        let sym = if self.symbols == 0 { Ratio::from_integer(0) } else { Ratio::new(self.phase(Phase::Symbol), self.symbols) };
        one + sym
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Star,
    Daisy,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Star => "star",
            TopologyKind::Daisy => "daisy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub c: usize,
}

impl Topology {
    pub fn star(c: usize) -> Self {
        Self { kind: TopologyKind::Star, c }
    }

    pub fn daisy(c: usize) -> Self {
        Self { kind: TopologyKind::Daisy, c }
    }

    pub fn next(&self, c: usize) -> usize {
        (c + 1) % self.c
    }

    pub fn prev(&self, c: usize) -> usize {
        (c + self.c - 1) % self.c
    }

    /// Whether a message of `kind` may travel `src → dst`.
    pub fn permits(&self, src: NodeId, dst: NodeId, kind: PayloadKind) -> bool {
        let du = |n: NodeId| matches!(n, NodeId::Du(c) if c < self.c);
        match self.kind {
            TopologyKind::Star => (du(src) && dst == NodeId::Cu) || (src == NodeId::Cu && du(dst)),
            TopologyKind::Daisy => match (src, dst) {
                (NodeId::Du(a), NodeId::Du(b)) if a < self.c && b < self.c => {
                    b == self.next(a) || (a == self.c - 1 && kind == PayloadKind::Vmat)
                }
                (NodeId::Du(a), NodeId::Decoder) => a == self.c - 1,
                _ => false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DbpError {
    #[error(transparent)]
    Equalizer(#[from] EqualizerError),
    #[error("{topology} topology has no link {src} -> {dst} for {kind}")]
    Link { topology: TopologyKind, src: NodeId, dst: NodeId, kind: PayloadKind },
    #[error("{dst} expected a {kind} message that never arrived")]
    Missing { dst: NodeId, kind: PayloadKind },
    #[error("protocol needs {expected} topology, fabric is {got}")]
    WrongTopology { expected: TopologyKind, got: TopologyKind },
    #[error("fabric has {fabric} clusters but {dus} DUs were supplied")]
    ClusterCount { fabric: usize, dus: usize },
    #[error("{0} missing; run the low-rank relay first")]
    NoLowRankFactor(NodeId),
}

impl From<NumericsError> for DbpError {
    fn from(e: NumericsError) -> Self {
        DbpError::Equalizer(e.into())
    }
}

pub type Result<T> = std::result::Result<T, DbpError>;

/// In-process message fabric with an ordered queue.
#[derive(Debug, Clone)]
pub struct Fabric {
    topology: Topology,
    queue: VecDeque<Message>,
    log: Vec<LogEntry>,
    ledger: BandwidthLedger,
    ledger_fault: i64,
}

impl Fabric {
    pub fn new(topology: Topology, n_coh: usize) -> Self {
        Self { topology, queue: VecDeque::new(), log: Vec::new(), ledger: BandwidthLedger::new(n_coh), ledger_fault: 0 }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn ledger(&self) -> &BandwidthLedger {
        &self.ledger
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Test hook: the next charged message is booked with `delta` extra
    /// entries in the ledger (the log keeps the true count).
    pub fn inject_ledger_fault(&mut self, delta: i64) {
        self.ledger_fault = delta;
    }

    /// The message log in the dump format, header first.
    pub fn dump_log(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for e in &self.log {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn send(&mut self, phase: Phase, src: NodeId, dst: NodeId, kind: PayloadKind, payload: CMatrix) -> Result<()> {
        if !self.topology.permits(src, dst, kind) {
            return Err(DbpError::Link { topology: self.topology.kind, src, dst, kind });
        }
        let msg = Message { phase, src, dst, kind, payload };
        let entry = msg.entry();
        let charged = (entry.real_entries as i64 + std::mem::take(&mut self.ledger_fault)) as u64;
        self.ledger.charge(phase, src, dst, charged);
        self.log.push(entry);
        self.queue.push_back(msg);
        Ok(())
    }

    /// Removes the oldest pending message of `kind` addressed to `dst`.
    pub fn recv(&mut self, dst: NodeId, kind: PayloadKind) -> Result<Message> {
        let pos = self
            .queue
            .iter()
            .position(|m| m.dst == dst && m.kind == kind)
            .ok_or(DbpError::Missing { dst, kind })?;
        Ok(self.queue.remove(pos).expect("position is in range"))
    }

    /// Send-and-deliver; a node handing data to itself bypasses the fabric.
    pub fn transfer(&mut self, phase: Phase, src: NodeId, dst: NodeId, kind: PayloadKind, payload: CMatrix) -> Result<CMatrix> {
        if src == dst {
            return Ok(payload);
        }
        self.send(phase, src, dst, kind, payload)?;
        Ok(self.recv(dst, kind)?.payload)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn set_symbols(&mut self, symbols: usize) {
        self.ledger.symbols = symbols as u64;
    }
}

/// Record of a DU's private data being read by another node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForeignRead {
    pub owner: NodeId,
    pub reader: NodeId,
    pub field: &'static str,
}

/// Private state of one distributed unit. Raw data is reachable only through
/// accessors that name the reader; reads by any other node are traced.
#[derive(Debug, Clone)]
pub struct DuState {
    id: usize,
    h: CMatrix,
    x: CMatrix,
    y: CMatrix,
    g: Option<CMatrix>,
    trace: RefCell<Vec<ForeignRead>>,
}

impl DuState {
    /// `x` holds the scaled noise samples, `y` one column per symbol.
    pub fn new(id: usize, h: CMatrix, x: CMatrix, y: CMatrix) -> Self {
        Self { id, h, x, y, g: None, trace: RefCell::new(Vec::new()) }
    }

    pub fn node(&self) -> NodeId {
        NodeId::Du(self.id)
    }

    fn touch(&self, reader: NodeId, field: &'static str) {
        if reader != self.node() {
            self.trace.borrow_mut().push(ForeignRead { owner: self.node(), reader, field });
        }
    }

    pub fn h(&self, reader: NodeId) -> &CMatrix {
        self.touch(reader, "h");
        &self.h
    }

    pub fn x(&self, reader: NodeId) -> &CMatrix {
        self.touch(reader, "x");
        &self.x
    }

    pub fn y(&self, reader: NodeId) -> &CMatrix {
        self.touch(reader, "y");
        &self.y
    }

    pub fn g(&self, reader: NodeId) -> Option<&CMatrix> {
        self.touch(reader, "g");
        self.g.as_ref()
    }

    pub fn foreign_reads(&self) -> Vec<ForeignRead> {
        self.trace.borrow().clone()
    }

    /// Samples used by BCD: the low-rank factor when present, else `X_c`.
    fn bcd_samples(&self, use_lrd: bool) -> Result<&CMatrix> {
        let me = self.node();
        if use_lrd {
            self.g(me).ok_or(DbpError::NoLowRankFactor(me))
        } else {
            Ok(self.x(me))
        }
    }

    fn local_covariance(&self) -> Result<CMatrix> {
        let x = self.x(self.node());
        Ok(hermitize(&matmul_nh(x, x)?)?)
    }
}

/// One DU per cluster from a realization and its received signals.
pub fn make_dus(real: &Realization, y: &CMatrix) -> Vec<DuState> {
    let x = real.scaled_samples();
    let p = &real.partition;
    (0..p.len())
        .map(|c| DuState::new(c, p.rows_of(&real.h, c), p.rows_of(&x, c), p.rows_of(y, c)))
        .collect()
}

/// What a protocol produces.
#[derive(Debug, Clone)]
pub struct ProtocolOutput {
    /// `ŝ`, one column per symbol.
    pub estimate: CMatrix,
    /// The equivalent `K×M` equalizer.
    pub equalizer: EqualizerResult,
    /// Compressed-domain equalizer of the dimensionality-reduction schemes.
    pub compressed: Option<CMatrix>,
}

fn expect_topology(fabric: &Fabric, kind: TopologyKind, dus: &[DuState]) -> Result<()> {
    if fabric.topology.kind != kind {
        return Err(DbpError::WrongTopology { expected: kind, got: fabric.topology.kind });
    }
    if fabric.topology.c != dus.len() {
        return Err(DbpError::ClusterCount { fabric: fabric.topology.c, dus: dus.len() });
    }
    Ok(())
}

fn symbol_count(dus: &[DuState]) -> usize {
    dus[0].y.cols()
}

/// Centralized equalization on a star: every DU ships its raw data to the CU.
/// LMMSE needs the noise samples; ZF does not and they are not sent.
pub fn run_centralized_star(fabric: &mut Fabric, dus: &[DuState], es: f64, algorithm: Algorithm) -> Result<ProtocolOutput> {
    expect_topology(fabric, TopologyKind::Star, dus)?;
    let with_samples = match algorithm {
        Algorithm::Lmmse => true,
        Algorithm::Zf => false,
        other => return Err(EqualizerError::Shape(format!("{other} is not a centralized equalizer")).into()),
    };
    let cu = NodeId::Cu;
    let mut hs = Vec::with_capacity(dus.len());
    let mut xs = Vec::with_capacity(dus.len());
    let mut ys = Vec::with_capacity(dus.len());
    for du in dus {
        let me = du.node();
        hs.push(fabric.transfer(Phase::Preprocessing, me, cu, PayloadKind::RawChannel, du.h(me).clone())?);
        if with_samples {
            xs.push(fabric.transfer(Phase::Preprocessing, me, cu, PayloadKind::RawSamples, du.x(me).clone())?);
        }
    }
    for du in dus {
        let me = du.node();
        ys.push(fabric.transfer(Phase::Symbol, me, cu, PayloadKind::RawSignal, du.y(me).clone())?);
    }
    fabric.set_symbols(symbol_count(dus));
    let stack = |v: &[CMatrix]| CMatrix::vstack(&v.iter().collect::<Vec<_>>());
    let h = stack(&hs);
    let y = stack(&ys);
    let w = if with_samples {
        let x = stack(&xs);
        lmmse_weights(&h, &hermitize(&matmul_nh(&x, &x)?)?, es)?
    } else {
        let gram = hermitize(&matmul_hn(&h, &h)?)?;
        Cholesky::factor_strict(&gram)?.solve(&h.h())?
    };
    let estimate = &w * &y;
    let sizes: Vec<usize> = hs.iter().map(CMatrix::rows).collect();
    let partition = crate::scenario::ClusterPartition::from_sizes(sizes);
    Ok(ProtocolOutput { estimate, equalizer: EqualizerResult::from_full(w, &partition, algorithm, 0), compressed: None })
}

fn run_dr_star(fabric: &mut Fabric, dus: &[DuState], es: f64, algorithm: Algorithm) -> Result<ProtocolOutput> {
    expect_topology(fabric, TopologyKind::Star, dus)?;
    let cu = NodeId::Cu;
    let mut qs = Vec::with_capacity(dus.len());
    let mut views = Vec::with_capacity(dus.len());
    for du in dus {
        let me = du.node();
        let local = local_compression(du.h(me), &du.local_covariance()?)?;
        let qh = fabric.transfer(Phase::Preprocessing, me, cu, PayloadKind::CompressedChannel, &local.q * du.h(me))?;
        let qn = fabric.transfer(Phase::Preprocessing, me, cu, PayloadKind::CompressedSamples, &local.q * du.x(me))?;
        views.push(CompressedView { qy: CMatrix::zeros(0, 0), qh, qn });
        qs.push(local.q);
    }
    for (du, (view, q)) in dus.iter().zip(views.iter_mut().zip(&qs)) {
        let me = du.node();
        view.qy = fabric.transfer(Phase::Symbol, me, cu, PayloadKind::CompressedSignal, q * du.y(me))?;
    }
    fabric.set_symbols(symbol_count(dus));
    let out = match algorithm {
        Algorithm::Sdr => sdr_combine(&views, es)?,
        Algorithm::Cdr => cdr_combine(&views, es)?,
        _ => unreachable!("dimensionality reduction only"),
    };
    // Effective M-space blocks, for analysis only; never sent.
    let blocks: Vec<CMatrix> = match algorithm {
        Algorithm::Sdr => qs.iter().map(|q| &out.compressed_w * q).collect(),
        _ => {
            let mut c0 = 0;
            qs.iter()
                .map(|q| {
                    let b = &out.compressed_w.col_block(c0, q.rows()) * q;
                    c0 += q.rows();
                    b
                })
                .collect()
        }
    };
    Ok(ProtocolOutput {
        estimate: out.estimate,
        equalizer: EqualizerResult::from_blocks(blocks, algorithm, 0),
        compressed: Some(out.compressed_w),
    })
}

/// Superimposed dimensionality reduction over a star.
pub fn run_sdr_star(fabric: &mut Fabric, dus: &[DuState], es: f64) -> Result<ProtocolOutput> {
    run_dr_star(fabric, dus, es, Algorithm::Sdr)
}

/// Concatenated dimensionality reduction over a star; same transfers as sDR.
pub fn run_cdr_star(fabric: &mut Fabric, dus: &[DuState], es: f64) -> Result<ProtocolOutput> {
    run_dr_star(fabric, dus, es, Algorithm::Cdr)
}

/// Daisy symbol output: partial sums DU 0 → … → DU C−1 → decoder.
fn daisy_symbols(fabric: &mut Fabric, dus: &[DuState], w: &[CMatrix]) -> Result<CMatrix> {
    let topo = fabric.topology;
    let mut partial: Option<CMatrix> = None;
    for (c, du) in dus.iter().enumerate() {
        let me = du.node();
        let mine = &w[c] * du.y(me);
        let acc = match partial.take() {
            Some(mut p) => {
                p += &mine;
                p
            }
            None => mine,
        };
        let dst = if c + 1 == topo.c { NodeId::Decoder } else { NodeId::Du(c + 1) };
        partial = Some(fabric.transfer(Phase::Symbol, me, dst, PayloadKind::SymbolPartial, acc)?);
    }
    fabric.set_symbols(symbol_count(dus));
    Ok(partial.expect("at least one DU"))
}

/// Block-diagonal approximate covariance MMSE on either topology.
///
/// Star: Gram partials go up to the CU, the regularized Gram comes back down,
/// and symbol partials go up. Daisy: Gram partials accumulate towards the last
/// DU, which relays the regularized Gram around the ring; symbols leave
/// through the decoder link.
pub fn run_bdac(fabric: &mut Fabric, dus: &[DuState], es: f64) -> Result<ProtocolOutput> {
    if fabric.topology.c != dus.len() {
        return Err(DbpError::ClusterCount { fabric: fabric.topology.c, dus: dus.len() });
    }
    let c_count = dus.len();
    let locals = dus
        .iter()
        .map(|du| Ok(local_compression(du.h(du.node()), &du.local_covariance()?)?))
        .collect::<Result<Vec<_>>>()?;
    let mut z_at = vec![CMatrix::zeros(0, 0); c_count];
    match fabric.topology.kind {
        TopologyKind::Star => {
            let grams = dus
                .iter()
                .zip(&locals)
                .map(|(du, l)| fabric.transfer(Phase::Preprocessing, du.node(), NodeId::Cu, PayloadKind::GramPartial, l.gram.clone()))
                .collect::<Result<Vec<_>>>()?;
            let z = gram_sum(grams.iter()).add_diag(1.0 / es);
            for (c, du) in dus.iter().enumerate() {
                z_at[c] = fabric.transfer(Phase::Preprocessing, NodeId::Cu, du.node(), PayloadKind::Gram, z.clone())?;
            }
        }
        TopologyKind::Daisy => {
            let mut acc = locals[0].gram.clone();
            for c in 1..c_count {
                let mut got = fabric.transfer(Phase::Preprocessing, NodeId::Du(c - 1), NodeId::Du(c), PayloadKind::GramPartial, acc)?;
                got += &locals[c].gram;
                acc = got;
            }
            let last = c_count - 1;
            z_at[last] = acc.add_diag(1.0 / es);
            let mut from = last;
            for _ in 0..last {
                let to = fabric.topology.next(from);
                z_at[to] = fabric.transfer(Phase::Preprocessing, NodeId::Du(from), NodeId::Du(to), PayloadKind::Gram, z_at[from].clone())?;
                from = to;
            }
        }
    }
    let w = locals
        .iter()
        .zip(&z_at)
        .map(|(l, z)| Ok(Cholesky::factor(z)?.solve(&l.q)?))
        .collect::<Result<Vec<_>>>()?;
    let estimate = match fabric.topology.kind {
        TopologyKind::Star => {
            let parts = dus
                .iter()
                .zip(&w)
                .map(|(du, wc)| fabric.transfer(Phase::Symbol, du.node(), NodeId::Cu, PayloadKind::SymbolPartial, wc * du.y(du.node())))
                .collect::<Result<Vec<_>>>()?;
            fabric.set_symbols(symbol_count(dus));
            gram_sum(parts.iter())
        }
        TopologyKind::Daisy => daisy_symbols(fabric, dus, &w)?,
    };
    Ok(ProtocolOutput { estimate, equalizer: EqualizerResult::from_blocks(w, Algorithm::Bdac, 0), compressed: None })
}

/// Sequential low-rank relay. Each DU decomposes `[D V^H ; X_c]`, passes
/// `D_c`, `V_c` on, and the last DU broadcasts `V_C`; every DU then keeps
/// `G_c = X_c V_C` locally. Returns the per-cluster factors.
pub fn run_lrd_daisy(fabric: &mut Fabric, dus: &mut [DuState], rule: RankRule) -> Result<Vec<CMatrix>> {
    expect_topology(fabric, TopologyKind::Daisy, dus)?;
    let m: usize = dus.iter().map(|d| d.h.rows()).sum();
    let n = dus[0].x.cols();
    if let RankRule::Fixed(r) = rule {
        if r == 0 || r > m.min(n) {
            return Err(NumericsError::RankOutOfRange { rank: r, rows: m, cols: n }.into());
        }
    }
    let last = dus.len() - 1;
    let mut relay: Option<LrdRelay> = None;
    for c in 0..=last {
        let me = dus[c].node();
        let step = crate::equalizers::lrd_step(relay.as_ref(), dus[c].x(me), rule)?;
        relay = Some(if c < last {
            let to = NodeId::Du(c + 1);
            let d = fabric.transfer(Phase::Lrd, me, to, PayloadKind::Dmat, step.d)?;
            let v = fabric.transfer(Phase::Lrd, me, to, PayloadKind::Vmat, step.v)?;
            LrdRelay { d, v }
        } else {
            step
        });
    }
    let v_final = relay.expect("non-empty").v;
    let mut gs = Vec::with_capacity(dus.len());
    for c in 0..=last {
        let v = fabric.transfer(Phase::Lrd, NodeId::Du(last), NodeId::Du(c), PayloadKind::Vmat, v_final.clone())?;
        let du = &mut dus[c];
        let g = du.x(du.node()) * &v;
        du.g = Some(g.clone());
        gs.push(g);
    }
    Ok(gs)
}

/// Per-DU record of a BCD run.
#[derive(Debug, Clone, Default)]
pub struct BcdTrace {
    /// Relative block change after each sweep.
    pub changes: Vec<f64>,
}

/// Gauss–Seidel BCD-MMSE around a daisy chain.
///
/// Preprocessing: Gram partials travel once around the ring so DU 0 learns
/// `Z`; a second lap carries `Z` and the running `Σ W_c⁰X_c`; the last DU
/// closes the ring with `A⁰ = Z^{-1}Σ_c Q_cH_c` and `B⁰`. Each sweep then
/// passes `(A, B)` through every DU and back to DU 0. With a tolerance stop
/// the running change norms ride along as one extra complex entry per hop.
pub fn run_bcd_daisy(fabric: &mut Fabric, dus: &[DuState], es: f64, stop: BcdStop, use_lrd: bool) -> Result<(ProtocolOutput, BcdTrace)> {
    expect_topology(fabric, TopologyKind::Daisy, dus)?;
    let topo = fabric.topology;
    let last = dus.len() - 1;
    let pre = Phase::Preprocessing;

    let mut blocks = Vec::with_capacity(dus.len());
    let mut locals = Vec::with_capacity(dus.len());
    for du in dus {
        let me = du.node();
        blocks.push(BcdBlock::new(du.h(me).clone(), du.bcd_samples(use_lrd)?.clone(), es)?);
        locals.push(local_compression(du.h(me), &du.local_covariance()?)?);
    }

    // Lap 1: Gram partial sums, closing at DU 0.
    let mut s = locals[0].gram.clone();
    for c in 0..=last {
        let to = topo.next(c);
        let got = fabric.transfer(pre, NodeId::Du(c), NodeId::Du(to), PayloadKind::GramPartial, s.clone())?;
        if c < last {
            s = got;
            s += &locals[to].gram;
        }
    }
    // DU C−1 holds the complete sum; DU 0 received it on the closing hop.
    let s_full = s;
    let z = s_full.add_diag(1.0 / es);

    // Lap 2: Z and the running B⁰.
    let mut w: Vec<CMatrix> = Vec::with_capacity(dus.len());
    let mut z_here = z.clone();
    let mut b = CMatrix::zeros(0, 0);
    for c in 0..=last {
        let factor = Cholesky::factor(&z_here)?;
        let wc = factor.solve(&locals[c].q)?;
        let mine = &wc * &blocks[c].x;
        b = if c == 0 {
            mine
        } else {
            let mut acc = b;
            acc += &mine;
            acc
        };
        w.push(wc);
        if c < last {
            let to = NodeId::Du(c + 1);
            z_here = fabric.transfer(pre, NodeId::Du(c), to, PayloadKind::Gram, z_here)?;
            b = fabric.transfer(pre, NodeId::Du(c), to, PayloadKind::Bmat, b)?;
        } else {
            let a0 = factor.solve(&s_full)?;
            let a = fabric.transfer(pre, NodeId::Du(c), NodeId::Du(0), PayloadKind::Amat, a0)?;
            b = fabric.transfer(pre, NodeId::Du(c), NodeId::Du(0), PayloadKind::Bmat, b)?;
            z_here = a;
        }
    }
    let mut comm = CommVars { a: z_here, b };

    let mut trace = BcdTrace::default();
    let mut sweep = 0;
    let mut change = f64::INFINITY;
    while !stop.done(sweep, change) {
        sweep += 1;
        let phase = Phase::Iteration(sweep);
        let mut ctl = (0.0, 0.0);
        for c in 0..=last {
            let w_new = bcd_block_update(&blocks[c], &comm, &w[c], es)?;
            advance_comm(&blocks[c], &mut comm, &w[c], &w_new);
            ctl.0 += (&w_new - &w[c]).frob_norm_sq();
            ctl.1 += w_new.frob_norm_sq();
            w[c] = w_new;
            let (from, to) = (NodeId::Du(c), NodeId::Du(topo.next(c)));
            let a = fabric.transfer(phase, from, to, PayloadKind::Amat, comm.a)?;
            let b = fabric.transfer(phase, from, to, PayloadKind::Bmat, comm.b)?;
            comm = CommVars { a, b };
            if stop.tol.is_some() {
                let packed = CMatrix::from_rows(&[vec![ctl]]);
                let got = fabric.transfer(phase, from, to, PayloadKind::Control, packed)?;
                ctl = (got[(0, 0)].re, got[(0, 0)].im);
            }
        }
        change = if ctl.1 > 0.0 { (ctl.0 / ctl.1).sqrt() } else { ctl.0.sqrt() };
        trace.changes.push(change);
    }

    let estimate = daisy_symbols(fabric, dus, &w)?;
    let algorithm = if use_lrd { Algorithm::BcdLrd } else { Algorithm::Bcd };
    Ok((
        ProtocolOutput { estimate, equalizer: EqualizerResult::from_blocks(w, algorithm, sweep), compressed: None },
        trace,
    ))
}

/// Closed-form average real entries per symbol.
pub mod bandwidth {
    use num_rational::Ratio;

    fn r(num: u64, den: u64) -> Ratio<u64> {
        Ratio::new(num, den)
    }

    /// Raw-data shipping to a CU: `2M(n_coh + K + N)/n_coh`.
    pub fn centralized(m: u64, k: u64, n: u64, n_coh: u64) -> Ratio<u64> {
        r(2 * m * (n_coh + k + n), n_coh)
    }

    /// Zero-forcing needs no noise samples: `2M(n_coh + K)/n_coh`.
    pub fn zf(m: u64, k: u64, n_coh: u64) -> Ratio<u64> {
        r(2 * m * (n_coh + k), n_coh)
    }

    /// sDR and cDR: `2CK(n_coh + K + N)/n_coh`.
    pub fn dimensionality_reduction(c: u64, k: u64, n: u64, n_coh: u64) -> Ratio<u64> {
        r(2 * c * k * (n_coh + k + n), n_coh)
    }

    /// `C(4K² + 2NK)/n_coh + 2TCK(N + K)/n_coh + 2CK`.
    pub fn bcd(c: u64, k: u64, n: u64, t: u64, n_coh: u64) -> Ratio<u64> {
        r(c * (4 * k * k + 2 * n * k) + 2 * t * c * k * (n + k), n_coh) + Ratio::from_integer(2 * c * k)
    }

    /// BCD on `r` low-rank vectors plus the relay term `((C−1)Mr + 4CNr)/n_coh`.
    pub fn bcd_lrd(m: u64, c: u64, k: u64, n: u64, t: u64, rank: u64, n_coh: u64) -> Ratio<u64> {
        bcd(c, k, rank, t, n_coh) + r((c - 1) * m * rank + 4 * c * n * rank, n_coh)
    }

    /// Relay term as actually transferred hop by hop: `D` and `V` over `C−1`
    /// hops and the `V` broadcast to the other `C−1` DUs, for `M` divisible
    /// by `C`.
    pub fn lrd_relay_hops(m: u64, c: u64, n: u64, rank: u64) -> u64 {
        (c - 1) * m * rank + 4 * (c - 1) * n * rank
    }

    /// Extra hop payload of a tolerance-stopped BCD: one complex per hop.
    pub fn bcd_control(c: u64, t: u64, n_coh: u64) -> Ratio<u64> {
        r(2 * c * t, n_coh)
    }

    /// BDAC on a star: Gram partials up, Gram down, symbol partials up.
    pub fn bdac_star(c: u64, k: u64, n_coh: u64) -> Ratio<u64> {
        r(4 * c * k * k, n_coh) + Ratio::from_integer(2 * c * k)
    }

    /// BDAC on a daisy chain: `C−1` hops each way for the Gram.
    pub fn bdac_daisy(c: u64, k: u64, n_coh: u64) -> Ratio<u64> {
        r(4 * (c - 1) * k * k, n_coh) + Ratio::from_integer(2 * c * k)
    }
}
