//! Centralized and decentralized LMMSE equalization for massive-MIMO uplink
//! under colored noise, together with a simulated decentralized baseband
//! processing (DBP) fabric that accounts for every entry moved between
//! distributed units.

pub mod dbpnet;
pub mod equalizers;
pub mod harness;
pub mod numerics;
pub mod scenario;
pub mod verify;

pub use num_complex::Complex64;
pub use equalizers::{Algorithm, EqualizerError, EqualizerResult};
pub use numerics::{CMatrix, NumericsError, SvdResult};
pub use scenario::{ChannelModel, ClusterPartition, Modulation, Realization, SymbolBlock, SystemConfig};
