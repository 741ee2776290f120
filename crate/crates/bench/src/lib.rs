//! Shared fixtures for the criterion benchmarks.

use dbp_eq::equalizers::ClusterInput;
use dbp_eq::scenario::{gen_realization, gen_symbols};
use dbp_eq::{CMatrix, Realization, SystemConfig};

/// One realization split into per-cluster views.
pub struct Fixture {
    pub cfg: SystemConfig,
    pub real: Realization,
    pub y: CMatrix,
    pub rhat: CMatrix,
    pub h_blocks: Vec<CMatrix>,
    pub x_blocks: Vec<CMatrix>,
    pub r_blocks: Vec<CMatrix>,
}

impl Fixture {
    pub fn new(cfg: SystemConfig) -> Self {
        let real = gen_realization(&cfg, 0);
        let y = gen_symbols(&cfg, &real, 0).y;
        let rhat = real.sample_covariance();
        let p = &real.partition;
        let h_blocks = p.split_rows(&real.h);
        let x_blocks = p.split_rows(&real.scaled_samples());
        let r_blocks = p.diag_blocks(&rhat);
        Self { cfg, real, y, rhat, h_blocks, x_blocks, r_blocks }
    }

    pub fn desk() -> Self {
        Self::new(SystemConfig::default())
    }

    pub fn paper() -> Self {
        Self::new(SystemConfig { m: 128, k: 8, c: 8, n: 192, n_interf: 8, ..SystemConfig::default() })
    }

    pub fn clusters(&self) -> Vec<ClusterInput> {
        let ys = self.real.partition.split_rows(&self.y);
        self.h_blocks
            .iter()
            .zip(&self.x_blocks)
            .zip(ys)
            .map(|((h, x), y)| ClusterInput { h: h.clone(), x: x.clone(), y })
            .collect()
    }
}
