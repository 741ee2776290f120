//! Flat JSON run configuration and its flag overrides.

use std::path::Path;

use dbp_eq::harness::{parse_algorithm_list, RunSpec};
use dbp_eq::{ChannelModel, Modulation, SystemConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ALGORITHMS: &str = "zf,lmmse,bdac,sdr,cdr,bcd,bcd-lrd";

/// Everything a run needs, one key per knob. Unset `n_interf` means `K`;
/// unset `r` means `n_interf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    pub ncoh: usize,
    pub snr: Vec<f64>,
    pub iot: f64,
    pub trials: usize,
    pub channel: String,
    pub modulation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_interf: Option<usize>,
    pub es: f64,
    pub seed: u64,
    pub algorithms: String,
}

impl Default for CliConfig {
    fn default() -> Self {
        let d = SystemConfig::default();
        Self {
            m: d.m,
            k: d.k,
            c: d.c,
            n: d.n,
            t: dbp_eq::harness::DEFAULT_SWEEPS,
            r: None,
            ncoh: d.n_coh,
            snr: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            iot: d.iot_db,
            trials: 50,
            channel: d.channel_model.to_string(),
            modulation: d.modulation.to_string(),
            n_interf: None,
            es: d.es,
            seed: d.seed,
            algorithms: DEFAULT_ALGORITHMS.into(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl CliConfig {
    /// Long-run preset at the larger array size.
    pub fn paper_scale() -> Self {
        Self { m: 128, k: 8, c: 8, n: 192, trials: 100, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path.is_empty() || path == "." {
                ConfigError(format!("config: {inner}"))
            } else {
                ConfigError(format!("config key '{path}': {inner}"))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Same configuration with the defaulted fields spelled out.
    pub fn resolved(&self) -> Self {
        let n_interf = self.n_interf.unwrap_or(self.k);
        Self { n_interf: Some(n_interf), r: Some(self.r.unwrap_or(n_interf)), ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }

    pub fn system(&self) -> Result<SystemConfig, ConfigError> {
        let channel: ChannelModel = self.channel.parse().map_err(|e| ConfigError(format!("config key 'channel': {e}")))?;
        let modulation: Modulation =
            self.modulation.parse().map_err(|e| ConfigError(format!("config key 'modulation': {e}")))?;
        let cfg = SystemConfig {
            m: self.m,
            k: self.k,
            c: self.c,
            n: self.n,
            es: self.es,
            snr_db: self.snr.first().copied().unwrap_or(0.0),
            iot_db: self.iot,
            n_interf: self.n_interf.unwrap_or(self.k),
            n_coh: self.ncoh,
            modulation,
            channel_model: channel,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn run_spec(&self) -> Result<RunSpec, ConfigError> {
        let cfg = self.system()?;
        let algorithms =
            parse_algorithm_list(&self.algorithms).map_err(|e| ConfigError(format!("config key 'algorithms': {e}")))?;
        let mut spec = RunSpec::new(cfg, algorithms, self.snr.clone(), self.trials);
        spec.sweeps = self.t;
        spec.rank = self.r.unwrap_or(spec.cfg.n_interf);
        spec.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(spec)
    }
}
