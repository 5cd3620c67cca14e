use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{SompMode, SompSettings};
use crate::dmmv::{DetectorConfig, DmmvSettings};
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::se::NoiseRecursion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DmmvAmp,
    Somp,
    OracleLs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::DmmvAmp, Algorithm::Somp, Algorithm::OracleLs];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::DmmvAmp => "dmmv_amp",
            Algorithm::Somp => "somp",
            Algorithm::OracleLs => "oracle_ls",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Scenario parameters that stay fixed across the sweep over `G` and `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub devices: usize,
    pub active_devices: usize,
    pub antennas: usize,
    /// `inf` (or the string `"inf"`) gives noiseless observations.
    #[serde(with = "extended_float")]
    pub snr_db: f64,
    #[serde(default)]
    pub pilot_scale: Option<f64>,
    #[serde(default)]
    pub snr_offsets_db: Vec<f64>,
}

impl SystemSpec {
    pub fn at(&self, pilot_len: usize, subcarriers: usize, seed: u64) -> SystemConfig {
        SystemConfig {
            devices: self.devices,
            active_devices: self.active_devices,
            antennas: self.antennas,
            subcarriers,
            pilot_len,
            snr_db: self.snr_db,
            seed,
            pilot_scale: self.pilot_scale,
            snr_offsets_db: self.snr_offsets_db.clone(),
        }
    }
}

/// Floats that may be infinite, written as strings where the format (JSON)
/// has no literal for them.
mod extended_float {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.trim().parse().map_err(|_| D::Error::custom(format!("not a number: {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    #[default]
    Gaussian,
    /// Orthogonal columns; needs `G >= K`.
    Orthogonal,
}

/// SOMP options; `max_atoms` defaults to the number of active devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SompOptions {
    pub max_atoms: Option<usize>,
    pub residual_tol: Option<f64>,
    pub mode: SompMode,
    pub vote_fraction: f64,
}

impl Default for SompOptions {
    fn default() -> Self {
        Self { max_atoms: None, residual_tol: None, mode: SompMode::Joint, vote_fraction: 0.5 }
    }
}

impl SompOptions {
    pub fn settings(&self, active_devices: usize) -> SompSettings {
        SompSettings {
            max_atoms: self.max_atoms.unwrap_or(active_devices).max(1),
            residual_tol: self.residual_tol,
            mode: self.mode,
            vote_fraction: self.vote_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeOptions {
    pub n_samples: usize,
    pub t_max: usize,
    pub noise_recursion: NoiseRecursion,
}

impl Default for SeOptions {
    fn default() -> Self {
        Self { n_samples: 100_000, t_max: 200, noise_recursion: NoiseRecursion::Squared }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    /// Default output directory when none is given on the command line.
    pub dir: Option<PathBuf>,
    /// Write measured wall-clock times; when off `wall_ms` is 0 and the CSV
    /// is a pure function of the configuration.
    pub record_wall_time: bool,
}

/// A full experiment: a sweep over pilot lengths and subcarrier counts with
/// a fixed number of seeded trials per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    pub g_values: Vec<usize>,
    #[serde(default = "single_subcarrier")]
    pub p_values: Vec<usize>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub se_enabled: bool,
    #[serde(default)]
    pub pilots: PilotKind,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: OutputOptions,
    #[serde(default)]
    pub dmmv: DmmvSettings,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub somp: SompOptions,
    #[serde(default)]
    pub se: SeOptions,
}

fn all_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn single_subcarrier() -> Vec<usize> {
    vec![1]
}

fn default_trials() -> usize {
    200
}

impl ExperimentConfig {
    pub fn new(system: SystemSpec, g_values: Vec<usize>, p_values: Vec<usize>, n_trials: usize) -> Self {
        Self {
            system,
            algorithms: all_algorithms(),
            g_values,
            p_values,
            n_trials,
            master_seed: 0,
            se_enabled: false,
            pilots: PilotKind::Gaussian,
            threads: None,
            output: OutputOptions::default(),
            dmmv: DmmvSettings::default(),
            detector: DetectorConfig::default(),
            somp: SompOptions::default(),
            se: SeOptions::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1");
        }
        if self.g_values.is_empty() {
            return bad("g_values must not be empty");
        }
        if self.p_values.is_empty() {
            return bad("p_values must not be empty");
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        if self.se.n_samples < 2 || self.se.t_max == 0 {
            return bad("se.n_samples must be at least 2 and se.t_max at least 1");
        }
        if !(0.0..=1.0).contains(&self.somp.vote_fraction) {
            return bad("somp.vote_fraction must lie in [0, 1]");
        }
        for &g in &self.g_values {
            for &p in &self.p_values {
                let sys = self.system.at(g, p, 0);
                sys.validate()?;
                if self.pilots == PilotKind::Orthogonal && g < sys.devices {
                    return Err(Error::InvalidConfig(format!(
                        "orthogonal pilots need G >= K, got G={g} K={}",
                        sys.devices
                    )));
                }
            }
        }
        self.dmmv.amp.validate()?;
        self.detector.validate()
    }

    /// Algorithms in canonical order without duplicates.
    pub fn algorithm_list(&self) -> Vec<Algorithm> {
        let mut algs = self.algorithms.clone();
        algs.sort_unstable();
        algs.dedup();
        algs
    }
}
