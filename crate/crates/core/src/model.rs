//! Synthetic grant-free access scenarios: sporadic device activity, Rayleigh
//! channels that share one row support across subcarriers, pseudo-random
//! pilots and the noisy per-subcarrier observations `Y_p = S_p X_p + W_p`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Scenario and pilot dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Potential devices `K`.
    pub devices: usize,
    /// Active devices `Ka`.
    pub active_devices: usize,
    /// Base-station antennas `M`.
    pub antennas: usize,
    /// Pilot subcarriers `P`.
    pub subcarriers: usize,
    /// Pilot length in time slots `G`.
    pub pilot_len: usize,
    /// Received SNR in dB; `inf` gives noiseless observations.
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
    /// Per-entry pilot variance; `1/G` when absent.
    #[serde(default)]
    pub pilot_scale: Option<f64>,
    /// Optional per-subcarrier SNR offsets in dB (length `P`).
    #[serde(default)]
    pub snr_offsets_db: Vec<f64>,
}

impl SystemConfig {
    pub fn new(
        devices: usize,
        active_devices: usize,
        antennas: usize,
        subcarriers: usize,
        pilot_len: usize,
        snr_db: f64,
    ) -> Self {
        Self {
            devices,
            active_devices,
            antennas,
            subcarriers,
            pilot_len,
            snr_db,
            seed: 0,
            pilot_scale: None,
            snr_offsets_db: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn pilot_variance(&self) -> f64 {
        self.pilot_scale.unwrap_or(1.0 / self.pilot_len as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.devices == 0 {
            return bad("device count must be at least 1".into());
        }
        if self.active_devices > self.devices {
            return bad(format!("active devices ({}) exceed device count ({})", self.active_devices, self.devices));
        }
        if self.antennas == 0 || self.subcarriers == 0 || self.pilot_len == 0 {
            return bad("antennas, subcarriers and pilot length must be at least 1".into());
        }
        if let Some(s) = self.pilot_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("pilot scale must be positive, got {s}"));
            }
        }
        if self.snr_db.is_nan() {
            return bad("snr_db is NaN".into());
        }
        if !self.snr_offsets_db.is_empty() && self.snr_offsets_db.len() != self.subcarriers {
            return bad(format!(
                "{} SNR offsets given for {} subcarriers",
                self.snr_offsets_db.len(),
                self.subcarriers
            ));
        }
        Ok(())
    }

    fn snr_db_at(&self, p: usize) -> f64 {
        self.snr_db + self.snr_offsets_db.get(p).copied().unwrap_or(0.0)
    }
}

/// Ground truth for one access slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub activity: Vec<bool>,
    /// Sorted indices of the active devices.
    pub support: Vec<usize>,
    /// `X_p` (K x M) per subcarrier; rows of inactive devices are zero.
    #[serde(with = "crate::io::complex_stack")]
    pub channels: Vec<DMatrix<Complex64>>,
    /// Large-scale gains `tau_k` (all one under power control).
    pub large_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `S_p` (G x K) per subcarrier.
    #[serde(with = "crate::io::complex_stack")]
    pub pilots: Vec<DMatrix<Complex64>>,
    /// `Y_p` (G x M) per subcarrier.
    #[serde(with = "crate::io::complex_stack")]
    pub received: Vec<DMatrix<Complex64>>,
    /// True noise variance per subcarrier.
    pub noise_var: Vec<f64>,
}

impl Observation {
    pub fn subcarriers(&self) -> usize {
        self.received.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pilots.len() != self.received.len() || self.pilots.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} pilot matrices vs {} observation matrices",
                self.pilots.len(),
                self.received.len()
            )));
        }
        let (g, k) = self.pilots[0].shape();
        let m = self.received[0].ncols();
        for (p, (s, y)) in self.pilots.iter().zip(&self.received).enumerate() {
            if s.shape() != (g, k) || y.shape() != (g, m) {
                return Err(Error::DimensionMismatch(format!(
                    "subcarrier {p}: pilots {:?}, observations {:?}, expected ({g}, {k}) and ({g}, {m})",
                    s.shape(),
                    y.shape()
                )));
            }
        }
        Ok(())
    }
}

/// A scenario together with the observations it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub scenario: Scenario,
    pub observation: Observation,
}

/// Draws exactly `Ka` active devices uniformly at random.
pub fn generate_activity<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<(Vec<bool>, Vec<usize>)> {
    if cfg.active_devices > cfg.devices {
        return Err(Error::InvalidConfig(format!(
            "active devices ({}) exceed device count ({})",
            cfg.active_devices, cfg.devices
        )));
    }
    let mut support = index::sample(rng, cfg.devices, cfg.active_devices).into_vec();
    support.sort_unstable();
    let mut activity = vec![false; cfg.devices];
    for &k in &support {
        activity[k] = true;
    }
    Ok((activity, support))
}

/// Rayleigh channels per subcarrier with a common row support.
///
/// Row `k` of every `X_p` is i.i.d. `CN(0, tau_k^2)` when device `k` is active
/// and exactly zero otherwise. Each subcarrier draws from its own child stream.
pub fn generate_channels<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    activity: &[bool],
    large_scale: &[f64],
    rng: &mut R,
) -> Vec<DMatrix<Complex64>> {
    (0..cfg.subcarriers)
        .map(|_| {
            let mut sub = rng::child(rng);
            let mut x = DMatrix::zeros(cfg.devices, cfg.antennas);
            for (k, _) in activity.iter().enumerate().filter(|(_, &a)| a) {
                let var = large_scale[k] * large_scale[k];
                for m in 0..cfg.antennas {
                    x[(k, m)] = rng::complex_gaussian(&mut sub, var);
                }
            }
            x
        })
        .collect()
}

/// I.i.d. complex Gaussian pilots with per-entry variance `pilot_scale`.
pub fn generate_pilots<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Vec<DMatrix<Complex64>> {
    let var = cfg.pilot_variance();
    (0..cfg.subcarriers)
        .map(|_| {
            let mut sub = rng::child(rng);
            DMatrix::from_fn(cfg.pilot_len, cfg.devices, |_, _| rng::complex_gaussian(&mut sub, var))
        })
        .collect()
}

/// Pilots with mutually orthogonal columns of squared norm `pilot_scale * G`.
///
/// Requires `G >= K`; obtained from the thin QR factor of a Gaussian draw.
pub fn generate_orthogonal_pilots<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Vec<DMatrix<Complex64>>> {
    if cfg.pilot_len < cfg.devices {
        return Err(Error::InvalidConfig(format!(
            "orthogonal pilots need G >= K, got G={} K={}",
            cfg.pilot_len, cfg.devices
        )));
    }
    let norm = (cfg.pilot_variance() * cfg.pilot_len as f64).sqrt();
    Ok(generate_pilots(cfg, rng).into_iter().map(|s| s.qr().q() * Complex64::new(norm, 0.0)).collect())
}

/// Expected per-measurement signal power `E|[S_p X_p]_gm|^2`.
pub fn signal_power(cfg: &SystemConfig, large_scale: &[f64], activity: &[bool]) -> f64 {
    let channel_power: f64 = activity.iter().zip(large_scale).filter(|(&a, _)| a).map(|(_, t)| t * t).sum();
    cfg.pilot_variance() * channel_power
}

/// Noise variance implied by `snr_db` for the given signal power.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        signal_power / 10f64.powf(snr_db / 10.0)
    }
}

pub fn synthesize_observations<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    scenario: &Scenario,
    pilots: Vec<DMatrix<Complex64>>,
    rng: &mut R,
) -> Result<Observation> {
    if pilots.len() != scenario.channels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} pilot matrices for {} channel matrices",
            pilots.len(),
            scenario.channels.len()
        )));
    }
    let power = signal_power(cfg, &scenario.large_scale, &scenario.activity);
    let mut received = Vec::with_capacity(pilots.len());
    let mut noise_var = Vec::with_capacity(pilots.len());
    for (p, (s, x)) in pilots.iter().zip(&scenario.channels).enumerate() {
        if s.ncols() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "subcarrier {p}: pilots {:?} vs channels {:?}",
                s.shape(),
                x.shape()
            )));
        }
        let var = noise_variance(power, cfg.snr_db_at(p));
        let mut sub = rng::child(rng);
        let mut y = s * x;
        if var > 0.0 {
            y.iter_mut().for_each(|v| *v += rng::complex_gaussian(&mut sub, var));
        }
        received.push(y);
        noise_var.push(var);
    }
    Ok(Observation { pilots, received, noise_var })
}

/// Full scenario plus observations from `cfg.seed`, using Gaussian pilots.
pub fn generate_instance(cfg: &SystemConfig) -> Result<Instance> {
    build_instance(cfg, |cfg, rng| Ok(generate_pilots(cfg, rng)))
}

/// As [`generate_instance`] but with orthogonal-column pilots (`G >= K`).
pub fn generate_instance_orthogonal(cfg: &SystemConfig) -> Result<Instance> {
    build_instance(cfg, generate_orthogonal_pilots)
}

fn build_instance<F>(cfg: &SystemConfig, pilots: F) -> Result<Instance>
where
    F: FnOnce(&SystemConfig, &mut rng::SimRng) -> Result<Vec<DMatrix<Complex64>>>,
{
    cfg.validate()?;
    let seed = |t: u64| rng::stream(rng::derive_seed(cfg.seed, &[t]));
    let (activity, support) = generate_activity(cfg, &mut seed(tag::ACTIVITY))?;
    let large_scale = vec![1.0; cfg.devices];
    let channels = generate_channels(cfg, &activity, &large_scale, &mut seed(tag::CHANNEL));
    let scenario = Scenario { activity, support, channels, large_scale };
    let pilots = pilots(cfg, &mut seed(tag::PILOT))?;
    let observation = synthesize_observations(cfg, &scenario, pilots, &mut seed(tag::NOISE))?;
    Ok(Instance { scenario, observation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, ka: usize) -> SystemConfig {
        SystemConfig::new(k, ka, 4, 3, 10, 20.0).with_seed(11)
    }

    #[test]
    fn activity_has_exactly_ka_ones() {
        let c = SystemConfig::new(1000, 100, 1, 1, 10, 20.0);
        let (a, s) = generate_activity(&c, &mut rng::stream(5)).unwrap();
        assert_eq!(a.iter().filter(|&&x| x).count(), 100);
        assert_eq!(s.len(), 100);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn activity_edge_cases() {
        let (a, s) = generate_activity(&cfg(5, 0), &mut rng::stream(1)).unwrap();
        assert!(a.iter().all(|&x| !x) && s.is_empty());
        let (a, s) = generate_activity(&cfg(5, 5), &mut rng::stream(1)).unwrap();
        assert!(a.iter().all(|&x| x));
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        let mut c = cfg(5, 5);
        c.active_devices = 6;
        assert!(matches!(generate_activity(&c, &mut rng::stream(1)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn inactive_everywhere_gives_zero_channels() {
        let c = cfg(6, 0);
        let xs = generate_channels(&c, &[false; 6], &[1.0; 6], &mut rng::stream(2));
        assert_eq!(xs.len(), 3);
        assert!(xs.iter().all(|x| x.iter().all(|v| *v == Complex64::new(0.0, 0.0))));
    }

    #[test]
    fn instance_is_deterministic_and_shares_support() {
        let c = cfg(30, 4);
        let a = generate_instance(&c).unwrap();
        let b = generate_instance(&c).unwrap();
        assert_eq!(a, b);
        for x in &a.scenario.channels {
            for k in 0..c.devices {
                let zero = x.row(k).iter().all(|v| v.norm() == 0.0);
                assert_eq!(zero, !a.scenario.activity[k]);
            }
        }
        let other = generate_instance(&c.clone().with_seed(12)).unwrap();
        assert_ne!(a.observation.received, other.observation.received);
    }

    #[test]
    fn snr_definition() {
        assert!((noise_variance(1.0, 20.0) - 0.01).abs() < 1e-15);
        assert_eq!(noise_variance(3.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn single_scalar_pilot() {
        let c = SystemConfig::new(1, 1, 1, 1, 1, 10.0);
        let s = generate_pilots(&c, &mut rng::stream(9));
        assert_eq!(s[0].shape(), (1, 1));
        assert!(s[0][(0, 0)].norm() > 0.0);
    }

    #[test]
    fn orthogonal_pilots_have_unit_orthogonal_columns() {
        let c = SystemConfig::new(8, 2, 1, 2, 8, 10.0);
        for s in generate_orthogonal_pilots(&c, &mut rng::stream(4)).unwrap() {
            let gram = s.adjoint() * &s;
            for i in 0..8 {
                for j in 0..8 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - Complex64::new(expect, 0.0)).norm() < 1e-12);
                }
            }
        }
        assert!(generate_orthogonal_pilots(&SystemConfig::new(9, 2, 1, 1, 8, 10.0), &mut rng::stream(4)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(5, 2).validate().is_ok());
        let mut c = cfg(5, 2);
        c.pilot_scale = Some(0.0);
        assert!(c.validate().is_err());
        let mut c = cfg(5, 2);
        c.antennas = 0;
        assert!(c.validate().is_err());
        let mut c = cfg(5, 2);
        c.snr_offsets_db = vec![0.0];
        assert!(c.validate().is_err());
    }
}
