use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig, PilotKind};
use super::metrics::{compute_nmse, compute_pe, mean_stderr, median, NMSE_FLOOR_DB};
use crate::baselines::{oracle_ls, somp};
use crate::dmmv::{masked_estimates, run_dmmv};
use crate::error::{Error, Result};
use crate::model::{generate_instance, generate_instance_orthogonal, noise_variance, Instance};
use crate::rng::{derive_seed, tag};
use crate::se::{em_matched_init, run_se, Prior, SeSettings, SeState};

/// One algorithm run on one seeded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub algorithm: Algorithm,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub trial: usize,
    pub pe: f64,
    pub nmse_db: f64,
    pub iterations: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub algorithm: Algorithm,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub trial: usize,
    pub kind: String,
    pub message: String,
}

/// Aggregate over the successful trials of one (algorithm, G, P) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub algorithm: Algorithm,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub trials: usize,
    pub failures: usize,
    pub pe_mean: Option<f64>,
    pub pe_stderr: Option<f64>,
    pub nmse_db_mean: Option<f64>,
    pub nmse_db_stderr: Option<f64>,
    pub nmse_db_median: Option<f64>,
    pub iterations_mean: Option<f64>,
}

/// State-evolution prediction for one pilot length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SePoint {
    #[serde(rename = "G")]
    pub g: usize,
    pub nmse_db: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub trajectory: Vec<SeState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<ResultRecord>,
    pub failures: Vec<TrialFailure>,
    pub cells: Vec<CellSummary>,
    pub se: Option<Vec<SePoint>>,
}

impl ExperimentResult {
    pub fn cell(&self, algorithm: Algorithm, g: usize, p: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.algorithm == algorithm && c.g == g && c.p == p)
    }

    /// Records of one cell in trial order.
    pub fn cell_records(&self, algorithm: Algorithm, g: usize, p: usize) -> impl Iterator<Item = &ResultRecord> {
        self.records.iter().filter(move |r| r.algorithm == algorithm && r.g == g && r.p == p)
    }
}

/// Scenario seed of a trial; shared by all algorithms so that comparisons
/// within a cell are paired.
pub fn trial_seed(master_seed: u64, g: usize, p: usize, trial: usize) -> u64 {
    derive_seed(master_seed, &[g as u64, p as u64, trial as u64])
}

pub fn trial_instance(cfg: &ExperimentConfig, g: usize, p: usize, trial: usize) -> Result<Instance> {
    let sys = cfg.system.at(g, p, trial_seed(cfg.master_seed, g, p, trial));
    match cfg.pilots {
        PilotKind::Gaussian => generate_instance(&sys),
        PilotKind::Orthogonal => generate_instance_orthogonal(&sys),
    }
}

struct Estimate {
    activity: Vec<bool>,
    x_hat: Vec<DMatrix<Complex64>>,
    iterations: usize,
}

fn estimate(cfg: &ExperimentConfig, algorithm: Algorithm, inst: &Instance) -> Result<Estimate> {
    let obs = &inst.observation;
    match algorithm {
        Algorithm::DmmvAmp => {
            let res = run_dmmv(obs, &cfg.dmmv, &cfg.detector)?;
            Ok(Estimate { x_hat: masked_estimates(&res), activity: res.activity_hat, iterations: res.iterations })
        }
        Algorithm::Somp => {
            let settings = cfg.somp.settings(cfg.system.active_devices);
            let out = somp(&obs.received, &obs.pilots, &settings)?;
            Ok(Estimate { iterations: out.support.len(), activity: out.activity, x_hat: out.x_hat })
        }
        Algorithm::OracleLs => {
            let x_hat = oracle_ls(&obs.received, &obs.pilots, &inst.scenario.support)?;
            Ok(Estimate { activity: inst.scenario.activity.clone(), x_hat, iterations: 1 })
        }
    }
}

fn evaluate(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    inst: &Instance,
    (g, p, trial): (usize, usize, usize),
) -> std::result::Result<ResultRecord, TrialFailure> {
    let start = Instant::now();
    let outcome = estimate(cfg, algorithm, inst).and_then(|est| {
        let elapsed = start.elapsed();
        let pe = compute_pe(&est.activity, &inst.scenario.activity)?;
        let nmse_db = compute_nmse(&est.x_hat, &inst.scenario.channels)?;
        let wall_ms = if cfg.output.record_wall_time { elapsed.as_secs_f64() * 1e3 } else { 0.0 };
        Ok(ResultRecord { algorithm, g, p, trial, pe, nmse_db, iterations: est.iterations, wall_ms })
    });
    outcome.map_err(|e| failure(algorithm, (g, p, trial), &e))
}

fn failure(algorithm: Algorithm, (g, p, trial): (usize, usize, usize), err: &Error) -> TrialFailure {
    TrialFailure { algorithm, g, p, trial, kind: err.kind().to_string(), message: err.to_string() }
}

type Outcome = std::result::Result<ResultRecord, TrialFailure>;

fn run_trial(cfg: &ExperimentConfig, algorithms: &[Algorithm], key: (usize, usize, usize)) -> Vec<Outcome> {
    let (g, p, trial) = key;
    match trial_instance(cfg, g, p, trial) {
        Ok(inst) => algorithms.iter().map(|&a| evaluate(cfg, a, &inst, key)).collect(),
        Err(e) => algorithms.iter().map(|&a| Err(failure(a, key, &e))).collect(),
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Runs every (G, P, trial) work item, evaluates each configured algorithm
/// on the shared scenario and aggregates the results per cell.
///
/// Algorithm failures on individual trials are collected in
/// [`ExperimentResult::failures`]; only configuration errors abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let algorithms = cfg.algorithm_list();
    let mut keys = Vec::with_capacity(cfg.g_values.len() * cfg.p_values.len() * cfg.n_trials);
    for &g in &cfg.g_values {
        for &p in &cfg.p_values {
            keys.extend((0..cfg.n_trials).map(|t| (g, p, t)));
        }
    }
    let pool = thread_pool(cfg.threads)?;
    let outcomes: Vec<Outcome> =
        pool.install(|| keys.par_iter().flat_map_iter(|&key| run_trial(cfg, &algorithms, key)).collect());

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by_key(|r| (r.algorithm, r.g, r.p, r.trial));
    failures.sort_by_key(|f| (f.algorithm, f.g, f.p, f.trial));
    let cells = summarize(&algorithms, cfg, &records, &failures);
    let se = if cfg.se_enabled { Some(se_overlay(cfg)?) } else { None };
    Ok(ExperimentResult { config: cfg.clone(), records, failures, cells, se })
}

fn summarize(
    algorithms: &[Algorithm],
    cfg: &ExperimentConfig,
    records: &[ResultRecord],
    failures: &[TrialFailure],
) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(Algorithm, usize, usize), Vec<&ResultRecord>> = BTreeMap::new();
    for &a in algorithms {
        for &g in &cfg.g_values {
            for &p in &cfg.p_values {
                groups.entry((a, g, p)).or_default();
            }
        }
    }
    for r in records {
        groups.entry((r.algorithm, r.g, r.p)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((algorithm, g, p), rs)| {
            let pe: Vec<f64> = rs.iter().map(|r| r.pe).collect();
            let nmse: Vec<f64> = rs.iter().map(|r| r.nmse_db).collect();
            let iters: Vec<f64> = rs.iter().map(|r| r.iterations as f64).collect();
            let nonempty = !rs.is_empty();
            let (pe_mean, pe_stderr) = mean_stderr(&pe);
            let (nmse_mean, nmse_stderr) = mean_stderr(&nmse);
            let keep = |v: f64| nonempty.then_some(v);
            CellSummary {
                algorithm,
                g,
                p,
                trials: rs.len(),
                failures: failures.iter().filter(|f| f.algorithm == algorithm && f.g == g && f.p == p).count(),
                pe_mean: keep(pe_mean),
                pe_stderr: keep(pe_stderr),
                nmse_db_mean: keep(nmse_mean),
                nmse_db_stderr: keep(nmse_stderr),
                nmse_db_median: keep(median(&nmse)),
                iterations_mean: keep(mean_stderr(&iters).0),
            }
        })
        .collect()
}

/// State-evolution settings matched to the scenario generator and the
/// EM initialization used by DMMV-AMP at pilot length `g`.
pub fn se_setup(cfg: &ExperimentConfig, g: usize) -> (Prior, SeSettings) {
    let sys = cfg.system.at(g, 1, 0);
    let s = sys.pilot_variance();
    let k = sys.devices;
    let truth = Prior::new(sys.active_devices as f64 / k as f64, Complex64::new(0.0, 0.0), 1.0);
    let noise_var = noise_variance(s * sys.active_devices as f64, sys.snr_db);
    let mut settings = SeSettings::pilot_normalized(g, k, s, noise_var);
    settings.n_samples = cfg.se.n_samples;
    settings.t_max = cfg.se.t_max;
    settings.noise_recursion = cfg.se.noise_recursion;
    settings.llr_form = cfg.dmmv.amp.llr_form;
    settings.seed = derive_seed(cfg.master_seed, &[tag::STATE_EVOLUTION, g as u64]);
    settings.initial = Some(em_matched_init(g, k, sys.antennas, s, &truth, noise_var, cfg.dmmv.lambda0_form));
    (truth, settings)
}

/// SE-predicted NMSE for every configured pilot length.
pub fn se_overlay(cfg: &ExperimentConfig) -> Result<Vec<SePoint>> {
    if cfg.system.active_devices == 0 {
        return Err(Error::UndefinedMetric("state evolution NMSE with no active devices".into()));
    }
    let mut gs = cfg.g_values.clone();
    gs.sort_unstable();
    gs.dedup();
    let pool = thread_pool(cfg.threads)?;
    Ok(pool.install(|| {
        gs.par_iter()
            .map(|&g| {
                let (truth, settings) = se_setup(cfg, g);
                let trajectory = run_se(&truth, &settings);
                let last = trajectory.last().expect("state evolution yields at least the initial state");
                SePoint { g, nmse_db: last.nmse_db(&truth).max(NMSE_FLOOR_DB), iterations: last.t, trajectory }
            })
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::SystemSpec;

    fn small() -> ExperimentConfig {
        let system = SystemSpec {
            devices: 30,
            active_devices: 3,
            antennas: 4,
            snr_db: 20.0,
            pilot_scale: None,
            snr_offsets_db: Vec::new(),
        };
        let mut cfg = ExperimentConfig::new(system, vec![12, 8], vec![1, 2], 3);
        cfg.dmmv.amp.t_max = 30;
        cfg
    }

    #[test]
    fn records_are_sorted_and_complete() {
        let res = run_experiment(&small()).unwrap();
        assert_eq!(res.records.len() + res.failures.len(), 3 * 2 * 2 * 3);
        let keys: Vec<_> = res.records.iter().map(|r| (r.algorithm, r.g, r.p, r.trial)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(res.cells.len(), 12);
        assert!(res.records.iter().all(|r| (0.0..=1.0).contains(&r.pe) && r.wall_ms == 0.0));
        assert!(res.cell_records(Algorithm::OracleLs, 8, 2).all(|r| r.pe == 0.0));
    }

    #[test]
    fn noiseless_oracle_hits_floor() {
        let mut cfg = small();
        cfg.system.snr_db = f64::INFINITY;
        cfg.g_values = vec![10];
        cfg.p_values = vec![1];
        cfg.n_trials = 1;
        cfg.algorithms = vec![Algorithm::OracleLs];
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.records[0].nmse_db, NMSE_FLOOR_DB);
    }

    #[test]
    fn trial_failures_are_recorded_not_fatal() {
        let mut cfg = small();
        cfg.g_values = vec![2];
        cfg.algorithms = vec![Algorithm::OracleLs, Algorithm::Somp];
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.failures.len(), 2 * 3);
        assert!(res.failures.iter().all(|f| f.algorithm == Algorithm::OracleLs && f.kind == "support_too_large"));
        let cell = res.cell(Algorithm::OracleLs, 2, 1).unwrap();
        assert_eq!((cell.trials, cell.failures, cell.pe_mean), (0, 3, None));
        assert_eq!(res.cell(Algorithm::Somp, 2, 1).unwrap().trials, 3);
    }

    #[test]
    fn seeds_are_paired_and_distinct() {
        let cfg = small();
        let a = trial_instance(&cfg, 12, 1, 0).unwrap();
        let b = trial_instance(&cfg, 12, 1, 0).unwrap();
        assert_eq!(a.observation.received, b.observation.received);
        let c = trial_instance(&cfg, 12, 1, 1).unwrap();
        assert_ne!(a.observation.received, c.observation.received);
        assert_ne!(trial_seed(0, 12, 1, 0), trial_seed(0, 12, 2, 0));
        assert_ne!(trial_seed(0, 12, 1, 0), trial_seed(1, 12, 1, 0));
    }

    #[test]
    fn se_overlay_covers_each_g() {
        let mut cfg = small();
        cfg.se.n_samples = 2000;
        cfg.se.t_max = 20;
        cfg.g_values = vec![12, 8, 12];
        let pts = se_overlay(&cfg).unwrap();
        assert_eq!(pts.iter().map(|p| p.g).collect::<Vec<_>>(), vec![8, 12]);
        assert!(pts.iter().all(|p| p.nmse_db.is_finite() && !p.trajectory.is_empty()));
    }
}
