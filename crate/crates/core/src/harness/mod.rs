//! Seeded Monte Carlo experiments.
//!
//! For every sweep value and setup the harness draws a deployment, builds
//! the offline fingerprint databases, fits every requested model once, and
//! then localizes each test point with every method. Results are sorted by
//! `(setup, test point, method)` before they are written, so output bytes
//! depend only on the configuration and seed.

mod summary;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use summary::{quantile_sorted, summarize, write_summary, SummaryRow, QUANTILES, SUMMARY_HEADER};

use crate::baselines::{
    distributed_median_with, fit_centralized_gpr, Algorithm, CentralFingerprintDb, CentralVariant,
    KnnRegressor, KnnWeighting, LinearRegressor, Method, Regressor, DEFAULT_KNN_K,
};
use crate::channel::{sample_received_signal, ChannelStats};
use crate::config::ScenarioConfig;
use crate::crb::{crb_aoa_variance, crb_noised_aoa, CrbConfig};
use crate::error::{Error, Result};
use crate::fingerprint::{
    build_fingerprint_db, estimate_rss_db, link_gain, resolve_ula_ambiguity, FingerprintDb, MusicEstimator,
    TestObservation, MUSIC_GRID_STEP_DEG,
};
use crate::fusion::{fuse, DEFAULT_ZSCORE_THRESHOLD};
use crate::geometry::{generate_scenario, nominal_aoa_deg, Point2, Scenario};
use crate::gpr::{CoordinateModels, EstimateSource, Hyperparams, PositionEstimate, TrainConfig, TrainDiagnostics};
use crate::metrics::{write_trials, TrialRecord};
use crate::rng::{purpose, stream_seed, substream};
use crate::shadowing::ShadowSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "N")]
    NumAntennas,
    #[serde(rename = "K")]
    NumRps,
    #[serde(rename = "L")]
    NumAps,
    #[serde(rename = "shadow_sigma_db")]
    ShadowSigma,
    #[serde(rename = "zscore_threshold")]
    ZscoreThreshold,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] =
        [Self::NumAntennas, Self::NumRps, Self::NumAps, Self::ShadowSigma, Self::ZscoreThreshold];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NumAntennas => "N",
            Self::NumRps => "K",
            Self::NumAps => "L",
            Self::ShadowSigma => "shadow_sigma_db",
            Self::ZscoreThreshold => "zscore_threshold",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config("sweep_axis", format!("unknown axis {s:?}")))
    }
}

/// Where online AOAs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AoaMode {
    Music,
    /// True angle plus Gaussian noise at the CRB.
    Crb,
    /// True angle, noise-free.
    Geometric,
}

impl FromStr for AoaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "music" => Ok(Self::Music),
            "crb" => Ok(Self::Crb),
            "geometric" => Ok(Self::Geometric),
            _ => Err(Error::config("aoa_mode", format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: ScenarioConfig,
    pub sweep: Option<Sweep>,
    pub num_setups: usize,
    pub num_test_points: usize,
    /// Algorithm tags; `dist_gpr` expands to its four fusion rules.
    pub methods: Vec<String>,
    pub aoa_mode: AoaMode,
    pub zscore_threshold: f64,
    pub knn_k: usize,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::default(),
            sweep: None,
            num_setups: 10,
            num_test_points: 100,
            methods: Algorithm::ALL.iter().map(|a| a.as_str().to_string()).collect(),
            aoa_mode: AoaMode::Music,
            zscore_threshold: DEFAULT_ZSCORE_THRESHOLD,
            knn_k: DEFAULT_KNN_K,
            threads: 0,
            output_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
        }
    }
}

/// Flat file layout: experiment keys plus every [`ScenarioConfig`] key at the
/// top level, and an optional `[train]` table.
#[derive(Debug, Deserialize)]
struct SpecFile {
    num_setups: Option<usize>,
    num_test_points: Option<usize>,
    methods: Option<Vec<String>>,
    aoa_mode: Option<AoaMode>,
    zscore_threshold: Option<f64>,
    knn_k: Option<usize>,
    threads: Option<usize>,
    output_dir: Option<PathBuf>,
    sweep_axis: Option<SweepAxis>,
    sweep_values: Option<Vec<f64>>,
    train: Option<TrainConfig>,
    #[serde(flatten)]
    scenario: toml::Table,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpecFile = toml::from_str(text)?;
        let base: ScenarioConfig = toml::Value::Table(file.scenario)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        let d = Self::default();
        let sweep = match (file.sweep_axis, file.sweep_values) {
            (Some(axis), Some(values)) => Some(Sweep { axis, values }),
            (None, None) => None,
            _ => return Err(Error::config("sweep_axis", "sweep_axis and sweep_values go together")),
        };
        let spec = Self {
            base,
            sweep,
            num_setups: file.num_setups.unwrap_or(d.num_setups),
            num_test_points: file.num_test_points.unwrap_or(d.num_test_points),
            methods: file.methods.unwrap_or(d.methods),
            aoa_mode: file.aoa_mode.unwrap_or(d.aoa_mode),
            zscore_threshold: file.zscore_threshold.unwrap_or(d.zscore_threshold),
            knn_k: file.knn_k.unwrap_or(d.knn_k),
            threads: file.threads.unwrap_or(d.threads),
            output_dir: file.output_dir.unwrap_or(d.output_dir),
            train: file.train.unwrap_or(d.train),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Expanded, de-duplicated method list in a fixed order.
    pub fn expanded_methods(&self) -> Result<Vec<Method>> {
        let mut set = BTreeSet::new();
        for tag in &self.methods {
            set.extend(Method::expand(tag)?);
        }
        Ok(set.into_iter().collect())
    }

    /// `(sweep value, scenario config, z-score threshold)` per sweep point.
    pub fn sweep_points(&self) -> Result<Vec<(Option<f64>, ScenarioConfig, f64)>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(None, self.base.clone(), self.zscore_threshold)]);
        };
        sweep
            .values
            .iter()
            .map(|&v| {
                let mut cfg = self.base.clone();
                let mut tz = self.zscore_threshold;
                let as_count = |v: f64| -> Result<usize> {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::config("sweep_values", format!("{} needs positive integers, got {v}", sweep.axis)))
                    }
                };
                match sweep.axis {
                    SweepAxis::NumAntennas => cfg.num_antennas = as_count(v)?,
                    SweepAxis::NumRps => cfg.num_rps = as_count(v)?,
                    SweepAxis::NumAps => cfg.num_aps = as_count(v)?,
                    SweepAxis::ShadowSigma => cfg.shadow_sigma_db = v,
                    SweepAxis::ZscoreThreshold => tz = v,
                }
                cfg.validate()?;
                if !(tz > 0.0) {
                    return Err(Error::config("zscore_threshold", "must be positive"));
                }
                Ok((Some(v), cfg, tz))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.num_setups == 0 {
            return Err(Error::config("num_setups", "must be at least 1"));
        }
        if self.num_test_points == 0 {
            return Err(Error::config("num_test_points", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "must not be empty"));
        }
        if !(self.zscore_threshold > 0.0) {
            return Err(Error::config("zscore_threshold", "must be positive"));
        }
        if self.knn_k == 0 {
            return Err(Error::config("knn_k", "must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::config("sweep_values", "must not be empty"));
            }
        }
        self.expanded_methods()?;
        self.sweep_points()?;
        Ok(())
    }
}

/// Everything drawn offline for one setup.
#[derive(Debug, Clone)]
pub struct SetupData {
    pub setup_id: u64,
    pub scenario: Scenario,
    pub sampler: ShadowSampler,
    /// Per AP, shadowing (dB) at every RP.
    pub rp_fields: Vec<DVector<f64>>,
    pub dbs: Vec<FingerprintDb>,
}

/// Seed of setup `setup_id`. Independent of the sweep value, so sweeps use
/// common random numbers wherever the dimensions agree.
pub fn setup_seed(master: u64, setup_id: u64) -> u64 {
    stream_seed(master, &[purpose::SETUP, setup_id])
}

pub fn build_setup(cfg: &ScenarioConfig, setup_id: u64, num_test_points: usize) -> Result<SetupData> {
    let cfg = ScenarioConfig { seed: setup_seed(cfg.seed, setup_id), ..cfg.clone() };
    let scenario = generate_scenario(&cfg, num_test_points)?;
    let sampler = ShadowSampler::new(&scenario.rp_positions, cfg.shadow_sigma_db, cfg.decorr_dist_m)?;
    let rp_fields: Vec<DVector<f64>> = (0..cfg.num_aps)
        .map(|ap| sampler.sample_rp_field(&mut substream(cfg.seed, &[purpose::RP_SHADOW, ap as u64])))
        .collect();
    let dbs = (0..cfg.num_aps)
        .map(|ap| build_fingerprint_db(&scenario, ap, rp_fields[ap].as_slice(), &[]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SetupData { setup_id, scenario, sampler, rp_fields, dbs })
}

/// Online observation of the UE at test point `test_id` by every AP.
pub fn observe_test_point(
    setup: &SetupData,
    test_id: usize,
    mode: AoaMode,
    music: &MusicEstimator,
) -> Result<Vec<TestObservation>> {
    let scenario = &setup.scenario;
    let cfg = &scenario.config;
    let model = cfg.array_model();
    let tp = scenario.test_points[test_id];
    let weights = setup.sampler.conditional_weights(&tp);
    (0..scenario.num_aps())
        .map(|ap| {
            let key = |p: u64| [p, test_id as u64, ap as u64];
            let shadow = setup.sampler.sample_test_point(
                &weights,
                &setup.rp_fields[ap],
                &mut substream(cfg.seed, &key(purpose::TP_SHADOW)),
            );
            let ap_pos = scenario.ap_positions[ap];
            let beta = link_gain(&ap_pos, &tp, shadow, cfg)?;
            let nominal = nominal_aoa_deg(&ap_pos.ground(), &tp)?;
            let stats = ChannelStats::new(beta, nominal, &model);
            let blocks = sample_received_signal(
                &stats,
                &model,
                cfg.rss_samples,
                &mut substream(cfg.seed, &key(purpose::TP_SIGNAL)),
            );
            let rss_db = estimate_rss_db(&blocks, cfg.tx_power_mw)?;
            let (aoa_deg, degenerate_spectrum) = match mode {
                AoaMode::Music => {
                    let est = music.estimate(&blocks)?;
                    (resolve_ula_ambiguity(est.angle_deg, nominal), est.degenerate)
                }
                AoaMode::Crb => {
                    let v = crb_aoa_variance(&CrbConfig::for_link(cfg, beta, nominal))?;
                    let mut rng = substream(cfg.seed, &key(purpose::CRB_NOISE));
                    (crb_noised_aoa(nominal, v.deg2, &mut rng)?, false)
                }
                AoaMode::Geometric => (nominal, false),
            };
            Ok(TestObservation { ap_index: ap, rss_db, aoa_deg, degenerate_spectrum })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub hyper: Hyperparams,
    pub diagnostics: TrainDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateSummary {
    /// AP index, or the centralized variant tag.
    pub model: String,
    pub x: ModelSummary,
    pub y: ModelSummary,
}

impl CoordinateSummary {
    fn of(model: String, m: &CoordinateModels) -> Self {
        let s = |g: &crate::gpr::GprModel| ModelSummary { hyper: *g.hyperparams(), diagnostics: *g.diagnostics() };
        Self { model, x: s(&m.x), y: s(&m.y) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub sweep_value: Option<f64>,
    pub setup_id: u64,
    /// `None` when a whole (setup, method) cell failed.
    pub test_id: Option<u64>,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetupReport {
    pub setup_id: u64,
    pub seed: u64,
    pub gpr_models: Vec<CoordinateSummary>,
    pub degenerate_spectra: usize,
}

/// Results for one sweep value.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub sweep_value: Option<f64>,
    pub config: ScenarioConfig,
    pub zscore_threshold: f64,
    pub trials: Vec<TrialRecord>,
    pub setups: Vec<SetupReport>,
    pub failures: Vec<Failure>,
    pub runtime_s: f64,
}

impl SweepResult {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.trials, self.sweep_value, Some(self.runtime_s))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub spec: ExperimentSpec,
    pub sweeps: Vec<SweepResult>,
}

impl ExperimentOutcome {
    pub fn failure_count(&self) -> usize {
        self.sweeps.iter().map(|s| s.failures.len()).sum()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        self.sweeps.iter().flat_map(SweepResult::summary).collect()
    }

    pub fn report_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct SweepReport<'a> {
            sweep_value: Option<f64>,
            config: &'a ScenarioConfig,
            zscore_threshold: f64,
            num_trials: usize,
            runtime_s: f64,
            degenerate_spectra: usize,
            setups: &'a [SetupReport],
            failures: &'a [Failure],
        }
        #[derive(Serialize)]
        struct Report<'a> {
            master_seed: u64,
            num_setups: usize,
            num_test_points: usize,
            methods: Vec<String>,
            aoa_mode: AoaMode,
            sweep_axis: Option<SweepAxis>,
            train: TrainConfig,
            failure_count: usize,
            sweeps: Vec<SweepReport<'a>>,
        }
        let report = Report {
            master_seed: self.spec.base.seed,
            num_setups: self.spec.num_setups,
            num_test_points: self.spec.num_test_points,
            methods: self.spec.expanded_methods()?.iter().map(Method::to_string).collect(),
            aoa_mode: self.spec.aoa_mode,
            sweep_axis: self.spec.sweep.as_ref().map(|s| s.axis),
            train: self.spec.train,
            failure_count: self.failure_count(),
            sweeps: self
                .sweeps
                .iter()
                .map(|s| SweepReport {
                    sweep_value: s.sweep_value,
                    config: &s.config,
                    zscore_threshold: s.zscore_threshold,
                    num_trials: s.trials.len(),
                    runtime_s: s.runtime_s,
                    degenerate_spectra: s.setups.iter().map(|r| r.degenerate_spectra).sum(),
                    setups: &s.setups,
                    failures: &s.failures,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&report)?)
    }

    /// Trial CSV path of a sweep value relative to the output directory.
    pub fn trials_path(&self, sweep_value: Option<f64>) -> PathBuf {
        match (&self.spec.sweep, sweep_value) {
            (Some(s), Some(v)) => PathBuf::from(format!("{}={v}", s.axis)).join("trials.csv"),
            _ => PathBuf::from("trials.csv"),
        }
    }

    /// Writes the trial CSVs, `summary.csv` and `report.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in &self.sweeps {
            let path = dir.join(self.trials_path(s.sweep_value));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_trials(fs::File::create(&path)?, &s.trials)?;
        }
        write_summary(fs::File::create(dir.join("summary.csv"))?, &self.summary())?;
        fs::write(dir.join("report.json"), self.report_json()?)?;
        Ok(())
    }
}

/// Models fitted for one setup; `None` marks a method whose fit failed.
struct FittedSetup {
    dist_gpr: Option<Vec<CoordinateModels>>,
    central: Vec<(CentralVariant, Option<(CentralFingerprintDb, CoordinateModels)>)>,
    cent_knn: Option<(CentralFingerprintDb, KnnRegressor)>,
    cent_lr: Option<(CentralFingerprintDb, LinearRegressor)>,
    dist_knn: Option<Vec<KnnRegressor>>,
    dist_lr: Option<Vec<LinearRegressor>>,
}

fn cell<T>(
    result: Result<T>,
    failures: &mut Vec<Failure>,
    methods: &[Method],
    algorithm: Algorithm,
    ctx: (Option<f64>, u64),
) -> Option<T> {
    match result {
        Ok(v) => Some(v),
        Err(e) => {
            for m in methods.iter().filter(|m| m.algorithm() == algorithm) {
                log::warn!("setup {} method {m}: fit failed: {e}", ctx.1);
                failures.push(Failure {
                    sweep_value: ctx.0,
                    setup_id: ctx.1,
                    test_id: None,
                    method: m.to_string(),
                    error: e.to_string(),
                });
            }
            None
        }
    }
}

fn fit_setup(
    setup: &SetupData,
    methods: &[Method],
    spec: &ExperimentSpec,
    sweep_value: Option<f64>,
    failures: &mut Vec<Failure>,
) -> FittedSetup {
    let wants = |a: Algorithm| methods.iter().any(|m| m.algorithm() == a);
    let ctx = (sweep_value, setup.setup_id);
    let per_ap_inputs = |db: &FingerprintDb| (db.hybrid_inputs(), [db.targets(0), db.targets(1)]);

    let dist_gpr = if wants(Algorithm::DistGpr) {
        let fitted = setup
            .dbs
            .par_iter()
            .map(|db| {
                let (x, [tx, ty]) = per_ap_inputs(db);
                CoordinateModels::fit(&x, &tx, &ty, &spec.train)
            })
            .collect::<Result<Vec<_>>>();
        cell(fitted, failures, methods, Algorithm::DistGpr, ctx)
    } else {
        None
    };

    let mut central = Vec::new();
    for (alg, variant) in [
        (Algorithm::CentHybrid, CentralVariant::Hybrid),
        (Algorithm::CentRss, CentralVariant::Rss),
        (Algorithm::CentAoa, CentralVariant::Aoa),
    ] {
        if wants(alg) {
            let fitted = CentralFingerprintDb::from_aps(&setup.dbs, variant)
                .and_then(|db| fit_centralized_gpr(&db, &spec.train).map(|m| (db, m)));
            central.push((variant, cell(fitted, failures, methods, alg, ctx)));
        }
    }

    let hybrid_db = || CentralFingerprintDb::from_aps(&setup.dbs, CentralVariant::Hybrid);
    let cent_knn = wants(Algorithm::CentKnn).then(|| {
        let fitted = hybrid_db().and_then(|db| {
            KnnRegressor::fit(&db.inputs, db.targets.clone(), spec.knn_k, KnnWeighting::InverseDistance)
                .map(|m| (db, m))
        });
        cell(fitted, failures, methods, Algorithm::CentKnn, ctx)
    });
    let cent_lr = wants(Algorithm::CentLr).then(|| {
        let fitted = hybrid_db().and_then(|db| LinearRegressor::fit(&db.inputs, db.targets.clone()).map(|m| (db, m)));
        cell(fitted, failures, methods, Algorithm::CentLr, ctx)
    });
    let dist_knn = wants(Algorithm::DistKnn).then(|| {
        let fitted = setup
            .dbs
            .iter()
            .map(|db| {
                let (x, t) = per_ap_inputs(db);
                KnnRegressor::fit(&x, t, spec.knn_k, KnnWeighting::InverseDistance)
            })
            .collect::<Result<Vec<_>>>();
        cell(fitted, failures, methods, Algorithm::DistKnn, ctx)
    });
    let dist_lr = wants(Algorithm::DistLr).then(|| {
        let fitted = setup
            .dbs
            .iter()
            .map(|db| {
                let (x, t) = per_ap_inputs(db);
                LinearRegressor::fit(&x, t)
            })
            .collect::<Result<Vec<_>>>();
        cell(fitted, failures, methods, Algorithm::DistLr, ctx)
    });

    FittedSetup {
        dist_gpr,
        central,
        cent_knn: cent_knn.flatten(),
        cent_lr: cent_lr.flatten(),
        dist_knn: dist_knn.flatten(),
        dist_lr: dist_lr.flatten(),
    }
}

fn estimate_with(
    method: &Method,
    fitted: &FittedSetup,
    obs: &[TestObservation],
    per_ap_gpr: &Option<Result<Vec<PositionEstimate>>>,
    zscore_threshold: f64,
) -> Option<Result<PositionEstimate>> {
    let source = || EstimateSource::Method(method.to_string());
    Some(match method {
        Method::DistGpr(rule) => match per_ap_gpr.as_ref()? {
            Ok(ests) => fuse(*rule, ests, zscore_threshold).map(|r| r.estimate),
            Err(e) => Err(Error::Numeric(e.to_string())),
        },
        Method::Other(alg) => match alg {
            Algorithm::DistGpr => unreachable!("expanded into fusion rules"),
            Algorithm::CentHybrid | Algorithm::CentRss | Algorithm::CentAoa => {
                let variant = match alg {
                    Algorithm::CentHybrid => CentralVariant::Hybrid,
                    Algorithm::CentRss => CentralVariant::Rss,
                    _ => CentralVariant::Aoa,
                };
                let (db, m) = fitted.central.iter().find(|(v, _)| *v == variant)?.1.as_ref()?;
                m.predict(&db.test_input(obs), source())
            }
            Algorithm::CentKnn => {
                let (db, m) = fitted.cent_knn.as_ref()?;
                m.predict(&db.test_input(obs), source())
            }
            Algorithm::CentLr => {
                let (db, m) = fitted.cent_lr.as_ref()?;
                m.predict(&db.test_input(obs), source())
            }
            Algorithm::DistKnn => distributed_median_with(fitted.dist_knn.as_ref()?, obs).map(|r| r.estimate),
            Algorithm::DistLr => distributed_median_with(fitted.dist_lr.as_ref()?, obs).map(|r| r.estimate),
        },
    })
}

struct TestOutcome {
    records: Vec<TrialRecord>,
    failures: Vec<Failure>,
    degenerate: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_test_point(
    setup: &SetupData,
    fitted: &FittedSetup,
    methods: &[Method],
    test_id: usize,
    spec: &ExperimentSpec,
    music: &MusicEstimator,
    sweep_value: Option<f64>,
    zscore_threshold: f64,
) -> TestOutcome {
    let mut out = TestOutcome { records: Vec::new(), failures: Vec::new(), degenerate: 0 };
    let fail = |method: String, e: &Error| Failure {
        sweep_value,
        setup_id: setup.setup_id,
        test_id: Some(test_id as u64),
        method,
        error: e.to_string(),
    };
    let obs = match observe_test_point(setup, test_id, spec.aoa_mode, music) {
        Ok(o) => o,
        Err(e) => {
            log::warn!("setup {} test point {test_id}: observation failed: {e}", setup.setup_id);
            out.failures.extend(methods.iter().map(|m| fail(m.to_string(), &e)));
            return out;
        }
    };
    out.degenerate = obs.iter().filter(|o| o.degenerate_spectrum).count();
    let per_ap_gpr = fitted.dist_gpr.as_ref().map(|models| {
        models
            .iter()
            .zip(&obs)
            .map(|(m, o)| m.predict(&o.hybrid(), EstimateSource::Ap(o.ap_index)))
            .collect::<Result<Vec<_>>>()
    });
    let truth: Point2 = setup.scenario.test_points[test_id];
    for method in methods {
        let Some(est) = estimate_with(method, fitted, &obs, &per_ap_gpr, zscore_threshold) else {
            continue; // the fit failed and is already reported for the whole cell
        };
        let rec = est.and_then(|e| {
            TrialRecord::new(setup.setup_id, test_id as u64, &method.to_string(), &truth, &e)
        });
        match rec {
            Ok(r) => out.records.push(r),
            Err(e) => {
                log::warn!("setup {} test point {test_id} method {method}: {e}", setup.setup_id);
                out.failures.push(fail(method.to_string(), &e));
            }
        }
    }
    out
}

fn run_setup(
    spec: &ExperimentSpec,
    cfg: &ScenarioConfig,
    methods: &[Method],
    setup_id: u64,
    sweep_value: Option<f64>,
    zscore_threshold: f64,
    music: &MusicEstimator,
) -> (Vec<TrialRecord>, Vec<Failure>, SetupReport) {
    let seed = setup_seed(cfg.seed, setup_id);
    let mut report = SetupReport { setup_id, seed, gpr_models: Vec::new(), degenerate_spectra: 0 };
    let setup = match build_setup(cfg, setup_id, spec.num_test_points) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("setup {setup_id}: offline phase failed: {e}");
            let failures = methods
                .iter()
                .map(|m| Failure { sweep_value, setup_id, test_id: None, method: m.to_string(), error: e.to_string() })
                .collect();
            return (Vec::new(), failures, report);
        }
    };
    let mut failures = Vec::new();
    let fitted = fit_setup(&setup, methods, spec, sweep_value, &mut failures);
    if let Some(models) = &fitted.dist_gpr {
        report
            .gpr_models
            .extend(models.iter().enumerate().map(|(ap, m)| CoordinateSummary::of(format!("ap{ap}"), m)));
    }
    for (variant, fit) in &fitted.central {
        if let Some((_, m)) = fit {
            let tag = match variant {
                CentralVariant::Hybrid => "cent_hybrid",
                CentralVariant::Rss => "cent_rss",
                CentralVariant::Aoa => "cent_aoa",
            };
            report.gpr_models.push(CoordinateSummary::of(tag.to_string(), m));
        }
    }
    let outcomes: Vec<TestOutcome> = (0..spec.num_test_points)
        .into_par_iter()
        .map(|t| run_test_point(&setup, &fitted, methods, t, spec, music, sweep_value, zscore_threshold))
        .collect();
    let mut records = Vec::new();
    for o in outcomes {
        records.extend(o.records);
        failures.extend(o.failures);
        report.degenerate_spectra += o.degenerate;
    }
    (records, failures, report)
}

/// Runs every sweep value. Module errors inside a (setup, method) cell or a
/// single row are recorded as failures and the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let methods = spec.expanded_methods()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let mut sweeps = Vec::new();
    for (sweep_value, cfg, zscore_threshold) in spec.sweep_points()? {
        let start = Instant::now();
        let music = MusicEstimator::new(cfg.num_antennas, cfg.antenna_spacing_wavelengths, MUSIC_GRID_STEP_DEG);
        let per_setup: Vec<_> = pool.install(|| {
            (0..spec.num_setups as u64)
                .into_par_iter()
                .map(|s| run_setup(spec, &cfg, &methods, s, sweep_value, zscore_threshold, &music))
                .collect()
        });
        let mut trials = Vec::new();
        let mut failures = Vec::new();
        let mut setups = Vec::new();
        for (t, f, r) in per_setup {
            trials.extend(t);
            failures.extend(f);
            setups.push(r);
        }
        trials.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        failures.sort_by(|a, b| (a.setup_id, a.test_id, &a.method).cmp(&(b.setup_id, b.test_id, &b.method)));
        sweeps.push(SweepResult {
            sweep_value,
            config: cfg,
            zscore_threshold,
            trials,
            setups,
            failures,
            runtime_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ExperimentOutcome { spec: spec.clone(), sweeps })
}
