//! Experiment pipeline behind the `slipnet` command line.
//!
//! Stages: `simulate` writes trial files and a trial manifest, `build` splits
//! the kinematic trials and lists every training window in a dataset manifest,
//! `train` fits the network, `eval` scores the test split and `detect` runs the
//! smoothed detector over the gravity and disturbance suites. Each stage records
//! a digest of its outputs in `run_manifest.toml` under the reports directory.
//!
//! Per-trial seeds are `derive_seed(seed, "simulate/<suite>", index)` with the
//! index running over the suite's grid in the order the grid lists are given.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{
    count_flips, detect_counts, latency_stats, window_counts, DetectError, DetectionReport,
    LatencySummary, SmootherConfig, SUMMARY_HEADER,
};
use crate::events::{load_events, save_events, EventsError, Trial};
use crate::label::SlipState;
use crate::preprocess::{
    bin_window, partition_trials, pooled_stream, sample_windows, save_volume, DatasetSplit,
    LabeledSample, PreprocessError, SplitRatios,
};
use crate::seed::{derive_seed, digest_hex};
use crate::sim::{
    build_geometry, simulate, DisturbanceSide, ScenarioConfig, SimError, SimParams, SkinGeometry,
    KINEMATIC_DEPTHS_MM, KINEMATIC_DIRECTIONS_DEG, KINEMATIC_SPEEDS_MM_S, PLATE_MASSES_KG,
    RETRACTION_SPEEDS_MM_S,
};
use crate::snn::{
    evaluate, load_weights, save_weights, train, Evaluation, Hyperparams, NetworkSpec, SnnError,
    TrainLog, Weights,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TRIAL_MANIFEST: &str = "trials.csv";
pub const RUN_MANIFEST: &str = "run_manifest.toml";
pub const TRIAL_MANIFEST_HEADER: &str =
    "suite,index,file,condition,seed,incipient_us,gross_us,digest";
pub const DETECT_TRIALS_HEADER: &str = "suite,file,condition,true_incipient_us,true_gross_us,\
detected_incipient_us,detected_gross_us,latency_incipient_ms,latency_gross_ms,lead_ms,\
flips,flips_raw,gross_flag";

type Real = f32;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Usage { path: PathBuf, message: String },
    #[error("missing {what}: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("no trials found in {0}")]
    MissingTrials(PathBuf),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Events(#[from] EventsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Snn(#[from] SnnError),
    #[error(transparent)]
    Detect(#[from] DetectError),
}

impl HarnessError {
    /// 2 for usage and path problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage { .. }
            | HarnessError::MissingPath { .. }
            | HarnessError::MissingTrials(_)
            | HarnessError::Io { .. } => 2,
            HarnessError::Events(EventsError::Io { .. }) => 2,
            HarnessError::Snn(SnnError::Io { .. }) => 2,
            HarnessError::Preprocess(PreprocessError::Io(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_required(path: &Path, what: &'static str) -> Result<String, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingPath {
            what,
            path: path.to_path_buf(),
        });
    }
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub trials: PathBuf,
    pub dataset: PathBuf,
    pub weights: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            trials: "trials".into(),
            dataset: "dataset/manifest.txt".into(),
            weights: "model/weights.snnw".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicGrid {
    pub enabled: bool,
    pub repeats: usize,
    pub depths_mm: Vec<f64>,
    pub speeds_mm_s: Vec<f64>,
    pub directions_deg: Vec<f64>,
}

impl Default for KinematicGrid {
    fn default() -> Self {
        Self {
            enabled: true,
            repeats: 1,
            depths_mm: KINEMATIC_DEPTHS_MM.to_vec(),
            speeds_mm_s: KINEMATIC_SPEEDS_MM_S.to_vec(),
            directions_deg: KINEMATIC_DIRECTIONS_DEG.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GravityGrid {
    pub enabled: bool,
    pub trials: usize,
    pub masses_kg: Vec<f64>,
    pub retractions_mm_s: Vec<f64>,
}

impl Default for GravityGrid {
    fn default() -> Self {
        Self {
            enabled: true,
            trials: 5,
            masses_kg: PLATE_MASSES_KG.to_vec(),
            retractions_mm_s: RETRACTION_SPEEDS_MM_S.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceGrid {
    pub enabled: bool,
    /// Trials per level; even indices push left, odd right.
    pub trials: usize,
    pub levels: Vec<f64>,
    pub mass_kg: f64,
    pub retraction_mm_s: f64,
}

impl Default for DisturbanceGrid {
    fn default() -> Self {
        Self {
            enabled: true,
            trials: 5,
            levels: vec![0.25, 0.5, 0.75, 1.0],
            mass_kg: 0.205,
            retraction_mm_s: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Target firing rate for the init gain; 0 disables calibration.
    pub init_rate: f64,
    pub calibration_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            epochs: 6,
            batch_size: hp.batch_size,
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            patience: 0,
            init_rate: hp.init_rate.unwrap_or(0.0),
            calibration_samples: hp.calibration_samples,
        }
    }
}

impl TrainConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            patience: (self.patience > 0).then_some(self.patience),
            init_rate: (self.init_rate > 0.0).then_some(self.init_rate),
            calibration_samples: self.calibration_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub window_len: usize,
    pub margin: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            window_len: 4,
            margin: 2.0,
        }
    }
}

impl DetectConfig {
    pub fn smoother(&self) -> SmootherConfig<Real> {
        SmootherConfig {
            window_len: self.window_len,
            margin: self.margin as Real,
        }
    }
}

/// Everything a pipeline run needs. Relative paths resolve against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Also write every training window as an SPKV file next to the dataset manifest.
    pub export_volumes: bool,
    pub paths: Paths,
    pub kinematic: KinematicGrid,
    pub gravity: GravityGrid,
    pub disturbance: DisturbanceGrid,
    pub train: TrainConfig,
    pub detect: DetectConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            export_volumes: false,
            paths: Paths::default(),
            kinematic: KinematicGrid::default(),
            gravity: GravityGrid::default(),
            disturbance: DisturbanceGrid::default(),
            train: TrainConfig::default(),
            detect: DetectConfig::default(),
        }
    }
}

impl SuiteConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("suite config serializes")
    }

    /// Reads a config file and resolves its paths.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = read_required(path, "config file")?;
        let mut cfg = Self::parse(&text).map_err(|e| HarnessError::Usage {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.paths.trials,
            &mut self.paths.dataset,
            &mut self.paths.weights,
            &mut self.paths.reports,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Full-size grids: three kinematic repeats, twenty trials per gravity
    /// condition and disturbance level.
    pub fn paper_scale(&mut self) {
        self.kinematic.repeats = 3;
        self.gravity.trials = 20;
        self.disturbance.trials = 20;
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.kinematic.enabled && self.kinematic.repeats == 0 {
            return bad("kinematic repeats must be at least 1");
        }
        if self.gravity.enabled && self.gravity.trials == 0 {
            return bad("gravity trials per condition must be at least 1");
        }
        if self.disturbance.enabled && self.disturbance.trials == 0 {
            return bad("disturbance trials per level must be at least 1");
        }
        if self.train.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        self.detect.smoother().validate()?;
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_hex(self.to_toml().as_bytes())
    }

    pub fn trial_manifest(&self) -> PathBuf {
        self.paths.trials.join(TRIAL_MANIFEST)
    }

    pub fn run_manifest(&self) -> PathBuf {
        self.paths.reports.join(RUN_MANIFEST)
    }
}

/// Provenance of the latest run of each stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    /// Stage name to the SHA-256 of its outputs.
    pub stages: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Option<Self>, HarnessError> {
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text)
            .map(Some)
            .map_err(|e| HarnessError::Manifest {
                path: path.to_path_buf(),
                line: 0,
                message: e.message().to_string(),
            })
    }

    /// Records a stage digest; a different config or seed starts a fresh manifest.
    pub fn record(cfg: &SuiteConfig, stage: &str, digest: String) -> Result<Self, HarnessError> {
        let path = cfg.run_manifest();
        let config_digest = cfg.digest();
        let mut m = Self::load(&path)?
            .filter(|m| m.config_digest == config_digest && m.seed == cfg.seed)
            .unwrap_or_else(|| RunManifest {
                tool_version: TOOL_VERSION.to_string(),
                config_digest,
                seed: cfg.seed,
                stages: BTreeMap::new(),
            });
        m.stages.insert(stage.to_string(), digest);
        write_file(
            &path,
            toml::to_string(&m).expect("manifest serializes").as_bytes(),
        )?;
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Kinematic,
    Gravity,
    Disturbance,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Kinematic => "kinematic",
            Suite::Gravity => "gravity",
            Suite::Disturbance => "disturbance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kinematic" => Some(Suite::Kinematic),
            "gravity" => Some(Suite::Gravity),
            "disturbance" => Some(Suite::Disturbance),
            _ => None,
        }
    }
}

/// One scenario of a suite grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedTrial {
    pub suite: Suite,
    pub index: usize,
    /// Grouping key for the detection summary.
    pub condition: String,
    pub scenario: ScenarioConfig,
}

impl PlannedTrial {
    pub fn file_name(&self) -> String {
        format!(
            "{}/{}_{:04}.ntev",
            self.suite.name(),
            self.suite.name(),
            self.index
        )
    }
}

/// Expands the enabled grids into scenarios with their derived seeds.
pub fn plan_trials(cfg: &SuiteConfig) -> Vec<PlannedTrial> {
    let mut out = Vec::new();
    if cfg.kinematic.enabled {
        let k = &cfg.kinematic;
        let seed = |i: usize| derive_seed(cfg.seed, "simulate/kinematic", i as u64);
        for &d in &k.depths_mm {
            for &v in &k.speeds_mm_s {
                for &a in &k.directions_deg {
                    for _ in 0..k.repeats {
                        let index = out.len();
                        out.push(PlannedTrial {
                            suite: Suite::Kinematic,
                            index,
                            condition: format!("d{d}_v{v}_a{a}"),
                            scenario: ScenarioConfig::kinematic(d, v, a, seed(index)),
                        });
                    }
                }
            }
        }
    }
    if cfg.gravity.enabled {
        let g = &cfg.gravity;
        let mut index = 0;
        for &m in &g.masses_kg {
            for &r in &g.retractions_mm_s {
                for _ in 0..g.trials {
                    let seed = derive_seed(cfg.seed, "simulate/gravity", index as u64);
                    out.push(PlannedTrial {
                        suite: Suite::Gravity,
                        index,
                        condition: format!("m{m}_r{r}"),
                        scenario: ScenarioConfig::gravity(m, r, seed),
                    });
                    index += 1;
                }
            }
        }
    }
    if cfg.disturbance.enabled {
        let d = &cfg.disturbance;
        let mut index = 0;
        for &level in &d.levels {
            for k in 0..d.trials {
                let side = if k % 2 == 0 {
                    DisturbanceSide::Left
                } else {
                    DisturbanceSide::Right
                };
                let seed = derive_seed(cfg.seed, "simulate/disturbance", index as u64);
                out.push(PlannedTrial {
                    suite: Suite::Disturbance,
                    index,
                    condition: format!("disturbance_{}", (level * 100.0).round()),
                    scenario: ScenarioConfig::disturbed(
                        d.mass_kg,
                        d.retraction_mm_s,
                        level,
                        side,
                        seed,
                    ),
                });
                index += 1;
            }
        }
    }
    out
}

/// One row of the trial manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialEntry {
    pub suite: Suite,
    pub index: usize,
    /// Relative to the trial directory.
    pub file: String,
    pub condition: String,
    pub seed: u64,
    pub incipient_us: Option<u64>,
    pub gross_us: Option<u64>,
    pub digest: String,
}

fn opt_field(v: Option<u64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn opt_ms(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.3}"))
}

pub fn trial_manifest_csv(entries: &[TrialEntry]) -> String {
    let mut s = String::from(TRIAL_MANIFEST_HEADER);
    s.push('\n');
    for e in entries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            e.suite.name(),
            e.index,
            e.file,
            e.condition,
            e.seed,
            opt_field(e.incipient_us),
            opt_field(e.gross_us),
            e.digest
        );
    }
    s
}

pub fn read_trial_manifest(path: &Path) -> Result<Vec<TrialEntry>, HarnessError> {
    let text = read_required(path, "trial manifest")?;
    let bad = |line: usize, message: &str| HarnessError::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRIAL_MANIFEST_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(i + 1, "expected 8 fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(i + 1, "bad number"));
        let opt = |s: &str| -> Result<Option<u64>, HarnessError> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        out.push(TrialEntry {
            suite: Suite::parse(f[0]).ok_or_else(|| bad(i + 1, "unknown suite"))?,
            index: num(f[1])? as usize,
            file: f[2].to_string(),
            condition: f[3].to_string(),
            seed: num(f[4])?,
            incipient_us: opt(f[5])?,
            gross_us: opt(f[6])?,
            digest: f[7].to_string(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateReport {
    pub entries: Vec<TrialEntry>,
    pub manifest_digest: String,
}

impl SimulateReport {
    pub fn count(&self, suite: Suite) -> usize {
        self.entries.iter().filter(|e| e.suite == suite).count()
    }
}

/// Simulates every planned scenario, writes the trial files and the trial manifest.
pub fn cmd_simulate(cfg: &SuiteConfig) -> Result<SimulateReport, HarnessError> {
    cfg.validate()?;
    let skin = build_geometry(SkinGeometry::default())?;
    let params = SimParams::default();
    let plan = plan_trials(cfg);
    if plan.is_empty() {
        return Err(HarnessError::InvalidConfig("no grid enabled".into()));
    }
    let entries: Vec<TrialEntry> = plan
        .par_iter()
        .map(|p| {
            let sim = simulate(&p.scenario, &skin, &params)?;
            let file = p.file_name();
            let path = cfg.paths.trials.join(&file);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            save_events(&sim.trial, &path)?;
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            Ok(TrialEntry {
                suite: p.suite,
                index: p.index,
                file,
                condition: p.condition.clone(),
                seed: p.scenario.seed,
                incipient_us: sim.trial.incipient_onset_us,
                gross_us: sim.trial.gross_onset_us,
                digest: digest_hex(&bytes),
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    let csv = trial_manifest_csv(&entries);
    write_file(&cfg.trial_manifest(), csv.as_bytes())?;
    let manifest_digest = digest_hex(csv.as_bytes());
    RunManifest::record(cfg, "simulate", manifest_digest.clone())?;
    Ok(SimulateReport {
        entries,
        manifest_digest,
    })
}

fn suite_entries(cfg: &SuiteConfig, suites: &[Suite]) -> Result<Vec<TrialEntry>, HarnessError> {
    let path = cfg.trial_manifest();
    if !path.exists() {
        return Err(HarnessError::MissingTrials(cfg.paths.trials.clone()));
    }
    let entries: Vec<TrialEntry> = read_trial_manifest(&path)?
        .into_iter()
        .filter(|e| suites.contains(&e.suite))
        .collect();
    if entries.is_empty() {
        return Err(HarnessError::MissingTrials(cfg.paths.trials.clone()));
    }
    Ok(entries)
}

fn load_trials(cfg: &SuiteConfig, entries: &[TrialEntry]) -> Result<Vec<Trial>, HarnessError> {
    entries
        .par_iter()
        .map(|e| {
            let path = cfg.paths.trials.join(&e.file);
            if !path.exists() {
                return Err(HarnessError::MissingPath {
                    what: "trial file",
                    path,
                });
            }
            Ok(load_events(&path)?)
        })
        .collect()
}

/// One training window listed in the dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRow {
    pub split: Split,
    /// Position of the trial among the kinematic trials.
    pub trial: usize,
    pub file: String,
    pub label: SlipState,
    pub t_start_us: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

fn parse_label(s: &str) -> Option<SlipState> {
    (0..3)
        .filter_map(SlipState::from_index)
        .find(|l| l.name() == s)
}

const DATASET_HEADER: &str = "split,trial,file,label,t_start_us";

/// Parsed dataset manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub trials_digest: String,
    pub rows: Vec<SampleRow>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# slipnet dataset manifest");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "labels = simulator");
        let _ = writeln!(s, "trials_digest = {}", self.trials_digest);
        s.push_str(DATASET_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.split.name(),
                r.trial,
                r.file,
                r.label.name(),
                r.t_start_us
            );
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, HarnessError> {
        let bad = |line: usize, message: &str| HarnessError::Manifest {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let mut seed = None;
        let mut trials_digest = None;
        let mut rows = Vec::new();
        let mut in_rows = false;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !in_rows {
                if line == DATASET_HEADER {
                    in_rows = true;
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| bad(n, "expected key = value"))?;
                match k.trim() {
                    "seed" => seed = Some(v.trim().parse().map_err(|_| bad(n, "bad seed"))?),
                    "trials_digest" => trials_digest = Some(v.trim().to_string()),
                    "labels" => {}
                    _ => return Err(bad(n, "unknown key")),
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(n, "expected 5 fields"));
            }
            rows.push(SampleRow {
                split: Split::parse(f[0]).ok_or_else(|| bad(n, "unknown split"))?,
                trial: f[1].parse().map_err(|_| bad(n, "bad trial index"))?,
                file: f[2].to_string(),
                label: parse_label(f[3]).ok_or_else(|| bad(n, "unknown label"))?,
                t_start_us: f[4].parse().map_err(|_| bad(n, "bad start time"))?,
            });
        }
        Ok(Self {
            seed: seed.ok_or_else(|| bad(0, "missing seed"))?,
            trials_digest: trials_digest.ok_or_else(|| bad(0, "missing trials_digest"))?,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&read_required(path, "dataset manifest")?, path)
    }

    /// Samples per split (rows) and class (columns).
    pub fn balance(&self) -> [[usize; 3]; 3] {
        let mut b = [[0; 3]; 3];
        for r in &self.rows {
            let s = Split::ALL.iter().position(|&x| x == r.split).unwrap();
            b[s][r.label.index()] += 1;
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildReport {
    pub manifest: DatasetManifest,
    pub manifest_digest: String,
}

/// Splits the kinematic trials 70/15/15 and lists their training windows.
pub fn cmd_build_dataset(cfg: &SuiteConfig) -> Result<BuildReport, HarnessError> {
    cfg.validate()?;
    let entries = suite_entries(cfg, &[Suite::Kinematic])?;
    let trials = load_trials(cfg, &entries)?;
    let split_seed = derive_seed(cfg.seed, "split", 0);
    let part = partition_trials(trials.len(), SplitRatios::default(), split_seed, true)?;
    let mut rows = Vec::new();
    for (split, ids) in [
        (Split::Train, &part.train),
        (Split::Validation, &part.validation),
        (Split::Test, &part.test),
    ] {
        for &i in ids {
            let windows = sample_windows(&trials[i], derive_seed(split_seed, "extract", i as u64))?;
            rows.extend(windows.iter().map(|(label, t)| SampleRow {
                split,
                trial: i,
                file: entries[i].file.clone(),
                label,
                t_start_us: t,
            }));
        }
    }
    let trials_text = fs::read(cfg.trial_manifest()).map_err(io_err(&cfg.trial_manifest()))?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        trials_digest: digest_hex(&trials_text),
        rows,
    };
    let text = manifest.to_text();
    write_file(&cfg.paths.dataset, text.as_bytes())?;
    if cfg.export_volumes {
        export_volumes(cfg, &manifest, &trials)?;
    }
    let manifest_digest = digest_hex(text.as_bytes());
    RunManifest::record(cfg, "build", manifest_digest.clone())?;
    Ok(BuildReport {
        manifest,
        manifest_digest,
    })
}

fn volume_dir(cfg: &SuiteConfig) -> PathBuf {
    cfg.paths
        .dataset
        .parent()
        .unwrap_or(Path::new(""))
        .join("volumes")
}

fn export_volumes(
    cfg: &SuiteConfig,
    manifest: &DatasetManifest,
    trials: &[Trial],
) -> Result<(), HarnessError> {
    let dir = volume_dir(cfg);
    for split in Split::ALL {
        let d = dir.join(split.name());
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let pooled: Vec<_> = trials
        .par_iter()
        .map(|t| pooled_stream(&t.stream))
        .collect::<Result<_, _>>()?;
    manifest.rows.par_iter().try_for_each(|r| {
        let path = dir.join(r.split.name()).join(format!(
            "{:04}_{}_{}.spkv",
            r.trial,
            r.label.name(),
            r.t_start_us
        ));
        save_volume(&bin_window(&pooled[r.trial], r.t_start_us), &path)?;
        Ok::<_, HarnessError>(())
    })
}

/// Rebuilds the labeled volumes of a dataset manifest from the trial files.
pub fn load_dataset(cfg: &SuiteConfig) -> Result<DatasetSplit, HarnessError> {
    let manifest = DatasetManifest::load(&cfg.paths.dataset)?;
    let mut files: BTreeMap<usize, &str> = BTreeMap::new();
    for r in &manifest.rows {
        files.entry(r.trial).or_insert(&r.file);
    }
    let pooled: BTreeMap<usize, _> = files
        .par_iter()
        .map(|(&i, &f)| {
            let path = cfg.paths.trials.join(f);
            if !path.exists() {
                return Err(HarnessError::MissingPath {
                    what: "trial file",
                    path,
                });
            }
            Ok((i, pooled_stream(&load_events(&path)?.stream)?))
        })
        .collect::<Result<_, HarnessError>>()?;
    let samples: Vec<(Split, LabeledSample)> = manifest
        .rows
        .par_iter()
        .map(|r| {
            (
                r.split,
                LabeledSample {
                    volume: bin_window(&pooled[&r.trial], r.t_start_us),
                    label: r.label,
                    trial_id: r.trial,
                },
            )
        })
        .collect();
    let mut data = DatasetSplit::default();
    for (split, s) in samples {
        match split {
            Split::Train => data.train.push(s),
            Split::Validation => data.validation.push(s),
            Split::Test => data.test.push(s),
        }
    }
    Ok(data)
}

pub fn network() -> NetworkSpec<Real> {
    NetworkSpec::slip_detector()
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: TrainLog,
    pub weights: Weights<Real>,
    pub weights_digest: String,
}

/// Trains on the dataset manifest; writes the best-validation weights and the
/// epoch log (`train_log.csv`).
pub fn cmd_train(cfg: &SuiteConfig) -> Result<TrainReport, HarnessError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let spec = network();
    let trained = train(
        &data,
        &spec,
        &cfg.train.hyperparams(),
        derive_seed(cfg.seed, "train", 0),
    )?;
    if let Some(dir) = cfg
        .paths
        .weights
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
    {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    save_weights(&spec, &trained.weights, &cfg.paths.weights)?;
    let log_csv = trained.log.to_csv();
    write_file(&cfg.paths.reports.join("train_log.csv"), log_csv.as_bytes())?;
    let bytes = fs::read(&cfg.paths.weights).map_err(io_err(&cfg.paths.weights))?;
    let weights_digest = digest_hex(&bytes);
    RunManifest::record(cfg, "train", weights_digest.clone())?;
    Ok(TrainReport {
        log: trained.log,
        weights: trained.weights,
        weights_digest,
    })
}

fn load_model(cfg: &SuiteConfig) -> Result<Weights<Real>, HarnessError> {
    if !cfg.paths.weights.exists() {
        return Err(HarnessError::MissingPath {
            what: "weights file",
            path: cfg.paths.weights.clone(),
        });
    }
    Ok(load_weights(&network(), &cfg.paths.weights)?)
}

/// Scores the test split; writes `confusion.csv` and `metrics.csv`.
pub fn cmd_eval(cfg: &SuiteConfig) -> Result<Evaluation, HarnessError> {
    cfg.validate()?;
    let w = load_model(cfg)?;
    let data = load_dataset(cfg)?;
    let ev = evaluate(&data.test, &network(), &w)?;
    let confusion = ev.confusion_csv();
    let metrics = ev.metrics_csv();
    write_file(
        &cfg.paths.reports.join("confusion.csv"),
        confusion.as_bytes(),
    )?;
    write_file(&cfg.paths.reports.join("metrics.csv"), metrics.as_bytes())?;
    RunManifest::record(
        cfg,
        "eval",
        digest_hex(format!("{confusion}{metrics}").as_bytes()),
    )?;
    Ok(ev)
}

/// Detection outcome of one trial.
#[derive(Clone, Debug)]
pub struct TrialDetection {
    pub entry: TrialEntry,
    pub report: DetectionReport<Real>,
    /// Decision flips without smoothing or margin.
    pub flips_raw: usize,
}

impl TrialDetection {
    pub fn flips(&self) -> usize {
        self.report.flips()
    }

    /// No gross detection or no ground-truth gross onset.
    pub fn gross_flag(&self) -> bool {
        self.report.latency_gross_ms.is_none()
    }

    fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.entry.suite.name(),
            self.entry.file,
            self.entry.condition,
            opt_field(r.true_incipient_us),
            opt_field(r.true_gross_us),
            opt_field(r.detected_incipient_us),
            opt_field(r.detected_gross_us),
            opt_ms(r.latency_incipient_ms),
            opt_ms(r.latency_gross_ms),
            opt_ms(r.lead_time_ms()),
            self.flips(),
            self.flips_raw,
            if self.gross_flag() {
                "missing_gross"
            } else {
                ""
            }
        )
    }
}

#[derive(Clone, Debug)]
pub struct DetectSummary {
    pub trials: Vec<TrialDetection>,
    /// One row per gravity condition, then one per disturbance level.
    pub conditions: Vec<(String, LatencySummary)>,
}

impl DetectSummary {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for (c, l) in &self.conditions {
            s.push_str(&l.csv_row(c));
            s.push('\n');
        }
        s
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from(DETECT_TRIALS_HEADER);
        s.push('\n');
        for t in &self.trials {
            s.push_str(&t.csv_row());
            s.push('\n');
        }
        s
    }

    /// Smallest lead time over every trial with one.
    pub fn min_lead_ms(&self) -> Option<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.report.lead_time_ms())
            .reduce(f64::min)
    }
}

/// Runs the detector over already loaded trials.
pub fn detect_entries(
    trials: &[(TrialEntry, Trial)],
    w: &Weights<Real>,
    config: &SmootherConfig<Real>,
) -> Result<DetectSummary, HarnessError> {
    let spec = network();
    let raw = SmootherConfig::<Real>::raw();
    let results: Vec<TrialDetection> = trials
        .par_iter()
        .map(|(e, t)| {
            let counts = window_counts(t, &spec, w)?;
            if counts.is_empty() {
                return Err(DetectError::EmptySequence.into());
            }
            let report = detect_counts(&counts, t.incipient_onset_us, t.gross_onset_us, config)?;
            let unsmoothed = detect_counts(&counts, t.incipient_onset_us, t.gross_onset_us, &raw)?;
            Ok(TrialDetection {
                entry: e.clone(),
                report,
                flips_raw: count_flips(&unsmoothed.decisions()),
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut order: Vec<(Suite, String)> = Vec::new();
    for t in &results {
        let key = (t.entry.suite, t.entry.condition.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order.sort_by_key(|(s, _)| *s);
    let conditions = order
        .into_iter()
        .map(|(suite, c)| {
            let reports: Vec<DetectionReport<Real>> = results
                .iter()
                .filter(|t| t.entry.suite == suite && t.entry.condition == c)
                .map(|t| t.report.clone())
                .collect();
            Ok((c, latency_stats(&reports)?))
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(DetectSummary {
        trials: results,
        conditions,
    })
}

/// Detects slip on every gravity and disturbance trial; writes one window CSV
/// per trial under `detect/`, `detection_trials.csv` and `detection_summary.csv`.
pub fn cmd_detect(cfg: &SuiteConfig) -> Result<DetectSummary, HarnessError> {
    cfg.validate()?;
    let w = load_model(cfg)?;
    let entries = suite_entries(cfg, &[Suite::Gravity, Suite::Disturbance])?;
    let trials = load_trials(cfg, &entries)?;
    let pairs: Vec<(TrialEntry, Trial)> = entries.into_iter().zip(trials).collect();
    let summary = detect_entries(&pairs, &w, &cfg.detect.smoother())?;
    let dir = cfg.paths.reports.join("detect");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut all = Vec::new();
    for t in &summary.trials {
        let name = Path::new(&t.entry.file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let csv = t.report.to_csv();
        write_file(&dir.join(format!("{name}.csv")), csv.as_bytes())?;
        all.extend_from_slice(csv.as_bytes());
    }
    let trials_csv = summary.trials_csv();
    let summary_csv = summary.summary_csv();
    write_file(
        &cfg.paths.reports.join("detection_trials.csv"),
        trials_csv.as_bytes(),
    )?;
    write_file(
        &cfg.paths.reports.join("detection_summary.csv"),
        summary_csv.as_bytes(),
    )?;
    all.extend_from_slice(trials_csv.as_bytes());
    all.extend_from_slice(summary_csv.as_bytes());
    RunManifest::record(cfg, "detect", digest_hex(&all))?;
    Ok(summary)
}

/// Caps the global rayon pool at `SLIPNET_THREADS` when set.
pub fn init_threads() -> Result<Option<usize>, HarnessError> {
    let Ok(v) = std::env::var("SLIPNET_THREADS") else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Usage {
            path: "SLIPNET_THREADS".into(),
            message: format!("expected a positive thread count, got {v:?}"),
        })?;
    // A pool that is already built (tests, embedding) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(Some(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let mut cfg = SuiteConfig::default();
        let plan = plan_trials(&cfg);
        let count = |s| plan.iter().filter(|p| p.suite == s).count();
        assert_eq!(count(Suite::Kinematic), 288);
        assert_eq!(count(Suite::Gravity), 45);
        assert_eq!(count(Suite::Disturbance), 20);
        cfg.paper_scale();
        let plan = plan_trials(&cfg);
        let count = |s| plan.iter().filter(|p| p.suite == s).count();
        assert_eq!(count(Suite::Kinematic), 864);
        assert_eq!(count(Suite::Gravity), 180);
        assert_eq!(count(Suite::Disturbance), 80);
    }

    #[test]
    fn plan_is_valid_and_seeded() {
        let cfg = SuiteConfig::default();
        let plan = plan_trials(&cfg);
        for p in &plan {
            p.scenario.validate().unwrap();
        }
        let mut seeds: Vec<u64> = plan.iter().map(|p| p.scenario.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), plan.len());
        let other = SuiteConfig {
            seed: 2,
            ..SuiteConfig::default()
        };
        assert_ne!(plan[0].scenario.seed, plan_trials(&other)[0].scenario.seed);
        let sides: Vec<bool> = plan
            .iter()
            .filter(|p| p.suite == Suite::Disturbance)
            .map(|p| p.scenario.mirrored())
            .take(4)
            .collect();
        assert_eq!(sides, [false, true, false, true]);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = SuiteConfig::default();
        assert_eq!(SuiteConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let partial = SuiteConfig::parse("seed = 9\n[gravity]\ntrials = 2\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.gravity.trials, 2);
        assert_eq!(partial.kinematic, KinematicGrid::default());
        assert!(SuiteConfig::parse("sed = 9\n").is_err());
        let mut zero = SuiteConfig::default();
        zero.gravity.trials = 0;
        assert!(zero.validate().is_err());
    }

    #[test]
    fn trial_manifest_round_trip() {
        let entries = vec![
            TrialEntry {
                suite: Suite::Gravity,
                index: 3,
                file: "gravity/gravity_0003.ntev".into(),
                condition: "m0.205_r0.5".into(),
                seed: 77,
                incipient_us: Some(1000),
                gross_us: None,
                digest: "ab".into(),
            },
            TrialEntry {
                suite: Suite::Kinematic,
                index: 0,
                file: "kinematic/kinematic_0000.ntev".into(),
                condition: "d2.4_v0.6_a0".into(),
                seed: 1,
                incipient_us: Some(5),
                gross_us: Some(9),
                digest: "cd".into(),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, trial_manifest_csv(&entries)).unwrap();
        assert_eq!(read_trial_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn dataset_manifest_round_trip() {
        let m = DatasetManifest {
            seed: 4,
            trials_digest: "ff".into(),
            rows: vec![
                SampleRow {
                    split: Split::Validation,
                    trial: 2,
                    file: "kinematic/kinematic_0002.ntev".into(),
                    label: SlipState::Incipient,
                    t_start_us: 30_000,
                },
                SampleRow {
                    split: Split::Train,
                    trial: 0,
                    file: "kinematic/kinematic_0000.ntev".into(),
                    label: SlipState::Gross,
                    t_start_us: 90_000,
                },
            ],
        };
        let p = Path::new("m.txt");
        assert_eq!(DatasetManifest::parse(&m.to_text(), p).unwrap(), m);
        assert_eq!(m.balance()[0], [0, 0, 1]);
        assert_eq!(m.balance()[1], [0, 1, 0]);
        assert!(DatasetManifest::parse("seed = 1\n", p).is_err());
    }

    #[test]
    fn exit_codes() {
        let missing = HarnessError::MissingPath {
            what: "dataset manifest",
            path: "x".into(),
        };
        assert_eq!(missing.exit_code(), 2);
        assert!(missing.to_string().contains("x"));
        assert_eq!(HarnessError::MissingTrials("t".into()).exit_code(), 2);
        assert_eq!(
            HarnessError::Snn(SnnError::EmptySplit("test")).exit_code(),
            1
        );
        assert_eq!(HarnessError::InvalidConfig("x".into()).exit_code(), 1);
    }
}
