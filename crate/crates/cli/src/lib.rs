//! Library side of the `sagtwin` binary: configuration, error-to-exit-code
//! mapping and one function per subcommand.

pub mod config;
pub mod run;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use sag_twin::drift::{DetectionState, ResidualFingerprint};
use sag_twin::expert::FuzzyRuleBase;
use sag_twin::io::{manifest_for, read_records_file, write_manifest, write_records_file};
use sag_twin::narx::{self, NarxModel, NarxStructure};
use sag_twin::pipeline::{condition, select_train_test, CONDITIONED_PERIOD, RAW_PERIOD, DOWNSAMPLE_BLOCK};
use sag_twin::regulatory::{select_order, StateSpaceModel};
use sag_twin::scenario::{self, DisturbanceScenario, SyntheticPlant};
use sag_twin::twin::{self, error_report, errors_from_trace, read_trace, GateResult};
use sag_twin::{PlantRecord, SampledSeries};

pub use config::RunConfig;

pub const REGULATORY_FILE: &str = "regulatory.json";
pub const NARX_FILE: &str = "narx.json";
pub const BASELINE_FILE: &str = "baseline.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("no valid segments (found {found}, need at least 2)")]
    NoValidSegments { found: usize },

    #[error("missing model artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] sag_twin::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit code: 2 no valid segments, 3 malformed input row,
    /// 4 identification/training failure or too little data, 5 missing or
    /// unreadable model artifact, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use sag_twin::Error as E;
        match self {
            CliError::NoValidSegments { .. } => 2,
            CliError::MissingArtifact(_) => 5,
            CliError::Core(e) => match e {
                E::InsufficientSegments { .. } => 2,
                E::MalformedRow { .. } => 3,
                E::IdentificationFailed { .. }
                | E::TrainingDiverged { .. }
                | E::InsufficientData { .. }
                | E::SegmentTooShort { .. } => 4,
                E::FormatVersion { .. } => 5,
                _ => 1,
            },
            CliError::Config(_) | CliError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

pub(crate) fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

/// Flag and environment overrides; `None` leaves the config value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub scenario: Option<PathBuf>,
    pub supervisor: Option<bool>,
}

impl RunConfig {
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(h) = o.horizon {
            self.horizon.steps = h;
        }
        if let Some(p) = &o.scenario {
            self.paths.scenario = Some(p.clone());
        }
        if let Some(on) = o.supervisor {
            self.supervisor.enabled = on;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn rulebase(&self) -> Result<FuzzyRuleBase> {
        Ok(match &self.paths.rulebase {
            Some(p) => FuzzyRuleBase::from_file(p)?,
            None => FuzzyRuleBase::default_rulebase(),
        })
    }

    pub fn scenario(&self) -> Result<DisturbanceScenario> {
        Ok(match &self.paths.scenario {
            Some(p) => DisturbanceScenario::from_file(p)?,
            None => DisturbanceScenario::identity(),
        })
    }

    pub fn plant(&self) -> SyntheticPlant {
        SyntheticPlant { config: self.plant.clone(), seed: self.seed }
    }
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub segments: usize,
    pub train_len: usize,
    pub test_len: usize,
}

/// Conditions a raw 5 s record file into `out_dir`: `conditioned.csv` with
/// every valid segment back to back, `manifest.csv`, and the longest and
/// second-longest segments as `train.csv` and `test.csv`.
pub fn cmd_ingest(raw: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<IngestSummary> {
    let records = read_records_file(raw)?;
    let segments = condition(&records, &cfg.validity)?;
    let (train, test) = select_train_test(&segments).map_err(|e| match e {
        sag_twin::Error::InsufficientSegments { found } => CliError::NoValidSegments { found },
        other => other.into(),
    })?;
    create_dir(out_dir)?;
    let all: Vec<PlantRecord> = segments.iter().flat_map(|s| s.records.iter().copied()).collect();
    write_records_file(&out_dir.join("conditioned.csv"), &all)?;
    let mut m = create_file(&out_dir.join("manifest.csv"))?;
    write_manifest(&mut m, &manifest_for(&segments))?;
    m.flush().map_err(io_err(&out_dir.join("manifest.csv")))?;
    write_records_file(&out_dir.join("train.csv"), &train.records)?;
    write_records_file(&out_dir.join("test.csv"), &test.records)?;
    Ok(IngestSummary { segments: segments.len(), train_len: train.len(), test_len: test.len() })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateCost {
    pub candidate: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub records: usize,
    pub identification_records: usize,
    pub order: usize,
    pub order_costs: Vec<CandidateCost>,
    pub lags: usize,
    pub hidden_width: usize,
    pub structure_costs: Vec<CandidateCost>,
    pub narx_cost: f64,
    pub constant_cost: f64,
}

/// Reads a conditioned dataset and checks it is gap-free.
pub fn load_series(path: &Path) -> Result<SampledSeries> {
    let records = read_records_file(path)?;
    let s = SampledSeries::new(records, CONDITIONED_PERIOD);
    if !s.is_uniform() {
        return Err(CliError::Config(format!(
            "{} is not a gap-free {CONDITIONED_PERIOD} s series; condition it with `ingest` first",
            path.display()
        )));
    }
    Ok(s)
}

/// Identifies the regulatory model, selects and trains the NARX model and
/// fingerprints its training residuals. Artifacts land in `models`.
pub fn cmd_train(dataset: &Path, models: &Path, cfg: &RunConfig) -> Result<TrainReport> {
    let train = load_series(dataset)?;
    let largest = NarxStructure {
        m: cfg.narx.lags.iter().copied().max().unwrap_or(0),
        n: cfg.narx.lags.iter().copied().max().unwrap_or(0),
        hidden_width: 1,
    };
    let need = 10 * largest.input_dim() + largest.max_lag() + 1;
    if train.len() < need {
        return Err(sag_twin::Error::InsufficientData { have: train.len(), need }.into());
    }

    let id_len = train.len().min(cfg.identification.max_records.max(1));
    let id_data = train.slice(0..id_len);
    let orders = select_order(&id_data, &cfg.identification.orders, cfg.identification.threshold, &cfg.identification_config())?;

    let tcfg = cfg.training_config();
    let sel = narx::select_structure(&train, &cfg.narx.lags, &cfg.narx.widths, cfg.narx.threshold, &tcfg)?;
    let trained = narx::train(&train, sel.structure, &tcfg)?;
    let detection = DetectionState::from_training(&trained.model, &train.records)?;

    create_dir(models)?;
    write_file(&models.join(REGULATORY_FILE), orders.model.to_json()?.as_bytes())?;
    write_file(&models.join(NARX_FILE), trained.model.to_json()?.as_bytes())?;
    let baseline = serde_json::to_string_pretty(&detection.baseline).map_err(sag_twin::Error::from)?;
    write_file(&models.join(BASELINE_FILE), baseline.as_bytes())?;

    let report = TrainReport {
        seed: cfg.seed,
        records: train.len(),
        identification_records: id_len,
        order: orders.order,
        order_costs: orders.costs.iter().map(|(o, c)| CandidateCost { candidate: format!("order {o}"), cost: *c }).collect(),
        lags: sel.structure.m,
        hidden_width: sel.structure.hidden_width,
        structure_costs: sel
            .costs
            .iter()
            .map(|(s, c)| CandidateCost { candidate: format!("lags {} width {}", s.m, s.hidden_width), cost: *c })
            .collect(),
        narx_cost: trained.cost,
        constant_cost: trained.constant_cost,
    };
    let text = toml::to_string(&report).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&models.join(TRAIN_REPORT_FILE), text.as_bytes())?;
    Ok(report)
}

/// Model artifacts written by [`cmd_train`].
#[derive(Debug, Clone)]
pub struct Models {
    pub regulatory: StateSpaceModel,
    pub narx: NarxModel,
    pub baseline: [ResidualFingerprint; 2],
}

pub fn load_models(dir: &Path) -> Result<Models> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|_| CliError::MissingArtifact(p))
    };
    let regulatory = StateSpaceModel::from_json(&read(REGULATORY_FILE)?)?;
    let narx = NarxModel::from_json(&read(NARX_FILE)?)?;
    let baseline = serde_json::from_str(&read(BASELINE_FILE)?).map_err(sag_twin::Error::from)?;
    Ok(Models { regulatory, narx, baseline })
}

// ---------------------------------------------------------------------------
// report

/// Error statistics and quality gate for a trace scored against a dataset.
#[derive(Debug, Clone)]
pub struct ErrorSummary {
    pub stats: Vec<twin::ErrorStats>,
    /// Empty when the gate horizon lies beyond the prediction horizon.
    pub gate: Vec<GateResult>,
}

/// Writes `report.csv` and `histogram.csv` to `out_dir`.
pub fn write_error_summary(errors: &twin::HorizonErrors, out_dir: &Path, cfg: &RunConfig) -> Result<ErrorSummary> {
    let stats = error_report(errors)?;
    let gate = if cfg.quality_gate.horizon <= cfg.horizon.steps { cfg.quality_gate.evaluate(errors)? } else { Vec::new() };
    let p = out_dir.join("report.csv");
    let mut w = create_file(&p)?;
    twin::write_report(&mut w, &stats)?;
    w.flush().map_err(io_err(&p))?;
    let p = out_dir.join("histogram.csv");
    let mut w = create_file(&p)?;
    twin::write_histograms(&mut w, &stats)?;
    w.flush().map_err(io_err(&p))?;
    Ok(ErrorSummary { stats, gate })
}

/// Scores a prediction trace against the (scenario-modified) dataset it was
/// produced from.
pub fn cmd_report(dataset: &Path, trace: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<ErrorSummary> {
    let series = scenario::apply(&cfg.scenario()?, &load_series(dataset)?);
    let rows = read_trace(fs::File::open(trace).map_err(io_err(trace))?)?;
    let errors = errors_from_trace(&rows, &series.records, cfg.horizon.steps);
    create_dir(out_dir)?;
    write_error_summary(&errors, out_dir, cfg)
}

// ---------------------------------------------------------------------------
// scenario

/// Simulates the synthetic plant. With `segments > 1` the series is cut into
/// that many runs separated by a mill stop; `raw` writes it at the 5 s raw
/// period by holding each sample.
pub fn cmd_generate(out: &Path, steps: usize, series_seed: u64, segments: usize, raw: bool, cfg: &RunConfig) -> Result<usize> {
    let rb = cfg.rulebase()?;
    let series = scenario::generate(&cfg.plant(), &rb, &scenario::default_regulatory(), steps, series_seed)?;
    let mut records = series.records;
    let segments = segments.max(1);
    if segments > 1 {
        let cut = records.len() / segments;
        for (k, r) in records.iter_mut().enumerate() {
            if k > 0 && k % cut == 0 && k / cut < segments {
                r.flags.sag_running = false;
            }
        }
    }
    if raw {
        records = hold_to_raw(&records);
    }
    write_records_file(out, &records)?;
    Ok(records.len())
}

/// Repeats each conditioned record over its block of raw samples.
pub fn hold_to_raw(records: &[PlantRecord]) -> Vec<PlantRecord> {
    records
        .iter()
        .flat_map(|r| {
            (0..DOWNSAMPLE_BLOCK).map(move |j| PlantRecord { timestamp: r.timestamp + j as i64 * RAW_PERIOD, ..*r })
        })
        .collect()
}

pub fn cmd_apply(input: &Path, out: &Path, scenario: &DisturbanceScenario) -> Result<usize> {
    let series = load_series(input)?;
    let modified = scenario::apply(scenario, &series);
    write_records_file(out, &modified.records)?;
    Ok(modified.len())
}

pub fn write_scenario(out: &Path, scenario: &DisturbanceScenario) -> Result<()> {
    scenario.validate()?;
    write_file(out, scenario.to_toml().as_bytes())
}
