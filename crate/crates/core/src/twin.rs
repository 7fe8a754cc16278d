//! Closed-loop composition of the three emulators and the supervisory layer.
//!
//! Each prediction step runs the expert on the (partly predicted) history,
//! feeds the new setpoints through the regulatory model and the resulting
//! MVs through the NARX model. The supervisor scores a grid of CV operating
//! limits by rolling the twin out once per candidate.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::{self, FuzzyRuleBase};
use crate::narx::{NarxModel, RolloutState};
use crate::pipeline::{PlantRecord, CONDITIONED_PERIOD};
use crate::regulatory::{estimate_online, EstimationConfig, StateSpaceModel};
use crate::stats;
use crate::{N_CV, N_MV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorizonConfig {
    /// Prediction steps after the current instant.
    pub steps: usize,
    pub sample_period: i64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { steps: 5, sample_period: CONDITIONED_PERIOD }
    }
}

/// Closed interval per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub y: [Interval; N_CV],
    pub u: [Interval; N_MV],
}

impl Default for FeasibleRegion {
    fn default() -> Self {
        Self { y: [Interval::UNBOUNDED; N_CV], u: [Interval::UNBOUNDED; N_MV] }
    }
}

impl FeasibleRegion {
    pub fn contains(&self, y: &[f64; N_CV], u: &[f64; N_MV]) -> bool {
        (0..N_CV).all(|c| self.y[c].contains(y[c])) && (0..N_MV).all(|j| self.u[j].contains(u[j]))
    }
}

/// Candidate limit grids and the feasible region of the supervisory search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub y_lim_grid: [Vec<f64>; N_CV],
    pub region: FeasibleRegion,
}

impl Bounds {
    /// Candidates in grid order: first CV outer, second CV inner.
    pub fn candidates(&self) -> Vec<[f64; N_CV]> {
        self.y_lim_grid[0].iter().flat_map(|&a| self.y_lim_grid[1].iter().map(move |&b| [a, b])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinPrediction {
    pub y_hat: Vec<[f64; N_CV]>,
    pub u_hat: Vec<[f64; N_MV]>,
    pub u_sp_hat: Vec<[f64; N_MV]>,
    pub feasible: Vec<bool>,
}

impl TwinPrediction {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|f| *f)
    }
}

/// The three emulators in series. The regulatory model's `x0` is the state
/// at the first predicted instant, normally set by [`Twin::at_instant`].
#[derive(Debug, Clone)]
pub struct Twin {
    pub rulebase: FuzzyRuleBase,
    pub regulatory: StateSpaceModel,
    pub narx: NarxModel,
}

impl Twin {
    /// Records the rollout needs before the first predicted instant.
    pub fn required_history(&self) -> usize {
        self.narx.structure.max_lag().max(self.rulebase.slope_window)
    }

    /// Copy whose regulatory state has been re-estimated on `history`.
    pub fn at_instant(&self, history: &[PlantRecord], cfg: &EstimationConfig) -> Result<Twin> {
        let est = estimate_online(&self.regulatory, history, cfg)?;
        Ok(Twin { regulatory: self.regulatory.with_online(&est), ..self.clone() })
    }

    /// Predicts instants `k..=k+N`, where `k` follows the last history record.
    pub fn rollout_closed_loop(
        &self,
        history: &[PlantRecord],
        y_lim: [f64; N_CV],
        horizon: &HorizonConfig,
        region: &FeasibleRegion,
    ) -> Result<TwinPrediction> {
        self.regulatory.validate()?;
        self.narx.validate()?;
        let need = self.required_history();
        if history.len() < need {
            return Err(Error::WindowTooShort { have: history.len(), need });
        }
        let w = self.rulebase.slope_window;
        let mut window: Vec<PlantRecord> = history[history.len() - w..].to_vec();
        let mut narx_state = RolloutState::from_history(&self.narx, history)?;
        let mut x = self.regulatory.x0.clone();
        let mut u_sp = history[history.len() - 1].u_sp;
        let steps = horizon.steps + 1;
        let mut out = TwinPrediction {
            y_hat: Vec::with_capacity(steps),
            u_hat: Vec::with_capacity(steps),
            u_sp_hat: Vec::with_capacity(steps),
            feasible: Vec::with_capacity(steps),
        };
        for _ in 0..steps {
            let cmd = expert::step(&self.rulebase, &window, y_lim)?;
            u_sp = expert::apply_command(&self.rulebase, u_sp, &cmd);
            let u = self.regulatory.step(&mut x, &u_sp);
            let y = narx_state.advance(&self.narx, u)?;
            let last = window[w - 1];
            window.remove(0);
            window.push(PlantRecord { timestamp: last.timestamp + horizon.sample_period, u, u_sp, y, flags: last.flags });
            out.y_hat.push(y);
            out.u_hat.push(u);
            out.u_sp_hat.push(u_sp);
            out.feasible.push(region.contains(&y, &u));
        }
        Ok(out)
    }
}

/// Score of one candidate limit pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub y_lim: [f64; N_CV],
    pub score: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorDecision {
    pub y_lim: [f64; N_CV],
    pub score: f64,
    pub table: Vec<CandidateScore>,
}

/// Negative mean predicted feed tonnage over the horizon.
pub fn throughput_objective(p: &TwinPrediction) -> f64 {
    -p.u_hat.iter().map(|u| u[0]).sum::<f64>() / p.u_hat.len() as f64
}

/// Exhaustive search over the limit grid. Infeasible candidates are scored
/// but never chosen; ties go to the first candidate in grid order.
pub fn evaluate_supervisor<F>(
    twin: &Twin,
    history: &[PlantRecord],
    bounds: &Bounds,
    objective: F,
    horizon: &HorizonConfig,
) -> Result<SupervisorDecision>
where
    F: Fn(&TwinPrediction) -> f64 + Sync,
{
    let candidates = bounds.candidates();
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("empty operating-limit grid".into()));
    }
    let table = candidates
        .par_iter()
        .map(|lim| {
            let p = twin.rollout_closed_loop(history, *lim, horizon, &bounds.region)?;
            Ok(CandidateScore { y_lim: *lim, score: objective(&p), feasible: p.all_feasible() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<&CandidateScore> = None;
    for c in table.iter().filter(|c| c.feasible) {
        if best.is_none_or(|b| c.score < b.score) {
            best = Some(c);
        }
    }
    match best {
        Some(b) => Ok(SupervisorDecision { y_lim: b.y_lim, score: b.score, table: table.clone() }),
        None => Err(Error::AllInfeasible { table }),
    }
}

// ---------------------------------------------------------------------------
// Error statistics

/// Proportional errors `(pred - meas) / meas` per horizon and CV, in the
/// order the predictions were made.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HorizonErrors {
    pub errors: Vec<[Vec<f64>; N_CV]>,
}

impl HorizonErrors {
    pub fn new(steps: usize) -> Self {
        Self { errors: (0..=steps).map(|_| [Vec::new(), Vec::new()]).collect() }
    }

    pub fn push(&mut self, horizon: usize, predicted: &[f64; N_CV], measured: &[f64; N_CV]) {
        for c in 0..N_CV {
            self.errors[horizon][c].push((predicted[c] - measured[c]) / measured[c]);
        }
    }
}

/// Backtests the twin: at every instant with enough history (every
/// `stride`-th one) the regulatory state is re-estimated, the twin rolled
/// out under `y_lim`, and each prediction compared with the record it
/// predicts. `on_prediction` sees every rollout before it is scored.
pub fn backtest<F>(
    twin: &Twin,
    records: &[PlantRecord],
    y_lim: [f64; N_CV],
    horizon: &HorizonConfig,
    est: &EstimationConfig,
    stride: usize,
    mut on_prediction: F,
) -> Result<HorizonErrors>
where
    F: FnMut(usize, &TwinPrediction) -> Result<()>,
{
    let start = twin.required_history().max(est.window);
    let mut errs = HorizonErrors::new(horizon.steps);
    let region = FeasibleRegion::default();
    for k in (start..records.len()).step_by(stride.max(1)) {
        let hist = &records[..k];
        let p = twin.at_instant(hist, est)?.rollout_closed_loop(hist, y_lim, horizon, &region)?;
        on_prediction(k, &p)?;
        for (i, y) in p.y_hat.iter().enumerate() {
            if let Some(r) = records.get(k + i) {
                errs.push(i, y, &r.y);
            }
        }
    }
    Ok(errs)
}

pub const HISTOGRAM_BINS: usize = 41;
/// Histogram half-width in standard deviations.
pub const HISTOGRAM_SPAN: f64 = 5.0;
pub const MIN_PAIRS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub horizon: usize,
    pub cv: usize,
    pub mean: f64,
    pub std: f64,
    pub p005: f64,
    pub p995: f64,
    pub acf1: f64,
    pub histogram: Vec<HistogramBin>,
}

fn histogram(x: &[f64], mean: f64, std: f64) -> Vec<HistogramBin> {
    let half = HISTOGRAM_SPAN * std;
    let width = 2.0 * half / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|b| HistogramBin {
            lower: mean - half + b as f64 * width,
            upper: mean - half + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for v in x {
        let idx = if width > 0.0 {
            ((v - (mean - half)) / width).floor()
        } else {
            (HISTOGRAM_BINS / 2) as f64
        };
        if idx >= 0.0 && idx < HISTOGRAM_BINS as f64 {
            bins[idx as usize].count += 1;
        } else if width > 0.0 && (v - (mean + half)).abs() <= f64::EPSILON * half.abs().max(1.0) {
            bins[HISTOGRAM_BINS - 1].count += 1;
        }
    }
    bins
}

/// Summary statistics of the proportional errors for every horizon and CV.
pub fn error_report(errors: &HorizonErrors) -> Result<Vec<ErrorStats>> {
    let mut out = Vec::new();
    for (h, per_cv) in errors.errors.iter().enumerate() {
        for (cv, x) in per_cv.iter().enumerate() {
            if x.len() < MIN_PAIRS {
                return Err(Error::InsufficientData { have: x.len(), need: MIN_PAIRS });
            }
            let sorted = stats::sorted(x);
            let mean = stats::mean(x);
            let std = stats::std_dev(x);
            out.push(ErrorStats {
                horizon: h,
                cv,
                mean,
                std,
                p005: stats::quantile_sorted(&sorted, 0.005),
                p995: stats::quantile_sorted(&sorted, 0.995),
                acf1: stats::acf1(x),
                histogram: histogram(x, mean, std),
            });
        }
    }
    Ok(out)
}

/// Acceptance bands on the central interval of the proportional error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityGate {
    pub horizon: usize,
    pub coverage: f64,
    /// Half-width of the allowed band per CV (fraction, 0.01 = 1%).
    pub bands: [f64; N_CV],
}

impl Default for QualityGate {
    fn default() -> Self {
        Self { horizon: 5, coverage: 0.99, bands: [0.01, 0.05] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateResult {
    pub cv: usize,
    pub lower: f64,
    pub upper: f64,
    pub band: f64,
    pub pass: bool,
}

impl QualityGate {
    pub fn evaluate(&self, errors: &HorizonErrors) -> Result<Vec<GateResult>> {
        let per_cv = errors
            .errors
            .get(self.horizon)
            .ok_or_else(|| Error::InvalidConfig(format!("gate horizon {} not predicted", self.horizon)))?;
        let tail = (1.0 - self.coverage) / 2.0;
        (0..N_CV)
            .map(|cv| {
                let x = &per_cv[cv];
                if x.len() < MIN_PAIRS {
                    return Err(Error::InsufficientData { have: x.len(), need: MIN_PAIRS });
                }
                let s = stats::sorted(x);
                let lower = stats::quantile_sorted(&s, tail);
                let upper = stats::quantile_sorted(&s, 1.0 - tail);
                let band = self.bands[cv];
                Ok(GateResult { cv, lower, upper, band, pass: lower >= -band && upper <= band })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// CSV output

pub const TRACE_HEADER: &str = "k,i,y1_hat,y2_hat,u1_hat,u2_hat,u3_hat,u1_sp_hat,u2_sp_hat,u3_sp_hat,feasible";
pub const REPORT_HEADER: &str = "horizon,cv,mean,std,p005,p995,acf1";
pub const HISTOGRAM_HEADER: &str = "horizon,cv,bin,lower,upper,count";

pub fn write_trace_rows<W: Write>(w: &mut W, k: usize, p: &TwinPrediction) -> Result<()> {
    for i in 0..p.y_hat.len() {
        let (y, u, s) = (p.y_hat[i], p.u_hat[i], p.u_sp_hat[i]);
        writeln!(
            w,
            "{k},{i},{},{},{},{},{},{},{},{},{}",
            y[0], y[1], u[0], u[1], u[2], s[0], s[1], s[2], p.feasible[i]
        )?;
    }
    Ok(())
}

/// One predicted CV pair read back from a trace file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub i: usize,
    pub y_hat: [f64; N_CV],
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::MalformedRow { line: 1, message: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(Error::MalformedRow { line: 1, message: "not a prediction trace".into() });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |name: &str| Error::MalformedRow { line, message: format!("{name}: cannot parse") };
        let k = row[0].parse().map_err(|_| bad("k"))?;
        let i = row[1].parse().map_err(|_| bad("i"))?;
        let y1 = row[2].parse().map_err(|_| bad("y1_hat"))?;
        let y2 = row[3].parse().map_err(|_| bad("y2_hat"))?;
        out.push(TraceRow { k, i, y_hat: [y1, y2] });
    }
    Ok(out)
}

/// Scores trace rows against the records they predict. Rows beyond the end
/// of `records` or past `steps` are skipped.
pub fn errors_from_trace(rows: &[TraceRow], records: &[PlantRecord], steps: usize) -> HorizonErrors {
    let mut errs = HorizonErrors::new(steps);
    for r in rows.iter().filter(|r| r.i <= steps) {
        if let Some(m) = records.get(r.k + r.i) {
            errs.push(r.i, &r.y_hat, &m.y);
        }
    }
    errs
}

pub fn write_report<W: Write>(mut w: W, stats: &[ErrorStats]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for s in stats {
        writeln!(w, "{},{},{},{},{},{},{}", s.horizon, s.cv + 1, s.mean, s.std, s.p005, s.p995, s.acf1)?;
    }
    Ok(())
}

pub fn write_histograms<W: Write>(mut w: W, stats: &[ErrorStats]) -> Result<()> {
    writeln!(w, "{HISTOGRAM_HEADER}")?;
    for s in stats {
        for (b, bin) in s.histogram.iter().enumerate() {
            writeln!(w, "{},{},{b},{},{},{}", s.horizon, s.cv + 1, bin.lower, bin.upper, bin.count)?;
        }
    }
    Ok(())
}
