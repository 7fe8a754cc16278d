//! Residual-based detection of process-model drift.
//!
//! The one-step proportional errors of the NARX model are fingerprinted on
//! the training record. Online, a rolling window of recent errors is tested
//! against that fingerprint for equal mean, variance, distribution and lag-1
//! autocorrelation. A counter per CV grows while any test rejects and resets
//! on a clean instant; crossing its threshold latches a retraining trigger.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::narx::{self, NarxModel, NarxStructure, TrainingConfig};
use crate::pipeline::{PlantRecord, SampledSeries, ValidityCriteria, CONDITIONED_PERIOD};
use crate::stats::{self, Moments};
use crate::N_CV;

pub const MIN_FINGERPRINT: usize = 100;
pub const MAX_ECDF_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualFingerprint {
    pub mean: f64,
    pub variance: f64,
    /// Sorted, decimated sample of the residuals.
    pub ecdf: Vec<f64>,
    pub acf1: f64,
    pub n: usize,
}

pub fn fingerprint(residuals: &[f64]) -> Result<ResidualFingerprint> {
    if residuals.len() < MIN_FINGERPRINT {
        return Err(Error::InsufficientData { have: residuals.len(), need: MIN_FINGERPRINT });
    }
    let sorted = stats::sorted(residuals);
    let stride = sorted.len().div_ceil(MAX_ECDF_POINTS);
    Ok(ResidualFingerprint {
        mean: stats::mean(residuals),
        variance: stats::variance(residuals),
        ecdf: sorted.into_iter().step_by(stride).collect(),
        acf1: stats::acf1(residuals),
        n: residuals.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Recent-window length `N_D`.
    pub window: usize,
    pub alpha: f64,
    /// Counter threshold `M_D` per CV.
    pub thresholds: [u32; N_CV],
    /// Valid records used when retraining.
    pub retrain_records: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { window: 30, alpha: 0.01, thresholds: [103, 181], retrain_records: 720 }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 10 {
            return Err(Error::InvalidConfig("detection window must be at least 10".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 0.5)".into()));
        }
        if self.thresholds.contains(&0) {
            return Err(Error::InvalidConfig("trigger thresholds must be at least 1".into()));
        }
        Ok(())
    }
}

/// p-values of the four tests, in the order mean, variance, distribution,
/// autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryOutcome {
    pub p: [f64; 4],
    pub pass: [bool; 4],
}

impl BatteryOutcome {
    pub fn all_pass(&self) -> bool {
        self.pass.iter().all(|p| *p)
    }
}

pub fn test_battery(baseline: &ResidualFingerprint, window: &[f64], n_d: usize, alpha: f64) -> Result<BatteryOutcome> {
    if window.len() < n_d {
        return Err(Error::WindowNotFull { have: window.len(), need: n_d });
    }
    let w = &window[window.len() - n_d..];
    let wm = Moments::of(w);
    let bm = Moments { mean: baseline.mean, variance: baseline.variance, n: baseline.n };
    let mean_p = stats::welch_t_test(wm, bm);
    let var_p = stats::f_test(wm, bm);
    let ks_p = if wm.variance > 0.0 { stats::ks_two_sample(&stats::sorted(w), &baseline.ecdf).1 } else { 0.0 };
    let acf_p = stats::fisher_z_test(stats::acf1(w), n_d, baseline.acf1, baseline.n);
    let p = [mean_p, var_p, ks_p, acf_p];
    Ok(BatteryOutcome { p, pass: p.map(|v| v >= alpha) })
}

/// Detector state for both CVs.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionState {
    pub baseline: [ResidualFingerprint; N_CV],
    pub window: [VecDeque<f64>; N_CV],
    pub counter: [u32; N_CV],
    pub triggered: [bool; N_CV],
}

/// Result of one update for one CV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub residual: f64,
    pub battery: Option<BatteryOutcome>,
    pub counter: u32,
    pub triggered: bool,
    /// The trigger latched at this update.
    pub fired: bool,
}

impl DetectionState {
    pub fn new(baseline: [ResidualFingerprint; N_CV]) -> Self {
        Self { baseline, window: Default::default(), counter: [0; N_CV], triggered: [false; N_CV] }
    }

    /// Fingerprints the one-step residuals of `model` on its training data.
    pub fn from_training(model: &NarxModel, train: &[PlantRecord]) -> Result<Self> {
        let r = one_step_residuals(model, train)?;
        Ok(Self::new([fingerprint(&r[0])?, fingerprint(&r[1])?]))
    }

    pub fn any_triggered(&self) -> bool {
        self.triggered.iter().any(|t| *t)
    }

    /// Pushes one residual per CV and advances the counters.
    pub fn update(&mut self, residual: [f64; N_CV], cfg: &DetectionConfig) -> [UpdateRecord; N_CV] {
        std::array::from_fn(|cv| {
            let win = &mut self.window[cv];
            win.push_back(residual[cv]);
            while win.len() > cfg.window {
                win.pop_front();
            }
            let mut fired = false;
            let battery = if win.len() == cfg.window {
                let w: Vec<f64> = win.iter().copied().collect();
                let out = test_battery(&self.baseline[cv], &w, cfg.window, cfg.alpha).expect("window is full");
                if out.all_pass() {
                    self.counter[cv] = 0;
                } else {
                    self.counter[cv] += 1;
                }
                if self.counter[cv] > cfg.thresholds[cv] && !self.triggered[cv] {
                    self.triggered[cv] = true;
                    fired = true;
                }
                Some(out)
            } else {
                None
            };
            UpdateRecord { residual: residual[cv], battery, counter: self.counter[cv], triggered: self.triggered[cv], fired }
        })
    }

    /// Clears counters, triggers and windows after a new baseline.
    pub fn reset(&mut self, baseline: [ResidualFingerprint; N_CV]) {
        *self = Self::new(baseline);
    }
}

/// One-step proportional errors `(y_hat - y) / y` of `model` on `records`.
pub fn one_step_residuals(model: &NarxModel, records: &[PlantRecord]) -> Result<[Vec<f64>; N_CV]> {
    let mut out: [Vec<f64>; N_CV] = Default::default();
    for (t, y) in model.one_step_predictions(records)? {
        for cv in 0..N_CV {
            out[cv].push(proportional_error(y[cv], records[t].y[cv]));
        }
    }
    Ok(out)
}

pub fn proportional_error(predicted: f64, measured: f64) -> f64 {
    (predicted - measured) / measured
}

/// Most recent contiguous run of valid records, at most `limit` long.
fn recent_valid(recent: &[PlantRecord], criteria: &ValidityCriteria, limit: usize) -> Vec<PlantRecord> {
    let mut run: Vec<PlantRecord> = Vec::new();
    for r in recent.iter().rev() {
        let contiguous = run.last().is_none_or(|next| next.timestamp - r.timestamp == CONDITIONED_PERIOD);
        if !criteria.accepts(r) || !contiguous || run.len() == limit {
            break;
        }
        run.push(*r);
    }
    run.reverse();
    run
}

/// Retrains the NARX model when a trigger is latched. Returns `None` when
/// nothing is triggered. Without enough recent valid data the trigger stays
/// latched and `RetrainDeferred` is returned.
pub fn retrain_if_triggered(
    state: &mut DetectionState,
    recent: &[PlantRecord],
    criteria: &ValidityCriteria,
    structure: NarxStructure,
    train_cfg: &TrainingConfig,
    cfg: &DetectionConfig,
) -> Result<Option<NarxModel>> {
    if !state.any_triggered() {
        return Ok(None);
    }
    let data = recent_valid(recent, criteria, cfg.retrain_records);
    if data.len() < cfg.retrain_records {
        return Err(Error::RetrainDeferred { valid: data.len(), need: cfg.retrain_records });
    }
    let trained = narx::train(&SampledSeries::new(data.clone(), CONDITIONED_PERIOD), structure, train_cfg)?;
    let fresh = DetectionState::from_training(&trained.model, &data)?;
    state.reset(fresh.baseline);
    Ok(Some(trained.model))
}

pub const LOG_HEADER: &str = "k,cv,residual,mean_p,var_p,ks_p,acf_p,M,triggered";
pub const JOURNAL_HEADER: &str = "k,cv,event,detail";

pub fn write_log_rows<W: Write>(w: &mut W, k: usize, rows: &[UpdateRecord; N_CV]) -> Result<()> {
    for (cv, r) in rows.iter().enumerate() {
        let p = match r.battery {
            Some(b) => format!("{},{},{},{}", b.p[0], b.p[1], b.p[2], b.p[3]),
            None => ",,,".to_string(),
        };
        writeln!(w, "{k},{},{},{p},{},{}", cv + 1, r.residual, r.counter, r.triggered)?;
    }
    Ok(())
}

pub fn write_journal_row<W: Write>(w: &mut W, k: usize, cv: Option<usize>, event: &str, detail: &str) -> Result<()> {
    let cv = cv.map_or(String::new(), |c| (c + 1).to_string());
    writeln!(w, "{k},{cv},{event},{}", detail.replace(',', ";"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn fingerprint_of_normal_sample() {
        let f = fingerprint(&normals(10_000, 1)).unwrap();
        assert!(f.mean.abs() < 0.05);
        assert!((f.variance - 1.0).abs() < 0.1);
        assert!(f.acf1.abs() < 0.05);
        assert!(f.ecdf.len() <= MAX_ECDF_POINTS);
        assert!(f.ecdf.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fingerprint_of_ar1() {
        let e = normals(10_000, 2);
        let mut x = vec![0.0; e.len()];
        for t in 1..e.len() {
            x[t] = 0.8 * x[t - 1] + e[t];
        }
        assert!((fingerprint(&x).unwrap().acf1 - 0.8).abs() < 0.05);
    }

    #[test]
    fn fingerprint_needs_data() {
        assert!(matches!(fingerprint(&[0.0; 99]), Err(Error::InsufficientData { .. })));
        let f = fingerprint(&[0.5; 100]).unwrap();
        assert_eq!(f.variance, 0.0);
    }

    #[test]
    fn battery_calibration() {
        let base = fingerprint(&normals(10_000, 3)).unwrap();
        let draws = 2000;
        let mut rejections = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..draws {
            let w: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
            let out = test_battery(&base, &w, 30, 0.01).unwrap();
            for i in 0..4 {
                rejections[i] += usize::from(!out.pass[i]);
            }
        }
        let stderr = (0.01f64 * 0.99 / draws as f64).sqrt();
        for (i, r) in rejections.iter().enumerate() {
            let rate = *r as f64 / draws as f64;
            assert!(rate <= 0.01 + 2.0 * stderr, "test {i} rejects at {rate}");
        }
    }

    #[test]
    fn mean_test_power() {
        let base = fingerprint(&normals(10_000, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = 1000;
        let mut fails = 0;
        for _ in 0..draws {
            let w: Vec<f64> = (0..30).map(|_| 1.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            fails += usize::from(!test_battery(&base, &w, 30, 0.01).unwrap().pass[0]);
        }
        assert!(fails as f64 / draws as f64 > 0.99);
    }

    #[test]
    fn constant_window_fails_variance_and_ks() {
        let base = fingerprint(&normals(1000, 7)).unwrap();
        let out = test_battery(&base, &[0.1; 30], 30, 0.01).unwrap();
        assert!(!out.pass[1] && !out.pass[2]);
    }

    #[test]
    fn short_window_rejected() {
        let base = fingerprint(&normals(1000, 7)).unwrap();
        assert!(matches!(test_battery(&base, &[0.0; 10], 30, 0.01), Err(Error::WindowNotFull { .. })));
    }

    fn state_for(seed: u64) -> DetectionState {
        let f = fingerprint(&normals(5000, seed)).unwrap();
        DetectionState::new([f.clone(), f])
    }

    #[test]
    fn clean_updates_never_count() {
        let mut st = state_for(8);
        let cfg = DetectionConfig::default();
        let vals = normals(30, 100);
        for k in 0..229 {
            let r = st.update([vals[k % 30], vals[k % 30]], &cfg);
            for u in &r {
                assert_eq!(u.counter, 0);
                assert!(u.battery.is_none_or(|b| b.all_pass()));
            }
        }
        assert!(!st.any_triggered());
    }

    #[test]
    fn threshold_boundary() {
        let mut st = state_for(9);
        let cfg = DetectionConfig { thresholds: [103, 181], ..Default::default() };
        // Constant offset residuals fail the variance test at every full window.
        for _ in 0..29 {
            st.update([5.0, 5.0], &cfg);
        }
        for step in 1..=104 {
            let r = st.update([5.0, 5.0], &cfg);
            assert_eq!(r[0].counter, step);
            assert_eq!(r[0].fired, step == 104);
            assert_eq!(r[0].triggered, step >= 104);
        }
        assert!(!st.triggered[1]);
    }

    #[test]
    fn alternating_counter() {
        let mut st = state_for(10);
        let cfg = DetectionConfig { window: 10, thresholds: [1, 1], ..Default::default() };
        let good = normals(10, 200);
        let base = fingerprint(&normals(5000, 10)).unwrap();
        // Window of good values passes; find it, then alternate by swapping in a spike.
        assert!(test_battery(&base, &good, 10, 0.01).unwrap().all_pass());
        for &v in &good {
            st.update([v, v], &cfg);
        }
        assert_eq!(st.counter[0], 0);
        st.window[0] = good.iter().copied().collect();
        let r = st.update([50.0, good[0]], &cfg);
        assert_eq!(r[0].counter, 1);
        st.window[0] = good[1..].iter().copied().collect();
        let r = st.update([good[0], good[0]], &cfg);
        assert_eq!(r[0].counter, 0);
        assert!(!st.triggered[0]);
    }

    #[test]
    fn recent_valid_stops_at_gaps_and_invalid() {
        use crate::pipeline::tests::rec;
        let crit = ValidityCriteria::default();
        let mut recs: Vec<PlantRecord> = (0..10).map(|i| rec(30 * i, 1.0)).collect();
        recs[3].flags.sag_running = false;
        assert_eq!(recent_valid(&recs, &crit, 100).len(), 6);
        assert_eq!(recent_valid(&recs, &crit, 4).len(), 4);
        recs[7].timestamp += 1;
        assert_eq!(recent_valid(&recs, &crit, 100).len(), 2);
    }

    #[test]
    fn retrain_not_triggered_is_noop() {
        let mut st = state_for(11);
        let before = st.clone();
        let out = retrain_if_triggered(
            &mut st,
            &[],
            &ValidityCriteria::default(),
            NarxStructure::default(),
            &TrainingConfig::default(),
            &DetectionConfig::default(),
        )
        .unwrap();
        assert!(out.is_none());
        assert_eq!(st, before);
    }

    #[test]
    fn retrain_deferred_keeps_latch() {
        use crate::pipeline::tests::rec;
        let mut st = state_for(12);
        st.triggered[0] = true;
        let mut recs: Vec<PlantRecord> = (0..800).map(|i| rec(30 * i, 1.0)).collect();
        for r in &mut recs {
            r.flags.expert_online = false;
        }
        let out = retrain_if_triggered(
            &mut st,
            &recs,
            &ValidityCriteria::default(),
            NarxStructure::default(),
            &TrainingConfig::default(),
            &DetectionConfig::default(),
        );
        assert!(matches!(out, Err(Error::RetrainDeferred { valid: 0, .. })));
        assert!(st.triggered[0]);
    }
}
