//! Synthetic SAG plant and multiplicative disturbance scenarios.
//!
//! The plant is a hold-up model: mill load `W` fills with fresh feed and
//! empties through a discharge term that grows with load and speed and
//! shrinks with ore hardness. Bearing pressure is a concave function of load;
//! motor power follows the usual load/speed torque curve. Hardness wanders
//! as a mean-reverting random walk, measurements carry Gaussian noise, and
//! an operator occasionally moves the solids and speed setpoints. The expert
//! emulator and regulatory loops close the loop.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::{self, FuzzyRuleBase};
use crate::pipeline::{PlantRecord, RecordFlags, SampledSeries, CONDITIONED_PERIOD};
use crate::regulatory::StateSpaceModel;
use crate::{N_CV, N_MV};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Nominal load [t].
    pub load_nominal: f64,
    /// Discharge rate at nominal load, speed and hardness [t/h].
    pub discharge_nominal: f64,
    /// Load exponent of the discharge.
    pub discharge_load_exponent: f64,
    /// Speed exponent of the discharge.
    pub discharge_speed_exponent: f64,
    /// Fractional discharge change per percentage point of solids.
    pub discharge_solids_gain: f64,
    pub speed_nominal: f64,
    pub solids_nominal: f64,
    /// Pressure at nominal load [kPa].
    pub pressure_nominal: f64,
    /// Pressure slope at nominal load [kPa/t].
    pub pressure_slope: f64,
    /// Pressure curvature [kPa/t^2], negative for a concave curve.
    pub pressure_curvature: f64,
    /// Power at peak load and nominal speed [kW].
    pub power_peak: f64,
    /// Load at which power peaks [t].
    pub power_peak_load: f64,
    /// Load offset from the peak at which power falls to zero [t]; sets the
    /// curvature of the parabolic power curve.
    pub power_curve_width: f64,
    /// Measurement noise standard deviation per CV.
    pub noise_std: [f64; N_CV],
    /// Per-sample standard deviation of the hardness walk.
    pub hardness_std: f64,
    /// Mean reversion of hardness towards 1 per sample.
    pub hardness_reversion: f64,
    /// Per-sample standard deviation of the relative power drift (motor and
    /// charge effects not visible in the bearing pressure).
    pub power_drift_std: f64,
    /// Mean reversion of the power drift towards 0 per sample.
    pub power_drift_reversion: f64,
    /// Probability per sample of an operator setpoint move.
    pub operator_move_probability: f64,
    /// Ranges of operator solids and speed setpoints.
    pub solids_range: [f64; 2],
    pub speed_range: [f64; 2],
    /// Operating limits handed to the expert at the start of a run.
    pub y_lim: [f64; N_CV],
    /// Probability per sample that the operator moves the pressure limit.
    pub limit_move_probability: f64,
    /// Range the moved pressure limit is drawn from.
    pub pressure_limit_range: [f64; 2],
    /// Initial MV setpoints.
    pub initial_setpoints: [f64; N_MV],
    /// Samples simulated before recording starts.
    pub warmup: usize,
    pub start_timestamp: i64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            load_nominal: 400.0,
            discharge_nominal: 1600.0,
            discharge_load_exponent: 0.75,
            discharge_speed_exponent: 1.0,
            discharge_solids_gain: -0.01,
            speed_nominal: 9.5,
            solids_nominal: 72.0,
            pressure_nominal: 1200.0,
            pressure_slope: 2.0,
            pressure_curvature: -0.002,
            power_peak: 8800.0,
            power_peak_load: 400.0,
            power_curve_width: 400.0,
            noise_std: [2.0, 110.0],
            hardness_std: 0.002,
            hardness_reversion: 0.002,
            power_drift_std: 0.008,
            power_drift_reversion: 0.01,
            operator_move_probability: 0.01,
            solids_range: [70.0, 74.0],
            speed_range: [9.3, 9.7],
            y_lim: [1260.0, 9500.0],
            limit_move_probability: 0.0,
            pressure_limit_range: [1150.0, 1300.0],
            initial_setpoints: [1600.0, 72.0, 9.5],
            warmup: 300,
            start_timestamp: 0,
        }
    }
}

/// Plant configuration plus the seed driving its noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPlant {
    pub config: PlantConfig,
    pub seed: u64,
}

/// Hidden state of the synthetic plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub load: f64,
    pub hardness: f64,
    /// Relative deviation of power from its load/speed curve.
    pub power_drift: f64,
}

impl PlantConfig {
    pub fn discharge(&self, s: &PlantState, u: &[f64; N_MV]) -> f64 {
        let load = (s.load / self.load_nominal).max(0.0);
        let speed = (u[2] / self.speed_nominal).max(0.0);
        let solids = (1.0 + self.discharge_solids_gain * (u[1] - self.solids_nominal)).max(0.0);
        self.discharge_nominal * load.powf(self.discharge_load_exponent) * speed.powf(self.discharge_speed_exponent)
            * solids
            / s.hardness
    }

    /// Noise-free CVs for a given state and speed.
    pub fn outputs(&self, s: &PlantState, u: &[f64; N_MV]) -> [f64; N_CV] {
        let dw = s.load - self.load_nominal;
        let pressure = self.pressure_nominal + self.pressure_slope * dw + self.pressure_curvature * dw * dw;
        let r = (s.load - self.power_peak_load) / self.power_curve_width;
        let power = self.power_peak * (u[2] / self.speed_nominal) * (1.0 - r * r) * (1.0 + s.power_drift);
        [pressure, power]
    }

    /// Advances the load by one sample under MVs `u`.
    pub fn advance(&self, s: &mut PlantState, u: &[f64; N_MV]) {
        let dt_h = CONDITIONED_PERIOD as f64 / 3600.0;
        s.load = (s.load + dt_h * (u[0] - self.discharge(s, u))).max(1.0);
    }

    fn nominal_outputs(&self) -> [f64; N_CV] {
        self.outputs(&PlantState { load: self.load_nominal, hardness: 1.0, power_drift: 0.0 }, &self.initial_setpoints)
    }
}

/// Runs the expert, regulatory loops and plant for `steps` recorded samples.
pub fn generate(
    plant: &SyntheticPlant,
    rulebase: &FuzzyRuleBase,
    regulatory: &StateSpaceModel,
    steps: usize,
    seed: u64,
) -> Result<SampledSeries> {
    regulatory.validate()?;
    let cfg = &plant.config;
    let mut rng = ChaCha8Rng::seed_from_u64(plant.seed ^ seed.rotate_left(32));
    let noise: [Normal<f64>; N_CV] = std::array::from_fn(|c| Normal::new(0.0, cfg.noise_std[c]).expect("finite std"));
    let walk = Normal::new(0.0, cfg.hardness_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let nominal = cfg.nominal_outputs();
    let flags = RecordFlags { sag_running: true, expert_online: true };

    let drift = Normal::new(0.0, cfg.power_drift_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut state = PlantState { load: cfg.load_nominal, hardness: 1.0, power_drift: 0.0 };
    let mut x = settled_state(regulatory, &cfg.initial_setpoints).unwrap_or_else(|| regulatory.x0.clone());
    let mut u_sp = cfg.initial_setpoints;
    let mut u = u_sp;
    let mut y_lim = cfg.y_lim;
    let y0 = cfg.outputs(&state, &u);
    let w = rulebase.slope_window;
    let mut window: Vec<PlantRecord> = (0..w)
        .map(|i| PlantRecord { timestamp: cfg.start_timestamp - (w - i) as i64 * CONDITIONED_PERIOD, u, u_sp, y: y0, flags })
        .collect();
    let mut records = Vec::with_capacity(steps);
    for t in 0..cfg.warmup + steps {
        if rng.random_bool(cfg.limit_move_probability.clamp(0.0, 1.0)) {
            y_lim[0] = rng.random_range(cfg.pressure_limit_range[0]..=cfg.pressure_limit_range[1]);
        }
        let cmd = expert::step(rulebase, &window, y_lim)?;
        u_sp = expert::apply_command(rulebase, u_sp, &cmd);
        if rng.random_bool(cfg.operator_move_probability.clamp(0.0, 1.0)) {
            u_sp[1] = rng.random_range(cfg.solids_range[0]..=cfg.solids_range[1]);
            u_sp[2] = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
        }
        u = regulatory.step(&mut x, &u_sp);
        state.hardness += cfg.hardness_reversion * (1.0 - state.hardness) + walk.sample(&mut rng);
        state.hardness = state.hardness.max(0.1);
        state.power_drift += -cfg.power_drift_reversion * state.power_drift + drift.sample(&mut rng);
        cfg.advance(&mut state, &u);
        let clean = cfg.outputs(&state, &u);
        let y: [f64; N_CV] = std::array::from_fn(|c| clean[c] + noise[c].sample(&mut rng));
        if (0..N_CV).any(|c| !y[c].is_finite() || y[c].abs() > 10.0 * nominal[c].abs())
            || u.iter().any(|v| !v.is_finite())
        {
            return Err(Error::UnstablePlantConfig(format!("outputs left the operating range at sample {t}: {y:?}")));
        }
        let timestamp = if t < cfg.warmup {
            window[w - 1].timestamp
        } else {
            cfg.start_timestamp + (t - cfg.warmup) as i64 * CONDITIONED_PERIOD
        };
        let r = PlantRecord { timestamp, u, u_sp, y, flags };
        window.remove(0);
        window.push(r);
        if t >= cfg.warmup {
            records.push(r);
        }
    }
    Ok(SampledSeries::new(records, CONDITIONED_PERIOD))
}

/// Steady state of the regulatory model under constant setpoints.
fn settled_state(m: &StateSpaceModel, u_sp: &[f64; N_MV]) -> Option<DVector<f64>> {
    let s = DVector::from_fn(N_MV, |c, _| m.scaler.scale_value(c, u_sp[c]));
    let lhs = DMatrix::identity(m.order, m.order) - &m.a;
    lhs.lu().solve(&(&m.b * s + &m.k * &m.e))
}

/// Regulatory loops of the synthetic plant: first-order lags per MV.
pub fn default_regulatory() -> StateSpaceModel {
    StateSpaceModel::first_order_loops([0.6, 0.5, 0.5])
}

// ---------------------------------------------------------------------------
// Disturbance scenarios

/// Factor applying from sample `k` onwards (until the next step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorStep {
    pub k: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceScenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Piecewise-constant factor schedule for pressure.
    #[serde(default)]
    pub y1: Vec<FactorStep>,
    /// Piecewise-constant factor schedule for power.
    #[serde(default)]
    pub y2: Vec<FactorStep>,
}

impl DisturbanceScenario {
    pub fn identity() -> Self {
        Self { name: "identity".into(), description: "no disturbance".into(), y1: vec![], y2: vec![] }
    }

    fn schedule(&self, cv: usize) -> &[FactorStep] {
        if cv == 0 { &self.y1 } else { &self.y2 }
    }

    /// Multiplicative factor on CV `cv` at sample `k`.
    pub fn factor(&self, cv: usize, k: usize) -> f64 {
        self.schedule(cv).iter().filter(|s| s.k <= k).max_by_key(|s| s.k).map_or(1.0, |s| s.factor)
    }

    pub fn validate(&self) -> Result<()> {
        for cv in 0..N_CV {
            if self.schedule(cv).iter().any(|s| !(s.factor > 0.0) || !s.factor.is_finite()) {
                return Err(Error::InvalidConfig(format!("scenario '{}' has a non-positive factor", self.name)));
            }
        }
        Ok(())
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Liner wear: pressure grows 2% per month of operation.
pub fn wear_scenario(months: f64) -> DisturbanceScenario {
    DisturbanceScenario {
        name: format!("wear_{months}m"),
        description: format!("liner wear after {months} months"),
        y1: vec![FactorStep { k: 0, factor: 1.0 + 0.02 * months.max(0.0) }],
        y2: vec![],
    }
}

/// Default onset of the hardness step, in samples.
pub const HARDNESS_ONSET: usize = 233;

/// Harder ore: pressure and power both scale by `1 + increase` from `onset`.
pub fn hardness_scenario(increase: f64, onset: usize) -> DisturbanceScenario {
    let steps = vec![FactorStep { k: 0, factor: 1.0 }, FactorStep { k: onset, factor: 1.0 + increase.max(0.0) }];
    DisturbanceScenario {
        name: format!("hardness_{increase}"),
        description: format!("ore hardness +{}% from sample {onset}", increase * 100.0),
        y1: steps.clone(),
        y2: steps,
    }
}

/// Multiplies the CVs by the scenario factors; MVs and timestamps are kept.
pub fn apply(scenario: &DisturbanceScenario, series: &SampledSeries) -> SampledSeries {
    let records = series
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut r = *r;
            for cv in 0..N_CV {
                let f = scenario.factor(cv, k);
                if f != 1.0 {
                    r.y[cv] *= f;
                }
            }
            r
        })
        .collect();
    SampledSeries::new(records, series.sample_period)
}

/// Scenario whose factors are the products of both inputs' factors.
pub fn compose(a: &DisturbanceScenario, b: &DisturbanceScenario) -> DisturbanceScenario {
    let merge = |cv: usize| -> Vec<FactorStep> {
        let mut ks: Vec<usize> = a.schedule(cv).iter().chain(b.schedule(cv)).map(|s| s.k).collect();
        ks.sort_unstable();
        ks.dedup();
        ks.into_iter().map(|k| FactorStep { k, factor: a.factor(cv, k) * b.factor(cv, k) }).collect()
    };
    DisturbanceScenario {
        name: format!("{}+{}", a.name, b.name),
        description: format!("{}; {}", a.description, b.description),
        y1: merge(0),
        y2: merge(1),
    }
}
