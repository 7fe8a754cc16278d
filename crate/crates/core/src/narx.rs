//! One-hidden-layer NARX model of the controlled variables.
//!
//! The regressor at instant `t` holds the `m` previous CV vectors
//! `y[t-1] .. y[t-m]` and the `n` most recent MV vectors `u[t] .. u[t-n+1]`,
//! newest first. Inputs and outputs pass through per-channel scalers fitted
//! on the training record.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{levenberg_marquardt, sum_squares, LeastSquares, LmConfig};
use crate::pipeline::{PlantRecord, SampledSeries};
use crate::scaling::ChannelScaler;
use crate::{N_CV, N_MV};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Logistic,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation value `a = apply(z)`.
    #[inline]
    fn slope_from_value(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }

    /// Upper bound of the derivative over the real line.
    pub fn max_slope(self) -> f64 {
        match self {
            Activation::Tanh | Activation::Linear => 1.0,
            Activation::Logistic => 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarxStructure {
    /// CV lags.
    pub m: usize,
    /// MV lags.
    pub n: usize,
    pub hidden_width: usize,
}

impl Default for NarxStructure {
    fn default() -> Self {
        Self { m: 12, n: 12, hidden_width: 2 }
    }
}

impl NarxStructure {
    pub fn input_dim(&self) -> usize {
        N_CV * self.m + N_MV * self.n
    }

    pub fn max_lag(&self) -> usize {
        self.m.max(self.n)
    }

    fn n_params(&self) -> usize {
        let h = self.hidden_width;
        h * self.input_dim() + h + N_CV * h + N_CV
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarxModel {
    pub structure: NarxStructure,
    pub w_in: DMatrix<f64>,
    pub b_hidden: DVector<f64>,
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
    pub activation: Activation,
    pub y_scaler: ChannelScaler,
    pub u_scaler: ChannelScaler,
    pub seed: u64,
}

/// Past values feeding one forward pass, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorWindow {
    pub past_y: Vec<[f64; N_CV]>,
    pub past_u: Vec<[f64; N_MV]>,
}

impl NarxModel {
    pub fn zeros(structure: NarxStructure, activation: Activation) -> Self {
        let h = structure.hidden_width;
        Self {
            structure,
            w_in: DMatrix::zeros(h, structure.input_dim()),
            b_hidden: DVector::zeros(h),
            w_out: DMatrix::zeros(N_CV, h),
            b_out: DVector::zeros(N_CV),
            activation,
            y_scaler: ChannelScaler::identity(N_CV),
            u_scaler: ChannelScaler::identity(N_MV),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.structure;
        let h = s.hidden_width;
        if h == 0 || s.m == 0 || s.n == 0 {
            return Err(Error::InvalidConfig("lags and hidden width must be positive".into()));
        }
        let ok = self.w_in.shape() == (h, s.input_dim())
            && self.b_hidden.len() == h
            && self.w_out.shape() == (N_CV, h)
            && self.b_out.len() == N_CV
            && self.y_scaler.channels() == N_CV
            && self.u_scaler.channels() == N_MV;
        if ok { Ok(()) } else { Err(Error::ShapeMismatch("NARX weight shapes inconsistent with structure".into())) }
    }

    fn scaled_input(&self, window: &RegressorWindow) -> Result<DVector<f64>> {
        let s = self.structure;
        if window.past_y.len() != s.m || window.past_u.len() != s.n {
            return Err(Error::ShapeMismatch(format!(
                "window has {} CV and {} MV lags, model expects {} and {}",
                window.past_y.len(),
                window.past_u.len(),
                s.m,
                s.n
            )));
        }
        let mut x = DVector::zeros(s.input_dim());
        let mut k = 0;
        for y in &window.past_y {
            for c in 0..N_CV {
                x[k] = self.y_scaler.scale_value(c, y[c]);
                k += 1;
            }
        }
        for u in &window.past_u {
            for c in 0..N_MV {
                x[k] = self.u_scaler.scale_value(c, u[c]);
                k += 1;
            }
        }
        Ok(x)
    }

    fn forward_scaled(&self, x: &DVector<f64>) -> DVector<f64> {
        let act = self.activation;
        let hidden = (&self.w_in * x + &self.b_hidden).map(|z| act.apply(z));
        &self.w_out * hidden + &self.b_out
    }

    /// Predicted CVs in engineering units.
    pub fn forward(&self, window: &RegressorWindow) -> Result<[f64; N_CV]> {
        let out = self.forward_scaled(&self.scaled_input(window)?);
        Ok(std::array::from_fn(|c| self.y_scaler.unscale_value(c, out[c])))
    }

    /// Regressor window whose newest CV is `y[t-1]` and newest MV is `u[t]`.
    pub fn window_at(&self, records: &[PlantRecord], t: usize) -> Result<RegressorWindow> {
        let s = self.structure;
        if t < s.m || t + 1 < s.n || t >= records.len() {
            return Err(Error::WindowTooShort { have: t.min(records.len()), need: s.max_lag() });
        }
        Ok(RegressorWindow {
            past_y: (1..=s.m).map(|j| records[t - j].y).collect(),
            past_u: (0..s.n).map(|j| records[t - j].u).collect(),
        })
    }

    /// Multi-step prediction from the end of `history` (instant `k` is the
    /// one after the last record) driven by `future_u[0..=horizon]`.
    /// Returns `horizon + 1` predictions.
    pub fn rollout(&self, history: &[PlantRecord], future_u: &[[f64; N_MV]], horizon: usize) -> Result<Vec<[f64; N_CV]>> {
        if future_u.len() < horizon + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} future MV vectors for horizon {horizon}",
                future_u.len()
            )));
        }
        let mut state = RolloutState::from_history(self, history)?;
        (0..=horizon).map(|i| state.advance(self, future_u[i])).collect()
    }

    /// One-step (teacher-forced) predictions for every instant with a full
    /// regressor, as `(index, prediction)` pairs.
    pub fn one_step_predictions(&self, records: &[PlantRecord]) -> Result<Vec<(usize, [f64; N_CV])>> {
        let start = self.structure.max_lag();
        (start..records.len()).map(|t| Ok((t, self.forward(&self.window_at(records, t)?)?))).collect()
    }

    pub fn params(&self) -> DVector<f64> {
        let s = self.structure;
        let mut v = Vec::with_capacity(s.n_params());
        v.extend(self.w_in.transpose().iter());
        v.extend(self.b_hidden.iter());
        v.extend(self.w_out.transpose().iter());
        v.extend(self.b_out.iter());
        DVector::from_vec(v)
    }

    pub fn set_params(&mut self, p: &DVector<f64>) {
        let s = self.structure;
        let (h, d) = (s.hidden_width, s.input_dim());
        let mut k = 0;
        let mut take = |len: usize| {
            let slice = &p.as_slice()[k..k + len];
            k += len;
            slice
        };
        self.w_in = DMatrix::from_row_slice(h, d, take(h * d));
        self.b_hidden = DVector::from_column_slice(take(h));
        self.w_out = DMatrix::from_row_slice(N_CV, h, take(N_CV * h));
        self.b_out = DVector::from_column_slice(take(N_CV));
    }

    pub fn to_artifact(&self) -> NarxArtifact {
        NarxArtifact {
            format_version: FORMAT_VERSION,
            m: self.structure.m,
            n: self.structure.n,
            hidden_width: self.structure.hidden_width,
            activation: self.activation,
            seed: self.seed,
            y_scaler: self.y_scaler.clone(),
            u_scaler: self.u_scaler.clone(),
            w_in: self.w_in.transpose().as_slice().to_vec(),
            b_hidden: self.b_hidden.as_slice().to_vec(),
            w_out: self.w_out.transpose().as_slice().to_vec(),
            b_out: self.b_out.as_slice().to_vec(),
        }
    }

    pub fn from_artifact(a: NarxArtifact) -> Result<Self> {
        if a.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion { found: a.format_version, expected: FORMAT_VERSION });
        }
        let structure = NarxStructure { m: a.m, n: a.n, hidden_width: a.hidden_width };
        let (h, d) = (structure.hidden_width, structure.input_dim());
        if a.w_in.len() != h * d || a.b_hidden.len() != h || a.w_out.len() != N_CV * h || a.b_out.len() != N_CV {
            return Err(Error::ShapeMismatch("NARX artifact weight lengths do not match structure".into()));
        }
        let m = Self {
            structure,
            w_in: DMatrix::from_row_slice(h, d, &a.w_in),
            b_hidden: DVector::from_vec(a.b_hidden),
            w_out: DMatrix::from_row_slice(N_CV, h, &a.w_out),
            b_out: DVector::from_vec(a.b_out),
            activation: a.activation,
            y_scaler: a.y_scaler,
            u_scaler: a.u_scaler,
            seed: a.seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_artifact())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_artifact(serde_json::from_str(s)?)
    }
}

/// Serialized form of a [`NarxModel`]; weight matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarxArtifact {
    pub format_version: u32,
    pub m: usize,
    pub n: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub seed: u64,
    pub y_scaler: ChannelScaler,
    pub u_scaler: ChannelScaler,
    pub w_in: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

/// Sliding regressor used for free-run prediction. Predictions are pushed
/// into the CV lags as they are produced, displacing measured values.
#[derive(Debug, Clone)]
pub struct RolloutState {
    ys: VecDeque<[f64; N_CV]>,
    us: VecDeque<[f64; N_MV]>,
}

impl RolloutState {
    pub fn from_history(model: &NarxModel, history: &[PlantRecord]) -> Result<Self> {
        let s = model.structure;
        let need = s.max_lag();
        if history.len() < need {
            return Err(Error::WindowTooShort { have: history.len(), need });
        }
        let ys = history.iter().rev().take(s.m).map(|r| r.y).collect();
        let us = history.iter().rev().take(s.n - 1).map(|r| r.u).collect();
        Ok(Self { ys, us })
    }

    /// Most recent CV values (newest first), measured or predicted.
    pub fn recent_y(&self) -> impl Iterator<Item = &[f64; N_CV]> {
        self.ys.iter()
    }

    /// Predicts the CVs at the instant where `u_now` applies, then shifts the
    /// window forward by one instant.
    pub fn advance(&mut self, model: &NarxModel, u_now: [f64; N_MV]) -> Result<[f64; N_CV]> {
        let window = RegressorWindow {
            past_y: self.ys.iter().copied().collect(),
            past_u: std::iter::once(u_now).chain(self.us.iter().copied()).collect(),
        };
        let y = model.forward(&window)?;
        self.ys.push_front(y);
        self.ys.truncate(model.structure.m);
        if model.structure.n > 1 {
            self.us.push_front(u_now);
            self.us.truncate(model.structure.n - 1);
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub activation: Activation,
    /// Initial weights are drawn from `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { restarts: 5, max_iter: 150, seed: 11, activation: Activation::Tanh, init_range: 0.5 }
    }
}

/// Series-parallel training problem: scaled regressors and targets.
pub struct SeriesParallel {
    structure: NarxStructure,
    activation: Activation,
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl SeriesParallel {
    /// Builds the regressor matrix from `records` using the scalers of
    /// `template`.
    pub fn new(template: &NarxModel, records: &[PlantRecord]) -> Result<Self> {
        let s = template.structure;
        let start = s.max_lag();
        if records.len() <= start {
            return Err(Error::InsufficientData { have: records.len(), need: start + 1 });
        }
        let rows = records.len() - start;
        let mut inputs = DMatrix::zeros(rows, s.input_dim());
        let mut targets = DMatrix::zeros(rows, N_CV);
        for t in start..records.len() {
            let x = template.scaled_input(&template.window_at(records, t)?)?;
            inputs.row_mut(t - start).copy_from(&x.transpose());
            for c in 0..N_CV {
                targets[(t - start, c)] = template.y_scaler.scale_value(c, records[t].y[c]);
            }
        }
        Ok(Self { structure: s, activation: template.activation, inputs, targets })
    }

    pub fn samples(&self) -> usize {
        self.inputs.nrows()
    }

    fn unpack(&self, p: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let mut m = NarxModel::zeros(self.structure, self.activation);
        m.set_params(p);
        (m.w_in, m.b_hidden, m.w_out, m.b_out)
    }

    fn hidden(&self, w_in: &DMatrix<f64>, b_h: &DVector<f64>) -> DMatrix<f64> {
        let act = self.activation;
        let mut z = &self.inputs * w_in.transpose();
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(b_h.iter()) {
                *v = act.apply(*v + b);
            }
        }
        z
    }

    /// Sum of squared one-step errors (scaled units).
    pub fn cost(&self, p: &DVector<f64>) -> f64 {
        sum_squares(&self.residuals(p))
    }

    /// Analytic gradient of [`Self::cost`].
    pub fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        let (r, j) = self.residuals_and_jacobian(p);
        j.tr_mul(&r) * 2.0
    }

    /// Cost of predicting every target by its sample mean.
    pub fn constant_predictor_cost(&self) -> f64 {
        (0..N_CV)
            .map(|c| {
                let col = self.targets.column(c);
                let m = col.mean();
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            })
            .sum()
    }
}

impl LeastSquares for SeriesParallel {
    fn n_params(&self) -> usize {
        self.structure.n_params()
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let (w_in, b_h, w_out, b_out) = self.unpack(p);
        let hid = self.hidden(&w_in, &b_h);
        let out = hid * w_out.transpose();
        let rows = self.samples();
        DVector::from_fn(rows * N_CV, |k, _| {
            let (s, c) = (k / N_CV, k % N_CV);
            out[(s, c)] + b_out[c] - self.targets[(s, c)]
        })
    }

    fn residuals_and_jacobian(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let st = self.structure;
        let (h, d) = (st.hidden_width, st.input_dim());
        let (w_in, b_h, w_out, b_out) = self.unpack(p);
        let hid = self.hidden(&w_in, &b_h);
        let rows = self.samples();
        let np = st.n_params();
        let off_bh = h * d;
        let off_wout = off_bh + h;
        let off_bout = off_wout + N_CV * h;
        let mut r = DVector::zeros(rows * N_CV);
        let mut jac = DMatrix::zeros(rows * N_CV, np);
        for s in 0..rows {
            let x = self.inputs.row(s);
            for c in 0..N_CV {
                let k = s * N_CV + c;
                let mut out = b_out[c];
                for hh in 0..h {
                    out += w_out[(c, hh)] * hid[(s, hh)];
                }
                r[k] = out - self.targets[(s, c)];
                for hh in 0..h {
                    let g = w_out[(c, hh)] * self.activation.slope_from_value(hid[(s, hh)]);
                    for j in 0..d {
                        jac[(k, hh * d + j)] = g * x[j];
                    }
                    jac[(k, off_bh + hh)] = g;
                    jac[(k, off_wout + c * h + hh)] = hid[(s, hh)];
                }
                jac[(k, off_bout + c)] = 1.0;
            }
        }
        (r, jac)
    }
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart as u64 + 1)
}

/// Template model with scalers fitted on `records` and zero weights.
pub fn template_for(records: &[PlantRecord], structure: NarxStructure, cfg: &TrainingConfig) -> NarxModel {
    let mut m = NarxModel::zeros(structure, cfg.activation);
    m.y_scaler = ChannelScaler::fit(N_CV, records.iter().map(|r| &r.y[..]));
    m.u_scaler = ChannelScaler::fit(N_MV, records.iter().map(|r| &r.u[..]));
    m.seed = cfg.seed;
    m
}

/// Trained model plus its final one-step cost (sum of squares, scaled).
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: NarxModel,
    pub cost: f64,
    pub constant_cost: f64,
}

/// Fits the network by damped Gauss-Newton on the one-step errors, keeping
/// the best of `cfg.restarts` seeded initializations.
pub fn train(train: &SampledSeries, structure: NarxStructure, cfg: &TrainingConfig) -> Result<Trained> {
    let need = 10 * structure.input_dim() + structure.max_lag() + 1;
    if train.len() < need {
        return Err(Error::InsufficientData { have: train.len(), need });
    }
    let template = template_for(&train.records, structure, cfg);
    template.validate()?;
    let problem = SeriesParallel::new(&template, &train.records)?;
    let constant_cost = problem.constant_predictor_cost();
    let lm = LmConfig { max_iter: cfg.max_iter, ftol: 1e-10, gtol: 0.0, cost_floor: 1e-20, lambda_init: 1e-2 };
    let outcomes: Vec<_> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, r));
            let p0 = DVector::from_fn(problem.n_params(), |_, _| rng.random_range(-cfg.init_range..=cfg.init_range));
            levenberg_marquardt(&problem, p0, &lm)
        })
        .collect();
    // min_by keeps the first of equal elements, so ties go to the lowest restart index
    let best = outcomes
        .into_iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("at least one restart");
    if !best.cost.is_finite() {
        return Err(Error::TrainingDiverged { cost: best.cost });
    }
    let mut model = template;
    model.set_params(&best.params);
    Ok(Trained { model, cost: best.cost, constant_cost })
}

#[derive(Debug, Clone)]
pub struct StructureSelection {
    pub structure: NarxStructure,
    /// Validation mean squared error per evaluated candidate.
    pub costs: Vec<(NarxStructure, f64)>,
}

/// Fraction of the training record held out for structure validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Trains every `(lags, width)` candidate on the leading part of `train`,
/// scores one-step error on the held-out tail and picks the smallest
/// candidate (lags first, then width) within `threshold` of every larger
/// one. Lags apply to both CVs and MVs.
pub fn select_structure(
    train: &SampledSeries,
    candidate_lags: &[usize],
    candidate_widths: &[usize],
    threshold: f64,
    cfg: &TrainingConfig,
) -> Result<StructureSelection> {
    let mut lags = candidate_lags.to_vec();
    let mut widths = candidate_widths.to_vec();
    lags.sort_unstable();
    lags.dedup();
    widths.sort_unstable();
    widths.dedup();
    if lags.is_empty() || widths.is_empty() {
        return Err(Error::InvalidConfig("structure candidates must be non-empty".into()));
    }
    let candidates: Vec<NarxStructure> = lags
        .iter()
        .flat_map(|&l| widths.iter().map(move |&w| NarxStructure { m: l, n: l, hidden_width: w }))
        .collect();
    if candidates.len() == 1 {
        return Ok(StructureSelection { structure: candidates[0], costs: Vec::new() });
    }
    let split = ((train.len() as f64) * (1.0 - VALIDATION_FRACTION)).round() as usize;
    let fit = train.slice(0..split);
    let mut costs = Vec::with_capacity(candidates.len());
    for s in &candidates {
        let trained = train_structure(&fit, *s, cfg)?;
        let lag = s.max_lag();
        let holdout = &train.records[split.saturating_sub(lag)..];
        let problem = SeriesParallel::new(&trained.model, holdout)?;
        let mse = problem.cost(&trained.model.params()) / (problem.samples() * N_CV) as f64;
        costs.push((*s, mse));
    }
    let values: Vec<f64> = costs.iter().map(|c| c.1).collect();
    let pick = crate::regulatory::select_by_costs(&values, threshold, crate::regulatory::COST_FLOOR);
    Ok(StructureSelection { structure: candidates[pick], costs })
}

fn train_structure(fit: &SampledSeries, s: NarxStructure, cfg: &TrainingConfig) -> Result<Trained> {
    train(fit, s, cfg)
}
