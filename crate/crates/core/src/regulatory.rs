//! Linear state-space emulator of the regulatory (MV tracking) loops.
//!
//! ```text
//! x[j+1] = A x[j] + B s[j] + K e
//! u[j]   = C x[j] + D s[j] + e
//! ```
//!
//! `s` are the MV setpoints and `u` the MVs the loops deliver, both in the
//! standardized space of the model's scaler. Output `j` is the MV observed
//! with setpoint `j` in force; the state carries everything older.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{levenberg_marquardt, LeastSquares, LmConfig};
use crate::pipeline::{PlantRecord, SampledSeries};
use crate::scaling::ChannelScaler;
use crate::N_MV;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub order: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub e: DVector<f64>,
    pub scaler: ChannelScaler,
    /// Use `B` in place of `D` in the output equation (requires order 3).
    pub tie_feedthrough_to_b: bool,
}

impl StateSpaceModel {
    /// All-zero model of the given order with an identity scaler.
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            a: DMatrix::zeros(order, order),
            b: DMatrix::zeros(order, N_MV),
            c: DMatrix::zeros(N_MV, order),
            d: DMatrix::zeros(N_MV, N_MV),
            k: DMatrix::zeros(order, N_MV),
            x0: DVector::zeros(order),
            e: DVector::zeros(N_MV),
            scaler: ChannelScaler::identity(N_MV),
            tie_feedthrough_to_b: false,
        }
    }

    /// Independent first-order lags `u_i[j+1] = a_i u_i[j] + (1 - a_i) s_i[j]`
    /// with unit steady-state gain, in engineering units.
    pub fn first_order_loops(poles: [f64; N_MV]) -> Self {
        let mut m = Self::zeros(N_MV);
        for i in 0..N_MV {
            m.a[(i, i)] = poles[i];
            m.b[(i, i)] = 1.0 - poles[i];
            m.c[(i, i)] = 1.0;
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.order;
        let dims = [
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, N_MV)),
            ("C", self.c.shape(), (N_MV, n)),
            ("D", self.d.shape(), (N_MV, N_MV)),
            ("K", self.k.shape(), (n, N_MV)),
            ("x0", self.x0.shape(), (n, 1)),
            ("e", self.e.shape(), (N_MV, 1)),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if self.scaler.channels() != N_MV {
            return Err(Error::ShapeMismatch(format!("scaler has {} channels", self.scaler.channels())));
        }
        if self.tie_feedthrough_to_b && n != N_MV {
            return Err(Error::ShapeMismatch(format!(
                "tie_feedthrough_to_b needs order {N_MV}, model has order {n}"
            )));
        }
        Ok(())
    }

    fn feedthrough(&self) -> &DMatrix<f64> {
        if self.tie_feedthrough_to_b { &self.b } else { &self.d }
    }

    fn scale_mv(&self, v: &[f64; N_MV]) -> DVector<f64> {
        DVector::from_iterator(N_MV, (0..N_MV).map(|c| self.scaler.scale_value(c, v[c])))
    }

    fn unscale_mv(&self, v: &DVector<f64>) -> [f64; N_MV] {
        std::array::from_fn(|c| self.scaler.unscale_value(c, v[c]))
    }

    /// One step in scaled space: returns the output and advances `x`.
    pub fn step_scaled(&self, x: &mut DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        let out = &self.c * &*x + self.feedthrough() * s + &self.e;
        *x = &self.a * &*x + &self.b * s + &self.k * &self.e;
        out
    }

    /// One step in engineering units.
    pub fn step(&self, x: &mut DVector<f64>, u_sp: &[f64; N_MV]) -> [f64; N_MV] {
        let out = self.step_scaled(x, &self.scale_mv(u_sp));
        self.unscale_mv(&out)
    }

    /// Predicted MVs for the first `steps` setpoints, starting from `x0`.
    pub fn simulate(&self, u_sp: &[[f64; N_MV]], steps: usize) -> Result<Vec<[f64; N_MV]>> {
        self.validate()?;
        if u_sp.len() < steps {
            return Err(Error::ShapeMismatch(format!(
                "{} setpoints supplied for {steps} steps",
                u_sp.len()
            )));
        }
        let mut x = self.x0.clone();
        Ok(u_sp[..steps].iter().map(|s| self.step(&mut x, s)).collect())
    }

    /// Copy carrying the state/disturbance produced by [`estimate_online`].
    pub fn with_online(&self, est: &OnlineEstimate) -> Self {
        Self { x0: est.state_now.clone(), e: est.e.clone(), ..self.clone() }
    }

    pub fn to_artifact(&self) -> StateSpaceArtifact {
        let rm = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        StateSpaceArtifact {
            format_version: FORMAT_VERSION,
            order: self.order,
            tie_feedthrough_to_b: self.tie_feedthrough_to_b,
            scaler: self.scaler.clone(),
            a: rm(&self.a),
            b: rm(&self.b),
            c: rm(&self.c),
            d: rm(&self.d),
            k: rm(&self.k),
            x0: self.x0.as_slice().to_vec(),
            e: self.e.as_slice().to_vec(),
        }
    }

    pub fn from_artifact(a: StateSpaceArtifact) -> Result<Self> {
        if a.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion { found: a.format_version, expected: FORMAT_VERSION });
        }
        let n = a.order;
        let mat = |name: &str, r: usize, c: usize, v: &[f64]| -> Result<DMatrix<f64>> {
            if v.len() != r * c {
                return Err(Error::ShapeMismatch(format!("{name}: {} values for {r}x{c}", v.len())));
            }
            Ok(DMatrix::from_row_slice(r, c, v))
        };
        let m = Self {
            order: n,
            a: mat("A", n, n, &a.a)?,
            b: mat("B", n, N_MV, &a.b)?,
            c: mat("C", N_MV, n, &a.c)?,
            d: mat("D", N_MV, N_MV, &a.d)?,
            k: mat("K", n, N_MV, &a.k)?,
            x0: DVector::from_vec(a.x0),
            e: DVector::from_vec(a.e),
            scaler: a.scaler,
            tie_feedthrough_to_b: a.tie_feedthrough_to_b,
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

/// Serialized form of a [`StateSpaceModel`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceArtifact {
    pub format_version: u32,
    pub order: usize,
    pub tie_feedthrough_to_b: bool,
    pub scaler: ChannelScaler,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub k: Vec<f64>,
    pub x0: Vec<f64>,
    pub e: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Identification

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentificationConfig {
    /// Random restarts in addition to the subspace and warm starts.
    pub random_starts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub tie_feedthrough_to_b: bool,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self { random_starts: 4, max_iter: 300, seed: 7, tie_feedthrough_to_b: false }
    }
}

/// Identified model plus its mean squared simulation error (scaled units).
#[derive(Debug, Clone)]
pub struct Identified {
    pub model: StateSpaceModel,
    pub cost: f64,
}

/// Standardized setpoint/MV pairs.
struct RegData {
    s: Vec<DVector<f64>>,
    o: Vec<DVector<f64>>,
}

impl RegData {
    fn new(records: &[PlantRecord], scaler: &ChannelScaler) -> Self {
        let sc = |v: &[f64; N_MV]| DVector::from_iterator(N_MV, (0..N_MV).map(|c| scaler.scale_value(c, v[c])));
        Self { s: records.iter().map(|r| sc(&r.u_sp)).collect(), o: records.iter().map(|r| sc(&r.u)).collect() }
    }

    fn len(&self) -> usize {
        self.s.len()
    }
}

/// Parameter layout `[A, B, C, D?, x0]`, each matrix row-major.
#[derive(Clone, Copy)]
struct Layout {
    n: usize,
    tied: bool,
}

impl Layout {
    fn a(&self, p: usize, q: usize) -> usize {
        p * self.n + q
    }
    fn b(&self, p: usize, q: usize) -> usize {
        self.n * self.n + p * N_MV + q
    }
    fn c(&self, p: usize, q: usize) -> usize {
        self.n * self.n + self.n * N_MV + p * self.n + q
    }
    fn d(&self, p: usize, q: usize) -> usize {
        debug_assert!(!self.tied);
        self.n * self.n + 2 * self.n * N_MV + p * N_MV + q
    }
    fn x0(&self, p: usize) -> usize {
        self.n * self.n + 2 * self.n * N_MV + if self.tied { 0 } else { N_MV * N_MV } + p
    }
    fn len(&self) -> usize {
        self.x0(0) + self.n
    }

    fn pack(&self, m: &StateSpaceModel) -> DVector<f64> {
        let n = self.n;
        let mut v = DVector::zeros(self.len());
        for p in 0..n {
            for q in 0..n {
                v[self.a(p, q)] = m.a[(p, q)];
            }
            for q in 0..N_MV {
                v[self.b(p, q)] = m.b[(p, q)];
            }
            v[self.x0(p)] = m.x0[p];
        }
        for p in 0..N_MV {
            for q in 0..n {
                v[self.c(p, q)] = m.c[(p, q)];
            }
            if !self.tied {
                for q in 0..N_MV {
                    v[self.d(p, q)] = m.d[(p, q)];
                }
            }
        }
        v
    }

    fn unpack(&self, v: &DVector<f64>, template: &StateSpaceModel) -> StateSpaceModel {
        let n = self.n;
        let mut m = template.clone();
        m.a = DMatrix::from_fn(n, n, |p, q| v[self.a(p, q)]);
        m.b = DMatrix::from_fn(n, N_MV, |p, q| v[self.b(p, q)]);
        m.c = DMatrix::from_fn(N_MV, n, |p, q| v[self.c(p, q)]);
        m.d = if self.tied { DMatrix::zeros(N_MV, N_MV) } else { DMatrix::from_fn(N_MV, N_MV, |p, q| v[self.d(p, q)]) };
        m.x0 = DVector::from_fn(n, |p, _| v[self.x0(p)]);
        m
    }
}

/// Free-run simulation error over the whole record, `e = 0`.
struct SimulationError<'a> {
    data: &'a RegData,
    layout: Layout,
    template: StateSpaceModel,
}

impl SimulationError<'_> {
    fn model(&self, p: &DVector<f64>) -> StateSpaceModel {
        self.layout.unpack(p, &self.template)
    }
}

impl LeastSquares for SimulationError<'_> {
    fn n_params(&self) -> usize {
        self.layout.len()
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let m = self.model(p);
        let dt = m.feedthrough().clone();
        let mut x = m.x0.clone();
        let mut r = DVector::zeros(N_MV * self.data.len());
        for (j, (s, o)) in self.data.s.iter().zip(&self.data.o).enumerate() {
            let out = &m.c * &x + &dt * s - o;
            r.rows_mut(N_MV * j, N_MV).copy_from(&out);
            x = &m.a * &x + &m.b * s;
        }
        r
    }

    fn residuals_and_jacobian(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let lay = self.layout;
        let n = lay.n;
        let np = lay.len();
        let m = self.model(p);
        let dt = m.feedthrough().clone();
        let rows = N_MV * self.data.len();
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, np);
        let mut x = m.x0.clone();
        // sens = dx/dparams
        let mut sens = DMatrix::zeros(n, np);
        for i in 0..n {
            sens[(i, lay.x0(i))] = 1.0;
        }
        for (j, (s, o)) in self.data.s.iter().zip(&self.data.o).enumerate() {
            let out = &m.c * &x + &dt * s - o;
            r.rows_mut(N_MV * j, N_MV).copy_from(&out);
            let mut block = &m.c * &sens;
            for pr in 0..N_MV {
                for q in 0..n {
                    block[(pr, lay.c(pr, q))] += x[q];
                }
                for q in 0..N_MV {
                    if lay.tied {
                        block[(pr, lay.b(pr, q))] += s[q];
                    } else {
                        block[(pr, lay.d(pr, q))] += s[q];
                    }
                }
            }
            jac.rows_mut(N_MV * j, N_MV).copy_from(&block);

            let mut next = &m.a * &sens;
            for pr in 0..n {
                for q in 0..n {
                    next[(pr, lay.a(pr, q))] += x[q];
                }
                for q in 0..N_MV {
                    next[(pr, lay.b(pr, q))] += s[q];
                }
            }
            sens = next;
            x = &m.a * &x + &m.b * s;
        }
        (r, jac)
    }
}

fn svd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps.max(f64::MIN_POSITIVE)).unwrap_or_else(|_| DMatrix::zeros(a.ncols(), b.ncols()))
}

/// Least-squares re-fit of `B`, `D` and `x0` with `A` and `C` held fixed.
/// The residual is affine in those parameters so one Gauss-Newton step is
/// exact.
fn refit_linear_part(problem: &SimulationError<'_>, params: &DVector<f64>) -> DVector<f64> {
    let lay = problem.layout;
    let (r, jac) = problem.residuals_and_jacobian(params);
    let cols: Vec<usize> = (lay.b(0, 0)..lay.c(0, 0)).chain(if lay.tied { lay.x0(0)..lay.len() } else { lay.d(0, 0)..lay.len() }).collect();
    let sub = jac.select_columns(&cols);
    let delta = svd_solve(&sub, &DMatrix::from_column_slice(r.len(), 1, (-&r).as_slice()));
    let mut out = params.clone();
    for (k, &c) in cols.iter().enumerate() {
        out[c] += delta[(k, 0)];
    }
    out
}

/// Subspace (Ho-Kalman) initial guess from the Markov parameters of a
/// high-order ARX fit.
fn subspace_start(data: &RegData, n: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let lags = (2 * n + 2).min(data.len().saturating_sub(2) / 8).max(1);
    let nreg = N_MV * lags + N_MV * (lags + 1);
    let rows = data.len() - lags;
    let mut phi = DMatrix::zeros(rows, nreg);
    let mut target = DMatrix::zeros(rows, N_MV);
    for t in lags..data.len() {
        let row = t - lags;
        for l in 1..=lags {
            for c in 0..N_MV {
                phi[(row, (l - 1) * N_MV + c)] = data.o[t - l][c];
            }
        }
        for l in 0..=lags {
            for c in 0..N_MV {
                phi[(row, N_MV * lags + l * N_MV + c)] = data.s[t - l][c];
            }
        }
        for c in 0..N_MV {
            target[(row, c)] = data.o[t][c];
        }
    }
    let theta = svd_solve(&phi, &target);
    let ar = |l: usize| DMatrix::from_fn(N_MV, N_MV, |i, c| theta[((l - 1) * N_MV + c, i)]);
    let ex = |l: usize| DMatrix::from_fn(N_MV, N_MV, |i, c| theta[(N_MV * lags + l * N_MV + c, i)]);

    let blocks = n + 1;
    let horizon = 2 * blocks + 1;
    let mut markov: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut g = if t <= lags { ex(t) } else { DMatrix::zeros(N_MV, N_MV) };
        for l in 1..=t.min(lags) {
            g += ar(l) * &markov[t - l];
        }
        markov.push(g);
    }
    let mut hankel = DMatrix::zeros(N_MV * blocks, N_MV * blocks);
    for i in 0..blocks {
        for j in 0..blocks {
            hankel.view_mut((i * N_MV, j * N_MV), (N_MV, N_MV)).copy_from(&markov[i + j + 1]);
        }
    }
    let svd = hankel.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    // singular values come sorted in descending order
    let sqrt_s = DMatrix::from_diagonal(&svd.singular_values.rows(0, n).map(f64::sqrt));
    let obs = u.columns(0, n) * &sqrt_s;
    let ctr = &sqrt_s * vt.rows(0, n);
    let c = obs.rows(0, N_MV).into_owned();
    let b = ctr.columns(0, N_MV).into_owned();
    let upper = obs.rows(0, N_MV * (blocks - 1)).into_owned();
    let lower = obs.rows(N_MV, N_MV * (blocks - 1)).into_owned();
    let a = svd_solve(&upper, &lower);
    (a, b, c, markov[0].clone())
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn random_start(n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let rho = spectral_radius(&a);
    let target = rng.random_range(0.3..0.95);
    if rho > 0.0 {
        a *= target / rho;
    }
    let c = DMatrix::from_fn(N_MV, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (a, c)
}

/// Embeds a lower-order model into order `n` with the extra states
/// decoupled, so the simulated output is unchanged.
fn embed(lower: &StateSpaceModel, n: usize) -> StateSpaceModel {
    let mut m = StateSpaceModel::zeros(n);
    let k = lower.order.min(n);
    m.a.view_mut((0, 0), (k, k)).copy_from(&lower.a.view((0, 0), (k, k)));
    m.b.view_mut((0, 0), (k, N_MV)).copy_from(&lower.b.view((0, 0), (k, N_MV)));
    m.c.view_mut((0, 0), (N_MV, k)).copy_from(&lower.c.view((0, 0), (N_MV, k)));
    m.x0.rows_mut(0, k).copy_from(&lower.x0.rows(0, k));
    m.d = lower.d.clone();
    m
}

pub fn fit_scaler(records: &[PlantRecord]) -> ChannelScaler {
    ChannelScaler::fit(N_MV, records.iter().flat_map(|r| [&r.u[..], &r.u_sp[..]]))
}

/// Minimizes the free-run simulation error over the training record with
/// `e = 0`. Starts: subspace estimate, optional warm start, and
/// `cfg.random_starts` random stable realizations; the lowest cost wins.
pub fn identify(train: &SampledSeries, order: usize, cfg: &IdentificationConfig) -> Result<Identified> {
    identify_from(train, order, cfg, None)
}

fn identify_from(
    train: &SampledSeries,
    order: usize,
    cfg: &IdentificationConfig,
    warm: Option<&StateSpaceModel>,
) -> Result<Identified> {
    if order == 0 {
        return Err(Error::InvalidConfig("model order must be positive".into()));
    }
    if train.len() <= 10 * order {
        return Err(Error::InsufficientData { have: train.len(), need: 10 * order + 1 });
    }
    if cfg.tie_feedthrough_to_b && order != N_MV {
        return Err(Error::ShapeMismatch(format!("tie_feedthrough_to_b needs order {N_MV}")));
    }
    let scaler = fit_scaler(&train.records);
    let data = RegData::new(&train.records, &scaler);
    let layout = Layout { n: order, tied: cfg.tie_feedthrough_to_b };
    let mut template = StateSpaceModel::zeros(order);
    template.scaler = scaler;
    template.tie_feedthrough_to_b = cfg.tie_feedthrough_to_b;
    let problem = SimulationError { data: &data, layout, template: template.clone() };

    let rows = (N_MV * data.len()) as f64;
    let baseline: f64 = data.o.iter().map(|o| o.norm_squared()).sum::<f64>() / rows;

    let mut starts: Vec<DVector<f64>> = Vec::new();
    {
        let (a, b, c, d) = subspace_start(&data, order);
        let mut m = template.clone();
        m.a = a;
        m.b = b;
        m.c = c;
        if !cfg.tie_feedthrough_to_b {
            m.d = d;
        }
        starts.push(refit_linear_part(&problem, &layout.pack(&m)));
    }
    if let Some(w) = warm {
        let mut m = embed(w, order);
        m.scaler = template.scaler.clone();
        starts.push(layout.pack(&m));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (order as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for _ in 0..cfg.random_starts {
        let (a, c) = random_start(order, &mut rng);
        let mut m = template.clone();
        m.a = a;
        m.c = c;
        starts.push(refit_linear_part(&problem, &layout.pack(&m)));
    }

    let lm = LmConfig { max_iter: cfg.max_iter, ftol: 1e-10, gtol: 0.0, cost_floor: 1e-26 * rows, lambda_init: 1e-3 };
    let outcomes: Vec<_> = starts
        .into_par_iter()
        .map(|p0| levenberg_marquardt(&problem, p0, &lm))
        .collect();
    let best = outcomes
        .into_iter()
        .filter(|o| o.cost.is_finite())
        .min_by(|a, b| a.cost.total_cmp(&b.cost));
    let Some(best) = best else {
        return Err(Error::IdentificationFailed { cost: f64::INFINITY, reason: "no start produced a finite cost".into() });
    };
    let cost = best.cost / rows;
    if cost > baseline * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::IdentificationFailed {
            cost,
            reason: format!("no improvement over the zero model (baseline {baseline:.6e})"),
        });
    }
    Ok(Identified { model: problem.model(&best.params), cost })
}

/// Identifies every candidate order, warm-starting each from the previous
/// one so the cost sequence never increases.
pub fn identify_orders(
    train: &SampledSeries,
    orders: &[usize],
    cfg: &IdentificationConfig,
) -> Result<Vec<(usize, Identified)>> {
    let mut out: Vec<(usize, Identified)> = Vec::with_capacity(orders.len());
    for &order in orders {
        let warm = out.last().map(|(_, id)| &id.model);
        let id = identify_from(train, order, cfg, warm)?;
        out.push((order, id));
    }
    Ok(out)
}

/// Smallest candidate whose cost is within `threshold` (relative) of the best
/// cost among all larger candidates. `abs_floor` treats costs that are both
/// below it as equal.
pub fn select_by_costs(costs: &[f64], threshold: f64, abs_floor: f64) -> usize {
    for i in 0..costs.len() {
        let best_larger = costs[i + 1..].iter().copied().fold(f64::INFINITY, f64::min);
        if !best_larger.is_finite() || costs[i] <= best_larger * (1.0 + threshold) + abs_floor {
            return i;
        }
    }
    costs.len().saturating_sub(1)
}

/// Absolute tolerance on mean squared error in scaled units used when
/// comparing identification costs.
pub const COST_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OrderSelection {
    pub order: usize,
    pub model: StateSpaceModel,
    pub costs: Vec<(usize, f64)>,
}

pub fn select_order(
    train: &SampledSeries,
    candidate_orders: &[usize],
    improvement_threshold: f64,
    cfg: &IdentificationConfig,
) -> Result<OrderSelection> {
    if candidate_orders.is_empty() {
        return Err(Error::InvalidConfig("no candidate orders".into()));
    }
    if candidate_orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("candidate orders must be strictly ascending".into()));
    }
    let fitted = identify_orders(train, candidate_orders, cfg)?;
    let costs: Vec<f64> = fitted.iter().map(|(_, id)| id.cost).collect();
    let pick = select_by_costs(&costs, improvement_threshold, COST_FLOOR);
    Ok(OrderSelection {
        order: fitted[pick].0,
        model: fitted[pick].1.model.clone(),
        costs: fitted.iter().map(|(o, id)| (*o, id.cost)).collect(),
    })
}

// ---------------------------------------------------------------------------
// Online estimation of the initial state and additive disturbance

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Past instants used for the estimate.
    pub window: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { window: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineEstimate {
    /// State at the first instant of the window.
    pub x0: DVector<f64>,
    pub e: DVector<f64>,
    /// State after the last instant of the window, ready for prediction.
    pub state_now: DVector<f64>,
    /// Sum of squared scaled errors at the optimum.
    pub cost: f64,
    /// Same cost evaluated with the incoming `(x0, e)` of the model.
    pub prior_cost: f64,
}

fn window_cost(model: &StateSpaceModel, s: &[DVector<f64>], o: &[DVector<f64>], x0: &DVector<f64>, e: &DVector<f64>) -> (f64, DVector<f64>) {
    let m = StateSpaceModel { x0: x0.clone(), e: e.clone(), ..model.clone() };
    let mut x = m.x0.clone();
    let mut cost = 0.0;
    for (si, oi) in s.iter().zip(o) {
        cost += (m.step_scaled(&mut x, si) - oi).norm_squared();
    }
    (cost, x)
}

/// Re-estimates `(x0, e)` over the last `config.window` records with the
/// model matrices frozen. The problem is linear least squares.
pub fn estimate_online(model: &StateSpaceModel, recent: &[PlantRecord], config: &EstimationConfig) -> Result<OnlineEstimate> {
    model.validate()?;
    let n = model.order;
    if config.window < n {
        return Err(Error::WindowTooShort { have: config.window, need: n });
    }
    if recent.len() < config.window || config.window == 0 {
        return Err(Error::WindowTooShort { have: recent.len(), need: config.window.max(1) });
    }
    let window = &recent[recent.len() - config.window..];
    let data = RegData::new(window, &model.scaler);
    let nz = n + N_MV;

    // Free response (x0 = 0, e = 0) and sensitivities to [x0; e].
    let zero_x = DVector::zeros(n);
    let zero_e = DVector::zeros(N_MV);
    let free = StateSpaceModel { x0: zero_x.clone(), e: zero_e.clone(), ..model.clone() };
    let rows = N_MV * data.len();
    let mut phi = DMatrix::zeros(rows, nz);
    let mut rhs = DMatrix::zeros(rows, 1);
    let mut x = zero_x.clone();
    let mut sens = DMatrix::zeros(n, nz);
    for i in 0..n {
        sens[(i, i)] = 1.0;
    }
    let mut de = DMatrix::zeros(N_MV, nz);
    for i in 0..N_MV {
        de[(i, n + i)] = 1.0;
    }
    let ke = &model.k * &de;
    for (j, (s, o)) in data.s.iter().zip(&data.o).enumerate() {
        let out = free.step_scaled(&mut x, s);
        let block = &model.c * &sens + &de;
        phi.view_mut((N_MV * j, 0), (N_MV, nz)).copy_from(&block);
        for c in 0..N_MV {
            rhs[(N_MV * j + c, 0)] = o[c] - out[c];
        }
        sens = &model.a * &sens + &ke;
    }
    let z = svd_solve(&phi, &rhs);
    let x0 = DVector::from_fn(n, |i, _| z[(i, 0)]);
    let e = DVector::from_fn(N_MV, |i, _| z[(n + i, 0)]);
    let (cost, state_now) = window_cost(model, &data.s, &data.o, &x0, &e);
    let (prior_cost, _) = window_cost(model, &data.s, &data.o, &model.x0, &model.e);
    Ok(OnlineEstimate { x0, e, state_now, cost, prior_cost })
}
