//! Acceptance suite. One test per criterion; each prints a single
//! `criterion N: PASS|FAIL` line with its measurements (visible with
//! `--nocapture`) and then asserts. Criteria run one at a time so the
//! runtime limits are measured without contention.

use std::fs;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sag_twin::drift::{one_step_residuals, DetectionConfig, DetectionState};
use sag_twin::expert::FuzzyRuleBase;
use sag_twin::narx::{self, Activation, NarxModel, NarxStructure, SeriesParallel, TrainingConfig};
use sag_twin::pipeline::{median_downsample, RecordFlags};
use sag_twin::regulatory::{estimate_online, identify, select_order, EstimationConfig, IdentificationConfig, StateSpaceModel};
use sag_twin::scaling::ChannelScaler;
use sag_twin::scenario::{self, hardness_scenario, wear_scenario, DisturbanceScenario, HARDNESS_ONSET};
use sag_twin::stats;
use sag_twin::twin::{
    backtest, error_report, evaluate_supervisor, throughput_objective, Bounds, CandidateScore, FeasibleRegion,
    HorizonConfig, Interval, QualityGate, Twin, TwinPrediction,
};
use sag_twin::{Error, PlantRecord, SampledSeries};
use sag_twin_cli::run::cmd_run;
use sag_twin_cli::{cmd_generate, cmd_train, load_models, RunConfig};

// Tolerances and limits.
const C1_RECORDS: usize = 100_000;
const C1_LIMIT: Duration = Duration::from_secs(5);
const C2_FREE_RUN_REL_RMSE: f64 = 1e-6;
const C2_NOISE_SIGMA: f64 = 0.05;
const C2_ONE_STEP_FACTOR: f64 = 1.5;
const C2_THRESHOLD: f64 = 0.05;
const C2_LIMIT: Duration = Duration::from_secs(60);
const C3_TOL: f64 = 1e-6;
const C3_LIMIT: Duration = Duration::from_secs(5);
const C4_COORDS: usize = 20;
const C4_STEP: f64 = 1e-6;
const C4_REL_ERR: f64 = 1e-4;
const C4_LIMIT: Duration = Duration::from_secs(10);
const C5_SAMPLES: usize = 5000;
const C5_RMSE: f64 = 1e-3;
const C5_LIMIT: Duration = Duration::from_secs(300);
const C6_ALPHA: f64 = 0.01;
const C6_MEAN_STDERRS: f64 = 3.0;
const C6_LIMIT: Duration = Duration::from_secs(120);
const C7_LIMIT: Duration = Duration::from_secs(120);
const C8_LIMIT: Duration = Duration::from_secs(300);
const C9_CONFIGS: usize = 50;
const C9_LIMIT: Duration = Duration::from_secs(120);

/// 8 h test sets.
const TEST_LEN: usize = 1013;
/// 68 h of 30 s samples.
const TRAIN_LEN: usize = 8160;
const TEST_SEEDS: std::ops::RangeInclusive<u64> = 2..=9;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, pass: bool, elapsed: Duration, detail: &str) {
    println!("criterion {n}: {} ({:.2} s) {detail}", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn flags() -> RecordFlags {
    RecordFlags { sag_running: true, expert_online: true }
}

// ---------------------------------------------------------------------------
// 1. Pipeline exactness

fn oracle_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (v[2] + v[3]) / 2.0
}

#[test]
fn criterion_01_pipeline_exactness() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let records: Vec<PlantRecord> = (0..C1_RECORDS)
        .map(|t| PlantRecord {
            timestamp: 5 * t as i64,
            u: std::array::from_fn(|_| rng.random_range(0.0..100.0)),
            u_sp: std::array::from_fn(|_| rng.random_range(0.0..100.0)),
            y: std::array::from_fn(|_| rng.random_range(0.0..10_000.0)),
            flags: flags(),
        })
        .collect();
    let series = SampledSeries::new(records.clone(), 5);
    let start = Instant::now();
    let out = median_downsample(&series).unwrap();
    let elapsed = start.elapsed();

    let mut mismatches = 0usize;
    for (b, block) in records.chunks_exact(6).enumerate() {
        let o = &out.records[b];
        let col = |f: &dyn Fn(&PlantRecord) -> f64| oracle_median(block.iter().map(f).collect());
        for c in 0..3 {
            mismatches += (o.u[c].to_bits() != col(&|r| r.u[c]).to_bits()) as usize;
            mismatches += (o.u_sp[c].to_bits() != col(&|r| r.u_sp[c]).to_bits()) as usize;
        }
        for c in 0..2 {
            mismatches += (o.y[c].to_bits() != col(&|r| r.y[c]).to_bits()) as usize;
        }
        mismatches += (o.timestamp != block[0].timestamp) as usize;
    }
    let len_ok = out.len() == C1_RECORDS / 6;
    verdict(
        1,
        len_ok && mismatches == 0 && elapsed < C1_LIMIT,
        elapsed,
        &format!("len {} (floor(L/6) = {}), {mismatches} mismatching values", out.len(), C1_RECORDS / 6),
    );
}

// ---------------------------------------------------------------------------
// 2. Regulatory identification oracle

struct TrueSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

/// A stable order-2 MIMO regulatory system in engineering units. The
/// feedthrough is chosen so every MV tracks its setpoint at steady state,
/// which is the model class (MVs and setpoints share one affine scaling).
fn order2_system() -> TrueSystem {
    let a = DMatrix::from_row_slice(2, 2, &[0.85, 0.10, -0.12, 0.70]);
    let b = DMatrix::from_row_slice(2, 3, &[0.10, 0.05, -0.03, 0.02, 0.12, 0.06]);
    let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.4, 1.0, 0.6, 0.5]);
    let dc = &c * (DMatrix::identity(2, 2) - &a).try_inverse().unwrap() * &b;
    let d = DMatrix::identity(3, 3) - dc;
    TrueSystem { a, b, c, d }
}

fn order2_records(sys: &TrueSystem, len: usize, noise: f64, seed: u64) -> (Vec<PlantRecord>, Vec<[f64; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = DVector::from_vec(vec![1.0, 0.0, -1.0]);
    let mut x = DVector::zeros(2);
    let mut clean = Vec::with_capacity(len);
    let records = (0..len)
        .map(|t| {
            if rng.random_bool(0.15) {
                s = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            }
            let u = &sys.c * &x + &sys.d * &s;
            x = &sys.a * &x + &sys.b * &s;
            let u_clean = [u[0], u[1], u[2]];
            clean.push(u_clean);
            let n = |rng: &mut ChaCha8Rng| if noise > 0.0 { noise * rng.sample::<f64, _>(rand_distr::StandardNormal) } else { 0.0 };
            PlantRecord {
                timestamp: 30 * t as i64,
                u: [u[0] + n(&mut rng), u[1] + n(&mut rng), u[2] + n(&mut rng)],
                u_sp: [s[0], s[1], s[2]],
                y: [1.0, 1.0],
                flags: flags(),
            }
        })
        .collect();
    (records, clean)
}

fn rmse(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum();
    (ss / (3 * a.len()) as f64).sqrt()
}

#[test]
fn criterion_02_regulatory_identification() {
    let _g = serial();
    let sys = order2_system();
    let cfg = IdentificationConfig::default();
    let start = Instant::now();

    let (clean, truth) = order2_records(&sys, 800, 0.0, 21);
    let clean_series = SampledSeries::new(clean.clone(), 30);
    let sel_clean = select_order(&clean_series, &[1, 2, 3, 4], C2_THRESHOLD, &cfg).unwrap();
    let fit = identify(&clean_series, 2, &cfg).unwrap();
    let sp: Vec<[f64; 3]> = clean.iter().map(|r| r.u_sp).collect();
    let sim = fit.model.simulate(&sp, sp.len()).unwrap();
    let scale = (truth.iter().map(|u| u.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / (3 * truth.len()) as f64).sqrt();
    let rel = rmse(&sim, &truth) / scale;

    let (noisy, truth_n) = order2_records(&sys, 800, C2_NOISE_SIGMA, 22);
    let noisy_series = SampledSeries::new(noisy.clone(), 30);
    let sel_noisy = select_order(&noisy_series, &[1, 2, 3, 4], C2_THRESHOLD, &cfg).unwrap();
    let fit_n = identify(&noisy_series, 2, &cfg).unwrap();
    // Output-error model: the one-step predictor is the simulated output.
    let sp: Vec<[f64; 3]> = noisy.iter().map(|r| r.u_sp).collect();
    let pred = fit_n.model.simulate(&sp, sp.len()).unwrap();
    let measured: Vec<[f64; 3]> = noisy.iter().map(|r| r.u).collect();
    let one_step = rmse(&pred, &measured);
    let to_truth = rmse(&pred, &truth_n);
    let elapsed = start.elapsed();

    let pass = rel < C2_FREE_RUN_REL_RMSE
        && one_step <= C2_ONE_STEP_FACTOR * C2_NOISE_SIGMA
        && sel_clean.order == 2
        && sel_noisy.order == 2
        && elapsed < C2_LIMIT;
    verdict(
        2,
        pass,
        elapsed,
        &format!(
            "free-run rel RMSE {rel:.2e}; noisy one-step RMSE {one_step:.4} (sigma {C2_NOISE_SIGMA}, vs truth {to_truth:.4}); \
             order clean {} noisy {}",
            sel_clean.order, sel_noisy.order
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Online (x0, e) estimation oracle

#[test]
fn criterion_03_online_estimation() {
    let _g = serial();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut m = StateSpaceModel::zeros(2);
        m.a = DMatrix::from_row_slice(2, 2, &[0.8, 0.15, -0.1, 0.6]);
        m.b = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-0.5..0.5));
        m.c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.3, 1.0, -0.5, 0.4]);
        m.d = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.2..0.2));
        m.k = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-0.3..0.3));
        m.scaler = ChannelScaler { offset: vec![1600.0, 72.0, 9.5], scale: vec![120.0, 1.5, 0.2] };
        let x0 = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let e = DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5));

        let mut x = x0.clone();
        let window = EstimationConfig::default().window;
        let records: Vec<PlantRecord> = (0..window)
            .map(|t| {
                let s = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.5));
                let out = &m.c * &x + &m.d * &s + &e;
                x = &m.a * &x + &m.b * &s + &m.k * &e;
                let eng = |v: &DVector<f64>| -> [f64; 3] { std::array::from_fn(|c| v[c] * m.scaler.scale[c] + m.scaler.offset[c]) };
                PlantRecord { timestamp: 30 * t as i64, u: eng(&out), u_sp: eng(&s), y: [1.0, 1.0], flags: flags() }
            })
            .collect();
        let est = estimate_online(&m, &records, &EstimationConfig::default()).unwrap();
        worst = worst.max((&est.x0 - &x0).amax()).max((&est.e - &e).amax());
    }
    let elapsed = start.elapsed();
    verdict(3, worst < C3_TOL && elapsed < C3_LIMIT, elapsed, &format!("max |error| on (x0, e) over 10 systems {worst:.2e}"));
}

// ---------------------------------------------------------------------------
// 4. NARX gradient check

#[test]
fn criterion_04_narx_gradient() {
    let _g = serial();
    let start = Instant::now();
    let cfg = RunConfig::default();
    let data = scenario::generate(&cfg.plant(), &FuzzyRuleBase::default_rulebase(), &scenario::default_regulatory(), 400, 3).unwrap();
    let structure = NarxStructure::default();
    let mut model = narx::template_for(&data.records, structure, &TrainingConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let n = model.params().len();
    model.set_params(&DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)));
    let problem = SeriesParallel::new(&model, &data.records).unwrap();
    let p = model.params();
    let grad = problem.gradient(&p);
    let mut worst: f64 = 0.0;
    for _ in 0..C4_COORDS {
        let j = rng.random_range(0..n);
        let mut hi = p.clone();
        let mut lo = p.clone();
        hi[j] += C4_STEP;
        lo[j] -= C4_STEP;
        let fd = (problem.cost(&hi) - problem.cost(&lo)) / (2.0 * C4_STEP);
        let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    verdict(4, worst < C4_REL_ERR && elapsed < C4_LIMIT, elapsed, &format!("max relative error {worst:.2e} over {C4_COORDS} coordinates"));
}

// ---------------------------------------------------------------------------
// 5. Teacher-student NARX

#[test]
fn criterion_05_teacher_student() {
    let _g = serial();
    let structure = NarxStructure::default();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut teacher = NarxModel::zeros(structure, Activation::Tanh);
    let n = teacher.params().len();
    teacher.set_params(&DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3)));

    let lag = structure.max_lag();
    let mut records: Vec<PlantRecord> = Vec::with_capacity(C5_SAMPLES + lag);
    let mut u = [0.0; 3];
    for t in 0..C5_SAMPLES + lag {
        if rng.random_bool(0.3) {
            u = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        }
        let y = if t < lag {
            [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]
        } else {
            records.push(PlantRecord { timestamp: 30 * t as i64, u, u_sp: u, y: [0.0; 2], flags: flags() });
            let w = teacher.window_at(&records, t).unwrap();
            records.pop();
            teacher.forward(&w).unwrap()
        };
        records.push(PlantRecord { timestamp: 30 * t as i64, u, u_sp: u, y, flags: flags() });
    }
    let series = SampledSeries::new(records, 30);

    let start = Instant::now();
    let trained = narx::train(&series, structure, &TrainingConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let preds = trained.model.one_step_predictions(&series.records).unwrap();
    let sc = &trained.model.y_scaler;
    let ss: f64 = preds
        .iter()
        .map(|(t, y)| (0..2).map(|c| ((y[c] - series.records[*t].y[c]) / sc.scale[c]).powi(2)).sum::<f64>())
        .sum();
    let rmse = (ss / (2 * preds.len()) as f64).sqrt();
    verdict(5, rmse <= C5_RMSE && elapsed < C5_LIMIT, elapsed, &format!("student one-step RMSE {rmse:.2e} (scaled) on {} samples", preds.len()));
}

// ---------------------------------------------------------------------------
// Shared synthetic-plant twin for criteria 6-8

struct PlantFixture {
    twin: Twin,
    baseline: DetectionState,
    tests: Vec<SampledSeries>,
    y_lim: [f64; 2],
    build_time: Duration,
}

fn fixture() -> &'static PlantFixture {
    static F: OnceLock<PlantFixture> = OnceLock::new();
    F.get_or_init(|| {
        let start = Instant::now();
        let cfg = RunConfig::default();
        let plant = cfg.plant();
        let rb = FuzzyRuleBase::default_rulebase();
        let reg = scenario::default_regulatory();
        let train = scenario::generate(&plant, &rb, &reg, TRAIN_LEN, 1).unwrap();
        let id_data = train.slice(0..cfg.identification.max_records.min(train.len()));
        let orders = select_order(&id_data, &cfg.identification.orders, cfg.identification.threshold, &cfg.identification_config()).unwrap();
        let trained = narx::train(&train, NarxStructure::default(), &cfg.training_config()).unwrap();
        let baseline = DetectionState::from_training(&trained.model, &train.records).unwrap();
        let tests = TEST_SEEDS.map(|s| scenario::generate(&plant, &rb, &reg, TEST_LEN, s).unwrap()).collect();
        PlantFixture {
            twin: Twin { rulebase: rb, regulatory: orders.model, narx: trained.model },
            baseline,
            tests,
            y_lim: cfg.y_lim,
            build_time: start.elapsed(),
        }
    })
}

// ---------------------------------------------------------------------------
// 6. Horizon error growth

#[test]
fn criterion_06_horizon_error_growth() {
    let _g = serial();
    let f = fixture();
    let start = Instant::now();
    let test = &f.tests[0];
    let horizon = HorizonConfig::default();
    let errors = backtest(&f.twin, &test.records, f.y_lim, &horizon, &EstimationConfig::default(), 1, |_, _| Ok(())).unwrap();
    let report = error_report(&errors).unwrap();
    let gate = QualityGate::default().evaluate(&errors).unwrap();
    let elapsed = start.elapsed() + f.build_time;

    let std_of = |h: usize, cv: usize| report.iter().find(|s| s.horizon == h && s.cv == cv).unwrap().std;
    let monotone = (0..2).all(|cv| (1..horizon.steps).all(|h| std_of(h + 1, cv) >= std_of(h, cv)));
    let centred = report.iter().all(|s| {
        let n = errors.errors[s.horizon][s.cv].len() as f64;
        s.mean.abs() <= C6_MEAN_STDERRS * s.std / n.sqrt()
    });
    let ks_p: Vec<f64> = (0..2).map(|cv| stats::ks_normality(&errors.errors[0][cv]).1).collect();
    let normal = ks_p.iter().all(|&p| p >= C6_ALPHA);
    let stds: Vec<String> = (0..2)
        .map(|cv| (1..=horizon.steps).map(|h| format!("{:.2e}", std_of(h, cv))).collect::<Vec<_>>().join("<="))
        .collect();
    let gate_txt: Vec<String> = gate
        .iter()
        .map(|g| format!("cv{} [{:+.4},{:+.4}] band {} {}", g.cv + 1, g.lower, g.upper, g.band, if g.pass { "ok" } else { "out" }))
        .collect();
    let pass = monotone && centred && normal && gate[0].pass && elapsed < C6_LIMIT;
    verdict(
        6,
        pass,
        elapsed,
        &format!(
            "std pressure {} / power {}; means centred {centred}; KS p {:.3} {:.3}; gate {}",
            stds[0],
            stds[1],
            ks_p[0],
            ks_p[1],
            gate_txt.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// 7-8. Detection

/// Final latch state and first trigger sample per CV.
fn detect(f: &PlantFixture, series: &SampledSeries, cfg: &DetectionConfig) -> [Option<usize>; 2] {
    let r = one_step_residuals(&f.twin.narx, &series.records).unwrap();
    let mut state = f.baseline.clone();
    let offset = series.len() - r[0].len();
    let mut first = [None; 2];
    for k in 0..r[0].len() {
        let rows = state.update([r[0][k], r[1][k]], cfg);
        for cv in 0..2 {
            if rows[cv].fired {
                first[cv] = Some(k + offset);
            }
        }
    }
    first
}

#[test]
fn criterion_07_detector_calibration() {
    let _g = serial();
    let f = fixture();
    let start = Instant::now();
    let cfg = DetectionConfig::default();
    let triggers: usize = f.tests.iter().map(|t| detect(f, t, &cfg).iter().filter(|x| x.is_some()).count()).sum();
    let elapsed = start.elapsed();
    verdict(
        7,
        triggers == 0 && elapsed < C7_LIMIT,
        elapsed,
        &format!("{triggers} triggers over {} undisturbed test sets of {TEST_LEN} samples", f.tests.len()),
    );
}

#[test]
fn criterion_08_scenario_table() {
    let _g = serial();
    let f = fixture();
    let start = Instant::now();
    let cfg = DetectionConfig::default();
    let cases: [(&str, DisturbanceScenario, [bool; 2]); 4] = [
        ("identity", DisturbanceScenario::identity(), [false, false]),
        ("wear 1 month", wear_scenario(1.0), [false, false]),
        ("wear 5 months", wear_scenario(5.0), [true, false]),
        ("hardness +10%", hardness_scenario(0.10, HARDNESS_ONSET), [true, false]),
    ];
    let mut cells_ok = 0;
    let mut lines = Vec::new();
    for (name, sc, expected) in &cases {
        let outcomes: Vec<[Option<usize>; 2]> = f.tests.iter().map(|t| detect(f, &scenario::apply(sc, t), &cfg)).collect();
        for cv in 0..2 {
            let fired: Vec<Option<usize>> = outcomes.iter().map(|o| o[cv]).collect();
            let count = fired.iter().filter(|x| x.is_some()).count();
            let after_onset = !name.starts_with("hardness") || fired.iter().flatten().all(|&k| k >= HARDNESS_ONSET);
            let ok = if expected[cv] { count == fired.len() && after_onset } else { count == 0 };
            cells_ok += ok as usize;
            let firsts: Vec<String> = fired.iter().map(|x| x.map_or("-".into(), |k| k.to_string())).collect();
            lines.push(format!("{name}/{}: {count}/{} fired [{}]{}", ["pressure", "power"][cv], fired.len(), firsts.join(" "), if ok { "" } else { " MISMATCH" }));
        }
    }
    let elapsed = start.elapsed();
    verdict(8, cells_ok == 8 && elapsed < C8_LIMIT, elapsed, &format!("{cells_ok}/8 cells match; {}", lines.join("; ")));
}

// ---------------------------------------------------------------------------
// 9. Supervisor equivalence

fn brute_force(twin: &Twin, history: &[PlantRecord], bounds: &Bounds, horizon: &HorizonConfig) -> (Option<([f64; 2], f64)>, Vec<CandidateScore>) {
    let mut table = Vec::new();
    let mut best: Option<([f64; 2], f64)> = None;
    for &a in &bounds.y_lim_grid[0] {
        for &b in &bounds.y_lim_grid[1] {
            let p: TwinPrediction = twin.rollout_closed_loop(history, [a, b], horizon, &bounds.region).unwrap();
            let score = throughput_objective(&p);
            let feasible = p.feasible.iter().all(|&x| x);
            table.push(CandidateScore { y_lim: [a, b], score, feasible });
            if feasible && best.map_or(true, |(_, s)| score < s) {
                best = Some(([a, b], score));
            }
        }
    }
    (best, table)
}

#[test]
fn criterion_09_supervisor_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let cfg = RunConfig::default();
    let rb = FuzzyRuleBase::default_rulebase();
    let data = scenario::generate(&cfg.plant(), &rb, &scenario::default_regulatory(), 1200, 9).unwrap();
    let structure = NarxStructure { m: 4, n: 4, hidden_width: 2 };
    let base = narx::template_for(&data.records, structure, &TrainingConfig::default());
    let mut agree = 0;
    let mut infeasible = 0;
    for i in 0..C9_CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i as u64);
        let mut model = base.clone();
        let n = model.params().len();
        model.set_params(&DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)));
        let poles = std::array::from_fn(|_| rng.random_range(0.2..0.9));
        let twin = Twin { rulebase: rb.clone(), regulatory: StateSpaceModel::first_order_loops(poles), narx: model };
        let k = rng.random_range(40..data.len());
        let history = &data.records[..k];
        let grid = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..rng.random_range(1..6)).map(|_| rng.random_range(lo..hi)).collect()
        };
        let mut region = FeasibleRegion::default();
        region.y[0] = Interval { lower: 0.0, upper: rng.random_range(1150.0..1400.0) };
        let bounds = Bounds { y_lim_grid: [grid(1100.0, 1350.0, &mut rng), grid(8000.0, 10000.0, &mut rng)], region };
        let horizon = HorizonConfig { steps: rng.random_range(1..8), ..Default::default() };
        let (expected, table) = brute_force(&twin, history, &bounds, &horizon);
        let got = evaluate_supervisor(&twin, history, &bounds, throughput_objective, &horizon);
        let same = match (got, expected) {
            (Ok(d), Some((lim, score))) => {
                d.y_lim == lim && d.score.to_bits() == score.to_bits() && d.table == table
            }
            (Err(Error::AllInfeasible { table: t }), None) => {
                infeasible += 1;
                t == table
            }
            _ => false,
        };
        agree += same as usize;
    }
    let elapsed = start.elapsed();
    verdict(
        9,
        agree == C9_CONFIGS && elapsed < C9_LIMIT,
        elapsed,
        &format!("{agree}/{C9_CONFIGS} configurations identical ({infeasible} all-infeasible)"),
    );
}

// ---------------------------------------------------------------------------
// 10. Determinism

fn pipeline(root: &Path, cfg: &RunConfig) -> Vec<(String, Vec<u8>)> {
    let train = root.join("train.csv");
    let test = root.join("test.csv");
    cmd_generate(&train, 3000, 1, 1, false, cfg).unwrap();
    cmd_generate(&test, TEST_LEN, 2, 1, false, cfg).unwrap();
    let models = root.join("models");
    cmd_train(&train, &models, cfg).unwrap();
    let records = sag_twin::io::read_records_file(&test).unwrap();
    let records = scenario::apply(&hardness_scenario(0.10, HARDNESS_ONSET), &SampledSeries::new(records, 30)).records;
    cmd_run(&records, load_models(&models).unwrap(), cfg, &root.join("run")).unwrap();
    let mut files = Vec::new();
    for dir in ["models", "run"] {
        let mut names: Vec<_> = fs::read_dir(root.join(dir)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            let p = root.join(dir).join(&n);
            files.push((format!("{dir}/{}", n.to_string_lossy()), fs::read(p).unwrap()));
        }
    }
    files
}

#[test]
fn criterion_10_determinism() {
    let _g = serial();
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.supervisor.enabled = true;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = pipeline(a.path(), &cfg);
    let fb = pipeline(b.path(), &cfg);
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    let identical = fa == fb;
    let retrained = names.iter().any(|n| n.contains("narx_retrained"));
    let elapsed = start.elapsed();
    verdict(
        10,
        identical && !fa.is_empty(),
        elapsed,
        &format!("{} files byte-identical across two runs: {identical} (retraining exercised: {retrained}) [{}]", fa.len(), names.join(" ")),
    );
}

