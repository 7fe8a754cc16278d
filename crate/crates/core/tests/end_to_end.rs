//! Library-level flow from raw 5 s records to drift detection.

use sag_twin::drift::{one_step_residuals, DetectionConfig, DetectionState};
use sag_twin::expert::FuzzyRuleBase;
use sag_twin::narx::{self, NarxModel, NarxStructure, TrainingConfig};
use sag_twin::pipeline::{condition, select_train_test, ValidityCriteria, CONDITIONED_PERIOD, RAW_PERIOD};
use sag_twin::regulatory::{select_order, EstimationConfig, IdentificationConfig, StateSpaceModel};
use sag_twin::scenario::{self, wear_scenario, PlantConfig, SyntheticPlant};
use sag_twin::twin::{backtest, error_report, HorizonConfig, Twin};
use sag_twin::{PlantRecord, SampledSeries};

fn plant() -> SyntheticPlant {
    SyntheticPlant { config: PlantConfig::default(), seed: 3 }
}

/// Holds every conditioned record for six raw periods and stops the mill
/// for one period at `stop`, splitting the series into two segments.
fn to_raw(series: &SampledSeries, stop: usize) -> Vec<PlantRecord> {
    let mut raw = Vec::with_capacity(series.len() * 6);
    for (i, r) in series.records.iter().enumerate() {
        for j in 0..6 {
            let mut x = *r;
            x.timestamp = r.timestamp + j * RAW_PERIOD;
            x.flags.sag_running = i != stop;
            raw.push(x);
        }
    }
    raw
}

fn small_training() -> TrainingConfig {
    TrainingConfig { restarts: 2, max_iter: 60, ..TrainingConfig::default() }
}

#[test]
fn raw_records_condition_into_two_segments_with_larger_as_training() {
    let data = scenario::generate(&plant(), &FuzzyRuleBase::default_rulebase(), &scenario::default_regulatory(), 400, 1).unwrap();
    assert_eq!(data.sample_period, CONDITIONED_PERIOD);
    let segments = condition(&to_raw(&data, 250), &ValidityCriteria::default()).unwrap();
    assert_eq!(segments.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![250, 149]);
    let (train, test) = select_train_test(&segments).unwrap();
    assert_eq!((train.len(), test.len()), (250, 149));
    // Constant blocks downsample to their own value.
    assert_eq!(train.records[..10], data.records[..10]);
}

#[test]
fn identified_twin_predicts_and_detects_a_large_pressure_shift() {
    let rb = FuzzyRuleBase::default_rulebase();
    let reg = scenario::default_regulatory();
    let train = scenario::generate(&plant(), &rb, &reg, 1500, 1).unwrap();
    let test = scenario::generate(&plant(), &rb, &reg, 400, 2).unwrap();

    let sel = select_order(&train.slice(0..600), &[1, 2, 3], 0.05, &IdentificationConfig::default()).unwrap();
    let structure = NarxStructure { m: 4, n: 4, hidden_width: 2 };
    let trained = narx::train(&train, structure, &small_training()).unwrap();
    assert!(trained.cost < 0.1 * trained.constant_cost);

    let twin = Twin { rulebase: rb, regulatory: sel.model, narx: trained.model.clone() };
    let y_lim = PlantConfig::default().y_lim;
    let errors = backtest(&twin, &test.records, y_lim, &HorizonConfig::default(), &EstimationConfig::default(), 1, |_, _| Ok(())).unwrap();
    let report = error_report(&errors).unwrap();
    let pressure_h1 = report.iter().find(|s| s.horizon == 1 && s.cv == 0).unwrap();
    assert!(pressure_h1.std < 0.01, "{pressure_h1:?}");

    let baseline = DetectionState::from_training(&trained.model, &train.records).unwrap();
    let shifted = scenario::apply(&wear_scenario(10.0), &test);
    assert!(fires(&trained.model, &baseline, &shifted)[0]);
}

fn fires(model: &NarxModel, baseline: &DetectionState, series: &SampledSeries) -> [bool; 2] {
    let r = one_step_residuals(model, &series.records).unwrap();
    let mut state = baseline.clone();
    let cfg = DetectionConfig::default();
    let mut fired = [false; 2];
    for k in 0..r[0].len() {
        let rows = state.update([r[0][k], r[1][k]], &cfg);
        for cv in 0..2 {
            fired[cv] |= rows[cv].fired;
        }
    }
    fired
}

#[test]
fn first_order_loops_track_their_setpoints() {
    let m = StateSpaceModel::first_order_loops([0.5, 0.7, 0.9]);
    let sp = vec![[1700.0, 73.0, 9.6]; 200];
    let u = m.simulate(&sp, sp.len()).unwrap();
    for c in 0..3 {
        assert!((u[199][c] - sp[0][c]).abs() < 1e-6 * sp[0][c].abs());
    }
}
