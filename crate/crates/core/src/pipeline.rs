//! Data conditioning: validity filtering, 6:1 median downsampling and
//! train/test segment selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{N_CV, N_MV};

/// Sample period of the raw historian stream, in seconds.
pub const RAW_PERIOD: i64 = 5;
/// Number of raw samples folded into one conditioned sample.
pub const DOWNSAMPLE_BLOCK: usize = 6;
/// Sample period after downsampling, in seconds.
pub const CONDITIONED_PERIOD: i64 = RAW_PERIOD * DOWNSAMPLE_BLOCK as i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordFlags {
    pub sag_running: bool,
    pub expert_online: bool,
}

/// One timestamped plant sample.
///
/// `u` holds tonnage (t/h), solids (%) and speed (rpm); `u_sp` their
/// setpoints; `y` bearing pressure (kPa) and motor power (kW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub timestamp: i64,
    pub u: [f64; N_MV],
    pub u_sp: [f64; N_MV],
    pub y: [f64; N_CV],
    pub flags: RecordFlags,
}

impl PlantRecord {
    /// True when every channel is finite and within its physical range.
    pub fn is_physical(&self) -> bool {
        let finite = self.u.iter().chain(&self.u_sp).chain(&self.y).all(|v| v.is_finite());
        finite
            && (0.0..=100.0).contains(&self.u[1])
            && (0.0..=100.0).contains(&self.u_sp[1])
            && self.u[0] >= 0.0
            && self.u[2] >= 0.0
            && self.u_sp[0] >= 0.0
            && self.u_sp[2] >= 0.0
            && self.y.iter().all(|&v| v >= 0.0)
    }
}

/// Operational validity thresholds applied before identification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidityCriteria {
    pub min_feed: f64,
    pub min_solids: f64,
    pub require_sag_running: bool,
    pub require_expert_online: bool,
}

impl Default for ValidityCriteria {
    fn default() -> Self {
        Self { min_feed: 0.0, min_solids: 0.0, require_sag_running: true, require_expert_online: true }
    }
}

impl ValidityCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_feed >= 0.0) || !(0.0..=100.0).contains(&self.min_solids) {
            return Err(Error::InvalidConfig(format!(
                "validity thresholds out of range: min_feed={}, min_solids={}",
                self.min_feed, self.min_solids
            )));
        }
        Ok(())
    }

    pub fn accepts(&self, r: &PlantRecord) -> bool {
        r.is_physical()
            && r.u[0] > self.min_feed
            && r.u[1] > self.min_solids
            && (!self.require_sag_running || r.flags.sag_running)
            && (!self.require_expert_online || r.flags.expert_online)
    }
}

/// A uniformly sampled, gap-free run of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSeries {
    pub records: Vec<PlantRecord>,
    pub sample_period: i64,
}

impl SampledSeries {
    pub fn new(records: Vec<PlantRecord>, sample_period: i64) -> Self {
        Self { records, sample_period }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn start_time(&self) -> Option<i64> {
        self.records.first().map(|r| r.timestamp)
    }

    /// Checks the uniform-spacing invariant.
    pub fn is_uniform(&self) -> bool {
        self.records.windows(2).all(|w| w[1].timestamp - w[0].timestamp == self.sample_period)
    }

    pub fn y(&self, cv: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.y[cv]).collect()
    }

    pub fn u(&self, mv: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.u[mv]).collect()
    }

    /// Sub-series covering `range` (indices into `records`).
    pub fn slice(&self, range: std::ops::Range<usize>) -> SampledSeries {
        SampledSeries::new(self.records[range].to_vec(), self.sample_period)
    }
}

fn check_ordered(records: &[PlantRecord]) -> Result<()> {
    match records.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
        Some(i) => Err(Error::NotTimeOrdered { index: i + 1 }),
        None => Ok(()),
    }
}

/// Splits `records` into maximal contiguous runs of valid samples.
///
/// A record failing `criteria`, or a timestamp step different from the raw
/// period, ends the current run.
pub fn filter_valid(records: &[PlantRecord], criteria: &ValidityCriteria) -> Result<Vec<SampledSeries>> {
    filter_valid_with_period(records, criteria, RAW_PERIOD)
}

pub fn filter_valid_with_period(
    records: &[PlantRecord],
    criteria: &ValidityCriteria,
    period: i64,
) -> Result<Vec<SampledSeries>> {
    check_ordered(records)?;
    let mut segments = Vec::new();
    let mut current: Vec<PlantRecord> = Vec::new();
    for r in records {
        if !criteria.accepts(r) {
            if !current.is_empty() {
                segments.push(SampledSeries::new(std::mem::take(&mut current), period));
            }
            continue;
        }
        if let Some(last) = current.last() {
            if r.timestamp - last.timestamp != period {
                segments.push(SampledSeries::new(std::mem::take(&mut current), period));
            }
        }
        current.push(*r);
    }
    if !current.is_empty() {
        segments.push(SampledSeries::new(current, period));
    }
    Ok(segments)
}

/// Median of a block of values; even counts average the middle pair.
pub(crate) fn block_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Folds non-overlapping blocks of six records into their component-wise
/// median. The trailing partial block is dropped. The output timestamp is
/// the first timestamp of each block.
pub fn median_downsample(segment: &SampledSeries) -> Result<SampledSeries> {
    if segment.len() < DOWNSAMPLE_BLOCK {
        return Err(Error::SegmentTooShort { len: segment.len(), min: DOWNSAMPLE_BLOCK });
    }
    let mut scratch = [0.0; DOWNSAMPLE_BLOCK];
    let mut median_of = |block: &[PlantRecord], get: &dyn Fn(&PlantRecord) -> f64| {
        for (s, r) in scratch.iter_mut().zip(block) {
            *s = get(r);
        }
        block_median(&mut scratch)
    };
    let records = segment
        .records
        .chunks_exact(DOWNSAMPLE_BLOCK)
        .map(|block| {
            let mut out = block[0];
            for j in 0..N_MV {
                out.u[j] = median_of(block, &|r| r.u[j]);
                out.u_sp[j] = median_of(block, &|r| r.u_sp[j]);
            }
            for j in 0..N_CV {
                out.y[j] = median_of(block, &|r| r.y[j]);
            }
            out.flags = RecordFlags {
                sag_running: block.iter().all(|r| r.flags.sag_running),
                expert_online: block.iter().all(|r| r.flags.expert_online),
            };
            out
        })
        .collect();
    Ok(SampledSeries::new(records, segment.sample_period * DOWNSAMPLE_BLOCK as i64))
}

/// Picks the longest segment for training and the runner-up for testing.
/// Equal lengths are ordered by earliest start time.
pub fn select_train_test(segments: &[SampledSeries]) -> Result<(SampledSeries, SampledSeries)> {
    if segments.len() < 2 {
        return Err(Error::InsufficientSegments { found: segments.len() });
    }
    let mut order: Vec<&SampledSeries> = segments.iter().collect();
    order.sort_by(|a, b| {
        b.len().cmp(&a.len()).then_with(|| a.start_time().cmp(&b.start_time()))
    });
    Ok((order[0].clone(), order[1].clone()))
}

/// Runs filtering and downsampling end to end. Segments too short to yield
/// a single conditioned sample are dropped.
pub fn condition(records: &[PlantRecord], criteria: &ValidityCriteria) -> Result<Vec<SampledSeries>> {
    criteria.validate()?;
    filter_valid(records, criteria)?
        .iter()
        .filter(|s| s.len() >= DOWNSAMPLE_BLOCK)
        .map(median_downsample)
        .collect()
}
