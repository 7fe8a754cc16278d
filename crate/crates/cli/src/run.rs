//! The per-sample loop behind `sagtwin run`.
//!
//! Each incoming record is scaled by the active disturbance scenario and
//! appended to the history. The twin is then re-anchored on that history
//! and rolled out (optionally through the supervisor), the record's
//! one-step residual is fed to the drift detector, and a latched trigger
//! retrains the NARX model. Batch mode pushes a dataset record by record;
//! live mode pushes rows as they arrive on stdin.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sag_twin::drift::{self, retrain_if_triggered, DetectionState, JOURNAL_HEADER, LOG_HEADER};
use sag_twin::scenario::DisturbanceScenario;
use sag_twin::twin::{self, evaluate_supervisor, throughput_objective, HorizonErrors, Twin, TraceRow, TRACE_HEADER};
use sag_twin::{Error, PlantRecord, N_CV};

use crate::config::RunConfig;
use crate::{create_dir, create_file, write_error_summary, ErrorSummary, Models, Result};

pub const SUPERVISOR_HEADER: &str = "k,y1_lim,y2_lim,score,feasible,chosen";

struct Sinks {
    trace: BufWriter<File>,
    log: BufWriter<File>,
    journal: BufWriter<File>,
    supervisor: Option<BufWriter<File>>,
}

impl Sinks {
    fn open(dir: &Path, supervisor: bool) -> Result<Self> {
        create_dir(dir)?;
        let mut trace = create_file(&dir.join("trace.csv"))?;
        let mut log = create_file(&dir.join("detection_log.csv"))?;
        let mut journal = create_file(&dir.join("journal.csv"))?;
        writeln!(trace, "{TRACE_HEADER}").map_err(Error::from)?;
        writeln!(log, "{LOG_HEADER}").map_err(Error::from)?;
        writeln!(journal, "{JOURNAL_HEADER}").map_err(Error::from)?;
        let supervisor = if supervisor {
            let mut w = create_file(&dir.join("supervisor.csv"))?;
            writeln!(w, "{SUPERVISOR_HEADER}").map_err(Error::from)?;
            Some(w)
        } else {
            None
        };
        Ok(Self { trace, log, journal, supervisor })
    }

    fn flush(&mut self) -> Result<()> {
        self.trace.flush().map_err(Error::from)?;
        self.log.flush().map_err(Error::from)?;
        self.journal.flush().map_err(Error::from)?;
        if let Some(s) = &mut self.supervisor {
            s.flush().map_err(Error::from)?;
        }
        Ok(())
    }
}

/// Detection events of one run.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub samples: usize,
    pub predictions: usize,
    /// `(k, cv)` of every trigger that latched.
    pub triggers: Vec<(usize, usize)>,
    /// Sample indices at which the NARX model was retrained.
    pub retrains: Vec<usize>,
    pub report: Option<ErrorSummary>,
}

pub struct RunSession {
    twin: Twin,
    detection: DetectionState,
    cfg: RunConfig,
    scenario: DisturbanceScenario,
    records: Vec<PlantRecord>,
    trace: Vec<TraceRow>,
    sinks: Sinks,
    out_dir: PathBuf,
    deferred_logged: bool,
    summary: RunSummary,
}

impl RunSession {
    pub fn new(models: Models, cfg: &RunConfig, out_dir: &Path) -> Result<Self> {
        let twin = Twin { rulebase: cfg.rulebase()?, regulatory: models.regulatory, narx: models.narx };
        Ok(Self {
            twin,
            detection: DetectionState::new(models.baseline),
            scenario: cfg.scenario()?,
            cfg: cfg.clone(),
            records: Vec::new(),
            trace: Vec::new(),
            sinks: Sinks::open(out_dir, cfg.supervisor.enabled)?,
            out_dir: out_dir.to_path_buf(),
            deferred_logged: false,
            summary: RunSummary::default(),
        })
    }

    /// Index the next predicted instant must have history for.
    fn first_prediction(&self) -> usize {
        self.twin.required_history().max(self.cfg.estimation.window)
    }

    pub fn push(&mut self, raw: PlantRecord) -> Result<()> {
        let j = self.records.len();
        let mut r = raw;
        for cv in 0..N_CV {
            let f = self.scenario.factor(cv, j);
            if f != 1.0 {
                r.y[cv] *= f;
            }
        }
        self.records.push(r);
        self.summary.samples += 1;
        if self.records.len() >= self.first_prediction() {
            self.predict(j + 1)?;
        }
        if j >= self.twin.narx.structure.max_lag() {
            self.detect(j)?;
        }
        Ok(())
    }

    fn predict(&mut self, k: usize) -> Result<()> {
        let hist = &self.records[..];
        let twin = self.twin.at_instant(hist, &self.cfg.estimation)?;
        let mut y_lim = self.cfg.y_lim;
        if let Some(w) = &mut self.sinks.supervisor {
            let bounds = self.cfg.bounds();
            let (table, chosen) = match evaluate_supervisor(&twin, hist, &bounds, throughput_objective, &self.cfg.horizon) {
                Ok(d) => {
                    y_lim = d.y_lim;
                    (d.table, Some(d.y_lim))
                }
                Err(Error::AllInfeasible { table }) => {
                    drift::write_journal_row(&mut self.sinks.journal, k, None, "supervisor_infeasible", "fallback to configured limits")?;
                    (table, None)
                }
                Err(e) => return Err(e.into()),
            };
            for c in &table {
                let is_chosen = chosen == Some(c.y_lim);
                writeln!(w, "{k},{},{},{},{},{is_chosen}", c.y_lim[0], c.y_lim[1], c.score, c.feasible).map_err(Error::from)?;
            }
        }
        let p = twin.rollout_closed_loop(hist, y_lim, &self.cfg.horizon, &self.cfg.supervisor.region)?;
        twin::write_trace_rows(&mut self.sinks.trace, k, &p)?;
        self.trace.extend(p.y_hat.iter().enumerate().map(|(i, y)| TraceRow { k, i, y_hat: *y }));
        self.summary.predictions += 1;
        Ok(())
    }

    fn detect(&mut self, j: usize) -> Result<()> {
        let window = self.twin.narx.window_at(&self.records, j)?;
        let y = self.twin.narx.forward(&window)?;
        let measured = self.records[j].y;
        let residual = [0, 1].map(|cv| drift::proportional_error(y[cv], measured[cv]));
        let rows = self.detection.update(residual, &self.cfg.detection);
        drift::write_log_rows(&mut self.sinks.log, j, &rows)?;
        for (cv, row) in rows.iter().enumerate() {
            if row.fired {
                self.summary.triggers.push((j, cv));
                let detail = format!("M={} threshold={}", row.counter, self.cfg.detection.thresholds[cv]);
                drift::write_journal_row(&mut self.sinks.journal, j, Some(cv), "trigger", &detail)?;
            }
        }
        let outcome = retrain_if_triggered(
            &mut self.detection,
            &self.records,
            &self.cfg.validity,
            self.twin.narx.structure,
            &self.cfg.training_config(),
            &self.cfg.detection,
        );
        match outcome {
            Ok(None) => {}
            Ok(Some(model)) => {
                let name = format!("narx_retrained_{j}.json");
                crate::write_file(&self.out_dir.join(&name), model.to_json()?.as_bytes())?;
                self.twin.narx = model;
                self.summary.retrains.push(j);
                self.deferred_logged = false;
                drift::write_journal_row(&mut self.sinks.journal, j, None, "retrained", &name)?;
            }
            Err(Error::RetrainDeferred { valid, need }) => {
                if !self.deferred_logged {
                    let detail = format!("{valid} valid records of {need}");
                    drift::write_journal_row(&mut self.sinks.journal, j, None, "retrain_deferred", &detail)?;
                    self.deferred_logged = true;
                }
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.sinks.flush()
    }

    /// Flushes the logs and, when enough predictions can be scored, writes
    /// the error report.
    pub fn finish(mut self) -> Result<RunSummary> {
        self.flush()?;
        let mut errors = HorizonErrors::new(self.cfg.horizon.steps);
        for r in &self.trace {
            if let Some(m) = self.records.get(r.k + r.i) {
                errors.push(r.i, &r.y_hat, &m.y);
            }
        }
        let enough = errors.errors.iter().all(|e| e[0].len() >= twin::MIN_PAIRS);
        if enough {
            self.summary.report = Some(write_error_summary(&errors, &self.out_dir, &self.cfg)?);
        }
        Ok(self.summary)
    }
}

/// Runs the loop over every record of `records`.
pub fn cmd_run(records: &[PlantRecord], models: Models, cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    let mut session = RunSession::new(models, cfg, out_dir)?;
    for r in records {
        session.push(*r)?;
    }
    session.finish()
}
