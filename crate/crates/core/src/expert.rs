//! Fuzzy emulation of the expert control layer.
//!
//! Values and slopes of the plant variables are fuzzified with triangular
//! membership functions. Each operating state activates to the minimum of
//! its conditions; the most critical active state wins and its constant
//! consequent, scaled by the activation degree, becomes the setpoint change.
//! The rulebase is data (TOML); [`FuzzyRuleBase::default_rulebase`] loads the
//! shipped example.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PlantRecord;
use crate::{N_CV, N_MV};

const DEFAULT_RULEBASE: &str = include_str!("../assets/default_rulebase.toml");

/// Triangle with feet `a`, `c` and apex `b`. An infinite foot turns that
/// side into a shoulder held at full membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularMF {
    pub label: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TriangularMF {
    pub fn new(label: impl Into<String>, a: f64, b: f64, c: f64) -> Self {
        Self { label: label.into(), a, b, c }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.b.is_finite() || self.a.is_nan() || self.c.is_nan() || !(self.a <= self.b && self.b <= self.c) {
            return Err(Error::InvalidConfig(format!(
                "membership '{}' needs a <= b <= c with finite b",
                self.label
            )));
        }
        Ok(())
    }

    pub fn membership(&self, x: f64) -> f64 {
        if x.is_nan() || x < self.a || x > self.c {
            return 0.0;
        }
        if x == self.b {
            1.0
        } else if x < self.b {
            if self.a == f64::NEG_INFINITY { 1.0 } else { (x - self.a) / (self.b - self.a) }
        } else if self.c == f64::INFINITY {
            1.0
        } else {
            (self.c - x) / (self.c - self.b)
        }
    }
}

/// Degrees of `value` in every membership function, in declaration order.
pub fn fuzzify(value: f64, mfs: &[TriangularMF]) -> Vec<(String, f64)> {
    mfs.iter().map(|m| (m.label.clone(), m.membership(value))).collect()
}

/// Least-squares slope of equally spaced samples, per sample.
pub fn slope(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::WindowTooShort { have: n, need: 2 });
    }
    let xm = (n - 1) as f64 / 2.0;
    let vm = series.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in series.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (v - vm);
        den += dx * dx;
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Y1,
    Y2,
    U1,
    U2,
    U3,
}

impl Variable {
    fn cv_index(self) -> Option<usize> {
        match self {
            Variable::Y1 => Some(0),
            Variable::Y2 => Some(1),
            _ => None,
        }
    }

    fn value(self, r: &PlantRecord) -> f64 {
        match self {
            Variable::Y1 => r.y[0],
            Variable::Y2 => r.y[1],
            Variable::U1 => r.u[0],
            Variable::U2 => r.u[1],
            Variable::U3 => r.u[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Value,
    Slope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipSpec {
    pub variable: Variable,
    pub kind: Feature,
    #[serde(flatten)]
    pub mf: TriangularMF,
    /// Breakpoints are offsets from the CV operating limit.
    #[serde(default)]
    pub relative_to_limit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub variable: Variable,
    pub kind: Feature,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingState {
    pub name: String,
    /// 1 is the most critical.
    pub rank: u32,
    /// Conjunction of membership labels; empty means always fully active.
    #[serde(default)]
    pub conditions: Vec<Condition>,
    /// Setpoint change per decision cycle at full activation.
    pub consequent: [f64; N_MV],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointBounds {
    pub lower: [f64; N_MV],
    pub upper: [f64; N_MV],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyRuleBase {
    pub activation_threshold: f64,
    pub slope_window: usize,
    pub rate_limits: [f64; N_MV],
    #[serde(default)]
    pub setpoint_bounds: Option<SetpointBounds>,
    #[serde(rename = "mf", default)]
    pub memberships: Vec<MembershipSpec>,
    #[serde(rename = "state")]
    pub states: Vec<OperatingState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointCommand {
    pub delta_u_sp: [f64; N_MV],
    pub state_name: String,
}

/// Fuzzified inputs: one degree per declared membership function, aligned
/// with [`FuzzyRuleBase::memberships`].
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyInputs {
    pub degrees: Vec<f64>,
}

impl FuzzyRuleBase {
    pub fn default_rulebase() -> Self {
        Self::from_toml(DEFAULT_RULEBASE).expect("shipped rulebase is valid")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let rb: Self = toml::from_str(s)?;
        rb.validate()?;
        Ok(rb)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.activation_threshold >= 0.0 && self.activation_threshold < 1.0) {
            return bad("activation_threshold must lie in [0, 1)".into());
        }
        if self.slope_window < 2 {
            return bad("slope_window must be at least 2".into());
        }
        if self.rate_limits.iter().any(|r| !(*r >= 0.0)) {
            return bad("rate limits must be non-negative".into());
        }
        if let Some(b) = &self.setpoint_bounds {
            if (0..N_MV).any(|j| !(b.lower[j] <= b.upper[j])) {
                return bad("setpoint bounds need lower <= upper".into());
            }
        }
        let mut labels = HashSet::new();
        for m in &self.memberships {
            m.mf.validate()?;
            if m.relative_to_limit && (m.kind != Feature::Value || m.variable.cv_index().is_none()) {
                return bad(format!("'{}': only CV values can be limit-relative", m.mf.label));
            }
            if !labels.insert((m.variable, m.kind, m.mf.label.as_str())) {
                return bad(format!("duplicate membership label '{}'", m.mf.label));
            }
        }
        if self.states.is_empty() {
            return bad("rulebase declares no states".into());
        }
        let mut ranks = HashSet::new();
        for s in &self.states {
            if !ranks.insert(s.rank) {
                return bad(format!("duplicate criticality rank {}", s.rank));
            }
            for c in &s.conditions {
                if !labels.contains(&(c.variable, c.kind, c.label.as_str())) {
                    return bad(format!("state '{}' references undeclared label '{}'", s.name, c.label));
                }
            }
        }
        if !self.states.iter().any(|s| s.conditions.is_empty()) {
            return bad("a default state without conditions is required".into());
        }
        Ok(())
    }

    /// Fuzzifies the last record's values and the window slopes. CV value
    /// memberships flagged relative are evaluated on `value - y_lim`.
    pub fn fuzzify_history(&self, history: &[PlantRecord], y_lim: [f64; N_CV]) -> Result<FuzzyInputs> {
        let w = self.slope_window;
        if history.len() < w {
            return Err(Error::WindowTooShort { have: history.len(), need: w });
        }
        let window = &history[history.len() - w..];
        let last = &window[w - 1];
        let degrees = self
            .memberships
            .iter()
            .map(|m| {
                let x = match m.kind {
                    Feature::Value => {
                        let v = m.variable.value(last);
                        match (m.relative_to_limit, m.variable.cv_index()) {
                            (true, Some(c)) => v - y_lim[c],
                            _ => v,
                        }
                    }
                    Feature::Slope => {
                        let s: Vec<f64> = window.iter().map(|r| m.variable.value(r)).collect();
                        slope(&s)?
                    }
                };
                Ok(m.mf.membership(x))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FuzzyInputs { degrees })
    }

    /// Activation degree of every state: minimum over its conditions.
    pub fn activations(&self, inputs: &FuzzyInputs) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| {
                s.conditions
                    .iter()
                    .map(|c| {
                        self.memberships
                            .iter()
                            .position(|m| m.variable == c.variable && m.kind == c.kind && m.mf.label == c.label)
                            .map_or(0.0, |i| inputs.degrees[i])
                    })
                    .fold(1.0, f64::min)
            })
            .collect()
    }
}

/// Chooses the operating state: among states above the activation threshold
/// the lowest rank wins, then the higher degree, then declaration order.
/// Returns the state index and its degree.
pub fn infer_state(rulebase: &FuzzyRuleBase, activations: &[f64]) -> (usize, f64) {
    let mut best: Option<usize> = None;
    for (i, &d) in activations.iter().enumerate() {
        if d <= rulebase.activation_threshold {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let (ri, rj) = (rulebase.states[i].rank, rulebase.states[j].rank);
                if ri < rj || (ri == rj && d > activations[j]) { Some(i) } else { Some(j) }
            }
        };
    }
    let idx = best.unwrap_or_else(|| {
        rulebase.states.iter().position(|s| s.conditions.is_empty()).expect("validated default state")
    });
    (idx, activations[idx])
}

/// Zero-order Sugeno output of one state, clamped to the rate limits.
pub fn defuzzify(rulebase: &FuzzyRuleBase, state: usize, degree: f64) -> SetpointCommand {
    let s = &rulebase.states[state];
    let delta_u_sp = std::array::from_fn(|j| {
        let lim = rulebase.rate_limits[j];
        (degree * s.consequent[j]).clamp(-lim, lim)
    });
    SetpointCommand { delta_u_sp, state_name: s.name.clone() }
}

/// One decision cycle from the recent history (oldest first).
pub fn step(rulebase: &FuzzyRuleBase, history: &[PlantRecord], y_lim: [f64; N_CV]) -> Result<SetpointCommand> {
    let inputs = rulebase.fuzzify_history(history, y_lim)?;
    let act = rulebase.activations(&inputs);
    let (state, degree) = infer_state(rulebase, &act);
    Ok(defuzzify(rulebase, state, degree))
}

/// Adds a command to the current setpoints, honoring the optional bounds.
pub fn apply_command(rulebase: &FuzzyRuleBase, u_sp: [f64; N_MV], cmd: &SetpointCommand) -> [f64; N_MV] {
    std::array::from_fn(|j| {
        let v = u_sp[j] + cmd.delta_u_sp[j];
        match &rulebase.setpoint_bounds {
            Some(b) => v.clamp(b.lower[j], b.upper[j]),
            None => v,
        }
    })
}
