//! Reference values and the pass/fail comparison against simulated rows.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean, std_dev, ExperimentKind, ResultRow};
use crate::error::{Result, SimError};

/// How a group of matching rows collapses to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    #[default]
    Mean,
    Std,
    Min,
    Max,
}

impl Stat {
    fn apply(self, xs: &[f64]) -> f64 {
        match self {
            Stat::Mean => mean(xs),
            Stat::Std => std_dev(xs),
            Stat::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
            Stat::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// |sim − ref| within tolerance.
    #[default]
    Within,
    /// sim ≥ ref − tolerance.
    AtLeast,
    /// sim ≤ ref + tolerance.
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub experiment: String,
    pub protocol: String,
    pub metric: String,
    /// Restricts the match to one sweep point; `None` pools every point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_value: Option<f64>,
    /// Inclusive sweep range, for targets that hold over a band of points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default)]
    pub stat: Stat,
    #[serde(default)]
    pub comparison: Comparison,
    pub value: f64,
    /// Relative tolerance as a fraction of `value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    /// Absolute tolerance in the metric's unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    pub source: String,
}

impl Target {
    pub fn tolerance(&self) -> f64 {
        self.abs_tol.unwrap_or(0.0) + self.rel_tol.unwrap_or(0.0) * self.value.abs()
    }

    pub fn condition(&self) -> String {
        let mut s = format!("{} {} {}", self.experiment, self.protocol, self.metric);
        if let Some(x) = self.x_value {
            s.push_str(&format!(" @{x}"));
        }
        if self.x_min.is_some() || self.x_max.is_some() {
            let lo = self.x_min.map_or(String::new(), |x| x.to_string());
            let hi = self.x_max.map_or(String::new(), |x| x.to_string());
            s.push_str(&format!(" [{lo}, {hi}]"));
        }
        if self.stat != Stat::Mean {
            s.push_str(&format!(" ({:?})", self.stat).to_lowercase());
        }
        s
    }

    fn matches(&self, r: &ResultRow) -> bool {
        r.experiment == self.experiment
            && r.protocol == self.protocol
            && r.metric == self.metric
            && self.x_value.is_none_or(|x| r.x_value == x)
            && self.x_min.is_none_or(|x| r.x_value >= x)
            && self.x_max.is_none_or(|x| r.x_value <= x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTable {
    pub targets: Vec<Target>,
}

const SHIPPED: &str = include_str!("../../data/targets.json");

impl TargetTable {
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("shipped targets.json is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: TargetTable = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rejects unknown experiment names and malformed tolerances before anything runs.
    pub fn validate(&self) -> Result<()> {
        for t in &self.targets {
            let kind: ExperimentKind = t.experiment.parse()?;
            if !ExperimentKind::RUNNABLE.contains(&kind) {
                return Err(SimError::UnknownExperiment(t.experiment.clone()));
            }
            if t.rel_tol.is_none() && t.abs_tol.is_none() {
                return Err(SimError::InvalidConfig(format!("target '{}' has no tolerance", t.condition())));
            }
            if t.tolerance() < 0.0 || !t.value.is_finite() || t.source.trim().is_empty() {
                return Err(SimError::InvalidConfig(format!(
                    "target '{}' needs a finite value, a non-negative tolerance and a source",
                    t.condition()
                )));
            }
        }
        Ok(())
    }

    /// Experiments the table refers to, in first-seen order.
    pub fn experiments(&self) -> Vec<ExperimentKind> {
        let mut out = Vec::new();
        for t in &self.targets {
            if let Ok(k) = t.experiment.parse::<ExperimentKind>() {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetOutcome {
    pub target: Target,
    /// `None` when no row matched.
    pub simulated: Option<f64>,
    pub pass: bool,
}

impl TargetOutcome {
    pub fn residual(&self) -> Option<f64> {
        self.simulated.map(|s| s - self.target.value)
    }

    pub fn relative_residual(&self) -> Option<f64> {
        let r = self.residual()?;
        (self.target.value != 0.0).then(|| r / self.target.value.abs())
    }
}

impl fmt::Display for TargetOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match self.simulated {
            None => write!(f, "{verdict} {}: not run", self.target.condition()),
            Some(s) => {
                write!(
                    f,
                    "{verdict} {}: sim {s:.4} ref {:.4} tol {:.4}",
                    self.target.condition(),
                    self.target.value,
                    self.target.tolerance()
                )?;
                if let Some(r) = self.relative_residual() {
                    write!(f, " ({:+.1} %)", r * 100.0)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub outcomes: Vec<TargetOutcome>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TargetOutcome> {
        self.outcomes.iter().filter(|o| !o.pass)
    }

    /// 0 when every target passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.all_pass())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            writeln!(f, "{o}")?;
        }
        let passed = self.outcomes.iter().filter(|o| o.pass).count();
        write!(f, "{passed}/{} targets within tolerance", self.outcomes.len())
    }
}

pub fn report(rows: &[ResultRow], table: &TargetTable) -> Report {
    let outcomes = table
        .targets
        .iter()
        .map(|t| {
            let vals: Vec<f64> = rows.iter().filter(|r| t.matches(r)).map(|r| r.value).collect();
            let simulated = (!vals.is_empty()).then(|| t.stat.apply(&vals));
            let pass = simulated.is_some_and(|s| {
                let tol = t.tolerance();
                match t.comparison {
                    Comparison::Within => (s - t.value).abs() <= tol,
                    Comparison::AtLeast => s >= t.value - tol,
                    Comparison::AtMost => s <= t.value + tol,
                }
            });
            TargetOutcome {
                target: t.clone(),
                simulated,
                pass,
            }
        })
        .collect();
    Report { outcomes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(metric: &str, x: f64, v: f64) -> ResultRow {
        ResultRow {
            experiment: "latency".into(),
            protocol: "ESB".into(),
            x_name: "payload_bytes".into(),
            x_value: x,
            metric: metric.into(),
            value: v,
            unit: "us".into(),
            seed: 1,
            calib_hash: "x@0".into(),
        }
    }

    fn target(v: f64) -> Target {
        Target {
            experiment: "latency".into(),
            protocol: "ESB".into(),
            metric: "latency".into(),
            x_value: Some(244.0),
            x_min: None,
            x_max: None,
            stat: Stat::Mean,
            comparison: Comparison::Within,
            value: v,
            rel_tol: Some(0.1),
            abs_tol: None,
            source: "test".into(),
        }
    }

    #[test]
    fn within_tolerance_passes() {
        let t = TargetTable { targets: vec![target(680.0)] };
        let r = report(&[row("latency", 244.0, 700.0)], &t);
        assert!(r.all_pass());
        assert_eq!(r.exit_code(), 0);
    }

    #[test]
    fn breach_fails_and_is_named() {
        let t = TargetTable {
            targets: vec![target(680.0), target(500.0)],
        };
        let r = report(&[row("latency", 244.0, 700.0)], &t);
        assert_eq!(r.exit_code(), 1);
        let text = r.to_string();
        assert!(text.contains("FAIL latency ESB latency @244"));
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn missing_rows_fail_as_not_run() {
        let t = TargetTable { targets: vec![target(680.0)] };
        let r = report(&[row("latency", 2.0, 300.0)], &t);
        assert!(!r.all_pass());
        assert!(r.to_string().contains("not run"));
    }

    #[test]
    fn unknown_experiment_rejected() {
        let mut t = target(1.0);
        t.experiment = "warp-drive".into();
        let err = TargetTable { targets: vec![t] }.validate().unwrap_err();
        assert!(matches!(err, SimError::UnknownExperiment(ref s) if s == "warp-drive"));
    }

    #[test]
    fn one_sided_comparisons() {
        let mut t = target(1.7);
        t.stat = Stat::Std;
        t.comparison = Comparison::AtLeast;
        t.x_value = None;
        t.rel_tol = None;
        t.abs_tol = Some(0.0);
        let rows = [row("latency", 1.0, 1.0), row("latency", 1.0, 5.0)];
        assert!(report(&rows, &TargetTable { targets: vec![t.clone()] }).all_pass());
        t.comparison = Comparison::AtMost;
        assert!(!report(&rows, &TargetTable { targets: vec![t] }).all_pass());
    }

    #[test]
    fn shipped_table_loads() {
        let t = TargetTable::shipped();
        assert!(t.targets.len() > 20);
        assert_eq!(t.experiments().len(), 7);
    }
}
