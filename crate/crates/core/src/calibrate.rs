//! Fits free calibration constants to reference anchors by coordinate descent.
//!
//! Anchors are ordinary [`Target`]s. Each evaluation reruns the experiments the
//! anchors name and scores the set by the worst anchor's residual divided by its
//! tolerance. Parameters are visited in a fixed order with a shrinking
//! multiplicative step, so the fit is deterministic.

use std::fmt;

use crate::calibration::CalibrationSet;
use crate::error::{Result, SimError};
use crate::experiments::targets::{report, Report, Target, TargetTable};
use crate::experiments::{self, ExperimentKind, ExperimentSpec};

/// A tunable constant with a lower bound. Microsecond fields round to integers.
#[derive(Clone, Copy)]
pub struct FreeParam {
    pub name: &'static str,
    pub get: fn(&CalibrationSet) -> f64,
    pub set: fn(&mut CalibrationSet, f64),
    pub min: f64,
}

impl fmt::Debug for FreeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FreeParam").field("name", &self.name).finish()
    }
}

macro_rules! us_param {
    ($name:literal, $($field:ident).+, $min:expr) => {
        FreeParam {
            name: $name,
            get: |c| c.$($field).+ as f64,
            set: |c, v| c.$($field).+ = v.round() as u64,
            min: $min,
        }
    };
}

macro_rules! mw_param {
    ($name:literal, $($field:ident).+, $min:expr) => {
        FreeParam {
            name: $name,
            get: |c| c.$($field).+,
            set: |c, v| c.$($field).+ = v,
            min: $min,
        }
    };
}

/// Constants the default fit may move. Everything else is held at its nominal value.
pub fn default_params() -> Vec<FreeParam> {
    vec![
        us_param!("ble.init_cpu_us", ble.init_cpu_us, 1_000.0),
        us_param!("ble.host_connect_delay_us", ble.host_connect_delay_us, 0.0),
        us_param!("ble.adv_event_cpu_us", ble.adv_event_cpu_us, 100.0),
        us_param!("ble.conn_setup_cpu_us", ble.conn_setup_cpu_us, 100.0),
        us_param!("esb.init_cpu_us", esb.init_cpu_us, 100.0),
        us_param!("esb.init_wait_us", esb.init_wait_us, 100.0),
        mw_param!("esb.power.radio_ramp_mw", esb.power.radio_ramp_mw, 0.05),
        mw_param!("ble.power.radio_ramp_mw", ble.power.radio_ramp_mw, 0.05),
    ]
}

/// Anchors used when none are given: the shipped targets of the experiments that
/// depend on the fitted constants.
pub fn default_anchors() -> Vec<Target> {
    TargetTable::shipped()
        .targets
        .into_iter()
        .filter(|t| matches!(t.experiment.as_str(), "single-packet" | "throughput" | "dutycycle"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrateOptions {
    pub max_rounds: u32,
    /// Initial relative step.
    pub step: f64,
    /// Stop once the step shrinks below this.
    pub min_step: f64,
    pub seed: u64,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        CalibrateOptions {
            max_rounds: 40,
            step: 0.2,
            min_step: 0.002,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub set: CalibrationSet,
    pub anchors: Report,
    /// (parameter, start value, fitted value)
    pub moves: Vec<(&'static str, f64, f64)>,
    pub score: f64,
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "calibration {} (score {:.3})", self.set.hash(), self.score)?;
        for (name, from, to) in &self.moves {
            writeln!(f, "  {name}: {from:.4} -> {to:.4}")?;
        }
        write!(f, "{}", self.anchors)
    }
}

fn evaluate(set: &CalibrationSet, anchors: &[Target], opts: &CalibrateOptions) -> Result<Report> {
    let table = TargetTable {
        targets: anchors.to_vec(),
    };
    let mut rows = Vec::new();
    for kind in table.experiments() {
        let spec = ExperimentSpec {
            seed: opts.seed,
            ..ExperimentSpec::new(kind)
        };
        rows.extend(experiments::run(&spec, set)?);
    }
    Ok(report(&rows, &table))
}

/// Worst |residual| / tolerance; unmatched anchors count as infinitely bad.
fn score(r: &Report) -> f64 {
    r.outcomes
        .iter()
        .map(|o| match o.residual() {
            None => f64::INFINITY,
            Some(res) => {
                let tol = o.target.tolerance().max(1e-9);
                if o.pass {
                    // Passing one-sided anchors contribute nothing.
                    match o.target.comparison {
                        crate::experiments::targets::Comparison::Within => res.abs() / tol,
                        _ => 0.0,
                    }
                } else {
                    1.0 + res.abs() / tol
                }
            }
        })
        .fold(0.0, f64::max)
}

/// Fits `params` of `base` to `anchors`. An empty anchor list returns `base` unchanged.
pub fn calibrate(
    base: &CalibrationSet,
    anchors: &[Target],
    params: &[FreeParam],
    opts: &CalibrateOptions,
) -> Result<CalibrationReport> {
    TargetTable {
        targets: anchors.to_vec(),
    }
    .validate()?;
    let mut set = base.clone();
    let mut current = evaluate(&set, anchors, opts)?;
    let mut best = score(&current);
    let mut step = opts.step;
    if !anchors.is_empty() {
        for _ in 0..opts.max_rounds {
            if step < opts.min_step || best == 0.0 {
                break;
            }
            let mut improved = false;
            for p in params {
                for dir in [1.0, -1.0] {
                    let v = (p.get)(&set);
                    let next = (v * (1.0 + dir * step)).max(p.min);
                    let mut trial = set.clone();
                    (p.set)(&mut trial, next);
                    if (p.get)(&trial) == v {
                        continue;
                    }
                    let r = evaluate(&trial, anchors, opts)?;
                    let s = score(&r);
                    if s < best {
                        best = s;
                        set = trial;
                        current = r;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
    }
    let moves = params
        .iter()
        .filter(|p| (p.get)(base) != (p.get)(&set))
        .map(|p| (p.name, (p.get)(base), (p.get)(&set)))
        .collect();
    let out = CalibrationReport {
        set,
        anchors: current,
        moves,
        score: best,
    };
    if let Some(worst) = out.anchors.failures().max_by(|a, b| {
        let ra = a.relative_residual().unwrap_or(f64::INFINITY).abs();
        let rb = b.relative_residual().unwrap_or(f64::INFINITY).abs();
        ra.total_cmp(&rb)
    }) {
        return Err(SimError::CalibrationFailed {
            anchor: worst.target.condition(),
            residual: worst.relative_residual().unwrap_or(f64::INFINITY),
            tolerance: worst.target.tolerance() / worst.target.value.abs().max(1e-12),
        });
    }
    Ok(out)
}

/// Experiments a set of anchors will run.
pub fn anchor_experiments(anchors: &[Target]) -> Vec<ExperimentKind> {
    TargetTable {
        targets: anchors.to_vec(),
    }
    .experiments()
}
