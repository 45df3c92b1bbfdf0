use crate::ble::BleConfig;
use crate::calibration::CalibrationSet;
use crate::error::Result;
use crate::esb::EsbConfig;
use crate::phy::{ChannelState, Protocol, BLE_MAX_APP_PAYLOAD, ESB_MAX_PAYLOAD};
use crate::sensor::{self, CommMode, Scenario};

use super::measure;
use super::stats::fit_slope;
use super::stream::{ble_stream, esb_stream, Load, StreamResult, StreamWindow};
use super::{run_tag, ExperimentKind, ExperimentSpec, ResultRow};

pub const PAYLOADS: [f64; 6] = [2.0, 12.0, 66.0, 132.0, 198.0, 244.0];
pub const BIDIR_ACK_SIZES: [usize; 3] = [2, 132, 252];

/// Offered-load sweeps in kbps; a negative entry means "saturate".
pub const BLE_RATES: [f64; 12] = [
    0.0, 100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0, -1.0,
];
pub const ESB_RATES: [f64; 13] = [
    0.0, 200.0, 400.0, 600.0, 800.0, 1000.0, 1200.0, 1400.0, 1600.0, 1800.0, 2000.0, 2200.0, -1.0,
];

struct Rows {
    experiment: ExperimentKind,
    tag: String,
    rows: Vec<ResultRow>,
}

impl Rows {
    fn new(experiment: ExperimentKind, cal: &CalibrationSet) -> Self {
        Rows {
            experiment,
            tag: run_tag(cal),
            rows: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, protocol: &str, x_name: &str, x: f64, metric: &str, value: f64, unit: &str, seed: u64) {
        self.rows.push(ResultRow {
            experiment: self.experiment.name().to_string(),
            protocol: protocol.to_string(),
            x_name: x_name.to_string(),
            x_value: x,
            metric: metric.to_string(),
            value,
            unit: unit.to_string(),
            seed,
            calib_hash: self.tag.clone(),
        });
    }
}

fn load_for(rate: f64) -> Load {
    if rate < 0.0 {
        Load::Saturate
    } else if rate == 0.0 {
        Load::Off
    } else {
        Load::Rate(rate)
    }
}

fn channel(spec: &ExperimentSpec, cal: &CalibrationSet, seed: u64) -> ChannelState {
    match spec.rssi_dbm {
        Some(r) => ChannelState::rssi(r, cal.per_curves.clone(), seed),
        None => ChannelState::lossless(),
    }
}

pub fn latency(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new(spec.name, cal);
    for proto in spec.protocols() {
        for x in spec.sweep_or(&PAYLOADS) {
            let payload = x as usize;
            match proto {
                // A clean ESB transaction has no random component.
                Protocol::Esb => {
                    let lat = measure::esb_latency(cal, payload)?;
                    rows.push("ESB", "payload_bytes", x, "latency", lat.0 as f64, "us", spec.seed);
                }
                Protocol::Ble => {
                    for seed in spec.seeds() {
                        let lat = measure::ble_latency_sample(cal, payload, seed)?;
                        rows.push("BLE", "payload_bytes", x, "latency", lat.0 as f64, "us", seed);
                    }
                }
            }
        }
    }
    Ok(rows.rows)
}

pub fn single_packet(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new(spec.name, cal);
    let mut at_max: [Option<f64>; 2] = [None, None];
    for proto in spec.protocols() {
        for x in spec.sweep_or(&PAYLOADS) {
            let payload = x as usize;
            let ev = match proto {
                Protocol::Ble => measure::ble_single_packet(cal, payload)?,
                Protocol::Esb => measure::esb_single_packet(cal, payload)?,
            };
            rows.push(proto.name(), "payload_bytes", x, "event_time", ev.time_us as f64, "us", spec.seed);
            rows.push(proto.name(), "payload_bytes", x, "event_energy", ev.energy_uj, "uJ", spec.seed);
            rows.push(proto.name(), "payload_bytes", x, "peak_power", ev.peak_mw, "mW", spec.seed);
            if payload == BLE_MAX_APP_PAYLOAD {
                at_max[usize::from(proto == Protocol::Esb)] = Some(ev.energy_uj);
            }
        }
    }
    if let [Some(ble), Some(esb)] = at_max {
        rows.push("BLE/ESB", "payload_bytes", 244.0, "energy_ratio", ble / esb, "ratio", spec.seed);
    }
    Ok(rows.rows)
}

#[allow(clippy::too_many_arguments)]
fn stream_point(
    proto: Protocol,
    spec: &ExperimentSpec,
    cal: &CalibrationSet,
    forward: Load,
    reverse: Load,
    ack_payload: usize,
    window: StreamWindow,
    seed: u64,
) -> Result<StreamResult> {
    match proto {
        Protocol::Ble => ble_stream(
            cal,
            &BleConfig::default(),
            channel(spec, cal, seed),
            BLE_MAX_APP_PAYLOAD,
            forward,
            reverse,
            window,
            seed,
        ),
        Protocol::Esb => esb_stream(
            cal,
            &EsbConfig::default(),
            channel(spec, cal, seed),
            ESB_MAX_PAYLOAD,
            ack_payload,
            forward,
            window,
        ),
    }
}

pub fn throughput(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new(spec.name, cal);
    let window = StreamWindow::seconds(0.1, spec.duration_or(1.0));
    for proto in spec.protocols() {
        let default: &[f64] = match proto {
            Protocol::Ble => &BLE_RATES,
            Protocol::Esb => &ESB_RATES,
        };
        let mut tput = Vec::new();
        let mut power = Vec::new();
        let mut standby = None;
        let mut max = 0.0f64;
        for rate in spec.sweep_or(default) {
            let r = stream_point(proto, spec, cal, load_for(rate), Load::Off, 0, window, spec.seed)?;
            rows.push(proto.name(), "offered_kbps", rate, "throughput", r.forward_kbps, "kbps", spec.seed);
            rows.push(proto.name(), "offered_kbps", rate, "avg_power", r.avg_power_mw, "mW", spec.seed);
            rows.push(proto.name(), "offered_kbps", rate, "peak_power", r.peak_power_mw, "mW", spec.seed);
            if rate == 0.0 {
                standby = Some(r.avg_power_mw);
            }
            max = max.max(r.forward_kbps);
            tput.push(r.forward_kbps);
            power.push(r.avg_power_mw);
        }
        if let Some(p) = standby {
            rows.push(proto.name(), "fit", 0.0, "standby_power", p, "mW", spec.seed);
        }
        rows.push(proto.name(), "fit", 0.0, "max_throughput", max, "kbps", spec.seed);
        if let Ok(fit) = fit_slope(&tput, &power) {
            rows.push(proto.name(), "fit", 0.0, "power_slope", fit.slope, "mW/kbps", spec.seed);
            rows.push(proto.name(), "fit", 0.0, "power_slope_r2", fit.r_squared, "1", spec.seed);
        }
    }
    Ok(rows.rows)
}

/// RSSI sweep from -90 to -30 dBm in 1 dB steps.
pub fn default_rssi_sweep() -> Vec<f64> {
    (0..=60).map(|i| -90.0 + f64::from(i)).collect()
}

pub fn rssi(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new(spec.name, cal);
    let window = StreamWindow::seconds(0.1, spec.duration_or(2.0));
    let sweep = if spec.sweep.is_empty() {
        default_rssi_sweep()
    } else {
        spec.sweep.clone()
    };
    for proto in spec.protocols() {
        let mut points = Vec::new();
        for &r in &sweep {
            let s = ExperimentSpec {
                rssi_dbm: Some(r),
                ..spec.clone()
            };
            let p = stream_point(proto, &s, cal, Load::Saturate, Load::Off, 0, window, spec.seed)?;
            points.push((r, p.forward_kbps));
        }
        let max = points.iter().map(|p| p.1).fold(0.0, f64::max);
        for (r, t) in points {
            rows.push(proto.name(), "rssi_dbm", r, "throughput", t, "kbps", spec.seed);
            let norm = if max > 0.0 { t / max } else { 0.0 };
            rows.push(proto.name(), "rssi_dbm", r, "normalized_throughput", norm, "1", spec.seed);
        }
    }
    Ok(rows.rows)
}

pub fn dutycycle(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new(spec.name, cal);
    for proto in spec.protocols() {
        for seed in spec.seeds() {
            let w = match proto {
                Protocol::Ble => measure::ble_warmup(cal, seed)?,
                // Deterministic, but repeated so both protocols have one row per seed.
                Protocol::Esb => measure::esb_warmup(cal)?,
            };
            let x = seed as f64;
            rows.push(proto.name(), "seed", x, "warmup_time", w.time_us as f64 / 1e3, "ms", seed);
            rows.push(proto.name(), "seed", x, "warmup_energy", w.energy_uj, "uJ", seed);
            for (phase, e) in &w.phases {
                rows.push(proto.name(), "seed", x, &format!("{phase}_energy"), *e, "uJ", seed);
            }
            rows.push(proto.name(), "seed", x, "cycle_avg_power", w.cycle_avg_mw, "mW", seed);
        }
    }
    Ok(rows.rows)
}

pub fn bidir(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new(spec.name, cal);
    let window = StreamWindow::seconds(0.1, spec.duration_or(1.0));
    let ack_sizes = if spec.ack_sizes.is_empty() {
        BIDIR_ACK_SIZES.to_vec()
    } else {
        spec.ack_sizes.clone()
    };
    for proto in spec.protocols() {
        let cases: Vec<(String, usize)> = match proto {
            Protocol::Ble => vec![("BLE".to_string(), 0)],
            Protocol::Esb => ack_sizes.iter().map(|a| (format!("ESB/ack={a}"), *a)).collect(),
        };
        let default: &[f64] = match proto {
            Protocol::Ble => &BLE_RATES,
            Protocol::Esb => &ESB_RATES,
        };
        for (label, ack) in cases {
            let mut fwd = Vec::new();
            let mut rev = Vec::new();
            let mut best_aggregate = 0.0f64;
            for rate in spec.sweep_or(default) {
                let r = stream_point(proto, spec, cal, load_for(rate), Load::Saturate, ack, window, spec.seed)?;
                rows.push(&label, "offered_kbps", rate, "forward_throughput", r.forward_kbps, "kbps", spec.seed);
                rows.push(&label, "offered_kbps", rate, "reverse_throughput", r.reverse_kbps, "kbps", spec.seed);
                rows.push(&label, "offered_kbps", rate, "aggregate_throughput", r.aggregate_kbps(), "kbps", spec.seed);
                best_aggregate = best_aggregate.max(r.aggregate_kbps());
                fwd.push(r.forward_kbps);
                rev.push(r.reverse_kbps);
            }
            if let Ok(fit) = fit_slope(&fwd, &rev) {
                rows.push(&label, "fit", 0.0, "reverse_slope", fit.slope, "1", spec.seed);
            }
            rows.push(&label, "fit", 0.0, "max_aggregate", best_aggregate, "kbps", spec.seed);
        }
    }
    Ok(rows.rows)
}

pub fn loop_recorder(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    let mut rows = Rows::new(spec.name, cal);
    let modes = if spec.modes.is_empty() {
        CommMode::MEASURED.to_vec()
    } else {
        spec.modes.clone()
    };
    let thresholds: Vec<f64> = (1..=32).map(f64::from).collect();
    for mode in modes {
        for x in spec.sweep_or(&thresholds) {
            let threshold = x as usize;
            let scn = Scenario {
                mode,
                threshold,
                duration_s: spec.duration_or(60.0),
                ..Scenario::default()
            };
            let feasible = sensor::validate(mode, threshold).is_ok();
            let r = sensor::run_scenario_unchecked(&scn, cal, spec.seed)?.result;
            let m = mode.name();
            rows.push(m, "threshold", x, "mcu_power", r.mcu_avg_mw, "mW", spec.seed);
            rows.push(m, "threshold", x, "sensor_power", r.sensor_avg_mw, "mW", spec.seed);
            rows.push(m, "threshold", x, "total_power", r.mcu_avg_mw + r.sensor_avg_mw, "mW", spec.seed);
            rows.push(m, "threshold", x, "overflow_events", r.overflow_events as f64, "count", spec.seed);
            rows.push(m, "threshold", x, "missed_interrupts", r.missed_interrupts as f64, "count", spec.seed);
            rows.push(m, "threshold", x, "completeness", r.completeness, "1", spec.seed);
            rows.push(m, "threshold", x, "feasible", f64::from(u8::from(feasible)), "bool", spec.seed);
        }
    }
    Ok(rows.rows)
}
