//! Experiment definitions, result rows and the runners behind each CLI subcommand.

pub mod measure;
pub mod plot;
mod runners;
pub mod stats;
pub mod stream;
pub mod targets;

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationSet;
use crate::error::{Result, SimError};
use crate::phy::Protocol;
use crate::sensor::CommMode;

pub use stats::{fit_slope, mean, std_dev, LinearFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Latency,
    SinglePacket,
    Throughput,
    Rssi,
    Dutycycle,
    Bidir,
    LoopRecorder,
    Calibrate,
    Report,
}

impl ExperimentKind {
    pub const RUNNABLE: [ExperimentKind; 7] = [
        ExperimentKind::Latency,
        ExperimentKind::SinglePacket,
        ExperimentKind::Throughput,
        ExperimentKind::Rssi,
        ExperimentKind::Dutycycle,
        ExperimentKind::Bidir,
        ExperimentKind::LoopRecorder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Latency => "latency",
            ExperimentKind::SinglePacket => "single-packet",
            ExperimentKind::Throughput => "throughput",
            ExperimentKind::Rssi => "rssi",
            ExperimentKind::Dutycycle => "dutycycle",
            ExperimentKind::Bidir => "bidir",
            ExperimentKind::LoopRecorder => "loop-recorder",
            ExperimentKind::Calibrate => "calibrate",
            ExperimentKind::Report => "report",
        }
    }

    /// Repetitions used when an experiment spec leaves them unset.
    pub fn default_reps(self) -> u32 {
        match self {
            ExperimentKind::Latency | ExperimentKind::Dutycycle => 100,
            _ => 1,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        [
            ExperimentKind::Latency,
            ExperimentKind::SinglePacket,
            ExperimentKind::Throughput,
            ExperimentKind::Rssi,
            ExperimentKind::Dutycycle,
            ExperimentKind::Bidir,
            ExperimentKind::LoopRecorder,
            ExperimentKind::Calibrate,
            ExperimentKind::Report,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| SimError::UnknownExperiment(s.to_string()))
    }
}

/// One experiment run. Empty lists and zero values mean "use the default for this kind".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: ExperimentKind,
    pub protocols: Vec<Protocol>,
    /// Independent variable: payload bytes, offered kbps (negative = saturate),
    /// RSSI dBm, or FIFO threshold, depending on the experiment.
    pub sweep: Vec<f64>,
    pub seed: u64,
    pub reps: u32,
    /// Measurement window for streaming runs, or scenario length for the loop recorder.
    pub duration_s: f64,
    /// Receiver ACK payload sizes for the ESB bidirectional run.
    pub ack_sizes: Vec<usize>,
    /// Fixed link RSSI for runs that do not sweep it; `None` means a clean channel.
    pub rssi_dbm: Option<f64>,
    pub modes: Vec<CommMode>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: ExperimentKind::Latency,
            protocols: Vec::new(),
            sweep: Vec::new(),
            seed: 1,
            reps: 0,
            duration_s: 0.0,
            ack_sizes: Vec::new(),
            rssi_dbm: None,
            modes: Vec::new(),
            out: None,
        }
    }
}

impl ExperimentSpec {
    pub fn new(name: ExperimentKind) -> Self {
        ExperimentSpec {
            name,
            ..Self::default()
        }
    }

    pub fn protocols(&self) -> Vec<Protocol> {
        if self.protocols.is_empty() {
            vec![Protocol::Ble, Protocol::Esb]
        } else {
            self.protocols.clone()
        }
    }

    pub fn reps(&self) -> u32 {
        if self.reps == 0 {
            self.name.default_reps()
        } else {
            self.reps
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        let base = self.seed;
        (0..u64::from(self.reps())).map(move |i| base.wrapping_add(i))
    }

    pub fn duration_or(&self, default_s: f64) -> f64 {
        if self.duration_s > 0.0 {
            self.duration_s
        } else {
            default_s
        }
    }

    pub fn sweep_or(&self, default: &[f64]) -> Vec<f64> {
        if self.sweep.is_empty() {
            default.to_vec()
        } else {
            self.sweep.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.name, ExperimentKind::Calibrate | ExperimentKind::Report) {
            return Ok(());
        }
        if self.duration_s < 0.0 || !self.duration_s.is_finite() {
            return Err(SimError::InvalidConfig("duration_s must be a finite non-negative number".into()));
        }
        let max_payload = self.protocols().iter().map(|p| p.max_payload()).min().unwrap_or(0);
        for &x in &self.sweep {
            let ok = match self.name {
                ExperimentKind::Latency | ExperimentKind::SinglePacket => {
                    x >= 0.0 && x.fract() == 0.0 && x as usize <= max_payload
                }
                ExperimentKind::Rssi => (-120.0..=0.0).contains(&x),
                ExperimentKind::LoopRecorder => x.fract() == 0.0 && (1.0..=32.0).contains(&x),
                _ => x.is_finite(),
            };
            if !ok {
                return Err(SimError::InvalidConfig(format!(
                    "sweep value {x} is outside the limits of the {} experiment",
                    self.name
                )));
            }
        }
        if self.ack_sizes.iter().any(|&a| a > crate::phy::ESB_MAX_PAYLOAD) {
            return Err(SimError::InvalidConfig("ACK payload above 252 bytes".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One measured or derived value. Every row carries the calibration hash and
/// simulator version that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub protocol: String,
    pub x_name: String,
    pub x_value: f64,
    pub metric: String,
    pub value: f64,
    pub unit: String,
    pub seed: u64,
    pub calib_hash: String,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "experiment",
    "protocol",
    "x_name",
    "x_value",
    "metric",
    "value",
    "unit",
    "seed",
    "calib_hash",
];

/// Tag written into every row: calibration hash plus simulator version.
pub fn run_tag(cal: &CalibrationSet) -> String {
    format!("{}@{}", cal.hash(), env!("CARGO_PKG_VERSION"))
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads result rows, checking the header first so a wrong file names what is missing.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let missing: Vec<String> = CSV_COLUMNS
        .iter()
        .filter(|c| !headers.iter().any(|h| h == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(SimError::SchemaMismatch(missing));
    }
    r.deserialize().map(|row| row.map_err(SimError::from)).collect()
}

/// Mean and spread of one (protocol, x, metric) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryLine {
    pub experiment: String,
    pub protocol: String,
    pub x_name: String,
    pub x_value: f64,
    pub metric: String,
    pub unit: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Groups rows in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryLine> {
    let mut keys: Vec<(String, String, String, u64, String)> = Vec::new();
    let mut groups: Vec<(SummaryLine, Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (
            r.experiment.clone(),
            r.protocol.clone(),
            r.x_name.clone(),
            r.x_value.to_bits(),
            r.metric.clone(),
        );
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                groups.push((
                    SummaryLine {
                        experiment: r.experiment.clone(),
                        protocol: r.protocol.clone(),
                        x_name: r.x_name.clone(),
                        x_value: r.x_value,
                        metric: r.metric.clone(),
                        unit: r.unit.clone(),
                        n: 0,
                        mean: 0.0,
                        std: 0.0,
                    },
                    Vec::new(),
                ));
                groups.len() - 1
            }
        };
        groups[idx].1.push(r.value);
    }
    groups
        .into_iter()
        .map(|(mut line, vals)| {
            line.n = vals.len();
            line.mean = mean(&vals);
            line.std = std_dev(&vals);
            line
        })
        .collect()
}

/// Runs one experiment and returns its rows in deterministic sweep order.
pub fn run(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    match spec.name {
        ExperimentKind::Latency => runners::latency(spec, cal),
        ExperimentKind::SinglePacket => runners::single_packet(spec, cal),
        ExperimentKind::Throughput => runners::throughput(spec, cal),
        ExperimentKind::Rssi => runners::rssi(spec, cal),
        ExperimentKind::Dutycycle => runners::dutycycle(spec, cal),
        ExperimentKind::Bidir => runners::bidir(spec, cal),
        ExperimentKind::LoopRecorder => runners::loop_recorder(spec, cal),
        k @ (ExperimentKind::Calibrate | ExperimentKind::Report) => Err(SimError::InvalidConfig(format!(
            "{k} is not a simulation experiment"
        ))),
    }
}
