//! `sim`: run experiments, fit calibration sets, check results against targets, plot CSVs.
//!
//! Exit codes: 0 success, 1 target or calibration breach, 2 usage or invalid input,
//! 3 simulation fault.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linksim::calibrate::{self, CalibrateOptions};
use linksim::experiments::plot::{self, PlotKind};
use linksim::experiments::targets::{self, TargetTable};
use linksim::experiments::{self, ExperimentKind, ExperimentSpec, ResultRow};
use linksim::{CalibrationSet, SimError};

#[derive(Parser)]
#[command(name = "sim", version, about = "BLE / ESB link-layer energy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec as JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u32>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Use the hand-derived constants instead of a fitted calibration set.
    #[arg(long)]
    uncalibrated: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Send-to-delivery latency vs payload size.
    Latency(Common),
    /// Time, energy and peak power of one packet event vs payload size.
    SinglePacket(Common),
    /// Average power vs offered throughput.
    Throughput(Common),
    /// Saturated throughput vs link RSSI.
    Rssi(Common),
    /// Wake-to-first-packet time and energy.
    Dutycycle(Common),
    /// Forward and reverse throughput under simultaneous load.
    Bidir(Common),
    /// FIFO-triggered sensor node power vs threshold.
    LoopRecorder(Common),
    /// Fit the free constants to the anchor targets and write a calibration set.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Anchor targets; defaults to the shipped calibration anchors.
        #[arg(long)]
        anchors: Option<PathBuf>,
    },
    /// Compare results against a target table; exit 1 on any breach.
    Report {
        #[command(flatten)]
        common: Common,
        /// Target table; defaults to the shipped one.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Read `<experiment>.csv` from this directory instead of running.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Render a result CSV as SVG.
    Plot {
        csv: PathBuf,
        /// Figure family; defaults to the experiment named in the first row.
        #[arg(long)]
        kind: Option<String>,
        /// SVG path; defaults to the CSV path with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Breach(String),
    Usage(String),
    Fault(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_)
            | SimError::RejectedConfiguration(_)
            | SimError::UnknownExperiment(_)
            | SimError::SchemaMismatch(_)
            | SimError::PayloadTooLarge { .. }
            | SimError::Json(_)
            | SimError::Csv(_)
            | SimError::Io(_) => Failure::Usage(e.to_string()),
            SimError::CalibrationFailed { .. } => Failure::Breach(e.to_string()),
            _ => Failure::Fault(e.to_string()),
        }
    }
}

fn calibration(common: &Common) -> Result<CalibrationSet, Failure> {
    if common.uncalibrated {
        Ok(CalibrationSet::nominal())
    } else {
        Ok(CalibrationSet::from_env()?)
    }
}

fn load_spec(kind: ExperimentKind, common: &Common) -> Result<ExperimentSpec, Failure> {
    let mut spec = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| Failure::Usage(e.to_string()))?;
            if text.contains("\"name\"") && spec.name != kind {
                return Err(Failure::Usage(format!(
                    "config is for '{}' but the subcommand is '{kind}'",
                    spec.name
                )));
            }
            ExperimentSpec { name: kind, ..spec }
        }
        None => ExperimentSpec::new(kind),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(r) = common.reps {
        if r == 0 {
            return Err(Failure::Usage("--reps must be at least 1".into()));
        }
        spec.reps = r;
    }
    spec.validate()?;
    Ok(spec)
}

fn run_experiment(spec: &ExperimentSpec, cal: &CalibrationSet) -> Result<Vec<ResultRow>, Failure> {
    experiments::run(spec, cal).map_err(|e| match Failure::from(e) {
        Failure::Fault(msg) => Failure::Fault(format!(
            "{msg}\nspec: {}\ncalibration: {}",
            serde_json::to_string(spec).unwrap_or_default(),
            experiments::run_tag(cal)
        )),
        other => other,
    })
}

fn write_outputs(dir: &Path, kind: ExperimentKind, rows: &[ResultRow]) -> Result<PathBuf, Failure> {
    let io = |e: std::io::Error| Failure::Usage(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let csv_path = dir.join(format!("{kind}.csv"));
    experiments::write_csv(rows, File::create(&csv_path).map_err(io)?)?;
    let plot_kind: PlotKind = kind.name().parse()?;
    std::fs::write(csv_path.with_extension("svg"), plot::render(rows, plot_kind)).map_err(io)?;
    Ok(csv_path)
}

fn print_summary(rows: &[ResultRow]) {
    for l in experiments::summarize(rows) {
        if l.n > 1 {
            println!(
                "{:<14} {:<14} {}={:<8} {:<24} {:>12.4} ± {:<10.4} {}",
                l.experiment, l.protocol, l.x_name, l.x_value, l.metric, l.mean, l.std, l.unit
            );
        } else {
            println!(
                "{:<14} {:<14} {}={:<8} {:<24} {:>12.4} {}",
                l.experiment, l.protocol, l.x_name, l.x_value, l.metric, l.mean, l.unit
            );
        }
    }
}

fn cmd_run(kind: ExperimentKind, common: &Common) -> Result<(), Failure> {
    let spec = load_spec(kind, common)?;
    let cal = calibration(common)?;
    let rows = run_experiment(&spec, &cal)?;
    let out = spec.out.clone().unwrap_or_else(|| common.out.clone());
    let path = write_outputs(&out, kind, &rows)?;
    print_summary(&rows);
    eprintln!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_calibrate(common: &Common, anchors: Option<&Path>) -> Result<(), Failure> {
    let anchors = match anchors {
        Some(p) => TargetTable::load(p)?.targets,
        None => calibrate::default_anchors(),
    };
    let opts = CalibrateOptions {
        seed: common.seed.unwrap_or(1),
        ..CalibrateOptions::default()
    };
    let fitted = calibrate::calibrate(&CalibrationSet::nominal(), &anchors, &calibrate::default_params(), &opts)?;
    println!("{fitted}");
    let io = |e: std::io::Error| Failure::Usage(format!("{}: {e}", common.out.display()));
    std::fs::create_dir_all(&common.out).map_err(io)?;
    let path = common.out.join("calibration.json");
    fitted.set.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_report(common: &Common, targets_path: Option<&Path>, results: Option<&Path>) -> Result<(), Failure> {
    // Validate before running anything.
    let table = match targets_path {
        Some(p) => TargetTable::load(p)?,
        None => TargetTable::shipped(),
    };
    let mut rows = Vec::new();
    match results {
        Some(dir) => {
            for kind in table.experiments() {
                let path = dir.join(format!("{kind}.csv"));
                if let Ok(f) = File::open(&path) {
                    rows.extend(experiments::read_csv(f)?);
                }
            }
        }
        None => {
            let cal = calibration(common)?;
            for kind in table.experiments() {
                let spec = load_spec(kind, &Common { config: None, ..common.clone() })?;
                rows.extend(run_experiment(&spec, &cal)?);
            }
        }
    }
    let r = targets::report(&rows, &table);
    println!("{r}");
    if r.all_pass() {
        Ok(())
    } else {
        let names: Vec<String> = r.failures().map(|o| o.target.condition()).collect();
        Err(Failure::Breach(format!("out of tolerance: {}", names.join("; "))))
    }
}

fn cmd_plot(csv: &Path, kind: Option<&str>, out: Option<&Path>) -> Result<(), Failure> {
    let f = File::open(csv).map_err(|e| Failure::Usage(format!("{}: {e}", csv.display())))?;
    let rows = experiments::read_csv(f)?;
    let kind: PlotKind = match (kind, rows.first()) {
        (Some(k), _) => k.parse()?,
        (None, Some(r)) => r.experiment.parse()?,
        (None, None) => csv
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .parse()
            .unwrap_or(PlotKind::Latency),
    };
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("svg"));
    std::fs::write(&path, plot::render(&rows, kind)).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Latency(c) => cmd_run(ExperimentKind::Latency, c),
        Command::SinglePacket(c) => cmd_run(ExperimentKind::SinglePacket, c),
        Command::Throughput(c) => cmd_run(ExperimentKind::Throughput, c),
        Command::Rssi(c) => cmd_run(ExperimentKind::Rssi, c),
        Command::Dutycycle(c) => cmd_run(ExperimentKind::Dutycycle, c),
        Command::Bidir(c) => cmd_run(ExperimentKind::Bidir, c),
        Command::LoopRecorder(c) => cmd_run(ExperimentKind::LoopRecorder, c),
        Command::Calibrate { common, anchors } => cmd_calibrate(common, anchors.as_deref()),
        Command::Report {
            common,
            targets,
            results,
        } => cmd_report(common, targets.as_deref(), results.as_deref()),
        Command::Plot { csv, kind, out } => cmd_plot(csv, kind.as_deref(), out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Breach(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Fault(msg)) => {
            eprintln!("simulation fault: {msg}");
            ExitCode::from(3)
        }
    }
}
