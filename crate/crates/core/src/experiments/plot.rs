//! Deterministic SVG line charts of result CSVs.
//!
//! Output depends only on the rows: fixed canvas, fixed palette, no timestamps,
//! numbers printed with fixed precision.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{summarize, ResultRow};
use crate::error::{Result, SimError};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One chart per figure family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Latency,
    SinglePacket,
    Throughput,
    Rssi,
    Dutycycle,
    Bidir,
    LoopRecorder,
}

impl PlotKind {
    pub const ALL: [PlotKind; 7] = [
        PlotKind::Latency,
        PlotKind::SinglePacket,
        PlotKind::Throughput,
        PlotKind::Rssi,
        PlotKind::Dutycycle,
        PlotKind::Bidir,
        PlotKind::LoopRecorder,
    ];

    pub fn experiment(self) -> &'static str {
        match self {
            PlotKind::Latency => "latency",
            PlotKind::SinglePacket => "single-packet",
            PlotKind::Throughput => "throughput",
            PlotKind::Rssi => "rssi",
            PlotKind::Dutycycle => "dutycycle",
            PlotKind::Bidir => "bidir",
            PlotKind::LoopRecorder => "loop-recorder",
        }
    }

    /// Which metric goes on the y axis, and where x comes from.
    fn axes(self) -> (&'static str, Axis, &'static str, &'static str) {
        match self {
            PlotKind::Latency => ("latency", Axis::X, "payload (B)", "latency (us)"),
            PlotKind::SinglePacket => ("event_energy", Axis::X, "payload (B)", "energy per packet (uJ)"),
            PlotKind::Throughput => ("avg_power", Axis::Metric("throughput"), "throughput (kbps)", "power (mW)"),
            PlotKind::Rssi => ("normalized_throughput", Axis::X, "RSSI (dBm)", "normalized throughput"),
            PlotKind::Dutycycle => ("warmup_energy", Axis::X, "seed", "warm-up energy (uJ)"),
            PlotKind::Bidir => (
                "reverse_throughput",
                Axis::Metric("forward_throughput"),
                "forward (kbps)",
                "reverse (kbps)",
            ),
            PlotKind::LoopRecorder => ("mcu_power", Axis::X, "FIFO threshold", "MCU power (mW)"),
        }
    }
}

impl FromStr for PlotKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.experiment() == s)
            .ok_or_else(|| SimError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    /// The row's sweep value.
    X,
    /// Another metric measured at the same sweep point.
    Metric(&'static str),
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn collect_series(rows: &[ResultRow], kind: PlotKind) -> Vec<Series> {
    let (y_metric, x_axis, _, _) = kind.axes();
    let lines = summarize(rows);
    let mut series: Vec<Series> = Vec::new();
    for l in lines.iter().filter(|l| l.experiment == kind.experiment() && l.metric == y_metric) {
        if l.x_name == "fit" {
            continue;
        }
        let x = match x_axis {
            Axis::X => Some(l.x_value),
            Axis::Metric(m) => lines
                .iter()
                .find(|o| o.protocol == l.protocol && o.x_value.to_bits() == l.x_value.to_bits() && o.metric == m)
                .map(|o| o.mean),
        };
        let Some(x) = x else { continue };
        if !x.is_finite() || !l.mean.is_finite() {
            continue;
        }
        match series.iter_mut().find(|s| s.label == l.protocol) {
            Some(s) => s.points.push((x, l.mean)),
            None => series.push(Series {
                label: l.protocol.clone(),
                points: vec![(x, l.mean)],
            }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    series
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders the rows of `kind` as an SVG line chart. Rows of other experiments are ignored;
/// no matching rows give empty axes.
pub fn render(rows: &[ResultRow], kind: PlotKind) -> String {
    let (_, _, x_label, y_label) = kind.axes();
    let series = collect_series(rows, kind);
    let (x0, x1) = span(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (mut y0, y1) = span(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    if y0 > 0.0 && y0 < 0.5 * y1 {
        y0 = 0.0;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        kind.experiment()
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            MARGIN_T + ph + 16.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            sy(yv) + 4.0,
            fmt_tick(yv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            MARGIN_L + pw,
            sy(yv),
            sy(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 24.0, ly + 4.0, ser.label);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(protocol: &str, x: f64, metric: &str, v: f64) -> ResultRow {
        ResultRow {
            experiment: "loop-recorder".into(),
            protocol: protocol.into(),
            x_name: "threshold".into(),
            x_value: x,
            metric: metric.into(),
            value: v,
            unit: "mW".into(),
            seed: 1,
            calib_hash: "h@0".into(),
        }
    }

    #[test]
    fn empty_rows_give_axes_only() {
        let svg = render(&[], PlotKind::Latency);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<rect"));
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn one_polyline_per_series_and_deterministic() {
        let rows: Vec<_> = ["BLE-connection", "ESB-standby", "ESB-onoff"]
            .iter()
            .flat_map(|m| (1..=4).map(move |t| row(m, f64::from(t), "mcu_power", 5.0 / f64::from(t))))
            .collect();
        let a = render(&rows, PlotKind::LoopRecorder);
        assert_eq!(a.matches("<polyline").count(), 3);
        assert_eq!(a, render(&rows, PlotKind::LoopRecorder));
    }

    #[test]
    fn kinds_parse_from_experiment_names() {
        for k in PlotKind::ALL {
            assert_eq!(k.experiment().parse::<PlotKind>().unwrap(), k);
        }
        assert!("calibrate".parse::<PlotKind>().is_err());
    }
}
