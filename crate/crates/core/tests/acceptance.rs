//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs against the shipped calibration set. Tolerances are fixed here and never
//! loosened to make a line pass.

use std::collections::HashSet;
use std::process::ExitCode;

use linksim::ble::{self, BleConfig, BleEvent, BleLink, BleOutput};
use linksim::esb::{self, EsbConfig, EsbEvent, EsbLink, EsbOutput};
use linksim::experiments::{self, ExperimentKind, ExperimentSpec, ResultRow};
use linksim::phy::{ChannelState, LossModel, Protocol};
use linksim::rng::RngStream;
use linksim::sensor::{self, CommMode, Scenario};
use linksim::sim::Scheduler;
use linksim::time::{Micros, SimTime};
use linksim::CalibrationSet;

/// Collects sub-checks of one criterion.
struct Criterion {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Criterion {
    fn new() -> Self {
        Criterion {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn near(&mut self, name: &str, sim: f64, reference: f64, rel: f64) {
        let r = (sim - reference) / reference;
        self.check(r.abs() <= rel, format!("{name} {sim:.4} vs {reference} ({:+.1}%)", r * 100.0));
    }

    fn near_abs(&mut self, name: &str, sim: f64, reference: f64, tol: f64) {
        self.check((sim - reference).abs() <= tol, format!("{name} {sim:.4} vs {reference}±{tol}"));
    }
}

fn rows_for(kind: ExperimentKind, cal: &CalibrationSet, tweak: impl FnOnce(&mut ExperimentSpec)) -> Vec<ResultRow> {
    let mut spec = ExperimentSpec::new(kind);
    tweak(&mut spec);
    experiments::run(&spec, cal).expect("experiment runs")
}

fn values<'a>(rows: &'a [ResultRow], protocol: &'a str, metric: &'a str) -> impl Iterator<Item = &'a ResultRow> {
    rows.iter().filter(move |r| r.protocol == protocol && r.metric == metric)
}

fn value(rows: &[ResultRow], protocol: &str, metric: &str, x: Option<f64>) -> f64 {
    values(rows, protocol, metric)
        .find(|r| x.is_none_or(|x| r.x_value == x))
        .unwrap_or_else(|| panic!("no row {protocol} {metric} {x:?}"))
        .value
}

fn latency(cal: &CalibrationSet, c: &mut Criterion) {
    let rows = rows_for(ExperimentKind::Latency, cal, |_| {});
    c.near("ESB latency@244 us", value(&rows, "ESB", "latency", Some(244.0)), 680.0, 0.10);
    let esb: Vec<f64> = values(&rows, "ESB", "latency").map(|r| r.value).collect();
    c.check(
        esb.len() == 6 && esb.windows(2).all(|w| w[1] > w[0]),
        format!("ESB latency strictly increasing {esb:?}"),
    );
    let ble: Vec<f64> = values(&rows, "BLE", "latency").map(|r| r.value).collect();
    let seeds: HashSet<u64> = values(&rows, "BLE", "latency").map(|r| r.seed).collect();
    c.check(seeds.len() >= 100, format!("BLE random-phase runs {}", seeds.len()));
    c.near("BLE mean latency us", experiments::mean(&ble), 5000.0, 0.20);
    let sd = experiments::std_dev(&ble);
    c.check(sd > 1700.0, format!("BLE latency std {sd:.0} > 1700"));
}

fn single_packet(cal: &CalibrationSet, c: &mut Criterion) {
    let rows = rows_for(ExperimentKind::SinglePacket, cal, |_| {});
    let at = Some(244.0);
    c.near("BLE time us", value(&rows, "BLE", "event_time", at), 2600.0, 0.05);
    c.near("BLE energy uJ", value(&rows, "BLE", "event_energy", at), 38.16, 0.05);
    c.near("ESB time us", value(&rows, "ESB", "event_time", at), 1280.0, 0.05);
    c.near("ESB energy uJ", value(&rows, "ESB", "event_energy", at), 18.30, 0.05);
    let ratio = value(&rows, "BLE", "event_energy", at) / value(&rows, "ESB", "event_energy", at);
    c.check((1.8..=2.2).contains(&ratio), format!("energy ratio {ratio:.3} in [1.8, 2.2]"));
    c.near("BLE peak mW", value(&rows, "BLE", "peak_power", at), 35.0, 0.05);
    c.near("ESB peak mW", value(&rows, "ESB", "peak_power", at), 35.0, 0.05);
}

fn continuous(cal: &CalibrationSet, c: &mut Criterion) {
    let rows = rows_for(ExperimentKind::Throughput, cal, |_| {});
    c.near("BLE standby mW", value(&rows, "BLE", "standby_power", None), 1.41, 0.05);
    c.near("ESB standby mW", value(&rows, "ESB", "standby_power", None), 1.15, 0.05);
    c.near("BLE slope", value(&rows, "BLE", "power_slope", None), 0.018, 0.15);
    c.near("ESB slope", value(&rows, "ESB", "power_slope", None), 0.013, 0.15);
    let ble = value(&rows, "BLE", "max_throughput", None);
    let esb = value(&rows, "ESB", "max_throughput", None);
    c.near("BLE max kbps", ble, 1100.0, 0.10);
    c.near("ESB max kbps", esb, 2200.0, 0.10);
    c.check(esb / ble >= 1.9, format!("max ratio {:.3} >= 1.9", esb / ble));
}

fn rssi(cal: &CalibrationSet, c: &mut Criterion) {
    let rows = rows_for(ExperimentKind::Rssi, cal, |_| {});
    let curve = |p: &str| -> Vec<(f64, f64)> {
        values(&rows, p, "normalized_throughput").map(|r| (r.x_value, r.value)).collect()
    };
    let (ble, esb) = (curve("BLE"), curve("ESB"));
    for (p, pts) in [("BLE", &ble), ("ESB", &esb)] {
        let flat = pts
            .iter()
            .filter(|(x, _)| (-65.0..=-30.0).contains(x))
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min);
        c.check(flat >= 0.95, format!("{p} min over [-65,-30] {flat:.4} >= 0.95"));
    }
    // Relative decay rate per dB, stepping down from x+1 to x.
    let rate = |pts: &[(f64, f64)], x: f64| -> f64 {
        let at = |x: f64| pts.iter().find(|p| p.0 == x).map(|p| p.1).expect("grid point");
        (at(x + 1.0).max(1e-9) / at(x).max(1e-9)).ln()
    };
    let mut bad = Vec::new();
    for i in 0..=15 {
        let x = -85.0 + f64::from(i);
        let (re, rb) = (rate(&esb, x), rate(&ble, x));
        if re <= rb {
            bad.push(format!("{x}: esb {re:.4} <= ble {rb:.4}"));
        }
    }
    c.check(bad.is_empty(), format!("ESB decays faster at every point of [-85,-70] {bad:?}"));
}

fn sleep_wake(cal: &CalibrationSet, c: &mut Criterion) {
    let rows = rows_for(ExperimentKind::Dutycycle, cal, |_| {});
    let m = |p: &str, metric: &str| experiments::mean(&values(&rows, p, metric).map(|r| r.value).collect::<Vec<_>>());
    let n = values(&rows, "BLE", "warmup_time").count();
    c.check(n >= 100, format!("BLE seeds {n}"));
    c.near("BLE warm-up ms", m("BLE", "warmup_time"), 218.96, 0.15);
    c.near("BLE warm-up uJ", m("BLE", "warmup_energy"), 1226.55, 0.15);
    c.near("BLE advertising uJ", m("BLE", "advertising_energy"), 519.37, 0.15);
    c.near("BLE connection uJ", m("BLE", "connection_energy"), 126.95, 0.15);
    c.near("ESB warm-up ms", m("ESB", "warmup_time"), 22.41, 0.15);
    c.near("ESB warm-up uJ", m("ESB", "warmup_energy"), 112.16, 0.15);
    let tr = m("BLE", "warmup_time") / m("ESB", "warmup_time");
    let er = m("BLE", "warmup_energy") / m("ESB", "warmup_energy");
    c.check(tr >= 9.0 && er >= 9.0, format!("time ratio {tr:.2}, energy ratio {er:.2} >= 9"));
}

fn bidirectional(cal: &CalibrationSet, c: &mut Criterion) {
    let rows = rows_for(ExperimentKind::Bidir, cal, |_| {});
    c.near_abs("BLE k", value(&rows, "BLE", "reverse_slope", None), -1.016, 0.05);
    c.near("BLE aggregate kbps", value(&rows, "BLE", "max_aggregate", None), 1100.0, 0.10);
    for (ack, k, agg) in [(2, 0.008, 2244.0), (132, 0.542, 2563.0), (252, 0.995, 2721.0)] {
        let p = format!("ESB/ack={ack}");
        let sim_k = value(&rows, &p, "reverse_slope", None);
        c.near_abs(&format!("{p} k"), sim_k, k, 0.05);
        c.near(&format!("{p} aggregate kbps"), value(&rows, &p, "max_aggregate", None), agg, 0.10);
        if ack == 132 {
            // Every transaction carries one full forward frame and one ACK payload.
            let oracle = 132.0 / 252.0;
            c.near_abs("ESB/ack=132 k vs payload ratio", sim_k, oracle, 0.05);
        }
    }
    c.near("symmetric forward kbps", value(&rows, "ESB/ack=252", "forward_throughput", Some(-1.0)), 1364.0, 0.10);
    c.near("symmetric reverse kbps", value(&rows, "ESB/ack=252", "reverse_throughput", Some(-1.0)), 1357.0, 0.10);
}

fn loop_recorder(cal: &CalibrationSet, c: &mut Criterion) {
    let rows = rows_for(ExperimentKind::LoopRecorder, cal, |_| {});
    let mcu = |m: CommMode, t: f64| value(&rows, m.name(), "mcu_power", Some(t));
    c.near("BLE @1 mW", mcu(CommMode::BleConnection, 1.0), 6.6, 0.20);
    c.near("BLE @32 mW", mcu(CommMode::BleConnection, 32.0), 2.1, 0.20);
    c.near("ESB-standby @1 mW", mcu(CommMode::EsbStandby, 1.0), 3.8, 0.20);
    c.near("ESB-standby @32 mW", mcu(CommMode::EsbStandby, 32.0), 1.3, 0.20);
    c.near("ESB-onoff @31 mW", mcu(CommMode::EsbOnOff, 31.0), 0.5, 0.20);
    let onoff = mcu(CommMode::EsbOnOff, 31.0);
    let ble = mcu(CommMode::BleConnection, 32.0);
    c.check(onoff <= 0.45 * ble, format!("onoff(31) {onoff:.3} <= 0.45 x BLE(32) {ble:.3}"));

    let mut sensor_bad = Vec::new();
    let mut lost = Vec::new();
    for mode in CommMode::MEASURED {
        for t in 1..=32usize {
            let x = Some(t as f64);
            let s = value(&rows, mode.name(), "sensor_power", x);
            if (s - 0.5).abs() > 0.1 {
                sensor_bad.push(format!("{} {t}: {s:.3}", mode.name()));
            }
            if sensor::validate(mode, t).is_ok() {
                let comp = value(&rows, mode.name(), "completeness", x);
                let ovf = value(&rows, mode.name(), "overflow_events", x);
                if comp != 1.0 || ovf != 0.0 {
                    lost.push(format!("{} {t}: completeness {comp}, overflows {ovf}", mode.name()));
                }
            }
        }
    }
    c.check(sensor_bad.is_empty(), format!("sensor 0.5 mW ±20% everywhere {sensor_bad:?}"));
    c.check(lost.is_empty(), format!("valid configs lossless {lost:?}"));

    let window: Vec<usize> = (1..=32).filter(|&t| sensor::validate(CommMode::EsbOnOff, t).is_ok()).collect();
    c.check(window == (3..=31).collect::<Vec<_>>(), format!("on/off window {:?}..{:?}", window.first(), window.last()));
    for t in [2usize, 32] {
        let scn = Scenario {
            mode: CommMode::EsbOnOff,
            threshold: t,
            duration_s: 10.0,
            ..Scenario::default()
        };
        let rejected = sensor::run_scenario(&scn, cal, 1).is_err();
        let r = sensor::run_scenario_unchecked(&scn, cal, 1).expect("runs").result;
        c.check(
            rejected && r.overflow_events > 0,
            format!("on/off threshold {t}: rejected {rejected}, simulated overflows {}", r.overflow_events),
        );
    }
    let persistent = sensor::run_scenario_unchecked(
        &Scenario {
            mode: CommMode::EsbOnOff,
            threshold: 2,
            duration_s: 10.0,
            ..Scenario::default()
        },
        cal,
        1,
    )
    .expect("runs")
    .result;
    c.check(
        persistent.overflow_events > 10,
        format!("threshold 2 overflows persist ({})", persistent.overflow_events),
    );
}

/// Sends `budget` ESB packets through a lossy channel and returns (delivered ids, attempts).
fn esb_run(cal: &CalibrationSet, per: f64, seed: u64, budget: u64) -> (Vec<u64>, u64) {
    let mut link = EsbLink::new(EsbConfig::default(), cal.esb.clone(), ChannelState::fixed(per, seed), SimTime::ZERO)
        .expect("valid link");
    let mut sched: Scheduler<EsbEvent> = Scheduler::new();
    let mut sent = 0u64;
    let mut delivered = Vec::new();
    while sent < budget || !link.is_quiescent() {
        while sent < budget && link.send(&mut sched, vec![0x5a; 32]).is_ok() {
            sent += 1;
        }
        let until = sched.now() + Micros(50_000);
        for o in esb::drive(&mut link, &mut sched, until) {
            if let EsbOutput::Delivered { id, .. } = o {
                delivered.push(id);
            }
        }
    }
    (delivered, sent)
}

/// Same for BLE notifications, capped at `max_s` of simulated time.
fn ble_run(cal: &CalibrationSet, per: f64, seed: u64, budget: u64, max_s: u64) -> (Vec<u64>, u64) {
    let mut link = BleLink::new_connected(
        BleConfig::default(),
        cal.ble.clone(),
        ChannelState::fixed(per, seed),
        SimTime::ZERO,
        seed,
    )
    .expect("valid link");
    let mut sched: Scheduler<BleEvent> = Scheduler::new();
    link.start(&mut sched);
    let mut sent = 0u64;
    let mut delivered = Vec::new();
    while (sent < budget || link.outstanding() > 0) && sched.now() < SimTime::from_secs(max_s) {
        while sent < budget && link.notify(&mut sched, 20).is_ok() {
            sent += 1;
        }
        let until = sched.now() + Micros(75_000);
        for o in ble::drive(&mut link, &mut sched, until) {
            match o {
                BleOutput::Delivered { id, .. } => delivered.push(id),
                BleOutput::Disconnected { .. } => return (delivered, sent),
                _ => {}
            }
        }
    }
    (delivered, sent)
}

fn properties(cal: &CalibrationSet, c: &mut Criterion) {
    const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];
    let mut offered = [0u64; 2];
    for per in [0.0, 0.1, 0.3, 0.9] {
        for seed in SEEDS {
            for proto in [Protocol::Esb, Protocol::Ble] {
                let (ids, sent) = match proto {
                    Protocol::Esb => esb_run(cal, per, seed, 7_000),
                    Protocol::Ble => ble_run(cal, per, seed, 7_000, 120),
                };
                offered[usize::from(proto == Protocol::Ble)] += sent;
                let unique: HashSet<u64> = ids.iter().copied().collect();
                let ok = unique.len() == ids.len() && ids.len() as u64 <= sent && (per > 0.0 || ids.len() as u64 == sent);
                if !ok {
                    c.check(
                        false,
                        format!("{proto} per {per} seed {seed}: {} deliveries, {} unique, {sent} sent", ids.len(), unique.len()),
                    );
                }
            }
        }
    }
    c.check(
        offered.iter().all(|&n| n >= 100_000),
        format!("at-most-once over {} ESB / {} BLE packets", offered[0], offered[1]),
    );

    for ack_per in [0.1, 0.3] {
        let mut link = EsbLink::new(
            EsbConfig::default(),
            cal.esb.clone(),
            ChannelState::new(LossModel::Fixed { data_per: 0.0, ack_per }, 7),
            SimTime::ZERO,
        )
        .expect("valid link");
        let mut sched: Scheduler<EsbEvent> = Scheduler::new();
        let mut payloads_sent = 0u64;
        let mut payloads_got = 0u64;
        while payloads_sent < 20_000 {
            while link.prx.ack_queue_len() < link.cfg.ack_queue_depth {
                link.prx.queue_ack_payload(vec![1; 16]).expect("below depth");
                payloads_sent += 1;
            }
            while link.send(&mut sched, vec![2; 32]).is_ok() {}
            let until = sched.now() + Micros(20_000);
            for o in esb::drive(&mut link, &mut sched, until) {
                if let EsbOutput::Transaction { result, .. } = o {
                    payloads_got += u64::from(!result.ack_payload.is_empty());
                }
            }
        }
        let popped = payloads_sent - link.prx.ack_queue_len() as u64;
        let loss = 1.0 - payloads_got as f64 / popped as f64;
        c.near_abs(&format!("reverse loss at ack PER {ack_per}"), loss, ack_per, 0.02);
    }

    let csv = |seed: u64| {
        let rows = rows_for(ExperimentKind::Latency, cal, |s| {
            s.seed = seed;
            s.reps = 20;
        });
        let mut buf = Vec::new();
        experiments::write_csv(&rows, &mut buf).expect("csv");
        buf
    };
    let (a, b, other) = (csv(5), csv(5), csv(6));
    c.check(a == b && a != other, "CSV byte-identical per seed, different across seeds".into());

    let out = sensor::run_scenario(
        &Scenario {
            mode: CommMode::EsbStandby,
            threshold: 4,
            duration_s: 5.0,
            ..Scenario::default()
        },
        cal,
        3,
    )
    .expect("runs");
    let tr = &out.mcu_trace;
    let mut rng = RngStream::new(99, "acceptance/splits");
    let span = (tr.end() - tr.start()).0;
    let mut exact = true;
    for _ in 0..1_000 {
        let mut p = [0u64; 3].map(|_| rng.uniform_u64(0, span));
        p.sort_unstable();
        let [t0, t1, t2] = p.map(|x| tr.start() + Micros(x));
        let whole = tr.energy_fj(t0, t2).expect("in range");
        let parts = tr.energy_fj(t0, t1).expect("in range") + tr.energy_fj(t1, t2).expect("in range");
        exact &= whole == parts;
    }
    c.check(exact, "energy additivity exact over 1000 random splits".into());
}

type CheckFn = fn(&CalibrationSet, &mut Criterion);

fn main() -> ExitCode {
    let cal = CalibrationSet::shipped();
    let criteria: [(&str, CheckFn); 8] = [
        ("latency", latency),
        ("single packet", single_packet),
        ("continuous streaming", continuous),
        ("RSSI sweep", rssi),
        ("sleep-wake warm-up", sleep_wake),
        ("bidirectional", bidirectional),
        ("loop recorder", loop_recorder),
        ("protocol properties", properties),
    ];
    let mut all = true;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let mut c = Criterion::new();
        f(&cal, &mut c);
        if c.failures.is_empty() {
            println!("PASS {} {name}: {}", i + 1, c.notes.join("; "));
        } else {
            all = false;
            println!("FAIL {} {name}: {}", i + 1, c.failures.join("; "));
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
