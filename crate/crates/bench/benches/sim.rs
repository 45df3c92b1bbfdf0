use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use linksim::ble::BleConfig;
use linksim::esb::EsbConfig;
use linksim::experiments::measure;
use linksim::experiments::stream::{ble_stream, esb_stream, Load, StreamWindow};
use linksim::phy::{on_air_time, ChannelState, FrameOverhead, PhyMode};
use linksim::sensor::{run_scenario, CommMode, Scenario};
use linksim::sim::{ActorId, Scheduler};
use linksim::time::SimTime;
use linksim::CalibrationSet;

fn scheduler(c: &mut Criterion) {
    c.bench_function("scheduler 10k events", |b| {
        b.iter(|| {
            let mut s: Scheduler<u32> = Scheduler::new();
            for i in 0..10_000u64 {
                s.schedule(SimTime::from_micros((i * 7919) % 100_000), ActorId(0), i as u32);
            }
            let mut n = 0u64;
            s.run_until(SimTime::from_secs(1), |_, e| n += u64::from(e.kind));
            black_box(n)
        })
    });
}

fn airtime(c: &mut Criterion) {
    let ov = FrameOverhead::esb();
    c.bench_function("on_air_time ESB-4M", |b| {
        b.iter(|| on_air_time(PhyMode::Esb4M, black_box(244), &ov).unwrap())
    });
}

fn streams(c: &mut Criterion) {
    let cal = CalibrationSet::shipped();
    let window = StreamWindow::seconds(0.01, 0.1);
    c.bench_function("ESB saturated 100 ms", |b| {
        b.iter(|| {
            esb_stream(&cal, &EsbConfig::default(), ChannelState::lossless(), 252, 0, Load::Saturate, window).unwrap()
        })
    });
    c.bench_function("BLE saturated 100 ms", |b| {
        b.iter(|| {
            ble_stream(
                &cal,
                &BleConfig::default(),
                ChannelState::lossless(),
                244,
                Load::Saturate,
                Load::Off,
                window,
                1,
            )
            .unwrap()
        })
    });
}

fn warmup(c: &mut Criterion) {
    let cal = CalibrationSet::shipped();
    c.bench_function("BLE warm-up", |b| b.iter(|| measure::ble_warmup(&cal, black_box(3)).unwrap()));
}

fn loop_recorder(c: &mut Criterion) {
    let cal = CalibrationSet::shipped();
    let scn = Scenario {
        mode: CommMode::EsbStandby,
        threshold: 8,
        duration_s: 10.0,
        ..Scenario::default()
    };
    c.bench_function("loop recorder ESB standby 10 s", |b| {
        b.iter(|| run_scenario(&scn, &cal, 1).unwrap())
    });
}

criterion_group!(benches, scheduler, airtime, streams, warmup, loop_recorder);
criterion_main!(benches);
