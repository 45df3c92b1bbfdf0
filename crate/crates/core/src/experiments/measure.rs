//! Single-shot measurements: one packet event, one latency sample, one warm-up.

use crate::ble::{self, BleConfig, BleEvent, BleLink, BleOutput};
use crate::calibration::CalibrationSet;
use crate::energy::PowerTrace;
use crate::error::Result;
use crate::esb::{self, EsbConfig, EsbLink, EsbOutput};
use crate::phy::ChannelState;
use crate::rng::RngStream;
use crate::sim::Scheduler;
use crate::time::{Micros, SimTime};

/// One radio event as seen on the transmitter supply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketEvent {
    pub time_us: u64,
    /// Energy above the standby floor over the event window.
    pub energy_uj: f64,
    pub peak_mw: f64,
}

fn event_from_trace(trace: &PowerTrace, t0: SimTime, t1: SimTime, floor_mw: f64) -> Result<PacketEvent> {
    let dt = (t1 - t0).0;
    Ok(PacketEvent {
        time_us: dt,
        energy_uj: trace.integrate(t0, t1)? - floor_mw * dt as f64 / 1e3,
        peak_mw: trace.peak_power(t0, t1)?,
    })
}

/// An isolated ESB transaction from an idle transmitter.
pub fn esb_single_packet(cal: &CalibrationSet, payload: usize) -> Result<PacketEvent> {
    let mut sched = Scheduler::new();
    let mut link = EsbLink::new(EsbConfig::default(), cal.esb.clone(), ChannelState::lossless(), SimTime::ZERO)?;
    sched.run_until(SimTime::from_millis(1), |_, _| {});
    link.send(&mut sched, vec![0xa5; payload])?;
    let out = esb::drive(&mut link, &mut sched, SimTime::from_millis(20));
    let (t0, t1) = out
        .iter()
        .find_map(|o| match o {
            EsbOutput::Idle {
                burst_start, radio_end, ..
            } => Some((*burst_start, *radio_end)),
            _ => None,
        })
        .expect("transaction completes");
    let trace = link.recorder().snapshot(sched.now());
    event_from_trace(&trace, t0, t1, cal.esb.power.idle_standby_mw)
}

/// The connection event that carries one notification.
pub fn ble_single_packet(cal: &CalibrationSet, payload: usize) -> Result<PacketEvent> {
    let mut sched = Scheduler::new();
    let mut link = BleLink::new_connected(BleConfig::default(), cal.ble.clone(), ChannelState::lossless(), SimTime::ZERO, 0)?;
    link.start(&mut sched);
    // Queue between the first and second events.
    let first_end = link.anchor() + Micros(2_000);
    ble::drive(&mut link, &mut sched, first_end);
    link.notify(&mut sched, payload)?;
    let out = ble::drive(&mut link, &mut sched, first_end + Micros(20_000));
    let ce = out
        .iter()
        .find_map(|o| match o {
            BleOutput::ConnectionEvent(r) if r.forward_pdus > 0 => Some(r.clone()),
            _ => None,
        })
        .expect("notification sent");
    let trace = link.recorder().snapshot(sched.now());
    let t0 = ce.anchor - Micros(cal.ble.ramp_up_us);
    event_from_trace(&trace, t0, ce.radio_end, cal.ble.power.idle_standby_mw)
}

pub fn esb_latency(cal: &CalibrationSet, payload: usize) -> Result<Micros> {
    esb::esb_latency(payload, &EsbConfig::default(), &cal.esb)
}

/// Notify-to-delivery latency with the notify call at a random phase of the connection interval.
pub fn ble_latency_sample(cal: &CalibrationSet, payload: usize, seed: u64) -> Result<Micros> {
    let cfg = BleConfig::default();
    let mut rng = RngStream::new(seed, "latency/phase");
    let mut sched = Scheduler::new();
    let mut link = BleLink::new_connected(cfg.clone(), cal.ble.clone(), ChannelState::lossless(), SimTime::ZERO, seed)?;
    link.start(&mut sched);
    let t_send = SimTime::from_micros(2 * cfg.conn_interval_us + rng.uniform_u64(0, cfg.conn_interval_us - 1));
    ble::drive(&mut link, &mut sched, t_send);
    link.notify(&mut sched, payload)?;
    let out = ble::drive(&mut link, &mut sched, t_send + Micros(10 * cfg.conn_interval_us));
    let lat = out
        .iter()
        .find_map(|o| match o {
            BleOutput::Delivered { sent_at, at, .. } => Some(*at - *sent_at),
            _ => None,
        })
        .expect("clean channel delivers");
    Ok(lat)
}

/// Wake-to-first-packet cost, split into named phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Warmup {
    pub time_us: u64,
    pub energy_uj: f64,
    /// (phase, energy µJ) in time order; the phases tile the warm-up window.
    pub phases: Vec<(&'static str, f64)>,
    /// Average power over a full wake period with the rest spent in system off.
    pub cycle_avg_mw: f64,
}

/// Payload sent after each wake in the sleep-wake runs.
pub const WARMUP_PAYLOAD: usize = 244;
/// Wake period of the sleep-wake runs.
pub const WAKE_PERIOD_US: u64 = 10_000_000;

fn cycle_average(trace: &PowerTrace, end: SimTime, off_mw: f64) -> Result<f64> {
    let e = trace.integrate(SimTime::ZERO, end)?;
    let rest = WAKE_PERIOD_US.saturating_sub(end.micros()) as f64 * off_mw / 1e3;
    Ok((e + rest) / (WAKE_PERIOD_US as f64 / 1e3))
}

/// ESB: initialization, then the first transaction.
pub fn esb_warmup(cal: &CalibrationSet) -> Result<Warmup> {
    let mut sched = Scheduler::new();
    let mut link = EsbLink::new_off(EsbConfig::default(), cal.esb.clone(), ChannelState::lossless(), SimTime::ZERO)?;
    link.send(&mut sched, vec![0xa5; WARMUP_PAYLOAD])?;
    link.wake(&mut sched);
    let out = esb::drive(&mut link, &mut sched, SimTime::from_secs(1));
    let ready = out
        .iter()
        .find_map(|o| match o {
            EsbOutput::Ready { at } => Some(*at),
            _ => None,
        })
        .expect("initializes");
    let end = out
        .iter()
        .find_map(|o| match o {
            EsbOutput::Idle { radio_end, .. } => Some(*radio_end),
            _ => None,
        })
        .expect("first packet sent");
    let trace = link.recorder().snapshot(sched.now());
    let init = trace.integrate(SimTime::ZERO, ready)?;
    let data = trace.integrate(ready, end)?;
    Ok(Warmup {
        time_us: end.micros(),
        energy_uj: init + data,
        phases: vec![("init", init), ("data", data)],
        cycle_avg_mw: cycle_average(&trace, end, cal.esb.power.system_off_mw)?,
    })
}

/// BLE: initialization, advertising until a connect request, connection setup,
/// then the connection event carrying the first notification.
pub fn ble_warmup(cal: &CalibrationSet, seed: u64) -> Result<Warmup> {
    let mut sched: Scheduler<BleEvent> = Scheduler::new();
    let mut link = BleLink::new_off(BleConfig::default(), cal.ble.clone(), ChannelState::lossless(), SimTime::ZERO, seed)?;
    link.start_discovery(&mut sched);
    let mut adv = None;
    let mut req = None;
    let mut conn = None;
    let mut end = None;
    while end.is_none() {
        let ev = sched
            .pop_until(SimTime::from_secs(5))
            .expect("warm-up finishes within 5 s");
        link.handle(&mut sched, ev.kind);
        for o in link.take_outputs() {
            match o {
                BleOutput::AdvertisingStarted { at } => adv = Some(at),
                BleOutput::ConnectRequest { at } => req = Some(at),
                BleOutput::Connected { at } => {
                    conn = Some(at);
                    link.notify(&mut sched, WARMUP_PAYLOAD)?;
                }
                BleOutput::ConnectionEvent(r) if r.forward_pdus > 0 => end = Some(r.radio_end),
                _ => {}
            }
        }
    }
    let (adv, req, conn, end) = (adv.unwrap(), req.unwrap(), conn.unwrap(), end.unwrap());
    let trace = link.recorder().snapshot(sched.now());
    let init = trace.integrate(SimTime::ZERO, adv)?;
    let advertising = trace.integrate(adv, req)?;
    let connection = trace.integrate(req, conn)?;
    let data = trace.integrate(conn, end)?;
    Ok(Warmup {
        time_us: end.micros(),
        energy_uj: init + advertising + connection + data,
        phases: vec![
            ("init", init),
            ("advertising", advertising),
            ("connection", connection),
            ("data", data),
        ],
        cycle_avg_mw: cycle_average(&trace, end, cal.ble.power.system_off_mw)?,
    })
}
