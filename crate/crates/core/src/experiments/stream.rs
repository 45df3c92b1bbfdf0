//! Continuous-traffic drivers shared by the throughput, RSSI and bidirectional runs.

use crate::ble::{BleConfig, BleEvent, BleLink, BleOutput};
use crate::calibration::CalibrationSet;
use crate::error::Result;
use crate::esb::{EsbConfig, EsbEvent, EsbLink, EsbOutput};
use crate::phy::ChannelState;
use crate::sim::{ActorId, Scheduler, Scoped};
use crate::time::{Micros, SimTime};

/// Offered load in one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    Off,
    /// Periodic packets at this many kbps of payload.
    Rate(f64),
    /// Keep the transmit queue full.
    Saturate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamWindow {
    pub warmup: Micros,
    pub measure: Micros,
}

impl StreamWindow {
    pub fn seconds(warmup_s: f64, measure_s: f64) -> Self {
        StreamWindow {
            warmup: Micros((warmup_s * 1e6) as u64),
            measure: Micros((measure_s * 1e6) as u64),
        }
    }

    fn start(&self) -> SimTime {
        SimTime::ZERO + self.warmup
    }

    fn end(&self) -> SimTime {
        self.start() + self.measure
    }

    fn contains(&self, t: SimTime) -> bool {
        t >= self.start() && t < self.end()
    }

    fn kbps(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / (self.measure.0 as f64 / 1e6) / 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamResult {
    pub forward_kbps: f64,
    pub reverse_kbps: f64,
    /// Transmitter-side average power over the measurement window.
    pub avg_power_mw: f64,
    pub peak_power_mw: f64,
    pub dropped: u64,
}

impl StreamResult {
    pub fn aggregate_kbps(&self) -> f64 {
        self.forward_kbps + self.reverse_kbps
    }
}

/// Periodic packet times for a rate, as integer microseconds.
struct Ticker {
    period_us: f64,
    k: u64,
}

impl Ticker {
    fn new(payload_bytes: usize, kbps: f64) -> Option<Self> {
        if kbps <= 0.0 {
            return None;
        }
        Some(Ticker {
            period_us: payload_bytes as f64 * 8.0 / kbps * 1e3,
            k: 0,
        })
    }

    fn next(&mut self) -> SimTime {
        self.k += 1;
        SimTime::from_micros((self.k as f64 * self.period_us).round() as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EsbStreamEvent {
    Tick,
    Link(EsbEvent),
}

/// ESB transmitter streaming `payload`-byte packets while the receiver answers
/// with `ack_payload`-byte ACK payloads (0 = plain ACKs).
pub fn esb_stream(
    cal: &CalibrationSet,
    cfg: &EsbConfig,
    channel: ChannelState,
    payload: usize,
    ack_payload: usize,
    load: Load,
    window: StreamWindow,
) -> Result<StreamResult> {
    let cfg = EsbConfig {
        tx_queue_depth: match load {
            Load::Rate(_) => cfg.tx_queue_depth.max(64),
            _ => cfg.tx_queue_depth,
        },
        ..cfg.clone()
    };
    let mut link = EsbLink::new(cfg, cal.esb.clone(), channel, SimTime::ZERO)?;
    let mut sched: Scheduler<EsbStreamEvent> = Scheduler::new();
    let mut ticker = match load {
        Load::Rate(r) => Ticker::new(payload, r),
        _ => None,
    };
    if let Some(t) = ticker.as_mut() {
        sched.schedule(t.next(), ActorId(0), EsbStreamEvent::Tick);
    }
    let mut fwd = 0u64;
    let mut rev = 0u64;
    let mut dropped = 0u64;
    let top_up = |link: &mut EsbLink, s: &mut Scheduler<EsbStreamEvent>| {
        if ack_payload > 0 {
            while link.prx.ack_queue_len() < link.cfg.ack_queue_depth {
                link.prx
                    .queue_ack_payload(vec![0x3c; ack_payload])
                    .expect("below depth");
            }
        }
        if load == Load::Saturate {
            let mut sink = Scoped::new(s, ActorId(1), EsbStreamEvent::Link);
            while link.queue_len() < link.cfg.tx_queue_depth {
                link.send(&mut sink, vec![0xa5; payload]).expect("below depth");
            }
        }
    };
    top_up(&mut link, &mut sched);
    sched.run_until(window.end(), |s, ev| {
        match ev.kind {
            EsbStreamEvent::Tick => {
                let mut sink = Scoped::new(s, ActorId(1), EsbStreamEvent::Link);
                if link.send(&mut sink, vec![0xa5; payload]).is_err() {
                    dropped += 1;
                }
                let t = ticker.as_mut().expect("ticking").next();
                s.schedule(t, ActorId(0), EsbStreamEvent::Tick);
            }
            EsbStreamEvent::Link(e) => {
                let mut sink = Scoped::new(s, ActorId(1), EsbStreamEvent::Link);
                link.handle(&mut sink, e);
            }
        }
        for o in link.take_outputs() {
            match o {
                EsbOutput::Delivered { payload, at, .. } if window.contains(at) => fwd += payload.len() as u64,
                EsbOutput::Transaction { result, at, .. } if window.contains(at) => {
                    rev += result.ack_payload.len() as u64
                }
                _ => {}
            }
        }
        top_up(&mut link, s);
    });
    let trace = link.recorder().snapshot(window.end());
    Ok(StreamResult {
        forward_kbps: window.kbps(fwd),
        reverse_kbps: window.kbps(rev),
        avg_power_mw: trace.average_power(window.start(), window.end())?,
        peak_power_mw: trace.peak_power(window.start(), window.end())?,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BleStreamEvent {
    Tick,
    ReverseTick,
    Link(BleEvent),
}

/// BLE peripheral notifying `payload`-byte packets under `forward` load while the
/// central writes the same size under `reverse` load.
#[allow(clippy::too_many_arguments)]
pub fn ble_stream(
    cal: &CalibrationSet,
    cfg: &BleConfig,
    channel: ChannelState,
    payload: usize,
    forward: Load,
    reverse: Load,
    window: StreamWindow,
    seed: u64,
) -> Result<StreamResult> {
    let cfg = BleConfig {
        tx_queue_depth: if matches!(forward, Load::Rate(_)) || matches!(reverse, Load::Rate(_)) {
            cfg.tx_queue_depth.max(64)
        } else {
            cfg.tx_queue_depth
        },
        ..cfg.clone()
    };
    let mut link = BleLink::new_connected(cfg, cal.ble.clone(), channel, SimTime::ZERO, seed)?;
    let mut sched: Scheduler<BleStreamEvent> = Scheduler::new();
    {
        let mut sink = Scoped::new(&mut sched, ActorId(1), BleStreamEvent::Link);
        link.start(&mut sink);
    }
    let mut fwd_ticker = match forward {
        Load::Rate(r) => Ticker::new(payload, r),
        _ => None,
    };
    let mut rev_ticker = match reverse {
        Load::Rate(r) => Ticker::new(payload, r),
        _ => None,
    };
    if let Some(t) = fwd_ticker.as_mut() {
        sched.schedule(t.next(), ActorId(0), BleStreamEvent::Tick);
    }
    if let Some(t) = rev_ticker.as_mut() {
        sched.schedule(t.next(), ActorId(0), BleStreamEvent::ReverseTick);
    }
    let mut fwd = 0u64;
    let mut rev = 0u64;
    let mut dropped = 0u64;
    let top_up = |link: &mut BleLink, s: &mut Scheduler<BleStreamEvent>| {
        let mut sink = Scoped::new(s, ActorId(1), BleStreamEvent::Link);
        if forward == Load::Saturate {
            while link.notify(&mut sink, payload).is_ok() {}
        }
        if reverse == Load::Saturate {
            while link.central_write(&mut sink, payload).is_ok() {}
        }
    };
    top_up(&mut link, &mut sched);
    sched.run_until(window.end(), |s, ev| {
        match ev.kind {
            BleStreamEvent::Tick => {
                let mut sink = Scoped::new(s, ActorId(1), BleStreamEvent::Link);
                if link.notify(&mut sink, payload).is_err() {
                    dropped += 1;
                }
                let t = fwd_ticker.as_mut().expect("ticking").next();
                s.schedule(t, ActorId(0), BleStreamEvent::Tick);
            }
            BleStreamEvent::ReverseTick => {
                let mut sink = Scoped::new(s, ActorId(1), BleStreamEvent::Link);
                if link.central_write(&mut sink, payload).is_err() {
                    dropped += 1;
                }
                let t = rev_ticker.as_mut().expect("ticking").next();
                s.schedule(t, ActorId(0), BleStreamEvent::ReverseTick);
            }
            BleStreamEvent::Link(e) => {
                let mut sink = Scoped::new(s, ActorId(1), BleStreamEvent::Link);
                link.handle(&mut sink, e);
            }
        }
        for o in link.take_outputs() {
            match o {
                BleOutput::Delivered { payload_len, at, .. } if window.contains(at) => fwd += payload_len as u64,
                BleOutput::ReverseDelivered { payload_len, at, .. } if window.contains(at) => {
                    rev += payload_len as u64
                }
                _ => {}
            }
        }
        top_up(&mut link, s);
    });
    let trace = link.recorder().snapshot(window.end());
    Ok(StreamResult {
        forward_kbps: window.kbps(fwd),
        reverse_kbps: window.kbps(rev),
        avg_power_mw: trace.average_power(window.start(), window.end())?,
        peak_power_mw: trace.peak_power(window.start(), window.end())?,
        dropped,
    })
}
