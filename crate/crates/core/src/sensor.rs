//! On-demand loop-recorder node.
//!
//! An ECG front end samples at 128 Hz into a 32-word FIFO and raises a
//! data-ready interrupt when the fill level reaches a threshold. The MCU reads
//! the FIFO over SPI and ships the burst over one of several radio pipelines.
//! MCU and sensor are traced separately, as on a two-channel power analyzer.

use serde::{Deserialize, Serialize};

use crate::ble::{BleConfig, BleEvent, BleLink, BleOutput};
use crate::calibration::CalibrationSet;
use crate::energy::{PowerState, PowerTrace};
use crate::error::{Result, SimError};
use crate::esb::{EsbConfig, EsbEvent, EsbLink, EsbOutput};
use crate::phy::ChannelState;
use crate::sim::{ActorId, Scheduler, Scoped};
use crate::time::{Micros, SimTime};

pub const FIFO_DEPTH: usize = 32;
pub const WORD_BYTES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOutcome {
    Buffered,
    InterruptRaised,
    Overflowed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FifoBuffer {
    pub depth: usize,
    pub word_bytes: usize,
    pub count: usize,
    pub threshold: usize,
    pub overflow_events: u64,
}

impl FifoBuffer {
    pub fn new(threshold: usize) -> Result<Self> {
        if !(1..=FIFO_DEPTH).contains(&threshold) {
            return Err(SimError::InvalidConfig(format!(
                "FIFO threshold {threshold} outside 1..={FIFO_DEPTH}"
            )));
        }
        Ok(FifoBuffer {
            depth: FIFO_DEPTH,
            word_bytes: WORD_BYTES,
            count: 0,
            threshold,
            overflow_events: 0,
        })
    }

    /// Adds one sample. The interrupt is edge-triggered: it fires only on the
    /// sample that brings the fill level up to the threshold.
    pub fn push(&mut self) -> SampleOutcome {
        if self.count == self.depth {
            self.overflow_events += 1;
            return SampleOutcome::Overflowed;
        }
        self.count += 1;
        if self.count == self.threshold {
            SampleOutcome::InterruptRaised
        } else {
            SampleOutcome::Buffered
        }
    }

    /// Empties the FIFO, returning the number of words read.
    pub fn drain(&mut self) -> usize {
        std::mem::take(&mut self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommMode {
    /// Always-connected BLE; each burst is one notification.
    BleConnection,
    /// ESB with the MCU idling in standby between bursts.
    EsbStandby,
    /// ESB with the MCU in system off between bursts; the FIFO interrupt wakes it.
    EsbOnOff,
    /// BLE reconnecting on every burst. Rejected: discovery takes about as long
    /// as the FIFO takes to fill.
    BleOnOff,
}

impl CommMode {
    pub const MEASURED: [CommMode; 3] = [CommMode::BleConnection, CommMode::EsbStandby, CommMode::EsbOnOff];

    pub fn name(self) -> &'static str {
        match self {
            CommMode::BleConnection => "BLE-connection",
            CommMode::EsbStandby => "ESB-standby",
            CommMode::EsbOnOff => "ESB-onoff",
            CommMode::BleOnOff => "BLE-onoff",
        }
    }
}

/// Rejects mode/threshold pairs that cannot run without losing samples.
pub fn validate(mode: CommMode, threshold: usize) -> Result<()> {
    FifoBuffer::new(threshold)?;
    match mode {
        CommMode::EsbOnOff if threshold < 3 => Err(SimError::RejectedConfiguration(format!(
            "ESB on/off at threshold {threshold}: the next interrupt edge arrives before transmit and \
             teardown finish, so the node never wakes again and the FIFO overflows persistently"
        ))),
        CommMode::EsbOnOff if threshold == FIFO_DEPTH => Err(SimError::RejectedConfiguration(
            "ESB on/off at threshold 32: samples arriving during wake-up initialization overflow the full FIFO"
                .into(),
        )),
        CommMode::BleOnOff => Err(SimError::RejectedConfiguration(
            "BLE on/off: reconnecting before every burst takes close to the FIFO fill interval".into(),
        )),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub mode: CommMode,
    pub threshold: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub word_bytes: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            mode: CommMode::BleConnection,
            threshold: 32,
            duration_s: 60.0,
            sample_rate_hz: 128,
            word_bytes: WORD_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub mode: CommMode,
    pub threshold: usize,
    pub duration_s: f64,
    pub mcu_avg_mw: f64,
    pub sensor_avg_mw: f64,
    pub overflow_events: u64,
    pub missed_interrupts: u64,
    pub interrupts: u64,
    pub samples_produced: u64,
    pub samples_delivered: u64,
    /// Words lost in the radio pipeline (retries exhausted or queue refused).
    pub samples_failed: u64,
    /// delivered / (produced - still buffered or in flight at the end).
    pub completeness: f64,
}

pub struct ScenarioOutcome {
    pub result: ScenarioResult,
    pub mcu_trace: PowerTrace,
    pub sensor_trace: PowerTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeEvent {
    Sample,
    SpiDone,
    IrqCpuDone,
    WakeDone,
    TeardownDone,
    Esb(EsbEvent),
    Ble(u32, BleEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mcu {
    Idle,
    Off,
    Waking,
    Reading,
    Handling,
    /// Waiting for the radio before powering down.
    Transmitting,
    Teardown,
}

// One per node, so the size gap does not matter.
#[allow(clippy::large_enum_variant)]
enum Radio {
    Ble(BleLink),
    Esb(EsbLink),
}

const RADIO: ActorId = ActorId(1);

struct Node {
    scn: Scenario,
    cal: CalibrationSet,
    fifo: FifoBuffer,
    mcu: Mcu,
    radio: Radio,
    ble_gen: u32,
    irq_latched: bool,
    burst_words: usize,
    sensor: PowerTrace,
    sample_index: u64,
    produced: u64,
    delivered: u64,
    failed: u64,
    interrupts: u64,
    missed: u64,
}

impl Node {
    fn sample_time(&self, k: u64) -> SimTime {
        SimTime::from_micros(k * 1_000_000 / u64::from(self.scn.sample_rate_hz))
    }

    fn handle(&mut self, s: &mut Scheduler<NodeEvent>, ev: NodeEvent) {
        let now = s.now();
        match ev {
            NodeEvent::Sample => {
                self.produced += 1;
                self.sample_index += 1;
                let next = self.sample_time(self.sample_index);
                s.schedule(next, ActorId(0), NodeEvent::Sample);
                if self.fifo.push() == SampleOutcome::InterruptRaised {
                    self.interrupts += 1;
                    self.on_interrupt(s);
                }
            }
            NodeEvent::WakeDone => {
                self.rec_mut().cpu_end(now);
                self.start_read(s);
            }
            NodeEvent::SpiDone => {
                self.rec_mut().set_spi(now, false);
                self.sensor
                    .push(now, PowerState::IdleStandby, self.cal.sensor.sensor_power.idle_standby_mw);
                let irq_cpu = match self.scn.mode {
                    CommMode::BleConnection => Some(self.cal.sensor.ble_irq_cpu_us),
                    CommMode::EsbStandby => Some(self.cal.sensor.esb_irq_cpu_us),
                    CommMode::EsbOnOff | CommMode::BleOnOff => None,
                };
                match irq_cpu {
                    Some(us) => {
                        self.mcu = Mcu::Handling;
                        self.rec_mut().cpu_begin(now);
                        s.schedule_in(Micros(us), ActorId(0), NodeEvent::IrqCpuDone);
                    }
                    None => self.transmit(s),
                }
            }
            NodeEvent::IrqCpuDone => {
                self.rec_mut().cpu_end(now);
                self.transmit(s);
            }
            NodeEvent::TeardownDone => {
                match &mut self.radio {
                    Radio::Esb(l) => l.power_off(now),
                    Radio::Ble(l) => {
                        l.power_off(now);
                        self.ble_gen += 1;
                    }
                }
                self.mcu = Mcu::Off;
            }
            NodeEvent::Esb(e) => {
                let Radio::Esb(link) = &mut self.radio else { unreachable!() };
                let mut sink = Scoped::new(s, RADIO, NodeEvent::Esb);
                link.handle(&mut sink, e);
                for o in link.take_outputs() {
                    if let EsbOutput::Delivered { payload, .. } = o {
                        self.delivered += (payload.len() / self.scn.word_bytes) as u64;
                    }
                }
                if self.mcu == Mcu::Transmitting && link.is_quiescent() {
                    self.start_teardown(s);
                }
            }
            NodeEvent::Ble(gen, e) => {
                if gen != self.ble_gen {
                    return;
                }
                let Radio::Ble(link) = &mut self.radio else { unreachable!() };
                let mut sink = Scoped::new(s, RADIO, move |e| NodeEvent::Ble(gen, e));
                link.handle(&mut sink, e);
                let mut connected = false;
                let mut burst_done = false;
                for o in link.take_outputs() {
                    match o {
                        BleOutput::Delivered { payload_len, .. } => {
                            self.delivered += (payload_len / self.scn.word_bytes) as u64;
                            burst_done = true;
                        }
                        BleOutput::Connected { .. } => connected = true,
                        _ => {}
                    }
                }
                if self.scn.mode == CommMode::BleOnOff && self.mcu == Mcu::Transmitting {
                    if connected {
                        self.send_burst(s);
                    } else if burst_done {
                        self.start_teardown(s);
                    }
                }
            }
        }
    }

    fn rec_mut(&mut self) -> &mut crate::energy::PowerRecorder {
        match &mut self.radio {
            Radio::Ble(l) => l.recorder_mut(),
            Radio::Esb(l) => l.recorder_mut(),
        }
    }

    fn on_interrupt(&mut self, s: &mut Scheduler<NodeEvent>) {
        let on_off = matches!(self.scn.mode, CommMode::EsbOnOff | CommMode::BleOnOff);
        match self.mcu {
            Mcu::Idle => self.start_read(s),
            Mcu::Off => {
                self.mcu = Mcu::Waking;
                let now = s.now();
                match &mut self.radio {
                    Radio::Esb(l) => l.power_on(now),
                    Radio::Ble(l) => l.recorder_mut().set_floor(now, PowerState::IdleStandby),
                }
                self.rec_mut().cpu_begin(now);
                s.schedule_in(Micros(self.cal.sensor.onoff_wake_init_us), ActorId(0), NodeEvent::WakeDone);
            }
            // The wake-up line is only armed in system off; an edge while awake is lost.
            _ if on_off => self.missed += 1,
            _ => self.irq_latched = true,
        }
    }

    fn start_read(&mut self, s: &mut Scheduler<NodeEvent>) {
        let now = s.now();
        self.burst_words = self.fifo.drain();
        self.mcu = Mcu::Reading;
        self.rec_mut().set_spi(now, true);
        self.sensor
            .push(now, PowerState::SensorRead, self.cal.sensor.sensor_power.sensor_read_mw);
        let us = self.burst_words as u64 * self.cal.sensor.spi_us_per_word;
        s.schedule_in(Micros(us), ActorId(0), NodeEvent::SpiDone);
    }

    fn transmit(&mut self, s: &mut Scheduler<NodeEvent>) {
        match self.scn.mode {
            CommMode::BleOnOff => {
                self.mcu = Mcu::Transmitting;
                let gen = self.ble_gen;
                let Radio::Ble(link) = &mut self.radio else { unreachable!() };
                let mut sink = Scoped::new(s, RADIO, move |e| NodeEvent::Ble(gen, e));
                link.start_discovery(&mut sink);
            }
            _ => self.send_burst(s),
        }
    }

    fn send_burst(&mut self, s: &mut Scheduler<NodeEvent>) {
        let bytes = self.burst_words * self.scn.word_bytes;
        let words = self.burst_words as u64;
        let sent = match &mut self.radio {
            Radio::Esb(link) => {
                let mut sink = Scoped::new(s, RADIO, NodeEvent::Esb);
                link.send(&mut sink, vec![0x5a; bytes]).is_ok()
            }
            Radio::Ble(link) => {
                let gen = self.ble_gen;
                let mut sink = Scoped::new(s, RADIO, move |e| NodeEvent::Ble(gen, e));
                link.notify(&mut sink, bytes).is_ok()
            }
        };
        if !sent {
            self.failed += words;
        }
        match self.scn.mode {
            CommMode::EsbOnOff | CommMode::BleOnOff => self.mcu = Mcu::Transmitting,
            _ => {
                self.mcu = Mcu::Idle;
                if std::mem::take(&mut self.irq_latched) {
                    self.start_read(s);
                }
            }
        }
    }

    fn start_teardown(&mut self, s: &mut Scheduler<NodeEvent>) {
        self.mcu = Mcu::Teardown;
        s.schedule_in(Micros(self.cal.sensor.onoff_teardown_us), ActorId(0), NodeEvent::TeardownDone);
    }
}

/// Runs a scenario after validating it.
pub fn run_scenario(scn: &Scenario, cal: &CalibrationSet, seed: u64) -> Result<ScenarioOutcome> {
    validate(scn.mode, scn.threshold)?;
    run_scenario_unchecked(scn, cal, seed)
}

/// Runs a scenario even if it is a rejected configuration, to expose how it fails.
pub fn run_scenario_unchecked(scn: &Scenario, cal: &CalibrationSet, seed: u64) -> Result<ScenarioOutcome> {
    if scn.sample_rate_hz == 0 || scn.word_bytes == 0 || scn.duration_s.is_nan() || scn.duration_s <= 0.0 {
        return Err(SimError::InvalidConfig(
            "scenario needs a positive sample rate, word size and duration".into(),
        ));
    }
    let fifo = FifoBuffer::new(scn.threshold)?;
    let start = SimTime::ZERO;
    let end = SimTime::from_micros((scn.duration_s * 1e6).round() as u64);
    let sensor = PowerTrace::new(start, PowerState::IdleStandby, cal.sensor.sensor_power.idle_standby_mw);
    let mut sched: Scheduler<NodeEvent> = Scheduler::new();

    let radio = match scn.mode {
        CommMode::BleConnection | CommMode::BleOnOff => {
            let mut bc = cal.ble.clone();
            bc.power.idle_standby_mw += cal.sensor.ble_idle_overhead_mw;
            let link = if scn.mode == CommMode::BleConnection {
                let mut l = BleLink::new_connected(BleConfig::default(), bc, ChannelState::lossless(), start, seed)?;
                let mut sink = Scoped::new(&mut sched, RADIO, |e| NodeEvent::Ble(0, e));
                l.start(&mut sink);
                l
            } else {
                BleLink::new_off(BleConfig::default(), bc, ChannelState::lossless(), start, seed)?
            };
            Radio::Ble(link)
        }
        CommMode::EsbStandby | CommMode::EsbOnOff => {
            let mut ec = cal.esb.clone();
            ec.power.idle_standby_mw += cal.sensor.esb_idle_overhead_mw;
            let link = if scn.mode == CommMode::EsbStandby {
                EsbLink::new(EsbConfig::default(), ec, ChannelState::lossless(), start)?
            } else {
                EsbLink::new_off(EsbConfig::default(), ec, ChannelState::lossless(), start)?
            };
            Radio::Esb(link)
        }
    };
    let mcu = match scn.mode {
        CommMode::EsbOnOff | CommMode::BleOnOff => Mcu::Off,
        _ => Mcu::Idle,
    };
    let mut node = Node {
        scn: scn.clone(),
        cal: cal.clone(),
        fifo,
        mcu,
        radio,
        ble_gen: 0,
        irq_latched: false,
        burst_words: 0,
        sensor,
        sample_index: 0,
        produced: 0,
        delivered: 0,
        failed: 0,
        interrupts: 0,
        missed: 0,
    };
    // First sample one period in.
    node.sample_index = 1;
    sched.schedule(node.sample_time(1), ActorId(0), NodeEvent::Sample);
    sched.run_until(end, |s, ev| node.handle(s, ev.kind));

    let mcu_trace = match node.radio {
        Radio::Ble(l) => l.recorder().snapshot(end),
        Radio::Esb(l) => l.recorder().snapshot(end),
    };
    let mut sensor_trace = node.sensor;
    sensor_trace.close(end);
    let overflow = node.fifo.overflow_events;
    let settled = node.delivered + overflow + node.failed;
    let result = ScenarioResult {
        mode: scn.mode,
        threshold: scn.threshold,
        duration_s: scn.duration_s,
        mcu_avg_mw: mcu_trace.average_power(start, end)?,
        sensor_avg_mw: sensor_trace.average_power(start, end)?,
        overflow_events: overflow,
        missed_interrupts: node.missed,
        interrupts: node.interrupts,
        samples_produced: node.produced,
        samples_delivered: node.delivered,
        samples_failed: node.failed,
        completeness: if settled == 0 {
            1.0
        } else {
            node.delivered as f64 / settled as f64
        },
    };
    Ok(ScenarioOutcome {
        result,
        mcu_trace,
        sensor_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(mode: CommMode, threshold: usize) -> ScenarioResult {
        let scn = Scenario {
            mode,
            threshold,
            duration_s: 10.0,
            ..Scenario::default()
        };
        run_scenario_unchecked(&scn, &CalibrationSet::nominal(), 1).unwrap().result
    }

    #[test]
    fn full_fifo_interrupt_at_250_ms() {
        let mut fifo = FifoBuffer::new(32).unwrap();
        let period_sum: u64 = (1..=32u64).map(|k| k * 1_000_000 / 128 - (k - 1) * 1_000_000 / 128).sum();
        assert_eq!(period_sum, 250_000);
        for _ in 0..31 {
            assert_eq!(fifo.push(), SampleOutcome::Buffered);
        }
        assert_eq!(fifo.push(), SampleOutcome::InterruptRaised);
        assert_eq!(fifo.push(), SampleOutcome::Overflowed);
        assert_eq!(fifo.overflow_events, 1);
        assert_eq!(fifo.count, 32);
    }

    #[test]
    fn threshold_one_interrupts_every_sample() {
        let mut fifo = FifoBuffer::new(1).unwrap();
        for _ in 0..5 {
            assert_eq!(fifo.push(), SampleOutcome::InterruptRaised);
            assert_eq!(fifo.drain(), 1);
        }
    }

    #[test]
    fn sample_periods_alternate() {
        let periods: Vec<u64> = (1..=4u64)
            .map(|k| k * 1_000_000 / 128 - (k - 1) * 1_000_000 / 128)
            .collect();
        assert_eq!(periods, vec![7812, 7813, 7812, 7813]);
    }

    #[test]
    fn on_off_window_is_three_to_thirty_one() {
        let ok: Vec<usize> = (1..=32).filter(|t| validate(CommMode::EsbOnOff, *t).is_ok()).collect();
        assert_eq!(ok, (3..=31).collect::<Vec<_>>());
        assert!(validate(CommMode::BleOnOff, 16).is_err());
        assert!(validate(CommMode::EsbStandby, 0).is_err());
    }

    #[test]
    fn on_off_threshold_two_stalls() {
        let r = short(CommMode::EsbOnOff, 2);
        assert!(r.missed_interrupts >= 1);
        assert!(r.overflow_events > 1000, "{r:?}");
    }

    #[test]
    fn on_off_threshold_32_overflows_in_init() {
        let r = short(CommMode::EsbOnOff, 32);
        assert_eq!(r.missed_interrupts, 0);
        assert!(r.overflow_events > 0 && r.overflow_events <= 2 * r.interrupts);
    }

    #[test]
    fn on_off_threshold_31_is_clean() {
        let r = short(CommMode::EsbOnOff, 31);
        assert_eq!(r.overflow_events, 0);
        assert_eq!(r.completeness, 1.0);
    }

    #[test]
    fn ble_reconnecting_overflows() {
        let r = short(CommMode::BleOnOff, 16);
        assert!(r.overflow_events > 0);
        assert!(run_scenario(
            &Scenario {
                mode: CommMode::BleOnOff,
                ..Scenario::default()
            },
            &CalibrationSet::nominal(),
            1
        )
        .is_err());
    }

    #[test]
    fn always_on_modes_are_complete() {
        for mode in [CommMode::BleConnection, CommMode::EsbStandby] {
            for t in [1, 7, 32] {
                let r = short(mode, t);
                assert_eq!(r.overflow_events, 0);
                assert_eq!(r.completeness, 1.0, "{mode:?} {t}");
            }
        }
    }
}
