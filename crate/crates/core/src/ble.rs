//! BLE connection between a central (the collector) and a peripheral (the measured
//! device), modeled at the link layer.
//!
//! Connection events (CEs) start at fixed anchors one interval apart. In each CE the
//! central sends first and the peripheral answers after one inter-frame space; the
//! exchange repeats while either side has data, up to a controller cap on data PDUs
//! per event. Acknowledgement uses the sn/nesn bits, so a lost frame closes the
//! event and is retransmitted in the next one. Peripheral notifications are the
//! forward direction; central writes are the reverse direction.
//!
//! Discovery (advertising, connection request and setup) runs on the same link so
//! that its energy lands on the same trace as the data that follows.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::calibration::BleCalibration;
use crate::energy::{PowerRecorder, PowerState};
use crate::error::{Result, SimError};
use crate::phy::{on_air_time, ChannelState, Delivery, FrameKind, FrameOverhead, PhyMode, BLE_MAX_APP_PAYLOAD};
use crate::rng::RngStream;
use crate::sim::{EventSink, Scheduler};
use crate::time::{Micros, SimTime};

/// Inter-frame space.
pub const T_IFS_US: u64 = 150;
/// Base advertising interval, before the random delay.
pub const ADV_INTERVAL_US: u64 = 20_000;
/// Delay from the end of the connecting advertising event to the first anchor.
pub const TRANSMIT_WINDOW_DELAY_US: u64 = 1_250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleConfig {
    pub phy: PhyMode,
    pub conn_interval_us: u64,
    pub supervision_timeout_us: u64,
    /// Notifications the peripheral host may have outstanding before it is told to back off.
    pub tx_queue_depth: usize,
    pub tx_power_dbm: i32,
}

impl Default for BleConfig {
    fn default() -> Self {
        BleConfig {
            phy: PhyMode::Ble2M,
            conn_interval_us: 7_500,
            supervision_timeout_us: 4_000_000,
            tx_queue_depth: 8,
            tx_power_dbm: 8,
        }
    }
}

impl BleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phy.protocol() != crate::phy::Protocol::Ble {
            return Err(SimError::InvalidConfig(format!("{} is not a BLE PHY", self.phy)));
        }
        if !self.conn_interval_us.is_multiple_of(1_250) || !(7_500..=4_000_000).contains(&self.conn_interval_us) {
            return Err(SimError::InvalidConfig(format!(
                "connection interval {} us must be a multiple of 1250 in [7500, 4000000]",
                self.conn_interval_us
            )));
        }
        if self.supervision_timeout_us <= 2 * self.conn_interval_us {
            return Err(SimError::InvalidConfig(
                "supervision timeout must exceed two connection intervals".into(),
            ));
        }
        if self.tx_queue_depth == 0 {
            return Err(SimError::InvalidConfig("tx queue depth must be positive".into()));
        }
        Ok(())
    }

    /// Air time of a data PDU carrying `payload` application bytes.
    pub fn data_air(&self, payload: usize) -> Micros {
        on_air_time(self.phy, payload, &FrameOverhead::ble_notification(self.phy)).expect("payload validated")
    }

    pub fn empty_air(&self) -> Micros {
        on_air_time(self.phy, 0, &FrameOverhead::ble_link(self.phy)).expect("empty PDU fits")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BleLinkState {
    Off,
    Initializing,
    Advertising,
    Connecting,
    Connected,
    Disconnected,
}

/// Summary of one connection event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionEventReport {
    pub index: u64,
    pub anchor: SimTime,
    pub forward_pdus: u32,
    pub reverse_pdus: u32,
    pub closed_by_loss: bool,
    pub radio_end: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BleOutput {
    /// Discovery milestones.
    AdvertisingStarted { at: SimTime },
    ConnectRequest { at: SimTime },
    Connected { at: SimTime },
    Disconnected { at: SimTime },
    /// Notification handed to the central application.
    Delivered {
        id: u64,
        payload_len: usize,
        sent_at: SimTime,
        at: SimTime,
    },
    /// Central write handed to the peripheral application.
    ReverseDelivered {
        id: u64,
        payload_len: usize,
        sent_at: SimTime,
        at: SimTime,
    },
    ConnectionEvent(ConnectionEventReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleEvent {
    InitCpuDone,
    InitDone,
    AdvEvent,
    AdvStep(u32),
    AdvCpuDone,
    SetupCpuDone,
    CeStart,
    CentralPdu,
    CentralPduEnd,
    PeripheralPdu,
    PeripheralPduEnd,
    CeEnd,
    Enqueue,
    CentralEnqueue,
    CpuDone,
}

#[derive(Debug, Clone)]
struct Frame {
    id: u64,
    len: usize,
    sent_at: SimTime,
}

#[derive(Debug, Clone)]
struct Pdu {
    sn: bool,
    nesn: bool,
    data: Option<Frame>,
    /// Closing acknowledgement from the central; carries no sequence number and gets no reply.
    ack_only: bool,
}

impl Pdu {
    fn len(&self) -> Option<usize> {
        self.data.as_ref().map(|f| f.len)
    }
}

/// One side's sn/nesn state and its unacknowledged PDU.
#[derive(Debug, Default)]
struct Seq {
    sn: bool,
    nesn: bool,
    unacked: Option<Pdu>,
    queue: VecDeque<Frame>,
}

impl Seq {
    fn pending_data(&self) -> usize {
        self.queue.len() + usize::from(self.unacked.as_ref().is_some_and(|p| p.data.is_some()))
    }

    /// Next PDU: the unacknowledged one again, or a new one with data if `allow_data`.
    fn next_pdu(&mut self, allow_data: bool) -> Pdu {
        if let Some(p) = &mut self.unacked {
            p.nesn = self.nesn;
            return p.clone();
        }
        let data = if allow_data { self.queue.pop_front() } else { None };
        let p = Pdu {
            sn: self.sn,
            nesn: self.nesn,
            data,
            ack_only: false,
        };
        self.unacked = Some(p.clone());
        p
    }

    /// Processes a received PDU; returns newly accepted data.
    fn receive(&mut self, p: &Pdu) -> Option<Frame> {
        if p.nesn != self.sn && self.unacked.is_some() {
            self.unacked = None;
            self.sn = !self.sn;
        }
        if p.ack_only || p.sn != self.nesn {
            return None;
        }
        self.nesn = !self.nesn;
        p.data.clone()
    }
}

pub struct BleLink {
    pub cfg: BleConfig,
    pub cal: BleCalibration,
    pub channel: ChannelState,
    rec: PowerRecorder,
    rng: RngStream,
    state: BleLinkState,
    central: Seq,
    peripheral: Seq,
    staging: VecDeque<Frame>,
    central_staging: VecDeque<Frame>,
    next_id: u64,
    // Connection-event bookkeeping.
    anchor: SimTime,
    ce_index: u64,
    ce_used: u32,
    ce_fwd: u32,
    ce_rev: u32,
    ce_lost: bool,
    in_flight: Option<Pdu>,
    last_central_rx: SimTime,
    setup_left: u32,
    setup_cpu_done: bool,
    closing: bool,
    // Discovery bookkeeping.
    adv_started: SimTime,
    adv_connecting: bool,
    outputs: Vec<BleOutput>,
    pub forward_retransmissions: u64,
}

impl BleLink {
    /// A link that is already connected; the first anchor falls one ramp-up after `start`.
    pub fn new_connected(
        cfg: BleConfig,
        cal: BleCalibration,
        channel: ChannelState,
        start: SimTime,
        seed: u64,
    ) -> Result<Self> {
        let mut link = Self::build(cfg, cal, channel, start, seed, PowerState::IdleStandby)?;
        link.state = BleLinkState::Connected;
        link.anchor = start + Micros(link.cal.ramp_up_us);
        link.last_central_rx = start;
        Ok(link)
    }

    /// A powered-off peripheral; [`BleLink::start_discovery`] brings it up.
    pub fn new_off(cfg: BleConfig, cal: BleCalibration, channel: ChannelState, start: SimTime, seed: u64) -> Result<Self> {
        Self::build(cfg, cal, channel, start, seed, PowerState::SystemOff)
    }

    fn build(
        cfg: BleConfig,
        cal: BleCalibration,
        channel: ChannelState,
        start: SimTime,
        seed: u64,
        floor: PowerState,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(BleLink {
            rec: PowerRecorder::new(cal.power, start, floor),
            rng: RngStream::new(seed, "ble/advertising"),
            cfg,
            cal,
            channel,
            state: BleLinkState::Off,
            central: Seq::default(),
            peripheral: Seq::default(),
            staging: VecDeque::new(),
            central_staging: VecDeque::new(),
            next_id: 0,
            anchor: start,
            ce_index: 0,
            ce_used: 0,
            ce_fwd: 0,
            ce_rev: 0,
            ce_lost: false,
            in_flight: None,
            last_central_rx: start,
            setup_left: 0,
            setup_cpu_done: false,
            closing: false,
            adv_started: start,
            adv_connecting: false,
            outputs: Vec::new(),
            forward_retransmissions: 0,
        })
    }

    /// Schedules the first connection event of a connected link.
    pub fn start<S: EventSink<BleEvent>>(&mut self, sink: &mut S) {
        assert_eq!(self.state, BleLinkState::Connected);
        let at = self.anchor - Micros(self.cal.ramp_up_us);
        sink.schedule_at(at, BleEvent::CeStart);
    }

    /// Drops the connection and powers down. Events already scheduled for this link
    /// must be discarded by the caller.
    pub fn power_off(&mut self, now: SimTime) {
        self.state = BleLinkState::Off;
        self.central = Seq::default();
        self.peripheral = Seq::default();
        self.staging.clear();
        self.central_staging.clear();
        self.in_flight = None;
        self.closing = false;
        self.rec.set_radio(now, None);
        while self.rec.cpu_busy() {
            self.rec.cpu_end(now);
        }
        self.rec.set_floor(now, PowerState::SystemOff);
    }

    pub fn state(&self) -> BleLinkState {
        self.state
    }

    pub fn recorder(&self) -> &PowerRecorder {
        &self.rec
    }

    pub fn recorder_mut(&mut self) -> &mut PowerRecorder {
        &mut self.rec
    }

    pub fn take_outputs(&mut self) -> Vec<BleOutput> {
        std::mem::take(&mut self.outputs)
    }

    /// Anchor of the current (or next) connection event.
    pub fn anchor(&self) -> SimTime {
        self.anchor
    }

    /// Notifications accepted but not yet acknowledged by the central.
    pub fn outstanding(&self) -> usize {
        self.staging.len() + self.peripheral.pending_data()
    }

    /// GATT notification from the peripheral application.
    pub fn notify<S: EventSink<BleEvent>>(&mut self, sink: &mut S, payload_len: usize) -> Result<u64> {
        if payload_len > BLE_MAX_APP_PAYLOAD {
            return Err(SimError::PayloadTooLarge {
                protocol: "BLE",
                len: payload_len,
                max: BLE_MAX_APP_PAYLOAD,
            });
        }
        if self.state != BleLinkState::Connected {
            return Err(SimError::NotConnected);
        }
        if self.outstanding() >= self.cfg.tx_queue_depth {
            return Err(SimError::QueueFull {
                depth: self.cfg.tx_queue_depth,
            });
        }
        let id = self.take_id();
        self.staging.push_back(Frame {
            id,
            len: payload_len,
            sent_at: sink.now(),
        });
        sink.schedule_in(Micros(self.cal.stack_delay_us), BleEvent::Enqueue);
        if self.cal.cpu_per_packet_us > 0 {
            self.rec.cpu_begin(sink.now());
            sink.schedule_in(Micros(self.cal.cpu_per_packet_us), BleEvent::CpuDone);
        }
        Ok(id)
    }

    /// Write without response from the central application (reverse direction).
    pub fn central_write<S: EventSink<BleEvent>>(&mut self, sink: &mut S, payload_len: usize) -> Result<u64> {
        if payload_len > BLE_MAX_APP_PAYLOAD {
            return Err(SimError::PayloadTooLarge {
                protocol: "BLE",
                len: payload_len,
                max: BLE_MAX_APP_PAYLOAD,
            });
        }
        if self.state != BleLinkState::Connected {
            return Err(SimError::NotConnected);
        }
        if self.central_staging.len() + self.central.pending_data() >= self.cfg.tx_queue_depth {
            return Err(SimError::QueueFull {
                depth: self.cfg.tx_queue_depth,
            });
        }
        let id = self.take_id();
        self.central_staging.push_back(Frame {
            id,
            len: payload_len,
            sent_at: sink.now(),
        });
        sink.schedule_in(Micros(self.cal.stack_delay_us), BleEvent::CentralEnqueue);
        Ok(id)
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Powers up, initializes, advertises, accepts a connection and runs setup.
    pub fn start_discovery<S: EventSink<BleEvent>>(&mut self, sink: &mut S) {
        assert_eq!(self.state, BleLinkState::Off, "discovery from a powered link");
        let now = sink.now();
        self.state = BleLinkState::Initializing;
        self.rec.set_floor(now, PowerState::IdleStandby);
        self.rec.cpu_begin(now);
        sink.schedule_in(Micros(self.cal.init_cpu_us), BleEvent::InitCpuDone);
    }

    fn max_pdu_air(&self) -> Micros {
        self.cfg.data_air(BLE_MAX_APP_PAYLOAD)
    }

    /// Whether one more exchange starting at `t` ends before the next event's ramp-up.
    fn exchange_fits(&self, t: SimTime) -> bool {
        let size = |has_data: bool| if has_data { self.max_pdu_air() } else { self.cfg.empty_air() };
        let end = t
            + Micros(T_IFS_US)
            + size(self.central_would_send_data())
            + Micros(T_IFS_US)
            + size(self.forward_backlog() > 0)
            + Micros(T_IFS_US)
            + self.cfg.empty_air()
            + Micros(self.cal.ramp_down_us + self.cal.ce_guard_us);
        let next_ramp = self.anchor + Micros(self.cfg.conn_interval_us) - Micros(self.cal.ramp_up_us);
        end <= next_ramp
    }

    fn end_ce<S: EventSink<BleEvent>>(&mut self, sink: &mut S) {
        self.rec.set_radio(sink.now(), Some(PowerState::RadioRamp));
        sink.schedule_in(Micros(self.cal.ramp_down_us), BleEvent::CeEnd);
    }

    pub fn handle<S: EventSink<BleEvent>>(&mut self, sink: &mut S, ev: BleEvent) {
        let now = sink.now();
        match ev {
            BleEvent::InitCpuDone => {
                self.rec.cpu_end(now);
                sink.schedule_in(Micros(self.cal.init_wait_us), BleEvent::InitDone);
            }
            BleEvent::InitDone => {
                self.state = BleLinkState::Advertising;
                self.adv_started = now;
                self.outputs.push(BleOutput::AdvertisingStarted { at: now });
                sink.schedule_at(now, BleEvent::AdvEvent);
            }
            BleEvent::AdvEvent => {
                // The scanner hears every event; it connects once its host is ready.
                self.adv_connecting = now >= self.adv_started + Micros(self.cal.host_connect_delay_us);
                self.rec.cpu_begin(now);
                sink.schedule_in(Micros(self.cal.adv_event_cpu_us), BleEvent::AdvCpuDone);
                self.rec.set_radio(now, Some(PowerState::RadioRamp));
                sink.schedule_in(Micros(self.cal.ramp_up_us), BleEvent::AdvStep(0));
                if !self.adv_connecting {
                    let delay = ADV_INTERVAL_US + self.rng.uniform_u64(0, self.cal.adv_jitter_max_us);
                    sink.schedule_in(Micros(delay), BleEvent::AdvEvent);
                }
            }
            BleEvent::AdvCpuDone => self.rec.cpu_end(now),
            BleEvent::AdvStep(i) => {
                let steps = 2 * self.cal.adv_channels;
                if i < steps && i % 2 == 0 {
                    let air = on_air_time(
                        PhyMode::Ble1M,
                        self.cal.adv_pdu_bytes as usize,
                        &FrameOverhead::ble_link(PhyMode::Ble1M),
                    )
                    .expect("advertising PDU fits");
                    self.rec.set_radio(now, Some(PowerState::RadioTx));
                    sink.schedule_in(air, BleEvent::AdvStep(i + 1));
                } else if i < steps {
                    self.rec.set_radio(now, Some(PowerState::RadioRx));
                    sink.schedule_in(Micros(self.cal.adv_rx_window_us), BleEvent::AdvStep(i + 1));
                } else if i == steps {
                    self.rec.set_radio(now, Some(PowerState::RadioRamp));
                    sink.schedule_in(Micros(self.cal.ramp_down_us), BleEvent::AdvStep(i + 1));
                } else {
                    self.rec.set_radio(now, None);
                    if self.adv_connecting {
                        self.state = BleLinkState::Connecting;
                        self.outputs.push(BleOutput::ConnectRequest { at: now });
                        self.setup_left = self.cal.conn_setup_events;
                        self.setup_cpu_done = false;
                        self.anchor = now + Micros(TRANSMIT_WINDOW_DELAY_US + self.cal.ramp_up_us);
                        self.last_central_rx = now;
                        self.rec.cpu_begin(now);
                        sink.schedule_in(Micros(self.cal.conn_setup_cpu_us), BleEvent::SetupCpuDone);
                        sink.schedule_at(now + Micros(TRANSMIT_WINDOW_DELAY_US), BleEvent::CeStart);
                    }
                }
            }
            BleEvent::SetupCpuDone => {
                self.rec.cpu_end(now);
                self.setup_cpu_done = true;
                self.maybe_finish_setup(now);
            }
            BleEvent::CpuDone => self.rec.cpu_end(now),
            BleEvent::Enqueue => {
                let f = self.staging.pop_front().expect("staged notification");
                self.peripheral.queue.push_back(f);
            }
            BleEvent::CentralEnqueue => {
                let f = self.central_staging.pop_front().expect("staged write");
                self.central.queue.push_back(f);
            }
            BleEvent::CeStart => {
                if now.since(self.last_central_rx) > Micros(self.cfg.supervision_timeout_us) {
                    self.state = BleLinkState::Disconnected;
                    self.outputs.push(BleOutput::Disconnected { at: now });
                    return;
                }
                self.ce_used = 0;
                self.ce_fwd = 0;
                self.ce_rev = 0;
                self.ce_lost = false;
                self.rec.set_radio(now, Some(PowerState::RadioRamp));
                sink.schedule_at(self.anchor, BleEvent::CentralPdu);
            }
            BleEvent::CentralPdu if self.closing => {
                self.closing = false;
                let ack = Pdu {
                    sn: self.central.sn,
                    nesn: self.central.nesn,
                    data: None,
                    ack_only: true,
                };
                self.send_pdu(sink, ack, PowerState::RadioRx, BleEvent::CentralPduEnd);
            }
            BleEvent::CentralPdu => {
                let allow = self.state == BleLinkState::Connected && self.reverse_allowed();
                let pdu = self.central.next_pdu(allow);
                self.send_pdu(sink, pdu, PowerState::RadioRx, BleEvent::CentralPduEnd);
            }
            BleEvent::CentralPduEnd => {
                let pdu = self.in_flight.take().expect("central PDU in flight");
                if self.channel.deliver(self.cfg.phy, FrameKind::Data) == Delivery::Lost {
                    self.ce_lost = true;
                    self.end_ce(sink);
                    return;
                }
                self.last_central_rx = now;
                if let Some(f) = self.peripheral.receive(&pdu) {
                    self.outputs.push(BleOutput::ReverseDelivered {
                        id: f.id,
                        payload_len: f.len,
                        sent_at: f.sent_at,
                        at: now + Micros(self.cal.rx_processing_us),
                    });
                }
                if pdu.ack_only {
                    self.end_ce(sink);
                } else {
                    self.rec.set_radio(now, Some(PowerState::RadioRamp));
                    sink.schedule_in(Micros(T_IFS_US), BleEvent::PeripheralPdu);
                }
            }
            BleEvent::PeripheralPdu => {
                let allow = self.state == BleLinkState::Connected && self.ce_used < self.cal.max_data_pdus_per_ce;
                let resend = self.peripheral.unacked.as_ref().is_some_and(|p| p.data.is_some());
                let pdu = self.peripheral.next_pdu(allow);
                if resend {
                    self.forward_retransmissions += 1;
                }
                self.send_pdu(sink, pdu, PowerState::RadioTx, BleEvent::PeripheralPduEnd);
            }
            BleEvent::PeripheralPduEnd => {
                let pdu = self.in_flight.take().expect("peripheral PDU in flight");
                self.rec.set_radio(now, Some(PowerState::RadioRamp));
                if self.channel.deliver(self.cfg.phy, FrameKind::Data) == Delivery::Lost {
                    self.ce_lost = true;
                    self.end_ce(sink);
                    return;
                }
                if let Some(f) = self.central.receive(&pdu) {
                    self.outputs.push(BleOutput::Delivered {
                        id: f.id,
                        payload_len: f.len,
                        sent_at: f.sent_at,
                        at: now + Micros(self.cal.rx_processing_us),
                    });
                }
                let more = self.forward_backlog() > 0 || self.central.pending_data() > 0;
                let room = self.ce_used < self.cal.max_data_pdus_per_ce && self.exchange_fits(now);
                if self.state == BleLinkState::Connected && more && room {
                    sink.schedule_in(Micros(T_IFS_US), BleEvent::CentralPdu);
                } else if pdu.data.is_some() {
                    // Acknowledge the last notification, then close the event.
                    self.closing = true;
                    sink.schedule_in(Micros(T_IFS_US), BleEvent::CentralPdu);
                } else {
                    self.end_ce(sink);
                }
            }
            BleEvent::CeEnd => {
                self.rec.set_radio(now, None);
                self.outputs.push(BleOutput::ConnectionEvent(ConnectionEventReport {
                    index: self.ce_index,
                    anchor: self.anchor,
                    forward_pdus: self.ce_fwd,
                    reverse_pdus: self.ce_rev,
                    closed_by_loss: self.ce_lost,
                    radio_end: now,
                }));
                self.ce_index += 1;
                if self.state == BleLinkState::Connecting && self.setup_left > 0 {
                    self.setup_left -= 1;
                    self.maybe_finish_setup(now);
                }
                self.anchor += Micros(self.cfg.conn_interval_us);
                sink.schedule_at(self.anchor - Micros(self.cal.ramp_up_us), BleEvent::CeStart);
            }
        }
    }

    /// Forward traffic is served first; reverse fills what is left of the cap.
    fn reverse_allowed(&self) -> bool {
        let budget = self.cal.max_data_pdus_per_ce.saturating_sub(self.ce_used) as usize;
        budget > self.forward_backlog().min(budget)
    }

    fn central_would_send_data(&self) -> bool {
        match &self.central.unacked {
            Some(p) => p.data.is_some(),
            None => !self.central.queue.is_empty() && self.reverse_allowed(),
        }
    }

    /// Notifications the central has not yet accepted.
    fn forward_backlog(&self) -> usize {
        let unreceived = self
            .peripheral
            .unacked
            .as_ref()
            .is_some_and(|p| p.data.is_some() && p.sn == self.central.nesn);
        self.peripheral.queue.len() + usize::from(unreceived)
    }

    fn maybe_finish_setup(&mut self, now: SimTime) {
        if self.state == BleLinkState::Connecting && self.setup_left == 0 && self.setup_cpu_done {
            self.state = BleLinkState::Connected;
            self.outputs.push(BleOutput::Connected { at: now });
        }
    }

    fn send_pdu<S: EventSink<BleEvent>>(&mut self, sink: &mut S, pdu: Pdu, radio: PowerState, done: BleEvent) {
        let air = match pdu.len() {
            Some(n) => {
                self.ce_used += 1;
                if radio == PowerState::RadioTx {
                    self.ce_fwd += 1;
                } else {
                    self.ce_rev += 1;
                }
                self.cfg.data_air(n)
            }
            None => self.cfg.empty_air(),
        };
        self.rec.set_radio(sink.now(), Some(radio));
        self.in_flight = Some(pdu);
        sink.schedule_in(air, done);
    }
}

/// Runs the link's events up to `until`, returning everything it reported.
pub fn drive(link: &mut BleLink, sched: &mut Scheduler<BleEvent>, until: SimTime) -> Vec<BleOutput> {
    let mut out = Vec::new();
    sched.run_until(until, |s, ev| {
        link.handle(s, ev.kind);
        out.extend(link.take_outputs());
    });
    out
}
