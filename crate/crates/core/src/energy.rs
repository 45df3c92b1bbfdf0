//! Piecewise-constant power model.
//!
//! A device's draw is recorded as a [`PowerTrace`]: time-sorted segments, each
//! holding one [`PowerState`] until the next segment starts. Energy over a
//! window is the exact sum of power × dwell; there is no quadrature error.
//! Internally energies are accumulated as integer femtojoules (nW × µs) so that
//! splitting a window never changes the total.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PowerState {
    SystemOff,
    IdleStandby,
    CpuActive,
    RadioRamp,
    RadioTx,
    RadioRx,
    SensorRead,
}

impl PowerState {
    pub fn name(self) -> &'static str {
        match self {
            PowerState::SystemOff => "SystemOff",
            PowerState::IdleStandby => "IdleStandby",
            PowerState::CpuActive => "CpuActive",
            PowerState::RadioRamp => "RadioRamp",
            PowerState::RadioTx => "RadioTx",
            PowerState::RadioRx => "RadioRx",
            PowerState::SensorRead => "SensorRead",
        }
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Draw of each power state, in milliwatts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub system_off_mw: f64,
    pub idle_standby_mw: f64,
    pub cpu_active_mw: f64,
    pub radio_ramp_mw: f64,
    pub radio_tx_mw: f64,
    pub radio_rx_mw: f64,
    pub sensor_read_mw: f64,
}

impl PowerTable {
    pub fn power(&self, state: PowerState) -> f64 {
        match state {
            PowerState::SystemOff => self.system_off_mw,
            PowerState::IdleStandby => self.idle_standby_mw,
            PowerState::CpuActive => self.cpu_active_mw,
            PowerState::RadioRamp => self.radio_ramp_mw,
            PowerState::RadioTx => self.radio_tx_mw,
            PowerState::RadioRx => self.radio_rx_mw,
            PowerState::SensorRead => self.sensor_read_mw,
        }
    }

    /// Checks `SystemOff < IdleStandby < CpuActive < RadioTx` and positivity.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.system_off_mw,
            self.idle_standby_mw,
            self.cpu_active_mw,
            self.radio_ramp_mw,
            self.radio_tx_mw,
            self.radio_rx_mw,
            self.sensor_read_mw,
        ];
        if all.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(SimError::InvalidConfig(
                "power table entries must be positive".into(),
            ));
        }
        if !(self.system_off_mw < self.idle_standby_mw
            && self.idle_standby_mw < self.cpu_active_mw
            && self.cpu_active_mw < self.radio_tx_mw)
        {
            return Err(SimError::InvalidConfig(
                "power table must satisfy SystemOff < IdleStandby < CpuActive < RadioTx".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: SimTime,
    pub state: PowerState,
    pub power_mw: f64,
}

/// Time-ordered power-state dwells; each segment lasts until the next one
/// starts, and the last until `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    segments: Vec<Segment>,
    end: SimTime,
}

fn nanowatts(power_mw: f64) -> i128 {
    (power_mw * 1e6).round() as i128
}

impl PowerTrace {
    pub fn new(start: SimTime, state: PowerState, power_mw: f64) -> Self {
        PowerTrace {
            segments: vec![Segment {
                start,
                state,
                power_mw,
            }],
            end: start,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> SimTime {
        self.segments[0].start
    }

    pub fn end(&self) -> SimTime {
        self.end
    }

    /// Starts a new dwell at `at`. Consecutive identical states are merged.
    pub fn push(&mut self, at: SimTime, state: PowerState, power_mw: f64) {
        let last = self.segments.last_mut().expect("trace is never empty");
        assert!(at >= last.start, "power segments must be time ordered");
        self.end = self.end.max(at);
        if last.state == state && last.power_mw == power_mw {
            return;
        }
        if at == last.start {
            last.state = state;
            last.power_mw = power_mw;
            // The replaced segment may now equal its predecessor.
            let n = self.segments.len();
            if n >= 2
                && self.segments[n - 2].state == state
                && self.segments[n - 2].power_mw == power_mw
            {
                self.segments.pop();
            }
            return;
        }
        self.segments.push(Segment {
            start: at,
            state,
            power_mw,
        });
    }

    /// Extends coverage of the last segment to `at`.
    pub fn close(&mut self, at: SimTime) {
        assert!(at >= self.end, "cannot close a trace in the past");
        self.end = at;
    }

    fn check_window(&self, t0: SimTime, t1: SimTime) -> Result<()> {
        if t0 > t1 || t0 < self.start() || t1 > self.end {
            return Err(SimError::WindowOutsideTrace {
                t0,
                t1,
                start: self.start(),
                end: self.end,
            });
        }
        Ok(())
    }

    /// Exact energy in femtojoules (nW·µs).
    pub fn energy_fj(&self, t0: SimTime, t1: SimTime) -> Result<i128> {
        self.check_window(t0, t1)?;
        let mut total: i128 = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            let seg_end = self
                .segments
                .get(i + 1)
                .map(|s| s.start)
                .unwrap_or(self.end);
            let lo = seg.start.max(t0);
            let hi = seg_end.min(t1);
            if hi > lo {
                total += nanowatts(seg.power_mw) * i128::from((hi - lo).0);
            }
        }
        Ok(total)
    }

    /// Energy over `[t0, t1]` in microjoules.
    pub fn integrate(&self, t0: SimTime, t1: SimTime) -> Result<f64> {
        Ok(self.energy_fj(t0, t1)? as f64 / 1e9)
    }

    /// Mean power over `[t0, t1]` in milliwatts.
    pub fn average_power(&self, t0: SimTime, t1: SimTime) -> Result<f64> {
        let uj = self.integrate(t0, t1)?;
        let dt = (t1 - t0).0;
        if dt == 0 {
            return Err(SimError::InvalidConfig(
                "average power over an empty window".into(),
            ));
        }
        Ok(uj / (dt as f64 / 1_000.0))
    }

    /// Highest segment power that overlaps `[t0, t1)`.
    pub fn peak_power(&self, t0: SimTime, t1: SimTime) -> Result<f64> {
        self.check_window(t0, t1)?;
        let mut peak: f64 = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let seg_end = self
                .segments
                .get(i + 1)
                .map(|s| s.start)
                .unwrap_or(self.end);
            if seg_end > t0 && seg.start < t1 {
                peak = peak.max(seg.power_mw);
            }
        }
        Ok(peak)
    }

    /// Total dwell per state inside `[t0, t1]`.
    pub fn dwell(&self, state: PowerState, t0: SimTime, t1: SimTime) -> u64 {
        let mut total = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.state != state {
                continue;
            }
            let seg_end = self
                .segments
                .get(i + 1)
                .map(|s| s.start)
                .unwrap_or(self.end);
            let lo = seg.start.max(t0);
            let hi = seg_end.min(t1);
            if hi > lo {
                total += (hi - lo).0;
            }
        }
        total
    }

    /// Writes `t_us,state,power_mw` rows, one per segment.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_us", "state", "power_mw"])?;
        for seg in &self.segments {
            w.write_record([
                seg.start.micros().to_string(),
                seg.state.name().to_string(),
                format!("{:.6}", seg.power_mw),
            ])?;
        }
        w.write_record([
            self.end.micros().to_string(),
            "End".to_string(),
            String::new(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Builds a device trace from independent activity sources.
///
/// The device draws the highest-power state among its floor (standby or off),
/// the radio state (if any) and the CPU (if any task is running).
#[derive(Debug, Clone)]
pub struct PowerRecorder {
    table: PowerTable,
    floor: PowerState,
    radio: Option<PowerState>,
    cpu_tasks: u32,
    spi_active: bool,
    trace: PowerTrace,
}

impl PowerRecorder {
    pub fn new(table: PowerTable, start: SimTime, floor: PowerState) -> Self {
        PowerRecorder {
            table,
            floor,
            radio: None,
            cpu_tasks: 0,
            spi_active: false,
            trace: PowerTrace::new(start, floor, table.power(floor)),
        }
    }

    pub fn table(&self) -> &PowerTable {
        &self.table
    }

    pub fn trace(&self) -> &PowerTrace {
        &self.trace
    }

    pub fn into_trace(mut self, end: SimTime) -> PowerTrace {
        self.trace.close(end);
        self.trace
    }

    /// Closes the trace at `now` and returns a snapshot of it.
    pub fn snapshot(&self, now: SimTime) -> PowerTrace {
        let mut t = self.trace.clone();
        t.close(now.max(t.end()));
        t
    }

    pub fn effective_state(&self) -> PowerState {
        let mut best = self.floor;
        let mut consider = |s: PowerState| {
            if self.table.power(s) > self.table.power(best) {
                best = s;
            }
        };
        if let Some(r) = self.radio {
            consider(r);
        }
        if self.cpu_tasks > 0 {
            consider(PowerState::CpuActive);
        }
        if self.spi_active {
            consider(PowerState::SensorRead);
        }
        best
    }

    fn refresh(&mut self, now: SimTime) {
        let s = self.effective_state();
        self.trace.push(now, s, self.table.power(s));
    }

    pub fn set_floor(&mut self, now: SimTime, floor: PowerState) {
        self.floor = floor;
        self.refresh(now);
    }

    pub fn floor(&self) -> PowerState {
        self.floor
    }

    pub fn set_radio(&mut self, now: SimTime, state: Option<PowerState>) {
        self.radio = state;
        self.refresh(now);
    }

    pub fn radio(&self) -> Option<PowerState> {
        self.radio
    }

    pub fn cpu_begin(&mut self, now: SimTime) {
        self.cpu_tasks += 1;
        self.refresh(now);
    }

    pub fn cpu_end(&mut self, now: SimTime) {
        assert!(self.cpu_tasks > 0, "cpu_end without cpu_begin");
        self.cpu_tasks -= 1;
        self.refresh(now);
    }

    pub fn cpu_busy(&self) -> bool {
        self.cpu_tasks > 0
    }

    pub fn set_spi(&mut self, now: SimTime, active: bool) {
        self.spi_active = active;
        self.refresh(now);
    }
}
