//! Fitted model constants.
//!
//! Everything the simulator cannot derive from frame sizes and bit rates lives
//! here: state powers, CPU/ramp durations, discovery timing, and the sensor
//! node's per-interrupt costs. A set is serialized as JSON; its hash tags every
//! result row so that outputs can be traced to the constants that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::PowerTable;
use crate::error::{Result, SimError};
use crate::phy::PerCurves;

/// Environment variable naming a calibration JSON file.
pub const CALIBRATION_ENV: &str = "SIM_CALIBRATION";

const SHIPPED: &str = include_str!("../data/calibration.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsbCalibration {
    pub power: PowerTable,
    /// CPU work between the application's send request and radio ramp-up.
    pub cpu_prep_us: u64,
    pub ramp_up_us: u64,
    /// Radio disable after the last transaction of a burst.
    pub ramp_down_us: u64,
    /// ACK handling on the transmitter after each transaction.
    pub cpu_post_us: u64,
    /// CPU activity after a burst before dropping to standby.
    pub settle_us: u64,
    /// Receiver-side handling between end of frame and application delivery.
    pub prx_processing_us: u64,
    /// Transmitter-side cost of reading an ACK payload out of the radio buffer.
    pub ack_copy_ns_per_byte: u64,
    pub turnaround_us: u64,
    /// Wake-from-off initialization: CPU busy part, then clock/regulator settle.
    pub init_cpu_us: u64,
    pub init_wait_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleCalibration {
    pub power: PowerTable,
    /// Radio ramp before the first frame and after the last frame of a connection event.
    pub ramp_up_us: u64,
    pub ramp_down_us: u64,
    /// Host stack handling from notify call to controller queue.
    pub stack_delay_us: u64,
    /// Receiver handling from end of frame to application delivery.
    pub rx_processing_us: u64,
    /// CPU work per queued notification, outside the radio event.
    pub cpu_per_packet_us: u64,
    /// Controller limit on data PDUs (both directions) in one connection event.
    pub max_data_pdus_per_ce: u32,
    /// No new exchange starts later than this before the next anchor.
    pub ce_guard_us: u64,
    pub init_cpu_us: u64,
    pub init_wait_us: u64,
    /// Advertising PDU payload (AdvA + AdvData), sent on the 1M PHY.
    pub adv_pdu_bytes: u32,
    pub adv_channels: u32,
    /// Listen window after each advertising PDU.
    pub adv_rx_window_us: u64,
    /// Controller work per advertising event (clock start, scheduling).
    pub adv_event_cpu_us: u64,
    /// Upper bound of the random advertising delay added to each interval.
    pub adv_jitter_max_us: u64,
    /// Central host processing between first scan report and connection initiation.
    pub host_connect_delay_us: u64,
    /// Connection events spent on setup procedures before data may flow.
    pub conn_setup_events: u32,
    /// Host CPU work during connection setup (GATT discovery, CCCD write).
    pub conn_setup_cpu_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorCalibration {
    /// Sensor-side table: `idle_standby_mw` is the sampling draw,
    /// `sensor_read_mw` the draw while its FIFO is clocked out.
    pub sensor_power: PowerTable,
    pub spi_us_per_word: u64,
    /// MCU interrupt-to-send handling per FIFO interrupt, by mode.
    pub ble_irq_cpu_us: u64,
    pub esb_irq_cpu_us: u64,
    /// Extra MCU floor draw while the node application runs, by mode.
    pub ble_idle_overhead_mw: f64,
    pub esb_idle_overhead_mw: f64,
    /// ESB on/off: wake-from-off initialization before the FIFO read.
    pub onoff_wake_init_us: u64,
    /// ESB on/off: radio disable, peripheral and timer teardown before system off.
    pub onoff_teardown_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub version: u32,
    pub ble: BleCalibration,
    pub esb: EsbCalibration,
    pub sensor: SensorCalibration,
    pub per_curves: PerCurves,
}

impl CalibrationSet {
    /// Hand-derived starting point, before any fitting.
    pub fn nominal() -> Self {
        let hw = PowerTable {
            system_off_mw: 0.003,
            idle_standby_mw: 1.15,
            cpu_active_mw: 8.0,
            radio_ramp_mw: 1.5,
            radio_tx_mw: 35.0,
            radio_rx_mw: 22.0,
            sensor_read_mw: 8.0,
        };
        CalibrationSet {
            version: 1,
            ble: BleCalibration {
                power: PowerTable {
                    idle_standby_mw: 1.01,
                    ..hw
                },
                ramp_up_us: 582,
                ramp_down_us: 582,
                stack_delay_us: 250,
                rx_processing_us: 250,
                cpu_per_packet_us: 0,
                max_data_pdus_per_ce: 4,
                ce_guard_us: 300,
                init_cpu_us: 63_200,
                init_wait_us: 28_800,
                adv_pdu_bytes: 37,
                adv_channels: 3,
                adv_rx_window_us: 200,
                adv_event_cpu_us: 7_600,
                adv_jitter_max_us: 10_000,
                host_connect_delay_us: 65_000,
                conn_setup_events: 4,
                conn_setup_cpu_us: 12_000,
            },
            esb: EsbCalibration {
                power: hw,
                cpu_prep_us: 100,
                ramp_up_us: 40,
                ramp_down_us: 670,
                cpu_post_us: 267,
                settle_us: 583,
                prx_processing_us: 31,
                ack_copy_ns_per_byte: 336,
                turnaround_us: 40,
                init_cpu_us: 9_726,
                init_wait_us: 11_958,
            },
            sensor: SensorCalibration {
                sensor_power: PowerTable {
                    system_off_mw: 0.001,
                    idle_standby_mw: 0.48,
                    cpu_active_mw: 0.6,
                    radio_ramp_mw: 0.48,
                    radio_tx_mw: 0.7,
                    radio_rx_mw: 0.48,
                    sensor_read_mw: 1.5,
                },
                spi_us_per_word: 8,
                ble_irq_cpu_us: 5_200,
                esb_irq_cpu_us: 1_700,
                ble_idle_overhead_mw: 0.545,
                esb_idle_overhead_mw: 0.07,
                onoff_wake_init_us: 11_000,
                onoff_teardown_us: 15_000,
            },
            per_curves: PerCurves::default(),
        }
    }

    /// The fitted set committed with the crate.
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED).expect("shipped calibration.json is valid")
    }

    /// `SIM_CALIBRATION` if set, otherwise the shipped set.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CALIBRATION_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => Ok(Self::shipped()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let set: CalibrationSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// First 12 hex digits of SHA-256 over the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("calibration serializes");
        let digest = Sha256::digest(compact.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.ble.power.validate()?;
        self.esb.power.validate()?;
        if self.ble.max_data_pdus_per_ce == 0 || self.ble.adv_channels == 0 {
            return Err(SimError::InvalidConfig(
                "BLE PDU cap and advertising channel count must be positive".into(),
            ));
        }
        if self.sensor.sensor_power.idle_standby_mw <= 0.0 {
            return Err(SimError::InvalidConfig(
                "sensor sampling power must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for CalibrationSet {
    fn default() -> Self {
        Self::shipped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_set_is_valid() {
        CalibrationSet::shipped().validate().unwrap();
        CalibrationSet::nominal().validate().unwrap();
    }

    #[test]
    fn json_round_trip_keeps_hash() {
        let set = CalibrationSet::nominal();
        let back: CalibrationSet = serde_json::from_str(&set.to_json()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.hash(), set.hash());
        assert_eq!(set.hash().len(), 12);
    }

    #[test]
    fn hash_changes_with_constants() {
        let a = CalibrationSet::nominal();
        let mut b = a.clone();
        b.esb.turnaround_us += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
