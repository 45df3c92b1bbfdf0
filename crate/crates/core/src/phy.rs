//! On-air timing and the RSSI-driven packet-error channel.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::RngStream;
use crate::time::Micros;

/// Largest BLE application payload (one notification with 7 bytes of L2CAP+ATT headers).
pub const BLE_MAX_APP_PAYLOAD: usize = 244;
/// Largest ESB payload.
pub const ESB_MAX_PAYLOAD: usize = 252;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "BLE")]
    Ble,
    #[serde(rename = "ESB")]
    Esb,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ble => "BLE",
            Protocol::Esb => "ESB",
        }
    }

    pub fn max_payload(self) -> usize {
        match self {
            Protocol::Ble => BLE_MAX_APP_PAYLOAD,
            Protocol::Esb => ESB_MAX_PAYLOAD,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Physical-layer mode. BLE stops at 2 Mbps; ESB has a proprietary 4 Mbps mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhyMode {
    #[serde(rename = "BLE-1M")]
    Ble1M,
    #[serde(rename = "BLE-2M")]
    Ble2M,
    #[serde(rename = "ESB-1M")]
    Esb1M,
    #[serde(rename = "ESB-2M")]
    Esb2M,
    #[serde(rename = "ESB-4M")]
    Esb4M,
}

impl PhyMode {
    pub const ALL: [PhyMode; 5] = [
        PhyMode::Ble1M,
        PhyMode::Ble2M,
        PhyMode::Esb1M,
        PhyMode::Esb2M,
        PhyMode::Esb4M,
    ];

    pub fn bit_rate(self) -> u64 {
        match self {
            PhyMode::Ble1M | PhyMode::Esb1M => 1_000_000,
            PhyMode::Ble2M | PhyMode::Esb2M => 2_000_000,
            PhyMode::Esb4M => 4_000_000,
        }
    }

    pub fn protocol(self) -> Protocol {
        match self {
            PhyMode::Ble1M | PhyMode::Ble2M => Protocol::Ble,
            _ => Protocol::Esb,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhyMode::Ble1M => "BLE-1M",
            PhyMode::Ble2M => "BLE-2M",
            PhyMode::Esb1M => "ESB-1M",
            PhyMode::Esb2M => "ESB-2M",
            PhyMode::Esb4M => "ESB-4M",
        }
    }
}

impl fmt::Display for PhyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-frame bits that surround the payload, plus the gap before the responding frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameOverhead {
    pub preamble_bits: u32,
    pub address_bits: u32,
    pub header_bits: u32,
    pub crc_bits: u32,
    /// Protocol headers above the link layer (L2CAP + ATT for a BLE notification).
    pub upper_stack_bytes: u32,
    pub ifs_or_turnaround_us: u64,
}

impl FrameOverhead {
    /// BLE data PDU carrying a GATT notification.
    pub fn ble_notification(phy: PhyMode) -> Self {
        FrameOverhead {
            upper_stack_bytes: 7,
            ..Self::ble_link(phy)
        }
    }

    /// BLE link-layer PDU with no upper-stack headers (empty PDU, control PDUs).
    pub fn ble_link(phy: PhyMode) -> Self {
        let preamble_bits = if phy == PhyMode::Ble2M { 16 } else { 8 };
        FrameOverhead {
            preamble_bits,
            address_bits: 32,
            header_bits: 16,
            crc_bits: 24,
            upper_stack_bytes: 0,
            ifs_or_turnaround_us: 150,
        }
    }

    /// ESB packet: 2-byte preamble, 5-byte address, 9-bit packet control field, 2-byte CRC.
    pub fn esb() -> Self {
        FrameOverhead {
            preamble_bits: 16,
            address_bits: 40,
            header_bits: 9,
            crc_bits: 16,
            upper_stack_bytes: 0,
            ifs_or_turnaround_us: 40,
        }
    }

    pub fn zero() -> Self {
        FrameOverhead {
            preamble_bits: 0,
            address_bits: 0,
            header_bits: 0,
            crc_bits: 0,
            upper_stack_bytes: 0,
            ifs_or_turnaround_us: 0,
        }
    }

    pub fn overhead_bits(&self) -> u64 {
        u64::from(self.preamble_bits)
            + u64::from(self.address_bits)
            + u64::from(self.header_bits)
            + u64::from(self.crc_bits)
            + 8 * u64::from(self.upper_stack_bytes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.overhead_bits() >= 8 * 300 {
            return Err(SimError::InvalidConfig(format!(
                "frame overhead of {} bits is implausibly large",
                self.overhead_bits()
            )));
        }
        Ok(())
    }
}

/// Time on air for one frame, rounded up to whole microseconds.
///
/// Computed in quarter microseconds (one bit at 4 Mbps) and rounded up once.
pub fn on_air_time(phy: PhyMode, payload_bytes: usize, ov: &FrameOverhead) -> Result<Micros> {
    let proto = phy.protocol();
    if payload_bytes > proto.max_payload() {
        return Err(SimError::PayloadTooLarge {
            protocol: proto.name(),
            len: payload_bytes,
            max: proto.max_payload(),
        });
    }
    let bits = ov.overhead_bits() + 8 * payload_bytes as u64;
    let quarters = (bits * 4_000_000).div_ceil(phy.bit_rate());
    Ok(Micros::from_quarter_micros_ceil(quarters))
}

/// Logistic packet-error curve: PER = 1 / (1 + exp((rssi - rssi50) / width)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerCurve {
    pub rssi50_dbm: f64,
    pub width_db: f64,
}

impl PerCurve {
    pub fn default_for(phy: PhyMode) -> Self {
        let (rssi50_dbm, width_db) = match phy {
            PhyMode::Ble1M => (-95.0, 2.0),
            PhyMode::Ble2M => (-92.0, 2.0),
            PhyMode::Esb1M => (-90.0, 2.5),
            PhyMode::Esb2M => (-86.0, 2.5),
            PhyMode::Esb4M => (-82.0, 3.0),
        };
        PerCurve {
            rssi50_dbm,
            width_db,
        }
    }
}

/// One PER curve per PHY mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerCurves {
    pub ble_1m: PerCurve,
    pub ble_2m: PerCurve,
    pub esb_1m: PerCurve,
    pub esb_2m: PerCurve,
    pub esb_4m: PerCurve,
}

impl Default for PerCurves {
    fn default() -> Self {
        PerCurves {
            ble_1m: PerCurve::default_for(PhyMode::Ble1M),
            ble_2m: PerCurve::default_for(PhyMode::Ble2M),
            esb_1m: PerCurve::default_for(PhyMode::Esb1M),
            esb_2m: PerCurve::default_for(PhyMode::Esb2M),
            esb_4m: PerCurve::default_for(PhyMode::Esb4M),
        }
    }
}

impl PerCurves {
    pub fn get(&self, phy: PhyMode) -> PerCurve {
        match phy {
            PhyMode::Ble1M => self.ble_1m,
            PhyMode::Ble2M => self.ble_2m,
            PhyMode::Esb1M => self.esb_1m,
            PhyMode::Esb2M => self.esb_2m,
            PhyMode::Esb4M => self.esb_4m,
        }
    }
}

pub fn packet_error_prob(rssi_dbm: f64, phy: PhyMode, curves: &PerCurves) -> f64 {
    let c = curves.get(phy);
    1.0 / (1.0 + ((rssi_dbm - c.rssi50_dbm) / c.width_db).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    Lost,
}

/// Where a channel's loss decisions come from.
#[derive(Debug, Clone)]
pub enum LossModel {
    /// Logistic PER from RSSI, same for data and ACK frames.
    Rssi { rssi_dbm: f64, curves: PerCurves },
    /// Fixed probabilities per frame kind.
    Fixed { data_per: f64, ack_per: f64 },
    /// Scripted outcomes consumed in order (`true` = lost); afterwards lossless.
    Script(VecDeque<bool>),
}

/// The shared medium of one simulated link.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub loss: LossModel,
    loss_rng: RngStream,
    pub delivered: u64,
    pub lost: u64,
}

impl ChannelState {
    pub fn new(loss: LossModel, seed: u64) -> Self {
        ChannelState {
            loss,
            loss_rng: RngStream::new(seed, "channel/loss"),
            delivered: 0,
            lost: 0,
        }
    }

    pub fn lossless() -> Self {
        Self::new(
            LossModel::Fixed {
                data_per: 0.0,
                ack_per: 0.0,
            },
            0,
        )
    }

    pub fn fixed(per: f64, seed: u64) -> Self {
        Self::new(
            LossModel::Fixed {
                data_per: per,
                ack_per: per,
            },
            seed,
        )
    }

    pub fn rssi(rssi_dbm: f64, curves: PerCurves, seed: u64) -> Self {
        Self::new(LossModel::Rssi { rssi_dbm, curves }, seed)
    }

    pub fn scripted(outcomes: impl IntoIterator<Item = bool>) -> Self {
        Self::new(LossModel::Script(outcomes.into_iter().collect()), 0)
    }

    pub fn per(&self, phy: PhyMode, kind: FrameKind) -> f64 {
        match &self.loss {
            LossModel::Rssi { rssi_dbm, curves } => packet_error_prob(*rssi_dbm, phy, curves),
            LossModel::Fixed { data_per, ack_per } => match kind {
                FrameKind::Data => *data_per,
                FrameKind::Ack => *ack_per,
            },
            LossModel::Script(_) => 0.0,
        }
    }

    /// Decides whether one frame survives the channel.
    pub fn deliver(&mut self, phy: PhyMode, kind: FrameKind) -> Delivery {
        let lost = match &mut self.loss {
            LossModel::Script(queue) => queue.pop_front().unwrap_or(false),
            _ => {
                let p = self.per(phy, kind);
                self.loss_rng.bernoulli(p)
            }
        };
        if lost {
            self.lost += 1;
            Delivery::Lost
        } else {
            self.delivered += 1;
            Delivery::Delivered
        }
    }
}
