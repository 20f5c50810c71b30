use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::wire_protocol::DeviceAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MasterTxStart,
    MasterTxEnd,
    DeviceWePulseStart,
    DeviceWePulseEnd,
    DeviceTxStart,
    DeviceTxEnd,
    Collision,
    Corruption,
    /// A device tried to drive the bus outside its write-enable pulse.
    ProtocolViolation,
    Timeout,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::MasterTxStart => "master_tx_start",
            EventKind::MasterTxEnd => "master_tx_end",
            EventKind::DeviceWePulseStart => "device_we_pulse_start",
            EventKind::DeviceWePulseEnd => "device_we_pulse_end",
            EventKind::DeviceTxStart => "device_tx_start",
            EventKind::DeviceTxEnd => "device_tx_end",
            EventKind::Collision => "collision",
            EventKind::Corruption => "corruption",
            EventKind::ProtocolViolation => "protocol_violation",
            EventKind::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Master,
    Device(DeviceAddress),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Master => f.write_str("master"),
            Node::Device(a) => write!(f, "{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub timestamp: f64,
    pub kind: EventKind,
    pub node: Node,
}

/// Event log as CSV: `timestamp_s,kind,device`.
pub fn events_to_csv(events: &[SimEvent]) -> String {
    let mut out = String::from("timestamp_s,kind,device\n");
    for e in events {
        let _ = writeln!(out, "{:.9},{},{}", e.timestamp, e.kind.as_str(), e.node);
    }
    out
}
