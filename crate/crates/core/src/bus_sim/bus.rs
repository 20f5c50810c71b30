use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::events::{EventKind, Node, SimEvent};
use super::{BusError, BusTimingConfig};
use crate::wire_protocol::{
    decode_stream, encode_packet_with, AddressMode, DataWord, DeviceAddress, Packet, ProtocolError,
    PACKET_BYTES, PAYLOAD_WORDS,
};

/// Anything that can sit on the bus and answer polls.
pub trait BusDevice {
    fn address(&self) -> DeviceAddress;
    /// Called when a command packet addressed to this device arrives intact.
    fn receive_commands(&mut self, commands: [DataWord; PAYLOAD_WORDS]);
    /// Measurement words for the reply.
    fn measurements(&self) -> [DataWord; PAYLOAD_WORDS];
    /// Let simulated time pass.
    fn advance(&mut self, _dt: f64) {}
}

/// Device whose measurements are simply the last commands it received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopbackDevice {
    pub address: DeviceAddress,
    pub commands: [DataWord; PAYLOAD_WORDS],
    pub received: usize,
}

impl LoopbackDevice {
    pub fn new(address: DeviceAddress) -> Self {
        Self {
            address,
            commands: [DataWord(0); PAYLOAD_WORDS],
            received: 0,
        }
    }
}

impl BusDevice for LoopbackDevice {
    fn address(&self) -> DeviceAddress {
        self.address
    }

    fn receive_commands(&mut self, commands: [DataWord; PAYLOAD_WORDS]) {
        self.commands = commands;
        self.received += 1;
    }

    fn measurements(&self) -> [DataWord; PAYLOAD_WORDS] {
        self.commands
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Master to device.
    Command,
    /// Device to master.
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    FlipByte,
    DropByte,
    HoldWriteMode,
}

impl FromStr for FaultKind {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flip_byte" => Ok(FaultKind::FlipByte),
            "drop_byte" => Ok(FaultKind::DropByte),
            "hold_write_mode" => Ok(FaultKind::HoldWriteMode),
            other => Err(BusError::InvalidParameter(format!("unknown fault kind `{other}`"))),
        }
    }
}

/// A one-shot fault applied to the next transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fault {
    /// XOR one byte of a packet with `mask`.
    FlipByte {
        direction: Direction,
        byte_index: usize,
        mask: u8,
    },
    /// Lose one frame; the receiver sees an idle gap in its place.
    DropByte { direction: Direction, byte_index: usize },
    /// Device `device_index` leaves its driver enabled for the whole reply
    /// window of the next transaction.
    HoldWriteMode { device_index: usize },
}

impl Fault {
    pub fn kind(&self) -> FaultKind {
        match self {
            Fault::FlipByte { .. } => FaultKind::FlipByte,
            Fault::DropByte { .. } => FaultKind::DropByte,
            Fault::HoldWriteMode { .. } => FaultKind::HoldWriteMode,
        }
    }

    /// Build a fault from its kind name and a location: a byte index for
    /// byte faults (with `direction`), a device index for `hold_write_mode`.
    pub fn from_parts(kind: &str, direction: Direction, index: usize) -> Result<Self, BusError> {
        Ok(match kind.parse::<FaultKind>()? {
            FaultKind::FlipByte => Fault::FlipByte {
                direction,
                byte_index: index,
                mask: 0xFF,
            },
            FaultKind::DropByte => Fault::DropByte {
                direction,
                byte_index: index,
            },
            FaultKind::HoldWriteMode => Fault::HoldWriteMode { device_index: index },
        })
    }
}

/// A completed poll.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub response: Packet,
    /// From the call until the last reply byte arrived.
    pub elapsed: f64,
    pub events: Vec<SimEvent>,
}

/// Bytes as seen by a receiver, with idle-gap marks.
#[derive(Debug, Default)]
struct Reception {
    bytes: Vec<u8>,
    gaps: Vec<usize>,
    pending_gap: bool,
}

impl Reception {
    fn push(&mut self, b: u8) {
        if self.pending_gap {
            self.gaps.push(self.bytes.len());
            self.pending_gap = false;
        }
        self.bytes.push(b);
    }

    fn lose(&mut self) {
        self.pending_gap = true;
    }
}

/// The bus, its master and the devices hanging off it.
pub struct Bus<D: BusDevice> {
    config: BusTimingConfig,
    devices: Vec<D>,
    clock: f64,
    /// Earliest time the master may start driving again.
    bus_free_at: f64,
    log: Vec<SimEvent>,
    logging: bool,
    faults: Vec<Fault>,
    rng: ChaCha8Rng,
}

impl<D: BusDevice> Bus<D> {
    pub fn new(config: BusTimingConfig, devices: Vec<D>) -> Result<Self, BusError> {
        config.validate()?;
        let mut seen: Vec<u16> = devices.iter().map(|d| d.address().value).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(BusError::InvalidParameter("duplicate device address on bus".into()));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            devices,
            clock: 0.0,
            bus_free_at: 0.0,
            log: Vec::new(),
            logging: true,
            faults: Vec::new(),
        })
    }

    pub fn config(&self) -> &BusTimingConfig {
        &self.config
    }

    pub fn devices(&self) -> &[D] {
        &self.devices
    }

    pub fn devices_mut(&mut self) -> &mut [D] {
        &mut self.devices
    }

    pub fn into_devices(self) -> Vec<D> {
        self.devices
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.log
    }

    pub fn take_events(&mut self) -> Vec<SimEvent> {
        std::mem::take(&mut self.log)
    }

    /// Turn the persistent event log on or off. Transactions still carry
    /// their own events either way.
    pub fn set_event_logging(&mut self, on: bool) {
        self.logging = on;
    }

    pub fn addresses(&self) -> Vec<DeviceAddress> {
        self.devices.iter().map(|d| d.address()).collect()
    }

    /// Arm a fault for the next transaction.
    pub fn inject_fault(&mut self, fault: Fault) -> Result<(), BusError> {
        match fault {
            Fault::FlipByte { byte_index, mask, .. } => {
                if byte_index >= PACKET_BYTES || mask == 0 {
                    return Err(BusError::InvalidParameter(format!(
                        "flip_byte needs byte index < {PACKET_BYTES} and a nonzero mask"
                    )));
                }
            }
            Fault::DropByte { byte_index, .. } => {
                if byte_index >= PACKET_BYTES {
                    return Err(BusError::InvalidParameter(format!(
                        "drop_byte index {byte_index} >= {PACKET_BYTES}"
                    )));
                }
            }
            Fault::HoldWriteMode { device_index } => {
                if device_index >= self.devices.len() {
                    return Err(BusError::InvalidParameter(format!(
                        "no device at index {device_index}"
                    )));
                }
            }
        }
        self.faults.push(fault);
        Ok(())
    }

    /// Let `dt` seconds pass with the bus idle.
    pub fn idle(&mut self, dt: f64) {
        if dt > 0.0 {
            self.clock += dt;
            for d in &mut self.devices {
                d.advance(dt);
            }
        }
    }

    /// Idle until absolute time `t`, if it lies ahead.
    pub fn idle_until(&mut self, t: f64) {
        self.idle(t - self.clock);
    }

    /// One polling sweep: host overhead, then one transaction per device in
    /// bus order with the given commands.
    pub fn poll_all(
        &mut self,
        commands: &[[DataWord; PAYLOAD_WORDS]],
    ) -> Vec<Result<Transaction, BusError>> {
        let overhead = self.sweep_overhead();
        self.idle(overhead);
        let addresses = self.addresses();
        addresses
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let cmd = commands.get(i).copied().unwrap_or([DataWord(0); PAYLOAD_WORDS]);
                self.transact(a.value, cmd)
            })
            .collect()
    }

    fn sweep_overhead(&mut self) -> f64 {
        let base = self.config.per_sweep_overhead_s;
        let sigma = self.config.overhead_jitter_s;
        if sigma > 0.0 {
            let jitter = Normal::new(0.0, sigma).expect("sigma validated").sample(&mut self.rng);
            (base + jitter).max(0.0)
        } else {
            base
        }
    }

    /// Send `commands` to `address` and wait for the reply.
    pub fn transact(
        &mut self,
        address: u16,
        commands: [DataWord; PAYLOAD_WORDS],
    ) -> Result<Transaction, BusError> {
        let cfg = self.config;
        let frame = cfg.frame_time();
        let t_enable = cfg.write_enable_duration();
        let faults = std::mem::take(&mut self.faults);
        let mut events = Vec::new();
        let mut push = |timestamp: f64, kind: EventKind, node: Node| {
            events.push(SimEvent { timestamp, kind, node });
        };

        let t0 = self.clock;
        let start = (t0 + cfg.per_transaction_overhead_s).max(self.bus_free_at);
        let out = encode_packet_with(
            &Packet {
                address: DataWord(address),
                payload: commands,
            },
            AddressMode::Extended,
        )?;

        // Command phase: only the master drives.
        push(start, EventKind::MasterTxStart, Node::Master);
        let mut at_devices = Reception::default();
        for (j, &byte) in out.iter().enumerate() {
            match apply_byte_faults(&faults, Direction::Command, j, byte) {
                Some(b) => {
                    if b != byte {
                        push(start + j as f64 * frame, EventKind::Corruption, Node::Master);
                    }
                    at_devices.push(b);
                }
                None => at_devices.lose(),
            }
        }
        let master_end = start + PACKET_BYTES as f64 * frame;
        push(master_end, EventKind::MasterTxEnd, Node::Master);
        let deadline = master_end + cfg.response_timeout_s;

        // Devices stuck in write mode drive the line for the whole reply
        // window.
        let held: Vec<usize> = faults
            .iter()
            .filter_map(|f| match f {
                Fault::HoldWriteMode { device_index } => Some(*device_index),
                _ => None,
            })
            .collect();
        for &k in &held {
            let node = Node::Device(self.devices[k].address());
            push(master_end, EventKind::DeviceWePulseStart, node);
            push(deadline, EventKind::DeviceWePulseEnd, node);
        }

        // Every device decodes the command stream; only the addressed one
        // can match.
        let mut responder = None;
        for (i, d) in self.devices.iter_mut().enumerate() {
            if let Ok(p) = decode_stream(&at_devices.bytes, d.address(), &at_devices.gaps) {
                d.receive_commands(p.payload);
                responder = Some(i);
                break;
            }
        }

        let mut collided = false;
        let mut bus_free_at = master_end;
        let mut reply_end = None;
        let mut at_master = Reception::default();
        if let Some(r) = responder {
            let dev = &self.devices[r];
            let me = dev.address();
            let node = Node::Device(me);
            let t_r = master_end + cfg.device_compute_delay_s;
            let pulse_end = t_r + t_enable;
            push(t_r, EventKind::DeviceWePulseStart, node);
            push(t_r, EventKind::DeviceTxStart, node);
            let reply = encode_packet_with(&Packet { address: DataWord(me.value), payload: dev.measurements() }, AddressMode::Extended)?;
            let mut violated = false;
            for (j, &byte) in reply.iter().enumerate() {
                let b_start = t_r + j as f64 * frame;
                let b_end = b_start + frame;
                // driver already off: the frame never reaches the wire
                if b_end > pulse_end + 1e-12 {
                    if !violated {
                        push(pulse_end, EventKind::ProtocolViolation, node);
                        violated = true;
                    }
                    at_master.lose();
                    continue;
                }
                let mut b = byte;
                if held.iter().any(|&k| k != r) {
                    if !collided {
                        push(b_start, EventKind::Collision, node);
                        collided = true;
                    }
                    push(b_start, EventKind::Corruption, node);
                    b ^= 0xFF;
                }
                match apply_byte_faults(&faults, Direction::Response, j, b) {
                    Some(fb) => {
                        if fb != b {
                            push(b_start, EventKind::Corruption, node);
                        }
                        at_master.push(fb);
                    }
                    None => at_master.lose(),
                }
            }
            let tx_end = t_r + PACKET_BYTES as f64 * frame;
            push(tx_end, EventKind::DeviceTxEnd, node);
            push(pulse_end, EventKind::DeviceWePulseEnd, node);
            bus_free_at = bus_free_at.max(pulse_end);
            reply_end = Some(tx_end.min(pulse_end));
        }
        if !held.is_empty() {
            bus_free_at = bus_free_at.max(deadline);
        }

        let expected = DeviceAddress::from_value(address);
        let outcome = match (reply_end, expected) {
            (Some(end), Some(expected)) => {
                match decode_stream(&at_master.bytes, expected, &at_master.gaps) {
                    Ok(p) if !collided => Ok((p, end)),
                    Ok(_) => Err(BusError::Collision { address }),
                    Err(_) if collided => Err(BusError::Collision { address }),
                    Err(ProtocolError::NotAddressed(_)) => Err(BusError::Timeout {
                        address,
                        deadline_s: cfg.response_timeout_s,
                    }),
                    Err(source) => Err(BusError::Malformed { address, source }),
                }
            }
            _ if collided => Err(BusError::Collision { address }),
            _ => Err(BusError::Timeout {
                address,
                deadline_s: cfg.response_timeout_s,
            }),
        };

        let end = match &outcome {
            Ok((_, end)) => *end,
            Err(_) => {
                push(deadline, EventKind::Timeout, Node::Master);
                deadline
            }
        };
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        if self.logging {
            self.log.extend_from_slice(&events);
        }
        self.bus_free_at = bus_free_at.max(end);
        let elapsed = end - t0;
        self.idle(elapsed);

        outcome.map(|(response, _)| Transaction {
            response,
            elapsed,
            events,
        })
    }
}

fn apply_byte_faults(faults: &[Fault], direction: Direction, index: usize, byte: u8) -> Option<u8> {
    let mut b = byte;
    for f in faults {
        match *f {
            Fault::FlipByte {
                direction: d,
                byte_index,
                mask,
            } if d == direction && byte_index == index => b ^= mask,
            Fault::DropByte {
                direction: d,
                byte_index,
            } if d == direction && byte_index == index => return None,
            _ => {}
        }
    }
    Some(b)
}
