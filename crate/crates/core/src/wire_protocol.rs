//! Packet format spoken on the RS-485 bus.
//!
//! Every transaction is a single packet of five 16-bit words: one address
//! word followed by four pressure words. The master sends pressure commands,
//! the addressed device answers with its latest pressure measurements.
//! Words go on the wire low byte first, one 8N1 UART frame per byte.
//!
//! Payload words carry 10-bit ADC counts (`0x0000..=0x03FF`) while addresses
//! count down from `0xFFFF`, so an aligned payload word can never be mistaken
//! for an address. Alignment comes from the idle gap the transport observes
//! between packets, not from scanning: the address word `FF FF` itself
//! aliases to `0xFFFF` at an odd offset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest payload value (10-bit ADC).
pub const PAYLOAD_MAX: u16 = 0x03FF;
/// First address handed out; later devices count down from here.
pub const ADDRESS_BASE: u16 = 0xFFFF;
/// Lowest address reachable with the 4-position address switch.
pub const SWITCH_ADDRESS_MIN: u16 = 0xFFFC;
/// Lowest address software addressing may use.
pub const SOFTWARE_ADDRESS_MIN: u16 = 0x0400;
/// Upper bound on devices with software-programmed addresses.
pub const MAX_DEVICES: usize = 256;

pub const WORDS_PER_PACKET: usize = 5;
pub const PAYLOAD_WORDS: usize = 4;
pub const PACKET_BYTES: usize = 2 * WORDS_PER_PACKET;
/// 8N1: start bit, eight data bits, stop bit.
pub const BITS_PER_FRAME: u32 = 10;

/// Full-scale sensor range, 100 psig expressed in kPa.
pub const FULL_SCALE_KPA: f64 = 689.48;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("device count {0} outside 1..=256")]
    InvalidCount(usize),
    #[error("payload word {index} = {value:#06x} exceeds {max:#06x}", max = PAYLOAD_MAX)]
    PayloadRange { index: usize, value: u16 },
    #[error("address {value:#06x} below minimum {min:#06x}")]
    AddressRange { value: u16, min: u16 },
    #[error("no packet addressed to {0:#06x} in stream")]
    NotAddressed(u16),
    #[error("malformed packet for {address:#06x} at byte {offset}: {reason}")]
    Malformed {
        address: u16,
        offset: usize,
        reason: &'static str,
    },
}

/// One 16-bit word on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DataWord(pub u16);

impl DataWord {
    pub fn is_payload(self) -> bool {
        self.0 <= PAYLOAD_MAX
    }

    pub fn is_switch_address(self) -> bool {
        self.0 >= SWITCH_ADDRESS_MIN
    }

    pub fn to_le_bytes(self) -> [u8; 2] {
        self.0.to_le_bytes()
    }
}

/// Position of a device on the bus and the address it answers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceAddress {
    pub index: usize,
    pub value: u16,
}

impl DeviceAddress {
    /// Address of the device at `index`; `None` past the software range.
    pub fn from_index(index: usize) -> Option<Self> {
        if index >= MAX_DEVICES {
            return None;
        }
        Some(Self {
            index,
            value: ADDRESS_BASE - index as u16,
        })
    }

    /// Inverse of [`DeviceAddress::from_index`].
    pub fn from_value(value: u16) -> Option<Self> {
        let index = (ADDRESS_BASE - value) as usize;
        Self::from_index(index)
    }
}

impl std::fmt::Display for DeviceAddress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#06X}", self.value)
    }
}

/// Addresses for `device_count` daisy-chained devices: `0xFFFF, 0xFFFE, ...`.
pub fn assign_addresses(device_count: usize) -> Result<Vec<DeviceAddress>, ProtocolError> {
    if device_count == 0 || device_count > MAX_DEVICES {
        return Err(ProtocolError::InvalidCount(device_count));
    }
    Ok((0..device_count)
        .map(|i| DeviceAddress::from_index(i).expect("index checked above"))
        .collect())
}

/// How strictly [`encode_packet_with`] checks the address word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AddressMode {
    /// Only the four switch-selectable addresses.
    #[default]
    Strict,
    /// Software-programmed addresses down to [`SOFTWARE_ADDRESS_MIN`].
    Extended,
}

impl AddressMode {
    fn min_address(self) -> u16 {
        match self {
            AddressMode::Strict => SWITCH_ADDRESS_MIN,
            AddressMode::Extended => SOFTWARE_ADDRESS_MIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Packet {
    pub address: DataWord,
    pub payload: [DataWord; PAYLOAD_WORDS],
}

impl Packet {
    pub fn new(address: u16, payload: [u16; PAYLOAD_WORDS]) -> Self {
        Self {
            address: DataWord(address),
            payload: payload.map(DataWord),
        }
    }

    pub fn payload_values(&self) -> [u16; PAYLOAD_WORDS] {
        self.payload.map(|w| w.0)
    }

    pub fn validate(&self, mode: AddressMode) -> Result<(), ProtocolError> {
        let min = mode.min_address();
        if self.address.0 < min {
            return Err(ProtocolError::AddressRange {
                value: self.address.0,
                min,
            });
        }
        for (index, word) in self.payload.iter().enumerate() {
            if !word.is_payload() {
                return Err(ProtocolError::PayloadRange {
                    index,
                    value: word.0,
                });
            }
        }
        Ok(())
    }
}

/// Serialize a packet with switch-range addressing.
pub fn encode_packet(packet: &Packet) -> Result<[u8; PACKET_BYTES], ProtocolError> {
    encode_packet_with(packet, AddressMode::Strict)
}

pub fn encode_packet_with(
    packet: &Packet,
    mode: AddressMode,
) -> Result<[u8; PACKET_BYTES], ProtocolError> {
    packet.validate(mode)?;
    let mut out = [0u8; PACKET_BYTES];
    let words = std::iter::once(packet.address).chain(packet.payload);
    for (chunk, word) in out.chunks_exact_mut(2).zip(words) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    Ok(out)
}

fn word_at(bytes: &[u8], offset: usize) -> u16 {
    u16::from_le_bytes([bytes[offset], bytes[offset + 1]])
}

/// Pull the first packet addressed to `expected` out of a received byte
/// stream.
///
/// `gap_marks` are byte offsets at which the transport saw an idle line
/// before the byte, i.e. candidate packet starts. Offset 0 always counts as
/// one. A packet whose first word is any other address (or not an address at
/// all) is skipped. Once the expected address matches at a gap, the next
/// eight bytes belong to that packet: running out of bytes, or hitting
/// another gap inside them, is a truncated packet.
pub fn decode_stream(
    bytes: &[u8],
    expected: DeviceAddress,
    gap_marks: &[usize],
) -> Result<Packet, ProtocolError> {
    let mut starts: Vec<usize> = gap_marks
        .iter()
        .copied()
        .chain(std::iter::once(0))
        .filter(|&g| g < bytes.len())
        .collect();
    starts.sort_unstable();
    starts.dedup();

    for (k, &start) in starts.iter().enumerate() {
        if start + 2 > bytes.len() {
            continue;
        }
        if word_at(bytes, start) != expected.value {
            continue;
        }
        let end = start + PACKET_BYTES;
        let next_gap = starts.get(k + 1).copied().unwrap_or(usize::MAX);
        if end > bytes.len() {
            return Err(ProtocolError::Malformed {
                address: expected.value,
                offset: bytes.len(),
                reason: "stream ended inside packet",
            });
        }
        if next_gap < end {
            return Err(ProtocolError::Malformed {
                address: expected.value,
                offset: next_gap,
                reason: "idle gap inside packet",
            });
        }
        let mut payload = [DataWord(0); PAYLOAD_WORDS];
        for (i, slot) in payload.iter_mut().enumerate() {
            let offset = start + 2 * (i + 1);
            let word = DataWord(word_at(bytes, offset));
            if !word.is_payload() {
                return Err(ProtocolError::Malformed {
                    address: expected.value,
                    offset,
                    reason: "payload word out of ADC range",
                });
            }
            *slot = word;
        }
        return Ok(Packet {
            address: DataWord(expected.value),
            payload,
        });
    }
    Err(ProtocolError::NotAddressed(expected.value))
}

/// Gauge pressure in kPa to ADC counts. Saturates outside the sensor range.
pub fn pressure_to_word(p_gauge_kpa: f64) -> DataWord {
    let clamped = if p_gauge_kpa.is_nan() {
        0.0
    } else {
        p_gauge_kpa.clamp(0.0, FULL_SCALE_KPA)
    };
    DataWord((clamped / FULL_SCALE_KPA * f64::from(PAYLOAD_MAX)).round() as u16)
}

/// ADC counts to gauge pressure in kPa. Counts above the ADC range saturate.
pub fn word_to_pressure(word: DataWord) -> f64 {
    f64::from(word.0.min(PAYLOAD_MAX)) / f64::from(PAYLOAD_MAX) * FULL_SCALE_KPA
}

/// Time on the wire for one 8N1 frame, in seconds.
pub fn frame_time(baud: f64) -> f64 {
    f64::from(BITS_PER_FRAME) / baud
}

/// Time on the wire for a whole packet, in seconds.
pub fn packet_time(baud: f64) -> f64 {
    (PACKET_BYTES as u32 * BITS_PER_FRAME) as f64 / baud
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn addr(index: usize) -> DeviceAddress {
        DeviceAddress::from_index(index).unwrap()
    }

    #[test]
    fn addresses_count_down_from_ffff() {
        let one = assign_addresses(1).unwrap();
        assert_eq!(one.iter().map(|a| a.value).collect::<Vec<_>>(), [0xFFFF]);

        let four = assign_addresses(4).unwrap();
        assert_eq!(
            four.iter().map(|a| a.value).collect::<Vec<_>>(),
            [0xFFFF, 0xFFFE, 0xFFFD, 0xFFFC]
        );
    }

    #[test]
    fn software_addresses_stay_clear_of_payload_range() {
        let all = assign_addresses(256).unwrap();
        assert_eq!(all.len(), 256);
        assert_eq!(all.last().unwrap().value, 0xFF00);
        let min = all.iter().map(|a| a.value).min().unwrap();
        assert_eq!(min, 0xFF00);
        assert!(all.iter().all(|a| a.value > PAYLOAD_MAX));
        let mut values: Vec<u16> = all.iter().map(|a| a.value).collect();
        values.dedup();
        assert_eq!(values.len(), 256);
    }

    #[test]
    fn bad_device_counts() {
        assert_eq!(assign_addresses(0), Err(ProtocolError::InvalidCount(0)));
        assert_eq!(assign_addresses(257), Err(ProtocolError::InvalidCount(257)));
    }

    #[test]
    fn encode_examples() {
        let bytes = encode_packet(&Packet::new(0xFFFF, [1, 2, 3, 4])).unwrap();
        assert_eq!(bytes, [0xFF, 0xFF, 0x01, 0x00, 0x02, 0x00, 0x03, 0x00, 0x04, 0x00]);

        let bytes = encode_packet(&Packet::new(0xFFFE, [0; 4])).unwrap();
        assert_eq!(bytes, [0xFE, 0xFF, 0, 0, 0, 0, 0, 0, 0, 0]);

        let bytes = encode_packet(&Packet::new(0xFFFF, [1023; 4])).unwrap();
        assert_eq!(bytes, [0xFF, 0xFF, 0xFF, 0x03, 0xFF, 0x03, 0xFF, 0x03, 0xFF, 0x03]);
    }

    #[test]
    fn command_packet_from_pressures() {
        let words = [100.0, 200.0, 300.0, 400.0].map(|p| pressure_to_word(p).0);
        assert_eq!(words, [0x0094, 0x0129, 0x01BD, 0x0251]);
        let bytes = encode_packet(&Packet::new(0xFFFE, words)).unwrap();
        assert_eq!(bytes, [0xFE, 0xFF, 0x94, 0x00, 0x29, 0x01, 0xBD, 0x01, 0x51, 0x02]);
    }

    #[test]
    fn encode_rejects_out_of_range_words() {
        let err = encode_packet(&Packet::new(0xFFFF, [0, 1024, 0, 0])).unwrap_err();
        assert_eq!(err, ProtocolError::PayloadRange { index: 1, value: 1024 });

        let low = Packet::new(0xFFF0, [0; 4]);
        assert!(matches!(
            encode_packet(&low),
            Err(ProtocolError::AddressRange { value: 0xFFF0, .. })
        ));
        assert!(encode_packet_with(&low, AddressMode::Extended).is_ok());
        assert!(encode_packet_with(&Packet::new(0x03FF, [0; 4]), AddressMode::Extended).is_err());
    }

    #[test]
    fn decode_single_packet() {
        let p = Packet::new(0xFFFF, [10, 20, 30, 40]);
        let bytes = encode_packet(&p).unwrap();
        assert_eq!(decode_stream(&bytes, addr(0), &[0]).unwrap(), p);
    }

    #[test]
    fn decode_skips_other_devices() {
        let other = Packet::new(0xFFFE, [5, 6, 7, 8]);
        let mine = Packet::new(0xFFFF, [1, 2, 3, 4]);
        let mut stream = encode_packet(&other).unwrap().to_vec();
        stream.extend_from_slice(&encode_packet(&mine).unwrap());
        assert_eq!(decode_stream(&stream, addr(0), &[0, 10]).unwrap(), mine);
        assert_eq!(decode_stream(&stream, addr(1), &[0, 10]).unwrap(), other);
        assert_eq!(
            decode_stream(&stream, addr(2), &[0, 10]),
            Err(ProtocolError::NotAddressed(0xFFFD))
        );
    }

    #[test]
    fn decode_truncated_packet() {
        let bytes = encode_packet(&Packet::new(0xFFFF, [1, 2, 3, 4])).unwrap();
        let err = decode_stream(&bytes[..9], addr(0), &[0]).unwrap_err();
        assert!(matches!(err, ProtocolError::Malformed { offset: 9, .. }));
    }

    #[test]
    fn decode_gap_inside_packet_is_truncation() {
        let a = encode_packet(&Packet::new(0xFFFF, [1, 2, 3, 4])).unwrap();
        let b = encode_packet(&Packet::new(0xFFFE, [1, 2, 3, 4])).unwrap();
        // byte 5 lost: second packet starts at 9
        let mut stream: Vec<u8> = a.iter().enumerate().filter(|(i, _)| *i != 5).map(|(_, b)| *b).collect();
        stream.extend_from_slice(&b);
        let err = decode_stream(&stream, addr(0), &[0, 9]).unwrap_err();
        assert!(matches!(err, ProtocolError::Malformed { offset: 9, .. }));
    }

    #[test]
    fn decode_ignores_odd_alignment_aliases() {
        // FF FF FF 03 ... scanned at offset 1 would read 0xFFFF; only gap
        // boundaries are candidates.
        let p = Packet::new(0xFFFE, [1023, 1023, 1023, 1023]);
        let bytes = encode_packet(&p).unwrap();
        assert_eq!(
            decode_stream(&bytes, addr(0), &[0]),
            Err(ProtocolError::NotAddressed(0xFFFF))
        );
    }

    #[test]
    fn pressure_word_mapping() {
        assert_eq!(pressure_to_word(0.0), DataWord(0));
        assert_eq!(pressure_to_word(689.48), DataWord(1023));
        assert_eq!(pressure_to_word(300.0), DataWord(445));
        assert_eq!(pressure_to_word(-5.0), DataWord(0));
        assert_eq!(pressure_to_word(800.0), DataWord(1023));
        assert_eq!(pressure_to_word(f64::NAN), DataWord(0));
        assert_eq!(word_to_pressure(DataWord(1023)), FULL_SCALE_KPA);
    }

    #[test]
    fn packet_time_at_one_megabaud() {
        assert_eq!(frame_time(1e6), 10e-6);
        assert!((packet_time(1e6) - 100e-6).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(index in 0usize..4, payload in prop::array::uniform4(0u16..=PAYLOAD_MAX)) {
            let a = addr(index);
            let p = Packet::new(a.value, payload);
            let bytes = encode_packet(&p).unwrap();
            prop_assert_eq!(bytes.len(), PACKET_BYTES);
            prop_assert_eq!(decode_stream(&bytes, a, &[0]).unwrap(), p);
        }

        #[test]
        fn pressure_round_trip_within_half_step(p in 0.0f64..=FULL_SCALE_KPA) {
            let back = word_to_pressure(pressure_to_word(p));
            prop_assert!((back - p).abs() <= 0.5 * FULL_SCALE_KPA / 1023.0 + 1e-12);
            prop_assert!((back - p).abs() <= 0.34);
        }
    }
}
