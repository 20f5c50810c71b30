//! Discrete-event model of the half-duplex RS-485 bus.
//!
//! The master polls devices one transaction at a time: it sends a command
//! packet, the addressed device answers with a measurement packet. Each
//! device switches its driver on through a monostable write-enable pulse
//! triggered by the first start bit of its reply; bytes that fall outside
//! that pulse never reach the wire. Time advances at byte (frame)
//! boundaries.

mod bench;
mod bus;
mod events;
mod master;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire_protocol::{self, ProtocolError};

pub use bench::{
    calibrate_overheads, measure_loop_rate, predicted_period, LoopRateRow, LoopRateStats,
    OverheadCalibration, MEASURED_LOOP_RATES,
};
pub use bus::{Bus, BusDevice, Direction, Fault, FaultKind, LoopbackDevice, Transaction};
pub use events::{events_to_csv, EventKind, Node, SimEvent};
pub use master::PressureMaster;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no response from {address:#06X} within {deadline_s} s")]
    Timeout { address: u16, deadline_s: f64 },
    #[error("collision on the bus while polling {address:#06X}")]
    Collision { address: u16 },
    #[error("malformed response from {address:#06X}: {source}")]
    Malformed {
        address: u16,
        #[source]
        source: ProtocolError,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Bus timing. Times in seconds unless the field name says otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusTimingConfig {
    pub baud: f64,
    /// Timing resistor of the write-enable monostable.
    pub r_timer_ohm: f64,
    /// Timing capacitor of the write-enable monostable.
    pub c_timer_uf: f64,
    /// Host-side cost paid before every transaction.
    pub per_transaction_overhead_s: f64,
    /// Host-side cost paid once per polling sweep.
    pub per_sweep_overhead_s: f64,
    /// Standard deviation of Gaussian jitter on the per-sweep overhead.
    pub overhead_jitter_s: f64,
    /// Time between a device receiving its last command byte and starting
    /// its reply.
    pub device_compute_delay_s: f64,
    /// How long the master waits for a reply after its packet ends.
    pub response_timeout_s: f64,
    pub seed: u64,
}

impl Default for BusTimingConfig {
    /// Nominal hardware with overheads calibrated to the first two rows of
    /// the measured loop-rate table. The jitter maps their rate spread back
    /// to period spread (`sd_T ~ sd_f / f^2`), averaged.
    fn default() -> Self {
        let ideal = Self::ideal();
        let rows = &MEASURED_LOOP_RATES[..2];
        let cal = calibrate_overheads(
            &rows.iter().map(|r| (r.device_count, r.mean_hz)).collect::<Vec<_>>(),
            &ideal,
        );
        let jitter = rows.iter().map(|r| r.std_hz / (r.mean_hz * r.mean_hz)).sum::<f64>() / rows.len() as f64;
        Self {
            per_sweep_overhead_s: cal.per_sweep_s,
            per_transaction_overhead_s: cal.per_transaction_s,
            overhead_jitter_s: jitter,
            ..ideal
        }
    }
}

impl BusTimingConfig {
    /// Nominal hardware with no host overhead at all.
    pub fn ideal() -> Self {
        Self {
            baud: 1_000_000.0,
            r_timer_ohm: 976.0,
            c_timer_uf: 0.1,
            per_transaction_overhead_s: 0.0,
            per_sweep_overhead_s: 0.0,
            overhead_jitter_s: 0.0,
            device_compute_delay_s: 0.0,
            response_timeout_s: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        let nonneg = [
            self.per_transaction_overhead_s,
            self.per_sweep_overhead_s,
            self.overhead_jitter_s,
            self.device_compute_delay_s,
        ];
        if !(self.baud > 0.0) || nonneg.iter().any(|v| !(*v >= 0.0)) || !(self.response_timeout_s > 0.0)
        {
            return Err(BusError::InvalidParameter(format!(
                "baud and timeout must be positive, overheads non-negative: {self:?}"
            )));
        }
        write_enable_duration(self.r_timer_ohm, self.c_timer_uf)?;
        Ok(())
    }

    pub fn frame_time(&self) -> f64 {
        wire_protocol::frame_time(self.baud)
    }

    pub fn packet_time(&self) -> f64 {
        wire_protocol::packet_time(self.baud)
    }

    pub fn write_enable_duration(&self) -> f64 {
        1.1 * self.r_timer_ohm * self.c_timer_uf * 1e-6
    }

    /// Shortest possible transaction: command out, reply back.
    pub fn protocol_floor(&self) -> f64 {
        2.0 * self.packet_time() + self.device_compute_delay_s
    }
}

/// Write-enable pulse length of the monostable, `1.1 R C`, in seconds.
pub fn write_enable_duration(r_ohm: f64, c_uf: f64) -> Result<f64, BusError> {
    if !(r_ohm > 0.0 && c_uf > 0.0) {
        return Err(BusError::InvalidParameter(format!(
            "timer R and C must be positive (R = {r_ohm} ohm, C = {c_uf} uF)"
        )));
    }
    Ok(1.1 * r_ohm * c_uf * 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_write_enable_pulse() {
        let t = write_enable_duration(976.0, 0.1).unwrap();
        assert!((t * 1e6 - 107.36).abs() < 0.01);
        assert!((t * 1e6 - 107.0).abs() <= 5.0);
    }

    #[test]
    fn tolerance_corners() {
        let low = write_enable_duration(976.0 * 0.99, 0.1 * 0.95).unwrap();
        let high = write_enable_duration(976.0 * 1.01, 0.1 * 1.05).unwrap();
        assert!((low * 1e6 - 100.972).abs() < 0.01);
        assert!((high * 1e6 - 113.855).abs() < 0.01);
        assert!(low > wire_protocol::packet_time(1e6));
    }

    #[test]
    fn nonpositive_timer_parts() {
        assert!(write_enable_duration(0.0, 0.1).is_err());
        assert!(write_enable_duration(976.0, -1.0).is_err());
    }

    #[test]
    fn default_config_is_calibrated() {
        let cfg = BusTimingConfig::default();
        cfg.validate().unwrap();
        assert!(cfg.per_sweep_overhead_s > 0.0);
        assert!(cfg.per_transaction_overhead_s >= 0.0);
    }
}
