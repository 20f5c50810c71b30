use serde::{Deserialize, Serialize};

use super::bus::{Bus, LoopbackDevice};
use super::{BusError, BusTimingConfig};
use crate::wire_protocol::assign_addresses;

/// One row of measured loop rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopRateRow {
    pub device_count: usize,
    pub mean_hz: f64,
    pub std_hz: f64,
}

/// Loop rates measured on the hardware prototype, 1-3 devices.
pub const MEASURED_LOOP_RATES: [LoopRateRow; 3] = [
    LoopRateRow {
        device_count: 1,
        mean_hz: 1164.3,
        std_hz: 24.1,
    },
    LoopRateRow {
        device_count: 2,
        mean_hz: 980.9,
        std_hz: 29.5,
    },
    LoopRateRow {
        device_count: 3,
        mean_hz: 749.5,
        std_hz: 23.2,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopRateStats {
    pub device_count: usize,
    pub iterations: usize,
    pub mean_hz: f64,
    pub std_hz: f64,
}

/// Host overheads that reproduce a set of measured loop rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadCalibration {
    pub per_sweep_s: f64,
    pub per_transaction_s: f64,
    /// Root-mean-square period residual.
    pub rms_residual_s: f64,
}

/// Fit the per-sweep and per-transaction overheads (both non-negative) to
/// measured `(device_count, mean_hz)` pairs under the timing of `base`.
///
/// The master cannot start a new packet while the previous responder's
/// write-enable pulse is still on, so consecutive transactions are separated
/// by at least the turnaround `t_enable - t_packet`. That makes the period
/// piecewise linear in the per-transaction overhead; each piece is solved by
/// least squares and the better one kept.
pub fn calibrate_overheads(rows: &[(usize, f64)], base: &BusTimingConfig) -> OverheadCalibration {
    let floor = base.protocol_floor();
    let turn = (base.write_enable_duration() - base.packet_time()).max(0.0);
    let period = |s: f64, t: f64, n: f64| (s + t).max(turn) + (n - 1.0) * t.max(turn) + n * floor;
    let sse = |s: f64, t: f64| -> f64 {
        rows.iter()
            .map(|&(n, hz)| (1.0 / hz - period(s, t, n as f64)).powi(2))
            .sum()
    };

    let mut candidates = vec![(0.0, 0.0)];
    if !rows.is_empty() {
        // transaction overhead hidden inside the turnaround
        let m = rows.len() as f64;
        let s = rows
            .iter()
            .map(|&(n, hz)| 1.0 / hz - n as f64 * floor - (n as f64 - 1.0) * turn)
            .sum::<f64>()
            / m;
        candidates.push((s.max(0.0), 0.0));

        // transaction overhead longer than the turnaround
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|&(n, hz)| (n as f64, 1.0 / hz - n as f64 * floor))
            .collect();
        let (sn, sy) = pts.iter().fold((0.0, 0.0), |a, (n, y)| (a.0 + n, a.1 + y));
        let snn: f64 = pts.iter().map(|(n, _)| n * n).sum();
        let sny: f64 = pts.iter().map(|(n, y)| n * y).sum();
        let det = m * snn - sn * sn;
        let (mut s, mut t) = if det.abs() > 1e-300 {
            let t = (m * sny - sn * sy) / det;
            ((sy - t * sn) / m, t)
        } else {
            (0.0, sny / snn)
        };
        if t < turn {
            t = turn;
            s = (sy - t * sn) / m;
        }
        if s < 0.0 {
            s = 0.0;
            t = (sny / snn).max(turn);
        }
        candidates.push((s, t));
    }

    let mut best = candidates[0];
    let mut best_sse = sse(best.0, best.1);
    for &(s, t) in &candidates[1..] {
        let e = sse(s, t);
        if e < best_sse - 1e-24 {
            best = (s, t);
            best_sse = e;
        }
    }
    OverheadCalibration {
        per_sweep_s: best.0,
        per_transaction_s: best.1,
        rms_residual_s: if rows.is_empty() {
            0.0
        } else {
            (best_sse / rows.len() as f64).sqrt()
        },
    }
}

/// Loop period the simulator produces for `n` devices under `config`
/// (jitter aside).
pub fn predicted_period(n: usize, config: &BusTimingConfig) -> f64 {
    let turn = (config.write_enable_duration() - config.packet_time()).max(0.0);
    let (s, t) = (config.per_sweep_overhead_s, config.per_transaction_overhead_s);
    (s + t).max(turn) + (n as f64 - 1.0) * t.max(turn) + n as f64 * config.protocol_floor()
}

/// Poll `device_count` loopback devices for `iterations` sweeps and report
/// the achieved loop rate in simulated time.
pub fn measure_loop_rate(
    device_count: usize,
    iterations: usize,
    config: &BusTimingConfig,
) -> Result<LoopRateStats, BusError> {
    if !(1..=4).contains(&device_count) {
        return Err(BusError::InvalidParameter(format!(
            "device count must be 1..=4, got {device_count}"
        )));
    }
    if iterations == 0 {
        return Err(BusError::InvalidParameter("iterations must be positive".into()));
    }
    let devices = assign_addresses(device_count)?
        .into_iter()
        .map(LoopbackDevice::new)
        .collect();
    let mut bus = Bus::new(*config, devices)?;
    bus.set_event_logging(false);

    let start = bus.clock();
    let mut rates = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = bus.clock();
        for r in bus.poll_all(&[]) {
            r?;
        }
        rates.push(1.0 / (bus.clock() - t));
    }
    let total = bus.clock() - start;
    let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
    let std_hz = if rates.len() > 1 {
        (rates.iter().map(|r| (r - mean_rate).powi(2)).sum::<f64>() / (rates.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(LoopRateStats {
        device_count,
        iterations,
        mean_hz: iterations as f64 / total,
        std_hz,
    })
}
