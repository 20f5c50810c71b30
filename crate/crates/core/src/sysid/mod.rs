//! System identification: datasets, multi-start fitting of the three
//! pressure models, open-loop prediction and the comparison metrics.

mod compare;
mod dataset;
mod fit;
pub mod optim;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerError;
use crate::dynamics::{integrate, DynamicsError, ModelKind, ModelParams};

pub use compare::{compare_models, measure_eval_cost, Comparison, ComparisonCell, ComparisonReport, EvalCost};
pub use dataset::{Dataset, COLUMNS, DEFAULT_SAMPLE_RATE, GRID_TOLERANCE};
pub use fit::{best_of_first, fit, FitContext, FitOptions, FitResult, RestartSummary};
pub use synth::{generate, StepReferenceConfig, SyntheticConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SysidError {
    #[error("line {line}: {message}")]
    Load { line: usize, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: sample interval {dt} s deviates from the grid step {expected} s")]
    NonUniformGrid { line: usize, dt: f64, expected: f64 },
    #[error("length mismatch: {predicted} predicted vs {measured} measured samples")]
    LengthMismatch { predicted: usize, measured: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{model_kind} fit failed: no restart converged ({diagnostics})")]
    FitFailed { model_kind: ModelKind, diagnostics: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("i/o: {0}")]
    Io(String),
}

/// Integrate `params` over the recorded inputs of `chamber`, starting from
/// the first measured pressure.
pub fn predict_open_loop(params: &ModelParams, data: &Dataset, chamber: usize) -> Result<Vec<f64>, SysidError> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let inputs = data.excitations(chamber);
    Ok(integrate(params, chamber, data.p[0][chamber], &inputs, data.dt())?)
}

/// 3-point central differences, one-sided at the ends.
pub fn central_difference(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|k| {
                if k == 0 {
                    (x[1] - x[0]) / dt
                } else if k == n - 1 {
                    (x[n - 1] - x[n - 2]) / dt
                } else {
                    (x[k + 1] - x[k - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

/// `1 - SS_res / SS_tot`. A constant reference gives 1 for an exact match
/// and 0 otherwise.
pub fn r_squared(predicted: &[f64], measured: &[f64]) -> f64 {
    let n = measured.len() as f64;
    let mean = measured.iter().sum::<f64>() / n;
    let ss_tot: f64 = measured.iter().map(|m| (m - mean).powi(2)).sum();
    let ss_res: f64 = predicted.iter().zip(measured).map(|(p, m)| (m - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Agreement between a predicted and a measured pressure trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// R^2 of the pressure rates (central differences of both series).
    pub r_squared: f64,
    /// R^2 of the pressures themselves.
    pub r_squared_pressure: f64,
    /// `sum |p_meas - p_pred| dt`, Pa s.
    pub iae: f64,
}

pub fn metrics(predicted: &[f64], measured: &[f64], dt: f64) -> Result<Metrics, SysidError> {
    if predicted.len() != measured.len() {
        return Err(SysidError::LengthMismatch {
            predicted: predicted.len(),
            measured: measured.len(),
        });
    }
    if measured.len() < 2 {
        return Err(SysidError::InvalidParameter("metrics need at least two samples".into()));
    }
    if !(dt > 0.0) {
        return Err(SysidError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let iae = predicted.iter().zip(measured).map(|(p, m)| (m - p).abs()).sum::<f64>() * dt;
    Ok(Metrics {
        r_squared: r_squared(&central_difference(predicted, dt), &central_difference(measured, dt)),
        r_squared_pressure: r_squared(predicted, measured),
        iae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearParams;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let m: Vec<f64> = (0..100).map(|k| (k as f64 * 0.1).sin() * 1e5 + 2e5).collect();
        let r = metrics(&m, &m, 0.01).unwrap();
        assert_eq!(r.r_squared, 1.0);
        assert_eq!(r.r_squared_pressure, 1.0);
        assert_eq!(r.iae, 0.0);
    }

    #[test]
    fn constant_offset_rectangle() {
        let m: Vec<f64> = (0..2000).map(|k| 2e5 + k as f64).collect();
        let p: Vec<f64> = m.iter().map(|v| v + 1000.0).collect();
        let r = metrics(&p, &m, 0.01).unwrap();
        assert!((r.iae - 20_000.0).abs() < 1e-6);
        // the rates agree exactly
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_prediction_scores_zero() {
        let m: Vec<f64> = (0..500).map(|k| (k as f64 * 0.05).sin()).collect();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        let r = metrics(&vec![mean; m.len()], &m, 0.01).unwrap();
        assert!(r.r_squared_pressure.abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            metrics(&[1.0, 2.0], &[1.0, 2.0, 3.0], 0.01),
            Err(SysidError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn iae_scales_linearly(scale in 0.1f64..10.0, seed in 0u64..100) {
            let m: Vec<f64> = (0..200).map(|k| ((k as u64 * 7919 + seed) % 97) as f64).collect();
            let e: Vec<f64> = (0..200).map(|k| ((k as u64 * 31 + seed) % 13) as f64 - 6.0).collect();
            let p1: Vec<f64> = m.iter().zip(&e).map(|(a, b)| a + b).collect();
            let p2: Vec<f64> = m.iter().zip(&e).map(|(a, b)| a + scale * b).collect();
            let a = metrics(&p1, &m, 0.01).unwrap().iae;
            let b = metrics(&p2, &m, 0.01).unwrap().iae;
            prop_assert!((b - scale * a).abs() <= 1e-9 * b.abs().max(1.0));
        }

        #[test]
        fn r_squared_affine_invariance(a in 0.1f64..10.0, b in -1e5f64..1e5, seed in 0u64..100) {
            let m: Vec<f64> = (0..200).map(|k| ((k as u64 * 7919 + seed) % 97) as f64).collect();
            let p: Vec<f64> = m.iter().enumerate().map(|(k, v)| v + ((k * 13) % 7) as f64).collect();
            let r1 = metrics(&p, &m, 0.01).unwrap();
            let tm: Vec<f64> = m.iter().map(|v| a * v + b).collect();
            let tp: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            let r2 = metrics(&tp, &tm, 0.01).unwrap();
            prop_assert!((r1.r_squared - r2.r_squared).abs() < 1e-9);
            prop_assert!((r1.r_squared_pressure - r2.r_squared_pressure).abs() < 1e-9);
        }
    }

    #[test]
    fn open_loop_linear_matches_exponential() {
        let params = ModelParams::Linear(LinearParams { alpha: 2.0, beta: 2.0 });
        let mut ds = Dataset::with_capacity(300, 100.0);
        for k in 0..300 {
            let p0 = if k == 0 { 1e5 } else { 0.0 };
            ds.push(k as f64 * 0.01, [3e5; 4], [p0; 4], [0.0; 4], Default::default());
        }
        let pred = predict_open_loop(&params, &ds, 2).unwrap();
        for (k, p) in pred.iter().enumerate() {
            let t = k as f64 * 0.01;
            let want = 3e5 + (1e5 - 3e5) * (-2.0 * t).exp();
            assert!(((p - want) / want).abs() < 1e-6);
        }
        assert!(predict_open_loop(&params, &Dataset::default(), 0).unwrap().is_empty());
    }
}
