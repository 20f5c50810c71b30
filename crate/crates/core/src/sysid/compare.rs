//! Fit every model to every chamber and score the open-loop predictions.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::fit::{fit, FitContext, FitOptions};
use super::{metrics, predict_open_loop, SysidError};
use crate::dynamics::{ModelKind, ModelParams, PressureModel, CHAMBERS};

/// One model on one chamber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub model_kind: ModelKind,
    pub chamber: usize,
    pub params: Option<ModelParams>,
    pub r_squared_train: Option<f64>,
    /// Validation R^2 of the pressure rates.
    pub r_squared: Option<f64>,
    /// Validation R^2 of the pressures.
    pub r_squared_pressure: Option<f64>,
    /// Open-loop validation IAE, Pa s.
    pub iae: Option<f64>,
    /// Plain sum of absolute errors over the validation set, in GPa: the
    /// unit the published comparison table reports.
    pub error_sum_gpa: Option<f64>,
    pub n_restarts: usize,
    pub n_converged: usize,
    pub error: Option<String>,
}

/// Deterministic part of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub train_samples: usize,
    pub validation_samples: usize,
    pub options: FitOptions,
    pub cells: Vec<ComparisonCell>,
}

impl ComparisonReport {
    pub fn cell(&self, kind: ModelKind, chamber: usize) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.model_kind == kind && c.chamber == chamber)
    }

    /// Flat table, one row per model and chamber.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6e}")).unwrap_or_default();
        let mut out = String::from(
            "model,chamber,iae_pa_s,error_sum_gpa,r_squared,r_squared_pressure,r_squared_train,n_converged,n_restarts,error\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.model_kind,
                c.chamber,
                opt(c.iae),
                opt(c.error_sum_gpa),
                opt(c.r_squared),
                opt(c.r_squared_pressure),
                opt(c.r_squared_train),
                c.n_converged,
                c.n_restarts,
                c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        out
    }
}

/// Mean wall time of one pressure-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalCost {
    pub model_kind: ModelKind,
    pub evaluations: usize,
    pub seconds_per_eval: f64,
}

/// Machine-dependent timings gathered alongside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub eval_cost: Vec<EvalCost>,
    /// Fit wall time per cell, same order as the report cells.
    pub fit_wall_time_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub timings: Timings,
}

/// Time at least `min_evals` evaluations of `params` over the recorded
/// inputs of `chamber` (best of five passes).
pub fn measure_eval_cost(params: &ModelParams, data: &Dataset, chamber: usize, min_evals: usize) -> EvalCost {
    let inputs = data.excitations(chamber);
    let p = data.pressure(chamber);
    let per_pass = inputs.len().max(1);
    let passes = min_evals.div_ceil(per_pass).max(1);
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let start = Instant::now();
        let mut acc = 0.0;
        for _ in 0..passes {
            for (x, &pk) in inputs.iter().zip(&p) {
                acc += black_box(params).pdot(chamber, black_box(pk), black_box(x)).unwrap_or(0.0);
            }
        }
        black_box(acc);
        best = best.min(start.elapsed().as_secs_f64());
    }
    let evaluations = passes * inputs.len();
    EvalCost {
        model_kind: params.kind(),
        evaluations,
        seconds_per_eval: best / evaluations.max(1) as f64,
    }
}

/// Fit all three models to all four chambers of `train` and score them on
/// `validation`. Failed fits are recorded per cell.
pub fn compare_models(
    train: &Dataset,
    validation: &Dataset,
    context: &FitContext,
    options: &FitOptions,
) -> Result<Comparison, SysidError> {
    train.validate()?;
    validation.validate()?;
    let dt = validation.dt();
    let mut cells = Vec::new();
    let mut walls = Vec::new();
    let mut eval_params: Vec<Option<ModelParams>> = vec![None; ModelKind::ALL.len()];

    for kind in ModelKind::ALL {
        for chamber in 0..CHAMBERS {
            let mut cell = ComparisonCell {
                model_kind: kind,
                chamber,
                params: None,
                r_squared_train: None,
                r_squared: None,
                r_squared_pressure: None,
                iae: None,
                error_sum_gpa: None,
                n_restarts: options.n_restarts,
                n_converged: 0,
                error: None,
            };
            match fit(kind, train, chamber, context, options) {
                Ok(res) => {
                    walls.push(res.fit_wall_time);
                    cell.params = Some(res.params);
                    cell.r_squared_train = Some(res.r_squared);
                    cell.n_converged = res.n_converged;
                    let slot = &mut eval_params[kind as usize];
                    slot.get_or_insert(res.params);
                    let measured = validation.pressure(chamber);
                    match predict_open_loop(&res.params, validation, chamber)
                        .and_then(|pred| Ok((metrics(&pred, &measured, dt)?, pred)))
                    {
                        Ok((m, pred)) => {
                            cell.r_squared = Some(m.r_squared);
                            cell.r_squared_pressure = Some(m.r_squared_pressure);
                            cell.iae = Some(m.iae);
                            cell.error_sum_gpa =
                                Some(pred.iter().zip(&measured).map(|(a, b)| (a - b).abs()).sum::<f64>() * 1e-9);
                        }
                        Err(e) => cell.error = Some(format!("prediction: {e}")),
                    }
                }
                Err(e) => {
                    walls.push(0.0);
                    cell.error = Some(e.to_string());
                }
            }
            cells.push(cell);
        }
    }

    let eval_cost = ModelKind::ALL
        .iter()
        .zip(&eval_params)
        .filter_map(|(_, p)| p.as_ref())
        .map(|p| measure_eval_cost(p, validation, 0, 1_000_000))
        .collect();

    Ok(Comparison {
        report: ComparisonReport {
            train_samples: train.len(),
            validation_samples: validation.len(),
            options: *options,
            cells,
        },
        timings: Timings {
            eval_cost,
            fit_wall_time_s: walls,
        },
    })
}
