//! Multi-start bounded least-squares fitting of one chamber's model.
//!
//! The loss is on pressure rates: `sum (pdot_model - pdot_data)^2`, with
//! `pdot_data` the central difference of the measured pressure and the
//! residuals scaled by its standard deviation. Each restart draws a start
//! point from the per-model ranges below, runs Levenberg-Marquardt on the
//! unit cube and, for the parametric model, falls back to Nelder-Mead when
//! LM does not converge.
//!
//! | model      | parameter          | bounds         | start draw            |
//! |------------|--------------------|----------------|-----------------------|
//! | linear     | alpha, beta (1/s)  | [1e-3, 1e3]    | log-uniform [0.1, 100]|
//! | nonlinear  | L_in, L_out        | [1e-4, 10]     | log-uniform [5e-3, 0.5]|
//! | nonlinear  | B (1/V)            | [0.1, 1e3]     | log-uniform [1, 100]  |
//! | nonlinear  | U_in (V)           | [0, 12]        | uniform [5, 9]        |
//! | nonlinear  | U_out (V)          | [0, 12]        | uniform [3, 7]        |
//! | nonlinear  | w                  | [0, 5]         | uniform [0.2, 2]      |
//! | parametric | c1..c9, c_b, c_s   | [-10, 10]      | uniform [-10, 10]     |
//! | parametric | c_gamma            | [0.1, 3]       | uniform [0.5, 2]      |
//!
//! Parametric start points with `r <= 0` anywhere on the training data are
//! redrawn.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{std_dev, Dataset};
use super::optim::{levenberg_marquardt, nelder_mead, LmOptions, NelderMeadOptions, Outcome};
use super::{central_difference, metrics, predict_open_loop, SysidError};
use crate::dynamics::{
    chamber_volumes, orifice_areas, parametric_target_and_rate, pdot_parametric, pressure_rate,
    LinearParams, ModelKind, ModelParams, NonlinearParams, ParametricModel, ParametricParams,
    ATMOSPHERIC_PA, CHAMBERS, DEFAULT_SUPPLY_PA,
};

/// Plant quantities that are not identified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitContext {
    /// Fixed parts of the nonlinear model (gas, flow constants, geometry,
    /// supply, area unit, C_d); the six fitted fields are ignored.
    pub nonlinear: NonlinearParams,
    /// Geometry and pressure envelope of the parametric model; the
    /// coefficients are ignored.
    pub parametric: ParametricModel,
}

impl Default for FitContext {
    fn default() -> Self {
        let nonlinear = NonlinearParams::default();
        Self {
            nonlinear,
            parametric: ParametricModel {
                coeffs: ParametricParams::default(),
                geometry: nonlinear.geometry,
                p_atm_pa: ATMOSPHERIC_PA,
                p_src_pa: DEFAULT_SUPPLY_PA,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub n_restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub nelder_mead_evaluations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_restarts: 20,
            seed: 0,
            max_iterations: 100,
            nelder_mead_evaluations: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    /// Training R^2 of the pressure rates; `None` if no valid point was
    /// found.
    pub r_squared: Option<f64>,
    pub converged: bool,
    pub termination: String,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_kind: ModelKind,
    pub chamber: usize,
    pub params: ModelParams,
    /// Training R^2 of the pressure rates.
    pub r_squared: f64,
    /// Open-loop IAE on the training data, Pa s; `None` if the open-loop
    /// prediction diverges.
    pub iae: Option<f64>,
    pub n_restarts: usize,
    pub n_converged: usize,
    pub best_restart_seed: u64,
    /// Wall-clock seconds; machine-dependent, so not serialized.
    #[serde(skip)]
    pub fit_wall_time: f64,
    pub restarts: Vec<RestartSummary>,
}

#[derive(Debug, Clone, Copy)]
struct Dim {
    lo: f64,
    hi: f64,
    log: bool,
    init: (f64, f64),
}

impl Dim {
    const fn log(lo: f64, hi: f64, init: (f64, f64)) -> Self {
        Self { lo, hi, log: true, init }
    }

    const fn lin(lo: f64, hi: f64, init: (f64, f64)) -> Self {
        Self { lo, hi, log: false, init }
    }

    fn value(&self, z: f64) -> f64 {
        if self.log {
            (self.lo.ln() + z * (self.hi.ln() - self.lo.ln())).exp()
        } else {
            self.lo + z * (self.hi - self.lo)
        }
    }

    fn unit(&self, x: f64) -> f64 {
        let z = if self.log {
            (x.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (x - self.lo) / (self.hi - self.lo)
        };
        z.clamp(0.0, 1.0)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (a, b) = self.init;
        let x = if self.log {
            (rng.random_range(a.ln()..=b.ln())).exp()
        } else {
            rng.random_range(a..=b)
        };
        self.unit(x)
    }
}

fn dims(kind: ModelKind) -> Vec<Dim> {
    match kind {
        ModelKind::Linear => vec![Dim::log(1e-3, 1e3, (0.1, 100.0)); 2],
        ModelKind::Nonlinear => vec![
            Dim::log(1e-4, 10.0, (5e-3, 0.5)),
            Dim::log(1e-4, 10.0, (5e-3, 0.5)),
            Dim::log(0.1, 1e3, (1.0, 100.0)),
            Dim::lin(0.0, 12.0, (5.0, 9.0)),
            Dim::lin(0.0, 12.0, (3.0, 7.0)),
            Dim::lin(0.0, 5.0, (0.2, 2.0)),
        ],
        ModelKind::Parametric => {
            let mut d = vec![Dim::lin(-10.0, 10.0, (-10.0, 10.0)); 11];
            d.push(Dim::lin(0.1, 3.0, (0.5, 2.0)));
            d
        }
    }
}

/// One chamber's training data, prepared once per fit.
struct Problem {
    kind: ModelKind,
    ctx: FitContext,
    dims: Vec<Dim>,
    p: Vec<f64>,
    p_cmd: Vec<f64>,
    u: Vec<f64>,
    volume: Vec<f64>,
    volume_rate: Vec<f64>,
    pdot: Vec<f64>,
    inv_scale: f64,
}

impl Problem {
    fn new(kind: ModelKind, train: &Dataset, chamber: usize, ctx: &FitContext) -> Result<Self, SysidError> {
        let p = train.pressure(chamber);
        let pdot = central_difference(&p, train.dt());
        let sigma = std_dev(&pdot);
        if !(sigma > 0.0) {
            return Err(SysidError::InvalidParameter(format!(
                "chamber {chamber}: pressure never changes, nothing to fit"
            )));
        }
        let geometry = match kind {
            ModelKind::Parametric => ctx.parametric.geometry,
            _ => ctx.nonlinear.geometry,
        };
        let mut volume = Vec::with_capacity(p.len());
        let mut volume_rate = Vec::with_capacity(p.len());
        for j in &train.joint {
            let (v, vd) = chamber_volumes(chamber, j, &geometry)?;
            volume.push(v);
            volume_rate.push(vd);
        }
        Ok(Self {
            kind,
            ctx: *ctx,
            dims: dims(kind),
            p_cmd: train.command(chamber),
            u: train.u.iter().map(|u| u[chamber]).collect(),
            p,
            volume,
            volume_rate,
            pdot,
            inv_scale: 1.0 / sigma,
        })
    }

    fn params(&self, z: &[f64]) -> ModelParams {
        let x: Vec<f64> = self.dims.iter().zip(z).map(|(d, &z)| d.value(z)).collect();
        match self.kind {
            ModelKind::Linear => ModelParams::Linear(LinearParams { alpha: x[0], beta: x[1] }),
            ModelKind::Nonlinear => ModelParams::Nonlinear(self.ctx.nonlinear.with_fitted_values(&x)),
            ModelKind::Parametric => ModelParams::Parametric(ParametricModel {
                coeffs: ParametricParams::from_slice(&x),
                ..self.ctx.parametric
            }),
        }
    }

    /// Model rate matched to the central-difference stencil: the input is
    /// held over each sample interval, so the rate at an interior sample
    /// averages the inputs held before and after it.
    fn model_rates(&self, params: &ModelParams) -> Option<Vec<f64>> {
        let n = self.p.len();
        let rate = |k: usize, j: usize| -> Option<f64> {
            match params {
                ModelParams::Linear(m) => Some(-m.alpha * self.p[k] + m.beta * self.p_cmd[j]),
                ModelParams::Nonlinear(m) => {
                    let (a_in, a_out) = orifice_areas(self.u[j], &m.valve);
                    pressure_rate(
                        self.p[k],
                        a_in * m.area_unit_m2,
                        a_out * m.area_unit_m2,
                        self.volume[k],
                        self.volume_rate[k],
                        m,
                    )
                    .ok()
                }
                ModelParams::Parametric(m) => {
                    pdot_parametric(self.p[k], self.u[j], self.volume[k], self.volume_rate[k], m).ok()
                }
            }
        };
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let v = if k == 0 {
                rate(0, 0)?
            } else if k == n - 1 {
                rate(k, k - 1)?
            } else {
                0.5 * (rate(k, k - 1)? + rate(k, k)?)
            };
            out.push(v);
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    fn residuals(&self, z: &[f64]) -> Option<Vec<f64>> {
        let mut r = self.model_rates(&self.params(z))?;
        for (r, d) in r.iter_mut().zip(&self.pdot) {
            *r = (*r - d) * self.inv_scale;
        }
        Some(r)
    }

    fn r_squared_from_cost(&self, half_sq: f64) -> f64 {
        1.0 - 2.0 * half_sq / self.p.len() as f64
    }

    /// Parametric starts must give a positive rate everywhere.
    fn valid_start(&self, z: &[f64]) -> bool {
        match self.params(z) {
            ModelParams::Parametric(m) => (0..self.p.len()).all(|k| {
                parametric_target_and_rate(self.u[k], self.volume[k], self.volume_rate[k], &m).1 > 0.0
            }),
            _ => true,
        }
    }

    fn start(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        for _ in 0..10_000 {
            let z: Vec<f64> = self.dims.iter().map(|d| d.draw(rng)).collect();
            if self.valid_start(&z) {
                return Some(z);
            }
        }
        None
    }

    fn restart(&self, seed: u64, opts: &FitOptions) -> (Option<Vec<f64>>, RestartSummary) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some(z0) = self.start(&mut rng) else {
            return (
                None,
                RestartSummary {
                    seed,
                    r_squared: None,
                    converged: false,
                    termination: "no valid start point".into(),
                    iterations: 0,
                    evaluations: 0,
                },
            );
        };
        let lm = LmOptions {
            max_iterations: opts.max_iterations,
            ..LmOptions::default()
        };
        let mut out: Outcome = levenberg_marquardt(|z| self.residuals(z), &z0, &lm);
        let mut evaluations = out.evaluations;
        let mut iterations = out.iterations;
        if self.kind == ModelKind::Parametric && !out.termination.converged() && out.cost.is_finite() {
            let nm = nelder_mead(
                |z| self.residuals(z).map(|r| 0.5 * r.iter().map(|v| v * v).sum::<f64>()),
                &out.z,
                &NelderMeadOptions {
                    max_evaluations: opts.nelder_mead_evaluations,
                    ..NelderMeadOptions::default()
                },
            );
            evaluations += nm.evaluations;
            iterations += nm.iterations;
            if nm.cost <= out.cost || nm.termination.converged() {
                out = Outcome {
                    z: if nm.cost <= out.cost { nm.z } else { out.z },
                    cost: nm.cost.min(out.cost),
                    ..nm
                };
            }
        }
        let valid = out.cost.is_finite();
        let summary = RestartSummary {
            seed,
            r_squared: valid.then(|| self.r_squared_from_cost(out.cost)),
            converged: valid && out.termination.converged(),
            termination: format!("{:?}", out.termination),
            iterations,
            evaluations,
        };
        (valid.then_some(out.z), summary)
    }
}

/// Fit `kind` to one chamber of `train`. Restart `i` is seeded with
/// `options.seed + i`; restarts run in parallel and the best training R^2
/// wins, ties going to the lowest index.
pub fn fit(
    kind: ModelKind,
    train: &Dataset,
    chamber: usize,
    context: &FitContext,
    options: &FitOptions,
) -> Result<FitResult, SysidError> {
    let started = Instant::now();
    if chamber >= CHAMBERS {
        return Err(SysidError::InvalidParameter(format!("chamber {chamber} out of range")));
    }
    if train.len() < 3 {
        return Err(SysidError::InvalidParameter("training set needs at least 3 samples".into()));
    }
    if options.n_restarts == 0 {
        return Err(SysidError::InvalidParameter("need at least one restart".into()));
    }
    let problem = Problem::new(kind, train, chamber, context)?;

    let runs: Vec<(Option<Vec<f64>>, RestartSummary)> = (0..options.n_restarts)
        .into_par_iter()
        .map(|i| problem.restart(options.seed.wrapping_add(i as u64), options))
        .collect();

    let n_converged = runs.iter().filter(|(_, s)| s.converged).count();
    let restarts: Vec<RestartSummary> = runs.iter().map(|(_, s)| s.clone()).collect();
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(i, (z, s))| Some((i, z.as_ref()?, s.r_squared?)))
        .fold(None::<(usize, &Vec<f64>, f64)>, |acc, cur| match acc {
            Some(a) if a.2 >= cur.2 => Some(a),
            _ => Some(cur),
        });

    let (best_idx, z, r2) = match best {
        Some(b) if n_converged > 0 => b,
        _ => {
            let diagnostics = restarts
                .iter()
                .map(|s| format!("seed {}: {}", s.seed, s.termination))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(SysidError::FitFailed { model_kind: kind, diagnostics });
        }
    };
    let params = problem.params(z);
    let iae = predict_open_loop(&params, train, chamber)
        .ok()
        .and_then(|pred| metrics(&pred, &train.pressure(chamber), train.dt()).ok())
        .map(|m| m.iae);

    Ok(FitResult {
        model_kind: kind,
        chamber,
        params,
        r_squared: r2,
        iae,
        n_restarts: options.n_restarts,
        n_converged,
        best_restart_seed: restarts[best_idx].seed,
        fit_wall_time: started.elapsed().as_secs_f64(),
        restarts,
    })
}

/// Best training R^2 over the first `k` restarts of a finished fit.
pub fn best_of_first(result: &FitResult, k: usize) -> Option<f64> {
    result.restarts[..k.min(result.restarts.len())]
        .iter()
        .filter_map(|s| s.r_squared)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}
