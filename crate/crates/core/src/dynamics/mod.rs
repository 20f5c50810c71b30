//! Chamber pressure dynamics: linear, first-principles nonlinear and
//! parametric models, the valve/flow pieces they are built from, joint
//! geometry and a fixed-step integrator.
//!
//! Everything in here works in absolute pascals.

pub mod flow;
pub mod geometry;
pub mod integrate;
pub mod models;

use thiserror::Error;

pub use flow::{
    flow_function, mass_flow, orifice_areas, psi_max, smax, FlowConstants, GasConstants,
    ValveParams,
};
pub use geometry::{chamber_volumes, JointGeometry, JointState, CHAMBERS};
pub use integrate::{integrate, rk4_step, step_pressure};
pub use models::{
    parametric_target_and_rate, pdot_linear, pdot_nonlinear, pdot_parametric, pressure_rate,
    rate_gate, steady_state_saturation, Excitation, LinearParams, ModelKind, ModelParams,
    NonlinearParams, ParametricModel, ParametricParams, PressureModel, ATMOSPHERIC_PA,
    DEFAULT_SUPPLY_PA, PARAMETRIC_PRESSURE_UNIT_PA,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("chamber {chamber} length {length} m is not positive")]
    Geometry { chamber: usize, length: f64 },
    #[error("flow orientation: upstream {p_u} Pa must be >= downstream {p_d} Pa > 0")]
    Orientation { p_u: f64, p_d: f64 },
    #[error("parametric rate r = {rate} is not positive")]
    InvalidParameterization { rate: f64 },
    #[error("integration diverged at step {step} (p = {pressure} Pa)")]
    Divergence { step: usize, pressure: f64 },
}

/// Gauge kPa to absolute Pa.
pub fn gauge_kpa_to_abs_pa(p_kpa: f64) -> f64 {
    p_kpa * 1e3 + ATMOSPHERIC_PA
}

/// Absolute Pa to gauge kPa.
pub fn abs_pa_to_gauge_kpa(p_pa: f64) -> f64 {
    (p_pa - ATMOSPHERIC_PA) * 1e-3
}
