//! The three chamber pressure models behind one evaluation interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::flow::{
    flow_function_unchecked, orifice_areas, psi_max, smax, FlowConstants, GasConstants,
    ValveParams,
};
use super::geometry::{chamber_volumes, JointGeometry, JointState};
use super::DynamicsError;

pub const ATMOSPHERIC_PA: f64 = 101_325.0;
/// Default absolute supply pressure (about 100 psig).
pub const DEFAULT_SUPPLY_PA: f64 = 790_000.0;

/// What drives a chamber at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Excitation {
    /// Commanded absolute pressure; used by the linear model.
    pub p_cmd_pa: f64,
    /// Valve command; used by the nonlinear and parametric models.
    pub u_volts: f64,
    pub joint: JointState,
}

/// Common interface of every pressure model: `p, inputs -> dp/dt`.
pub trait PressureModel {
    /// Rate of change of absolute chamber pressure, in Pa/s.
    fn pdot(&self, chamber: usize, p: f64, input: &Excitation) -> Result<f64, DynamicsError>;

    /// Magnitude beyond which an integrated pressure counts as diverged.
    fn divergence_limit(&self) -> f64 {
        10.0 * DEFAULT_SUPPLY_PA
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Nonlinear,
    Parametric,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Linear, ModelKind::Nonlinear, ModelKind::Parametric];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Nonlinear => "nonlinear",
            ModelKind::Parametric => "parametric",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "nonlinear" | "non-linear" => Ok(ModelKind::Nonlinear),
            "parametric" => Ok(ModelKind::Parametric),
            other => Err(DynamicsError::InvalidParameter(format!("unknown model kind `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Linear

/// First-order lag toward the commanded pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    #[serde(rename = "alpha_per_s")]
    pub alpha: f64,
    #[serde(rename = "beta_per_s")]
    pub beta: f64,
}

impl LinearParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "linear model needs alpha > 0 and beta > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn pdot_linear(p: f64, p_cmd: f64, params: &LinearParams) -> f64 {
    -params.alpha * p + params.beta * p_cmd
}

impl PressureModel for LinearParams {
    #[inline]
    fn pdot(&self, _chamber: usize, p: f64, input: &Excitation) -> Result<f64, DynamicsError> {
        Ok(pdot_linear(p, input.p_cmd_pa, self))
    }
}

// ---------------------------------------------------------------------------
// Nonlinear

/// First-principles chamber model: orifice flow in from the supply, out to
/// atmosphere, plus the compression term from the chamber volume changing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonlinearParams {
    pub valve: ValveParams,
    /// Scale on the volume-change term.
    pub w: f64,
    pub c_d: f64,
    /// Physical area of one scaled valve-area unit.
    pub area_unit_m2: f64,
    pub p_src_pa: f64,
    pub p_atm_pa: f64,
    pub gas: GasConstants,
    pub flow: FlowConstants,
    pub geometry: JointGeometry,
}

impl Default for NonlinearParams {
    fn default() -> Self {
        Self {
            valve: ValveParams::default(),
            w: 1.0,
            c_d: 1.0,
            area_unit_m2: 1e-8,
            p_src_pa: DEFAULT_SUPPLY_PA,
            p_atm_pa: ATMOSPHERIC_PA,
            gas: GasConstants::default(),
            flow: FlowConstants::default(),
            geometry: JointGeometry::default(),
        }
    }
}

impl NonlinearParams {
    pub const FITTED: [&'static str; 6] = ["l_in", "l_out", "b", "u_in", "u_out", "w"];

    pub fn validate(&self) -> Result<(), DynamicsError> {
        self.valve.validate()?;
        self.gas.validate()?;
        self.flow.validate()?;
        self.geometry.validate()?;
        if !(self.p_src_pa > self.p_atm_pa && self.p_atm_pa > 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "need p_src > p_atm > 0".into(),
            ));
        }
        if !(self.c_d > 0.0 && self.c_d <= 1.0 && self.area_unit_m2 > 0.0 && self.w.is_finite()) {
            return Err(DynamicsError::InvalidParameter(
                "need 0 < C_d <= 1, area unit > 0 and finite w".into(),
            ));
        }
        Ok(())
    }

    /// The six identified parameters, in [`NonlinearParams::FITTED`] order.
    pub fn fitted_values(&self) -> [f64; 6] {
        [
            self.valve.l_in,
            self.valve.l_out,
            self.valve.b,
            self.valve.u_in_volts,
            self.valve.u_out_volts,
            self.w,
        ]
    }

    pub fn with_fitted_values(&self, x: &[f64]) -> Self {
        let mut out = *self;
        out.valve.l_in = x[0];
        out.valve.l_out = x[1];
        out.valve.b = x[2];
        out.valve.u_in_volts = x[3];
        out.valve.u_out_volts = x[4];
        out.w = x[5];
        out
    }

    /// Whether `p` lies in the physical envelope `[p_atm, p_src]`.
    pub fn in_envelope(&self, p: f64) -> bool {
        (self.p_atm_pa..=self.p_src_pa).contains(&p)
    }

    #[inline]
    fn orifice_mass_flow(&self, area_m2: f64, p_u: f64, p_d: f64, psi_max: f64) -> f64 {
        let psi = flow_function_unchecked(p_d / p_u, &self.flow, psi_max);
        area_m2 * self.c_d * psi * p_u * (2.0 / self.gas.rt()).sqrt()
    }

    /// Net flow from `p_a` to `p_b`; negative when it runs backwards.
    #[inline]
    fn signed_mass_flow(&self, area_m2: f64, p_a: f64, p_b: f64, psi_max: f64) -> f64 {
        if p_a >= p_b {
            self.orifice_mass_flow(area_m2, p_a, p_b, psi_max)
        } else {
            -self.orifice_mass_flow(area_m2, p_b, p_a, psi_max)
        }
    }
}

/// Pressure rate for given physical orifice areas (m^2) and chamber volume.
///
/// Pressures outside `[p_atm, p_src]` are admitted; flow then reverses
/// through whichever orifice is upstream.
pub fn pressure_rate(
    p: f64,
    a_in_m2: f64,
    a_out_m2: f64,
    volume: f64,
    volume_rate: f64,
    params: &NonlinearParams,
) -> Result<f64, DynamicsError> {
    if !(p > 0.0) {
        return Err(DynamicsError::Orientation { p_u: p, p_d: 0.0 });
    }
    let pm = psi_max(params.gas.gamma);
    let m_in = params.signed_mass_flow(a_in_m2, params.p_src_pa, p, pm);
    let m_out = params.signed_mass_flow(a_out_m2, p, params.p_atm_pa, pm);
    let gamma = params.gas.gamma;
    Ok(gamma * params.gas.rt() / volume * (m_in - m_out)
        - gamma * params.w * volume_rate / volume * p)
}

#[inline]
pub fn pdot_nonlinear(
    p: f64,
    u_volts: f64,
    state: &JointState,
    chamber: usize,
    params: &NonlinearParams,
) -> Result<f64, DynamicsError> {
    let (volume, volume_rate) = chamber_volumes(chamber, state, &params.geometry)?;
    let (a_in, a_out) = orifice_areas(u_volts, &params.valve);
    pressure_rate(
        p,
        a_in * params.area_unit_m2,
        a_out * params.area_unit_m2,
        volume,
        volume_rate,
        params,
    )
}

impl PressureModel for NonlinearParams {
    #[inline]
    fn pdot(&self, chamber: usize, p: f64, input: &Excitation) -> Result<f64, DynamicsError> {
        pdot_nonlinear(p, input.u_volts, &input.joint, chamber, self)
    }

    fn divergence_limit(&self) -> f64 {
        10.0 * self.p_src_pa
    }
}

// ---------------------------------------------------------------------------
// Parametric

/// Pressure unit of the parametric model (1 bar).
pub const PARAMETRIC_PRESSURE_UNIT_PA: f64 = 1e5;
/// Corner width of the steady-state saturation, in bar.
const SATURATION_WIDTH: f64 = 0.05;
/// Smoothing of `|u_hat|` in the rate gate, in volts.
const GATE_EPS: f64 = 1e-3;

/// Free coefficients of the parametric model.
///
/// The model works in bar for pressure and in units of the neutral chamber
/// volume for `V` (so `V_dot` is in neutral volumes per second).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParametricParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub c_b: f64,
    pub c_s: f64,
    pub c_gamma: f64,
}

impl ParametricParams {
    pub const NAMES: [&'static str; 12] = [
        "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9", "c_b", "c_s", "c_gamma",
    ];

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.c1, self.c2, self.c3, self.c4, self.c5, self.c6, self.c7, self.c8, self.c9,
            self.c_b, self.c_s, self.c_gamma,
        ]
    }

    pub fn from_slice(c: &[f64]) -> Self {
        Self {
            c1: c[0],
            c2: c[1],
            c3: c[2],
            c4: c[3],
            c5: c[4],
            c6: c[5],
            c7: c[6],
            c8: c[7],
            c9: c[8],
            c_b: c[9],
            c_s: c[10],
            c_gamma: c[11],
        }
    }
}

/// Parametric coefficients plus the plant context they are evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricModel {
    pub coeffs: ParametricParams,
    pub geometry: JointGeometry,
    pub p_atm_pa: f64,
    pub p_src_pa: f64,
}

/// Steady-state shaping `g`: a smooth clamp of `x` to `[lo, hi]`.
#[inline]
pub fn steady_state_saturation(x: f64, lo: f64, hi: f64) -> f64 {
    let w = SATURATION_WIDTH;
    lo + w * smax((x - lo) / w) - w * smax((x - hi) / w)
}

/// Rate gate `k`: `c8 + c9 |u_hat|^c_gamma`, with `|u_hat|` smoothed at zero.
#[inline]
pub fn rate_gate(u_hat: f64, c_gamma: f64, c9: f64, c8: f64) -> f64 {
    c8 + c9 * (u_hat * u_hat + GATE_EPS * GATE_EPS).powf(0.5 * c_gamma)
}

/// Steady-state target `s` (bar) and rate `r` (1/s).
#[inline]
pub fn parametric_target_and_rate(
    u_volts: f64,
    volume: f64,
    volume_rate: f64,
    model: &ParametricModel,
) -> (f64, f64) {
    let c = &model.coeffs;
    let v_ref = model.geometry.neutral_volume_m3();
    let v = volume / v_ref;
    let v_dot = volume_rate / v_ref;
    let u_hat = u_volts - c.c1;
    let g = steady_state_saturation(
        c.c2 * u_hat + c.c3 * u_hat * u_hat * u_hat,
        model.p_atm_pa / PARAMETRIC_PRESSURE_UNIT_PA,
        model.p_src_pa / PARAMETRIC_PRESSURE_UNIT_PA,
    );
    let s = c.c_b + c.c_s * g + c.c4 * v_dot;
    let k = rate_gate(u_hat, c.c_gamma, c.c9, c.c8);
    let r = (c.c7 * k + c.c5 * v_dot) / (1.0 + c.c6 * v);
    (s, r)
}

/// Parametric pressure rate in Pa/s. A non-positive rate `r` means the
/// coefficients are not a valid model at this operating point.
#[inline]
pub fn pdot_parametric(
    p: f64,
    u_volts: f64,
    volume: f64,
    volume_rate: f64,
    model: &ParametricModel,
) -> Result<f64, DynamicsError> {
    let (s, r) = parametric_target_and_rate(u_volts, volume, volume_rate, model);
    if !(r > 0.0) {
        return Err(DynamicsError::InvalidParameterization { rate: r });
    }
    Ok((s - p / PARAMETRIC_PRESSURE_UNIT_PA) * r * PARAMETRIC_PRESSURE_UNIT_PA)
}

impl PressureModel for ParametricModel {
    #[inline]
    fn pdot(&self, chamber: usize, p: f64, input: &Excitation) -> Result<f64, DynamicsError> {
        let (volume, volume_rate) = chamber_volumes(chamber, &input.joint, &self.geometry)?;
        pdot_parametric(p, input.u_volts, volume, volume_rate, self)
    }

    fn divergence_limit(&self) -> f64 {
        10.0 * self.p_src_pa
    }
}

// ---------------------------------------------------------------------------

/// Parameters of any of the three models, tagged by `model_kind` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearParams),
    Nonlinear(NonlinearParams),
    Parametric(ParametricModel),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Linear(_) => ModelKind::Linear,
            ModelParams::Nonlinear(_) => ModelKind::Nonlinear,
            ModelParams::Parametric(_) => ModelKind::Parametric,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, DynamicsError> {
        serde_json::from_str(s).map_err(|e| DynamicsError::InvalidParameter(e.to_string()))
    }
}

impl PressureModel for ModelParams {
    #[inline]
    fn pdot(&self, chamber: usize, p: f64, input: &Excitation) -> Result<f64, DynamicsError> {
        match self {
            ModelParams::Linear(m) => m.pdot(chamber, p, input),
            ModelParams::Nonlinear(m) => m.pdot(chamber, p, input),
            ModelParams::Parametric(m) => m.pdot(chamber, p, input),
        }
    }

    fn divergence_limit(&self) -> f64 {
        match self {
            ModelParams::Linear(m) => m.divergence_limit(),
            ModelParams::Nonlinear(m) => m.divergence_limit(),
            ModelParams::Parametric(m) => m.divergence_limit(),
        }
    }
}
