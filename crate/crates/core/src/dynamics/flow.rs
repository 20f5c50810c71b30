//! Valve orifice areas and compressible orifice flow.

use serde::{Deserialize, Serialize};

use super::DynamicsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasConstants {
    pub gamma: f64,
    #[serde(rename = "r_gas_j_per_kg_k")]
    pub r_gas: f64,
    #[serde(rename = "temperature_k")]
    pub temperature: f64,
}

impl Default for GasConstants {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            r_gas: 287.05,
            temperature: 293.15,
        }
    }
}

impl GasConstants {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.gamma > 1.0 && self.r_gas > 0.0 && self.temperature > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "gas constants must satisfy gamma > 1, R > 0, T > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// `R * T`, in J/kg.
    pub fn rt(&self) -> f64 {
        self.r_gas * self.temperature
    }
}

/// ISO 6358 flow-function constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConstants {
    pub a: f64,
    /// Critical pressure ratio.
    pub b: f64,
    /// Subsonic exponent.
    pub beta_flow: f64,
}

impl Default for FlowConstants {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.528,
            beta_flow: 0.5,
        }
    }
}

impl FlowConstants {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(0.0 < self.b && self.b < self.a && self.a <= 1.0 && self.beta_flow > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "flow constants must satisfy 0 < b < a <= 1, beta > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Proportional valve, in scaled area units.
///
/// The inlet opens above `u_in_volts`, the outlet below `u_out_volts`;
/// `l_in`/`l_out` set the leakage floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValveParams {
    #[serde(rename = "l_in_area")]
    pub l_in: f64,
    #[serde(rename = "l_out_area")]
    pub l_out: f64,
    #[serde(rename = "b_area_per_volt")]
    pub b: f64,
    pub u_in_volts: f64,
    pub u_out_volts: f64,
}

impl Default for ValveParams {
    fn default() -> Self {
        Self {
            l_in: 0.05,
            l_out: 0.05,
            b: 10.0,
            u_in_volts: 6.5,
            u_out_volts: 5.5,
        }
    }
}

impl ValveParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.l_in >= 0.0 && self.l_out >= 0.0 && self.b > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "valve needs L_in, L_out >= 0 and B > 0 (got {self:?})"
            )));
        }
        if !(self.u_in_volts.is_finite() && self.u_out_volts.is_finite()) {
            return Err(DynamicsError::InvalidParameter("valve centers must be finite".into()));
        }
        Ok(())
    }

    /// Voltage halfway between the two valve centers.
    pub fn center_volts(&self) -> f64 {
        0.5 * (self.u_in_volts + self.u_out_volts)
    }
}

/// Smooth maximum of `x` and zero: `(sqrt(x^2 + 1) + x) / 2`.
#[inline]
pub fn smax(x: f64) -> f64 {
    0.5 * ((x * x + 1.0).sqrt() + x)
}

/// Inlet and outlet orifice areas for valve command `u_volts`.
#[inline]
pub fn orifice_areas(u_volts: f64, valve: &ValveParams) -> (f64, f64) {
    let a_in = valve.l_in + smax(valve.b * (u_volts - valve.u_in_volts) - valve.l_in);
    let a_out = valve.l_out + smax(valve.b * (valve.u_out_volts - u_volts) - valve.l_out);
    (a_in, a_out)
}

/// Choked-flow value of the flow function.
pub fn psi_max(gamma: f64) -> f64 {
    (2.0 / (gamma + 1.0)).powf(1.0 / (gamma - 1.0)) * (gamma / (gamma + 1.0)).sqrt()
}

/// ISO 6358 flow function for flow from `p_u` down to `p_d`.
pub fn flow_function(
    p_u: f64,
    p_d: f64,
    flow: &FlowConstants,
    gas: &GasConstants,
) -> Result<f64, DynamicsError> {
    if !(p_d > 0.0 && p_u >= p_d) {
        return Err(DynamicsError::Orientation { p_u, p_d });
    }
    Ok(flow_function_unchecked(p_d / p_u, flow, psi_max(gas.gamma)))
}

#[inline]
pub(crate) fn flow_function_unchecked(ratio: f64, flow: &FlowConstants, psi_max: f64) -> f64 {
    if ratio <= flow.b {
        psi_max
    } else {
        let base = 1.0 - (ratio - flow.b) / (flow.a - flow.b);
        if base <= 0.0 {
            0.0
        } else {
            psi_max * base.powf(flow.beta_flow)
        }
    }
}

/// Mass flow through an orifice of area `area` from `p_u` to `p_d`.
pub fn mass_flow(
    area: f64,
    p_u: f64,
    p_d: f64,
    c_d: f64,
    flow: &FlowConstants,
    gas: &GasConstants,
) -> Result<f64, DynamicsError> {
    if area < 0.0 {
        return Err(DynamicsError::InvalidParameter(format!("negative orifice area {area}")));
    }
    let psi = flow_function(p_u, p_d, flow, gas)?;
    Ok(area * c_d * psi * p_u * (2.0 / gas.rt()).sqrt())
}
