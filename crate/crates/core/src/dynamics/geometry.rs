//! Chamber lengths and volumes of a four-chamber continuum joint.
//!
//! The joint bends about two axes, `q = [u, v]`. Chambers 0/1 sit opposite
//! each other on the `u` axis and chambers 2/3 on the `v` axis, so each pair
//! lengthens and shortens antagonistically around the neutral length `h`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DynamicsError;

pub const CHAMBERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointGeometry {
    /// Neutral chamber length.
    pub h_m: f64,
    /// Offset of each chamber from the joint axis.
    pub r_m: f64,
    /// Chamber radius.
    pub delta_m: f64,
}

impl Default for JointGeometry {
    fn default() -> Self {
        Self {
            h_m: 0.10,
            r_m: 0.05,
            delta_m: 0.02,
        }
    }
}

impl JointGeometry {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.h_m > 0.0 && self.r_m > 0.0 && self.delta_m > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "joint geometry must be positive (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn cross_section_m2(&self) -> f64 {
        PI * self.delta_m * self.delta_m
    }

    /// Chamber volume at `q = 0`.
    pub fn neutral_volume_m3(&self) -> f64 {
        self.cross_section_m2() * self.h_m
    }

    /// Largest `|u|`, `|v|` keeping every chamber length positive.
    pub fn max_bend_rad(&self) -> f64 {
        self.h_m / self.r_m
    }

    /// `d l_i / d q` for chamber `i`.
    #[inline]
    pub fn length_gradient(&self, chamber: usize) -> [f64; 2] {
        match chamber {
            0 => [self.r_m, 0.0],
            1 => [-self.r_m, 0.0],
            2 => [0.0, self.r_m],
            3 => [0.0, -self.r_m],
            _ => panic!("chamber index {chamber} out of range"),
        }
    }

    /// Chamber lengths `[h + r u, h - r u, h + r v, h - r v]`.
    pub fn lengths(&self, q: [f64; 2]) -> [f64; CHAMBERS] {
        let [u, v] = q;
        [
            self.h_m + self.r_m * u,
            self.h_m - self.r_m * u,
            self.h_m + self.r_m * v,
            self.h_m - self.r_m * v,
        ]
    }
}

/// Bending angles and their rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    #[serde(rename = "q_rad")]
    pub q: [f64; 2],
    #[serde(rename = "q_dot_rad_per_s")]
    pub q_dot: [f64; 2],
}

impl JointState {
    pub fn at_rest(q: [f64; 2]) -> Self {
        Self { q, q_dot: [0.0; 2] }
    }

    pub fn lerp(&self, other: &Self, s: f64) -> Self {
        let mix = |a: f64, b: f64| a + (b - a) * s;
        Self {
            q: [mix(self.q[0], other.q[0]), mix(self.q[1], other.q[1])],
            q_dot: [mix(self.q_dot[0], other.q_dot[0]), mix(self.q_dot[1], other.q_dot[1])],
        }
    }
}

/// Volume of chamber `chamber` and its rate of change.
#[inline]
pub fn chamber_volumes(
    chamber: usize,
    state: &JointState,
    geom: &JointGeometry,
) -> Result<(f64, f64), DynamicsError> {
    if chamber >= CHAMBERS {
        return Err(DynamicsError::InvalidParameter(format!(
            "chamber index {chamber} out of range"
        )));
    }
    let grad = geom.length_gradient(chamber);
    let length = geom.h_m + grad[0] * state.q[0] + grad[1] * state.q[1];
    if !(length > 0.0) {
        return Err(DynamicsError::Geometry { chamber, length });
    }
    let area = geom.cross_section_m2();
    let length_rate = grad[0] * state.q_dot[0] + grad[1] * state.q_dot[1];
    Ok((area * length, area * length_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn neutral_pose_is_symmetric() {
        let g = JointGeometry::default();
        let s = JointState::default();
        for i in 0..CHAMBERS {
            let (v, vd) = chamber_volumes(i, &s, &g).unwrap();
            assert_relative_eq!(v, PI * g.delta_m.powi(2) * g.h_m, max_relative = 1e-15);
            assert_eq!(vd, 0.0);
        }
    }

    #[test]
    fn antagonistic_pair_conserves_volume() {
        let g = JointGeometry::default();
        let s = JointState {
            q: [0.7, 0.0],
            q_dot: [1.3, 0.0],
        };
        let (v0, vd0) = chamber_volumes(0, &s, &g).unwrap();
        let (v1, vd1) = chamber_volumes(1, &s, &g).unwrap();
        assert_relative_eq!(v0 + v1, 2.0 * g.neutral_volume_m3(), max_relative = 1e-14);
        assert_relative_eq!(vd0, g.cross_section_m2() * g.r_m * 1.3, max_relative = 1e-14);
        assert_eq!(vd0, -vd1);
    }

    #[test]
    fn collapsed_chamber_is_rejected() {
        let g = JointGeometry::default();
        let s = JointState::at_rest([g.max_bend_rad() + 0.1, 0.0]);
        assert!(matches!(
            chamber_volumes(1, &s, &g),
            Err(DynamicsError::Geometry { chamber: 1, .. })
        ));
        assert!(chamber_volumes(0, &s, &g).is_ok());
        assert!(chamber_volumes(4, &s, &g).is_err());
    }
}
