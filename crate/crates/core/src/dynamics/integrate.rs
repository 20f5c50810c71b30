//! Fixed-step RK4 for scalar chamber pressure.
//!
//! Inputs come as one [`Excitation`] per sample. Valve voltage and pressure
//! command are held constant across a step (they change only at samples,
//! the way a digital controller emits them); the joint state is linearly
//! interpolated to the intermediate stages.

use super::models::{Excitation, PressureModel};
use super::DynamicsError;

/// One classic RK4 step of `dy/dt = f(t, y)`.
#[inline]
pub fn rk4_step<E>(
    mut f: impl FnMut(f64, f64) -> Result<f64, E>,
    t: f64,
    y: f64,
    h: f64,
) -> Result<f64, E> {
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, y + 0.5 * h * k1)?;
    let k3 = f(t + 0.5 * h, y + 0.5 * h * k2)?;
    let k4 = f(t + h, y + h * k3)?;
    Ok(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Advance chamber pressure `p` across one step of length `dt` starting at
/// `start`, with the joint moving linearly toward `end.joint`.
#[inline]
pub fn step_pressure<M: PressureModel + ?Sized>(
    model: &M,
    chamber: usize,
    p: f64,
    start: &Excitation,
    end: &Excitation,
    dt: f64,
) -> Result<f64, DynamicsError> {
    rk4_step(
        |s, y| {
            let mut x = *start;
            if s > 0.0 {
                x.joint = start.joint.lerp(&end.joint, s / dt);
            }
            model.pdot(chamber, y, &x)
        },
        0.0,
        p,
        dt,
    )
}

/// Integrate chamber `chamber` from `p0` over `inputs` sampled every `dt`.
///
/// The output has one pressure per input sample; `out[0] == p0`.
pub fn integrate<M: PressureModel + ?Sized>(
    model: &M,
    chamber: usize,
    p0: f64,
    inputs: &[Excitation],
    dt: f64,
) -> Result<Vec<f64>, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(inputs.len());
    if inputs.is_empty() {
        return Ok(out);
    }
    let limit = model.divergence_limit();
    let mut p = p0;
    out.push(p);
    for (step, pair) in inputs.windows(2).enumerate() {
        p = step_pressure(model, chamber, p, &pair[0], &pair[1], dt).map_err(|e| match e {
            DynamicsError::Orientation { .. } => DynamicsError::Divergence { step, pressure: p },
            other => other,
        })?;
        if !p.is_finite() || p.abs() > limit {
            return Err(DynamicsError::Divergence { step, pressure: p });
        }
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::models::{LinearParams, NonlinearParams};
    use crate::dynamics::flow::ValveParams;
    use crate::dynamics::JointState;

    fn constant_command(p_cmd: f64, n: usize) -> Vec<Excitation> {
        vec![
            Excitation {
                p_cmd_pa: p_cmd,
                ..Excitation::default()
            };
            n
        ]
    }

    /// Closed-form solution of dp/dt = -alpha p + beta p_cmd with p(0) = 0.
    fn exact(alpha: f64, beta: f64, p_cmd: f64, t: f64) -> f64 {
        beta / alpha * p_cmd * (1.0 - (-alpha * t).exp())
    }

    #[test]
    fn linear_matches_closed_form() {
        for alpha in [0.5, 2.0, 10.0] {
            let params = LinearParams { alpha, beta: alpha };
            let dt = 0.01;
            let n = (5.0 / alpha / dt).round() as usize + 1;
            let traj = integrate(&params, 0, 0.0, &constant_command(3e5, n), dt).unwrap();
            assert_eq!(traj.len(), n);
            for (k, p) in traj.iter().enumerate().skip(1) {
                let e = exact(alpha, alpha, 3e5, k as f64 * dt);
                assert!(((p - e) / e).abs() < 1e-3, "alpha {alpha} step {k}: {p} vs {e}");
            }
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let params = LinearParams { alpha: 10.0, beta: 10.0 };
        let t_end = 0.5;
        let err = |dt: f64| {
            let n = (t_end / dt).round() as usize + 1;
            let traj = integrate(&params, 0, 0.0, &constant_command(1.0, n), dt).unwrap();
            (traj[n - 1] - exact(10.0, 10.0, 1.0, t_end)).abs()
        };
        let order = (err(0.05) / err(0.025)).log2();
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn leak_free_chamber_holds_pressure() {
        let params = NonlinearParams {
            valve: ValveParams {
                l_in: 0.0,
                l_out: 0.0,
                b: 1e3,
                ..ValveParams::default()
            },
            ..NonlinearParams::default()
        };
        let x = Excitation {
            u_volts: params.valve.center_volts(),
            joint: JointState::default(),
            ..Excitation::default()
        };
        let traj = integrate(&params, 2, 3e5, &vec![x; 500], 0.01).unwrap();
        // only the smooth-max floor of the closed orifices leaks
        let drift = traj.iter().map(|p| (p - 3e5).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-3 * 3e5, "drift {drift} Pa");
        let open = Excitation { u_volts: 12.0, ..x };
        let filled = integrate(&params, 2, 3e5, &[open; 2], 0.01).unwrap();
        assert!(filled[1] - 3e5 > 1e3 * drift);
    }

    #[test]
    fn divergence_reports_step() {
        let params = LinearParams { alpha: -50.0, beta: 1.0 };
        let err = integrate(&params, 0, 1e5, &constant_command(0.0, 100), 0.01).unwrap_err();
        assert!(matches!(err, DynamicsError::Divergence { .. }));
    }

    #[test]
    fn empty_and_bad_step() {
        let params = LinearParams { alpha: 1.0, beta: 1.0 };
        assert!(integrate(&params, 0, 0.0, &[], 0.01).unwrap().is_empty());
        assert!(integrate(&params, 0, 0.0, &constant_command(1.0, 3), 0.0).is_err());
    }
}
