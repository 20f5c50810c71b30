//! Box-constrained local optimizers on the unit cube.
//!
//! Both work in normalized coordinates `z in [0, 1]^n`; callers map those to
//! physical parameters. A residual or cost function returns `None` where the
//! model is not valid, which the optimizers treat as an infinitely bad
//! point.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative cost reduction fell below tolerance.
    CostTolerance,
    /// Step length fell below tolerance.
    StepTolerance,
    /// Projected gradient vanished.
    Gradient,
    /// Residuals are essentially zero.
    ZeroResidual,
    /// Simplex collapsed (Nelder-Mead).
    SimplexTolerance,
    MaxIterations,
    /// No acceptable step could be found.
    Stalled,
    /// The starting point itself is not valid.
    InvalidStart,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(
            self,
            Termination::MaxIterations | Termination::Stalled | Termination::InvalidStart
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub z: Vec<f64>,
    /// `0.5 * sum(r^2)`, or the plain cost for Nelder-Mead.
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    /// Forward-difference step in normalized coordinates.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-10,
            xtol: 1e-10,
            gtol: 1e-10,
            fd_step: 1e-7,
        }
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Bounded Levenberg-Marquardt with a forward-difference Jacobian.
///
/// Variables sitting on a bound with the gradient pushing outward are frozen
/// for the step; the rest are solved for and the result clipped to the box.
pub fn levenberg_marquardt<F>(residual: F, z0: &[f64], opts: &LmOptions) -> Outcome
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = z0.len();
    let mut z: Vec<f64> = z0.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut evaluations = 1;
    let Some(mut r) = residual(&z) else {
        return Outcome {
            z,
            cost: f64::INFINITY,
            iterations: 0,
            evaluations,
            termination: Termination::InvalidStart,
        };
    };
    let m = r.len();
    let mut cost = half_sq(&r);
    let mut lambda = 1e-3;
    let mut jac = vec![vec![0.0; m]; n];

    for iter in 0..opts.max_iterations {
        if cost <= 1e-28 * m as f64 {
            return Outcome { z, cost, iterations: iter, evaluations, termination: Termination::ZeroResidual };
        }
        // Jacobian columns
        for j in 0..n {
            let h = if z[j] + opts.fd_step <= 1.0 { opts.fd_step } else { -opts.fd_step };
            let mut zp = z.clone();
            zp[j] += h;
            evaluations += 1;
            match residual(&zp) {
                Some(rp) => {
                    for (c, (a, b)) in jac[j].iter_mut().zip(rp.iter().zip(&r)) {
                        *c = (a - b) / h;
                    }
                }
                None => jac[j].iter_mut().for_each(|c| *c = 0.0),
            }
        }
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for a in 0..n {
            g[a] = jac[a].iter().zip(&r).map(|(x, y)| x * y).sum();
            for b in a..n {
                let v: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
                jtj[(a, b)] = v;
                jtj[(b, a)] = v;
            }
        }

        let free: Vec<usize> = (0..n)
            .filter(|&i| !((z[i] <= 0.0 && g[i] > 0.0) || (z[i] >= 1.0 && g[i] < 0.0)))
            .collect();
        let pg = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        if free.is_empty() || pg <= opts.gtol * (1.0 + cost) {
            return Outcome { z, cost, iterations: iter, evaluations, termination: Termination::Gradient };
        }

        let k = free.len();
        loop {
            let mut a = DMatrix::<f64>::zeros(k, k);
            let mut b = DVector::<f64>::zeros(k);
            for (ia, &fa) in free.iter().enumerate() {
                b[ia] = -g[fa];
                for (ib, &fb) in free.iter().enumerate() {
                    a[(ia, ib)] = jtj[(fa, fb)];
                }
                a[(ia, ia)] += lambda * (jtj[(fa, fa)].max(1e-12));
            }
            let step = a.clone().cholesky().map(|c| c.solve(&b)).or_else(|| a.lu().solve(&b));
            let Some(step) = step else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Outcome { z, cost, iterations: iter, evaluations, termination: Termination::Stalled };
                }
                continue;
            };

            let mut z_new = z.clone();
            for (ia, &fa) in free.iter().enumerate() {
                z_new[fa] = (z[fa] + step[ia]).clamp(0.0, 1.0);
            }
            let dz: f64 = z_new.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let znorm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dz <= opts.xtol * (znorm + opts.xtol) {
                return Outcome { z, cost, iterations: iter, evaluations, termination: Termination::StepTolerance };
            }

            evaluations += 1;
            let trial = residual(&z_new).map(|rn| (half_sq(&rn), rn));
            match trial {
                Some((c_new, r_new)) if c_new < cost => {
                    let reduction = cost - c_new;
                    z = z_new;
                    r = r_new;
                    cost = c_new;
                    lambda = (lambda / 3.0).max(1e-12);
                    if reduction <= opts.ftol * cost {
                        return Outcome {
                            z,
                            cost,
                            iterations: iter + 1,
                            evaluations,
                            termination: Termination::CostTolerance,
                        };
                    }
                    break;
                }
                _ => {
                    lambda *= 4.0;
                    if lambda > 1e16 {
                        return Outcome { z, cost, iterations: iter, evaluations, termination: Termination::Stalled };
                    }
                }
            }
        }
    }
    Outcome {
        z,
        cost,
        iterations: opts.max_iterations,
        evaluations,
        termination: Termination::MaxIterations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Initial simplex edge in normalized coordinates.
    pub initial_step: f64,
    /// Stop when the simplex spread in cost and position falls below this.
    pub tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 3000,
            initial_step: 0.05,
            tol: 1e-10,
        }
    }
}

/// Derivative-free Nelder-Mead on the unit cube (points are clipped).
pub fn nelder_mead<F>(cost: F, z0: &[f64], opts: &NelderMeadOptions) -> Outcome
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let n = z0.len();
    let evaluations = std::cell::Cell::new(0usize);
    let eval = |z: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        cost(z).filter(|c| c.is_finite()).unwrap_or(f64::INFINITY)
    };
    let clip = |z: Vec<f64>| -> Vec<f64> { z.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() };

    let start = clip(z0.to_vec());
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] = if v[i] + opts.initial_step <= 1.0 { v[i] + opts.initial_step } else { v[i] - opts.initial_step };
        simplex.push(v);
    }
    let mut f: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    if !f[0].is_finite() {
        return Outcome {
            z: start,
            cost: f64::INFINITY,
            iterations: 0,
            evaluations: evaluations.get(),
            termination: Termination::InvalidStart,
        };
    }

    let mut iterations = 0;
    let termination = loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        f = order.iter().map(|&i| f[i]).collect();

        let spread_f = (f[n] - f[0]).abs();
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f <= opts.tol * (f[0].abs() + opts.tol) && spread_x <= 1e3 * opts.tol.sqrt() {
            break Termination::SimplexTolerance;
        }
        if evaluations.get() >= opts.max_evaluations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clip(centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect())
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < f[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                f[n] = fe;
            } else {
                simplex[n] = xr;
                f[n] = fr;
            }
        } else if fr < f[n - 1] {
            simplex[n] = xr;
            f[n] = fr;
        } else {
            let (xc, fc) = if fr < f[n] {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            };
            if fc < f[n].min(fr) {
                simplex[n] = xc;
                f[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = clip(
                        simplex[i].iter().zip(&simplex[0]).map(|(v, b)| b + 0.5 * (v - b)).collect(),
                    );
                    f[i] = eval(&simplex[i]);
                }
            }
        }
    };
    let best = (0..=n).min_by(|&a, &b| f[a].total_cmp(&f[b])).expect("nonempty simplex");
    Outcome {
        z: simplex[best].clone(),
        cost: f[best],
        iterations,
        evaluations: evaluations.get(),
        termination,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals, mapped from the unit cube to [-2, 2]^2.
    fn rosen(z: &[f64]) -> Option<Vec<f64>> {
        let x = -2.0 + 4.0 * z[0];
        let y = -2.0 + 4.0 * z[1];
        Some(vec![10.0 * (y - x * x), 1.0 - x])
    }

    #[test]
    fn lm_solves_rosenbrock() {
        let out = levenberg_marquardt(rosen, &[0.2, 0.9], &LmOptions::default());
        assert!(out.termination.converged(), "{out:?}");
        assert!((out.z[0] - 0.75).abs() < 1e-6 && (out.z[1] - 0.75).abs() < 1e-6, "{out:?}");
    }

    #[test]
    fn lm_respects_bounds() {
        // minimum at x = 1.5, outside the box [0, 1]
        let out = levenberg_marquardt(|z: &[f64]| Some(vec![z[0] - 1.5, z[1] - 0.3]), &[0.5, 0.5], &LmOptions::default());
        assert!(out.termination.converged(), "{out:?}");
        assert_eq!(out.z[0], 1.0);
        assert!((out.z[1] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn lm_invalid_start() {
        let out = levenberg_marquardt(|_: &[f64]| None, &[0.5], &LmOptions::default());
        assert_eq!(out.termination, Termination::InvalidStart);
        assert!(!out.termination.converged());
    }

    #[test]
    fn nelder_mead_quadratic() {
        let out = nelder_mead(
            |z: &[f64]| Some((z[0] - 0.3).powi(2) + 2.0 * (z[1] - 0.6).powi(2)),
            &[0.9, 0.1],
            &NelderMeadOptions::default(),
        );
        assert!(out.termination.converged(), "{out:?}");
        assert!((out.z[0] - 0.3).abs() < 1e-4 && (out.z[1] - 0.6).abs() < 1e-4, "{out:?}");
    }

    #[test]
    fn nelder_mead_avoids_invalid_region() {
        let out = nelder_mead(
            |z: &[f64]| (z[0] > 0.2).then(|| (z[0] - 0.1).powi(2)),
            &[0.8],
            &NelderMeadOptions::default(),
        );
        assert!(out.z[0] > 0.2 && out.z[0] < 0.21, "{out:?}");
    }
}
