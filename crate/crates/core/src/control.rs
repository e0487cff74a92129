//! Source control for the regularized sandpile equation: reduced objective
//! j(f) = 1/2 ||u(f) - u_d||_L2^2 + lambda ||f||_L2^2, its adjoint-based
//! gradient, and a damped steepest-descent optimizer.

use crate::grid::NodalField;
use crate::grid::ObstacleField;
use crate::sensitivity::solve_adjoint;
use crate::state::{solve_state, SolveError, SolverParams};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Descent {
    FixedStep { step: f64 },
    Armijo { c1: f64, backtrack: f64 },
}

#[derive(Debug, Clone)]
pub struct ControlParams {
    /// Tikhonov weight on ||f||_L2^2.
    pub lambda: f64,
    /// Tracking target.
    pub u_d: NodalField,
    pub descent: Descent,
    pub max_outer: usize,
    /// Stopping tolerance on the L2 norm of the reduced gradient.
    pub tol_grad: f64,
}

impl ControlParams {
    pub fn new(lambda: f64, u_d: NodalField) -> Self {
        assert!(lambda >= 0.0);
        ControlParams {
            lambda,
            u_d,
            descent: Descent::Armijo {
                c1: 1e-4,
                backtrack: 0.5,
            },
            max_outer: 100,
            tol_grad: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TracePoint {
    pub objective: f64,
    pub grad_norm_l2: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ControlStatus {
    Converged,
    MaxOuterReached,
    /// Armijo backtracking exhausted; the best iterate so far is returned.
    LineSearchFailure,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ControlTrace {
    pub status: ControlStatus,
    pub points: Vec<TracePoint>,
}

fn tracking_value(u: &NodalField, f: &NodalField, cparams: &ControlParams) -> f64 {
    let mis = u.sum_scaled(-1.0, &cparams.u_d);
    let nf = f.l2_norm();
    0.5 * mis.l2_inner(&mis) + cparams.lambda * nf * nf
}

/// j(f) = J(u(f), f). Solves the state equation internally.
pub fn objective(
    f: &NodalField,
    phi: &ObstacleField,
    cparams: &ControlParams,
    sparams: &SolverParams,
) -> Result<f64, SolveError> {
    let (u, _) = solve_state(f, phi, sparams, None)?;
    Ok(tracking_value(&u, f, cparams))
}

/// L2 Riesz representative of the reduced derivative away from kinks:
/// p + 2*lambda*f with p the adjoint state of the tracking mismatch.
pub fn reduced_gradient(
    f: &NodalField,
    phi: &ObstacleField,
    cparams: &ControlParams,
    sparams: &SolverParams,
) -> Result<NodalField, SolveError> {
    let (u, _) = solve_state(f, phi, sparams, None)?;
    reduced_gradient_at(&u, f, phi, cparams, sparams)
}

fn reduced_gradient_at(
    u: &NodalField,
    f: &NodalField,
    phi: &ObstacleField,
    cparams: &ControlParams,
    sparams: &SolverParams,
) -> Result<NodalField, SolveError> {
    let mismatch = u.sum_scaled(-1.0, &cparams.u_d);
    let p = solve_adjoint(u, &mismatch, phi, sparams)?;
    Ok(p.sum_scaled(2.0 * cparams.lambda, f))
}

/// Damped steepest descent on the reduced objective. State solves are
/// warm-started from the previous accepted state.
pub fn optimize(
    f_init: &NodalField,
    phi: &ObstacleField,
    cparams: &ControlParams,
    sparams: &SolverParams,
) -> Result<(NodalField, ControlTrace), SolveError> {
    let mut f = f_init.clone();
    let mut warm: Option<NodalField> = None;
    let mut points = Vec::new();
    let mut step_hint = 1.0;

    let solve = |f: &NodalField, warm: &Option<NodalField>| {
        solve_state(f, phi, sparams, warm.as_ref()).map(|(u, _)| u)
    };

    let mut u = solve(&f, &warm)?;
    warm = Some(u.clone());
    let mut j = tracking_value(&u, &f, cparams);

    for outer in 0..=cparams.max_outer {
        let grad = reduced_gradient_at(&u, &f, phi, cparams, sparams)?;
        let grad_norm = grad.l2_norm();
        points.push(TracePoint {
            objective: j,
            grad_norm_l2: grad_norm,
            step_length: 0.0,
        });
        if grad_norm <= cparams.tol_grad {
            return Ok((
                f,
                ControlTrace {
                    status: ControlStatus::Converged,
                    points,
                },
            ));
        }
        if outer == cparams.max_outer {
            break;
        }

        match cparams.descent {
            Descent::FixedStep { step } => {
                f.add_scaled(-step, &grad);
                u = solve(&f, &warm)?;
                warm = Some(u.clone());
                j = tracking_value(&u, &f, cparams);
                points.last_mut().unwrap().step_length = step;
            }
            Descent::Armijo { c1, backtrack } => {
                // Directional derivative along -grad in the L2 pairing.
                let slope = -grad.l2_inner(&grad);
                let mut t = step_hint * 2.0;
                let mut accepted = false;
                for _ in 0..30 {
                    let f_trial = f.sum_scaled(-t, &grad);
                    let u_trial = solve(&f_trial, &warm)?;
                    let j_trial = tracking_value(&u_trial, &f_trial, cparams);
                    if j_trial <= j + c1 * t * slope && j_trial < j {
                        f = f_trial;
                        u = u_trial;
                        warm = Some(u.clone());
                        j = j_trial;
                        step_hint = t;
                        points.last_mut().unwrap().step_length = t;
                        accepted = true;
                        break;
                    }
                    t *= backtrack;
                }
                if !accepted {
                    return Ok((
                        f,
                        ControlTrace {
                            status: ControlStatus::LineSearchFailure,
                            points,
                        },
                    ));
                }
            }
        }
    }
    Ok((
        f,
        ControlTrace {
            status: ControlStatus::MaxOuterReached,
            points,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::penalty::GradMode;
    use approx::assert_relative_eq;

    #[test]
    fn objective_at_origin() {
        let g = Grid::new_1d(15);
        let phi = ObstacleField::constant(g, 1.0);
        let sparams = SolverParams::new(0.1, 100.0, GradMode::Weak);
        let zero = NodalField::zeros(g);
        let cparams = ControlParams::new(0.0, zero.clone());
        assert_eq!(objective(&zero, &phi, &cparams, &sparams).unwrap(), 0.0);

        // u(0) = 0, so j(0) = 1/2 ||u_d||^2.
        let u_d = NodalField::from_fn(g, |x| x[0]);
        let cparams = ControlParams::new(0.0, u_d.clone());
        let want = 0.5 * u_d.l2_inner(&u_d);
        assert_relative_eq!(
            objective(&zero, &phi, &cparams, &sparams).unwrap(),
            want,
            max_relative = 1e-12
        );
    }

    #[test]
    fn exact_tracking_is_stationary() {
        let g = Grid::new_1d(15);
        let phi = ObstacleField::constant(g, 1.0);
        let sparams = SolverParams::new(0.2, 50.0, GradMode::Weak);
        let f_hat = NodalField::from_fn(g, |x| 2.0 * (std::f64::consts::PI * x[0]).sin());
        let (u_hat, _) = solve_state(&f_hat, &phi, &sparams, None).unwrap();
        let cparams = ControlParams::new(0.0, u_hat);
        let j = objective(&f_hat, &phi, &cparams, &sparams).unwrap();
        assert!(j <= 1e-18, "j = {j:.3e}");
        let g_red = reduced_gradient(&f_hat, &phi, &cparams, &sparams).unwrap();
        assert!(g_red.l2_norm() <= 1e-9);
    }

    #[test]
    fn gradient_at_global_minimum_is_zero() {
        let g = Grid::new_1d(7);
        let phi = ObstacleField::constant(g, 1.0);
        let sparams = SolverParams::new(0.5, 10.0, GradMode::Weak);
        let zero = NodalField::zeros(g);
        let cparams = ControlParams::new(0.1, zero.clone());
        let g_red = reduced_gradient(&zero, &phi, &cparams, &sparams).unwrap();
        assert!(g_red.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimize_from_stationary_point_returns_immediately() {
        let g = Grid::new_1d(7);
        let phi = ObstacleField::constant(g, 1.0);
        let sparams = SolverParams::new(0.5, 10.0, GradMode::Weak);
        let zero = NodalField::zeros(g);
        let cparams = ControlParams::new(0.0, zero.clone());
        let (f, trace) = optimize(&zero, &phi, &cparams, &sparams).unwrap();
        assert_eq!(trace.status, ControlStatus::Converged);
        assert_eq!(trace.points.len(), 1);
        assert!(f.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimize_descends_monotonically() {
        let g = Grid::new_1d(15);
        let phi = ObstacleField::constant(g, 1.0);
        let sparams = SolverParams::new(0.2, 100.0, GradMode::Weak);
        let f_hat = NodalField::from_fn(g, |x| 3.0 * (std::f64::consts::PI * x[0]).sin());
        let (u_hat, _) = solve_state(&f_hat, &phi, &sparams, None).unwrap();
        let mut cparams = ControlParams::new(1e-6, u_hat);
        cparams.max_outer = 20;
        cparams.tol_grad = 1e-12;
        let (_, trace) = optimize(&NodalField::zeros(g), &phi, &cparams, &sparams).unwrap();
        let objectives: Vec<f64> = trace.points.iter().map(|p| p.objective).collect();
        assert!(objectives.len() >= 2);
        for w in objectives.windows(2) {
            assert!(w[1] < w[0], "objective not strictly decreasing: {objectives:?}");
        }
    }
}
