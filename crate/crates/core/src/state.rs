//! Residual assembly, semismooth Newton iteration and (gamma, mu)
//! path-following for the regularized state equation
//! E(u) = -eps*Lap(u) + gamma*P(u) - f = 0.

use std::time::Instant;

use crate::grid::{
    dual_h1_norm, h1_norm, stiffness_apply, FieldError, NodalField, ObstacleField,
};
use crate::linalg::{self, LinearSolveError};
use crate::penalty::{feasibility_violation, penalty_energy, GradMode, PenaltyLinearization};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Damping {
    Off,
    /// Backtracking line search on the convex merit functional whose Euler
    /// equation is E(u) = 0.
    Armijo { c1: f64, backtrack: f64 },
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SolverParams {
    pub eps: f64,
    pub gamma: f64,
    pub mode: GradMode,
    /// Residual tolerance in the discrete H^-1 norm.
    pub tol_res: f64,
    pub max_iter: usize,
    /// Relative tolerance of the inner conjugate-gradient solves.
    pub tol_lin: f64,
    pub damping: Damping,
}

impl SolverParams {
    pub fn new(eps: f64, gamma: f64, mode: GradMode) -> Self {
        assert!(eps > 0.0 && gamma >= 0.0);
        SolverParams {
            eps,
            gamma,
            mode,
            tol_res: 1e-10,
            max_iter: 25,
            tol_lin: 1e-12,
            damping: Damping::Armijo {
                c1: 1e-4,
                backtrack: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub gamma: f64,
    pub mu: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Residual norms per iteration (including the initial iterate).
    pub residual_l2: Vec<f64>,
    pub residual_dual_h1: Vec<f64>,
    /// H1 norm of each accepted Newton step; entry i belongs to the
    /// residual recorded at iteration i.
    pub step_h1: Vec<f64>,
    /// Accepted line-search step lengths.
    pub step_length: Vec<f64>,
    /// Merit value per iteration.
    pub merit: Vec<f64>,
    /// Constraint breach (|D_h u| - phi)^+ in max norm per iteration.
    pub feasibility: Vec<f64>,
    /// Distance of each iterate to the final one in H1 norm.
    pub error_to_final_h1: Vec<f64>,
    /// Successive quotients of `error_to_final_h1`.
    pub contraction_ratios: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("inner linear solve failed: {0}")]
    Linear(#[from] LinearSolveError),
    #[error("Newton iteration did not reach tol_res = {tol_res:.3e} within {max_iter} iterations (residual {residual:.3e})")]
    NonConvergence {
        tol_res: f64,
        max_iter: usize,
        residual: f64,
        report: Box<RunReport>,
    },
}

impl SolveError {
    /// The iteration report, if the failure produced one.
    pub fn report(&self) -> Option<&RunReport> {
        match self {
            SolveError::NonConvergence { report, .. } => Some(report),
            _ => None,
        }
    }
}

/// Nodal load vector: source samples scaled by the cell volume h^d.
pub fn mass_weighted(f: &NodalField) -> NodalField {
    f.scaled(f.grid().cell_volume())
}

/// E(u) = -eps*Lap_h(u) + gamma*P(u) - mass_weighted(f).
pub fn residual(
    u: &NodalField,
    f: &NodalField,
    phi: &ObstacleField,
    params: &SolverParams,
) -> Result<NodalField, FieldError> {
    let mut e = stiffness_apply(params.eps, u);
    if params.gamma != 0.0 {
        let p = crate::penalty::penalty_apply(u, phi, params.mode)?;
        e.add_scaled(params.gamma, &p);
    }
    e.add_scaled(-1.0, &mass_weighted(f));
    Ok(e)
}

/// The convex energy whose Euler equation is E(u) = 0:
/// eps/2 |u|_H1^2 + gamma * J_P(u) - (f, u)_L2.
pub fn merit(
    u: &NodalField,
    f: &NodalField,
    phi: &ObstacleField,
    params: &SolverParams,
) -> Result<f64, FieldError> {
    let h1 = h1_norm(u);
    let pen = if params.gamma != 0.0 {
        params.gamma * penalty_energy(u, phi, params.mode)?
    } else {
        0.0
    };
    Ok(0.5 * params.eps * h1 * h1 + pen - mass_weighted(f).dot(u))
}

/// Applies the Newton system operator eps*L + gamma*G(u) at a fixed
/// linearization.
pub(crate) fn system_apply(
    lin: &PenaltyLinearization,
    params: &SolverParams,
    v: &NodalField,
) -> Result<NodalField, FieldError> {
    let mut out = stiffness_apply(params.eps, v);
    if params.gamma != 0.0 {
        out.add_scaled(params.gamma, &lin.apply(v)?);
    }
    Ok(out)
}

pub(crate) fn solve_system(
    lin: &PenaltyLinearization,
    params: &SolverParams,
    rhs: &NodalField,
) -> Result<NodalField, SolveError> {
    let grid = rhs.grid();
    let n = grid.num_nodes();
    let sol = linalg::conjugate_gradient(
        |x, out| {
            let xf = NodalField::from_values(grid, x.to_vec()).expect("iterate stays valid");
            let ax = system_apply(lin, params, &xf).expect("mu validated on entry");
            out.copy_from_slice(ax.values());
        },
        rhs.values(),
        params.tol_lin,
        60 * n + 500,
    )?;
    Ok(NodalField::from_values(grid, sol).expect("solution length matches"))
}

/// One semismooth Newton step: solves (eps*L + gamma*G(u)) v = -E(u).
pub fn newton_step(
    u: &NodalField,
    f: &NodalField,
    phi: &ObstacleField,
    params: &SolverParams,
) -> Result<NodalField, SolveError> {
    let e = residual(u, f, phi, params)?;
    let lin = PenaltyLinearization::new(u, phi, params.mode)?;
    solve_system(&lin, params, &e.scaled(-1.0))
}

/// Semismooth Newton iteration for E(u) = 0, warm-started from `u_init`
/// (zero by default).
pub fn solve_state(
    f: &NodalField,
    phi: &ObstacleField,
    params: &SolverParams,
    u_init: Option<&NodalField>,
) -> Result<(NodalField, RunReport), SolveError> {
    let start = Instant::now();
    let grid = f.grid();
    let mut u = u_init.cloned().unwrap_or_else(|| NodalField::zeros(grid));
    let mut report = RunReport {
        gamma: params.gamma,
        mu: match params.mode {
            GradMode::Incremental { mu } => Some(mu),
            GradMode::Weak => None,
        },
        ..RunReport::default()
    };
    let mut iterates: Vec<NodalField> = vec![u.clone()];

    for iter in 0..=params.max_iter {
        let e = residual(&u, f, phi, params)?;
        let res_dual = dual_h1_norm(&e);
        report.residual_l2.push(e.l2_norm());
        report.residual_dual_h1.push(res_dual);
        report.feasibility.push(feasibility_violation(&u, phi));
        report.merit.push(merit(&u, f, phi, params)?);
        report.iterations = iter;

        if res_dual <= params.tol_res {
            report.converged = true;
            break;
        }
        if iter == params.max_iter {
            report.wall_time_s = start.elapsed().as_secs_f64();
            finish_contraction(&mut report, &iterates, &u);
            return Err(SolveError::NonConvergence {
                tol_res: params.tol_res,
                max_iter: params.max_iter,
                residual: res_dual,
                report: Box::new(report),
            });
        }

        let lin = PenaltyLinearization::new(&u, phi, params.mode)?;
        let v = solve_system(&lin, params, &e.scaled(-1.0))?;
        report.step_h1.push(h1_norm(&v));

        let t = match params.damping {
            Damping::Off => 1.0,
            Damping::Armijo { c1, backtrack } => {
                let merit0 = *report.merit.last().unwrap();
                // The merit gradient in coefficient space is E, so the
                // directional slope along v is E . v (negative).
                let slope = e.dot(&v);
                // Near convergence the predicted decrease c1*t*slope drops
                // below the floating-point resolution of the merit itself;
                // the sufficient-decrease test is then meaningless and the
                // undamped Newton step is taken.
                let floor = 64.0 * f64::EPSILON * merit0.abs().max(f64::MIN_POSITIVE);
                let mut t = 1.0;
                for _ in 0..30 {
                    if c1 * t * slope.abs() <= floor {
                        break;
                    }
                    let trial = u.sum_scaled(t, &v);
                    if merit(&trial, f, phi, params)? <= merit0 + c1 * t * slope {
                        break;
                    }
                    t *= backtrack;
                }
                t
            }
        };
        report.step_length.push(t);
        u.add_scaled(t, &v);
        iterates.push(u.clone());
    }

    report.wall_time_s = start.elapsed().as_secs_f64();
    finish_contraction(&mut report, &iterates, &u);
    Ok((u, report))
}

fn finish_contraction(report: &mut RunReport, iterates: &[NodalField], u_final: &NodalField) {
    for it in iterates {
        report
            .error_to_final_h1
            .push(h1_norm(&it.sum_scaled(-1.0, u_final)));
    }
    for w in report.error_to_final_h1.windows(2) {
        if w[0] > 0.0 {
            report.contraction_ratios.push(w[1] / w[0]);
        }
    }
}

/// Continuation schedule: gamma ascending, optionally paired with a
/// descending list of incremental-quotient steps mu.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    pub gamma_list: Vec<f64>,
    pub mu_list: Option<Vec<f64>>,
}

impl Schedule {
    pub fn gammas(gamma_list: Vec<f64>) -> Self {
        Schedule {
            gamma_list,
            mu_list: None,
        }
    }

    /// Default path: gamma in {1, 10, 100, 1e3, 1e4}, mu fixed.
    pub fn default_path() -> Self {
        Schedule::gammas(vec![1.0, 10.0, 100.0, 1e3, 1e4])
    }

    fn validate(&self) -> Result<(), PathError> {
        if self.gamma_list.is_empty() {
            return Err(PathError::EmptySchedule);
        }
        if self.gamma_list.windows(2).any(|w| w[1] < w[0]) {
            return Err(PathError::BadSchedule("gamma_list must be ascending".into()));
        }
        if let Some(mus) = &self.mu_list {
            if mus.len() != self.gamma_list.len() {
                return Err(PathError::BadSchedule(
                    "mu_list must match gamma_list in length".into(),
                ));
            }
            if mus.windows(2).any(|w| w[1] > w[0]) {
                return Err(PathError::BadSchedule("mu_list must be descending".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PathError {
    #[error("path-following schedule is empty")]
    EmptySchedule,
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("path-following stage {stage} (gamma = {gamma}) failed: {source}")]
    Stage {
        stage: usize,
        gamma: f64,
        source: SolveError,
    },
}

impl PathError {
    pub fn report(&self) -> Option<&RunReport> {
        match self {
            PathError::Stage { source, .. } => source.report(),
            _ => None,
        }
    }
}

/// Runs [`solve_state`] along the schedule, warm-starting every stage from
/// the previous solution.
pub fn path_follow(
    f: &NodalField,
    phi: &ObstacleField,
    base_params: &SolverParams,
    schedule: &Schedule,
) -> Result<(NodalField, Vec<RunReport>), PathError> {
    schedule.validate()?;
    let mut u = NodalField::zeros(f.grid());
    let mut reports = Vec::with_capacity(schedule.gamma_list.len());
    for (stage, &gamma) in schedule.gamma_list.iter().enumerate() {
        let mut params = *base_params;
        params.gamma = gamma;
        if let Some(mus) = &schedule.mu_list {
            params.mode = GradMode::Incremental { mu: mus[stage] };
        }
        let (u_next, report) =
            solve_state(f, phi, &params, Some(&u)).map_err(|source| PathError::Stage {
                stage,
                gamma,
                source,
            })?;
        u = u_next;
        reports.push(report);
    }
    Ok((u, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    fn one_node_setup() -> (NodalField, ObstacleField, SolverParams) {
        let g = Grid::new_1d(1);
        let f = NodalField::zeros(g);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(0.1, 1.0, GradMode::Weak);
        (f, phi, params)
    }

    #[test]
    fn residual_zero_at_origin() {
        let (f, phi, params) = one_node_setup();
        let u = NodalField::zeros(f.grid());
        let e = residual(&u, &f, &phi, &params).unwrap();
        assert!(e.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residual_hand_case_1d() {
        let (f, phi, params) = one_node_setup();
        let u = NodalField::from_values(f.grid(), vec![0.9]).unwrap();
        let e = residual(&u, &f, &phi, &params).unwrap();
        // 0.1*4*0.9 + 1.6 = 1.96
        assert_relative_eq!(e.values()[0], 1.96, max_relative = 1e-14);
    }

    #[test]
    fn residual_vanishes_for_feasible_poisson_solution() {
        // -eps u'' = f with u small enough to stay inside K: penalty off.
        let g = Grid::new_1d(31);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(1.0, 1e4, GradMode::Weak);
        let u = NodalField::from_fn(g, |x| 0.05 * x[0] * (1.0 - x[0]));
        let lu = stiffness_apply(params.eps, &u);
        let f = lu.scaled(1.0 / g.cell_volume());
        let e = residual(&u, &f, &phi, &params).unwrap();
        assert!(e.max_abs() < 1e-13);
    }

    #[test]
    fn newton_step_zero_residual_gives_zero_step() {
        let (f, phi, params) = one_node_setup();
        let u = NodalField::zeros(f.grid());
        let v = newton_step(&u, &f, &phi, &params).unwrap();
        assert!(v.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn solve_state_zero_source() {
        let (f, phi, params) = one_node_setup();
        let (u, report) = solve_state(&f, &phi, &params, None).unwrap();
        assert!(u.values().iter().all(|x| *x == 0.0));
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn solve_state_small_source_matches_linear_solve() {
        let g = Grid::new_1d(31);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(1.0, 1e3, GradMode::Weak);
        let f = NodalField::from_fn(g, |x| 0.3 * (std::f64::consts::PI * x[0]).sin());
        let (u, report) = solve_state(&f, &phi, &params, None).unwrap();
        assert!(report.converged);
        // The solution stays inside K, so it must equal the gamma = 0 solve.
        assert_eq!(feasibility_violation(&u, &phi), 0.0);
        let mut linear = params;
        linear.gamma = 0.0;
        let (u_lin, _) = solve_state(&f, &phi, &linear, None).unwrap();
        let diff = h1_norm(&u.sum_scaled(-1.0, &u_lin));
        assert!(diff <= 1e-8, "diff = {diff:.3e}");
    }

    #[test]
    fn nonconvergence_carries_report() {
        let g = Grid::new_1d(31);
        let phi = ObstacleField::constant(g, 1.0);
        let mut params = SolverParams::new(0.05, 1e4, GradMode::Weak);
        params.max_iter = 1;
        let f = NodalField::constant(g, 5.0);
        let err = solve_state(&f, &phi, &params, None).unwrap_err();
        let report = err.report().expect("report embedded");
        assert_eq!(report.iterations, 1);
        assert!(!report.converged);
    }

    #[test]
    fn schedule_validation() {
        let g = Grid::new_1d(3);
        let f = NodalField::zeros(g);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(1.0, 1.0, GradMode::Weak);
        let bad = Schedule::gammas(vec![10.0, 1.0]);
        assert!(matches!(
            path_follow(&f, &phi, &params, &bad),
            Err(PathError::BadSchedule(_))
        ));
        let empty = Schedule::gammas(vec![]);
        assert!(matches!(
            path_follow(&f, &phi, &params, &empty),
            Err(PathError::EmptySchedule)
        ));
    }

    #[test]
    fn singleton_schedule_equals_solve_state() {
        let g = Grid::new_1d(15);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(0.5, 10.0, GradMode::Weak);
        let f = NodalField::constant(g, 2.0);
        let (u_path, reports) =
            path_follow(&f, &phi, &params, &Schedule::gammas(vec![10.0])).unwrap();
        let (u_direct, _) = solve_state(&f, &phi, &params, None).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(u_path, u_direct);
    }
}
