//! Sensitivity and adjoint solves with the linearized state operator
//! eps*L + gamma*G(u). The operator is self-adjoint because G_P assembles
//! to a symmetric matrix, so the adjoint equation coincides with the
//! sensitivity equation.

use crate::grid::{NodalField, ObstacleField};
use crate::penalty::PenaltyLinearization;
use crate::state::{mass_weighted, solve_system, SolveError, SolverParams};

/// Solves (eps*L + gamma*G(u)) w = mass_weighted(h_dir): the directional
/// Newton derivative of the control-to-state map f |-> u(f) applied to
/// `h_dir`, with G evaluated at the given base state.
pub fn solve_sensitivity(
    u: &NodalField,
    h_dir: &NodalField,
    phi: &ObstacleField,
    params: &SolverParams,
) -> Result<NodalField, SolveError> {
    let lin = PenaltyLinearization::new(u, phi, params.mode)?;
    solve_system(&lin, params, &mass_weighted(h_dir))
}

/// Adjoint solve; identical to [`solve_sensitivity`] by self-adjointness.
pub fn solve_adjoint(
    u: &NodalField,
    rhs: &NodalField,
    phi: &ObstacleField,
    params: &SolverParams,
) -> Result<NodalField, SolveError> {
    solve_sensitivity(u, rhs, phi, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, NodalField};
    use crate::penalty::GradMode;
    use crate::state::solve_state;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> NodalField {
        let values = (0..grid.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        NodalField::from_values(grid, values).unwrap()
    }

    #[test]
    fn zero_direction_gives_zero() {
        let g = Grid::new_1d(15);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(0.1, 100.0, GradMode::Weak);
        let u = NodalField::from_fn(g, |x| x[0] * (1.0 - x[0]));
        let w = solve_sensitivity(&u, &NodalField::zeros(g), &phi, &params).unwrap();
        assert!(w.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn feasible_base_reduces_to_poisson() {
        // All penalty jets inactive: the solve must not depend on gamma.
        let g = Grid::new_1d(15);
        let phi = ObstacleField::constant(g, 5.0);
        let u = NodalField::from_fn(g, |x| 0.1 * x[0] * (1.0 - x[0]));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h_dir = random_field(g, &mut rng);
        let big = SolverParams::new(0.3, 1e6, GradMode::Weak);
        let mut zero = big;
        zero.gamma = 0.0;
        let w_big = solve_sensitivity(&u, &h_dir, &phi, &big).unwrap();
        let w_zero = solve_sensitivity(&u, &h_dir, &phi, &zero).unwrap();
        for (a, b) in w_big.values().iter().zip(w_zero.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn self_adjoint_pairing() {
        let g = Grid::new_1d(31);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(0.05, 100.0, GradMode::Incremental { mu: g.h() });
        let f = NodalField::constant(g, 3.0);
        let (u, _) = solve_state(&f, &phi, &params, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_field(g, &mut rng);
        let b = random_field(g, &mut rng);
        let lhs = solve_sensitivity(&u, &a, &phi, &params).unwrap().dot(&b);
        let rhs = a.dot(&solve_adjoint(&u, &b, &phi, &params).unwrap());
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10, epsilon = 1e-14);
    }

    #[test]
    fn linear_in_direction() {
        let g = Grid::new_1d(31);
        let phi = ObstacleField::constant(g, 1.0);
        let params = SolverParams::new(0.05, 50.0, GradMode::Incremental { mu: g.h() });
        let f = NodalField::constant(g, 4.0);
        let (u, _) = solve_state(&f, &phi, &params, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_field(g, &mut rng);
        let b = random_field(g, &mut rng);
        let combo = a.scaled(0.7).sum_scaled(-1.3, &b);
        let w_combo = solve_sensitivity(&u, &combo, &phi, &params).unwrap();
        let w_a = solve_sensitivity(&u, &a, &phi, &params).unwrap();
        let w_b = solve_sensitivity(&u, &b, &phi, &params).unwrap();
        let expect = w_a.scaled(0.7).sum_scaled(-1.3, &w_b);
        let diff = crate::grid::h1_norm(&w_combo.sum_scaled(-1.0, &expect));
        assert!(diff <= 1e-8 * (1.0 + crate::grid::h1_norm(&expect)), "diff = {diff:.3e}");
    }
}
