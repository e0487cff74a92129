//! Independent references used by the verification suites: an ADMM solver
//! for the original gradient-constrained variational inequality, dense
//! small-grid factorizations, a generic Newton-derivative remainder probe
//! and central finite differences.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::grid::{gradient, gradient_adjoint, CellVectorField, NodalField, ObstacleField};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("dense oracle limited to {limit} unknowns, got {got}")]
    TooLarge { got: usize, limit: usize },
    #[error("dense operator sample is not positive definite")]
    NotPositiveDefinite,
    #[error(
        "ADMM did not converge in {iterations} iterations (primal {primal:.3e}, dual {dual:.3e})"
    )]
    AdmmNonConvergence {
        iterations: usize,
        primal: f64,
        dual: f64,
        history: Vec<(f64, f64)>,
    },
}

const DENSE_LIMIT: usize = 4096;

/// Samples a matrix-free symmetric operator column by column and solves by
/// dense Cholesky factorization. Reference for all iterative solves.
pub fn dense_solve(
    mut apply: impl FnMut(&NodalField) -> NodalField,
    rhs: &NodalField,
) -> Result<NodalField, OracleError> {
    let grid = rhs.grid();
    let n = grid.num_nodes();
    if n > DENSE_LIMIT {
        return Err(OracleError::TooLarge {
            got: n,
            limit: DENSE_LIMIT,
        });
    }
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut basis = NodalField::zeros(grid);
    for j in 0..n {
        basis.values_mut()[j] = 1.0;
        let col = apply(&basis);
        for (i, v) in col.values().iter().enumerate() {
            mat[(i, j)] = *v;
        }
        basis.values_mut()[j] = 0.0;
    }
    let chol = Cholesky::new(mat).ok_or(OracleError::NotPositiveDefinite)?;
    let x = chol.solve(&DVector::from_column_slice(rhs.values()));
    Ok(NodalField::from_values(grid, x.data.into()).expect("dense solve length"))
}

#[derive(Debug, Clone, Copy)]
pub struct AdmmParams {
    /// Splitting penalty; defaults to eps / h when `None`.
    pub rho: Option<f64>,
    pub max_iter: usize,
    /// Max-norm tolerance on D u - z.
    pub tol_primal: f64,
    /// L2 tolerance on the dual residual rho * D' W (z - z_prev).
    pub tol_dual: f64,
    /// Over-relaxation factor in (1, 2); 1.0 disables it.
    pub over_relax: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            rho: None,
            max_iter: 200_000,
            tol_primal: 1e-7,
            tol_dual: 1e-8,
            over_relax: 1.7,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AdmmReport {
    pub iterations: usize,
    pub primal_residual_inf: f64,
    pub primal_residual_l2: f64,
    pub dual_residual_l2: f64,
    pub rho_final: f64,
}

/// Solves the original variational inequality
///   min eps/2 |u|_H1^2 - (f, u)_L2  s.t. |D_h u| <= phi per cell
/// by ADMM on the splitting z = D_h u with radial projection of z onto the
/// per-cell ball of radius phi. Independent of the penalty/Newton path.
pub fn vi_solve_admm(
    f: &NodalField,
    phi: &ObstacleField,
    eps: f64,
    params: &AdmmParams,
) -> Result<(NodalField, AdmmReport), OracleError> {
    let grid = f.grid();
    let n = grid.num_nodes();
    if n > DENSE_LIMIT {
        return Err(OracleError::TooLarge {
            got: n,
            limit: DENSE_LIMIT,
        });
    }
    let h = grid.h();
    let w = grid.cell_volume();
    let dim = grid.dim();
    let mut rho = params.rho.unwrap_or(eps / h);
    let alpha = params.over_relax;

    // Prefactor L = D' W D once; rho only scales the right-hand side.
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut basis = NodalField::zeros(grid);
    for j in 0..n {
        basis.values_mut()[j] = 1.0;
        let col = gradient_adjoint(&gradient(&basis));
        for (i, v) in col.values().iter().enumerate() {
            mat[(i, j)] = *v;
        }
        basis.values_mut()[j] = 0.0;
    }
    let chol: Cholesky<f64, Dyn> =
        Cholesky::new(mat).ok_or(OracleError::NotPositiveDefinite)?;

    let mut z = CellVectorField::zeros(grid);
    let mut dual = CellVectorField::zeros(grid);
    let mut u = NodalField::zeros(grid);
    let mut history: Vec<(f64, f64)> = Vec::new();

    for iter in 1..=params.max_iter {
        // u-update: L u = (h^d / rho) f + D' W (z - dual)
        let mut zm = CellVectorField::zeros(grid);
        for (out, (zc, wc)) in zm
            .vectors_mut()
            .iter_mut()
            .zip(z.vectors().iter().zip(dual.vectors()))
        {
            out[0] = zc[0] - wc[0];
            out[1] = zc[1] - wc[1];
        }
        let mut rhs = gradient_adjoint(&zm);
        rhs.add_scaled(w / rho, f);
        let sol = chol.solve(&DVector::from_column_slice(rhs.values()));
        u.values_mut().copy_from_slice(sol.as_slice());

        let du = gradient(&u);
        let z_old = z.clone();

        // z-update with over-relaxation on the D u term, then radial
        // projection of the unconstrained minimizer rho*v/(eps+rho).
        for c in 0..grid.num_cells() {
            let mut v = [0.0; 2];
            for i in 0..dim {
                let relaxed = alpha * du.vectors()[c][i] + (1.0 - alpha) * z_old.vectors()[c][i];
                v[i] = relaxed + dual.vectors()[c][i];
            }
            let scale = rho / (eps + rho);
            let mut zc = [v[0] * scale, v[1] * scale];
            let norm = zc[0].hypot(zc[1]);
            let cap = phi.phi()[c];
            if norm > cap {
                let shrink = cap / norm;
                zc[0] *= shrink;
                zc[1] *= shrink;
            }
            z.vectors_mut()[c] = zc;
            for i in 0..dim {
                let relaxed = alpha * du.vectors()[c][i] + (1.0 - alpha) * z_old.vectors()[c][i];
                dual.vectors_mut()[c][i] += relaxed - zc[i];
            }
        }

        // Residuals on the true (unrelaxed) splitting.
        let mut primal_inf = 0.0_f64;
        let mut primal_sq = 0.0_f64;
        let mut dz = CellVectorField::zeros(grid);
        for c in 0..grid.num_cells() {
            for i in 0..dim {
                let r = du.vectors()[c][i] - z.vectors()[c][i];
                primal_inf = primal_inf.max(r.abs());
                primal_sq += w * r * r;
                dz.vectors_mut()[c][i] = z.vectors()[c][i] - z_old.vectors()[c][i];
            }
        }
        let dual_res = rho * gradient_adjoint(&dz).dot(&gradient_adjoint(&dz)).sqrt();
        let primal_l2 = primal_sq.sqrt();

        if primal_inf <= params.tol_primal && dual_res <= params.tol_dual {
            return Ok((
                u,
                AdmmReport {
                    iterations: iter,
                    primal_residual_inf: primal_inf,
                    primal_residual_l2: primal_l2,
                    dual_residual_l2: dual_res,
                    rho_final: rho,
                },
            ));
        }

        // Standard residual balancing, every 50 iterations.
        if iter % 50 == 0 {
            history.push((primal_inf, dual_res));
            if primal_l2 > 10.0 * dual_res {
                rho *= 2.0;
                for v in dual.vectors_mut() {
                    v[0] *= 0.5;
                    v[1] *= 0.5;
                }
            } else if dual_res > 10.0 * primal_l2 {
                rho *= 0.5;
                for v in dual.vectors_mut() {
                    v[0] *= 2.0;
                    v[1] *= 2.0;
                }
            }
        }
    }

    let (primal, dual_res) = history.last().copied().unwrap_or((f64::NAN, f64::NAN));
    Err(OracleError::AdmmNonConvergence {
        iterations: params.max_iter,
        primal,
        dual: dual_res,
        history,
    })
}

/// Remainder quotients of the Newton-derivative definition:
/// ratio(s) = ||F(u + s h) - F(u) - G_F(u + s h)(s h)|| / (s ||h||),
/// with the output norm and the direction norm supplied by the caller.
pub fn newton_ratio_probe(
    mut op: impl FnMut(&[f64]) -> Vec<f64>,
    mut deriv_apply: impl FnMut(&[f64], &[f64]) -> Vec<f64>,
    base: &[f64],
    direction: &[f64],
    scales: &[f64],
    norm_out: impl Fn(&[f64]) -> f64,
    direction_norm: f64,
) -> Vec<(f64, f64)> {
    assert!(scales.windows(2).all(|w| w[1] < w[0]), "scales must decrease");
    assert!(direction_norm > 0.0);
    let f0 = op(base);
    scales
        .iter()
        .map(|&s| {
            let perturbed: Vec<f64> = base
                .iter()
                .zip(direction)
                .map(|(u, h)| u + s * h)
                .collect();
            let f1 = op(&perturbed);
            let sh: Vec<f64> = direction.iter().map(|h| s * h).collect();
            let gh = deriv_apply(&perturbed, &sh);
            let rem: Vec<f64> = f1
                .iter()
                .zip(&f0)
                .zip(&gh)
                .map(|((a, b), c)| a - b - c)
                .collect();
            (s, norm_out(&rem) / (s * direction_norm))
        })
        .collect()
}

/// Central difference (j(f + s e) - j(f - s e)) / (2 s).
pub fn fd_directional<E>(
    mut j: impl FnMut(&NodalField) -> Result<f64, E>,
    f: &NodalField,
    direction: &NodalField,
    s: f64,
) -> Result<f64, E> {
    assert!(s > 0.0);
    let plus = j(&f.sum_scaled(s, direction))?;
    let minus = j(&f.sum_scaled(-s, direction))?;
    Ok((plus - minus) / (2.0 * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{stiffness_apply, Grid};
    use approx::assert_relative_eq;

    #[test]
    fn dense_solve_identity() {
        let g = Grid::new_1d(5);
        let rhs = NodalField::from_fn(g, |x| x[0]);
        let x = dense_solve(|v| v.clone(), &rhs).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn dense_stiffness_matches_tridiagonal_stencil() {
        // 1d stiffness is (eps/h) * tridiag(-1, 2, -1).
        let g = Grid::new_1d(4);
        let h = g.h();
        let eps = 0.3;
        let n = g.num_nodes();
        let mut basis = NodalField::zeros(g);
        for j in 0..n {
            basis.values_mut()[j] = 1.0;
            let col = stiffness_apply(eps, &basis);
            for i in 0..n {
                let want = if i == j {
                    2.0 * eps / h
                } else if i.abs_diff(j) == 1 {
                    -eps / h
                } else {
                    0.0
                };
                assert_relative_eq!(col.values()[i], want, epsilon = 1e-12);
            }
            basis.values_mut()[j] = 0.0;
        }
    }

    #[test]
    fn dense_rejects_large_grids() {
        let g = Grid::new_2d(65);
        let rhs = NodalField::zeros(g);
        assert!(matches!(
            dense_solve(|v| v.clone(), &rhs),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn admm_zero_source() {
        let g = Grid::new_1d(7);
        let f = NodalField::zeros(g);
        let phi = ObstacleField::constant(g, 1.0);
        let (u, _) = vi_solve_admm(&f, &phi, 0.1, &AdmmParams::default()).unwrap();
        assert!(u.max_abs() < 1e-10);
    }

    #[test]
    fn admm_one_node_closed_form() {
        // Unconstrained minimizer h*f/(4*eps) = 1.25; the slope bound
        // |2u| <= 1 clips it to 0.5.
        let g = Grid::new_1d(1);
        let f = NodalField::from_values(g, vec![1.0]).unwrap();
        let phi = ObstacleField::constant(g, 1.0);
        let (u, report) = vi_solve_admm(&f, &phi, 0.1, &AdmmParams::default()).unwrap();
        assert_relative_eq!(u.values()[0], 0.5, max_relative = 1e-5);
        assert!(report.primal_residual_inf <= 1e-7);
    }

    #[test]
    fn admm_interior_solution_matches_poisson() {
        let g = Grid::new_1d(15);
        let f = NodalField::from_fn(g, |x| 0.2 * (std::f64::consts::PI * x[0]).sin());
        let phi = ObstacleField::constant(g, 1.0);
        let eps = 1.0;
        let (u, _) = vi_solve_admm(&f, &phi, eps, &AdmmParams::default()).unwrap();
        let w = g.cell_volume();
        let u_lin = dense_solve(|v| stiffness_apply(eps, v), &f.scaled(w)).unwrap();
        let diff = crate::grid::h1_norm(&u.sum_scaled(-1.0, &u_lin));
        assert!(diff <= 1e-5, "diff = {diff:.3e}");
    }

    #[test]
    fn probe_is_zero_for_linear_operators() {
        let ratios = newton_ratio_probe(
            |x| x.iter().map(|v| 3.0 * v).collect(),
            |_, h| h.iter().map(|v| 3.0 * v).collect(),
            &[1.0, -2.0],
            &[0.5, 0.5],
            &[1e-1, 1e-2, 1e-3],
            |r| r.iter().map(|v| v * v).sum::<f64>().sqrt(),
            1.0,
        );
        // Exact in real arithmetic; rounding of u + s*h leaves O(eps/s).
        for (_, r) in ratios {
            assert!(r < 1e-11, "r = {r:.3e}");
        }
    }

    #[test]
    fn probe_max_function_locally_linear() {
        // F(t) = max(0, t) at u = 1, h = 1: no kink is crossed for s < 1,
        // so the remainder is zero up to rounding of 1 + s.
        let ratios = newton_ratio_probe(
            |x| vec![x[0].max(0.0)],
            |base, h| vec![if base[0] > 0.0 { h[0] } else { 0.0 }],
            &[1.0],
            &[1.0],
            &[0.5, 1e-2, 1e-4],
            |r| r[0].abs(),
            1.0,
        );
        for (_, r) in ratios {
            assert!(r < 1e-11, "r = {r:.3e}");
        }
    }

    #[test]
    fn fd_exact_on_quadratics() {
        let g = Grid::new_1d(7);
        let f = NodalField::from_fn(g, |x| x[0]);
        let e = NodalField::from_fn(g, |x| 1.0 - x[0]);
        // j(f) = ||f||_l2^2 has directional derivative 2 (f, e)_L2.
        let got: f64 =
            fd_directional::<()>(|v| Ok(v.l2_inner(v)), &f, &e, 1e-3).unwrap();
        assert_relative_eq!(got, 2.0 * f.l2_inner(&e), max_relative = 1e-10);
    }
}
