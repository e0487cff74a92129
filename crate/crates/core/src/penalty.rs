//! Pointwise penalty algebra and its assembled operators.
//!
//! Per cell, with v the sampled gradient and phi the bound,
//!   b = clamp(|v| - phi) into [0, 1],   P(v) = b * v/|v|,
//! and the Newton derivative of P is
//!   G_P(v) = chi_(0,1)(|v| - phi) * vv'/|v|^2 + (b/|v|) * (id - vv'/|v|^2).
//! The assembled operators are P(u) = D' W P(D u) and
//! G(u) v = D' W G_P(D u) D v, with D the weak or the incremental-quotient
//! gradient. Since phi >= nu > 0, the b = 0 branch short-circuits before
//! any division by |v|.

use crate::grid::{
    gradient, gradient_adjoint, incremental_gradient, incremental_gradient_adjoint,
    CellVectorField, FieldError, NodalField, ObstacleField,
};

/// Which discrete gradient the penalty (and the Newton system) is built on.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum GradMode {
    /// The weak gradient D_h.
    Weak,
    /// Forward incremental quotients with step `mu` (a grid multiple).
    Incremental { mu: f64 },
}

impl GradMode {
    pub fn gradient(&self, u: &NodalField) -> Result<CellVectorField, FieldError> {
        match self {
            GradMode::Weak => Ok(gradient(u)),
            GradMode::Incremental { mu } => incremental_gradient(u, *mu),
        }
    }

    pub fn adjoint(&self, z: &CellVectorField) -> Result<NodalField, FieldError> {
        match self {
            GradMode::Weak => Ok(gradient_adjoint(z)),
            GradMode::Incremental { mu } => incremental_gradient_adjoint(z, *mu),
        }
    }
}

/// min(1, max(0, t)).
#[inline]
pub fn clamp_pm(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

/// Newton derivative of [`clamp_pm`]: the indicator of the open interval
/// (0, 1); at the kinks 0 and 1 it returns 0.
#[inline]
pub fn clamp_pm_deriv(t: f64) -> f64 {
    if t > 0.0 && t < 1.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    /// |v| <= phi: value and derivative vanish identically.
    Inactive,
    /// 0 < |v| - phi < 1: the clamp is on its linear ramp.
    Ramp,
    /// |v| - phi >= 1: the clamp is saturated at 1.
    Saturated,
}

/// Value and Newton derivative of P at one cell.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyPointJet {
    pub value: [f64; 2],
    pub deriv: [[f64; 2]; 2],
    pub active: Activity,
}

impl PenaltyPointJet {
    #[inline]
    pub fn apply_deriv(&self, w: [f64; 2]) -> [f64; 2] {
        [
            self.deriv[0][0] * w[0] + self.deriv[0][1] * w[1],
            self.deriv[1][0] * w[0] + self.deriv[1][1] * w[1],
        ]
    }
}

/// Evaluates P and G_P at a single cell value.
pub fn point_jet(v: [f64; 2], phi_c: f64) -> PenaltyPointJet {
    let norm = v[0].hypot(v[1]);
    let b = clamp_pm(norm - phi_c);
    if b == 0.0 {
        // |v| <= phi_c with phi_c >= nu > 0, so no division is needed and
        // the cell lies outside the active set.
        return PenaltyPointJet {
            value: [0.0; 2],
            deriv: [[0.0; 2]; 2],
            active: Activity::Inactive,
        };
    }
    let chi = clamp_pm_deriv(norm - phi_c);
    let q = [v[0] / norm, v[1] / norm];
    let value = [b * q[0], b * q[1]];
    // chi * qq' + (b/|v|) (id - qq')
    let ramp = b / norm;
    let mut deriv = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let qq = q[i] * q[j];
            let id = if i == j { 1.0 } else { 0.0 };
            deriv[i][j] = chi * qq + ramp * (id - qq);
        }
    }
    PenaltyPointJet {
        value,
        deriv,
        active: if chi == 1.0 {
            Activity::Ramp
        } else {
            Activity::Saturated
        },
    }
}

/// Assembled penalty operator D' W P(D u).
pub fn penalty_apply(
    u: &NodalField,
    phi: &ObstacleField,
    mode: GradMode,
) -> Result<NodalField, FieldError> {
    let du = mode.gradient(u)?;
    let mut p = CellVectorField::zeros(u.grid());
    for (c, out) in p.vectors_mut().iter_mut().enumerate() {
        *out = point_jet(du.vectors()[c], phi.phi()[c]).value;
    }
    mode.adjoint(&p)
}

/// The linearization G(u) = D' W G_P(D u) D at a fixed base point, reusable
/// across many applications inside an inner linear solve.
pub struct PenaltyLinearization {
    mode: GradMode,
    jets: Vec<PenaltyPointJet>,
}

impl PenaltyLinearization {
    pub fn new(u: &NodalField, phi: &ObstacleField, mode: GradMode) -> Result<Self, FieldError> {
        let du = mode.gradient(u)?;
        let jets = du
            .vectors()
            .iter()
            .zip(phi.phi())
            .map(|(v, p)| point_jet(*v, *p))
            .collect();
        Ok(PenaltyLinearization { mode, jets })
    }

    pub fn jets(&self) -> &[PenaltyPointJet] {
        &self.jets
    }

    pub fn apply(&self, v: &NodalField) -> Result<NodalField, FieldError> {
        let dv = self.mode.gradient(v)?;
        let mut gv = CellVectorField::zeros(v.grid());
        for (c, out) in gv.vectors_mut().iter_mut().enumerate() {
            *out = self.jets[c].apply_deriv(dv.vectors()[c]);
        }
        self.mode.adjoint(&gv)
    }
}

/// Action of the Newton derivative: G(u) v.
pub fn penalty_deriv_apply(
    u: &NodalField,
    phi: &ObstacleField,
    mode: GradMode,
    v: &NodalField,
) -> Result<NodalField, FieldError> {
    PenaltyLinearization::new(u, phi, mode)?.apply(v)
}

/// Antiderivative K of the clamp: K(t) = 0 for t < 0, t^2/2 on [0, 1],
/// t - 1/2 beyond.
#[inline]
pub fn clamp_antiderivative(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t <= 1.0 {
        0.5 * t * t
    } else {
        t - 0.5
    }
}

/// Convex potential of the penalty: sum_c h^d K(|D u|_c - phi_c).
pub fn penalty_energy(u: &NodalField, phi: &ObstacleField, mode: GradMode) -> Result<f64, FieldError> {
    let du = mode.gradient(u)?;
    let w = u.grid().cell_volume();
    Ok(du
        .vectors()
        .iter()
        .zip(phi.phi())
        .map(|(v, p)| w * clamp_antiderivative(v[0].hypot(v[1]) - p))
        .sum())
}

/// Max-norm of the gradient-constraint breach (|D_h u| - phi)^+, always
/// measured with the weak gradient.
pub fn feasibility_violation(u: &NodalField, phi: &ObstacleField) -> f64 {
    let du = gradient(u);
    du.vectors()
        .iter()
        .zip(phi.phi())
        .fold(0.0_f64, |m, (v, p)| m.max(v[0].hypot(v[1]) - p))
        .max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    #[test]
    fn clamp_values() {
        assert_eq!(clamp_pm(-0.5), 0.0);
        assert_eq!(clamp_pm(0.3), 0.3);
        assert_eq!(clamp_pm(1.7), 1.0);
        assert_eq!(clamp_pm_deriv(0.5), 1.0);
        assert_eq!(clamp_pm_deriv(-2.0), 0.0);
        assert_eq!(clamp_pm_deriv(0.0), 0.0);
        assert_eq!(clamp_pm_deriv(1.0), 0.0);
    }

    #[test]
    fn clamp_antiderivative_values() {
        assert_eq!(clamp_antiderivative(-1.0), 0.0);
        assert_relative_eq!(clamp_antiderivative(0.5), 0.125);
        assert_relative_eq!(clamp_antiderivative(2.0), 1.5);
    }

    #[test]
    fn jet_inactive_cell_is_bitwise_zero() {
        let jet = point_jet([0.5, 0.0], 1.0);
        assert_eq!(jet.active, Activity::Inactive);
        assert_eq!(jet.value, [0.0, 0.0]);
        assert_eq!(jet.deriv, [[0.0; 2]; 2]);
        // Boundary case |v| = phi is still inactive.
        assert_eq!(point_jet([1.0, 0.0], 1.0).active, Activity::Inactive);
    }

    #[test]
    fn jet_on_ramp() {
        let jet = point_jet([1.5, 0.0], 1.0);
        assert_eq!(jet.active, Activity::Ramp);
        assert_relative_eq!(jet.value[0], 0.5);
        assert_eq!(jet.value[1], 0.0);
        assert_relative_eq!(jet.deriv[0][0], 1.0);
        assert_relative_eq!(jet.deriv[1][1], 1.0 / 3.0);
        assert_eq!(jet.deriv[0][1], 0.0);
        assert_eq!(jet.deriv[1][0], 0.0);
    }

    #[test]
    fn jet_saturated() {
        let jet = point_jet([2.0, 0.0], 1.0);
        assert_eq!(jet.active, Activity::Saturated);
        assert_relative_eq!(jet.value[0], 1.0);
        assert_eq!(jet.deriv[0][0], 0.0);
        assert_relative_eq!(jet.deriv[1][1], 0.5);
    }

    #[test]
    fn jet_1d_has_scalar_derivative() {
        let jet = point_jet([1.5, 0.0], 1.0);
        // In 1d only the (0,0) entry ever acts on a gradient.
        assert_relative_eq!(jet.deriv[0][0], 1.0);
    }

    #[test]
    fn penalty_vanishes_on_feasible_fields() {
        let g = Grid::new_1d(9);
        let phi = ObstacleField::constant(g, 1.0);
        let u = NodalField::from_fn(g, |x| 0.3 * x[0] * (1.0 - x[0]));
        let p = penalty_apply(&u, &phi, GradMode::Weak).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.0));
        assert_eq!(penalty_energy(&u, &phi, GradMode::Weak).unwrap(), 0.0);
    }

    #[test]
    fn penalty_hand_case_1d() {
        let g = Grid::new_1d(1);
        let phi = ObstacleField::constant(g, 1.0);
        let u = NodalField::from_values(g, vec![0.9]).unwrap();
        let p = penalty_apply(&u, &phi, GradMode::Weak).unwrap();
        assert_relative_eq!(p.values()[0], 1.6, max_relative = 1e-14);
        assert_relative_eq!(
            penalty_energy(&u, &phi, GradMode::Weak).unwrap(),
            0.32,
            max_relative = 1e-14
        );
    }

    #[test]
    fn deriv_hand_case_1d() {
        let g = Grid::new_1d(1);
        let phi = ObstacleField::constant(g, 1.0);
        let u = NodalField::from_values(g, vec![0.9]).unwrap();
        let v = NodalField::from_values(g, vec![1.0]).unwrap();
        let gv = penalty_deriv_apply(&u, &phi, GradMode::Weak, &v).unwrap();
        assert_relative_eq!(gv.values()[0], 4.0, max_relative = 1e-14);
    }

    #[test]
    fn deriv_vanishes_for_feasible_base() {
        let g = Grid::new_2d(5);
        let phi = ObstacleField::constant(g, 2.0);
        let u = NodalField::from_fn(g, |x| 0.2 * (x[0] * x[1]).sin());
        let v = NodalField::from_fn(g, |x| x[0] - x[1]);
        let gv = penalty_deriv_apply(&u, &phi, GradMode::Weak, &v).unwrap();
        assert!(gv.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn feasibility_violation_measures_breach() {
        let g = Grid::new_1d(1);
        let phi = ObstacleField::constant(g, 1.0);
        let u = NodalField::from_values(g, vec![0.9]).unwrap();
        // slopes +-1.8, phi = 1 -> violation 0.8
        assert_relative_eq!(feasibility_violation(&u, &phi), 0.8, max_relative = 1e-14);
        let feasible = NodalField::from_values(g, vec![0.2]).unwrap();
        assert_eq!(feasibility_violation(&feasible, &phi), 0.0);
    }
}
