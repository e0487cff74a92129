//! Matrix-free conjugate gradients for the symmetric positive definite
//! systems arising from the stiffness and Newton operators.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner linear solve failed to reach the requested tolerance.
#[derive(Debug, Clone)]
pub struct LinearSolveError {
    /// Relative residual actually achieved.
    pub achieved: f64,
    pub requested: f64,
    pub iterations: usize,
    /// Best iterate found (smallest residual).
    pub best: Vec<f64>,
}

impl std::fmt::Display for LinearSolveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "conjugate gradient stalled at relative residual {:.3e} (requested {:.3e}) after {} iterations",
            self.achieved, self.requested, self.iterations
        )
    }
}

impl std::error::Error for LinearSolveError {}

/// Solves A x = b for a symmetric positive definite operator given through
/// its action, to a relative residual `tol`. Deterministic: fixed traversal
/// order, no parallel reductions.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, LinearSolveError> {
    let n = b.len();
    let norm_b = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if norm_b == 0.0 {
        return Ok(x);
    }
    let target = tol * norm_b;

    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut best = x.clone();
    let mut best_res = rr.sqrt();

    for iter in 0..max_iter {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Operator is numerically indefinite along p; stop with the
            // best iterate so the caller can report the achieved residual.
            return Err(LinearSolveError {
                achieved: best_res / norm_b,
                requested: tol,
                iterations: iter,
                best,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() < best_res {
            best_res = rr_new.sqrt();
            best.copy_from_slice(&x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= target {
        Ok(x)
    } else {
        Err(LinearSolveError {
            achieved: best_res / norm_b,
            requested: tol,
            iterations: max_iter,
            best,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_diagonal_system() {
        let d = [1.0, 2.0, 3.0, 4.0];
        let b = [4.0, 6.0, 6.0, 4.0];
        let x = conjugate_gradient(
            |v, out| {
                for i in 0..4 {
                    out[i] = d[i] * v[i];
                }
            },
            &b,
            1e-14,
            100,
        )
        .unwrap();
        for i in 0..4 {
            assert_relative_eq!(x[i], b[i] / d[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_rhs_is_zero() {
        let x = conjugate_gradient(|v, out| out.copy_from_slice(v), &[0.0; 3], 1e-12, 10).unwrap();
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn reports_stall_on_iteration_cap() {
        // 1d Laplacian-like tridiagonal, deliberately capped at 1 iteration.
        let n = 50;
        let b = vec![1.0; n];
        let err = conjugate_gradient(
            |v, out| {
                for i in 0..n {
                    let left = if i > 0 { v[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { v[i + 1] } else { 0.0 };
                    out[i] = 2.0 * v[i] - left - right;
                }
            },
            &b,
            1e-12,
            1,
        )
        .unwrap_err();
        assert!(err.achieved > 1e-12);
        assert_eq!(err.iterations, 1);
    }
}
