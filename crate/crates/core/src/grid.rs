//! Uniform grid on the unit interval/square with zero Dirichlet boundary.
//!
//! Interior nodal values are stored row-major; boundary values are
//! identically zero and never stored. Gradients live on cells (intervals in
//! 1d, squares in 2d) and are sampled at cell centers. The stiffness
//! operator, the penalty operator and all adjoints are assembled through the
//! same discrete gradient and the diagonal cell-volume weights `h^d`, so the
//! discrete problem inherits the monotonicity structure of the continuous
//! one.

use std::fmt::Write as _;
use std::path::Path;

use crate::linalg::{self, LinearSolveError};

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("field length {got} does not match grid ({want} values expected)")]
    LengthMismatch { got: usize, want: usize },
    #[error("field contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("mu = {mu} is not a positive integer multiple of h = {h}")]
    MuNotMultiple { mu: f64, h: f64 },
    #[error("unsupported dimension {0} (only 1 and 2)")]
    BadDimension(usize),
    #[error("grid must have at least one interior node per axis")]
    EmptyGrid,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Uniform discretization of (0,1)^d, d in {1, 2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self, FieldError> {
        if dim != 1 && dim != 2 {
            return Err(FieldError::BadDimension(dim));
        }
        if n == 0 {
            return Err(FieldError::EmptyGrid);
        }
        Ok(Grid { dim, n })
    }

    pub fn new_1d(n: usize) -> Self {
        Grid::new(1, n).unwrap()
    }

    pub fn new_2d(n: usize) -> Self {
        Grid::new(2, n).unwrap()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interior nodes per axis.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh width; h * (n + 1) = 1 exactly up to roundoff of the division.
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    /// Cell volume h^d.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cells per axis is n + 1.
    #[inline]
    pub fn num_cells(&self) -> usize {
        (self.n + 1).pow(self.dim as u32)
    }

    /// Flat interior-node index for global node coordinates (1-based
    /// interior, boundary excluded); 2d only.
    #[inline]
    fn node_index(&self, ix: usize, iy: usize) -> usize {
        (iy - 1) * self.n + (ix - 1)
    }

    #[inline]
    fn cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * (self.n + 1) + cx
    }
}

/// One real value per interior node, zero on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    grid: Grid,
    values: Vec<f64>,
}

impl NodalField {
    pub fn zeros(grid: Grid) -> Self {
        NodalField {
            grid,
            values: vec![0.0; grid.num_nodes()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.num_nodes() {
            return Err(FieldError::LengthMismatch {
                got: values.len(),
                want: grid.num_nodes(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(NodalField { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        NodalField {
            grid,
            values: vec![c; grid.num_nodes()],
        }
    }

    /// Build from a function of the node position.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let h = grid.h();
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.num_nodes());
        match grid.dim() {
            1 => {
                for i in 1..=n {
                    values.push(f(&[i as f64 * h]));
                }
            }
            _ => {
                for iy in 1..=n {
                    for ix in 1..=n {
                        values.push(f(&[ix as f64 * h, iy as f64 * h]));
                    }
                }
            }
        }
        NodalField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Value at a global 1d node index (0 and n+1 are boundary).
    #[inline]
    fn node1(&self, i: usize) -> f64 {
        if i == 0 || i > self.grid.n {
            0.0
        } else {
            self.values[i - 1]
        }
    }

    /// Value at global 2d node coordinates, boundary included as zero.
    #[inline]
    fn node2(&self, ix: usize, iy: usize) -> f64 {
        let n = self.grid.n;
        if ix == 0 || iy == 0 || ix > n || iy > n {
            0.0
        } else {
            self.values[self.grid.node_index(ix, iy)]
        }
    }

    pub fn scaled(&self, a: f64) -> NodalField {
        NodalField {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn add_scaled(&mut self, a: f64, other: &NodalField) {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn sum_scaled(&self, a: f64, other: &NodalField) -> NodalField {
        let mut out = self.clone();
        out.add_scaled(a, other);
        out
    }

    /// Plain (unweighted) Euclidean dot product of the coefficient vectors.
    pub fn dot(&self, other: &NodalField) -> f64 {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        linalg::dot(&self.values, &other.values)
    }

    /// L2 inner product, i.e. the dot product weighted by h^d.
    pub fn l2_inner(&self, other: &NodalField) -> f64 {
        self.grid.cell_volume() * self.dot(other)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// One d-vector per cell, sampled at the cell center. In 1d the second
/// component is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVectorField {
    grid: Grid,
    vectors: Vec<[f64; 2]>,
}

impl CellVectorField {
    pub fn zeros(grid: Grid) -> Self {
        CellVectorField {
            grid,
            vectors: vec![[0.0; 2]; grid.num_cells()],
        }
    }

    pub fn from_vectors(grid: Grid, vectors: Vec<[f64; 2]>) -> Result<Self, FieldError> {
        if vectors.len() != grid.num_cells() {
            return Err(FieldError::LengthMismatch {
                got: vectors.len(),
                want: grid.num_cells(),
            });
        }
        if let Some(index) = vectors
            .iter()
            .position(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(FieldError::NonFinite { index });
        }
        Ok(CellVectorField { grid, vectors })
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn vectors_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.vectors
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .fold(0.0_f64, |m, v| m.max(v[0].hypot(v[1])))
    }

    /// L2 norm over cells with weights h^d.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.cell_volume();
        self.vectors
            .iter()
            .map(|v| w * (v[0] * v[0] + v[1] * v[1]))
            .sum::<f64>()
            .sqrt()
    }
}

/// Cell-wise gradient bound phi with its uniform lower bound nu.
#[derive(Debug, Clone)]
pub struct ObstacleField {
    grid: Grid,
    phi: Vec<f64>,
    nu: f64,
}

impl ObstacleField {
    /// `nu` must be a strict positive lower bound of `phi`.
    pub fn new(grid: Grid, phi: Vec<f64>, nu: f64) -> Result<Self, FieldError> {
        if phi.len() != grid.num_cells() {
            return Err(FieldError::LengthMismatch {
                got: phi.len(),
                want: grid.num_cells(),
            });
        }
        assert!(nu > 0.0, "nu must be strictly positive");
        for (index, p) in phi.iter().enumerate() {
            if !p.is_finite() {
                return Err(FieldError::NonFinite { index });
            }
            assert!(*p >= nu, "phi must satisfy phi >= nu > 0 on every cell");
        }
        Ok(ObstacleField { grid, phi, nu })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        assert!(c > 0.0);
        ObstacleField {
            grid,
            phi: vec![c; grid.num_cells()],
            nu: c,
        }
    }

    /// Obstacle from an angle of repose: phi = tan(alpha) everywhere.
    pub fn from_repose_angle(grid: Grid, alpha: f64) -> Self {
        ObstacleField::constant(grid, alpha.tan())
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }
}

/// Discrete weak gradient: per-cell slope in 1d, gradient of the bilinear
/// interpolant at the cell center in 2d.
pub fn gradient(u: &NodalField) -> CellVectorField {
    let g = u.grid;
    let h = g.h();
    let n = g.n();
    let mut out = CellVectorField::zeros(g);
    match g.dim() {
        1 => {
            for c in 0..=n {
                out.vectors[c][0] = (u.node1(c + 1) - u.node1(c)) / h;
            }
        }
        _ => {
            for cy in 0..=n {
                for cx in 0..=n {
                    let u00 = u.node2(cx, cy);
                    let u10 = u.node2(cx + 1, cy);
                    let u01 = u.node2(cx, cy + 1);
                    let u11 = u.node2(cx + 1, cy + 1);
                    let v = &mut out.vectors[g.cell_index(cx, cy)];
                    v[0] = (u10 - u00 + u11 - u01) / (2.0 * h);
                    v[1] = (u01 - u00 + u11 - u10) / (2.0 * h);
                }
            }
        }
    }
    out
}

/// Transpose of [`gradient`] with cell-volume weights: the nodal field r
/// with `r . v = sum_c h^d z_c . (D v)_c` for every nodal v.
pub fn gradient_adjoint(z: &CellVectorField) -> NodalField {
    let g = z.grid;
    let h = g.h();
    let n = g.n();
    let w = g.cell_volume();
    let mut out = NodalField::zeros(g);
    match g.dim() {
        1 => {
            // (Dv)_c = (v_{c+1} - v_c)/h with boundary zeros.
            for c in 0..=n {
                let coeff = w * z.vectors[c][0] / h;
                if c + 1 <= n {
                    out.values[c] += coeff;
                }
                if c >= 1 {
                    out.values[c - 1] -= coeff;
                }
            }
        }
        _ => {
            let add = |ix: usize, iy: usize, val: f64, out: &mut NodalField| {
                if ix >= 1 && ix <= n && iy >= 1 && iy <= n {
                    out.values[g.node_index(ix, iy)] += val;
                }
            };
            for cy in 0..=n {
                for cx in 0..=n {
                    let v = z.vectors[g.cell_index(cx, cy)];
                    let ax = w * v[0] / (2.0 * h);
                    let ay = w * v[1] / (2.0 * h);
                    add(cx, cy, -ax - ay, &mut out);
                    add(cx + 1, cy, ax - ay, &mut out);
                    add(cx, cy + 1, -ax + ay, &mut out);
                    add(cx + 1, cy + 1, ax + ay, &mut out);
                }
            }
        }
    }
    out
}

/// Checks that mu is a positive integer multiple of h and returns the
/// multiple.
fn mu_steps(g: Grid, mu: f64) -> Result<usize, FieldError> {
    let h = g.h();
    let k = (mu / h).round();
    if !(k >= 1.0) || (mu - k * h).abs() > 1e-12 * h {
        return Err(FieldError::MuNotMultiple { mu, h });
    }
    Ok(k as usize)
}

/// Cell-center values of the multilinear interpolant (average of the 2^d
/// corner values), indexed like cells.
pub fn center_values(u: &NodalField) -> Vec<f64> {
    let g = u.grid;
    let n = g.n();
    match g.dim() {
        1 => (0..=n).map(|c| 0.5 * (u.node1(c) + u.node1(c + 1))).collect(),
        _ => {
            let mut out = Vec::with_capacity(g.num_cells());
            for cy in 0..=n {
                for cx in 0..=n {
                    out.push(
                        0.25 * (u.node2(cx, cy)
                            + u.node2(cx + 1, cy)
                            + u.node2(cx, cy + 1)
                            + u.node2(cx + 1, cy + 1)),
                    );
                }
            }
            out
        }
    }
}

/// Forward incremental-quotient gradient D_mu: component i at a cell center
/// x is (w(x + mu e_i) - w(x)) / mu, where w is the interpolant of u
/// extended by zero outside the closed domain. Since mu is a grid multiple,
/// only cell-center values of the interpolant are ever needed.
pub fn incremental_gradient(u: &NodalField, mu: f64) -> Result<CellVectorField, FieldError> {
    let g = u.grid;
    let k = mu_steps(g, mu)?;
    let n = g.n();
    let centers = center_values(u);
    let mut out = CellVectorField::zeros(g);
    match g.dim() {
        1 => {
            for c in 0..=n {
                let ahead = if c + k <= n { centers[c + k] } else { 0.0 };
                out.vectors[c][0] = (ahead - centers[c]) / mu;
            }
        }
        _ => {
            for cy in 0..=n {
                for cx in 0..=n {
                    let here = centers[g.cell_index(cx, cy)];
                    let ax = if cx + k <= n {
                        centers[g.cell_index(cx + k, cy)]
                    } else {
                        0.0
                    };
                    let ay = if cy + k <= n {
                        centers[g.cell_index(cx, cy + k)]
                    } else {
                        0.0
                    };
                    let v = &mut out.vectors[g.cell_index(cx, cy)];
                    v[0] = (ax - here) / mu;
                    v[1] = (ay - here) / mu;
                }
            }
        }
    }
    Ok(out)
}

/// Transpose of [`incremental_gradient`] with cell-volume weights.
pub fn incremental_gradient_adjoint(
    z: &CellVectorField,
    mu: f64,
) -> Result<NodalField, FieldError> {
    let g = z.grid;
    let k = mu_steps(g, mu)?;
    let n = g.n();
    let w = g.cell_volume();
    let mut centers = vec![0.0; g.num_cells()];
    // Scatter the quotient coefficients onto cell-center dofs first.
    match g.dim() {
        1 => {
            for c in 0..=n {
                let coeff = w * z.vectors[c][0] / mu;
                if c + k <= n {
                    centers[c + k] += coeff;
                }
                centers[c] -= coeff;
            }
        }
        _ => {
            for cy in 0..=n {
                for cx in 0..=n {
                    let v = z.vectors[g.cell_index(cx, cy)];
                    let ax = w * v[0] / mu;
                    let ay = w * v[1] / mu;
                    if cx + k <= n {
                        centers[g.cell_index(cx + k, cy)] += ax;
                    }
                    if cy + k <= n {
                        centers[g.cell_index(cx, cy + k)] += ay;
                    }
                    centers[g.cell_index(cx, cy)] -= ax + ay;
                }
            }
        }
    }
    // Then distribute each center onto its 2^d corners.
    let mut out = NodalField::zeros(g);
    match g.dim() {
        1 => {
            for c in 0..=n {
                let half = 0.5 * centers[c];
                if c >= 1 {
                    out.values[c - 1] += half;
                }
                if c + 1 <= n {
                    out.values[c] += half;
                }
            }
        }
        _ => {
            for cy in 0..=n {
                for cx in 0..=n {
                    let quarter = 0.25 * centers[g.cell_index(cx, cy)];
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let (ix, iy) = (cx + dx, cy + dy);
                        if ix >= 1 && ix <= n && iy >= 1 && iy <= n {
                            out.values[g.node_index(ix, iy)] += quarter;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Action of the scaled stiffness operator eps * D' W D (discrete
/// -eps * Laplacian with the weak gradient).
pub fn stiffness_apply(eps: f64, u: &NodalField) -> NodalField {
    gradient_adjoint(&gradient(u)).scaled(eps)
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub dual_h1: f64,
}

/// H1 seminorm through the weak gradient.
pub fn h1_norm(u: &NodalField) -> f64 {
    gradient(u).l2_norm()
}

/// Discrete H^-1 norm: sqrt(u . L^{-1} u) with L = D' W D, computed by one
/// conjugate-gradient solve.
pub fn dual_h1_norm(u: &NodalField) -> f64 {
    if u.values.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let w = stiffness_solve(u);
    u.dot(&w).max(0.0).sqrt()
}

/// Solves L w = u with L = D' W D to near machine precision.
pub fn stiffness_solve(u: &NodalField) -> NodalField {
    let sol = linalg::conjugate_gradient(
        |x, out| {
            let xf = NodalField {
                grid: u.grid,
                values: x.to_vec(),
            };
            out.copy_from_slice(stiffness_apply(1.0, &xf).values());
        },
        u.values(),
        1e-14,
        40 * u.values.len() + 200,
    )
    .unwrap_or_else(|LinearSolveError { best, .. }| best);
    NodalField {
        grid: u.grid,
        values: sol,
    }
}

pub fn norms(u: &NodalField) -> Norms {
    Norms {
        l2: u.l2_norm(),
        h1: h1_norm(u),
        dual_h1: dual_h1_norm(u),
    }
}

/// Writes a nodal field in the text format: first line `d n` (1d) or
/// `d n n` (2d), then one row-major value per line at full precision.
pub fn write_field(path: &Path, u: &NodalField) -> Result<(), FieldError> {
    let g = u.grid;
    let mut s = String::new();
    match g.dim() {
        1 => writeln!(s, "1 {}", g.n()).unwrap(),
        _ => writeln!(s, "2 {} {}", g.n(), g.n()).unwrap(),
    }
    for v in &u.values {
        writeln!(s, "{:.16e}", v).unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<NodalField, FieldError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(FieldError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad_header = |msg: &str| FieldError::Parse {
        line: 1,
        msg: msg.into(),
    };
    let dim: usize = parts
        .first()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| bad_header("expected 'd n' or 'd n n'"))?;
    let n: usize = parts
        .get(1)
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| bad_header("expected 'd n' or 'd n n'"))?;
    match (dim, parts.len()) {
        (1, 2) => {}
        (2, 3) => {
            let n2: usize = parts[2]
                .parse()
                .map_err(|_| bad_header("expected 'd n n'"))?;
            if n2 != n {
                return Err(bad_header("only square grids are supported"));
            }
        }
        _ => return Err(bad_header("expected 'd n' or 'd n n'")),
    }
    let grid = Grid::new(dim, n).map_err(|e| FieldError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let mut values = Vec::with_capacity(grid.num_nodes());
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| FieldError::Parse {
            line: i + 1,
            msg: format!("invalid value '{line}'"),
        })?;
        values.push(v);
    }
    NodalField::from_values(grid, values).map_err(|e| FieldError::Parse {
        line: 1,
        msg: e.to_string(),
    })
}
