//! Named property checks aggregated into a machine-readable verdict.
//!
//! Every check measures a scalar and compares it against a pinned
//! threshold. Checks marked `recorded_only` are measured and reported but
//! never fail a run; they cover the cases where the underlying theory makes
//! no assertion (the weak-gradient Newton-derivative gap, the base-point
//! comparison for the sensitivity operator).

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::control::{optimize, ControlParams};
use crate::grid::{
    dual_h1_norm, gradient, h1_norm, stiffness_apply, Grid, NodalField, ObstacleField,
};
use crate::oracle::{dense_solve, fd_directional, newton_ratio_probe, vi_solve_admm, AdmmParams};
use crate::penalty::{
    feasibility_violation, penalty_apply, penalty_energy, point_jet, GradMode,
    PenaltyLinearization,
};
use crate::sensitivity::{solve_adjoint, solve_sensitivity};
use crate::state::{
    mass_weighted, newton_step, path_follow, solve_state, RunReport, Schedule, SolverParams,
};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    All,
    Penalty,
    State,
    Sensitivity,
    Control,
    Oracle,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Suite::All),
            "penalty" => Ok(Suite::Penalty),
            "state" => Ok(Suite::State),
            "sensitivity" => Ok(Suite::Sensitivity),
            "control" => Ok(Suite::Control),
            "oracle" => Ok(Suite::Oracle),
            other => Err(format!("unknown suite '{other}'")),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub suite: String,
    pub measured: f64,
    pub threshold: f64,
    /// "<=" or ">=" between measured and threshold.
    pub comparison: &'static str,
    pub passed: bool,
    pub recorded_only: bool,
    pub details: String,
}

impl CheckResult {
    fn upper(suite: &str, name: &str, measured: f64, threshold: f64, details: String) -> Self {
        CheckResult {
            name: name.into(),
            suite: suite.into(),
            measured,
            threshold,
            comparison: "<=",
            passed: measured <= threshold,
            recorded_only: false,
            details,
        }
    }

    fn lower(suite: &str, name: &str, measured: f64, threshold: f64, details: String) -> Self {
        CheckResult {
            name: name.into(),
            suite: suite.into(),
            measured,
            threshold,
            comparison: ">=",
            passed: measured >= threshold,
            recorded_only: false,
            details,
        }
    }

    fn recorded(mut self) -> Self {
        self.recorded_only = true;
        self.passed = true;
        self
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Verdict {
    pub format_version: String,
    pub suite: Suite,
    pub seed: u64,
    pub all_passed: bool,
    pub wall_time_s: f64,
    pub checks: Vec<CheckResult>,
}

/// Frozen desk-scale benchmark problems.
pub struct Benchmark {
    pub grid: Grid,
    pub eps: f64,
    pub f: NodalField,
    pub phi: ObstacleField,
}

pub fn benchmark_1d() -> Benchmark {
    let grid = Grid::new_1d(63);
    Benchmark {
        grid,
        eps: 0.05,
        f: NodalField::constant(grid, 5.0),
        phi: ObstacleField::constant(grid, 1.0),
    }
}

pub fn benchmark_2d() -> Benchmark {
    let grid = Grid::new_2d(31);
    Benchmark {
        grid,
        eps: 0.05,
        f: NodalField::constant(grid, 8.0),
        phi: ObstacleField::constant(grid, 1.0),
    }
}

impl Benchmark {
    pub fn params(&self, gamma: f64, mode: GradMode) -> SolverParams {
        SolverParams::new(self.eps, gamma, mode)
    }

    fn modes(&self) -> [(GradMode, &'static str); 2] {
        [
            (GradMode::Weak, "grad"),
            (GradMode::Incremental { mu: self.grid.h() }, "dmu"),
        ]
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Verdict {
    let start = Instant::now();
    let mut checks = Vec::new();
    let run = |s: Suite| suite == Suite::All || suite == s;
    if run(Suite::Penalty) {
        penalty_suite(seed, &mut checks);
    }
    if run(Suite::State) {
        state_suite(seed, &mut checks);
    }
    if run(Suite::Sensitivity) {
        sensitivity_suite(seed, &mut checks);
    }
    if run(Suite::Control) {
        control_suite(seed, &mut checks);
    }
    if run(Suite::Oracle) {
        oracle_suite(seed, &mut checks);
    }
    let all_passed = checks.iter().all(|c| c.passed);
    Verdict {
        format_version: FORMAT_VERSION.into(),
        suite,
        seed,
        all_passed,
        wall_time_s: start.elapsed().as_secs_f64(),
        checks,
    }
}

fn random_field(grid: Grid, amplitude: f64, rng: &mut ChaCha8Rng) -> NodalField {
    let values = (0..grid.num_nodes())
        .map(|_| rng.gen_range(-amplitude..amplitude))
        .collect();
    NodalField::from_values(grid, values).unwrap()
}

/// Smooth random field: a short sine series with random coefficients.
/// Smoothness keeps the active set tame so kink margins are attainable.
fn random_smooth_field(grid: Grid, amplitude: f64, rng: &mut ChaCha8Rng) -> NodalField {
    use std::f64::consts::PI;
    let coeffs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let coeffs2: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    NodalField::from_fn(grid, |x| {
        let mut v = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            v += c * ((k + 1) as f64 * PI * x[0]).sin();
        }
        if x.len() > 1 {
            for (k, c) in coeffs2.iter().enumerate() {
                v *= 1.0;
                v += c * ((k + 1) as f64 * PI * x[1]).sin() * (PI * x[0]).sin();
            }
        }
        amplitude * v
    })
}

/// Scales u so that max_c |D u|_c / phi_c hits the given fraction.
fn scale_to_feasible(u: &NodalField, phi: &ObstacleField, fraction: f64) -> NodalField {
    let du = gradient(u);
    let ratio = du
        .vectors()
        .iter()
        .zip(phi.phi())
        .fold(0.0_f64, |m, (v, p)| m.max(v[0].hypot(v[1]) / p));
    if ratio == 0.0 {
        u.clone()
    } else {
        u.scaled(fraction / ratio)
    }
}

/// Smallest distance of |D u|_c - phi_c to the clamp kinks {0, 1} over the
/// cells; used to certify kink-avoiding base points.
fn kink_margin(u: &NodalField, phi: &ObstacleField, mode: GradMode) -> f64 {
    let du = mode.gradient(u).unwrap();
    du.vectors()
        .iter()
        .zip(phi.phi())
        .map(|(v, p)| {
            let t = v[0].hypot(v[1]) - p;
            t.abs().min((t - 1.0).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// penalty suite
// ---------------------------------------------------------------------------

fn penalty_suite(seed: u64, checks: &mut Vec<CheckResult>) {
    let suite = "penalty";
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x100));

    // Criterion 1: exact zero on the feasible set, 50 random fields, < 1 s.
    {
        let t0 = Instant::now();
        let mut worst = 0.0_f64;
        for i in 0..50 {
            let grid = if i % 2 == 0 {
                Grid::new_1d(31)
            } else {
                Grid::new_2d(15)
            };
            let phi = ObstacleField::constant(grid, 1.0);
            let u = scale_to_feasible(&random_field(grid, 1.0, &mut rng), &phi, 0.95);
            for (mode, _) in [(GradMode::Weak, ""), (GradMode::Incremental { mu: grid.h() }, "")] {
                // D_mu fields may exceed phi even when D_h is feasible, so
                // only assert the weak mode when the mode gradient is
                // feasible too.
                let dmode = mode.gradient(&u).unwrap();
                let feasible = dmode
                    .vectors()
                    .iter()
                    .zip(phi.phi())
                    .all(|(v, p)| v[0].hypot(v[1]) <= *p);
                if !feasible {
                    continue;
                }
                let p = penalty_apply(&u, &phi, mode).unwrap();
                worst = worst.max(p.max_abs());
            }
        }
        checks.push(CheckResult::upper(
            suite,
            "penalty_vanishes_on_feasible_set",
            worst,
            0.0,
            "max |P(u)| over 50 random feasible fields; must be exactly zero".into(),
        ));
        checks.push(CheckResult::upper(
            suite,
            "penalty_feasible_runtime_s",
            t0.elapsed().as_secs_f64(),
            1.0,
            "wall time of the 50-field vanishing check".into(),
        ));
    }

    // Criterion 2: G(u) is positive semidefinite.
    {
        let mut min_rayleigh = f64::INFINITY;
        for grid in [Grid::new_1d(31), Grid::new_2d(15)] {
            let phi = ObstacleField::constant(grid, 1.0);
            for _ in 0..50 {
                let u = random_field(grid, 2.0, &mut rng);
                let z = random_field(grid, 1.0, &mut rng);
                for mode in [GradMode::Weak, GradMode::Incremental { mu: grid.h() }] {
                    let lin = PenaltyLinearization::new(&u, &phi, mode).unwrap();
                    let gz = lin.apply(&z).unwrap();
                    let zh1 = h1_norm(&z);
                    min_rayleigh = min_rayleigh.min(gz.dot(&z) / (zh1 * zh1));
                }
            }
        }
        checks.push(CheckResult::lower(
            suite,
            "penalty_deriv_positive_semidefinite",
            min_rayleigh,
            -1e-12,
            "min of (G(u) z, z)/|z|_H1^2 over 100 random pairs, both modes".into(),
        ));
    }

    // Monotonicity of the assembled penalty operator.
    {
        let mut min_pairing = f64::INFINITY;
        for grid in [Grid::new_1d(31), Grid::new_2d(15)] {
            let phi = ObstacleField::constant(grid, 1.0);
            for _ in 0..50 {
                let u1 = random_field(grid, 2.0, &mut rng);
                let u2 = random_field(grid, 2.0, &mut rng);
                for mode in [GradMode::Weak, GradMode::Incremental { mu: grid.h() }] {
                    let p1 = penalty_apply(&u1, &phi, mode).unwrap();
                    let p2 = penalty_apply(&u2, &phi, mode).unwrap();
                    let diff = u1.sum_scaled(-1.0, &u2);
                    let dh1 = h1_norm(&diff);
                    min_pairing = min_pairing.min(p1.sum_scaled(-1.0, &p2).dot(&diff) / (dh1 * dh1));
                }
            }
        }
        checks.push(CheckResult::lower(
            suite,
            "penalty_operator_monotone",
            min_pairing,
            -1e-12,
            "min of (P(u1) - P(u2), u1 - u2)/|u1 - u2|_H1^2 over random pairs".into(),
        ));
    }

    // Gradient consistency of the convex potential.
    {
        let mut worst = 0.0_f64;
        let grid = Grid::new_1d(31);
        let phi = ObstacleField::constant(grid, 1.0);
        let s = 1e-6;
        let mut accepted = 0;
        while accepted < 10 {
            let mut u = random_smooth_field(grid, 2.0, &mut rng);
            let mut tries = 0;
            while kink_margin(&u, &phi, GradMode::Weak) < 1e-3 && tries < 50 {
                u = u.scaled(1.013);
                tries += 1;
            }
            if tries == 50 {
                continue;
            }
            let v = random_smooth_field(grid, 1.0, &mut rng);
            let j0 = penalty_energy(&u, &phi, GradMode::Weak).unwrap();
            let j1 = penalty_energy(&u.sum_scaled(s, &v), &phi, GradMode::Weak).unwrap();
            let fd = (j1 - j0) / s;
            let pairing = penalty_apply(&u, &phi, GradMode::Weak).unwrap().dot(&v);
            let denom = pairing.abs().max(1e-10);
            worst = worst.max((fd - pairing).abs() / denom);
            accepted += 1;
        }
        checks.push(CheckResult::upper(
            suite,
            "penalty_energy_gradient_consistency",
            worst,
            1e-4,
            "relative error of (J(u+sv)-J(u))/s against (P(u), v) at s=1e-6".into(),
        ));
    }

    // Criterion 3: Newton-derivative remainder decay for the pointwise
    // operator P, exponents (p, q) = (4, 2).
    {
        let mut worst_decay = 0.0_f64;
        for point in 0..20 {
            let grid = if point % 2 == 0 {
                Grid::new_1d(15)
            } else {
                Grid::new_2d(7)
            };
            let dim = grid.dim();
            let phi_val = 1.0;
            let ncells = grid.num_cells();
            let w = grid.cell_volume();
            // Base gradients sampled per regime with >= 0.1 kink margin.
            let mut base = vec![0.0; ncells * 2];
            for c in 0..ncells {
                let radius = match rng.gen_range(0..3) {
                    0 => phi_val + rng.gen_range(-0.8..-0.1),
                    1 => phi_val + rng.gen_range(0.1..0.9),
                    _ => phi_val + rng.gen_range(1.1..1.8),
                };
                if dim == 1 {
                    base[2 * c] = radius * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                } else {
                    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                    base[2 * c] = radius * angle.cos();
                    base[2 * c + 1] = radius * angle.sin();
                }
            }
            let mut dir = vec![0.0; ncells * 2];
            for c in 0..ncells {
                for i in 0..dim {
                    dir[2 * c + i] = rng.gen_range(-1.0..1.0);
                }
            }
            let op = |x: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; x.len()];
                for c in 0..ncells {
                    let jet = point_jet([x[2 * c], x[2 * c + 1]], phi_val);
                    out[2 * c] = jet.value[0];
                    out[2 * c + 1] = jet.value[1];
                }
                out
            };
            let deriv = |at: &[f64], h: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; h.len()];
                for c in 0..ncells {
                    let jet = point_jet([at[2 * c], at[2 * c + 1]], phi_val);
                    let gh = jet.apply_deriv([h[2 * c], h[2 * c + 1]]);
                    out[2 * c] = gh[0];
                    out[2 * c + 1] = gh[1];
                }
                out
            };
            let lq = |r: &[f64]| -> f64 {
                (0..ncells)
                    .map(|c| w * (r[2 * c] * r[2 * c] + r[2 * c + 1] * r[2 * c + 1]))
                    .sum::<f64>()
                    .sqrt()
            };
            let lp4 = (0..ncells)
                .map(|c| {
                    let n2 = dir[2 * c] * dir[2 * c] + dir[2 * c + 1] * dir[2 * c + 1];
                    w * n2 * n2.sqrt() * n2.sqrt()
                })
                .sum::<f64>()
                .powf(0.25);
            let ratios =
                newton_ratio_probe(op, deriv, &base, &dir, &[1e-1, 1e-2, 1e-3, 1e-4], lq, lp4);
            let r_first = ratios[0].1;
            let r_last = ratios[3].1;
            // If the remainder is identically zero at the coarse scale the
            // decay is trivially satisfied.
            let decay = if r_first <= 1e-14 {
                0.0
            } else {
                r_last / r_first
            };
            worst_decay = worst_decay.max(decay);
        }
        checks.push(CheckResult::upper(
            suite,
            "penalty_pointwise_newton_ratio_decay",
            worst_decay,
            0.1,
            "max over 20 base points of ratio(1e-4)/ratio(1e-1) for P, (p,q)=(4,2)".into(),
        ));
    }

    // Recorded only: remainder decay of the assembled operator P(u) in the
    // H^-1-like norm, both gradient modes. The weak mode is known to lack
    // an H^-1 Newton-derivative bound, so neither is asserted here.
    {
        let grid = Grid::new_1d(31);
        let phi = ObstacleField::constant(grid, 1.0);
        for (mode, label) in [
            (GradMode::Weak, "grad"),
            (GradMode::Incremental { mu: grid.h() }, "dmu"),
        ] {
            let mut u = random_smooth_field(grid, 2.5, &mut rng);
            let mut tries = 0;
            while kink_margin(&u, &phi, mode) < 1e-3 && tries < 50 {
                u = u.scaled(1.013);
                tries += 1;
            }
            let v = random_smooth_field(grid, 1.0, &mut rng);
            let op = |x: &[f64]| -> Vec<f64> {
                let xf = NodalField::from_values(grid, x.to_vec()).unwrap();
                penalty_apply(&xf, &phi, mode).unwrap().values().to_vec()
            };
            let deriv = |at: &[f64], h: &[f64]| -> Vec<f64> {
                let at_f = NodalField::from_values(grid, at.to_vec()).unwrap();
                let h_f = NodalField::from_values(grid, h.to_vec()).unwrap();
                let lin = PenaltyLinearization::new(&at_f, &phi, mode).unwrap();
                lin.apply(&h_f).unwrap().values().to_vec()
            };
            let dual = |r: &[f64]| -> f64 {
                dual_h1_norm(&NodalField::from_values(grid, r.to_vec()).unwrap())
            };
            let ratios = newton_ratio_probe(
                op,
                deriv,
                u.values(),
                v.values(),
                &[1e-1, 1e-2, 1e-3, 1e-4],
                dual,
                h1_norm(&v),
            );
            let decay = if ratios[0].1 <= 1e-14 {
                0.0
            } else {
                ratios[3].1 / ratios[0].1
            };
            checks.push(
                CheckResult::upper(
                    suite,
                    &format!("penalty_assembled_ratio_decay_{label}"),
                    decay,
                    0.1,
                    "remainder decay of assembled P in dual H1 norm (recorded)".into(),
                )
                .recorded(),
            );
        }
    }
}

// ---------------------------------------------------------------------------
// state suite
// ---------------------------------------------------------------------------

struct PathOutcome {
    u: NodalField,
    reports: Vec<RunReport>,
    wall_time_s: f64,
}

fn run_benchmark_path(bench: &Benchmark, mode: GradMode) -> Result<PathOutcome, String> {
    let t0 = Instant::now();
    let params = bench.params(1.0, mode);
    let (u, reports) = path_follow(&bench.f, &bench.phi, &params, &Schedule::default_path())
        .map_err(|e| e.to_string())?;
    Ok(PathOutcome {
        u,
        reports,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}

fn path_checks(
    suite: &str,
    label: &str,
    bench: &Benchmark,
    outcome: &PathOutcome,
    checks: &mut Vec<CheckResult>,
    runtime_cap: Option<f64>,
    limit_recorded_only: bool,
) {
    // Criterion 4: convergence of every stage.
    let max_res = outcome
        .reports
        .iter()
        .map(|r| *r.residual_dual_h1.last().unwrap())
        .fold(0.0_f64, f64::max);
    checks.push(CheckResult::upper(
        suite,
        &format!("newton_final_residual_{label}"),
        max_res,
        1e-10,
        "max over stages of the final dual-H1 residual".into(),
    ));
    let max_iters = outcome
        .reports
        .iter()
        .map(|r| r.iterations)
        .max()
        .unwrap_or(0) as f64;
    checks.push(CheckResult::upper(
        suite,
        &format!("newton_iterations_{label}"),
        max_iters,
        25.0,
        "max Newton iterations over path stages".into(),
    ));

    // Superlinear tail: last three contraction ratios decreasing in the
    // final stage.
    let last = outcome.reports.last().unwrap();
    let ratios = &last.contraction_ratios;
    let tail_ok = if ratios.len() >= 3 {
        let t = &ratios[ratios.len() - 3..];
        t[0] > t[1] && t[1] > t[2]
    } else {
        // Too few iterations to measure a tail; warm starts can converge in
        // one or two steps, which is itself superlinear behavior.
        true
    };
    checks.push(CheckResult::lower(
        suite,
        &format!("newton_contraction_tail_decreasing_{label}"),
        if tail_ok { 1.0 } else { 0.0 },
        1.0,
        format!("last-3 contraction ratios of the final stage: {ratios:?}"),
    ));

    // Criterion 5: energy bound on every accepted Newton step.
    let mut worst_bound = 0.0_f64;
    for r in &outcome.reports {
        for (step, res) in r.step_h1.iter().zip(&r.residual_dual_h1) {
            if *res > 0.0 {
                worst_bound = worst_bound.max(step * bench.eps / res);
            }
        }
    }
    checks.push(CheckResult::upper(
        suite,
        &format!("newton_step_energy_bound_{label}"),
        worst_bound,
        1.05,
        "max of eps * |v|_H1 / |E(u)|_dual over all Newton steps".into(),
    ));

    // Criterion 6: feasibility nonincreasing along the path, small at the
    // final gamma.
    let finals: Vec<f64> = outcome
        .reports
        .iter()
        .map(|r| *r.feasibility.last().unwrap())
        .collect();
    let monotone_breach = finals
        .windows(2)
        .map(|w| (w[1] - w[0]).max(0.0))
        .fold(0.0_f64, f64::max);
    checks.push(CheckResult::upper(
        suite,
        &format!("path_feasibility_nonincreasing_{label}"),
        monotone_breach,
        1e-12,
        format!("stage-final feasibility violations: {finals:?}"),
    ));
    // The gamma-limit in mode D_mu keeps a weak-gradient breach of order
    // f*h^2/eps (the interior of D_mu cannot see grid-parity modes), so the
    // 1e-3 bound applies to the weak mode only; D_mu values are recorded.
    let final_feas = CheckResult::upper(
        suite,
        &format!("path_feasibility_final_{label}"),
        *finals.last().unwrap(),
        1e-3,
        "weak-gradient feasibility violation at gamma = 1e4".into(),
    );
    checks.push(if limit_recorded_only {
        final_feas.recorded()
    } else {
        final_feas
    });

    if let Some(cap) = runtime_cap {
        checks.push(CheckResult::upper(
            suite,
            &format!("path_runtime_s_{label}"),
            outcome.wall_time_s,
            cap,
            "wall time of the full continuation run".into(),
        ));
    }
}

fn state_suite(seed: u64, checks: &mut Vec<CheckResult>) {
    let suite = "state";
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x200));

    for (bench, bname, cap) in [
        (benchmark_1d(), "1d", None),
        (benchmark_2d(), "2d", Some(60.0)),
    ] {
        for (mode, mname) in bench.modes() {
            let label = format!("{bname}_{mname}");
            let recorded = matches!(mode, GradMode::Incremental { .. });
            match run_benchmark_path(&bench, mode) {
                Ok(outcome) => path_checks(suite, &label, &bench, &outcome, checks, cap, recorded),
                Err(e) => checks.push(CheckResult::lower(
                    suite,
                    &format!("newton_final_residual_{label}"),
                    0.0,
                    1.0,
                    format!("path run failed: {e}"),
                )),
            }
        }
    }

    // The Newton system operator dominates eps times the stiffness.
    {
        let grid = Grid::new_1d(31);
        let phi = ObstacleField::constant(grid, 1.0);
        let params = SolverParams::new(0.05, 100.0, GradMode::Weak);
        let mut min_quotient = f64::INFINITY;
        for _ in 0..20 {
            let u = random_field(grid, 2.0, &mut rng);
            let v = random_field(grid, 1.0, &mut rng);
            let lin = PenaltyLinearization::new(&u, &phi, params.mode).unwrap();
            let sv = crate::state::system_apply(&lin, &params, &v).unwrap();
            let lv = stiffness_apply(params.eps, &v);
            min_quotient = min_quotient.min(sv.dot(&v) / lv.dot(&v));
        }
        checks.push(CheckResult::lower(
            suite,
            "newton_system_dominates_stiffness",
            min_quotient,
            1.0 - 1e-10,
            "min of (S v, v)/(eps L v, v) over random Rayleigh quotients".into(),
        ));
    }

    // Uniqueness surrogate: two initializations reach the same solution.
    {
        let bench = benchmark_1d();
        let mut params = bench.params(100.0, GradMode::Incremental { mu: bench.grid.h() });
        // Fixed-gamma solves from cold starts are globally convergent but
        // slow; the 25-iteration cap is asserted only for the warm-started
        // continuation runs above.
        params.max_iter = 400;
        let (u0, _) = solve_state(&bench.f, &bench.phi, &params, None).unwrap();
        let init = random_field(bench.grid, 0.5, &mut rng);
        let (u1, _) = solve_state(&bench.f, &bench.phi, &params, Some(&init)).unwrap();
        let diff = h1_norm(&u0.sum_scaled(-1.0, &u1));
        checks.push(CheckResult::upper(
            suite,
            "state_unique_across_initializations",
            diff,
            10.0 * params.tol_res,
            "H1 distance between solves started from zero and from noise".into(),
        ));
    }

    // Lipschitz bound of the control-to-state map.
    {
        let grid = Grid::new_1d(31);
        let phi = ObstacleField::constant(grid, 1.0);
        let mut params = SolverParams::new(0.05, 100.0, GradMode::Incremental { mu: grid.h() });
        params.max_iter = 400;
        let f = NodalField::constant(grid, 4.0);
        let (u0, _) = solve_state(&f, &phi, &params, None).unwrap();
        let mut worst = 0.0_f64;
        for _ in 0..5 {
            let hdir = random_smooth_field(grid, 0.5, &mut rng);
            let f1 = f.sum_scaled(1.0, &hdir);
            let (u1, _) = solve_state(&f1, &phi, &params, Some(&u0)).unwrap();
            let lhs = h1_norm(&u1.sum_scaled(-1.0, &u0));
            let rhs = dual_h1_norm(&mass_weighted(&hdir)) / params.eps;
            worst = worst.max(lhs / rhs);
        }
        checks.push(CheckResult::upper(
            suite,
            "control_to_state_lipschitz",
            worst,
            1.05,
            "max of eps |u(f+h) - u(f)|_H1 / |h|_dual over random perturbations".into(),
        ));
    }

    // Criterion 12: bit-exact repetition of a benchmark run.
    {
        let bench = benchmark_1d();
        let mode = GradMode::Incremental { mu: bench.grid.h() };
        let a = run_benchmark_path(&bench, mode).unwrap();
        let b = run_benchmark_path(&bench, mode).unwrap();
        let identical = a.u.values() == b.u.values()
            && a.reports.len() == b.reports.len()
            && a.reports
                .iter()
                .zip(&b.reports)
                .all(|(x, y)| x.residual_dual_h1 == y.residual_dual_h1);
        checks.push(CheckResult::lower(
            suite,
            "determinism_bitwise_repeat",
            if identical { 1.0 } else { 0.0 },
            1.0,
            "repeated benchmark run reproduces fields and residual history bit-exactly".into(),
        ));
    }
}

// ---------------------------------------------------------------------------
// sensitivity suite
// ---------------------------------------------------------------------------

/// Draws a source whose state has all cells at least `margin` away from the
/// clamp kinks, rescaling until the margin holds.
fn kink_avoiding_source(
    grid: Grid,
    phi: &ObstacleField,
    params: &SolverParams,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(NodalField, NodalField)> {
    for _ in 0..40 {
        let mut f = random_smooth_field(grid, 4.0, rng);
        f.add_scaled(1.0, &NodalField::constant(grid, rng.gen_range(2.0..5.0)));
        let mut warm: Option<NodalField> = None;
        for _ in 0..25 {
            if let Ok((u, _)) = solve_state(&f, phi, params, warm.as_ref()) {
                if kink_margin(&u, phi, params.mode) >= margin {
                    return Some((f, u));
                }
                warm = Some(u);
            }
            f = f.scaled(1.017);
        }
    }
    None
}

fn sensitivity_suite(seed: u64, checks: &mut Vec<CheckResult>) {
    let suite = "sensitivity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x300));
    let grid = Grid::new_1d(63);
    let phi = ObstacleField::constant(grid, 1.0);
    let mut params = SolverParams::new(0.05, 100.0, GradMode::Incremental { mu: grid.h() });
    params.tol_res = 1e-12;
    params.tol_lin = 1e-13;
    params.max_iter = 400;

    // Criterion 8: remainder ratio of the control-to-state map decays.
    {
        let mut worst_decay = 0.0_f64;
        let mut recorded_base_cmp = 0.0_f64;
        let mut pairs = 0;
        while pairs < 10 {
            let Some((f, u0)) = kink_avoiding_source(grid, &phi, &params, 1e-3, &mut rng) else {
                break;
            };
            let hdir = random_smooth_field(grid, 1.0, &mut rng);
            let ratio_at = |s: f64| -> (f64, f64) {
                let fs = f.sum_scaled(s, &hdir);
                let (us, _) = solve_state(&fs, &phi, &params, Some(&u0)).unwrap();
                // Newton derivative evaluated at the perturbed base point.
                let w = solve_sensitivity(&us, &hdir, &phi, &params).unwrap();
                let rem = us.sum_scaled(-1.0, &u0).sum_scaled(-s, &w);
                // Same remainder with G at the unperturbed state, recorded
                // for the base-point comparison.
                let w0 = solve_sensitivity(&u0, &hdir, &phi, &params).unwrap();
                let rem0 = us.sum_scaled(-1.0, &u0).sum_scaled(-s, &w0);
                (h1_norm(&rem) / s, h1_norm(&rem0) / s)
            };
            let (r_coarse, _) = ratio_at(1e-1);
            let (r_fine, r_fine_base) = ratio_at(1e-3);
            let decay = if r_coarse <= 1e-12 {
                0.0
            } else {
                r_fine / r_coarse
            };
            worst_decay = worst_decay.max(decay);
            if r_fine > 1e-14 {
                recorded_base_cmp = recorded_base_cmp.max(r_fine_base / r_fine);
            }
            pairs += 1;
        }
        checks.push(CheckResult::upper(
            suite,
            "solution_map_newton_ratio_decay",
            worst_decay,
            0.2,
            format!("max over {pairs} (f, h) pairs of rho(1e-3)/rho(1e-1), mode dmu"),
        ));
        checks.push(
            CheckResult::upper(
                suite,
                "sensitivity_base_point_comparison",
                recorded_base_cmp,
                f64::INFINITY,
                "remainder with G at u(f) relative to G at u(f+h) (recorded)".into(),
            )
            .recorded(),
        );
    }

    // Energy bound |w|_H1 <= (1/eps) |h|_dual.
    {
        let f = NodalField::constant(grid, 4.0);
        let (u, _) = solve_state(&f, &phi, &params, None).unwrap();
        let mut worst = 0.0_f64;
        for _ in 0..10 {
            let hdir = random_field(grid, 1.0, &mut rng);
            let w = solve_sensitivity(&u, &hdir, &phi, &params).unwrap();
            worst = worst.max(params.eps * h1_norm(&w) / dual_h1_norm(&mass_weighted(&hdir)));
        }
        checks.push(CheckResult::upper(
            suite,
            "sensitivity_energy_bound",
            worst,
            1.05,
            "max of eps |w|_H1 / |h|_dual over random directions".into(),
        ));
    }

    // Self-adjoint pairing of sensitivity and adjoint solves.
    {
        let f = NodalField::constant(grid, 4.0);
        let (u, _) = solve_state(&f, &phi, &params, None).unwrap();
        let mut worst = 0.0_f64;
        for _ in 0..5 {
            let a = random_field(grid, 1.0, &mut rng);
            let b = random_field(grid, 1.0, &mut rng);
            let lhs = solve_sensitivity(&u, &a, &phi, &params).unwrap().dot(&b);
            let rhs = a.dot(&solve_adjoint(&u, &b, &phi, &params).unwrap());
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1e-30));
        }
        checks.push(CheckResult::upper(
            suite,
            "sensitivity_adjoint_pairing",
            worst,
            1e-10,
            "relative asymmetry of (S a, b) vs (a, S b)".into(),
        ));
    }

    // Dense oracle agreement of the linearized solve on a small grid.
    {
        let small = Grid::new_1d(15);
        let sphi = ObstacleField::constant(small, 1.0);
        let sparams = SolverParams::new(0.1, 50.0, GradMode::Weak);
        let f = NodalField::constant(small, 4.0);
        let (u, _) = solve_state(&f, &sphi, &sparams, None).unwrap();
        let hdir = random_field(small, 1.0, &mut rng);
        let w_iter = solve_sensitivity(&u, &hdir, &sphi, &sparams).unwrap();
        let lin = PenaltyLinearization::new(&u, &sphi, sparams.mode).unwrap();
        let w_dense = dense_solve(
            |v| crate::state::system_apply(&lin, &sparams, v).unwrap(),
            &mass_weighted(&hdir),
        )
        .unwrap();
        let rel = h1_norm(&w_iter.sum_scaled(-1.0, &w_dense)) / h1_norm(&w_dense).max(1e-30);
        checks.push(CheckResult::upper(
            suite,
            "sensitivity_dense_oracle_match",
            rel,
            10.0 * sparams.tol_lin,
            "iterative vs dense-factorization sensitivity solve, n = 15".into(),
        ));
    }
}

// ---------------------------------------------------------------------------
// control suite
// ---------------------------------------------------------------------------

fn control_suite(seed: u64, checks: &mut Vec<CheckResult>) {
    let suite = "control";
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x400));
    let grid = Grid::new_1d(31);
    let phi = ObstacleField::constant(grid, 1.0);
    let mut sparams = SolverParams::new(0.05, 100.0, GradMode::Incremental { mu: grid.h() });
    sparams.tol_res = 1e-12;
    sparams.tol_lin = 1e-13;
    sparams.max_iter = 400;

    // Criterion 9: central finite differences match the adjoint gradient.
    {
        let u_d = random_smooth_field(grid, 0.2, &mut rng);
        let cparams = ControlParams::new(1e-4, u_d);
        let mut worst = 0.0_f64;
        let mut points = 0;
        while points < 10 {
            let Some((f, _)) = kink_avoiding_source(grid, &phi, &sparams, 1e-3, &mut rng) else {
                break;
            };
            let e = random_smooth_field(grid, 1.0, &mut rng);
            let grad = crate::control::reduced_gradient(&f, &phi, &cparams, &sparams).unwrap();
            let pairing = grad.l2_inner(&e);
            let fd = fd_directional(
                |ft| crate::control::objective(ft, &phi, &cparams, &sparams),
                &f,
                &e,
                1e-5,
            )
            .unwrap();
            worst = worst.max((fd - pairing).abs() / pairing.abs().max(1e-12));
            points += 1;
        }
        checks.push(CheckResult::upper(
            suite,
            "reduced_gradient_finite_difference",
            worst,
            1e-3,
            format!("relative FD error of the reduced gradient at {points} kink-avoiding points"),
        ));
    }

    // Criterion 10: gamma = 0 reduces to a linear-quadratic problem solved
    // exactly by dense normal equations.
    {
        let small = Grid::new_1d(7);
        let sphi = ObstacleField::constant(small, 10.0);
        let mut lq_params = SolverParams::new(1.0, 0.0, GradMode::Weak);
        lq_params.tol_res = 1e-12;
        lq_params.tol_lin = 1e-14;
        let u_d = NodalField::from_fn(small, |x| 0.3 * (std::f64::consts::PI * x[0]).sin());
        let lambda = 1e-2;
        let mut cparams = ControlParams::new(lambda, u_d.clone());
        cparams.tol_grad = 5e-12;
        cparams.max_outer = 4000;
        let (f_opt, _) =
            optimize(&NodalField::zeros(small), &sphi, &cparams, &lq_params).unwrap();

        // Dense oracle: u = A f with A = (eps L)^{-1} h^d; minimize
        // 1/2 h^d |A f - u_d|^2 + lambda h^d |f|^2, i.e.
        // (A'A + 2 lambda I) f = A' u_d.
        let n = small.num_nodes();
        let w = small.cell_volume();
        let mut a_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut basis = NodalField::zeros(small);
        for j in 0..n {
            basis.values_mut()[j] = 1.0;
            let col = dense_solve(|v| stiffness_apply(lq_params.eps, v), &basis.scaled(w)).unwrap();
            a_cols.push(col.values().to_vec());
            basis.values_mut()[j] = 0.0;
        }
        let mut normal = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a_cols[i][k] * a_cols[j][k];
                }
                normal[(i, j)] = acc + if i == j { 2.0 * lambda } else { 0.0 };
            }
            rhs[i] = crate::linalg::dot(&a_cols[i], u_d.values());
        }
        let f_star = normal.cholesky().unwrap().solve(&rhs);
        let f_star = NodalField::from_values(small, f_star.data.into()).unwrap();
        let rel =
            f_opt.sum_scaled(-1.0, &f_star).l2_norm() / f_star.l2_norm().max(1e-30);
        checks.push(CheckResult::upper(
            suite,
            "lq_limit_matches_normal_equations",
            rel,
            1e-6,
            "gamma = 0 optimizer vs dense normal-equations solution, n = 7".into(),
        ));
    }

    // Criterion 11: tracking benchmark decreases the objective to at most
    // 20% of its initial value, monotonically.
    {
        let mut track_params = SolverParams::new(0.05, 100.0, GradMode::Incremental { mu: grid.h() });
        track_params.tol_res = 1e-11;
        track_params.max_iter = 400;
        // Target: gamma-limit pile of a centered source.
        let f_src = NodalField::from_fn(grid, |x| 8.0 * (-50.0 * (x[0] - 0.5).powi(2)).exp());
        let (u_d, _) =
            path_follow(&f_src, &phi, &track_params, &Schedule::default_path()).unwrap();
        let mut cparams = ControlParams::new(1e-6, u_d);
        cparams.max_outer = 40;
        cparams.tol_grad = 1e-10;
        let (_, trace) = optimize(&NodalField::zeros(grid), &phi, &cparams, &track_params).unwrap();
        let objectives: Vec<f64> = trace.points.iter().map(|p| p.objective).collect();
        let monotone_breach = objectives
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0_f64, f64::max);
        checks.push(CheckResult::upper(
            suite,
            "tracking_objective_monotone",
            monotone_breach.max(0.0),
            0.0,
            "max increase between consecutive accepted objectives".into(),
        ));
        let reduction = objectives.last().unwrap() / objectives.first().unwrap();
        checks.push(CheckResult::upper(
            suite,
            "tracking_objective_reduction",
            reduction,
            0.2,
            format!(
                "j(f*)/j(0) after {} outer iterations of the tracking benchmark",
                objectives.len() - 1
            ),
        ));
    }

    // Regularization sweep: stronger lambda shrinks the recovered source.
    {
        let u_d = {
            let f_src = NodalField::from_fn(grid, |x| 6.0 * (std::f64::consts::PI * x[0]).sin());
            let (u, _) = solve_state(&f_src, &phi, &sparams, None).unwrap();
            u
        };
        let mut norms = Vec::new();
        for lambda in [1e-6, 1e-4, 1e-2] {
            let mut cparams = ControlParams::new(lambda, u_d.clone());
            cparams.max_outer = 25;
            cparams.tol_grad = 1e-10;
            let (f_opt, _) =
                optimize(&NodalField::zeros(grid), &phi, &cparams, &sparams).unwrap();
            norms.push(f_opt.l2_norm());
        }
        let breach = norms
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0_f64, f64::max)
            .max(0.0);
        checks.push(CheckResult::upper(
            suite,
            "lambda_sweep_source_norm_nonincreasing",
            breach,
            1e-9,
            format!("|f*|_L2 for lambda in {{1e-6, 1e-4, 1e-2}}: {norms:?}"),
        ));
    }
}

// ---------------------------------------------------------------------------
// oracle suite
// ---------------------------------------------------------------------------

fn oracle_suite(seed: u64, checks: &mut Vec<CheckResult>) {
    let suite = "oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x500));

    // Criterion 7: the penalty path and the ADMM solution of the original
    // variational inequality agree on both frozen benchmarks.
    for (bench, bname) in [(benchmark_1d(), "1d"), (benchmark_2d(), "2d")] {
        let admm = vi_solve_admm(&bench.f, &bench.phi, bench.eps, &AdmmParams::default());
        let (u_admm, report) = match admm {
            Ok(x) => x,
            Err(e) => {
                checks.push(CheckResult::upper(
                    suite,
                    &format!("admm_feasibility_{bname}"),
                    f64::INFINITY,
                    1e-6,
                    format!("ADMM failed: {e}"),
                ));
                continue;
            }
        };
        checks.push(CheckResult::upper(
            suite,
            &format!("admm_feasibility_{bname}"),
            feasibility_violation(&u_admm, &bench.phi),
            1e-6,
            format!(
                "ADMM self-check after {} iterations (primal {:.2e})",
                report.iterations, report.primal_residual_inf
            ),
        ));
        for (mode, mname) in bench.modes() {
            // ADMM enforces |D_h u| <= phi, the gamma-limit of the weak
            // mode. The D_mu path tends to the D_mu-constrained problem
            // instead, a genuinely different limit at distance O(mu); its
            // gap is recorded, not asserted.
            let recorded = matches!(mode, GradMode::Incremental { .. });
            match run_benchmark_path(&bench, mode) {
                Ok(outcome) => {
                    let rel = outcome.u.sum_scaled(-1.0, &u_admm).l2_norm()
                        / u_admm.l2_norm().max(1e-8);
                    let check = CheckResult::upper(
                        suite,
                        &format!("path_matches_admm_{bname}_{mname}"),
                        rel,
                        1e-2,
                        "relative L2 distance of the gamma = 1e4 path solution to ADMM".into(),
                    );
                    checks.push(if recorded { check.recorded() } else { check });
                }
                Err(e) => checks.push(CheckResult::upper(
                    suite,
                    &format!("path_matches_admm_{bname}_{mname}"),
                    f64::INFINITY,
                    1e-2,
                    format!("path run failed: {e}"),
                )),
            }
        }
    }

    // Dense factorization agrees with the iterative Newton step.
    {
        let grid = Grid::new_1d(15);
        let phi = ObstacleField::constant(grid, 1.0);
        let mut params = SolverParams::new(0.1, 100.0, GradMode::Weak);
        params.tol_lin = 1e-11;
        let f = NodalField::constant(grid, 4.0);
        let u = random_field(grid, 1.5, &mut rng);
        let v_iter = newton_step(&u, &f, &phi, &params).unwrap();
        let lin = PenaltyLinearization::new(&u, &phi, params.mode).unwrap();
        let e = crate::state::residual(&u, &f, &phi, &params).unwrap();
        let v_dense = dense_solve(
            |x| crate::state::system_apply(&lin, &params, x).unwrap(),
            &e.scaled(-1.0),
        )
        .unwrap();
        let rel = h1_norm(&v_iter.sum_scaled(-1.0, &v_dense)) / h1_norm(&v_dense).max(1e-30);
        checks.push(CheckResult::upper(
            suite,
            "dense_matches_iterative_newton_step",
            rel,
            10.0 * params.tol_lin,
            "Newton step by conjugate gradients vs dense factorization, n = 15".into(),
        ));
    }

    // Remainder probe sanity: identically zero for a linear operator.
    {
        let ratios = newton_ratio_probe(
            |x| x.iter().map(|v| 2.0 * v - 1.0).collect(),
            |_, h| h.iter().map(|v| 2.0 * v).collect(),
            &[0.3, -0.7, 1.1],
            &[1.0, -1.0, 0.5],
            &[1e-1, 1e-3],
            |r| r.iter().map(|v| v * v).sum::<f64>().sqrt(),
            1.0,
        );
        let worst = ratios.iter().map(|(_, r)| *r).fold(0.0_f64, f64::max);
        checks.push(CheckResult::upper(
            suite,
            "probe_vanishes_for_linear_operator",
            worst,
            1e-11,
            "remainder quotients of an affine map".into(),
        ));
    }
}
