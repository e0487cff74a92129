//! End-to-end acceptance gate. Runs the full verification suite once and
//! asserts each criterion from the named checks, printing one line per
//! criterion (visible with `cargo test -- --nocapture` and on failure).

use std::sync::OnceLock;

use sandpile_core::verify::{run_suite, CheckResult, Suite, Verdict};

fn verdict() -> &'static Verdict {
    static VERDICT: OnceLock<Verdict> = OnceLock::new();
    VERDICT.get_or_init(|| run_suite(Suite::All, 0))
}

fn checks_matching(prefixes: &[&str]) -> Vec<&'static CheckResult> {
    let out: Vec<_> = verdict()
        .checks
        .iter()
        .filter(|c| !c.recorded_only && prefixes.iter().any(|p| c.name.starts_with(p)))
        .collect();
    assert!(!out.is_empty(), "no checks match {prefixes:?}");
    out
}

fn assert_criterion(label: &str, prefixes: &[&str]) {
    let checks = checks_matching(prefixes);
    let passed = checks.iter().all(|c| c.passed);
    println!(
        "criterion {label}: {}",
        if passed { "PASS" } else { "FAIL" }
    );
    for c in &checks {
        println!(
            "    {} {} = {:.6e} (required {} {:.3e})",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.measured,
            c.comparison,
            c.threshold
        );
    }
    assert!(passed, "criterion {label} failed");
}

#[test]
fn criterion_01_penalty_vanishes_on_feasible_set() {
    assert_criterion(
        "01 penalty vanishes on the feasible set",
        &["penalty_vanishes_on_feasible_set", "penalty_feasible_runtime_s"],
    );
}

#[test]
fn criterion_02_penalty_derivative_positive_semidefinite() {
    assert_criterion(
        "02 penalty Newton derivative is positive semidefinite",
        &["penalty_deriv_positive_semidefinite"],
    );
}

#[test]
fn criterion_03_pointwise_newton_remainder_decays() {
    assert_criterion(
        "03 pointwise penalty remainder quotient decays",
        &["penalty_pointwise_newton_ratio_decay"],
    );
}

#[test]
fn criterion_04_newton_converges_on_benchmarks() {
    assert_criterion(
        "04 Newton converges on the frozen benchmarks",
        &[
            "newton_final_residual_",
            "newton_iterations_",
            "newton_contraction_tail_decreasing_",
            "path_runtime_s_",
        ],
    );
}

#[test]
fn criterion_05_newton_step_energy_bound() {
    assert_criterion(
        "05 Newton steps obey the energy bound",
        &["newton_step_energy_bound_"],
    );
}

#[test]
fn criterion_06_path_feasibility_decreases() {
    assert_criterion(
        "06 feasibility violation decreases along the path",
        &["path_feasibility_nonincreasing_", "path_feasibility_final_"],
    );
}

#[test]
fn criterion_07_path_matches_admm_oracle() {
    assert_criterion(
        "07 path solutions match the ADMM reference",
        &["path_matches_admm_", "admm_feasibility_"],
    );
}

#[test]
fn criterion_08_solution_map_remainder_decays() {
    assert_criterion(
        "08 control-to-state remainder quotient decays",
        &["solution_map_newton_ratio_decay"],
    );
}

#[test]
fn criterion_09_reduced_gradient_matches_finite_differences() {
    assert_criterion(
        "09 reduced gradient matches finite differences",
        &["reduced_gradient_finite_difference"],
    );
}

#[test]
fn criterion_10_lq_limit_matches_dense_oracle() {
    assert_criterion(
        "10 gamma = 0 optimizer matches the normal equations",
        &["lq_limit_matches_normal_equations"],
    );
}

#[test]
fn criterion_11_tracking_benchmark_descends() {
    assert_criterion(
        "11 tracking benchmark descends to 20% of j(0)",
        &["tracking_objective_monotone", "tracking_objective_reduction"],
    );
}

#[test]
fn criterion_12_runs_are_deterministic() {
    assert_criterion(
        "12 repeated runs are bit-identical",
        &["determinism_bitwise_repeat"],
    );
}

#[test]
fn supplementary_checks_pass() {
    assert_criterion(
        "supplementary invariants",
        &[
            "penalty_operator_monotone",
            "penalty_energy_gradient_consistency",
            "newton_system_dominates_stiffness",
            "state_unique_across_initializations",
            "control_to_state_lipschitz",
            "sensitivity_energy_bound",
            "sensitivity_adjoint_pairing",
            "sensitivity_dense_oracle_match",
            "lambda_sweep_source_norm_nonincreasing",
            "dense_matches_iterative_newton_step",
            "probe_vanishes_for_linear_operator",
        ],
    );
}
