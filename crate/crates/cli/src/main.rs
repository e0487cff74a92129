//! Command-line driver: problem definition from strict config files,
//! state solves with continuation, source-control optimization, the
//! verification suite, and benchmark generation.
//!
//! Exit codes: 0 ok, 1 check failure, 2 usage/config error, 3 solver
//! failure (a report is still written).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{Config, ConfigError};
use sandpile_core::state::PathError;
use sandpile_core::{
    center_values, feasibility_violation, gradient, optimize, path_follow, read_field,
    solve_state, write_field, ControlParams, Damping, Descent, GradMode, Grid, NodalField,
    ObstacleField, RunReport, Schedule, SolverParams, Suite,
};

const FORMAT_VERSION: &str = sandpile_core::verify::FORMAT_VERSION;

#[derive(Parser)]
#[command(name = "sandpile", version, about = "Gradient-constrained sandpile solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Problem configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; the numerical core is deterministic and currently
    /// single-threaded, values > 1 are accepted and recorded.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Random seed recorded in outputs (solves themselves draw no
    /// randomness).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the state equation, optionally along a gamma continuation.
    Solve(CommonArgs),
    /// Minimize the tracking objective over the source term.
    Optimize(CommonArgs),
    /// Run property suites and write a verdict document.
    Verify {
        /// all | penalty | state | sensitivity | control | oracle
        /// (defaults to the config's verify.suite, else all)
        suite: Option<String>,
        /// Optional config with a [verify] section (suite, seed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Overrides the config seed when given.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the frozen benchmark configs and their field files.
    MakeProblem {
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors carrying their process exit code.
enum CliError {
    Config(String),
    Solver(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Solver(m) => m,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Solve(args) => cmd_solve(&args),
        Cmd::Optimize(args) => cmd_optimize(&args),
        Cmd::Verify {
            suite,
            config,
            out,
            threads,
            seed,
        } => return cmd_verify(suite.as_deref(), config.as_deref(), &out, threads, seed),
        Cmd::MakeProblem { out } => cmd_make_problem(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

// ---------------------------------------------------------------------------
// config resolution
// ---------------------------------------------------------------------------

struct Problem {
    grid: Grid,
    f: NodalField,
    phi: ObstacleField,
}

fn load_config(path: &Path) -> Result<Config, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config '{}': {e}", path.display())))?;
    Config::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn field_input(
    cfg: &Config,
    base: &Path,
    grid: Grid,
    section: &str,
    key: &str,
) -> Result<Option<NodalField>, CliError> {
    // Either a constant value under `key` or a field file under `key_file`.
    let file_key = format!("{key}_file");
    let constant = cfg.get_f64(section, key)?;
    let file = cfg.get(section, &file_key).map(str::to_string);
    match (constant, file) {
        (Some(_), Some(_)) => Err(config_err(format!(
            "'{section}.{key}' and '{section}.{file_key}' are mutually exclusive"
        ))),
        (Some(c), None) => Ok(Some(NodalField::constant(grid, c))),
        (None, Some(p)) => {
            let path = base.parent().unwrap_or(Path::new(".")).join(p);
            let u = read_field(&path)
                .map_err(|e| config_err(format!("'{}': {e}", path.display())))?;
            if u.grid() != grid {
                return Err(config_err(format!(
                    "'{}': field grid does not match problem grid",
                    path.display()
                )));
            }
            Ok(Some(u))
        }
        (None, None) => Ok(None),
    }
}

fn resolve_problem(cfg: &Config, path: &Path) -> Result<(Problem, f64), CliError> {
    let dim = cfg.require_usize("problem", "dim")?;
    let n = cfg.require_usize("problem", "n")?;
    let grid = Grid::new(dim, n).map_err(|e| config_err(format!("'problem': {e}")))?;
    let eps = cfg.require_f64("problem", "eps")?;
    if eps <= 0.0 {
        return Err(config_err("'problem.eps' must be positive"));
    }
    let f = field_input(cfg, path, grid, "problem", "f")?
        .ok_or_else(|| config_err("missing 'problem.f' or 'problem.f_file'"))?;
    // The obstacle is cell-based and uniform here: either a constant bound
    // or an angle of repose (phi = tan(alpha)).
    let phi = match (
        cfg.get_f64("problem", "phi")?,
        cfg.get_f64("problem", "phi_angle")?,
    ) {
        (Some(_), Some(_)) => {
            return Err(config_err(
                "'problem.phi' and 'problem.phi_angle' are mutually exclusive",
            ))
        }
        (Some(c), None) => {
            if c <= 0.0 {
                return Err(config_err("'problem.phi' must be positive"));
            }
            ObstacleField::constant(grid, c)
        }
        (None, Some(alpha)) => {
            if !(alpha > 0.0 && alpha < std::f64::consts::FRAC_PI_2) {
                return Err(config_err(
                    "'problem.phi_angle' must lie in (0, pi/2) radians",
                ));
            }
            ObstacleField::from_repose_angle(grid, alpha)
        }
        (None, None) => return Err(config_err("missing 'problem.phi' or 'problem.phi_angle'")),
    };
    Ok((Problem { grid, f, phi }, eps))
}

fn resolve_solver(cfg: &Config, eps: f64, grid: Grid) -> Result<SolverParams, CliError> {
    let mode = match cfg.get("solver", "mode").unwrap_or("grad") {
        "grad" => GradMode::Weak,
        "dmu" => GradMode::Incremental {
            mu: cfg.get_f64("solver", "mu")?.unwrap_or(grid.h()),
        },
        other => {
            return Err(config_err(format!(
                "'solver.mode': expected grad or dmu, got '{other}'"
            )))
        }
    };
    let gamma = cfg.get_f64("solver", "gamma")?.unwrap_or(1e4);
    let mut params = SolverParams::new(eps, gamma, mode);
    if let Some(v) = cfg.get_f64("solver", "tol_res")? {
        params.tol_res = v;
    }
    if let Some(v) = cfg.get_usize("solver", "max_iter")? {
        params.max_iter = v;
    }
    if let Some(v) = cfg.get_f64("solver", "tol_lin")? {
        params.tol_lin = v;
    }
    match cfg.get("solver", "damping") {
        None | Some("armijo") => {}
        Some("off") => params.damping = Damping::Off,
        Some(other) => {
            return Err(config_err(format!(
                "'solver.damping': expected armijo or off, got '{other}'"
            )))
        }
    }
    Ok(params)
}

fn resolve_schedule(cfg: &Config) -> Result<Option<Schedule>, CliError> {
    if !cfg.has_section("schedule") {
        return Ok(None);
    }
    let gamma_list = cfg
        .get_f64_list("schedule", "gamma_list")?
        .ok_or_else(|| config_err("missing 'schedule.gamma_list'"))?;
    let mu_list = cfg.get_f64_list("schedule", "mu_list")?;
    Ok(Some(Schedule {
        gamma_list,
        mu_list,
    }))
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| config_err(format!("cannot create '{}': {e}", dir.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n")
        .map_err(|e| config_err(format!("cannot write '{}': {e}", path.display())))
}

fn echo_header(cfg: &Config, args: &CommonArgs) -> serde_json::Value {
    json!({
        "format_version": FORMAT_VERSION,
        "seed": args.seed,
        "threads": args.threads,
        "config": cfg.echo(),
    })
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn cmd_solve(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let (problem, eps) = resolve_problem(&cfg, &args.config)?;
    let params = resolve_solver(&cfg, eps, problem.grid)?;
    let schedule = resolve_schedule(&cfg)?;
    let csv = cfg.get_bool("output", "csv")?.unwrap_or(false);
    cfg.finish()
        .map_err(|e| config_err(format!("{}: {e}", args.config.display())))?;
    out_dir(&args.out)?;

    let outcome: Result<(NodalField, Vec<RunReport>), (String, Option<RunReport>)> =
        match &schedule {
            Some(schedule) => path_follow(&problem.f, &problem.phi, &params, schedule)
                .map_err(|e| match &e {
                    PathError::Stage { source, .. } => {
                        (e.to_string(), source.report().cloned())
                    }
                    _ => (e.to_string(), None),
                }),
            None => solve_state(&problem.f, &problem.phi, &params, None)
                .map(|(u, r)| (u, vec![r]))
                .map_err(|e| (e.to_string(), e.report().cloned())),
        };

    match outcome {
        Ok((u, reports)) => {
            write_field(&args.out.join("u.field"), &u)
                .map_err(|e| config_err(e.to_string()))?;
            let mut doc = echo_header(&cfg, args);
            doc["reports"] = serde_json::to_value(&reports).expect("report serializes");
            doc["final_feasibility"] =
                json!(feasibility_violation(&u, &problem.phi));
            write_json(&args.out.join("report.json"), &doc)?;
            if csv {
                write_plot_csv(&args.out.join("plot.csv"), &u, &problem.phi)?;
            }
            Ok(())
        }
        Err((msg, report)) => {
            let mut doc = echo_header(&cfg, args);
            doc["error"] = json!(msg);
            if let Some(r) = report {
                doc["reports"] = serde_json::to_value(vec![r]).expect("report serializes");
            }
            write_json(&args.out.join("report.json"), &doc)?;
            Err(CliError::Solver(msg))
        }
    }
}

/// Per-cell plot rows: cell-center coordinates, interpolated u, |D u|, phi.
fn write_plot_csv(path: &Path, u: &NodalField, phi: &ObstacleField) -> Result<(), CliError> {
    let grid = u.grid();
    let h = grid.h();
    let n = grid.n();
    let centers = center_values(u);
    let du = gradient(u);
    let mut text = String::new();
    if grid.dim() == 1 {
        text.push_str("x,u,grad_norm,phi\n");
        for c in 0..grid.num_cells() {
            let x = (c as f64 + 0.5) * h;
            let g = du.vectors()[c][0].abs();
            text.push_str(&format!("{x:.17e},{:.17e},{g:.17e},{:.17e}\n", centers[c], phi.phi()[c]));
        }
    } else {
        text.push_str("x,y,u,grad_norm,phi\n");
        for cy in 0..=n {
            for cx in 0..=n {
                let c = cy * (n + 1) + cx;
                let x = (cx as f64 + 0.5) * h;
                let y = (cy as f64 + 0.5) * h;
                let v = du.vectors()[c];
                let g = v[0].hypot(v[1]);
                text.push_str(&format!(
                    "{x:.17e},{y:.17e},{:.17e},{g:.17e},{:.17e}\n",
                    centers[c], phi.phi()[c]
                ));
            }
        }
    }
    fs::write(path, text).map_err(|e| config_err(format!("cannot write '{}': {e}", path.display())))
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

fn cmd_optimize(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let (problem, eps) = resolve_problem(&cfg, &args.config)?;
    let sparams = resolve_solver(&cfg, eps, problem.grid)?;
    if !cfg.has_section("control") {
        return Err(config_err("optimize requires a [control] section"));
    }
    let lambda = cfg.require_f64("control", "lambda")?;
    let u_d = field_input(&cfg, &args.config, problem.grid, "control", "u_d")?
        .ok_or_else(|| config_err("missing 'control.u_d' or 'control.u_d_file'"))?;
    let mut cparams = ControlParams::new(lambda, u_d);
    if let Some(v) = cfg.get_usize("control", "max_outer")? {
        cparams.max_outer = v;
    }
    if let Some(v) = cfg.get_f64("control", "tol_grad")? {
        cparams.tol_grad = v;
    }
    if let Some(step) = cfg.get_f64("control", "step")? {
        cparams.descent = Descent::FixedStep { step };
    }
    cfg.finish()
        .map_err(|e| config_err(format!("{}: {e}", args.config.display())))?;
    out_dir(&args.out)?;

    // The initial source is the problem source (zero-source configs start
    // the descent from f = 0).
    match optimize(&problem.f, &problem.phi, &cparams, &sparams) {
        Ok((f_opt, trace)) => {
            write_field(&args.out.join("f_opt.field"), &f_opt)
                .map_err(|e| config_err(e.to_string()))?;
            let (u_opt, _) = solve_state(&f_opt, &problem.phi, &sparams, None)
                .map_err(|e| CliError::Solver(e.to_string()))?;
            write_field(&args.out.join("u_opt.field"), &u_opt)
                .map_err(|e| config_err(e.to_string()))?;
            let mut doc = echo_header(&cfg, args);
            doc["trace"] = serde_json::to_value(&trace).expect("trace serializes");
            write_json(&args.out.join("trace.json"), &doc)?;
            Ok(())
        }
        Err(e) => {
            let mut doc = echo_header(&cfg, args);
            doc["error"] = json!(e.to_string());
            write_json(&args.out.join("trace.json"), &doc)?;
            Err(CliError::Solver(e.to_string()))
        }
    }
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(
    suite: Option<&str>,
    config: Option<&Path>,
    out: &Path,
    threads: usize,
    seed: Option<u64>,
) -> ExitCode {
    // Resolution order: command line, then the config's [verify] section,
    // then defaults (suite all, seed 0).
    let mut cfg_suite: Option<String> = None;
    let mut cfg_seed: Option<u64> = None;
    let mut cfg_echo: Option<serde_json::Value> = None;
    if let Some(path) = config {
        let cfg = match load_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}", e.message());
                return ExitCode::from(2);
            }
        };
        cfg_suite = cfg.get("verify", "suite").map(str::to_string);
        match cfg.get_u64("verify", "seed").and_then(|s| {
            cfg.finish()?;
            Ok(s)
        }) {
            Ok(s) => cfg_seed = s,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        cfg_echo = Some(cfg.echo());
    }
    let suite_name = suite
        .map(str::to_string)
        .or(cfg_suite)
        .unwrap_or_else(|| "all".to_string());
    let suite: Suite = match suite_name.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let seed = seed.or(cfg_seed).unwrap_or(0);
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("error: cannot create '{}': {e}", out.display());
        return ExitCode::from(2);
    }
    let verdict = sandpile_core::run_suite(suite, seed);
    for c in &verdict.checks {
        let status = if c.recorded_only {
            "recorded"
        } else if c.passed {
            "pass"
        } else {
            "FAIL"
        };
        println!(
            "{status:8} {:40} {:>13.6e} {} {:.3e}",
            c.name, c.measured, c.comparison, c.threshold
        );
    }
    let mut doc = serde_json::to_value(&verdict).expect("verdict serializes");
    doc["threads"] = json!(threads);
    if let Some(echo) = cfg_echo {
        doc["config"] = echo;
    }
    let path = out.join("verdict.json");
    if let Err(e) = write_json(&path, &doc) {
        eprintln!("error: {}", e.message());
        return ExitCode::from(2);
    }
    println!(
        "verdict: {} ({} checks, wall {:.1}s) -> {}",
        if verdict.all_passed { "pass" } else { "FAIL" },
        verdict.checks.len(),
        verdict.wall_time_s,
        path.display()
    );
    if verdict.all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

// ---------------------------------------------------------------------------
// make-problem
// ---------------------------------------------------------------------------

fn cmd_make_problem(out: &Path) -> Result<(), CliError> {
    out_dir(out)?;
    let write = |name: &str, text: &str| -> Result<(), CliError> {
        fs::write(out.join(name), text)
            .map_err(|e| config_err(format!("cannot write '{name}': {e}")))
    };

    write(
        "bench-1d.cfg",
        "# frozen 1d benchmark\n\
         [problem]\n dim = 1\n n = 63\n eps = 0.05\n phi = 1.0\n f = 5.0\n\n\
         [solver]\n mode = grad\n\n\
         [schedule]\n gamma_list = 1, 10, 100, 1e3, 1e4\n\n\
         [output]\n csv = true\n",
    )?;
    write(
        "bench-2d.cfg",
        "# frozen 2d benchmark\n\
         [problem]\n dim = 2\n n = 31\n eps = 0.05\n phi = 1.0\n f = 8.0\n\n\
         [solver]\n mode = grad\n\n\
         [schedule]\n gamma_list = 1, 10, 100, 1e3, 1e4\n\n\
         [output]\n csv = true\n",
    )?;

    // Source variant f = g + eps * Lap(u0) with a paraboloid u0; the
    // discrete Laplacian is recovered from the stiffness action.
    {
        let grid = Grid::new_1d(63);
        let g_src = NodalField::constant(grid, 5.0);
        let u0 = NodalField::from_fn(grid, |x| x[0] * (1.0 - x[0]));
        let eps = 0.05;
        let lap = sandpile_core::stiffness_apply(eps, &u0).scaled(-1.0 / grid.cell_volume());
        let f_var = g_src.sum_scaled(1.0, &lap);
        write_field(&out.join("bench-1d-variant-f.field"), &f_var)
            .map_err(|e| config_err(e.to_string()))?;
        write(
            "bench-1d-variant.cfg",
            "# 1d benchmark, source written as f = g + eps*Lap(u0), u0 a paraboloid\n\
             [problem]\n dim = 1\n n = 63\n eps = 0.05\n phi = 1.0\n f_file = bench-1d-variant-f.field\n\n\
             [solver]\n mode = grad\n\n\
             [schedule]\n gamma_list = 1, 10, 100, 1e3, 1e4\n",
        )?;
    }

    // Tracking benchmark: target is the gamma-limit pile of a centered
    // source; the optimizer starts from f = 0.
    {
        let grid = Grid::new_1d(31);
        let phi = ObstacleField::constant(grid, 1.0);
        let f_src = NodalField::from_fn(grid, |x| 8.0 * (-50.0 * (x[0] - 0.5).powi(2)).exp());
        let mut params = SolverParams::new(
            0.05,
            100.0,
            GradMode::Incremental { mu: grid.h() },
        );
        params.max_iter = 400;
        let (u_d, _) = path_follow(&f_src, &phi, &params, &Schedule::default_path())
            .map_err(|e| CliError::Solver(e.to_string()))?;
        write_field(&out.join("tracking-target.field"), &u_d)
            .map_err(|e| config_err(e.to_string()))?;
        write(
            "tracking.cfg",
            "# source recovery toward the pile of a centered bump\n\
             [problem]\n dim = 1\n n = 31\n eps = 0.05\n phi = 1.0\n f = 0.0\n\n\
             [solver]\n mode = dmu\n gamma = 100\n tol_res = 1e-11\n max_iter = 400\n\n\
             [control]\n lambda = 1e-6\n u_d_file = tracking-target.field\n max_outer = 40\n tol_grad = 1e-10\n",
        )?;
    }
    println!("wrote benchmark configs to {}", out.display());
    Ok(())
}
