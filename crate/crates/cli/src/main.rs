use anyhow::{anyhow, Context};
use circulant_control::control::{riccati_certificate, CertificateReport, ControlSolution};
use circulant_control::experiments::{run_case, ReproduceCase};
use circulant_control::game::{stability_report, GameSpec};
use circulant_control::io::{
    atomic_write, certificate_csv, control_solution_csv, format_f64, to_json, trajectory_csv, write_case_artifacts,
    write_csv_with_sidecar,
};
use circulant_control::nonlinear::{build_nonlinear, check_start, solve_nonlinear};
use circulant_control::ode::{SolverConfig, DEFAULT_SWEEP_BOUND};
use circulant_control::quasilinear::{
    build_quasilinear, cholesky_sufficiency, closed_form_limit, gamma_ode_fixed_point, gamma_slope_at_zero,
    limit_kappa_heuristic, quasilinear_riccati, solve_gamma_ode, solve_limit_ode, solve_quasilinear, GammaOdeProblem,
    ScalarTrajectory,
};
use circulant_control::replicator::{integrate, GammaProfile};
use circulant_control::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 2;
const EXIT_INTEGRATION: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;

/// Control of complete odd circulant (generalized rock-paper-scissors) games.
#[derive(Parser, Debug)]
#[command(name = "circctl", version)]
struct Cli {
    /// Relative integration tolerance; the absolute tolerance is 1% of it.
    #[arg(long, global = true, env = "CIRCCTL_TOL")]
    tol: Option<f64>,
    /// Samples on the output grid.
    #[arg(long, global = true)]
    points: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the payoff matrices, spectrum of the linearization and stability verdict.
    Game {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: Option<f64>,
        /// Accept gamma <= -1.
        #[arg(long)]
        allow_any_gamma: bool,
    },
    /// Integrate the replicator dynamics at a constant control and print a CSV.
    Simulate {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[command(flatten)]
        start: StartArgs,
        #[arg(long, default_value_t = 40.0)]
        tf: f64,
        /// Write the CSV here (with a JSON sidecar) instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve an optimal control problem.
    Solve {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value_t = 0.2)]
        r: f64,
        #[arg(long, default_value_t = 6.0)]
        tf: f64,
        #[command(flatten)]
        start: StartArgs,
        #[arg(long, value_enum)]
        certify: Option<Certify>,
        /// How the scalar equation obtains C in gamma-ode mode.
        #[arg(long, value_enum, default_value_t = Closure::StateSolve)]
        closure: Closure,
        /// Directory for solution.csv, its sidecar and summary.json; without it the CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every solver on a named example and write all artifacts.
    Reproduce {
        /// n3, n5, n5-renormalized, n7, n9, riccati or all.
        case: String,
        #[arg(long, default_value = "reproduce")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct GameArgs {
    /// Number of strategies (odd, at least 3).
    #[arg(long = "N", conflicts_with = "n")]
    size: Option<usize>,
    /// Half the number of strategies minus one half: N = 2n + 1.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct StartArgs {
    /// Comma-separated shares, "center", "random", or a preset name (n3, n5, n5-renormalized, n7, n9, riccati).
    #[arg(long)]
    u0: Option<String>,
    /// Rescale an off-simplex u0 to sum 1.
    #[arg(long)]
    renormalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Nonlinear,
    Quasilinear,
    GammaOde,
    Limit,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Certify {
    Cholesky,
    Riccati,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Closure {
    StateSolve,
    FixedPoint,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::InvalidGame(_) | Error::InvalidInput(_) | Error::Precondition(_) | Error::Domain(_)) => EXIT_USAGE,
            Some(Error::Integration { .. } | Error::SimplexViolation { .. }) => EXIT_INTEGRATION,
            Some(Error::IllConditioned { .. } | Error::BracketNonvanishing { .. }) => EXIT_NONCONVERGENCE,
            _ => 1,
        };
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, error: anyhow!(msg.into()) }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn solver_config(cli: &Cli) -> Result<SolverConfig, Failure> {
    let mut cfg = SolverConfig::default();
    if let Some(tol) = cli.tol {
        cfg.rel_tol = tol;
        cfg.abs_tol = tol * 1e-2;
    }
    if let Some(points) = cli.points {
        cfg.output_points = points;
    }
    cfg.validate().map_err(|e| usage(format!("--tol/--points: {e}")))?;
    Ok(cfg)
}

fn run(cli: Cli) -> CmdResult {
    let cfg = solver_config(&cli)?;
    match cli.command {
        Command::Game { n, gamma, allow_any_gamma } => cmd_game(n, gamma, allow_any_gamma),
        Command::Simulate { game, gamma, start, tf, out } => cmd_simulate(&game, gamma, &start, tf, out.as_deref(), &cfg),
        Command::Solve { mode, game, r, tf, start, certify, closure, out } => {
            cmd_solve(mode, &game, r, tf, &start, certify, closure, out.as_deref(), &cfg)
        }
        Command::Reproduce { case, out } => cmd_reproduce(&case, &out, &cfg),
    }
}

fn game_from(args: &GameArgs, preset: Option<ReproduceCase>) -> Result<GameSpec, Failure> {
    let game = match (args.size, args.n, preset) {
        (Some(size), _, _) => GameSpec::with_strategies(size),
        (None, Some(n), _) => GameSpec::new(n),
        (None, None, Some(case)) => GameSpec::new(case.n()),
        (None, None, None) => return Err(usage("give the game size with --N or --n")),
    };
    game.map_err(|e| usage(format!("--N/--n: {e}")))
}

fn preset_of(start: &StartArgs) -> Option<ReproduceCase> {
    start.u0.as_deref().and_then(|s| s.parse().ok())
}

/// Uniform sample from the open simplex.
fn random_interior(size: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..size).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Resolves `--u0` to shares and the renormalize flag.
fn start_from(start: &StartArgs, game: &GameSpec) -> Result<(Vec<f64>, bool), Failure> {
    let size = game.size();
    let spec = start.u0.as_deref().unwrap_or("center");
    let (u0, renormalize) = match spec {
        "center" => (vec![1.0 / size as f64; size], false),
        "random" => (random_interior(size, start.seed), false),
        other => match other.parse::<ReproduceCase>() {
            Ok(case) => (case.raw_start(), case.renormalize()),
            Err(_) => {
                let parsed = other
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| usage(format!("--u0: {e}")))?;
                (parsed, false)
            }
        },
    };
    if u0.len() != size {
        return Err(usage(format!("--u0 has {} entries but the game has {size} strategies", u0.len())));
    }
    let renormalize = renormalize || start.renormalize;
    check_start(game, &u0, renormalize).map_err(|e| usage(format!("--u0: {e}")))?;
    Ok((u0, renormalize))
}

fn cmd_game(n: usize, gamma: Option<f64>, allow_any_gamma: bool) -> CmdResult {
    let game = GameSpec::new(n).map_err(|e| usage(format!("--n: {e}")))?;
    let g = gamma.unwrap_or(0.0);
    let payoff = match gamma {
        Some(g) if allow_any_gamma => Some(game.payoff_matrix_unchecked(g)),
        Some(g) => Some(game.payoff_matrix(g).map_err(|e| usage(format!("--gamma: {e}")))?),
        None => None,
    };
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    };
    let report = stability_report(&game, g);
    let out = json!({
        "game": game.to_record(),
        "gamma": g,
        "A": payoff.as_ref().map(rows),
        "stability": report,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?);
    Ok(())
}

fn emit_csv(out: Option<&Path>, csv: &[u8], columns: &str, params: &serde_json::Value) -> Result<(), Failure> {
    match out {
        Some(path) => {
            atomic_write(path, csv)?;
            let sidecar = path.with_extension("json");
            let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            atomic_write(&sidecar, &to_json(&json!({ "file": file, "columns": columns, "parameters": params }))?)?;
        }
        None => std::io::stdout().write_all(csv).context("writing to stdout")?,
    }
    Ok(())
}

fn cmd_simulate(
    game_args: &GameArgs,
    gamma: f64,
    start: &StartArgs,
    tf: f64,
    out: Option<&Path>,
    cfg: &SolverConfig,
) -> CmdResult {
    let game = game_from(game_args, preset_of(start))?;
    if !(tf > 0.0) {
        return Err(usage("--tf must be positive"));
    }
    game.payoff_matrix(gamma).map_err(|e| usage(format!("--gamma: {e}")))?;
    let (u0, renormalize) = start_from(start, &game)?;
    let state = check_start(&game, &u0, renormalize)?.state;
    let params = json!({
        "command": "simulate", "N": game.size(), "gamma": gamma, "t_f": tf,
        "u0": state.as_vector().as_slice(), "seed": start.seed, "solver": cfg,
    });
    match integrate(&game, &state, &GammaProfile::constant(gamma), (0.0, tf), cfg) {
        Ok(traj) => emit_csv(out, &trajectory_csv(&traj, false)?, "t, u_1..u_N", &params),
        Err(Error::Integration { t, reason, partial }) => {
            if let Some(partial) = partial {
                let (times, states) = partial.sample(cfg.output_points);
                let header = std::iter::once("t".to_string()).chain((1..=game.size()).map(|i| format!("u_{i}")));
                let mut text = header.collect::<Vec<_>>().join(",") + "\n";
                for (t, u) in times.iter().zip(&states) {
                    let row: Vec<String> = std::iter::once(*t).chain(u.iter().copied()).map(format_f64).collect();
                    text += &(row.join(",") + "\n");
                }
                emit_csv(out, text.as_bytes(), "t, u_1..u_N (partial)", &params)?;
            }
            Err(Failure { code: EXIT_INTEGRATION, error: anyhow!("integration failed at t = {t}: {reason}") })
        }
        Err(e) => Err(e.into()),
    }
}

fn scalar_columns(traj: &ScalarTrajectory, extra: Option<&dyn Fn(f64) -> (f64, f64)>) -> Vec<u8> {
    let mut text = String::from(if extra.is_some() { "t,zeta,zeta_dot,closed_form_zeta,closed_form_zeta_dot\n" } else { "t,gamma,gamma_dot\n" });
    for i in 0..traj.times.len() {
        let mut row = vec![traj.times[i], traj.values[i], traj.rates[i]];
        if let Some(f) = extra {
            let (z, zd) = f(traj.times[i]);
            row.extend([z, zd]);
        }
        text += &(row.into_iter().map(format_f64).collect::<Vec<_>>().join(",") + "\n");
    }
    text.into_bytes()
}

fn certificate_json(report: &CertificateReport) -> serde_json::Value {
    json!({
        "method": report.method,
        "verdict": report.verdict,
        "extremum": report.extremum,
        "blowup_time": report.blowup_time,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    mode: Mode,
    game_args: &GameArgs,
    r: f64,
    tf: f64,
    start: &StartArgs,
    certify: Option<Certify>,
    closure: Closure,
    out: Option<&Path>,
    cfg: &SolverConfig,
) -> CmdResult {
    let game = game_from(game_args, preset_of(start))?;
    if !(r > 0.0) || !(tf > 0.0) {
        return Err(usage("--r and --tf must be positive"));
    }
    let (u0, renormalize) = start_from(start, &game)?;
    match (mode, certify) {
        (Mode::GammaOde | Mode::Limit, Some(_)) => {
            return Err(usage("--certify applies to the nonlinear and quasilinear modes"));
        }
        (Mode::Nonlinear, Some(Certify::Cholesky)) => {
            return Err(usage("the Cholesky test applies to the quasilinear mode; use --certify riccati"));
        }
        _ => {}
    }
    let problem = build_quasilinear(&game, r, tf, &u0, renormalize)?;
    let mut summary = json!({
        "mode": format!("{mode:?}").to_lowercase(),
        "N": game.size(),
        "r": r,
        "t_f": tf,
        "u0": problem.u0.as_slice(),
        "renormalized": problem.renormalized,
        "solver": cfg,
    });
    let converged;
    let (csv, columns): (Vec<u8>, &str) = match mode {
        Mode::Quasilinear | Mode::Nonlinear => {
            let quasi = solve_quasilinear(&problem, cfg)?;
            summary["C"] = json!(quasi.closed_loop.c);
            summary["closed_loop_max_violation"] = json!(quasi.closed_loop.max_violation);
            let sol: ControlSolution = if mode == Mode::Quasilinear {
                if let Some(c) = certify {
                    let report = match c {
                        Certify::Cholesky => cholesky_sufficiency(&problem, &quasi.control)?,
                        Certify::Riccati => quasilinear_riccati(&problem, &quasi.control, cfg, DEFAULT_SWEEP_BOUND)?,
                    };
                    summary["certificate"] = certificate_json(&report);
                    write_certificate(out, &report)?;
                }
                quasi.control
            } else {
                let nl = build_nonlinear(&game, r, tf, &u0, renormalize)?;
                let warm = quasi.control.lambda.as_ref().map(|l| l[0].clone());
                let sol = solve_nonlinear(&nl, cfg, warm)?;
                if certify == Some(Certify::Riccati) {
                    let report = riccati_certificate(&nl.control, &sol, cfg, DEFAULT_SWEEP_BOUND)?;
                    summary["certificate"] = certificate_json(&report);
                    write_certificate(out, &report)?;
                }
                summary["homotopy_stages"] = json!(sol.diagnostics.homotopy_stages);
                sol
            };
            converged = sol.diagnostics.converged;
            summary["gamma_0"] = json!(sol.gamma_at_zero());
            summary["objective"] = json!(sol.objective_value);
            summary["residual"] = json!(sol.diagnostics.residual);
            summary["iterations"] = json!(sol.diagnostics.iterations);
            let columns = if mode == Mode::Nonlinear {
                "t, x_1..x_N (shares), lambda_1..lambda_N, gamma"
            } else {
                "t, x_1..x_N (deviation from the barycenter), lambda_1..lambda_N, gamma"
            };
            (control_solution_csv(&sol)?, columns)
        }
        Mode::GammaOde => {
            let (gp, traj) = match closure {
                Closure::StateSolve => {
                    let quasi = solve_quasilinear(&problem, cfg)?;
                    let gp = GammaOdeProblem::from_quasilinear(&problem, quasi.closed_loop.c)?;
                    let traj = solve_gamma_ode(&gp, cfg)?;
                    (gp, traj)
                }
                Closure::FixedPoint => {
                    let fp = gamma_ode_fixed_point(&problem, cfg)?;
                    summary["fixed_point_iterations"] = json!(fp.iterations);
                    summary["fixed_point_converged"] = json!(fp.converged);
                    if !fp.converged {
                        summary["converged"] = json!(false);
                    }
                    (fp.problem, fp.trajectory)
                }
            };
            converged = traj.converged && summary.get("converged").is_none();
            summary["C"] = json!(gp.c);
            summary["gamma_dot_0"] = json!(gp.gamma_dot_0);
            summary["gamma_0"] = json!(traj.values[0]);
            summary["residual"] = json!(traj.residual);
            (scalar_columns(&traj, None), "t, gamma, gamma_dot")
        }
        Mode::Limit => {
            let slope = gamma_slope_at_zero(&problem);
            let traj = solve_limit_ode(slope, tf, r, cfg)?;
            let kappa = limit_kappa_heuristic(&problem);
            summary["kappa"] = json!(kappa.kappa);
            summary["kappa_degenerate"] = json!(kappa.degenerate);
            summary["gamma_dot_0"] = json!(slope);
            summary["gamma_0"] = json!(traj.values[0]);
            summary["residual"] = json!(traj.residual);
            converged = traj.converged;
            let form = (!kappa.degenerate).then(|| closed_form_limit(kappa.kappa, tf)).transpose()?;
            let overlay = move |t: f64| match &form {
                Some(f) => (f.zeta(t).unwrap_or(f64::NAN), f.zeta_dot(t).unwrap_or(f64::NAN)),
                None => (0.0, 0.0),
            };
            (scalar_columns(&traj, Some(&overlay)), "t, zeta, zeta_dot, closed_form_zeta, closed_form_zeta_dot")
        }
    };
    summary["converged"] = json!(converged);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).context("creating output directory")?;
            write_csv_with_sidecar(dir, "solution", &csv, columns, &summary)?;
            atomic_write(&dir.join("summary.json"), &to_json(&summary)?)?;
        }
        None => {
            std::io::stdout().write_all(&csv).context("writing to stdout")?;
            eprintln!("{}", serde_json::to_string(&summary).map_err(anyhow::Error::from)?);
        }
    }
    if converged {
        Ok(())
    } else {
        Err(Failure { code: EXIT_NONCONVERGENCE, error: anyhow!("shooting did not converge; best iterate written") })
    }
}

fn write_certificate(out: Option<&Path>, report: &CertificateReport) -> Result<(), Failure> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).context("creating output directory")?;
        atomic_write(&dir.join("certificate.csv"), &certificate_csv(report)?)?;
    }
    Ok(())
}

fn cmd_reproduce(case: &str, out: &Path, cfg: &SolverConfig) -> CmdResult {
    let cases: Vec<ReproduceCase> = if case == "all" {
        ReproduceCase::ALL.to_vec()
    } else {
        vec![case.parse().map_err(|e: Error| usage(e.to_string()))?]
    };
    let mut failed = Vec::new();
    for case in cases {
        let outcome = run_case(case, cfg)?;
        let dir = out.join(case.name());
        write_case_artifacts(&outcome, &dir)?;
        let rep = &outcome.report;
        println!(
            "{case}: gamma(0) = {:.6}, gap(gamma-ode) = {:.2e}, cholesky = {:?}, riccati = {} -> {}",
            rep.quasilinear.gamma_0.unwrap_or(f64::NAN),
            rep.gaps.quasilinear_vs_gamma_ode.unwrap_or(f64::NAN),
            rep.certificates.cholesky_verdict,
            rep.certificates.riccati_verdict.map_or("failed".to_string(), |v| format!("{v:?}")),
            dir.display()
        );
        if !rep.all_converged() {
            failed.push(case.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        bail_code(EXIT_NONCONVERGENCE, format!("sub-solves failed for {}; partial artifacts kept", failed.join(", ")))
    }
}

fn bail_code(code: u8, msg: String) -> CmdResult {
    Err(Failure { code, error: anyhow!(msg) })
}
