//! Reproduction cases: each runs the quasi-linear, Euler–Lagrange, nonlinear,
//! scalar and limiting solvers on one initial population and compares them.

use crate::control::{solve_el_with, CertificateReport, ControlSolution, Homotopy, ShootingStrategy, Verdict};
use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::nonlinear::{build_nonlinear, solve_nonlinear, HOMOTOPY_STAGES};
use crate::ode::{SolverConfig, DEFAULT_SWEEP_BOUND};
use crate::quasilinear::{
    build_quasilinear, cholesky_sufficiency, closed_form_limit, gamma_slope_at_zero, limit_kappa_heuristic,
    quasilinear_riccati, solve_gamma_ode, solve_limit_ode, solve_quasilinear, ClosedFormLimit, ClosedLoop,
    GammaOdeProblem, KappaHeuristic, QuasiLinearProblem, QuasiLinearSolution, ScalarTrajectory,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_R: f64 = 0.2;
pub const DEFAULT_HORIZON: f64 = 6.0;
pub const RICCATI_HORIZON: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReproduceCase {
    N3,
    N5,
    /// The five-strategy start with a zero third share, rescaled onto the simplex.
    N5Renormalized,
    N7,
    N9,
    Riccati,
}

impl ReproduceCase {
    pub const ALL: [ReproduceCase; 6] = [Self::N3, Self::N5, Self::N5Renormalized, Self::N7, Self::N9, Self::Riccati];

    pub fn name(self) -> &'static str {
        match self {
            Self::N3 => "n3",
            Self::N5 => "n5",
            Self::N5Renormalized => "n5-renormalized",
            Self::N7 => "n7",
            Self::N9 => "n9",
            Self::Riccati => "riccati",
        }
    }

    pub fn n(self) -> usize {
        match self {
            Self::N3 | Self::Riccati => 1,
            Self::N5 | Self::N5Renormalized => 2,
            Self::N7 => 3,
            Self::N9 => 4,
        }
    }

    pub fn horizon(self) -> f64 {
        if self == Self::Riccati {
            RICCATI_HORIZON
        } else {
            DEFAULT_HORIZON
        }
    }

    /// Initial population as given, before any rescaling.
    pub fn raw_start(self) -> Vec<f64> {
        match self {
            Self::N3 => vec![0.2333, 0.3333, 0.43333],
            Self::N5 => vec![0.1, 0.3, 0.2, 0.1, 0.3],
            Self::N5Renormalized => vec![0.1, 0.3, 0.0, 0.1, 0.3],
            Self::N7 | Self::N9 => alternating_start(2 * self.n() + 1, 0.05),
            Self::Riccati => vec![0.8, 0.1, 0.1],
        }
    }

    /// Whether the raw start is off the simplex and must be rescaled.
    pub fn renormalize(self) -> bool {
        matches!(self, Self::N3 | Self::N5Renormalized)
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::N3 => "three strategies, start near the barycenter (rescaled to sum 1)",
            Self::N5 => "five strategies, start (0.1, 0.3, 0.2, 0.1, 0.3)",
            Self::N5Renormalized => "five strategies, start (0.1, 0.3, 0, 0.1, 0.3) rescaled to sum 1",
            Self::N7 => "seven strategies, alternating +/-0.05 start with the third share at 1/N",
            Self::N9 => "nine strategies, alternating +/-0.05 start with the third share at 1/N",
            Self::Riccati => "three strategies, distant start (0.8, 0.1, 0.1), horizon 15",
        }
    }
}

impl fmt::Display for ReproduceCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReproduceCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown case '{s}' (expected one of n3, n5, n5-renormalized, n7, n9, riccati)")))
    }
}

/// Barycenter with `+delta, -delta, ...` applied from the first share on,
/// skipping the third share.
pub fn alternating_start(size: usize, delta: f64) -> Vec<f64> {
    let base = 1.0 / size as f64;
    let mut sign = 1.0;
    (0..size)
        .map(|i| {
            if i == 2 {
                return base;
            }
            let v = base + sign * delta;
            sign = -sign;
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseParameters {
    pub case: String,
    pub description: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub size: usize,
    pub r: f64,
    pub t_f: f64,
    pub u0_raw: Vec<f64>,
    pub u0: Vec<f64>,
    pub renormalized: bool,
    pub solver: SolverConfig,
}

/// The result of one sub-solve, or why it failed.
pub type Attempt<T> = std::result::Result<T, String>;

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub parameters: CaseParameters,
    pub problem: QuasiLinearProblem,
    pub quasilinear: QuasiLinearSolution,
    pub euler_lagrange: Attempt<ControlSolution>,
    pub nonlinear: Attempt<ControlSolution>,
    pub gamma_ode: Attempt<ScalarTrajectory>,
    pub limit_ode: Attempt<ScalarTrajectory>,
    pub kappa: KappaHeuristic,
    pub closed_form: Option<ClosedFormLimit>,
    pub cholesky: CertificateReport,
    pub riccati: Attempt<CertificateReport>,
    pub report: CaseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub converged: bool,
    pub gamma_0: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    /// Sup-norm gap between the quasi-linear control and the scalar second-order equation.
    pub quasilinear_vs_gamma_ode: Option<f64>,
    /// Sup-norm gap between the reduced and full quasi-linear Euler–Lagrange solves.
    pub quasilinear_vs_euler_lagrange: Option<f64>,
    /// `|gamma_nl(0) - gamma_ql(0)| / |gamma_ql(0)|`.
    pub nonlinear_gamma_0_relative: Option<f64>,
    /// Sup-norm gap between the closed-form limit (heuristic kappa) and the scalar equation.
    pub closed_form_vs_gamma_ode: Option<f64>,
    /// Sup-norm gap between the numerically solved limit and the scalar equation.
    pub limit_ode_vs_gamma_ode: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub cholesky_verdict: Verdict,
    pub cholesky_min_margin: f64,
    pub riccati_verdict: Option<Verdict>,
    pub riccati_max_abs: Option<f64>,
    pub riccati_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub parameters: CaseParameters,
    pub quasilinear: SolverStatus,
    pub euler_lagrange: SolverStatus,
    pub nonlinear: SolverStatus,
    pub gamma_ode: SolverStatus,
    pub limit_ode: SolverStatus,
    pub closed_loop: ClosedLoop,
    pub max_gamma_rate: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub kappa: f64,
    pub gaps: Gaps,
    pub certificates: CertificateSummary,
}

impl CaseReport {
    /// Every sub-solve finished and converged.
    pub fn all_converged(&self) -> bool {
        [&self.quasilinear, &self.euler_lagrange, &self.nonlinear, &self.gamma_ode, &self.limit_ode]
            .iter()
            .all(|s| s.converged)
    }
}

fn control_status(sol: &Attempt<ControlSolution>) -> SolverStatus {
    match sol {
        Ok(s) => SolverStatus { converged: s.diagnostics.converged, gamma_0: Some(s.gamma_at_zero()), error: None },
        Err(e) => SolverStatus { converged: false, gamma_0: None, error: Some(e.clone()) },
    }
}

fn scalar_status(sol: &Attempt<ScalarTrajectory>) -> SolverStatus {
    match sol {
        Ok(s) => SolverStatus { converged: s.converged, gamma_0: s.values.first().copied(), error: None },
        Err(e) => SolverStatus { converged: false, gamma_0: None, error: Some(e.clone()) },
    }
}

fn join<T>(handle: std::thread::ScopedJoinHandle<'_, Result<T>>) -> Attempt<T> {
    handle.join().map_err(|_| "solver thread panicked".to_string())?.map_err(|e| e.to_string())
}

fn samples(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    times.iter().copied().zip(values.iter().copied()).collect()
}

/// Builds the quasi-linear problem for a case.
pub fn case_problem(case: ReproduceCase) -> Result<QuasiLinearProblem> {
    let game = GameSpec::new(case.n())?;
    build_quasilinear(&game, DEFAULT_R, case.horizon(), &case.raw_start(), case.renormalize())
}

/// Runs every solver on a case. Only the quasi-linear solve is required to
/// succeed; the others are recorded as failures in the report.
pub fn run_case(case: ReproduceCase, cfg: &SolverConfig) -> Result<CaseOutcome> {
    let problem = case_problem(case)?;
    let quasi = solve_quasilinear(&problem, cfg)?;
    let lambda0 = quasi.control.lambda.as_ref().map(|l| l[0].clone());
    let cp = problem.control_problem()?;
    let gamma_problem = GammaOdeProblem::from_quasilinear(&problem, quasi.closed_loop.c)?;
    let slope = gamma_slope_at_zero(&problem);

    let (euler_lagrange, nonlinear, gamma_ode, limit_ode, riccati) = std::thread::scope(|s| {
        let el = s.spawn(|| {
            let strategy = ShootingStrategy {
                guess: None,
                homotopy: Some(Homotopy { center: DVector::zeros(problem.x0.len()), stages: HOMOTOPY_STAGES }),
            };
            solve_el_with(&cp, cfg, &strategy)
        });
        let nl = s.spawn(|| {
            let p = build_nonlinear(&problem.game, problem.r, problem.t_f, problem.u0.as_slice(), false)?;
            solve_nonlinear(&p, cfg, lambda0.clone())
        });
        let go = s.spawn(|| solve_gamma_ode(&gamma_problem, cfg));
        let lim = s.spawn(|| solve_limit_ode(slope, problem.t_f, problem.r, cfg));
        let ric = s.spawn(|| quasilinear_riccati(&problem, &quasi.control, cfg, DEFAULT_SWEEP_BOUND));
        (join(el), join(nl), join(go), join(lim), join(ric))
    });

    let cholesky = cholesky_sufficiency(&problem, &quasi.control)?;
    let kappa = limit_kappa_heuristic(&problem);
    let closed_form = (!kappa.degenerate).then(|| closed_form_limit(kappa.kappa, problem.t_f)).transpose()?;

    let quasi_samples = samples(&quasi.control.times, &quasi.control.gamma);
    let gamma0 = quasi.control.gamma_at_zero();
    let gamma_ode_samples = gamma_ode.as_ref().ok().map(|g| samples(&g.times, &g.values));
    let gaps = Gaps {
        quasilinear_vs_gamma_ode: gamma_ode.as_ref().ok().map(|g| g.sup_gap(&quasi_samples)),
        quasilinear_vs_euler_lagrange: euler_lagrange.as_ref().ok().map(|el| quasi.control.gamma_gap(&cp, el)),
        nonlinear_gamma_0_relative: nonlinear.as_ref().ok().map(|nl| (nl.gamma_at_zero() - gamma0).abs() / gamma0.abs()),
        closed_form_vs_gamma_ode: match (&closed_form, &gamma_ode) {
            (Some(f), Ok(g)) => Some(
                g.times
                    .iter()
                    .zip(&g.values)
                    .map(|(&t, &v)| (f.zeta(t).expect("grid lies in domain") - v).abs())
                    .fold(0.0, f64::max),
            ),
            (None, Ok(g)) => Some(g.values.iter().fold(0.0, |m, v| m.max(v.abs()))),
            _ => None,
        },
        limit_ode_vs_gamma_ode: match (&limit_ode, &gamma_ode_samples) {
            (Ok(l), Some(g)) => Some(l.sup_gap(g)),
            _ => None,
        },
    };
    let max_gamma_rate = quasi.control.x.iter().map(|x| x.dot(&(&problem.pair.h * x)) / problem.r).fold(f64::MIN, f64::max);

    let parameters = CaseParameters {
        case: case.name().into(),
        description: case.description().into(),
        n: case.n(),
        size: problem.game.size(),
        r: problem.r,
        t_f: problem.t_f,
        u0_raw: case.raw_start(),
        u0: problem.u0.as_slice().to_vec(),
        renormalized: problem.renormalized,
        solver: *cfg,
    };
    let report = CaseReport {
        parameters: parameters.clone(),
        quasilinear: control_status(&Ok(quasi.control.clone())),
        euler_lagrange: control_status(&euler_lagrange),
        nonlinear: control_status(&nonlinear),
        gamma_ode: scalar_status(&gamma_ode),
        limit_ode: scalar_status(&limit_ode),
        closed_loop: quasi.closed_loop,
        max_gamma_rate,
        c: quasi.closed_loop.c,
        kappa: kappa.kappa,
        gaps,
        certificates: CertificateSummary {
            cholesky_verdict: cholesky.verdict,
            cholesky_min_margin: cholesky.extremum,
            riccati_verdict: riccati.as_ref().ok().map(|r| r.verdict),
            riccati_max_abs: riccati.as_ref().ok().map(|r| r.extremum),
            riccati_error: riccati.as_ref().err().cloned(),
        },
    };
    Ok(CaseOutcome {
        parameters,
        problem,
        quasilinear: quasi,
        euler_lagrange,
        nonlinear,
        gamma_ode,
        limit_ode,
        kappa,
        closed_form,
        cholesky,
        riccati,
        report,
    })
}
