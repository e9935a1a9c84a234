//! The cyclic game linearized about its barycenter.
//!
//! With `x = u - u*` the controlled dynamics become `x' = (J + gamma H) x`.
//! `J` is skew-symmetric, `H` is negative definite and the two commute, so the
//! co-state drops out: the optimal control satisfies `gamma' = x^T H x / r`
//! with `gamma(tf) = 0`, and `|x|^2 - r gamma^2` stays constant.
//!
//! Eliminating `x` entirely gives a scalar boundary value problem
//!
//! ```text
//! r gamma'' + r gamma gamma' + (n/N^2) gamma (r gamma^2 + C) = 0,
//! gamma(tf) = 0,  gamma'(0) = x0^T H x0 / r,  C = |x(tf)|^2.
//! ```
//!
//! Differentiating `r gamma' = x^T H x` along the flow and using
//! `x^T (H^T H + H H + H) x = -(n/N^2) |x|^2` yields
//! `r gamma''/gamma + r gamma' = -(n/N^2)(r gamma^2 + C)`; multiplying
//! through by `gamma` gives the equation above. Dropping the last term leaves
//! `zeta'' + zeta zeta' = 0`, the large-N limit.

use crate::control::{
    reconstruct_costate, riccati_certificate, solve_reduced_with, CertificateMethod, CertificateReport, ControlProblem,
    ControlSolution, ControlSystem, Homotopy, ShootingStrategy, Verdict,
};
use crate::error::{Error, Result};
use crate::game::{interior_fixed_point, linearize_at_center, GameSpec, LinearizedPair};
use crate::nonlinear::check_start;
use crate::ode::{rk_integrate, shoot, uniform_grid, DenseSolution, SolverConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Tolerance on the commutation and tangency invariants checked at build time.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// `x' = J x + gamma H x` with running cost `x^T Q x / 2`.
#[derive(Debug, Clone)]
pub struct QuasiLinearSystem {
    pub j: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl ControlSystem for QuasiLinearSystem {
    fn dim(&self) -> usize {
        self.j.nrows()
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.j * x
    }
    fn actuation(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x
    }
    fn running_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x))
    }
    fn running_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.j.clone())
    }
    fn actuation_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.h.clone())
    }
    fn hamiltonian_state_hessian(&self, _x: &DVector<f64>, _gamma: f64, _lambda: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.q.clone())
    }
}

#[derive(Debug, Clone)]
pub struct QuasiLinearProblem {
    pub game: GameSpec,
    pub pair: LinearizedPair,
    /// State weight (identity).
    pub q: DMatrix<f64>,
    /// `Q H`.
    pub k: DMatrix<f64>,
    pub r: f64,
    pub t_f: f64,
    pub u0: DVector<f64>,
    pub x0: DVector<f64>,
    /// Whether `u0` was rescaled onto the simplex.
    pub renormalized: bool,
}

pub fn build_quasilinear(game: &GameSpec, r: f64, t_f: f64, u0: &[f64], renormalize: bool) -> Result<QuasiLinearProblem> {
    let start = check_start(game, u0, renormalize)?;
    let pair = linearize_at_center(game);
    let size = game.size();
    let q = DMatrix::identity(size, size);
    let u0 = start.state.into_vector();
    let x0 = &u0 - interior_fixed_point(game).into_vector();
    let commutator = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a * b - b * a).amax();
    if commutator(&pair.j, &pair.h) > STRUCTURE_TOL || commutator(&pair.j, &q) > STRUCTURE_TOL {
        return Err(Error::Precondition("J must commute with H and Q".into()));
    }
    if x0.sum().abs() > STRUCTURE_TOL {
        return Err(Error::Precondition(format!("deviation does not sum to zero ({:.3e})", x0.sum())));
    }
    let p = QuasiLinearProblem {
        k: &q * &pair.h,
        game: game.clone(),
        pair,
        q,
        r,
        t_f,
        u0,
        x0,
        renormalized: start.renormalized,
    };
    p.control_problem()?;
    Ok(p)
}

impl QuasiLinearProblem {
    pub fn system(&self) -> QuasiLinearSystem {
        QuasiLinearSystem { j: self.pair.j.clone(), h: self.pair.h.clone(), q: self.q.clone() }
    }

    /// The same problem in the general framework.
    pub fn control_problem(&self) -> Result<ControlProblem<QuasiLinearSystem>> {
        ControlProblem::new(self.system(), self.r, self.t_f, self.x0.clone())
    }

    fn quadratic(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.pair.h * x))
    }
}

/// `gamma'(0) = x0^T H x0 / r`, never positive.
pub fn gamma_slope_at_zero(p: &QuasiLinearProblem) -> f64 {
    p.quadratic(&p.x0) / p.r
}

/// `-x0^T H x0`, the decay-rate parameter of the limiting closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaHeuristic {
    pub kappa: f64,
    /// Set when `x0 = 0`; the closed form then degenerates to zero.
    pub degenerate: bool,
}

pub fn limit_kappa_heuristic(p: &QuasiLinearProblem) -> KappaHeuristic {
    let kappa = -p.quadratic(&p.x0);
    KappaHeuristic { kappa, degenerate: p.x0.iter().all(|&v| v == 0.0) }
}

/// `|x|^2 - r gamma^2 = C` along an extremal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    /// `|x(tf)|^2`.
    pub c: f64,
    /// `max_t | |x|^2 - r gamma^2 - C |`.
    pub max_violation: f64,
    /// `max_t | d/dt(x^T Q x) - 2 r gamma gamma' |` by central differences on the grid.
    pub max_rate_violation: f64,
}

pub fn closed_loop_constant(p: &QuasiLinearProblem, sol: &ControlSolution) -> ClosedLoop {
    let c = sol.x.last().expect("nonempty grid").norm_squared();
    let energy: Vec<f64> = sol.x.iter().map(|x| x.dot(&(&p.q * x))).collect();
    let max_violation = sol
        .x
        .iter()
        .zip(&sol.gamma)
        .map(|(x, g)| (x.norm_squared() - p.r * g * g - c).abs())
        .fold(0.0, f64::max);
    let t = &sol.times;
    let max_rate_violation = (1..t.len().saturating_sub(1))
        .map(|i| {
            let dt = t[i + 1] - t[i - 1];
            let de = (energy[i + 1] - energy[i - 1]) / dt;
            let dg = (sol.gamma[i + 1] - sol.gamma[i - 1]) / dt;
            (de - 2.0 * p.r * sol.gamma[i] * dg).abs()
        })
        .fold(0.0, f64::max);
    ClosedLoop { c, max_violation, max_rate_violation }
}

/// A reduced quasi-linear solve with its co-state rebuilt and the closed-loop identity evaluated.
#[derive(Debug, Clone)]
pub struct QuasiLinearSolution {
    pub control: ControlSolution,
    pub closed_loop: ClosedLoop,
}

/// Solves the co-state-free system `x' = (J + gamma H) x`, `gamma' = x^T Q H x / r`, `gamma(tf) = 0`,
/// then reconstructs the co-state for the certificates.
pub fn solve_quasilinear(p: &QuasiLinearProblem, cfg: &SolverConfig) -> Result<QuasiLinearSolution> {
    let cp = p.control_problem()?;
    let strategy = ShootingStrategy {
        guess: None,
        homotopy: Some(Homotopy { center: DVector::zeros(p.x0.len()), stages: crate::nonlinear::HOMOTOPY_STAGES }),
    };
    let mut control = solve_reduced_with(&cp, cfg, &strategy)?;
    reconstruct_costate(&cp, &mut control, cfg)?;
    let closed_loop = closed_loop_constant(p, &control);
    Ok(QuasiLinearSolution { control, closed_loop })
}

/// `x^T (H^T H + H H + H) x + (n/N^2) |x|^2`, which vanishes identically.
pub fn h_algebra_identity_check(game: &GameSpec, x: &DVector<f64>) -> f64 {
    let h = linearize_at_center(game).h;
    let m = h.transpose() * &h + &h * &h + &h;
    let size = game.size() as f64;
    x.dot(&(m * x)) + game.n() as f64 / (size * size) * x.norm_squared()
}

/// A scalar trajectory from one of the second-order control equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
}

impl ScalarTrajectory {
    fn from_dense(dense: &DenseSolution, times: Vec<f64>, converged: bool, residual: f64, iterations: usize) -> Self {
        let (values, rates) = times
            .iter()
            .map(|&t| {
                let y = dense.eval(t);
                (y[0], y[1])
            })
            .unzip();
        Self { times, values, rates, converged, residual, iterations }
    }

    /// Sup-norm distance to `other` evaluated on this trajectory's grid via `other`'s linear interpolant.
    pub fn sup_gap(&self, other: &[(f64, f64)]) -> f64 {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| (interpolate(other, t) - v).abs())
            .fold(0.0, f64::max)
    }
}

fn interpolate(samples: &[(f64, f64)], t: f64) -> f64 {
    let idx = samples.partition_point(|&(s, _)| s < t);
    match idx {
        0 => samples[0].1,
        i if i == samples.len() => samples[i - 1].1,
        i => {
            let (t0, v0) = samples[i - 1];
            let (t1, v1) = samples[i];
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaOdeProblem {
    pub n: usize,
    #[serde(rename = "N")]
    pub size: usize,
    pub r: f64,
    /// `|x(tf)|^2`.
    pub c: f64,
    pub t_f: f64,
    pub gamma_tf: f64,
    pub gamma_dot_0: f64,
}

impl GammaOdeProblem {
    pub fn from_quasilinear(p: &QuasiLinearProblem, c: f64) -> Result<Self> {
        let prob = Self {
            n: p.game.n(),
            size: p.game.size(),
            r: p.r,
            c,
            t_f: p.t_f,
            gamma_tf: 0.0,
            gamma_dot_0: gamma_slope_at_zero(p),
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0) {
            return Err(Error::InvalidInput(format!("C must be nonnegative, got {}", self.c)));
        }
        if !(self.r > 0.0 && self.t_f > 0.0) {
            return Err(Error::InvalidInput("r and t_f must be positive".into()));
        }
        if self.gamma_dot_0 > 0.0 {
            return Err(Error::InvalidInput(format!("gamma'(0) must be nonpositive, got {}", self.gamma_dot_0)));
        }
        Ok(())
    }

    fn coupling(&self) -> f64 {
        self.n as f64 / (self.size * self.size) as f64
    }
}

/// Shoots on `y(0)` for a second-order scalar equation with `y(tf) = target` and `y'(0)` fixed.
fn shoot_scalar(
    accel: impl Fn(f64, f64) -> f64,
    rate0: f64,
    target: f64,
    guess: f64,
    t_f: f64,
    cfg: &SolverConfig,
) -> Result<ScalarTrajectory> {
    let dynamics = |_t: f64, y: &DVector<f64>| DVector::from_vec(vec![y[1], accel(y[0], y[1])]);
    let initial = |z: &DVector<f64>| DVector::from_vec(vec![z[0], rate0]);
    let boundary = |y: &DVector<f64>| DVector::from_element(1, y[0] - target);
    let res = shoot(dynamics, initial, &DVector::from_element(1, guess), boundary, t_f, cfg)?;
    Ok(ScalarTrajectory::from_dense(&res.solution, cfg.grid(0.0, t_f), res.converged, res.residual, res.iterations))
}

/// `r gamma'' + r gamma gamma' + (n/N^2) gamma (r gamma^2 + C) = 0` with `gamma(tf)` and `gamma'(0)` given.
pub fn solve_gamma_ode(p: &GammaOdeProblem, cfg: &SolverConfig) -> Result<ScalarTrajectory> {
    p.validate()?;
    let k = p.coupling();
    let (r, c) = (p.r, p.c);
    let accel = move |g: f64, v: f64| -g * v - k * g * (r * g * g + c) / r;
    shoot_scalar(accel, p.gamma_dot_0, p.gamma_tf, p.gamma_tf - p.gamma_dot_0 * p.t_f, p.t_f, cfg)
}

pub const FIXED_POINT_RELAXATION: f64 = 0.5;
pub const FIXED_POINT_TOL: f64 = 1e-6;
pub const FIXED_POINT_MAX_ITERS: usize = 30;

/// Result of closing the scalar equation without a prior state solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaOdeFixedPoint {
    pub problem: GammaOdeProblem,
    pub trajectory: ScalarTrajectory,
    pub iterations: usize,
    pub converged: bool,
}

/// Finds `C` self-consistently: solve the scalar equation, replay the control
/// through `x' = (J + gamma H) x`, set `C` to the relaxed `|x(tf)|^2`, repeat.
pub fn gamma_ode_fixed_point(p: &QuasiLinearProblem, cfg: &SolverConfig) -> Result<GammaOdeFixedPoint> {
    let mut problem = GammaOdeProblem::from_quasilinear(p, 0.5 * p.x0.norm_squared())?;
    let system = p.system();
    for iteration in 1..=FIXED_POINT_MAX_ITERS {
        let trajectory = solve_gamma_ode(&problem, cfg)?;
        let samples: Vec<(f64, f64)> = trajectory.times.iter().copied().zip(trajectory.values.iter().copied()).collect();
        let replay = rk_integrate(
            |t, x: &DVector<f64>| system.drift(x) + system.actuation(x) * interpolate(&samples, t),
            &p.x0,
            (0.0, p.t_f),
            cfg,
        )?;
        let c_new = replay.final_state().norm_squared();
        let step = c_new - problem.c;
        if step.abs() < FIXED_POINT_TOL {
            return Ok(GammaOdeFixedPoint { problem, trajectory, iterations: iteration, converged: true });
        }
        problem.c += FIXED_POINT_RELAXATION * step;
    }
    let trajectory = solve_gamma_ode(&problem, cfg)?;
    Ok(GammaOdeFixedPoint { problem, trajectory, iterations: FIXED_POINT_MAX_ITERS, converged: false })
}

/// `r zeta'' + r zeta zeta' = 0` with `zeta(tf) = 0` and `zeta'(0)` given.
pub fn solve_limit_ode(gamma_dot_0: f64, t_f: f64, r: f64, cfg: &SolverConfig) -> Result<ScalarTrajectory> {
    if !(r > 0.0 && t_f > 0.0) {
        return Err(Error::InvalidInput("r and t_f must be positive".into()));
    }
    shoot_scalar(move |z, v| -(r * z * v) / r, gamma_dot_0, 0.0, -gamma_dot_0 * t_f, t_f, cfg)
}

fn check_kappa(kappa: f64, t_f: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
    }
    if !(t_f > 0.0) {
        return Err(Error::InvalidInput(format!("t_f must be positive, got {t_f}")));
    }
    Ok(())
}

fn check_domain(t: f64, t_f: f64) -> Result<()> {
    if (0.0..=t_f).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("t = {t} lies outside the control interval [0, {t_f}]")))
    }
}

/// `zeta = sqrt(2 kappa) tanh(sqrt(kappa) (tf - t) / sqrt 2)` on `[0, tf]`.
///
/// Its rate is `-kappa sech^2(.)`, so `zeta'(tf) = -kappa`. Note that this
/// curve satisfies `zeta'' = zeta zeta'`; [`LimitExact`] solves the limit
/// equation itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormLimit {
    pub kappa: f64,
    pub t_f: f64,
}

pub fn closed_form_limit(kappa: f64, t_f: f64) -> Result<ClosedFormLimit> {
    check_kappa(kappa, t_f)?;
    Ok(ClosedFormLimit { kappa, t_f })
}

impl ClosedFormLimit {
    fn phase(&self, t: f64) -> f64 {
        self.kappa.sqrt() * (self.t_f - t) / std::f64::consts::SQRT_2
    }

    pub fn zeta(&self, t: f64) -> Result<f64> {
        check_domain(t, self.t_f)?;
        Ok((2.0 * self.kappa).sqrt() * self.phase(t).tanh())
    }

    pub fn zeta_dot(&self, t: f64) -> Result<f64> {
        check_domain(t, self.t_f)?;
        let a = self.phase(t);
        if a == 0.0 {
            return Ok(-self.kappa);
        }
        // -2 sqrt(kappa) |sqrt(kappa) tanh a| csch(2a)
        Ok(-2.0 * self.kappa * a.tanh().abs() / (2.0 * a).sinh())
    }
}

/// Exact solution of `zeta'' + zeta zeta' = 0`, `zeta(tf) = 0`:
/// `zeta = sqrt(2 kappa) tan(sqrt(kappa / 2) (tf - t))`, `zeta' = -kappa sec^2(.)`,
/// valid while `sqrt(kappa / 2) tf < pi / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitExact {
    pub kappa: f64,
    pub t_f: f64,
}

impl LimitExact {
    pub fn new(kappa: f64, t_f: f64) -> Result<Self> {
        check_kappa(kappa, t_f)?;
        if (kappa / 2.0).sqrt() * t_f >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Domain(format!("kappa = {kappa} escapes to infinity before t = 0 on a horizon of {t_f}")));
        }
        Ok(Self { kappa, t_f })
    }

    /// The `kappa` whose solution has `zeta'(0) = gamma_dot_0 < 0`.
    pub fn from_initial_rate(gamma_dot_0: f64, t_f: f64) -> Result<Self> {
        if !(gamma_dot_0 < 0.0) {
            return Err(Error::InvalidInput(format!("initial rate must be negative, got {gamma_dot_0}")));
        }
        let rate_at_zero = |k: f64| k / ((k / 2.0).sqrt() * t_f).cos().powi(2);
        let target = -gamma_dot_0;
        let mut hi = 2.0 * (std::f64::consts::FRAC_PI_2 / t_f).powi(2);
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate_at_zero(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self::new(0.5 * (lo + hi), t_f)
    }

    fn phase(&self, t: f64) -> f64 {
        (self.kappa / 2.0).sqrt() * (self.t_f - t)
    }

    pub fn zeta(&self, t: f64) -> Result<f64> {
        check_domain(t, self.t_f)?;
        Ok((2.0 * self.kappa).sqrt() * self.phase(t).tan())
    }

    pub fn zeta_dot(&self, t: f64) -> Result<f64> {
        check_domain(t, self.t_f)?;
        Ok(-self.kappa / self.phase(t).cos().powi(2))
    }
}

/// Convexity test: the Hessian of the Hamiltonian in `(x, gamma)` is
/// `[[Q, H^T lambda], [lambda^T H, r]]`, positive definite iff
/// `r - lambda^T H Q^{-1} H^T lambda > 0`.
pub fn cholesky_sufficiency(p: &QuasiLinearProblem, sol: &ControlSolution) -> Result<CertificateReport> {
    let lambdas = sol
        .lambda
        .as_ref()
        .ok_or_else(|| Error::Precondition("the Cholesky test needs a co-state; reconstruct it first".into()))?;
    let q_chol = p.q.clone().cholesky().ok_or_else(|| Error::Precondition("Q is not positive definite".into()))?;
    let margin_trace: Vec<f64> = lambdas
        .iter()
        .map(|l| {
            let coupling = p.pair.h.tr_mul(l);
            p.r - coupling.dot(&q_chol.solve(&coupling))
        })
        .collect();
    let extremum = margin_trace.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CertificateReport {
        method: CertificateMethod::Cholesky,
        times: sol.times.clone(),
        margin_trace,
        verdict: if extremum > 0.0 { Verdict::Sufficient } else { Verdict::Inconclusive },
        extremum,
        blowup_time: None,
    })
}

/// Riccati sweep along a quasi-linear solution.
pub fn quasilinear_riccati(
    p: &QuasiLinearProblem,
    sol: &ControlSolution,
    cfg: &SolverConfig,
    bound: f64,
) -> Result<CertificateReport> {
    riccati_certificate(&p.control_problem()?, sol, cfg, bound)
}

/// Samples of the closed form on a uniform grid, as `(t, zeta, zeta')`.
pub fn sample_closed_form(limit: &ClosedFormLimit, points: usize) -> Vec<(f64, f64, f64)> {
    uniform_grid(0.0, limit.t_f, points)
        .into_iter()
        .map(|t| (t, limit.zeta(t).expect("grid lies in domain"), limit.zeta_dot(t).expect("grid lies in domain")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{hamiltonian, optimal_gamma, solve_el};
    use nalgebra::dvector;

    const N3_U0: [f64; 3] = [0.2333, 0.3333, 0.43333];

    fn n3() -> QuasiLinearProblem {
        build_quasilinear(&GameSpec::new(1).unwrap(), 0.2, 6.0, &N3_U0, true).unwrap()
    }

    #[test]
    fn builds_deviation() {
        let p = n3();
        assert!(p.renormalized);
        assert!((p.x0[0] + 0.1).abs() < 2e-4 && p.x0[1].abs() < 2e-4 && (p.x0[2] - 0.1).abs() < 2e-4);
        let g = GameSpec::new(1).unwrap();
        let p = build_quasilinear(&g, 0.2, 15.0, &[0.8, 0.1, 0.1], false).unwrap();
        let expect = [0.8 - 1.0 / 3.0, 0.1 - 1.0 / 3.0, 0.1 - 1.0 / 3.0];
        assert!(p.x0.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(build_quasilinear(&g, 0.2, 6.0, &N3_U0, false).is_err());
        let third = 1.0 / 3.0;
        let p = build_quasilinear(&g, 0.2, 6.0, &[third; 3], false).unwrap();
        assert!(p.x0.amax() < 1e-16);
        assert_eq!(p.k, p.pair.h);
    }

    fn exact_n3(x0: DVector<f64>, r: f64) -> QuasiLinearProblem {
        let mut p = n3();
        p.x0 = x0;
        p.r = r;
        p
    }

    #[test]
    fn slope_example() {
        let p = exact_n3(dvector![-0.1, 0.0, 0.1], 0.2);
        assert!((gamma_slope_at_zero(&p) + 1.0 / 60.0).abs() < 1e-15);
        let k = limit_kappa_heuristic(&p);
        assert!((k.kappa - 1.0 / 300.0).abs() < 1e-16 && !k.degenerate);
        let p2 = exact_n3(dvector![-0.2, 0.0, 0.2], 0.2);
        assert!((gamma_slope_at_zero(&p2) - 4.0 * gamma_slope_at_zero(&p)).abs() < 1e-15);
        let p0 = exact_n3(DVector::zeros(3), 0.2);
        assert_eq!(gamma_slope_at_zero(&p0), 0.0);
        assert!(limit_kappa_heuristic(&p0).degenerate);
    }

    #[test]
    fn h_algebra_identity_example() {
        let g = GameSpec::new(1).unwrap();
        let x = dvector![-0.1, 0.0, 0.1];
        assert!(h_algebra_identity_check(&g, &x).abs() < 1e-16);
        let h = linearize_at_center(&g).h;
        let val = x.dot(&((h.transpose() * &h + &h * &h + &h) * &x));
        assert!((val + 0.02 / 9.0).abs() < 1e-16);
        assert_eq!(h_algebra_identity_check(&g, &DVector::zeros(3)), 0.0);
    }

    #[test]
    fn n3_solution_properties() {
        let p = n3();
        let cfg = SolverConfig::default();
        let sol = solve_quasilinear(&p, &cfg).unwrap();
        let c = &sol.control;
        assert!(c.diagnostics.converged);
        assert!(c.gamma.last().unwrap().abs() < 1e-6);
        assert!(c.x.iter().all(|x| x.dot(&(&p.pair.h * x)) / p.r <= 1e-10));
        assert!(c.gamma.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(sol.closed_loop.max_violation < 1e-5, "{:?}", sol.closed_loop);
        assert!(sol.closed_loop.max_rate_violation < 1e-5, "{:?}", sol.closed_loop);
        assert!(c.diagnostics.stationarity_error.unwrap() < 1e-6);

        let cp = p.control_problem().unwrap();
        let el = solve_el(&cp, &cfg).unwrap();
        assert!(el.diagnostics.converged);
        assert!((el.gamma_at_zero() - c.gamma_at_zero()).abs() < 1e-4);
        assert!(el.gamma_gap(&cp, c) < 1e-5);
        let l0 = &el.lambda.as_ref().unwrap()[0];
        assert!((optimal_gamma(&cp, &p.x0, l0) - el.gamma_at_zero()).abs() < 1e-12);

        let gp = GammaOdeProblem::from_quasilinear(&p, sol.closed_loop.c).unwrap();
        let go = solve_gamma_ode(&gp, &cfg).unwrap();
        let samples: Vec<_> = c.times.iter().copied().zip(c.gamma.iter().copied()).collect();
        assert!(go.converged && go.sup_gap(&samples) < 1e-4, "gap {}", go.sup_gap(&samples));
    }

    #[test]
    fn hamiltonian_term_by_term() {
        let p = n3();
        let cp = p.control_problem().unwrap();
        let (x, l) = (p.x0.clone(), DVector::from_element(3, 1.0));
        let expect = 0.5 * x.norm_squared() + 0.5 * p.r + l.dot(&(&p.pair.j * &x)) + l.dot(&(&p.pair.h * &x));
        assert!((hamiltonian(&cp, &x, 1.0, &l) - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_start_is_trivial() {
        let third = 1.0 / 3.0;
        let p = build_quasilinear(&GameSpec::new(1).unwrap(), 0.2, 6.0, &[third; 3], false).unwrap();
        let sol = solve_quasilinear(&p, &SolverConfig::default()).unwrap();
        assert!(sol.control.gamma.iter().all(|g| g.abs() < 1e-14));
        assert!(sol.control.x.iter().all(|x| x.amax() < 1e-14));
        assert!(sol.closed_loop.c < 1e-28 && sol.closed_loop.max_violation < 1e-28);
        let cert = cholesky_sufficiency(&p, &sol.control).unwrap();
        assert_eq!(cert.verdict, Verdict::Sufficient);
        assert!((cert.extremum - p.r).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_matches_state_solve() {
        let p = n3();
        let cfg = SolverConfig::default();
        let sol = solve_quasilinear(&p, &cfg).unwrap();
        let fp = gamma_ode_fixed_point(&p, &cfg).unwrap();
        assert!(fp.converged);
        assert!((fp.problem.c - sol.closed_loop.c).abs() < 1e-5, "{} vs {}", fp.problem.c, sol.closed_loop.c);
    }

    #[test]
    fn gamma_ode_trivial() {
        let gp = GammaOdeProblem { n: 1, size: 3, r: 0.2, c: 0.0, t_f: 6.0, gamma_tf: 0.0, gamma_dot_0: 0.0 };
        let go = solve_gamma_ode(&gp, &SolverConfig::default()).unwrap();
        assert!(go.values.iter().all(|v| v.abs() < 1e-14));
        let bad = GammaOdeProblem { c: -1.0, ..gp };
        assert!(solve_gamma_ode(&bad, &SolverConfig::default()).is_err());
    }

    #[test]
    fn closed_form_shape() {
        let f = closed_form_limit(0.01, 6.0).unwrap();
        assert_eq!(f.zeta(6.0).unwrap(), 0.0);
        assert_eq!(f.zeta_dot(6.0).unwrap(), -0.01);
        assert!(matches!(f.zeta(6.5), Err(Error::Domain(_))));
        assert!(matches!(f.zeta(-0.1), Err(Error::Domain(_))));
        assert!(closed_form_limit(0.0, 6.0).is_err());
        let s = sample_closed_form(&f, 101);
        assert!(s.windows(2).all(|w| w[1].1 < w[0].1));
        // Rate agrees with the derivative of zeta, and the curve obeys zeta'' = zeta zeta'.
        let h = 1e-4;
        for &(t, z, zd) in &s[1..100] {
            let num = (f.zeta(t + h).unwrap() - f.zeta(t - h).unwrap()) / (2.0 * h);
            assert!((num - zd).abs() < 1e-9);
            let acc = (f.zeta_dot(t + h).unwrap() - f.zeta_dot(t - h).unwrap()) / (2.0 * h);
            assert!((acc - z * zd).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_small_kappa_rate() {
        for kappa in [1e-1, 1e-2, 1e-3] {
            let f = closed_form_limit(kappa, 1.0).unwrap();
            assert!((f.zeta_dot(0.0).unwrap() + kappa).abs() <= 0.5 * kappa * kappa);
        }
    }

    #[test]
    fn limit_ode_matches_exact_solution() {
        let cfg = SolverConfig::default();
        let t_f = 6.0;
        let rate = -1.0 / 60.0;
        let z = solve_limit_ode(rate, t_f, 0.2, &cfg).unwrap();
        assert!(z.converged);
        assert!(z.values.windows(2).all(|w| w[1] < w[0]));
        let exact = LimitExact::from_initial_rate(rate, t_f).unwrap();
        assert!((-z.rates.last().unwrap() - exact.kappa).abs() < 1e-7);
        for (&t, &v) in z.times.iter().zip(&z.values) {
            assert!((exact.zeta(t).unwrap() - v).abs() < 1e-6);
        }
        let zero = solve_limit_ode(0.0, t_f, 1.0, &cfg).unwrap();
        assert!(zero.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn exact_limit_satisfies_equation() {
        let e = LimitExact::new(0.02, 6.0).unwrap();
        let h = 1e-4;
        for t in uniform_grid(0.1, 5.9, 30) {
            let acc = (e.zeta_dot(t + h).unwrap() - e.zeta_dot(t - h).unwrap()) / (2.0 * h);
            assert!((acc + e.zeta(t).unwrap() * e.zeta_dot(t).unwrap()).abs() < 1e-9);
        }
        assert!(LimitExact::new(1.0, 6.0).is_err());
    }

    #[test]
    fn cholesky_matches_factorization() {
        let p = n3();
        let sol = solve_quasilinear(&p, &SolverConfig::default()).unwrap();
        let cert = cholesky_sufficiency(&p, &sol.control).unwrap();
        for (l, m) in sol.control.lambda.as_ref().unwrap().iter().zip(&cert.margin_trace) {
            assert!((m - (p.r - l.norm_squared() / 9.0)).abs() < 1e-12);
            let mut big = DMatrix::identity(4, 4);
            let c = p.pair.h.tr_mul(l);
            for i in 0..3 {
                big[(i, 3)] = c[i];
                big[(3, i)] = c[i];
            }
            big[(3, 3)] = p.r;
            assert_eq!(big.cholesky().is_some(), *m > 0.0);
        }
    }
}
