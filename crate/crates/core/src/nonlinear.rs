//! The fully nonlinear controlled cyclic game: replicator dynamics steered
//! through the actuation matrix, penalizing distance from the barycenter.

use crate::control::{solve_el_with, ControlProblem, ControlSolution, ControlSystem, Homotopy, ShootingStrategy};
use crate::error::{Error, Result};
use crate::game::{interior_fixed_point, GameSpec};
use crate::ode::SolverConfig;
use crate::replicator::{replicator_field, replicator_jacobian, SimplexState};
use nalgebra::{DMatrix, DVector};

/// Sum tolerance below which an initial population is accepted as lying on the simplex.
pub const INPUT_SIMPLEX_TOL: f64 = 1e-6;

/// Initial population after validation, and whether it had to be rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedStart {
    pub state: SimplexState,
    pub renormalized: bool,
}

/// Accepts `u0` if its entries sum to one within [`INPUT_SIMPLEX_TOL`]; larger
/// offsets are rescaled when `renormalize` is set and rejected otherwise.
pub fn check_start(game: &GameSpec, u0: &[f64], renormalize: bool) -> Result<CheckedStart> {
    if u0.len() != game.size() {
        return Err(Error::InvalidInput(format!(
            "initial population has {} entries, the game has {} strategies",
            u0.len(),
            game.size()
        )));
    }
    let v = DVector::from_column_slice(u0);
    let offset = (v.sum() - 1.0).abs();
    if offset > INPUT_SIMPLEX_TOL && !renormalize {
        return Err(Error::InvalidInput(format!(
            "initial population sums to {} (off the simplex by {offset:.3e}); pass the renormalize flag to rescale it",
            v.sum()
        )));
    }
    Ok(CheckedStart { state: SimplexState::renormalized(v)?, renormalized: offset > INPUT_SIMPLEX_TOL })
}

/// `u' = F(u) + gamma G(u)` with running cost `|u - u*|^2 / 2`.
#[derive(Debug, Clone)]
pub struct ReplicatorControl {
    l: DMatrix<f64>,
    m: DMatrix<f64>,
    center: DVector<f64>,
}

impl ReplicatorControl {
    pub fn new(game: &GameSpec) -> Self {
        Self { l: game.l().clone(), m: game.m().clone(), center: interior_fixed_point(game).into_vector() }
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
}

impl ControlSystem for ReplicatorControl {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn drift(&self, u: &DVector<f64>) -> DVector<f64> {
        replicator_field(&self.l, u)
    }
    fn actuation(&self, u: &DVector<f64>) -> DVector<f64> {
        replicator_field(&self.m, u)
    }
    fn running_cost(&self, u: &DVector<f64>) -> f64 {
        0.5 * (u - &self.center).norm_squared()
    }
    fn running_cost_gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        u - &self.center
    }
    fn drift_jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(replicator_jacobian(&self.l, u))
    }
    fn actuation_jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(replicator_jacobian(&self.m, u))
    }
    fn hamiltonian_state_hessian(&self, u: &DVector<f64>, gamma: f64, lambda: &DVector<f64>) -> Option<DMatrix<f64>> {
        let size = u.len();
        Some(
            DMatrix::identity(size, size)
                + weighted_replicator_hessian(&self.l, u, lambda)
                + weighted_replicator_hessian(&self.m, u, lambda) * gamma,
        )
    }
}

/// Hessian of `lambda . R_A(u)` where `R_A` is the replicator field of `A`:
/// `D + D^T - (lambda . u)(A + A^T)` with `D = diag(lambda)(A - 1 s^T)` and `s = (A + A^T) u`.
pub fn weighted_replicator_hessian(a: &DMatrix<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let sym = a + a.transpose();
    let s = &sym * u;
    let size = u.len();
    let d = DMatrix::from_fn(size, size, |k, l| lambda[k] * (a[(k, l)] - s[l]));
    &d + d.transpose() - sym * lambda.dot(u)
}

#[derive(Debug, Clone)]
pub struct NonlinearProblem {
    pub game: GameSpec,
    pub control: ControlProblem<ReplicatorControl>,
    pub renormalized: bool,
}

pub fn build_nonlinear(game: &GameSpec, r: f64, t_f: f64, u0: &[f64], renormalize: bool) -> Result<NonlinearProblem> {
    let start = check_start(game, u0, renormalize)?;
    let control = ControlProblem::new(ReplicatorControl::new(game), r, t_f, start.state.into_vector())?;
    Ok(NonlinearProblem { game: game.clone(), control, renormalized: start.renormalized })
}

/// Continuation stages used when the direct nonlinear solve fails.
pub const HOMOTOPY_STAGES: usize = 10;

/// Solves the nonlinear Euler–Lagrange system, optionally warm-started with a
/// co-state guess (the quasi-linear `lambda(0)` is a good one). Falls back to
/// continuation from the barycenter toward `u0`.
pub fn solve_nonlinear(
    p: &NonlinearProblem,
    cfg: &SolverConfig,
    warm_start: Option<DVector<f64>>,
) -> Result<ControlSolution> {
    let strategy = ShootingStrategy {
        guess: warm_start,
        homotopy: Some(Homotopy { center: p.control.system.center().clone(), stages: HOMOTOPY_STAGES }),
    };
    solve_el_with(&p.control, cfg, &strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::lie_bracket;
    use nalgebra::dvector;

    #[test]
    fn start_validation() {
        let g = GameSpec::new(2).unwrap();
        assert!(check_start(&g, &[0.1, 0.3, 0.0, 0.1, 0.3], false).is_err());
        let s = check_start(&g, &[0.1, 0.3, 0.0, 0.1, 0.3], true).unwrap();
        assert!(s.renormalized);
        assert!((s.state.as_vector()[1] - 0.375).abs() < 1e-15);
        let s = check_start(&g, &[0.2; 5], false).unwrap();
        assert!(!s.renormalized);
        assert!(check_start(&g, &[0.25; 4], true).is_err());
    }

    #[test]
    fn bracket_does_not_vanish() {
        let g = GameSpec::new(1).unwrap();
        let p = build_nonlinear(&g, 0.2, 1.0, &[0.5, 0.3, 0.2], false).unwrap();
        let b = lie_bracket(&p.control, &dvector![0.5, 0.3, 0.2], 1e-6);
        assert!(b.norm() > 1e-6, "bracket norm {}", b.norm());
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let g = GameSpec::new(2).unwrap();
        let sys = ReplicatorControl::new(&g);
        let u = dvector![0.1, 0.3, 0.2, 0.15, 0.25];
        let lambda = dvector![0.4, -1.2, 0.3, 0.9, -0.1];
        let gamma = 0.7;
        let grad = |v: &DVector<f64>| {
            sys.running_cost_gradient(v)
                + sys.drift_jacobian(v).unwrap().tr_mul(&lambda)
                + sys.actuation_jacobian(v).unwrap().tr_mul(&lambda) * gamma
        };
        let fd = crate::ode::fd_jacobian(grad, &u, 1e-6);
        let exact = sys.hamiltonian_state_hessian(&u, gamma, &lambda).unwrap();
        assert!((fd - &exact).amax() < 1e-8);
        assert_eq!(exact.transpose(), exact);
    }

    #[test]
    fn center_start_needs_no_control() {
        let g = GameSpec::new(1).unwrap();
        let third = 1.0 / 3.0;
        let p = build_nonlinear(&g, 0.2, 2.0, &[third; 3], false).unwrap();
        let sol = solve_nonlinear(&p, &SolverConfig::default(), None).unwrap();
        assert!(sol.diagnostics.converged);
        assert!(sol.gamma.iter().all(|g| g.abs() < 1e-10));
    }
}
