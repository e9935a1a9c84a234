//! Replicator vector fields of the controlled game and trajectory integration on the simplex.

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::ode::{rk_integrate_with, IntegrationStats, SolverConfig, StepControl};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Allowed deviation of the share sum from one.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;
/// Negative shares down to this magnitude are treated as round-off and clamped to zero.
pub const CLAMP_TOL: f64 = 1e-12;
/// A share below this aborts an integration.
pub const NEGATIVITY_ABORT: f64 = -1e-9;

/// A population state on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexState {
    u: DVector<f64>,
}

impl SimplexState {
    pub fn new(mut u: DVector<f64>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::InvalidInput("population vector is empty".into()));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("population vector is not finite".into()));
        }
        let sum = u.sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidInput(format!("population shares sum to {sum}, not 1")));
        }
        if let Some((i, &v)) = u.iter().enumerate().find(|(_, &v)| v < -CLAMP_TOL) {
            return Err(Error::InvalidInput(format!("population share {} is negative ({v:.3e})", i + 1)));
        }
        u.apply(|v| *v = v.max(0.0));
        Ok(Self { u })
    }

    pub fn from_slice(u: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(u))
    }

    /// Pure strategy `e_i` (0-based).
    pub fn pure(size: usize, i: usize) -> Result<Self> {
        if i >= size {
            return Err(Error::InvalidInput(format!("strategy index {i} out of range for {size} strategies")));
        }
        let mut u = DVector::zeros(size);
        u[i] = 1.0;
        Self::new(u)
    }

    /// Rescales a nonnegative vector with positive sum onto the simplex.
    pub fn renormalized(u: DVector<f64>) -> Result<Self> {
        let sum = u.sum();
        if !(sum > 0.0) || u.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("cannot renormalize a vector with negative entries or zero sum".into()));
        }
        Self::new(u / sum)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.u
    }

    /// Deviation `u - u*` from the barycenter.
    pub fn deviation(&self) -> DVector<f64> {
        let size = self.len() as f64;
        self.u.map(|v| v - 1.0 / size)
    }

    pub fn distance_to(&self, other: &SimplexState) -> f64 {
        (&self.u - &other.u).norm()
    }
}

impl TryFrom<Vec<f64>> for SimplexState {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(v))
    }
}

impl From<SimplexState> for Vec<f64> {
    fn from(s: SimplexState) -> Self {
        s.u.as_slice().to_vec()
    }
}

/// `u_i ((A u)_i - u^T A u)` for an arbitrary payoff matrix.
pub fn replicator_field(a: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
    let au = a * u;
    let mean = u.dot(&au);
    u.component_mul(&au.add_scalar(-mean))
}

/// Jacobian of [`replicator_field`] with respect to `u`.
pub fn replicator_jacobian(a: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let au = a * u;
    let mean = u.dot(&au);
    let grad_mean = (a + a.transpose()) * u;
    let n = u.len();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { au[i] - mean } else { 0.0 };
        diag + u[i] * (a[(i, j)] - grad_mean[j])
    })
}

fn check_dim(game: &GameSpec, u: &DVector<f64>) -> Result<()> {
    if u.len() != game.size() {
        return Err(Error::InvalidInput(format!(
            "state has {} components but the game has {} strategies",
            u.len(),
            game.size()
        )));
    }
    Ok(())
}

/// Uncontrolled field `F_i = u_i (e_i - u)^T L u`.
pub fn field_f(game: &GameSpec, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(game, u)?;
    Ok(replicator_field(game.l(), u))
}

/// Actuation field `G_i = u_i (e_i - u)^T M u`.
pub fn field_g(game: &GameSpec, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(game, u)?;
    Ok(replicator_field(game.m(), u))
}

/// `F(u) + gamma G(u)`.
pub fn controlled_field(game: &GameSpec, u: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    Ok(field_f(game, u)? + field_g(game, u)? * gamma)
}

/// Control input for a simulation: a constant, or samples replayed with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaProfile {
    Constant { value: f64 },
    Sampled { times: Vec<f64>, values: Vec<f64> },
}

impl GammaProfile {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn sampled(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidInput("sampled control needs equally many (>0) times and values".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("sample times must be strictly increasing".into()));
        }
        Ok(Self::Sampled { times, values })
    }

    /// Value at `t`; sampled profiles are held constant outside their range.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Sampled { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0]
                } else if k == times.len() {
                    values[k - 1]
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    values[k - 1] + w * (values[k] - values[k - 1])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    #[serde(rename = "N")]
    pub size: usize,
    pub gamma: GammaProfile,
    pub stats: IntegrationStats,
    /// Largest sum correction applied after an accepted step.
    pub max_renormalization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SimplexState>,
    /// Control value at each sample time.
    pub gamma: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn final_state(&self) -> &SimplexState {
        self.states.last().expect("trajectory is nonempty")
    }
}

fn output_state(v: DVector<f64>) -> Result<SimplexState> {
    // Interpolated samples may carry round-off below zero; steps themselves never go below NEGATIVITY_ABORT.
    SimplexState::renormalized(v.map(|x| x.max(0.0)))
}

/// Integrates the controlled replicator dynamics from `u0` over `t_span`.
///
/// After each accepted step the share sum is projected back to one; a share
/// falling below `-1e-9` aborts with [`Error::SimplexViolation`]. The result is
/// sampled on `cfg.output_points` uniform times.
pub fn integrate(
    game: &GameSpec,
    u0: &SimplexState,
    gamma: &GammaProfile,
    t_span: (f64, f64),
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dim(game, u0.as_vector())?;
    let (l, m) = (game.l().clone(), game.m().clone());
    let rhs = |t: f64, u: &DVector<f64>| replicator_field(&l, u) + replicator_field(&m, u) * gamma.eval(t);
    let size = game.size() as f64;
    let mut max_renormalization: f64 = 0.0;
    let sol = rk_integrate_with(rhs, u0.as_vector(), t_span, cfg, |t, u| {
        if let Some((index, &value)) = u.iter().enumerate().find(|(_, &v)| v < NEGATIVITY_ABORT) {
            return Err(Error::SimplexViolation { index: index + 1, value, t });
        }
        let drift = 1.0 - u.sum();
        max_renormalization = max_renormalization.max(drift.abs());
        if drift == 0.0 {
            return Ok(StepControl::Continue);
        }
        u.add_scalar_mut(drift / size);
        Ok(StepControl::Projected)
    })?;
    let (times, raw) = sol.sample(cfg.output_points);
    let states = raw.into_iter().map(output_state).collect::<Result<Vec<_>>>()?;
    let gamma_samples = times.iter().map(|&t| gamma.eval(t)).collect();
    Ok(Trajectory {
        times,
        states,
        gamma: gamma_samples,
        meta: TrajectoryMeta { size: game.size(), gamma: gamma.clone(), stats: sol.stats, max_renormalization },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{interior_fixed_point, linearize_at_center};
    use crate::ode::fd_jacobian;
    use nalgebra::dvector;

    fn rps() -> GameSpec {
        GameSpec::new(1).unwrap()
    }

    #[test]
    fn simplex_state_validation() {
        assert!(SimplexState::from_slice(&[0.5, 0.5]).is_ok());
        assert!(SimplexState::from_slice(&[0.5, 0.6]).is_err());
        assert!(SimplexState::from_slice(&[1.1, -0.1]).is_err());
        let clamped = SimplexState::from_slice(&[1.0 + 1e-13, -1e-13]).unwrap();
        assert_eq!(clamped.as_vector()[1], 0.0);
        let json = serde_json::to_string(&clamped).unwrap();
        assert!(serde_json::from_str::<SimplexState>(&json).is_ok());
        assert!(serde_json::from_str::<SimplexState>("[0.2,0.2]").is_err());
    }

    #[test]
    fn uncontrolled_field_by_hand() {
        let u = dvector![0.5, 0.3, 0.2];
        let f = field_f(&rps(), &u).unwrap();
        let expected = dvector![-0.05, 0.09, -0.04];
        assert!((&f - expected).amax() < 1e-15);
        assert!(f.sum().abs() < 1e-15);
        // u_i (L u)_i form agrees because u^T L u vanishes.
        let lu = rps().l() * &u;
        assert!((f - u.component_mul(&lu)).amax() < 1e-14);
    }

    #[test]
    fn actuation_field_by_hand() {
        let u = dvector![0.5, 0.3, 0.2];
        let g = field_g(&rps(), &u).unwrap();
        assert!((u.dot(&(rps().m() * &u)) - 0.31).abs() < 1e-15);
        let expected = dvector![-0.055, 0.057, -0.002];
        assert!((&g - expected).amax() < 1e-15);
        assert!(g.sum().abs() < 1e-15);
    }

    #[test]
    fn rest_points() {
        for n in 1..=4 {
            let g = GameSpec::new(n).unwrap();
            let us = interior_fixed_point(&g);
            assert!(field_f(&g, us.as_vector()).unwrap().amax() < 1e-14);
            assert!(field_g(&g, us.as_vector()).unwrap().amax() < 1e-14);
            assert!(controlled_field(&g, us.as_vector(), 3.0).unwrap().amax() < 1e-14);
            for i in 0..g.size() {
                let e = SimplexState::pure(g.size(), i).unwrap();
                assert!(field_f(&g, e.as_vector()).unwrap().amax() < 1e-14);
                assert!(field_g(&g, e.as_vector()).unwrap().amax() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_control_reduces_to_f() {
        let g = GameSpec::new(2).unwrap();
        let u = dvector![0.1, 0.2, 0.3, 0.15, 0.25];
        assert_eq!(controlled_field(&g, &u, 0.0).unwrap(), field_f(&g, &u).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(field_f(&rps(), &dvector![0.5, 0.5]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn analytic_jacobian_matches_fd() {
        let g = GameSpec::new(2).unwrap();
        let u = dvector![0.1, 0.2, 0.3, 0.15, 0.25];
        let a = g.payoff_matrix(0.7).unwrap();
        let fd = fd_jacobian(|x| replicator_field(&a, x), &u, 1e-6);
        assert!((fd - replicator_jacobian(&a, &u)).amax() < 1e-9);
    }

    #[test]
    fn bracket_of_nonlinear_fields_is_nonzero() {
        let g = rps();
        let u = dvector![0.5, 0.3, 0.2];
        let f = field_f(&g, &u).unwrap();
        let gv = field_g(&g, &u).unwrap();
        let df = fd_jacobian(|x| field_f(&g, x).unwrap(), &u, 1e-6);
        let dg = fd_jacobian(|x| field_g(&g, x).unwrap(), &u, 1e-6);
        assert!((df * gv - dg * f).norm() > 1e-6);
    }

    #[test]
    fn linearized_bracket_vanishes() {
        let g = GameSpec::new(3).unwrap();
        let p = linearize_at_center(&g);
        let x = DVector::from_fn(7, |i, _| (i as f64 * 0.37).sin());
        assert!((&p.j * &p.h * &x - &p.h * &p.j * &x).amax() < 1e-13);
    }

    #[test]
    fn gamma_profile_interpolates() {
        let p = GammaProfile::sampled(vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 2.0]).unwrap();
        assert_eq!(p.eval(-1.0), 1.0);
        assert_eq!(p.eval(0.5), 0.5);
        assert_eq!(p.eval(2.0), 1.0);
        assert_eq!(p.eval(5.0), 2.0);
        assert!(GammaProfile::sampled(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn rps_center_conserves_product() {
        let u0 = SimplexState::from_slice(&[0.5, 0.3, 0.2]).unwrap();
        let traj = integrate(&rps(), &u0, &GammaProfile::constant(0.0), (0.0, 30.0), &SolverConfig::default()).unwrap();
        let product = |s: &SimplexState| s.as_vector().iter().product::<f64>();
        let p0 = product(&u0);
        let drift = traj.states.iter().map(|s| (product(s) - p0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-6, "product drift {drift}");
    }

    #[test]
    fn negative_control_repels() {
        let g = GameSpec::new(3).unwrap();
        let us = interior_fixed_point(&g);
        let mut v = us.as_vector().clone();
        v[0] += 0.01;
        v[1] -= 0.01;
        let u0 = SimplexState::new(v).unwrap();
        let traj = integrate(&g, &u0, &GammaProfile::constant(-0.5), (0.0, 5.0), &SolverConfig::default()).unwrap();
        assert!(traj.final_state().distance_to(&us) > u0.distance_to(&us));
    }

    #[test]
    fn positive_control_attracts_at_linear_rate() {
        let g = GameSpec::new(2).unwrap();
        let us = interior_fixed_point(&g);
        let mut v = us.as_vector().clone();
        v[0] += 0.002;
        v[2] -= 0.002;
        let u0 = SimplexState::new(v).unwrap();
        let traj = integrate(&g, &u0, &GammaProfile::constant(1.0), (0.0, 30.0), &SolverConfig::default()).unwrap();
        let d0 = u0.distance_to(&us);
        let dist: Vec<f64> = traj.states.iter().map(|s| s.distance_to(&us)).collect();
        assert!(dist.windows(2).all(|w| w[1] < w[0]));
        for (&t, &d) in traj.times.iter().zip(&dist) {
            let ratio = d / (d0 * (-0.1 * t).exp());
            assert!((ratio - 1.0).abs() < 0.05, "t = {t}: ratio {ratio}");
        }
    }

    #[test]
    fn barycenter_is_stationary() {
        let g = GameSpec::new(2).unwrap();
        let us = interior_fixed_point(&g);
        let traj = integrate(&g, &us, &GammaProfile::constant(1.0), (0.0, 10.0), &SolverConfig::default()).unwrap();
        assert!(traj.states.iter().all(|s| s.distance_to(&us) < 1e-15));
        assert_eq!(traj.times.len(), SolverConfig::default().output_points);
    }
}
