//! Complete odd circulant games.
//!
//! A game with `N = 2n + 1` strategies is defined by two circulant matrices:
//! the base payoff `L` (skew-symmetric, entries in {-1, 0, 1}) and the
//! actuation matrix `M`, which marks the winning pairs. The controlled payoff
//! is `A(gamma) = L + gamma * M`.

use crate::error::{Error, Result};
use crate::replicator::{controlled_field, SimplexState};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest supported strategy count.
pub const MAX_STRATEGIES: usize = 99;

/// `k mod N`, mapped into `1..=N` (a zero residue becomes `N`).
pub fn mu(k: i64, size: usize) -> Result<usize> {
    check_size(size)?;
    let r = k.rem_euclid(size as i64) as usize;
    Ok(if r == 0 { size } else { r })
}

fn check_size(size: usize) -> Result<()> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::InvalidGame(format!("strategy count must be odd and at least 3, got {size}")));
    }
    if size > MAX_STRATEGIES {
        return Err(Error::InvalidGame(format!("strategy count {size} exceeds the supported maximum {MAX_STRATEGIES}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    n: usize,
    size: usize,
    base: DMatrix<f64>,
    actuation: DMatrix<f64>,
}

impl GameSpec {
    /// Builds the game with `2n + 1` strategies.
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidGame(format!("n must be at least 1, got {n}")));
        }
        let size = 2 * n + 1;
        check_size(size)?;
        let mut base = DMatrix::zeros(size, size);
        let mut actuation = DMatrix::zeros(size, size);
        for i in 1..=size {
            for j in 1..=size {
                if i == j {
                    continue;
                }
                let k = (size * (i - 1) + j) as i64 - i as i64;
                let sign = if mu(k, size)? % 2 == 0 { 1.0 } else { -1.0 };
                base[(i - 1, j - 1)] = sign;
                if sign > 0.0 {
                    actuation[(i - 1, j - 1)] = 1.0;
                }
            }
        }
        let game = Self { n, size, base, actuation };
        game.validate()?;
        Ok(game)
    }

    /// Builds the game with `size` strategies.
    pub fn with_strategies(size: usize) -> Result<Self> {
        check_size(size)?;
        Self::new((size - 1) / 2)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of strategies `N`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Base payoff matrix `L`.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Actuation matrix `M`.
    pub fn m(&self) -> &DMatrix<f64> {
        &self.actuation
    }

    /// Checks every structural identity the construction must satisfy.
    pub fn validate(&self) -> Result<()> {
        let (l, m, size) = (&self.base, &self.actuation, self.size);
        let fail = |what: &str| Err(Error::InvalidGame(format!("N = {size}: {what}")));
        if size != 2 * self.n + 1 || l.nrows() != size || m.nrows() != size {
            return fail("dimension mismatch");
        }
        if !is_circulant(l) || !is_circulant(m) {
            return fail("matrices are not circulant");
        }
        if l.transpose() != -l {
            return fail("L is not skew-symmetric");
        }
        if l.iter().any(|&v| v != 0.0 && v != 1.0 && v != -1.0) || m.iter().any(|&v| v != 0.0 && v != 1.0) {
            return fail("entries outside the allowed alphabet");
        }
        for i in 0..size {
            if m[(i, i)] != 0.0 || l[(i, i)] != 0.0 {
                return fail("nonzero diagonal");
            }
            let row: f64 = m.row(i).sum();
            let col: f64 = m.column(i).sum();
            if row != self.n as f64 || col != self.n as f64 {
                return fail("M does not have n ones per row and column");
            }
            for j in 0..size {
                if i == j {
                    continue;
                }
                let wins = m[(i, j)] == 1.0;
                if wins != (l[(i, j)] == 1.0) || (!wins) != (l[(i, j)] == -1.0) {
                    return fail("M and L disagree on the winner of a pair");
                }
                if m[(i, j)] + m[(j, i)] != 1.0 {
                    return fail("pair is not strictly ordered exactly once");
                }
            }
        }
        Ok(())
    }

    /// `A(gamma) = L + gamma M` for the standing assumption `gamma > -1`.
    pub fn payoff_matrix(&self, gamma: f64) -> Result<DMatrix<f64>> {
        if !(gamma > -1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma must exceed -1 (got {gamma}); use payoff_matrix_unchecked to explore other values"
            )));
        }
        Ok(self.payoff_matrix_unchecked(gamma))
    }

    /// `A(gamma)` without the `gamma > -1` restriction.
    pub fn payoff_matrix_unchecked(&self, gamma: f64) -> DMatrix<f64> {
        &self.base + &self.actuation * gamma
    }

    /// Serializable view with integer matrix rows.
    pub fn to_record(&self) -> GameRecord {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<i32>> {
            (0..m.nrows()).map(|i| m.row(i).iter().map(|&v| v as i32).collect()).collect()
        };
        GameRecord { n: self.n, size: self.size, l: rows(&self.base), m: rows(&self.actuation) }
    }
}

/// JSON form of a [`GameSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub n: usize,
    #[serde(rename = "N")]
    pub size: usize,
    #[serde(rename = "L")]
    pub l: Vec<Vec<i32>>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<i32>>,
}

impl TryFrom<GameRecord> for GameSpec {
    type Error = Error;

    fn try_from(rec: GameRecord) -> Result<Self> {
        let game = GameSpec::new(rec.n)?;
        if game.to_record() != rec {
            return Err(Error::InvalidGame("matrices do not match the complete circulant game".into()));
        }
        Ok(game)
    }
}

pub fn is_circulant(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    m.ncols() == n && (0..n).all(|i| (0..n).all(|j| m[(i, j)] == m[(0, (j + n - i) % n)]))
}

/// Circulant matrix whose rows are successive cyclic right-shifts of `first_row`.
pub fn circulant_from_first_row(first_row: &[f64]) -> DMatrix<f64> {
    let n = first_row.len();
    DMatrix::from_fn(n, n, |i, j| first_row[(j + n - i) % n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculantSpectrum {
    pub eigenvalues: Vec<Complex64>,
    pub roots_of_unity: Vec<Complex64>,
}

/// Eigenvalues of the circulant matrix with the given first row:
/// `lambda_j = sum_k c_k omega_j^k` with `omega_j = exp(2 pi i j / N)`.
pub fn circulant_eigenvalues(first_row: &[f64]) -> Result<CirculantSpectrum> {
    if first_row.is_empty() {
        return Err(Error::InvalidInput("first row must not be empty".into()));
    }
    let n = first_row.len();
    let roots: Vec<Complex64> =
        (0..n).map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64) / (n as f64))).collect();
    let eigenvalues = roots
        .iter()
        .map(|&w| {
            // Horner evaluation of sum_k c_k w^k.
            first_row.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * w + c)
        })
        .collect();
    Ok(CirculantSpectrum { eigenvalues, roots_of_unity: roots })
}

/// Eigenvalues of a general square matrix via the real Schur form.
pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest distance between matched elements of two eigenvalue multisets
/// (greedy nearest matching); infinite when the lengths differ.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (idx, d) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("lengths match");
        used[idx] = true;
        worst = worst.max(d);
    }
    worst
}

/// The barycenter `(1/N) 1`.
pub fn interior_fixed_point(game: &GameSpec) -> SimplexState {
    let n = game.size();
    SimplexState::new(DVector::from_element(n, 1.0 / n as f64)).expect("barycenter lies on the simplex")
}

/// Numerical evidence that the barycenter is the only interior rest point for a given `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorUniqueness {
    /// Dimension of the solution space of `A(gamma) u = alpha 1` in `(u, alpha)`.
    pub solution_dimension: usize,
    /// The normalized solution (`1^T u = 1`).
    pub solution: DVector<f64>,
    pub alpha: f64,
    /// Max-norm distance between `solution` and the barycenter.
    pub deviation: f64,
}

/// Solves `A(gamma) u = alpha 1` together with `1^T u = 1` by SVD rank analysis.
pub fn verify_interior_uniqueness(game: &GameSpec, gamma: f64) -> Result<InteriorUniqueness> {
    let size = game.size();
    let a = game.payoff_matrix(gamma)?;
    let mut system = DMatrix::zeros(size, size + 1);
    system.view_mut((0, 0), (size, size)).copy_from(&a);
    system.column_mut(size).fill(-1.0);
    let svd = system.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let rank = svd.rank(1e-10 * smax.max(1.0));
    let solution_dimension = size + 1 - rank;

    let mut full = DMatrix::zeros(size + 1, size + 1);
    full.view_mut((0, 0), (size, size + 1)).copy_from(&system);
    full.view_mut((size, 0), (1, size)).fill(1.0);
    let mut rhs = DVector::zeros(size + 1);
    rhs[size] = 1.0;
    let sol = full
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("interior fixed-point system is singular".into()))?;
    let solution = sol.rows(0, size).into_owned();
    let deviation = solution.iter().map(|v| (v - 1.0 / size as f64).abs()).fold(0.0, f64::max);
    Ok(InteriorUniqueness { solution_dimension, solution, alpha: sol[size], deviation })
}

/// Index sets `S` (0-based, increasing) of size `small.size()` whose principal
/// submatrices of the large game's `L` and `M` equal the small game's matrices.
pub fn embedding_supports(small: &GameSpec, large: &GameSpec) -> Vec<Vec<usize>> {
    let m = small.size();
    (0..large.size())
        .combinations(m)
        .filter(|s| {
            s.iter().enumerate().all(|(a, &i)| {
                s.iter().enumerate().all(|(b, &j)| {
                    large.l()[(i, j)] == small.l()[(a, b)] && large.m()[(i, j)] == small.m()[(a, b)]
                })
            })
        })
        .collect()
}

/// Replicator residual threshold for accepting a fixed point of the small game.
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// Lifts a rest point of the small game into every matching support of the large game.
pub fn embedded_fixed_points(
    small: &GameSpec,
    large: &GameSpec,
    u_plus: &SimplexState,
    gamma: f64,
) -> Result<Vec<SimplexState>> {
    if small.size() >= large.size() {
        return Err(Error::Precondition(format!(
            "embedding needs a smaller source game, got {} into {}",
            small.size(),
            large.size()
        )));
    }
    let residual = controlled_field(small, u_plus.as_vector(), gamma)?.amax();
    if residual >= FIXED_POINT_TOL {
        return Err(Error::Precondition(format!(
            "u_plus is not a fixed point of the {}-strategy dynamics (residual {residual:.3e})",
            small.size()
        )));
    }
    embedding_supports(small, large)
        .into_iter()
        .map(|support| {
            let mut v = DVector::zeros(large.size());
            for (a, &i) in support.iter().enumerate() {
                v[i] = u_plus.as_vector()[a];
            }
            SimplexState::new(v)
        })
        .collect()
}

/// Jacobians of the uncontrolled field `J` and the actuation field `H` at the barycenter.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedPair {
    pub j: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

/// `J = L / N` and `H = (N (M - 1) + 1) / N^2`, with `1` the all-ones matrix.
pub fn linearize_at_center(game: &GameSpec) -> LinearizedPair {
    let size = game.size() as f64;
    let ones = DMatrix::from_element(game.size(), game.size(), 1.0);
    let j = game.l() / size;
    let h = ((game.m() - &ones) * size + ones) / (size * size);
    LinearizedPair { j, h }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    CenterCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub gamma: f64,
    /// Eigenvalues of `J + gamma H` from the circulant formula, indexed by `j`.
    pub eigenvalues: Vec<Complex64>,
    pub verdict: Stability,
    /// `-gamma n (1 + 2n) / N^2`, the real eigenvalue on the all-ones direction.
    pub predicted_real_part_0: f64,
    /// `-(gamma / N^2)(n + 1/2)`, shared by every other eigenvalue.
    pub predicted_real_part: f64,
    /// Max deviation between computed and predicted real parts.
    pub formula_error: f64,
    /// Max matching distance between the circulant formula and a dense eigensolver.
    pub dense_mismatch: f64,
}

/// Spectrum of the linearization `J + gamma H` at the barycenter and the resulting verdict.
pub fn stability_report(game: &GameSpec, gamma: f64) -> StabilityReport {
    let pair = linearize_at_center(game);
    let jac = &pair.j + &pair.h * gamma;
    let row: Vec<f64> = jac.row(0).iter().copied().collect();
    let spectrum = circulant_eigenvalues(&row).expect("nonempty row");
    let dense = dense_eigenvalues(&jac);
    let (n, size) = (game.n() as f64, game.size() as f64);
    let predicted_real_part_0 = -gamma * n * (1.0 + 2.0 * n) / (size * size);
    let predicted_real_part = -(gamma / (size * size)) * (n + 0.5);
    let formula_error = spectrum
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, l)| (l.re - if j == 0 { predicted_real_part_0 } else { predicted_real_part }).abs())
        .fold(0.0, f64::max);
    let verdict = if spectrum.eigenvalues.iter().all(|l| l.re < 0.0) {
        Stability::Stable
    } else if spectrum.eigenvalues.iter().all(|l| l.re > 0.0) {
        Stability::Unstable
    } else {
        Stability::CenterCandidate
    };
    StabilityReport {
        gamma,
        dense_mismatch: multiset_distance(&spectrum.eigenvalues, &dense),
        eigenvalues: spectrum.eigenvalues,
        verdict,
        predicted_real_part_0,
        predicted_real_part,
        formula_error,
    }
}
