//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails.

use circulant_control::control::Verdict;
use circulant_control::experiments::{run_case, CaseReport, ReproduceCase};
use circulant_control::game::{
    dense_eigenvalues, embedded_fixed_points, interior_fixed_point, linearize_at_center, GameSpec,
};
use circulant_control::ode::SolverConfig;
use circulant_control::quasilinear::h_algebra_identity_check;
use circulant_control::replicator::{controlled_field, field_f, field_g, integrate, GammaProfile, SimplexState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use std::collections::{BTreeSet, HashMap};
use std::process::ExitCode;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn is_circulant(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| m[(i, j)] == m[(0, (j + n - i) % n)]))
}

fn c1_construction() -> Outcome {
    let mut failures = Vec::new();
    for n in 1..=7 {
        let g = GameSpec::new(n).unwrap();
        let size = 2 * n + 1;
        let (l, m) = (g.l(), g.m());
        let ok = g.size() == size
            && is_circulant(l)
            && is_circulant(m)
            && *l == -l.transpose()
            && (0..size).all(|i| l[(i, i)] == 0.0 && m[(i, i)] == 0.0)
            && (0..size).all(|i| m.row(i).sum() == n as f64 && m.column(i).sum() == n as f64)
            && (0..size).all(|i| {
                (0..size).all(|j| {
                    (m[(i, j)] == 1.0) == (l[(i, j)] == 1.0)
                        && (i == j || (m[(i, j)] == 0.0) == (l[(i, j)] == -1.0))
                        && m[(i, j)] + m[(j, i)] == if i == j { 0.0 } else { 1.0 }
                })
            });
        if !ok {
            failures.push(n);
        }
    }
    let g5 = GameSpec::new(2).unwrap();
    #[rustfmt::skip]
    let l5 = DMatrix::from_row_slice(5, 5, &[
         0., -1.,  1., -1.,  1.,
         1.,  0., -1.,  1., -1.,
        -1.,  1.,  0., -1.,  1.,
         1., -1.,  1.,  0., -1.,
        -1.,  1., -1.,  1.,  0.,
    ]);
    #[rustfmt::skip]
    let m5 = DMatrix::from_row_slice(5, 5, &[
        0., 0., 1., 0., 1.,
        1., 0., 0., 1., 0.,
        0., 1., 0., 0., 1.,
        1., 0., 1., 0., 0.,
        0., 1., 0., 1., 0.,
    ]);
    let displayed = *g5.l() == l5 && *g5.m() == m5;
    outcome(failures.is_empty() && displayed, format!("invariant failures for n = {failures:?}; L5/M5 match: {displayed}"))
}

fn central_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

fn c2_jacobians() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 1..=4 {
        let g = GameSpec::new(n).unwrap();
        let u = interior_fixed_point(&g).into_vector();
        let pair = linearize_at_center(&g);
        let fd_f = central_jacobian(|u| field_f(&g, u).unwrap(), &u, 1e-5);
        let fd_g = central_jacobian(|u| field_g(&g, u).unwrap(), &u, 1e-5);
        worst = worst.max((&pair.j - fd_f).amax()).max((&pair.h - fd_g).amax());
    }
    outcome(worst < 1e-6, format!("max |analytic - finite difference| = {worst:.2e}"))
}

fn c3_stability() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut sign_ok = true;
    for n in 1..=4 {
        let g = GameSpec::new(n).unwrap();
        let size = (2 * n + 1) as f64;
        let pair = linearize_at_center(&g);
        for gamma in [-0.5, 0.5, 1.0, 2.0] {
            let jac = &pair.j + &pair.h * gamma;
            let mut re: Vec<f64> = dense_eigenvalues(&jac).iter().map(|l| l.re).collect();
            let lambda0 = -gamma * n as f64 * (1.0 + 2.0 * n as f64) / (size * size);
            let rest = -(gamma / (size * size)) * (n as f64 + 0.5);
            // Pair the eigenvalue closest to lambda0 with it; all others share `rest`.
            let k = (0..re.len())
                .min_by(|&a, &b| (re[a] - lambda0).abs().total_cmp(&(re[b] - lambda0).abs()))
                .unwrap();
            worst = worst.max((re.remove(k) - lambda0).abs());
            worst = re.iter().fold(worst, |w, &r| w.max((r - rest).abs()));
            sign_ok &= re.iter().all(|&r| r.signum() == -gamma.signum());
        }
    }
    outcome(worst < 1e-10 && sign_ok, format!("max real-part error {worst:.2e}; sign pattern ok: {sign_ok}"))
}

fn uniform_interior(rng: &mut ChaCha8Rng, size: usize) -> SimplexState {
    let e: Vec<f64> = (0..size).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    SimplexState::renormalized(DVector::from_vec(e.into_iter().map(|v| v / total).collect())).unwrap()
}

fn c4_attraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let cfg = SolverConfig { output_points: 2, ..SolverConfig::default() };
    let mut details = Vec::new();
    let mut pass = true;
    for n in [2, 3] {
        let g = GameSpec::new(n).unwrap();
        let center = interior_fixed_point(&g);
        let mut worst: f64 = 0.0;
        let mut over = 0;
        for _ in 0..50 {
            let u0 = uniform_interior(&mut rng, g.size());
            let traj = integrate(&g, &u0, &GammaProfile::constant(1.0), (0.0, 40.0), &cfg).unwrap();
            let d = traj.final_state().distance_to(&center);
            worst = worst.max(d);
            over += usize::from(d >= 1e-3);
        }
        pass &= over == 0;
        details.push(format!("N={}: max distance {worst:.3e}, {over}/50 above 1e-3", g.size()));
    }
    outcome(pass, details.join("; "))
}

fn c5_h_algebra_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for n in 1..=7 {
        let g = GameSpec::new(n).unwrap();
        for _ in 0..1000 {
            let x = DVector::from_fn(g.size(), |_, _| rng.gen_range(-1.0..1.0));
            worst = worst.max(h_algebra_identity_check(&g, &x).abs());
        }
    }
    outcome(worst < 1e-12, format!("max residual {worst:.2e} over 7000 samples"))
}

fn reports() -> &'static HashMap<ReproduceCase, CaseReport> {
    static REPORTS: std::sync::OnceLock<HashMap<ReproduceCase, CaseReport>> = std::sync::OnceLock::new();
    REPORTS.get_or_init(|| {
        let cfg = SolverConfig::default();
        ReproduceCase::ALL.into_iter().map(|c| (c, run_case(c, &cfg).unwrap().report)).collect()
    })
}

const FOUR: [ReproduceCase; 4] = [ReproduceCase::N3, ReproduceCase::N5, ReproduceCase::N7, ReproduceCase::N9];

fn c6_cross_solver() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for case in FOUR {
        let r = &reports()[&case];
        let ode = r.gaps.quasilinear_vs_gamma_ode.unwrap_or(f64::INFINITY);
        let el = r.gaps.quasilinear_vs_euler_lagrange.unwrap_or(f64::INFINITY);
        let nl = r.gaps.nonlinear_gamma_0_relative.unwrap_or(f64::INFINITY);
        pass &= ode < 1e-4 && el < 1e-4 && nl < 0.15 && r.all_converged();
        details.push(format!("{case}: ode {ode:.1e}, full EL {el:.1e}, nonlinear {:.1}%", 100.0 * nl));
    }
    outcome(pass, details.join("; "))
}

fn c7_closed_loop() -> Outcome {
    let worst = FOUR.iter().map(|c| reports()[c].closed_loop.max_violation).fold(0.0, f64::max);
    outcome(worst < 1e-5, format!("max | |x|^2 - r gamma^2 - C | = {worst:.2e}"))
}

fn c8_monotonicity() -> Outcome {
    let worst = reports()
        .values()
        .filter(|r| r.quasilinear.converged)
        .map(|r| r.max_gamma_rate)
        .fold(f64::MIN, f64::max);
    outcome(worst <= 1e-10, format!("max gamma' over all grids = {worst:.3e}"))
}

fn c9_limit_trend() -> Outcome {
    let err = |c| reports()[&c].gaps.closed_form_vs_gamma_ode.unwrap_or(f64::INFINITY);
    let (e5, e7, e9) = (err(ReproduceCase::N5), err(ReproduceCase::N7), err(ReproduceCase::N9));
    outcome(e9 < e7, format!("closed-form sup error N=7 {e7:.5}, N=9 {e9:.5} (N=5 recorded: {e5:.5})"))
}

fn c10_certificates() -> Outcome {
    let n5 = &reports()[&ReproduceCase::N5].certificates;
    let ric = &reports()[&ReproduceCase::Riccati].certificates;
    let max_s = ric.riccati_max_abs.unwrap_or(f64::INFINITY);
    let pass = n5.cholesky_verdict == Verdict::Sufficient
        && n5.cholesky_min_margin > 0.0
        && ric.cholesky_verdict != Verdict::Sufficient
        && ric.riccati_verdict == Some(Verdict::Bounded)
        && max_s.is_finite();
    outcome(
        pass,
        format!(
            "n5 margin {:.4} ({:?}); riccati case margin {:.4} ({:?}), sweep {} with max|S| {max_s:.3}",
            n5.cholesky_min_margin,
            n5.cholesky_verdict,
            ric.cholesky_min_margin,
            ric.cholesky_verdict,
            ric.riccati_verdict.map_or("failed".to_string(), |v| format!("{v:?}"))
        ),
    )
}

/// Index sets of size `m` (by bitmask) whose principal submatrices reproduce the small game.
fn brute_force_supports(small: &GameSpec, large: &GameSpec) -> BTreeSet<Vec<usize>> {
    let (m, n) = (small.size(), large.size());
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == m)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect::<Vec<_>>())
        .filter(|s| {
            (0..m).all(|a| (0..m).all(|b| large.l()[(s[a], s[b])] == small.l()[(a, b)] && large.m()[(s[a], s[b])] == small.m()[(a, b)]))
        })
        .collect()
}

fn c11_embedding() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (a, b) in [(1, 2), (2, 3)] {
        let (small, large) = (GameSpec::new(a).unwrap(), GameSpec::new(b).unwrap());
        let u_plus = interior_fixed_point(&small);
        let found = embedded_fixed_points(&small, &large, &u_plus, 0.0).unwrap();
        let residual = found
            .iter()
            .map(|v| controlled_field(&large, v.as_vector(), 0.0).unwrap().amax())
            .fold(0.0, f64::max);
        let supports: BTreeSet<Vec<usize>> =
            found.iter().map(|v| (0..large.size()).filter(|&i| v.as_vector()[i] > 0.0).collect()).collect();
        let oracle = brute_force_supports(&small, &large);
        pass &= residual < 1e-9 && supports == oracle && !oracle.is_empty();
        details.push(format!(
            "{}->{}: {} embeddings, oracle {}, max residual {residual:.1e}",
            small.size(),
            large.size(),
            supports.len(),
            oracle.len()
        ));
    }
    outcome(pass, details.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 11] = [
        ("construction identities", c1_construction, Duration::from_secs(1)),
        ("Jacobians at the barycenter", c2_jacobians, Duration::from_secs(1)),
        ("spectrum of the linearization", c3_stability, Duration::from_secs(1)),
        ("attraction from random starts", c4_attraction, Duration::from_secs(30)),
        ("H-algebra identity", c5_h_algebra_identity, Duration::from_secs(5)),
        ("cross-solver agreement", c6_cross_solver, Duration::from_secs(120)),
        ("closed-loop identity", c7_closed_loop, Duration::from_secs(120)),
        ("monotone control", c8_monotonicity, Duration::from_secs(120)),
        ("limit trend N=9 vs N=7", c9_limit_trend, Duration::from_secs(60)),
        ("sufficiency certificates", c10_certificates, Duration::from_secs(60)),
        ("fixed-point embedding", c11_embedding, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked"));
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name} ({:.2}s): {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            result.detail
        );
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
