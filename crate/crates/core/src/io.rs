//! CSV and JSON artifacts. Floats are written in shortest round-trip form and
//! every file is replaced atomically.

use crate::control::{CertificateReport, ControlSolution};
use crate::error::Result;
use crate::experiments::CaseOutcome;
use crate::quasilinear::ScalarTrajectory;
use crate::replicator::Trajectory;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Shortest decimal string that parses back to exactly `v`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Pretty JSON with a trailing newline; struct fields keep declaration order and maps are sorted.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| format_f64(v)))?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn indexed(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

/// Columns `t, u_1..u_N` and, if requested, `gamma`.
pub fn trajectory_csv(traj: &Trajectory, with_gamma: bool) -> Result<Vec<u8>> {
    let size = traj.meta.size;
    let mut header: Vec<String> = std::iter::once("t".to_string()).chain(indexed("u", size)).collect();
    if with_gamma {
        header.push("gamma".into());
    }
    let rows = traj.times.iter().zip(&traj.states).zip(&traj.gamma).map(|((&t, u), &g)| {
        let mut row = Vec::with_capacity(size + 2);
        row.push(t);
        row.extend(u.as_vector().iter());
        if with_gamma {
            row.push(g);
        }
        row
    });
    csv_bytes(header, rows)
}

/// Columns `t, x_1..x_n, lambda_1..lambda_n, gamma` (co-state columns omitted when absent).
pub fn control_solution_csv(sol: &ControlSolution) -> Result<Vec<u8>> {
    let n = sol.x.first().map_or(0, |x| x.len());
    let mut header: Vec<String> = std::iter::once("t".to_string()).chain(indexed("x", n)).collect();
    if sol.lambda.is_some() {
        header.extend(indexed("lambda", n));
    }
    header.push("gamma".into());
    let rows = (0..sol.times.len()).map(|i| {
        let mut row = vec![sol.times[i]];
        row.extend(sol.x[i].iter());
        if let Some(l) = &sol.lambda {
            row.extend(l[i].iter());
        }
        row.push(sol.gamma[i]);
        row
    });
    csv_bytes(header, rows)
}

/// Columns `t, <value>, <value>_dot`.
pub fn scalar_csv(traj: &ScalarTrajectory, value: &str) -> Result<Vec<u8>> {
    let header = vec!["t".into(), value.into(), format!("{value}_dot")];
    let rows = (0..traj.times.len()).map(|i| vec![traj.times[i], traj.values[i], traj.rates[i]]);
    csv_bytes(header, rows)
}

/// Columns `t, margin`.
pub fn certificate_csv(report: &CertificateReport) -> Result<Vec<u8>> {
    let rows = report.times.iter().zip(&report.margin_trace).map(|(&t, &m)| vec![t, m]);
    csv_bytes(vec!["t".into(), "margin".into()], rows)
}

#[derive(Serialize)]
struct Sidecar<'a, P: Serialize> {
    file: &'a str,
    columns: &'a str,
    parameters: &'a P,
}

/// Writes `<stem>.csv` and a `<stem>.json` sidecar describing it.
pub fn write_csv_with_sidecar<P: Serialize>(
    dir: &Path,
    stem: &str,
    csv: &[u8],
    columns: &str,
    parameters: &P,
) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    atomic_write(&csv_path, csv)?;
    let file = format!("{stem}.csv");
    atomic_write(&json_path, &to_json(&Sidecar { file: &file, columns, parameters })?)?;
    Ok(vec![csv_path, json_path])
}

/// Time-aligned controls from every solver on the quasi-linear grid.
pub fn comparison_csv(outcome: &CaseOutcome) -> Result<Vec<u8>> {
    let q = &outcome.quasilinear.control;
    let p = outcome.problem.control_problem()?;
    let nl_problem = crate::nonlinear::build_nonlinear(
        &outcome.problem.game,
        outcome.problem.r,
        outcome.problem.t_f,
        outcome.problem.u0.as_slice(),
        false,
    )?;
    let scalar = |s: &ScalarTrajectory, i: usize| s.values.get(i).copied().unwrap_or(f64::NAN);
    let header = ["t", "quasilinear", "euler_lagrange", "nonlinear", "gamma_ode", "limit_ode", "closed_form"]
        .map(String::from)
        .to_vec();
    let rows = q.times.iter().enumerate().map(|(i, &t)| {
        vec![
            t,
            q.gamma[i],
            outcome.euler_lagrange.as_ref().map_or(f64::NAN, |s| s.eval(&p, t).gamma),
            outcome.nonlinear.as_ref().map_or(f64::NAN, |s| s.eval(&nl_problem.control, t).gamma),
            outcome.gamma_ode.as_ref().map_or(f64::NAN, |s| scalar(s, i)),
            outcome.limit_ode.as_ref().map_or(f64::NAN, |s| scalar(s, i)),
            outcome.closed_form.map_or(0.0, |f| f.zeta(t).unwrap_or(f64::NAN)),
        ]
    });
    csv_bytes(header, rows)
}

/// Writes every artifact of a reproduction case into `dir` (created if needed).
pub fn write_case_artifacts(outcome: &CaseOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let params = &outcome.parameters;
    let mut written = Vec::new();
    let control_columns = "t, x_1..x_N (deviation from the barycenter, or shares for the nonlinear solve), lambda_1..lambda_N, gamma";
    written.extend(write_csv_with_sidecar(
        dir,
        "quasilinear",
        &control_solution_csv(&outcome.quasilinear.control)?,
        control_columns,
        params,
    )?);
    if let Ok(el) = &outcome.euler_lagrange {
        written.extend(write_csv_with_sidecar(dir, "euler_lagrange", &control_solution_csv(el)?, control_columns, params)?);
    }
    if let Ok(nl) = &outcome.nonlinear {
        written.extend(write_csv_with_sidecar(dir, "nonlinear", &control_solution_csv(nl)?, control_columns, params)?);
    }
    if let Ok(g) = &outcome.gamma_ode {
        written.extend(write_csv_with_sidecar(dir, "gamma_ode", &scalar_csv(g, "gamma")?, "t, gamma, gamma_dot", params)?);
    }
    if let Ok(z) = &outcome.limit_ode {
        written.extend(write_csv_with_sidecar(dir, "limit_ode", &scalar_csv(z, "zeta")?, "t, zeta, zeta_dot", params)?);
    }
    written.extend(write_csv_with_sidecar(
        dir,
        "cholesky",
        &certificate_csv(&outcome.cholesky)?,
        "t, margin = r - |H^T lambda|^2",
        params,
    )?);
    if let Ok(r) = &outcome.riccati {
        written.extend(write_csv_with_sidecar(dir, "riccati", &certificate_csv(r)?, "t, margin = max |S_ij|", params)?);
    }
    written.extend(write_csv_with_sidecar(
        dir,
        "comparison",
        &comparison_csv(outcome)?,
        "t, gamma from each solver (NaN where a solver failed)",
        params,
    )?);
    let report = dir.join("report.json");
    atomic_write(&report, &to_json(&outcome.report)?)?;
    written.push(report);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 1e300, 0.0, 123456.789] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("circ-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn scalar_csv_layout() {
        let t = ScalarTrajectory {
            times: vec![0.0, 1.0],
            values: vec![0.5, 0.0],
            rates: vec![-0.5, -0.25],
            converged: true,
            residual: 0.0,
            iterations: 1,
        };
        let s = String::from_utf8(scalar_csv(&t, "gamma").unwrap()).unwrap();
        assert_eq!(s, "t,gamma,gamma_dot\n0.0,0.5,-0.5\n1.0,0.0,-0.25\n");
    }
}
