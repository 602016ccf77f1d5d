//! CSV schemas. Numeric fields carry 17 significant digits; undefined
//! entries (singular directions) are written as `NaN`.

use std::io::Write;
use std::path::Path;

use anyhow::Context;

use fpu2d_core::kdv::SweepRow;
use fpu2d_core::solver::WaveSolution;
use fpu2d_core::spectral::{Field2, Parity, PeriodicGrid};
use fpu2d_core::verify::RateStudy;

pub fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

pub const SWEEP_HEADER: &str =
    "alpha,sigma0,lambda,d1,d2,p1,p2,sigma0_positive,c2_nonzero,wave_exists";

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> anyhow::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt(r.alpha),
            fmt(r.sigma0),
            fmt(r.lambda),
            fmt(r.d1),
            fmt(r.d2),
            fmt(r.p1),
            fmt(r.p2),
            r.sigma0_positive,
            r.c2_nonzero,
            r.wave_exists
        )?;
    }
    Ok(())
}

pub const CURVE_HEADER: &str = "z,t,bound";

/// `T(z)` against the comparison curve `delta0 min(|z|,2)^2`.
pub fn write_t_curve(path: &Path, z: &[f64], t: &[f64], delta0: f64) -> anyhow::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{CURVE_HEADER}")?;
    for (zi, ti) in z.iter().zip(t) {
        let bound = delta0 * zi.abs().min(2.0).powi(2);
        writeln!(out, "{},{},{}", fmt(*zi), fmt(*ti), fmt(bound))?;
    }
    Ok(())
}

pub const DET_HEADER: &str = "z,det,lower_bound";

pub fn write_det_curve(
    path: &Path,
    grid: &PeriodicGrid,
    det: &[f64],
    bound: f64,
) -> anyhow::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{DET_HEADER}")?;
    // emit in increasing z for plotting
    let mut order: Vec<usize> = (0..grid.size()).collect();
    order.sort_by(|&a, &b| grid.freqs()[a].total_cmp(&grid.freqs()[b]));
    for j in order {
        writeln!(out, "{},{},{}", fmt(grid.freqs()[j]), fmt(det[j]), fmt(bound))?;
    }
    Ok(())
}

pub const DISPERSION_HEADER: &str = "z,mu1,mu2";

pub fn write_dispersion(path: &Path, z: &[f64], mu1: &[f64], mu2: &[f64]) -> anyhow::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{DISPERSION_HEADER}")?;
    for i in 0..z.len() {
        writeln!(out, "{},{},{}", fmt(z[i]), fmt(mu1[i]), fmt(mu2[i]))?;
    }
    Ok(())
}

pub const SOLUTION_HEADER: &str = "xi,w1,w2,v1,v2";

/// Wave profile with a `# key=value` metadata preamble.
pub fn write_solution(path: &Path, alpha: f64, sol: &WaveSolution) -> anyhow::Result<()> {
    let mut out = create(path)?;
    let m = [
        ("alpha", alpha),
        ("eps", sol.eps),
        ("c_eps", sol.c_eps),
        ("sigma0", sol.c_eps * sol.c_eps - sol.eps * sol.eps),
        ("residual", sol.residual),
        ("corrector_norm", sol.corrector_norm),
        ("half_length", sol.w.grid().half_length()),
    ];
    for (k, v) in m {
        writeln!(out, "# {k}={}", fmt(v))?;
    }
    writeln!(out, "{SOLUTION_HEADER}")?;
    let grid = sol.w.grid();
    for (n, xi) in grid.nodes().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt(xi),
            fmt(sol.w.component(0)[n]),
            fmt(sol.w.component(1)[n]),
            fmt(sol.v.component(0)[n]),
            fmt(sol.v.component(1)[n]),
        )?;
    }
    Ok(())
}

/// Reload a solution CSV written by [`write_solution`].
pub fn read_solution(path: &Path) -> anyhow::Result<(f64, f64, f64, Field2, Field2)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut alpha = None;
    let mut eps = None;
    let mut c_eps = None;
    let mut rows: Vec<[f64; 5]> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.trim().splitn(2, '=');
            match (it.next(), it.next()) {
                (Some("alpha"), Some(v)) => alpha = v.parse().ok(),
                (Some("eps"), Some(v)) => eps = v.parse().ok(),
                (Some("c_eps"), Some(v)) => c_eps = v.parse().ok(),
                _ => {}
            }
        } else if !line.starts_with("xi,") && !line.trim().is_empty() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("bad row in {}", path.display()))?;
            anyhow::ensure!(vals.len() == 5, "expected 5 columns in {}", path.display());
            rows.push([vals[0], vals[1], vals[2], vals[3], vals[4]]);
        }
    }
    let (alpha, eps, c_eps) = (
        alpha.context("missing alpha metadata")?,
        eps.context("missing eps metadata")?,
        c_eps.context("missing c_eps metadata")?,
    );
    anyhow::ensure!(!rows.is_empty(), "no samples in {}", path.display());
    let half_length = -rows[0][0];
    let grid = PeriodicGrid::new(half_length, rows.len())?;
    let w = Field2::new(
        &grid,
        rows.iter().map(|r| r[1]).collect(),
        rows.iter().map(|r| r[2]).collect(),
        Parity::Even,
    );
    let v = Field2::new(
        &grid,
        rows.iter().map(|r| r[3]).collect(),
        rows.iter().map(|r| r[4]).collect(),
        Parity::Even,
    );
    Ok((alpha, eps, c_eps, w, v))
}

pub const SUMMARY_HEADER: &str = "alpha,eps,c_eps,corrector_norm,residual,iterations";

pub fn write_summary(path: &Path, rows: &[(f64, &WaveSolution)]) -> anyhow::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{SUMMARY_HEADER}")?;
    for (alpha, s) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt(*alpha),
            fmt(s.eps),
            fmt(s.c_eps),
            fmt(s.corrector_norm),
            fmt(s.residual),
            s.history.len()
        )?;
    }
    Ok(())
}

pub const RATE_HEADER: &str = "eps,deviation,corrector_norm,residual,ratio";

/// Rate table; the ratio column pairs each row with its successor, so it is
/// empty on the first row.
pub fn write_rate(path: &Path, study: &RateStudy) -> anyhow::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{RATE_HEADER}")?;
    for (i, r) in study.rows.iter().enumerate() {
        let ratio = if i == 0 {
            String::new()
        } else {
            fmt(study.ratios[i - 1])
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt(r.eps),
            fmt(r.deviation),
            fmt(r.corrector_norm),
            fmt(r.residual),
            ratio
        )?;
    }
    Ok(())
}
