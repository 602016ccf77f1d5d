//! Command implementations: analyze, check, solve, verify.
//!
//! Each run writes into one output directory: a `MANIFEST` with inputs,
//! tolerances, produced files and failures, the echoed config, CSV tables,
//! and SVG figures. Exit codes: 0 success, 2 configuration, 3 assumption
//! failure, 4 nonconvergence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;

use fpu2d_core::kdv::{
    check_genericity, macro_coefficients, sweep_alpha, MacroCoefficients,
};
use fpu2d_core::lattice::{
    couplings, extract_taylor, remainder_bound_check, LatticeSpec, TaylorData,
};
use fpu2d_core::operators::OperatorContext;
use fpu2d_core::solver::{continuation, WaveSolution};
use fpu2d_core::spectral::PeriodicGrid;
use fpu2d_core::verify::{
    check_invertibility_bound, default_z_grid, dispersion_spectrum, lattice_dynamics, rate_study,
    reconstructed_t, solve_for_dynamics, wave_residual, DynamicsConfig, RateRow, RateStudy,
};

use crate::config::RunConfig;
use crate::csvio;
use crate::svg::{line_chart, Curve};

pub struct Runner {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
    files: Mutex<Vec<String>>,
    failures: Mutex<Vec<String>>,
}

impl Runner {
    pub fn new(cfg: RunConfig, out: PathBuf, threads: usize) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&out)
            .with_context(|| format!("cannot create output directory {}", out.display()))?;
        Ok(Self {
            cfg,
            out,
            threads: threads.max(1),
            files: Mutex::new(Vec::new()),
            failures: Mutex::new(Vec::new()),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record(&self, name: &str) {
        self.files.lock().unwrap().push(name.to_string());
    }

    fn record_failure(&self, what: String) {
        self.failures.lock().unwrap().push(what);
    }

    fn write_manifest(&self, command: &str) -> anyhow::Result<()> {
        let echo = self.cfg.to_toml();
        std::fs::write(self.path("config_used.toml"), &echo)?;
        let mut m = String::new();
        writeln!(m, "fpu2d run manifest")?;
        writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(m, "command = {command}")?;
        writeln!(m, "threads = {}", self.threads)?;
        writeln!(m, "config = config_used.toml")?;
        writeln!(
            m,
            "tolerances: tol_fp = {:e}, tol_lin = {:e}, delta0 = {}",
            self.cfg.solve.tol_fp, self.cfg.solve.tol_lin, self.cfg.check.delta0
        )?;
        writeln!(m, "outputs:")?;
        for f in self.files.lock().unwrap().iter() {
            writeln!(m, "  - {f}")?;
        }
        let failures = self.failures.lock().unwrap();
        if failures.is_empty() {
            writeln!(m, "failures: none")?;
        } else {
            writeln!(m, "failures:")?;
            for f in failures.iter() {
                writeln!(m, "  - {f}")?;
            }
        }
        std::fs::write(self.path("MANIFEST"), m)?;
        Ok(())
    }

    fn grid_for(&self, macros: &MacroCoefficients) -> anyhow::Result<std::sync::Arc<PeriodicGrid>> {
        Ok(match self.cfg.grid.half_length {
            Some(l) => PeriodicGrid::new(l, self.cfg.grid.size)?,
            None => PeriodicGrid::for_kdv(macros.d1, self.cfg.grid.size)?,
        })
    }

    /// Direction sweep of the macroscopic constants: CSV plus sigma0,
    /// lambda, and shape-parameter figures.
    pub fn analyze(&self) -> anyhow::Result<i32> {
        let spec = self.cfg.lattice_spec()?;
        let taylor = extract_taylor(&spec)?;
        let alphas = self.cfg.alpha_values();
        let rows = sweep_alpha(&spec, &taylor, &alphas);
        let csv = format!("analyze_{}.csv", spec.name);
        csvio::write_sweep(&self.path(&csv), &rows)?;
        self.record(&csv);
        if !rows.is_empty() {
            let a: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
            let plots: [(&str, &str, Vec<Vec<f64>>, Vec<&str>); 3] = [
                (
                    "sigma0.svg",
                    "squared sound speed vs angle",
                    vec![rows.iter().map(|r| r.sigma0).collect()],
                    vec!["sigma0"],
                ),
                (
                    "lambda.svg",
                    "polarization ratio vs angle",
                    vec![rows.iter().map(|r| r.lambda).collect()],
                    vec!["lambda"],
                ),
                (
                    "shape_params.svg",
                    "wave shape parameters vs angle",
                    vec![
                        rows.iter().map(|r| r.p1).collect(),
                        rows.iter().map(|r| r.p2).collect(),
                    ],
                    vec!["p1", "p2"],
                ),
            ];
            for (file, title, data, labels) in plots {
                let curves: Vec<Curve> = data
                    .iter()
                    .zip(&labels)
                    .map(|(y, label)| Curve {
                        label,
                        x: &a,
                        y,
                        dashed: false,
                    })
                    .collect();
                line_chart(&self.path(file), title, "alpha", "", &curves)?;
                self.record(file);
            }
        }
        self.write_manifest("analyze")?;
        Ok(0)
    }

    /// Assumption reports per requested angle; exit 3 when any fails.
    pub fn check(&self) -> anyhow::Result<i32> {
        let spec = self.cfg.lattice_spec()?;
        let taylor = extract_taylor(&spec)?;
        let alphas = self.cfg.alpha_values();
        let zgrid = default_z_grid();
        let mut all_ok = true;
        for (ai, &alpha) in alphas.iter().enumerate() {
            let ok = self.check_one(&spec, &taylor, ai, alpha, &zgrid)?;
            if !ok {
                self.record_failure(format!("alpha = {alpha}: assumption check failed"));
            }
            all_ok &= ok;
        }
        self.write_manifest("check")?;
        Ok(if all_ok { 0 } else { 3 })
    }

    fn check_one(
        &self,
        spec: &LatticeSpec,
        taylor: &TaylorData,
        ai: usize,
        alpha: f64,
        zgrid: &[f64],
    ) -> anyhow::Result<bool> {
        let dir = couplings(spec, alpha);
        let mut report = String::new();
        writeln!(report, "assumption report: lattice = {}, alpha = {alpha}", spec.name)?;

        let sym_defect = taylor.symmetry_defect();
        let a1_ok = sym_defect <= 1e-10;
        writeln!(
            report,
            "gradient symmetries (linear/quadratic coefficients): {} (defect {sym_defect:.3e})",
            pass_str(a1_ok)
        )?;

        let remainder = remainder_bound_check(taylor, 0.1)?;
        writeln!(
            report,
            "remainder regularity: max cubic-Lipschitz quotient {:.6e} on radius {} ({} sample pairs)",
            remainder.max_quotient, remainder.radius, remainder.sample_pairs
        )?;

        let macros = match macro_coefficients(taylor, &dir.couplings) {
            Ok(m) => m,
            Err(e) => {
                writeln!(report, "genericity: FAIL ({e})")?;
                let name = format!("assumptions_a{ai}.txt");
                std::fs::write(self.path(&name), report)?;
                self.record(&name);
                return Ok(false);
            }
        };
        let a2 = check_genericity(&macros);
        for c in &a2.conditions {
            writeln!(
                report,
                "genericity condition {}: {} (value {:.6e}, margin {:.3e})",
                c.name,
                pass_str(c.pass),
                c.value,
                c.margin
            )?;
        }
        writeln!(
            report,
            "KdV wave exists (sigma0 > 0, lambda finite, d1 > 0, d2 != 0): {}",
            pass_str(a2.wave_exists)
        )?;

        let a4 = check_invertibility_bound(taylor, &macros, &dir.couplings, zgrid, self.cfg.check.delta0);
        writeln!(
            report,
            "invertibility bound T(z) >= {} min(|z|,2)^2: {} (min margin {:.6e} at z = {:.4}, {} grid points)",
            a4.delta0,
            pass_str(a4.pass),
            a4.min_margin,
            a4.worst_z,
            a4.grid_points
        )?;
        writeln!(
            report,
            "quadratic coefficient of T at 0: reconstructed {:.6e} (remark formula gives {:.6e})",
            a4.tau_reconstructed, a4.tau_remark
        )?;

        // spectrum curves and the sigma0 dominance check
        let zshort: Vec<f64> = (0..601).map(|i| 30.0 * i as f64 / 600.0).collect();
        let curves = dispersion_spectrum(taylor, &dir.couplings, &zshort);
        writeln!(
            report,
            "dispersion: sigma0 = {:.8} dominates both branches: {} (max mu {:.8})",
            macros.sigma0,
            pass_str(curves.max_mu <= macros.sigma0 + 1e-10),
            curves.max_mu
        )?;
        let disp_csv = format!("dispersion_a{ai}.csv");
        csvio::write_dispersion(&self.path(&disp_csv), &curves.z, &curves.mu1, &curves.mu2)?;
        self.record(&disp_csv);

        let t_values: Vec<f64> = zgrid
            .iter()
            .map(|&z| reconstructed_t(taylor, &macros, &dir.couplings, z))
            .collect();
        let t_csv = format!("t_curve_a{ai}.csv");
        csvio::write_t_curve(&self.path(&t_csv), zgrid, &t_values, a4.delta0)?;
        self.record(&t_csv);
        let bound_curve: Vec<f64> = zgrid
            .iter()
            .map(|&z| a4.delta0 * z.abs().min(2.0).powi(2))
            .collect();
        let t_svg = format!("t_curve_a{ai}.svg");
        line_chart(
            &self.path(&t_svg),
            &format!("invertibility test, alpha = {alpha:.4}"),
            "z",
            "T(z)",
            &[
                Curve {
                    label: "T",
                    x: zgrid,
                    y: &t_values,
                    dashed: false,
                },
                Curve {
                    label: "bound",
                    x: zgrid,
                    y: &bound_curve,
                    dashed: true,
                },
            ],
        )?;
        self.record(&t_svg);

        // determinant symbol curves for the requested eps values
        if a2.wave_exists {
            let grid = self.grid_for(&macros)?;
            for (ei, &eps) in self.cfg.solve.epsilons.iter().enumerate() {
                match OperatorContext::new(
                    taylor.clone(),
                    macros.clone(),
                    dir.couplings.clone(),
                    eps,
                    &grid,
                ) {
                    Ok(ctx) => {
                        let bound = 2.0 * macros.sigma0 - (macros.c1 + macros.c3);
                        let name = format!("det_a{ai}_e{ei}.csv");
                        csvio::write_det_curve(
                            &self.path(&name),
                            &grid,
                            &ctx.symbols().det,
                            bound,
                        )?;
                        self.record(&name);
                        writeln!(
                            report,
                            "det symbol at eps = {eps}: min {:.8e} vs bound {:.8e}",
                            ctx.symbols().det_min(),
                            bound
                        )?;
                    }
                    Err(e) => {
                        writeln!(report, "det symbol at eps = {eps}: FAIL ({e})")?;
                    }
                }
            }
        }

        let name = format!("assumptions_a{ai}.txt");
        std::fs::write(self.path(&name), report)?;
        self.record(&name);
        Ok(a1_ok && a2.wave_exists && a4.pass)
    }

    /// Solve every (alpha, eps) pair; per-solution CSV and profile figure,
    /// plus a summary table. Partial outputs are kept on failure.
    pub fn solve(&self) -> anyhow::Result<i32> {
        let spec = self.cfg.lattice_spec()?;
        let alphas = self.cfg.alpha_values();
        let solve_cfg = self.cfg.solve.to_config();
        let eps_list = self.cfg.solve.epsilons.clone();

        // fan (alpha -> warm-started continuation) jobs over a worker pool
        let jobs: Vec<(usize, f64)> = alphas.iter().copied().enumerate().collect();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, Result<Vec<WaveSolution>, fpu2d_core::Error>)>> =
            Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..self.threads.min(jobs.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let (ai, alpha) = jobs[i];
                    let run = || -> Result<Vec<WaveSolution>, fpu2d_core::Error> {
                        let taylor = extract_taylor(&spec)?;
                        let dir = couplings(&spec, alpha);
                        let macros = macro_coefficients(&taylor, &dir.couplings)?;
                        let grid = match self.cfg.grid.half_length {
                            Some(l) => PeriodicGrid::new(l, self.cfg.grid.size)?,
                            None => PeriodicGrid::for_kdv(macros.d1, self.cfg.grid.size)?,
                        };
                        continuation(&spec, alpha, &eps_list, &solve_cfg, &grid)
                    };
                    results.lock().unwrap().push((ai, run()));
                });
            }
        });
        let mut results = results.into_inner().unwrap();
        results.sort_by_key(|r| r.0);

        let mut summary: Vec<(f64, WaveSolution)> = Vec::new();
        let mut failed = false;
        for (ai, res) in results {
            let alpha = alphas[ai];
            match res {
                Ok(sols) => {
                    for (ei, sol) in sols.into_iter().enumerate() {
                        let name = format!("solution_a{ai}_e{ei}.csv");
                        csvio::write_solution(&self.path(&name), alpha, &sol)?;
                        self.record(&name);
                        let fig = format!("profile_a{ai}_e{ei}.svg");
                        let grid = sol.w.grid().clone();
                        let xi: Vec<f64> = grid.nodes().collect();
                        line_chart(
                            &self.path(&fig),
                            &format!("velocity profile, alpha = {alpha:.4}, eps = {}", sol.eps),
                            "xi",
                            "W",
                            &[
                                Curve {
                                    label: "W1",
                                    x: &xi,
                                    y: sol.w.component(0),
                                    dashed: false,
                                },
                                Curve {
                                    label: "W2",
                                    x: &xi,
                                    y: sol.w.component(1),
                                    dashed: false,
                                },
                            ],
                        )?;
                        self.record(&fig);
                        summary.push((alpha, sol));
                    }
                }
                Err(e) => {
                    failed = true;
                    self.record_failure(format!("alpha = {alpha}: {e}"));
                }
            }
        }
        let rows: Vec<(f64, &WaveSolution)> = summary.iter().map(|(a, s)| (*a, s)).collect();
        csvio::write_summary(&self.path("solutions.csv"), &rows)?;
        self.record("solutions.csv");
        self.write_manifest("solve")?;
        Ok(if failed { 4 } else { 0 })
    }

    /// Rate study (solved fresh or from stored solution files) and the
    /// optional dynamics cross-check.
    pub fn verify(&self) -> anyhow::Result<i32> {
        let spec = self.cfg.lattice_spec()?;
        let alpha = self.cfg.single_alpha()?;
        let solve_cfg = self.cfg.solve.to_config();

        let study = if let Some(dir) = &self.cfg.verify.solutions_dir {
            self.rate_from_files(&spec, alpha, Path::new(dir))?
        } else {
            let taylor = extract_taylor(&spec)?;
            let k = couplings(&spec, alpha).couplings;
            let macros = macro_coefficients(&taylor, &k)?;
            let grid = self.grid_for(&macros)?;
            rate_study(&spec, alpha, &self.cfg.verify.rate_epsilons, &solve_cfg, &grid)?
        };
        csvio::write_rate(&self.path("rate.csv"), &study)?;
        self.record("rate.csv");
        let mut report = String::new();
        writeln!(report, "rate study: alpha = {alpha}")?;
        for (i, r) in study.rows.iter().enumerate() {
            let ratio = if i == 0 {
                "-".into()
            } else {
                format!("{:.4}", study.ratios[i - 1])
            };
            writeln!(
                report,
                "eps = {:<7} |W - W0| = {:.6e}  residual = {:.3e}  ratio = {ratio}",
                r.eps, r.deviation, r.residual
            )?;
        }
        writeln!(
            report,
            "quadratic law (ratios in [3.2, 4.8]): {}",
            pass_str(study.pass)
        )?;

        if self.cfg.verify.dynamics {
            let dyn_cfg = DynamicsConfig {
                n1: self.cfg.verify.dynamics_box[0],
                n2: self.cfg.verify.dynamics_box[1],
                dt: self.cfg.verify.dynamics_dt,
                horizon: None,
                samples: 50,
            };
            let eps = self.cfg.verify.dynamics_eps;
            let outcome = solve_for_dynamics(&spec, alpha, eps, &dyn_cfg, &solve_cfg)
                .and_then(|sol| lattice_dynamics(&spec, alpha, &sol, &dyn_cfg));
            match outcome {
                Ok(rep) => {
                    writeln!(report, "dynamics cross-check: eps = {eps}")?;
                    writeln!(
                        report,
                        "  measured speed {:.10} vs c_eps {:.10} (relative error {:.3e})",
                        rep.measured_speed, rep.c_eps, rep.speed_rel_err
                    )?;
                    writeln!(report, "  shape drift {:.3e}", rep.shape_drift)?;
                    writeln!(report, "  energy drift {:.3e}", rep.energy_drift)?;
                    writeln!(report, "  transverse ratio {:.3e}", rep.transverse_ratio)?;
                    writeln!(report, "  steps {}", rep.steps)?;
                }
                Err(e) => {
                    self.record_failure(format!("dynamics: {e}"));
                    std::fs::write(self.path("verify.txt"), &report)?;
                    self.record("verify.txt");
                    self.write_manifest("verify")?;
                    return Err(e.into());
                }
            }
        }
        std::fs::write(self.path("verify.txt"), report)?;
        self.record("verify.txt");
        self.write_manifest("verify")?;
        Ok(if study.pass { 0 } else { 4 })
    }

    /// Reconstruct a rate table from stored solution CSVs (no re-solve).
    fn rate_from_files(
        &self,
        spec: &LatticeSpec,
        alpha: f64,
        dir: &Path,
    ) -> anyhow::Result<RateStudy> {
        let mut rows: Vec<RateRow> = Vec::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("cannot read solutions dir {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("solution_") && n.ends_with(".csv"))
                    .unwrap_or(false)
            })
            .collect();
        entries.sort();
        let taylor = extract_taylor(spec)?;
        for path in entries {
            let (a, eps, _c, w, v) = csvio::read_solution(&path)?;
            if (a - alpha).abs() > 1e-12 {
                continue;
            }
            let k = couplings(spec, a).couplings;
            let macros = macro_coefficients(&taylor, &k)?;
            let ctx = OperatorContext::new(taylor.clone(), macros, k, eps, w.grid())?;
            rows.push(RateRow {
                eps,
                deviation: eps * eps * v.l2(),
                corrector_norm: v.l2(),
                residual: wave_residual(&ctx, &w),
            });
        }
        anyhow::ensure!(
            rows.len() >= 2,
            "need at least two stored solutions for alpha = {alpha} in the solutions directory"
        );
        rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let ratios: Vec<f64> = rows
            .windows(2)
            .map(|w| w[0].deviation / w[1].deviation)
            .collect();
        let pass = ratios.iter().all(|r| *r >= 3.2 && *r <= 4.8);
        Ok(RateStudy { rows, ratios, pass })
    }
}

fn pass_str(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}
