//! Fixed-point construction of the corrector, wave assembly, and
//! eps-continuation.
//!
//! The corrector solves `L_eps V = eps^2 (Q_eps[V] + N_eps[W0; V]) +
//! R_eps[W0] + P_eps[W0]` on the even subspace; the map
//! `V -> L_eps^{-1}(...)` contracts with factor `O(eps^{3/2})`, so a handful
//! of iterations reach the floor set by rounding in the remainder terms.
//! The assembled wave is `W_eps = W0 + eps^2 V` traveling at speed
//! `c_eps = sqrt(sigma0 + eps^2)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kdv::macro_coefficients;
use crate::lattice::{couplings, extract_taylor, LatticeSpec};
use crate::operators::OperatorContext;
use crate::spectral::{Field2, PeriodicGrid};

/// Tunables of the corrector iteration.
#[derive(Clone, Debug)]
pub struct SolveConfig {
    /// Stop when the update norm `|V_{k+1} - V_k|_2` falls below this.
    pub tol_fp: f64,
    /// Hard iteration cap; exceeding it is a nonconvergence error.
    pub max_iterations: usize,
    /// Relaxation weight in `(0, 1]`; 1 is the plain fixed-point map.
    pub relaxation: f64,
    /// Ball guard: iterates may not exceed `ball_factor * |L^{-1}(R+P)|_2`.
    pub ball_factor: f64,
    /// Relative tolerance of each inner linear solve.
    pub tol_lin: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol_fp: 1e-11,
            max_iterations: 200,
            relaxation: 1.0,
            ball_factor: 10.0,
            tol_lin: 1e-12,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol_fp > 0.0) {
            return Err(Error::Config("tol_fp must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Config(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

/// A converged lattice wave at one `eps`.
#[derive(Clone, Debug)]
pub struct WaveSolution {
    pub eps: f64,
    /// Wave speed `sqrt(sigma0 + eps^2)`.
    pub c_eps: f64,
    /// Corrector `V_eps`.
    pub v: Field2,
    /// KdV limit profile `W0 = (W*, lambda W*)`.
    pub w0: Field2,
    /// Velocity profile `W_eps = W0 + eps^2 V_eps`.
    pub w: Field2,
    /// Update norms per fixed-point iteration.
    pub history: Vec<f64>,
    pub corrector_norm: f64,
    /// Relative residual of the full nonlinear eigenvalue equation.
    pub residual: f64,
}

/// Run the corrector fixed point
/// `V <- (1 - theta) V + theta L^{-1}(eps^2 (Q[V] + N[W0; V]) + R + P)`.
///
/// Terminates when the update norm reaches `tol_fp`, or when it stagnates
/// at the rounding floor of the remainder evaluation (no factor-2 progress
/// over several steps once the update is already below `1e-7` of the
/// iterate norm). Returns the even corrector and the update history.
pub fn fixed_point(
    ctx: &OperatorContext,
    v_init: &Field2,
    config: &SolveConfig,
) -> Result<(Field2, Vec<f64>)> {
    config.validate()?;
    let r = ctx.residual_r(ctx.w0());
    let constant = r.axpy(1.0, ctx.p_at_w0()).even_project();
    let theta = config.relaxation;
    let e2 = ctx.eps * ctx.eps;
    let mut v = v_init.even_project();
    // ball guard from the size of the constant term's preimage
    let first = ctx.solve_l(&constant, config.tol_lin)?;
    let ball = config.ball_factor * first.l2().max(1e-30);
    let mut history = Vec::new();
    let mut first_delta = f64::NAN;
    let mut best_delta = f64::INFINITY;
    let mut stagnant = 0usize;
    for it in 0..config.max_iterations {
        let rhs = ctx
            .apply_q(&v)
            .axpy(1.0, &ctx.apply_n(&v)?)
            .scale(e2)
            .axpy(1.0, &constant);
        let next = if it == 0 && v.l2() == 0.0 {
            first.clone()
        } else {
            ctx.solve_l(&rhs, config.tol_lin)?
        };
        let relaxed = v.scale(1.0 - theta).axpy(theta, &next).even_project();
        let delta = relaxed.sub(&v).l2();
        history.push(delta);
        v = relaxed;
        let vnorm = v.l2();
        if it == 0 {
            first_delta = delta.max(1e-300);
        }
        if vnorm > ball {
            return Err(Error::BallEscape {
                norm: vnorm,
                bound: ball,
            });
        }
        if delta <= config.tol_fp {
            return Ok((v, history));
        }
        // rounding-floor detection: the eps^-6 remainder evaluation caps the
        // attainable update norm (roughly machine epsilon / eps^6); accept
        // once a deeply descended iteration stops making progress there
        if delta < 0.5 * best_delta {
            best_delta = delta;
            stagnant = 0;
        } else {
            stagnant += 1;
            let descended =
                best_delta <= 1e-3 * first_delta && best_delta <= 1e-5 * vnorm.max(1.0);
            if stagnant >= 4 && descended {
                return Ok((v, history));
            }
        }
    }
    let last = *history.last().unwrap_or(&f64::NAN);
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        last_delta: last,
        history,
    })
}

/// Assemble `W_eps = W0 + eps^2 V` and its diagnostics.
pub fn assemble_wave(ctx: &OperatorContext, v: &Field2, history: Vec<f64>) -> WaveSolution {
    let e2 = ctx.eps * ctx.eps;
    let w = ctx.w0().axpy(e2, v);
    let residual = crate::verify::wave_residual(ctx, &w);
    WaveSolution {
        eps: ctx.eps,
        c_eps: ctx.wave_speed(),
        v: v.clone(),
        w0: ctx.w0().clone(),
        w,
        history,
        corrector_norm: v.l2(),
        residual,
    }
}

/// Solve one `(direction, eps)` from a cold start.
pub fn solve_wave(ctx: &OperatorContext, config: &SolveConfig) -> Result<WaveSolution> {
    let (v, history) = fixed_point(ctx, &Field2::zeros(ctx.grid()), config)?;
    Ok(assemble_wave(ctx, &v, history))
}

/// Build the operator context for a lattice direction at one `eps`.
pub fn build_context(
    spec: &LatticeSpec,
    alpha: f64,
    eps: f64,
    grid: &Arc<PeriodicGrid>,
) -> Result<OperatorContext> {
    let taylor = extract_taylor(spec)?;
    let dir = couplings(spec, alpha);
    let macros = macro_coefficients(&taylor, &dir.couplings)?;
    OperatorContext::new(taylor, macros, dir.couplings, eps, grid)
}

/// Grid sized for the direction's KdV coefficient with the given resolution.
pub fn default_grid(spec: &LatticeSpec, alpha: f64, size: usize) -> Result<Arc<PeriodicGrid>> {
    let taylor = extract_taylor(spec)?;
    let dir = couplings(spec, alpha);
    let macros = macro_coefficients(&taylor, &dir.couplings)?;
    PeriodicGrid::for_kdv(macros.d1, size)
}

/// Solve a descending `eps` list, warm-starting each solve from the previous
/// corrector. Errors carry the `eps` at which they occurred.
pub fn continuation(
    spec: &LatticeSpec,
    alpha: f64,
    eps_list: &[f64],
    config: &SolveConfig,
    grid: &Arc<PeriodicGrid>,
) -> Result<Vec<WaveSolution>> {
    let mut out = Vec::with_capacity(eps_list.len());
    let mut warm: Option<Field2> = None;
    for &eps in eps_list {
        let ctx = build_context(spec, alpha, eps, grid)
            .map_err(|e| annotate_eps(e, eps))?;
        let init = warm.clone().unwrap_or_else(|| Field2::zeros(grid));
        let (v, history) = fixed_point(&ctx, &init, config).map_err(|e| annotate_eps(e, eps))?;
        warm = Some(v.clone());
        out.push(assemble_wave(&ctx, &v, history));
    }
    Ok(out)
}

fn annotate_eps(e: Error, eps: f64) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("at eps = {eps}: {m}")),
        Error::Domain(m) => Error::Domain(format!("at eps = {eps}: {m}")),
        Error::InternalCheck(m) => Error::InternalCheck(format!("at eps = {eps}: {m}")),
        other => other,
    }
}

/// Antiderivative `Q_eps(xi) = int_0^xi W_eps` of a velocity profile: the
/// spectral antiderivative of the mean-free part plus the explicit linear
/// ramp `mean * xi`. `Q_eps` grows linearly because the profile has nonzero
/// mean.
#[derive(Clone, Debug)]
pub struct DisplacementProfile {
    /// Antiderivative samples per component, `q[c][n]`, with `q(0) = 0`.
    pub q: [Vec<f64>; 2],
    /// Periodic part alone (mean-free antiderivative), `q(0) = 0`.
    pub q_periodic: [Vec<f64>; 2],
    /// Mean of each component of the profile.
    pub mean: [f64; 2],
}

pub fn displacement_profile(w: &Field2) -> DisplacementProfile {
    let grid = w.grid();
    let n = grid.size();
    let center = grid.center();
    let mut q = [vec![0.0; n], vec![0.0; n]];
    let mut qp = [vec![0.0; n], vec![0.0; n]];
    let mut mean = [0.0; 2];
    for c in 0..2 {
        let data = w.component(c);
        mean[c] = data.iter().sum::<f64>() / n as f64;
        let mut spec = grid.forward_fft(data);
        // divide by i z; zero mode dropped (mean handled by the ramp), and
        // the real Nyquist coefficient has no odd antiderivative partner
        spec[0] = rustfft::num_complex::Complex::new(0.0, 0.0);
        for (j, &z) in grid.freqs().iter().enumerate().skip(1) {
            let val = spec[j];
            spec[j] = rustfft::num_complex::Complex::new(val.im / z, -val.re / z);
        }
        spec[n / 2] = rustfft::num_complex::Complex::new(0.0, 0.0);
        let raw = grid.inverse_fft_real(spec);
        let offset = raw[center];
        for i in 0..n {
            qp[c][i] = raw[i] - offset;
            q[c][i] = qp[c][i] + mean[c] * grid.node(i);
        }
    }
    DisplacementProfile {
        q,
        q_periodic: qp,
        mean,
    }
}

impl DisplacementProfile {
    /// Spectral derivative of the stored antiderivative; reproduces the
    /// profile it was built from.
    pub fn derivative(&self, grid: &Arc<PeriodicGrid>) -> [Vec<f64>; 2] {
        let mut out = [vec![0.0; grid.size()], vec![0.0; grid.size()]];
        for c in 0..2 {
            let mut spec = grid.forward_fft(&self.q_periodic[c]);
            for (j, &z) in grid.freqs().iter().enumerate() {
                let val = spec[j];
                spec[j] = rustfft::num_complex::Complex::new(-val.im * z, val.re * z);
            }
            // Nyquist mode of a real derivative must stay real; its symbol
            // i*z maps the real Nyquist coefficient to imaginary, so drop it
            let ny = grid.size() / 2;
            spec[ny] = rustfft::num_complex::Complex::new(0.0, 0.0);
            let der = grid.inverse_fft_real(spec);
            for i in 0..grid.size() {
                out[c][i] = der[i] + self.mean[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::builtin_lattice;
    use crate::spectral::Parity;
    use approx::assert_relative_eq;

    const R_STAR: f64 = 0.8047;
    const PI_8: f64 = std::f64::consts::FRAC_PI_8;

    fn ctx(alpha: f64, eps: f64, n: usize) -> OperatorContext {
        let spec = builtin_lattice("square", R_STAR).unwrap();
        let grid = default_grid(&spec, alpha, n).unwrap();
        build_context(&spec, alpha, eps, &grid).unwrap()
    }

    #[test]
    fn fixed_point_contracts_geometrically() {
        let c = ctx(PI_8, 0.1, 1024);
        let (v, history) = fixed_point(&c, &Field2::zeros(c.grid()), &SolveConfig::default()).unwrap();
        assert!(history.len() <= 50, "took {} iterations", history.len());
        // early updates shrink by at least ~eps^{3/2}-ish factors; demand a
        // conservative factor 1/2 on the recorded descent
        for w in history.windows(2).take(4) {
            assert!(w[1] <= 0.5 * w[0], "no contraction: {history:?}");
        }
        assert!(v.parity() == Parity::Even);
        let defect = v.evenness_defect();
        assert!(defect <= 1e-12 * v.linf());
    }

    #[test]
    fn cold_start_first_iterate_is_near_fixed_point() {
        // at tiny eps the first iterate L^{-1}(R + P) is already within a
        // whisker of the fixed point
        let c = ctx(PI_8, 0.02, 1024);
        let (v, history) = fixed_point(&c, &Field2::zeros(c.grid()), &SolveConfig::default()).unwrap();
        assert!(history[1] <= 5e-3 * history[0], "history {history:?}");
        assert!(v.l2() > 0.0);
    }

    #[test]
    fn fixed_point_unique_in_ball() {
        let c = ctx(PI_8, 0.1, 1024);
        let cfg = SolveConfig::default();
        let (va, _) = fixed_point(&c, &Field2::zeros(c.grid()), &cfg).unwrap();
        // different admissible initial guess
        let init = va.scale(0.5).axpy(
            0.3,
            &Field2::sample(c.grid(), |x| (-(x * x) / 10.0).exp(), |x| 0.1 * (-(x * x) / 7.0).exp(), Parity::Even),
        );
        let (vb, _) = fixed_point(&c, &init, &cfg).unwrap();
        let rel = va.sub(&vb).l2() / va.l2();
        assert!(rel <= 1e-8, "fixed points differ by {rel}");
    }

    #[test]
    fn solution_satisfies_travel_equation() {
        let c = ctx(PI_8, 0.1, 1024);
        let sol = solve_wave(&c, &SolveConfig::default()).unwrap();
        assert!(sol.residual <= 1e-11, "residual {}", sol.residual);
        assert_relative_eq!(sol.c_eps, (c.macros.sigma0 + 0.01).sqrt());
        // W = W0 + eps^2 V identically
        let rebuilt = sol.w0.axpy(sol.eps * sol.eps, &sol.v);
        assert_eq!(rebuilt.sub(&sol.w).l2(), 0.0);
        // deviation norm equals eps^2 |V|
        assert_relative_eq!(
            sol.w.sub(&sol.w0).l2(),
            sol.eps * sol.eps * sol.corrector_norm,
            max_relative = 1e-12
        );
    }

    #[test]
    fn component_ratio_tends_to_lambda() {
        // W2/W1 is not constant in xi at positive eps but approaches lambda
        let c1 = ctx(PI_8, 0.15, 1024);
        let lam = c1.macros.lambda;
        let sol1 = solve_wave(&c1, &SolveConfig::default()).unwrap();
        let spread = |sol: &WaveSolution| {
            let center = sol.w.grid().center();
            let w1 = sol.w.component(0);
            let w2 = sol.w.component(1);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            // sample where the wave is substantial
            for i in (center - 200)..(center + 200) {
                if w1[i].abs() > 1e-3 * w1[center].abs() {
                    let r = w2[i] / w1[i];
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
            (lo, hi)
        };
        let (lo1, hi1) = spread(&sol1);
        assert!(hi1 - lo1 > 1e-4, "ratio should be non-constant at eps > 0");
        let c2 = ctx(PI_8, 0.05, 1024);
        let sol2 = solve_wave(&c2, &SolveConfig::default()).unwrap();
        let (lo2, hi2) = spread(&sol2);
        assert!(hi2 - lo2 < hi1 - lo1, "spread should shrink with eps");
        assert!((0.5 * (lo2 + hi2) - lam).abs() < 0.1, "ratio near lambda");
    }

    #[test]
    fn continuation_warm_start_reuses_corrector() {
        let spec = builtin_lattice("square", R_STAR).unwrap();
        let grid = default_grid(&spec, PI_8, 1024).unwrap();
        let cfg = SolveConfig::default();
        let sols = continuation(&spec, PI_8, &[0.2, 0.1, 0.05], &cfg, &grid).unwrap();
        assert_eq!(sols.len(), 3);
        // warm-started solves should not need more iterations than the cold
        // first solve
        let cold_iters = sols[0].history.len();
        for s in &sols[1..] {
            assert!(
                s.history.len() <= cold_iters + 2,
                "warm start regressed: {} vs {}",
                s.history.len(),
                cold_iters
            );
        }
        // and at the same eps, warm start from the coarser corrector beats a
        // cold start outright
        let ctx = build_context(&spec, PI_8, 0.05, &grid).unwrap();
        let (_, cold) = fixed_point(&ctx, &Field2::zeros(&grid), &cfg).unwrap();
        assert!(
            sols[2].history.len() <= cold.len(),
            "warm {} vs cold {}",
            sols[2].history.len(),
            cold.len()
        );
    }

    #[test]
    fn continuation_empty_list_is_empty() {
        let spec = builtin_lattice("square", R_STAR).unwrap();
        let grid = default_grid(&spec, PI_8, 256).unwrap();
        let sols = continuation(&spec, PI_8, &[], &SolveConfig::default(), &grid).unwrap();
        assert!(sols.is_empty());
    }

    #[test]
    fn continuation_rejects_singular_direction_before_solving() {
        let spec = builtin_lattice("diamond", R_STAR).unwrap();
        let grid = PeriodicGrid::new(40.0, 256).unwrap();
        let err = continuation(&spec, 0.0, &[0.1], &SolveConfig::default(), &grid).unwrap_err();
        assert!(matches!(err, Error::Genericity { .. }), "{err}");
    }

    #[test]
    fn displacement_profile_inverts_differentiation() {
        let c = ctx(PI_8, 0.1, 1024);
        let sol = solve_wave(&c, &SolveConfig::default()).unwrap();
        let disp = displacement_profile(&sol.w);
        let der = disp.derivative(c.grid());
        for comp in 0..2 {
            let diff = c.grid().l2_norm(
                &der[comp]
                    .iter()
                    .zip(sol.w.component(comp))
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            assert!(
                diff <= 1e-10 * c.grid().l2_norm(sol.w.component(comp)),
                "derivative mismatch {diff}"
            );
        }
        // q(0) = 0
        assert_eq!(disp.q[0][c.grid().center()], 0.0);
    }

    #[test]
    fn displacement_of_constant_is_linear_ramp() {
        let grid = PeriodicGrid::new(20.0, 256).unwrap();
        let w = Field2::sample(&grid, |_| 0.7, |_| -0.2, Parity::Even);
        let disp = displacement_profile(&w);
        for (i, xi) in grid.nodes().enumerate() {
            assert_relative_eq!(disp.q[0][i], 0.7 * xi, epsilon = 1e-10);
            assert_relative_eq!(disp.q[1][i], -0.2 * xi, epsilon = 1e-10);
        }
    }

    #[test]
    fn displacement_total_step_matches_profile_integral() {
        // Q(+L) - Q(-L) = integral of W over the domain; for the KdV profile
        // the closed form is 4 p1 / sqrt(d1) per unit lambda weight
        let c = ctx(PI_8, 0.05, 2048);
        let sol = solve_wave(&c, &SolveConfig::default()).unwrap();
        let grid = c.grid();
        let disp = displacement_profile(&sol.w);
        let step = disp.mean[0] * 2.0 * grid.half_length();
        // quadrature of the profile
        let quad = grid.spacing() * sol.w.component(0).iter().sum::<f64>();
        assert_relative_eq!(step, quad, max_relative = 1e-12);
        // against the closed form for W*: int = 4 p1 / sqrt(d1), the
        // corrector shifts it by O(eps^2)
        let p = c.profile();
        let closed = 4.0 * p.p1 / p.d1.sqrt();
        assert_relative_eq!(quad, closed, max_relative = 0.05);
    }
}
