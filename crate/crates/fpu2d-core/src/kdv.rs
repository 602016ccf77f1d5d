//! Macroscopic constants of the KdV limit and the explicit limit profile.
//!
//! From the Taylor data and the direction couplings this module computes the
//! stiffness sums `c1, c2, c3`, the squared sound speed `sigma0` (larger
//! root of `(c1 - s)(c3 - s) = c2^2`), the polarization ratio `lambda`, the
//! moment sums `a1..a5`, `b1..b5`, the KdV coefficients `d1, d2`, and the
//! sech^2 profile `W*` with its shape parameters `p1, p2`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{couplings, LatticeSpec, TaylorData};
use crate::spectral::{Field2, Multiplier, Parity, PeriodicGrid};

/// Relative threshold below which a denominator counts as singular.
const SINGULAR_TOL: f64 = 1e-8;

/// All scalar constants of the KdV limit for one lattice direction.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Squared sound speed: larger root of `(c1 - s)(c3 - s) = c2^2`.
    pub sigma0: f64,
    /// Transverse/longitudinal ratio `c2 / (sigma0 - c3)`.
    pub lambda: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
    /// KdV linear coefficient; a wave requires `d1 > 0`.
    pub d1: f64,
    /// KdV quadratic coefficient; a wave requires `d2 != 0`.
    pub d2: f64,
    /// Peak value `3 d1 / (2 d2)`.
    pub p1: f64,
    /// Peak slope `sqrt(d1^3 / (3 d2^2))`.
    pub p2: f64,
}

/// Stiffness sums `c_i = sum_m k_m^2 alpha^m`.
pub fn macro_constants(taylor: &TaylorData, k: &[f64]) -> (f64, f64, f64) {
    assert_eq!(taylor.bonds.len(), k.len(), "one coupling per bond family");
    let mut c = [0.0; 3];
    for (b, &km) in taylor.bonds.iter().zip(k) {
        let k2 = km * km;
        c[0] += k2 * b.alpha[0][0];
        c[1] += k2 * b.alpha[0][1];
        c[2] += k2 * b.alpha[1][1];
    }
    (c[0], c[1], c[2])
}

/// Larger root of `(c1 - s)(c3 - s) = c2^2`.
pub fn sound_speed(c1: f64, c2: f64, c3: f64) -> f64 {
    0.5 * ((c1 + c3) + ((c1 - c3) * (c1 - c3) + 4.0 * c2 * c2).sqrt())
}

/// Residual of the defining quadratic at `s`.
pub fn sound_speed_residual(c1: f64, c2: f64, c3: f64, s: f64) -> f64 {
    (c1 - s) * (c3 - s) - c2 * c2
}

/// Polarization ratio `lambda = c2 / (sigma0 - c3)`, requiring the generic
/// situation `c2 != 0` and `sigma0 != c3`; the alternative quotient
/// `(sigma0 - c1) / c2` must agree.
pub fn lambda_ratio(sigma0: f64, c1: f64, c2: f64, c3: f64) -> Result<f64> {
    let scale = sigma0.abs().max(c1.abs()).max(c3.abs()).max(1.0);
    if c2.abs() <= SINGULAR_TOL * scale {
        return Err(Error::Genericity {
            assumption: "KdV genericity condition",
            detail: format!("c2 = {c2:.3e} vanishes for this direction"),
        });
    }
    if (sigma0 - c3).abs() <= SINGULAR_TOL * scale {
        return Err(Error::Genericity {
            assumption: "KdV genericity condition",
            detail: format!("sigma0 - c3 = {:.3e} vanishes for this direction", sigma0 - c3),
        });
    }
    Ok(c2 / (sigma0 - c3))
}

/// `lambda` whenever it is well defined, allowing the longitudinal case
/// `c2 = 0` with `sigma0 != c3` (where `lambda = 0` and the wave has a
/// vanishing second component). Errors only when both quotients degenerate.
pub(crate) fn lambda_robust(sigma0: f64, c1: f64, c2: f64, c3: f64) -> Result<f64> {
    let scale = sigma0.abs().max(c1.abs()).max(c3.abs()).max(1.0);
    if (sigma0 - c3).abs() > SINGULAR_TOL * scale {
        return Ok(c2 / (sigma0 - c3));
    }
    if c2.abs() > SINGULAR_TOL * scale {
        return Ok((sigma0 - c1) / c2);
    }
    Err(Error::Genericity {
        assumption: "KdV genericity condition",
        detail: format!(
            "lambda undefined: c2 = {c2:.3e} and sigma0 - c3 = {:.3e} both vanish",
            sigma0 - c3
        ),
    })
}

/// Moment sums and KdV coefficients, given `lambda`.
///
/// Weights: `k^4/12` for `a1, a2, b1, b2`; `k^3/2` for `a3, a4, b3, b4`;
/// `k^3` for `a5, b5`. Then
/// `d1 = (1 + lambda^2) / ((a1 + lambda a2) + lambda (b2 + lambda b1))` and
/// `d2 = ((a3 + lambda^2 a4 + lambda a5) + lambda (lambda b5 + lambda^2 b3 + b4))`
/// over the same denominator.
pub fn kdv_coefficients(
    taylor: &TaylorData,
    k: &[f64],
    lambda: f64,
) -> Result<(f64, f64, f64, f64, f64, f64, f64, f64, f64, f64, f64, f64)> {
    assert_eq!(taylor.bonds.len(), k.len(), "one coupling per bond family");
    let (mut a1, mut a2, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0);
    let (mut a3, mut a4, mut a5, mut b3, mut b4, mut b5) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (bond, &km) in taylor.bonds.iter().zip(k) {
        let k3 = km * km * km;
        let k4 = k3 * km;
        a1 += k4 / 12.0 * bond.alpha[0][0];
        a2 += k4 / 12.0 * bond.alpha[0][1];
        b1 += k4 / 12.0 * bond.alpha[1][1];
        b2 += k4 / 12.0 * bond.alpha[1][0];
        a3 += k3 / 2.0 * bond.beta[0][0][0];
        a4 += k3 / 2.0 * bond.beta[0][1][1];
        a5 += k3 * bond.beta[0][0][1];
        b3 += k3 / 2.0 * bond.beta[1][1][1];
        b4 += k3 / 2.0 * bond.beta[1][0][0];
        b5 += k3 * bond.beta[1][0][1];
    }
    let den = (a1 + lambda * a2) + lambda * (b2 + lambda * b1);
    let scale = [a1, a2, b1, b2, 1e-12]
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    if den.abs() <= SINGULAR_TOL * scale.max(1e-12) {
        return Err(Error::Genericity {
            assumption: "degenerate direction (vanishing dispersive denominator)",
            detail: format!("(a1 + lambda a2) + lambda (b2 + lambda b1) = {den:.3e}"),
        });
    }
    let d1 = (1.0 + lambda * lambda) / den;
    let d2 = ((a3 + lambda * lambda * a4 + lambda * a5)
        + lambda * (lambda * b5 + lambda * lambda * b3 + b4))
        / den;
    Ok((a1, a2, a3, a4, a5, b1, b2, b3, b4, b5, d1, d2))
}

/// Full macroscopic pipeline for a lattice direction.
pub fn macro_coefficients(taylor: &TaylorData, k: &[f64]) -> Result<MacroCoefficients> {
    let (c1, c2, c3) = macro_constants(taylor, k);
    let sigma0 = sound_speed(c1, c2, c3);
    let lambda = lambda_robust(sigma0, c1, c2, c3)?;
    let (a1, a2, a3, a4, a5, b1, b2, b3, b4, b5, d1, d2) = kdv_coefficients(taylor, k, lambda)?;
    let p1 = 1.5 * d1 / d2;
    let p2 = (d1 * d1 * d1 / (3.0 * d2 * d2)).sqrt();
    Ok(MacroCoefficients {
        c1,
        c2,
        c3,
        sigma0,
        lambda,
        a1,
        a2,
        a3,
        a4,
        a5,
        b1,
        b2,
        b3,
        b4,
        b5,
        d1,
        d2,
        p1,
        p2,
    })
}

/// One genericity condition with its numeric margin.
#[derive(Clone, Debug)]
pub struct ConditionReport {
    pub name: &'static str,
    pub value: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Pass/fail report of the four genericity conditions.
#[derive(Clone, Debug)]
pub struct GenericityReport {
    pub conditions: Vec<ConditionReport>,
    /// All four literal conditions hold.
    pub all_pass: bool,
    /// A KdV wave exists: `sigma0 > 0`, `lambda` well defined, `d1 > 0`,
    /// `d2 != 0`. The literal `c2 != 0` condition is not required when
    /// `sigma0 != c3` (longitudinal directions have `c2 = 0`, `lambda = 0`).
    pub wave_exists: bool,
}

/// Evaluate the genericity conditions `sigma0 > 0`, `c2 != 0`, `d1 > 0`,
/// `d2 != 0` with values and margins (report only; never fails).
pub fn check_genericity(m: &MacroCoefficients) -> GenericityReport {
    let scale = m.sigma0.abs().max(m.c1.abs()).max(m.c3.abs()).max(1.0);
    let conditions = vec![
        ConditionReport {
            name: "sigma0 > 0",
            value: m.sigma0,
            margin: m.sigma0,
            pass: m.sigma0 > 0.0,
        },
        ConditionReport {
            name: "c2 != 0",
            value: m.c2,
            margin: m.c2.abs(),
            pass: m.c2.abs() > SINGULAR_TOL * scale,
        },
        ConditionReport {
            name: "d1 > 0",
            value: m.d1,
            margin: m.d1,
            pass: m.d1.is_finite() && m.d1 > 0.0,
        },
        ConditionReport {
            name: "d2 != 0",
            value: m.d2,
            margin: m.d2.abs(),
            pass: m.d2.is_finite() && m.d2.abs() > SINGULAR_TOL,
        },
    ];
    let all_pass = conditions.iter().all(|c| c.pass);
    let lambda_ok = m.lambda.is_finite();
    let wave_exists = conditions[0].pass && lambda_ok && conditions[2].pass && conditions[3].pass;
    GenericityReport {
        conditions,
        all_pass,
        wave_exists,
    }
}

/// The explicit KdV limit profile `W*` sampled on a grid.
#[derive(Clone, Debug)]
pub struct KdvProfile {
    pub w: Vec<f64>,
    pub w_prime: Vec<f64>,
    pub d1: f64,
    pub d2: f64,
    pub p1: f64,
    pub p2: f64,
}

/// Sample `W*(xi) = (3 d1 / (2 d2)) sech^2(sqrt(d1) xi / 2)` and its
/// derivative.
pub fn kdv_profile(d1: f64, d2: f64, grid: &Arc<PeriodicGrid>) -> Result<KdvProfile> {
    if !(d1 > 0.0) || !d1.is_finite() {
        return Err(Error::Genericity {
            assumption: "KdV genericity condition",
            detail: format!("d1 = {d1} must be positive for a homoclinic profile"),
        });
    }
    if d2 == 0.0 || !d2.is_finite() {
        return Err(Error::Genericity {
            assumption: "KdV genericity condition",
            detail: format!("d2 = {d2} must be nonzero"),
        });
    }
    let p1 = 1.5 * d1 / d2;
    let p2 = (d1 * d1 * d1 / (3.0 * d2 * d2)).sqrt();
    let gamma = 0.5 * d1.sqrt();
    let sech = |x: f64| 1.0 / x.cosh();
    let w: Vec<f64> = grid.nodes().map(|xi| p1 * sech(gamma * xi).powi(2)).collect();
    let w_prime: Vec<f64> = grid
        .nodes()
        .map(|xi| -2.0 * gamma * p1 * sech(gamma * xi).powi(2) * (gamma * xi).tanh())
        .collect();
    Ok(KdvProfile {
        w,
        w_prime,
        d1,
        d2,
        p1,
        p2,
    })
}

impl KdvProfile {
    /// The limit velocity field `W0 = (W*, lambda W*)`.
    pub fn limit_field(&self, grid: &Arc<PeriodicGrid>, lambda: f64) -> Field2 {
        Field2::new(
            grid,
            self.w.clone(),
            self.w.iter().map(|x| lambda * x).collect(),
            Parity::Even,
        )
    }

    /// Max-norm residual of the profile in the ODE `W'' = d1 W - d2 W^2`,
    /// with the second derivative taken spectrally.
    pub fn ode_residual(&self, grid: &Arc<PeriodicGrid>) -> f64 {
        let second = Multiplier::from_symbol(grid, |z| -z * z);
        let wpp = second.apply_component(&self.w);
        self.w
            .iter()
            .zip(&wpp)
            .map(|(&w, &wpp)| (wpp - self.d1 * w + self.d2 * w * w).abs())
            .fold(0.0_f64, f64::max)
    }
}

/// One row of a direction sweep. Singular directions carry NaN entries and
/// `wave_exists = false` instead of failing.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub alpha: f64,
    pub sigma0: f64,
    pub lambda: f64,
    pub d1: f64,
    pub d2: f64,
    pub p1: f64,
    pub p2: f64,
    pub sigma0_positive: bool,
    pub c2_nonzero: bool,
    pub wave_exists: bool,
}

/// Tabulate the macroscopic constants over a grid of propagation angles.
pub fn sweep_alpha(spec: &LatticeSpec, taylor: &TaylorData, alphas: &[f64]) -> Vec<SweepRow> {
    alphas
        .iter()
        .map(|&alpha| {
            let dir = couplings(spec, alpha);
            match macro_coefficients(taylor, &dir.couplings) {
                Ok(m) => {
                    let rep = check_genericity(&m);
                    SweepRow {
                        alpha,
                        sigma0: m.sigma0,
                        lambda: m.lambda,
                        d1: m.d1,
                        d2: m.d2,
                        p1: m.p1,
                        p2: m.p2,
                        sigma0_positive: rep.conditions[0].pass,
                        c2_nonzero: rep.conditions[1].pass,
                        wave_exists: rep.wave_exists,
                    }
                }
                Err(_) => {
                    let (c1, c2, c3) = macro_constants(taylor, &dir.couplings);
                    let sigma0 = sound_speed(c1, c2, c3);
                    let scale = sigma0.abs().max(c1.abs()).max(c3.abs()).max(1.0);
                    SweepRow {
                        alpha,
                        sigma0,
                        lambda: f64::NAN,
                        d1: f64::NAN,
                        d2: f64::NAN,
                        p1: f64::NAN,
                        p2: f64::NAN,
                        sigma0_positive: sigma0 > 0.0,
                        c2_nonzero: c2.abs() > SINGULAR_TOL * scale,
                        wave_exists: false,
                    }
                }
            }
        })
        .collect()
}

/// Default sweep grid: 181 angles on `[-pi/2, pi/2]` for the square lattice,
/// `[0, pi]` otherwise.
pub fn default_alpha_grid(lattice_name: &str) -> Vec<f64> {
    let (lo, hi) = if lattice_name == "square" {
        (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
    } else {
        (0.0, std::f64::consts::PI)
    };
    (0..181).map(|i| lo + (hi - lo) * i as f64 / 180.0).collect()
}
