//! Lattice geometries, effective spring potentials, coupling constants, and
//! Taylor data of the effective forces.
//!
//! A lattice is described by bond families: each family `m` connects a
//! particle to the neighbor displaced by `rho_m * r_star * e_m` (unit
//! direction `e_m`, rest multiplier `rho_m`) through a scalar potential
//! `V_m`. The effective potential of a family is
//! `phi_m(x) = V_m(|x + rho_m r_star e_m|)` and the normalized force is
//! `F^m(x) = grad phi_m(x) - grad phi_m(0)`.
//!
//! For a wave direction `kappa = (cos a, sin a)` the coupling constant of a
//! family is the projection of `kappa` onto the neighbor offset measured in
//! units of `r_star`: `k_m = kappa . (rho_m e_m)`. This reproduces the
//! coupling lists of all three built-in geometries and fixes the convention
//! for custom lattices.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar spring potential `V(r)` with derivatives through fourth order.
#[derive(Clone)]
pub enum ScalarPotential {
    /// `V(r) = (stiffness/2) (r - rest)^2`
    Harmonic { stiffness: f64, rest: f64 },
    /// `V(r) = (c2/2) s^2 + (c3/6) s^3 + (c4/24) s^4` with `s = r - rest`
    Quartic { rest: f64, c2: f64, c3: f64, c4: f64 },
    /// User-supplied evaluator returning the `order`-th derivative at `r`
    /// (order 0 is the value itself).
    Custom {
        name: String,
        eval: Arc<dyn Fn(f64, u32) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ScalarPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Harmonic { stiffness, rest } => f
                .debug_struct("Harmonic")
                .field("stiffness", stiffness)
                .field("rest", rest)
                .finish(),
            Self::Quartic { rest, c2, c3, c4 } => f
                .debug_struct("Quartic")
                .field("rest", rest)
                .field("c2", c2)
                .field("c3", c3)
                .field("c4", c4)
                .finish(),
            Self::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

impl ScalarPotential {
    pub fn harmonic() -> Self {
        Self::Harmonic {
            stiffness: 1.0,
            rest: 1.0,
        }
    }

    /// Derivative of order `0..=4` at `r`.
    pub fn derivative(&self, r: f64, order: u32) -> f64 {
        match self {
            Self::Harmonic { stiffness, rest } => {
                let s = r - rest;
                match order {
                    0 => 0.5 * stiffness * s * s,
                    1 => stiffness * s,
                    2 => *stiffness,
                    _ => 0.0,
                }
            }
            Self::Quartic { rest, c2, c3, c4 } => {
                let s = r - rest;
                match order {
                    0 => c2 / 2.0 * s * s + c3 / 6.0 * s * s * s + c4 / 24.0 * s * s * s * s,
                    1 => c2 * s + c3 / 2.0 * s * s + c4 / 6.0 * s * s * s,
                    2 => c2 + c3 * s + c4 / 2.0 * s * s,
                    3 => c3 + c4 * s,
                    4 => *c4,
                    _ => 0.0,
                }
            }
            Self::Custom { eval, .. } => eval(r, order),
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.derivative(r, 0)
    }

    pub fn kind_tag(&self) -> &str {
        match self {
            Self::Harmonic { .. } => "harmonic",
            Self::Quartic { .. } => "quartic",
            Self::Custom { .. } => "user-defined",
        }
    }
}

/// One bond family: unit direction, rest multiplier, potential.
#[derive(Clone, Debug)]
pub struct BondFamily {
    pub direction: [f64; 2],
    pub rest_multiplier: f64,
    pub potential: ScalarPotential,
}

impl BondFamily {
    /// Normalizes `direction`; rejects zero vectors and nonpositive rest
    /// multipliers.
    pub fn new(direction: [f64; 2], rest_multiplier: f64, potential: ScalarPotential) -> Result<Self> {
        let norm = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Config("bond direction must be a nonzero vector".into()));
        }
        if !(rest_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "rest multiplier must be positive, got {rest_multiplier}"
            )));
        }
        Ok(Self {
            direction: [direction[0] / norm, direction[1] / norm],
            rest_multiplier,
            potential,
        })
    }

    /// Neighbor offset in units of `r_star`: `rho_m e_m`.
    pub fn offset(&self) -> [f64; 2] {
        [
            self.rest_multiplier * self.direction[0],
            self.rest_multiplier * self.direction[1],
        ]
    }
}

/// A 2D lattice: reference parameter `r_star` and its bond families.
#[derive(Clone, Debug)]
pub struct LatticeSpec {
    pub name: String,
    pub r_star: f64,
    pub bonds: Vec<BondFamily>,
}

/// Built-in geometries. Axis sets:
/// square `(1,0), (0,1), (1,1)/sqrt2, (1,-1)/sqrt2` with rest multipliers
/// `1, 1, sqrt2, sqrt2`; diamond `(0,1), (1,1)/sqrt2, (1,-1)/sqrt2` all with
/// multiplier 1; triangle `(1,0), (1,sqrt3)/2, (1,-sqrt3)/2` all with
/// multiplier 1. All bonds share the same potential.
pub fn builtin_lattice_with(name: &str, r_star: f64, potential: ScalarPotential) -> Result<LatticeSpec> {
    if !(r_star > 0.0) || !r_star.is_finite() {
        return Err(Error::Config(format!(
            "reference lattice parameter must be positive, got {r_star}"
        )));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = 0.5 * 3.0_f64.sqrt();
    let axes: Vec<([f64; 2], f64)> = match name {
        "square" => vec![
            ([1.0, 0.0], 1.0),
            ([0.0, 1.0], 1.0),
            ([s, s], std::f64::consts::SQRT_2),
            ([s, -s], std::f64::consts::SQRT_2),
        ],
        "diamond" => vec![([0.0, 1.0], 1.0), ([s, s], 1.0), ([s, -s], 1.0)],
        "triangle" => vec![([1.0, 0.0], 1.0), ([0.5, h], 1.0), ([0.5, -h], 1.0)],
        other => {
            return Err(Error::Config(format!(
                "unknown lattice name '{other}' (expected square, diamond, or triangle)"
            )))
        }
    };
    let bonds = axes
        .into_iter()
        .map(|(e, rho)| BondFamily::new(e, rho, potential.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatticeSpec {
        name: name.to_string(),
        r_star,
        bonds,
    })
}

/// Built-in geometry with the harmonic potential `V(r) = (r-1)^2 / 2`.
pub fn builtin_lattice(name: &str, r_star: f64) -> Result<LatticeSpec> {
    builtin_lattice_with(name, r_star, ScalarPotential::harmonic())
}

/// Wave direction data: angle, unit wave vector, per-bond couplings.
#[derive(Clone, Debug)]
pub struct DirectionData {
    pub alpha: f64,
    pub wave_vector: [f64; 2],
    pub couplings: Vec<f64>,
}

/// Couplings `k_m = kappa . (rho_m e_m)` for propagation angle `alpha`.
pub fn couplings(spec: &LatticeSpec, alpha: f64) -> DirectionData {
    let kappa = [alpha.cos(), alpha.sin()];
    let couplings = spec
        .bonds
        .iter()
        .map(|b| {
            let o = b.offset();
            kappa[0] * o[0] + kappa[1] * o[1]
        })
        .collect();
    DirectionData {
        alpha,
        wave_vector: kappa,
        couplings,
    }
}

/// Normalized effective force of bond family `m`:
/// `F^m(x) = grad phi_m(x) - grad phi_m(0)` with
/// `phi_m(x) = V_m(|x + rho_m r_star e_m|)`.
pub fn effective_gradient(spec: &LatticeSpec, m: usize, x: [f64; 2]) -> Result<[f64; 2]> {
    let bond = &spec.bonds[m];
    let a = bond.offset();
    let r0 = bond.rest_multiplier * spec.r_star;
    // both gradients go through the identical expression so that
    // F(0, 0) = (0, 0) holds bitwise
    let grad = |x1: f64, x2: f64| -> Result<[f64; 2]> {
        let u1 = x1 + spec.r_star * a[0];
        let u2 = x2 + spec.r_star * a[1];
        let r = (u1 * u1 + u2 * u2).sqrt();
        if r <= 1e-12 * r0 {
            return Err(Error::Domain(format!(
                "deformed spring length vanished for bond {m} at x=({x1}, {x2})"
            )));
        }
        let f = bond.potential.derivative(r, 1) / r;
        Ok([f * u1, f * u2])
    };
    let g = grad(x[0], x[1])?;
    let g0 = grad(0.0, 0.0)?;
    Ok([g[0] - g0[0], g[1] - g0[1]])
}

/// Linear and quadratic Taylor data of one bond's effective force, plus the
/// exact remainder evaluator.
#[derive(Clone)]
pub struct BondTaylor {
    /// `alpha[i][j] = dF_i/dx_j (0)`
    pub alpha: [[f64; 2]; 2],
    /// `beta[i][j][k] = d^2 F_i / dx_j dx_k (0)`, symmetric in `(j,k)`
    pub beta: [[[f64; 2]; 2]; 2],
    /// Estimated cubic-Lipschitz constants of the remainder, one per force
    /// component (diagnostic only).
    pub gamma: [f64; 2],
    force: Arc<dyn Fn(f64, f64) -> Result<[f64; 2]> + Send + Sync>,
}

impl fmt::Debug for BondTaylor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BondTaylor")
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl BondTaylor {
    /// Taylor data around a caller-supplied full force.
    pub fn from_force(
        alpha: [[f64; 2]; 2],
        beta: [[[f64; 2]; 2]; 2],
        force: Arc<dyn Fn(f64, f64) -> Result<[f64; 2]> + Send + Sync>,
    ) -> Self {
        Self {
            alpha,
            beta,
            gamma: [0.0; 2],
            force,
        }
    }

    /// A purely polynomial force of degree two: the remainder vanishes
    /// identically.
    pub fn polynomial(alpha: [[f64; 2]; 2], beta: [[[f64; 2]; 2]; 2]) -> Self {
        let a = alpha;
        let b = beta;
        let force = Arc::new(move |x1: f64, x2: f64| -> Result<[f64; 2]> {
            let mut out = [0.0; 2];
            for i in 0..2 {
                out[i] = a[i][0] * x1
                    + a[i][1] * x2
                    + 0.5 * (b[i][0][0] * x1 * x1 + 2.0 * b[i][0][1] * x1 * x2 + b[i][1][1] * x2 * x2);
            }
            Ok(out)
        });
        Self {
            alpha,
            beta,
            gamma: [0.0; 2],
            force,
        }
    }

    /// Full force `F^m(x)`.
    pub fn force(&self, x1: f64, x2: f64) -> Result<[f64; 2]> {
        (self.force)(x1, x2)
    }

    /// Linear plus quadratic Taylor part.
    pub fn truncation(&self, x1: f64, x2: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for i in 0..2 {
            out[i] = self.alpha[i][0] * x1
                + self.alpha[i][1] * x2
                + 0.5
                    * (self.beta[i][0][0] * x1 * x1
                        + 2.0 * self.beta[i][0][1] * x1 * x2
                        + self.beta[i][1][1] * x2 * x2);
        }
        out
    }

    /// Remainder `Psi^m(x) = F^m(x) - linear - quadratic`; exactly zero at
    /// the origin by construction.
    pub fn psi(&self, x1: f64, x2: f64) -> Result<[f64; 2]> {
        let f = self.force(x1, x2)?;
        let t = self.truncation(x1, x2);
        Ok([f[0] - t[0], f[1] - t[1]])
    }
}

/// Taylor data for all bond families of a lattice.
#[derive(Clone, Debug)]
pub struct TaylorData {
    pub bonds: Vec<BondTaylor>,
}

impl TaylorData {
    pub fn len(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bonds.is_empty()
    }

    /// Largest violation of the gradient-field symmetries
    /// `alpha_{1,2} = alpha_{2,1}`, `beta_{1,22} = beta_{2,12}`,
    /// `beta_{1,12} = beta_{2,11}`, relative to the coefficient scale.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.bonds {
            let scale = coefficient_scale(b).max(1e-30);
            worst = worst.max((b.alpha[0][1] - b.alpha[1][0]).abs() / scale);
            worst = worst.max((b.beta[0][1][1] - b.beta[1][0][1]).abs() / scale);
            worst = worst.max((b.beta[0][0][1] - b.beta[1][0][0]).abs() / scale);
        }
        worst
    }
}

fn coefficient_scale(b: &BondTaylor) -> f64 {
    let mut s: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            s = s.max(b.alpha[i][j].abs());
            for k in 0..2 {
                s = s.max(b.beta[i][j][k].abs());
            }
        }
    }
    s
}

/// Analytic chain-rule coefficients of `phi(x) = V(|x + a|)` at `x = 0`.
///
/// With `r0 = |a|`, `e = a/r0`:
/// `alpha_{ij} = V''(r0) e_i e_j + (V'(r0)/r0)(delta_ij - e_i e_j)` and
/// `beta_{ijk} = V'''(r0) e_i e_j e_k
///   + (V''(r0)/r0 - V'(r0)/r0^2)(delta_ij e_k + delta_ik e_j + delta_jk e_i - 3 e_i e_j e_k)`.
fn analytic_bond_taylor(spec: &LatticeSpec, m: usize) -> ([[f64; 2]; 2], [[[f64; 2]; 2]; 2]) {
    let bond = &spec.bonds[m];
    let e = bond.direction;
    let r0 = bond.rest_multiplier * spec.r_star;
    let vp = bond.potential.derivative(r0, 1);
    let vpp = bond.potential.derivative(r0, 2);
    let vppp = bond.potential.derivative(r0, 3);
    let g = vp / r0;
    let w = vpp / r0 - vp / (r0 * r0);
    let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let mut alpha = [[0.0; 2]; 2];
    let mut beta = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            alpha[i][j] = vpp * e[i] * e[j] + g * (delta(i, j) - e[i] * e[j]);
            for k in 0..2 {
                beta[i][j][k] = vppp * e[i] * e[j] * e[k]
                    + w * (delta(i, j) * e[k] + delta(i, k) * e[j] + delta(j, k) * e[i]
                        - 3.0 * e[i] * e[j] * e[k]);
            }
        }
    }
    (alpha, beta)
}

/// Richardson-extrapolated central differences of the effective force at 0,
/// used as an independent cross-check of the analytic coefficients.
fn finite_difference_taylor(
    spec: &LatticeSpec,
    m: usize,
) -> Result<([[f64; 2]; 2], [[[f64; 2]; 2]; 2])> {
    let f = |x: [f64; 2]| effective_gradient(spec, m, x);
    let steps = [1e-3, 5e-4];
    let mut alpha_h = [[[0.0; 2]; 2]; 2];
    let mut beta_h = [[[[0.0; 2]; 2]; 2]; 2];
    for (s, &h) in steps.iter().enumerate() {
        let ex = [[h, 0.0], [0.0, h]];
        for j in 0..2 {
            let fp = f(ex[j])?;
            let fm = f([-ex[j][0], -ex[j][1]])?;
            let f0 = f([0.0, 0.0])?;
            for i in 0..2 {
                alpha_h[s][i][j] = (fp[i] - fm[i]) / (2.0 * h);
                beta_h[s][i][j][j] = (fp[i] - 2.0 * f0[i] + fm[i]) / (h * h);
            }
        }
        let fpp = f([h, h])?;
        let fpm = f([h, -h])?;
        let fmp = f([-h, h])?;
        let fmm = f([-h, -h])?;
        for i in 0..2 {
            let mixed = (fpp[i] - fpm[i] - fmp[i] + fmm[i]) / (4.0 * h * h);
            beta_h[s][i][0][1] = mixed;
            beta_h[s][i][1][0] = mixed;
        }
    }
    // central differences are O(h^2); (4 D(h/2) - D(h)) / 3 removes it
    let richardson = |coarse: f64, fine: f64| (4.0 * fine - coarse) / 3.0;
    let mut alpha = [[0.0; 2]; 2];
    let mut beta = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            alpha[i][j] = richardson(alpha_h[0][i][j], alpha_h[1][i][j]);
            for k in 0..2 {
                beta[i][j][k] = richardson(beta_h[0][i][j][k], beta_h[1][i][j][k]);
            }
        }
    }
    Ok((alpha, beta))
}

/// Extract the Taylor data of every bond family: analytic chain rule with a
/// mandatory finite-difference cross-check at 1e-6 relative. Remainder
/// Lipschitz constants are estimated by sampling a ball of radius 0.1.
pub fn extract_taylor(spec: &LatticeSpec) -> Result<TaylorData> {
    let mut bonds = Vec::with_capacity(spec.bonds.len());
    for m in 0..spec.bonds.len() {
        let (alpha, beta) = analytic_bond_taylor(spec, m);
        let (fd_alpha, fd_beta) = finite_difference_taylor(spec, m)?;
        let mut scale: f64 = 1.0;
        for i in 0..2 {
            for j in 0..2 {
                scale = scale.max(alpha[i][j].abs());
                for k in 0..2 {
                    scale = scale.max(beta[i][j][k].abs());
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let da = (alpha[i][j] - fd_alpha[i][j]).abs();
                if da > 1e-6 * scale {
                    return Err(Error::InternalCheck(format!(
                        "bond {m}: alpha[{i}][{j}] analytic {} vs finite-difference {} (diff {da:.3e})",
                        alpha[i][j], fd_alpha[i][j]
                    )));
                }
                for k in 0..2 {
                    let db = (beta[i][j][k] - fd_beta[i][j][k]).abs();
                    if db > 1e-6 * scale {
                        return Err(Error::InternalCheck(format!(
                            "bond {m}: beta[{i}][{j}][{k}] analytic {} vs finite-difference {} (diff {db:.3e})",
                            beta[i][j][k], fd_beta[i][j][k]
                        )));
                    }
                }
            }
        }
        let spec_clone = spec.clone();
        let force = Arc::new(move |x1: f64, x2: f64| effective_gradient(&spec_clone, m, [x1, x2]));
        let mut bt = BondTaylor::from_force(alpha, beta, force);
        bt.gamma = estimate_gamma(&bt, 0.1)?;
        bonds.push(bt);
    }
    Ok(TaylorData { bonds })
}

/// Report of sampled remainder regularity: estimated constants `gamma^m_i`
/// from the cubic-Lipschitz quotient
/// `|Psi(x) - Psi(y)| / ((|x|^2 + |y|^2)(|x1-y1| + |x2-y2|))`.
#[derive(Clone, Debug)]
pub struct RemainderReport {
    pub radius: f64,
    /// `gamma[m][i]`: per bond family and force component.
    pub gamma: Vec<[f64; 2]>,
    pub max_quotient: f64,
    pub sample_pairs: usize,
}

fn sample_ball(radius: f64) -> Vec<[f64; 2]> {
    let mut pts = vec![[0.0, 0.0]];
    for ir in 1..=5 {
        let r = radius * ir as f64 / 5.0;
        for it in 0..12 {
            let t = 2.0 * std::f64::consts::PI * it as f64 / 12.0;
            pts.push([r * t.cos(), r * t.sin()]);
        }
    }
    pts
}

fn estimate_gamma(bond: &BondTaylor, radius: f64) -> Result<[f64; 2]> {
    let pts = sample_ball(radius);
    let psis: Vec<[f64; 2]> = pts
        .iter()
        .map(|p| bond.psi(p[0], p[1]))
        .collect::<Result<_>>()?;
    let mut gamma = [0.0_f64; 2];
    for (a, pa) in pts.iter().zip(&psis) {
        for (b, pb) in pts.iter().zip(&psis) {
            let quad = a[0] * a[0] + a[1] * a[1] + b[0] * b[0] + b[1] * b[1];
            let dist = (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
            let den = quad * dist;
            if den < 1e-30 {
                continue;
            }
            for i in 0..2 {
                gamma[i] = gamma[i].max((pa[i] - pb[i]).abs() / den);
            }
        }
    }
    Ok(gamma)
}

/// Sample the remainders on a ball of the given radius and report the
/// observed cubic-Lipschitz constants.
pub fn remainder_bound_check(taylor: &TaylorData, radius: f64) -> Result<RemainderReport> {
    assert!(radius > 0.0, "sampling radius must be positive");
    let mut gamma = Vec::with_capacity(taylor.bonds.len());
    let mut max_q: f64 = 0.0;
    let pairs = sample_ball(radius).len().pow(2);
    for bond in &taylor.bonds {
        let g = estimate_gamma(bond, radius)?;
        max_q = max_q.max(g[0]).max(g[1]);
        gamma.push(g);
    }
    Ok(RemainderReport {
        radius,
        gamma,
        max_quotient: max_q,
        sample_pairs: pairs,
    })
}
