//! Run configuration: a TOML file with sections mirroring the library's
//! module inputs. The parsed form round-trips through serialization.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use fpu2d_core::lattice::{
    builtin_lattice_with, BondFamily, LatticeSpec, ScalarPotential,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub direction: DirectionConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// `square`, `diamond`, `triangle`, or `custom`.
    pub name: String,
    pub r_star: f64,
    /// Potential shared by all bonds (built-ins) or default for custom bonds.
    #[serde(default)]
    pub potential: PotentialConfig,
    /// Bond list for `name = "custom"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bonds: Vec<BondConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BondConfig {
    pub direction: [f64; 2],
    pub rest_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialConfig {
    /// `V(r) = (stiffness/2)(r - rest)^2`
    Harmonic { stiffness: f64, rest: f64 },
    /// `V(r) = (c2/2) s^2 + (c3/6) s^3 + (c4/24) s^4`, `s = r - rest`
    Quartic { rest: f64, c2: f64, c3: f64, c4: f64 },
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self::Harmonic {
            stiffness: 1.0,
            rest: 1.0,
        }
    }
}

impl PotentialConfig {
    pub fn build(&self) -> ScalarPotential {
        match *self {
            Self::Harmonic { stiffness, rest } => ScalarPotential::Harmonic { stiffness, rest },
            Self::Quartic { rest, c2, c3, c4 } => ScalarPotential::Quartic { rest, c2, c3, c4 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    /// Single propagation angle in radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Angle grid for sweeps; omitted means the lattice's default grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<AlphaGrid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl AlphaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub size: usize,
    /// Domain half-length; omitted selects `max(40/sqrt(d1), 40)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_length: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 2048,
            half_length: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub epsilons: Vec<f64>,
    pub tol_fp: f64,
    pub max_iterations: usize,
    pub relaxation: f64,
    pub tol_lin: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            tol_fp: 1e-11,
            max_iterations: 200,
            relaxation: 1.0,
            tol_lin: 1e-12,
        }
    }
}

impl SolveSection {
    pub fn to_config(&self) -> fpu2d_core::solver::SolveConfig {
        fpu2d_core::solver::SolveConfig {
            tol_fp: self.tol_fp,
            max_iterations: self.max_iterations,
            relaxation: self.relaxation,
            tol_lin: self.tol_lin,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    /// Margin coefficient of the invertibility bound `delta0 min(|z|,2)^2`.
    pub delta0: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self { delta0: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Halving eps list for the convergence-rate study.
    pub rate_epsilons: Vec<f64>,
    /// Run the molecular-dynamics cross-check (commensurate angles only).
    pub dynamics: bool,
    pub dynamics_box: [usize; 2],
    pub dynamics_dt: f64,
    /// Scaling parameter used for the dynamics run.
    pub dynamics_eps: f64,
    /// Reuse solution CSVs from this directory instead of re-solving.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solutions_dir: Option<String>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            rate_epsilons: vec![0.2, 0.1, 0.05],
            dynamics: false,
            dynamics_box: [4000, 4],
            dynamics_dt: 0.005,
            dynamics_eps: 0.1,
            solutions_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("malformed config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.lattice.name == "custom" && self.lattice.bonds.is_empty() {
            bail!("custom lattice needs at least one [[lattice.bonds]] entry");
        }
        if self.lattice.name != "custom" && !self.lattice.bonds.is_empty() {
            bail!("bond list is only valid with lattice name = \"custom\"");
        }
        if !(self.lattice.r_star > 0.0) {
            bail!("lattice.r_star must be positive");
        }
        Ok(())
    }

    /// Materialize the lattice described by the config.
    pub fn lattice_spec(&self) -> anyhow::Result<LatticeSpec> {
        if self.lattice.name == "custom" {
            let default_pot = self.lattice.potential.build();
            let bonds = self
                .lattice
                .bonds
                .iter()
                .map(|b| {
                    let pot = b
                        .potential
                        .as_ref()
                        .map(|p| p.build())
                        .unwrap_or_else(|| default_pot.clone());
                    BondFamily::new(b.direction, b.rest_multiplier, pot)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(LatticeSpec {
                name: "custom".into(),
                r_star: self.lattice.r_star,
                bonds,
            })
        } else {
            Ok(builtin_lattice_with(
                &self.lattice.name,
                self.lattice.r_star,
                self.lattice.potential.build(),
            )?)
        }
    }

    /// Angles requested for sweeping commands.
    pub fn alpha_values(&self) -> Vec<f64> {
        if let Some(g) = &self.direction.grid {
            g.values()
        } else if let Some(a) = self.direction.alpha {
            vec![a]
        } else {
            fpu2d_core::kdv::default_alpha_grid(&self.lattice.name)
        }
    }

    /// The single angle for solve/verify commands.
    pub fn single_alpha(&self) -> anyhow::Result<f64> {
        match (self.direction.alpha, &self.direction.grid) {
            (Some(a), _) => Ok(a),
            (None, Some(g)) if g.count == 1 => Ok(g.start),
            _ => bail!("this command needs a single direction.alpha"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[lattice]
name = "square"
r_star = 0.8047

[lattice.potential]
kind = "harmonic"
stiffness = 1.0
rest = 1.0

[direction]
alpha = 0.39269908169872414

[grid]
size = 1024

[solve]
epsilons = [0.1, 0.05]
tol_fp = 1e-11
max_iterations = 100
relaxation = 1.0
tol_lin = 1e-12
"#;

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        let emitted = cfg.to_toml();
        let back = RunConfig::from_toml(&emitted).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn builtin_lattice_materializes() {
        let cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        let spec = cfg.lattice_spec().unwrap();
        assert_eq!(spec.bonds.len(), 4);
        assert!((cfg.single_alpha().unwrap() - std::f64::consts::FRAC_PI_8).abs() < 1e-15);
    }

    #[test]
    fn custom_lattice_requires_bonds() {
        let bad = EXAMPLE.replace("name = \"square\"", "name = \"custom\"");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("{EXAMPLE}\n[nonsense]\nx = 1\n");
        assert!(RunConfig::from_toml(&bad).is_err());
    }
}
