//! Campaign configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::broken::SolverParams;
use crate::error::{Error, Result};
use crate::lagrangian::{FamilyParams, LagrangianSpec};
use crate::orbits::DEDUPE_TOL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FreeParticle,
    Pendulum,
    ForcedPendulum,
    QuarticPendulum,
}

/// Either a named preset or explicit family parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LagrangianConfig {
    Preset {
        preset: Preset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stiffness: Option<f64>,
    },
    Family(FamilyParams),
}

impl LagrangianConfig {
    pub fn preset(preset: Preset) -> Self {
        LagrangianConfig::Preset { preset, dim: None, stiffness: None }
    }

    pub fn params(&self) -> FamilyParams {
        match self {
            LagrangianConfig::Preset { preset, dim, stiffness } => match preset {
                Preset::FreeParticle => FamilyParams::free_particle(dim.unwrap_or(1)),
                Preset::Pendulum => FamilyParams::pendulum(),
                Preset::ForcedPendulum => FamilyParams::forced_pendulum(),
                Preset::QuarticPendulum => FamilyParams::quartic_pendulum(stiffness.unwrap_or(1.0)),
            },
            LagrangianConfig::Family(p) => p.clone(),
        }
    }

    pub fn build(&self) -> Result<LagrangianSpec> {
        LagrangianSpec::build(&self.params())
    }

    pub fn name(&self) -> String {
        match self {
            LagrangianConfig::Preset { preset, .. } => serde_json::to_value(preset)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            LagrangianConfig::Family(p) => format!("{:?}", p.tag()).to_lowercase(),
        }
    }
}

/// A number, or the word "auto" (or "none" where allowed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Value(f64),
    Word(String),
}

impl Setting {
    fn auto() -> Self {
        Setting::Word("auto".into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Fixed(f64),
    /// constant_action_bound + margin.
    Auto { margin: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Modification {
    None,
    Fixed(f64),
    /// Start at the given radius and double on rail violations.
    Auto { initial: f64, max_doublings: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    /// Random Fourier seeds per period.
    pub count: usize,
    pub rng_seed: u64,
    pub fourier_modes: usize,
    /// Amplitude of the first mode; mode f gets amplitude/f.
    pub amplitude: f64,
    /// Constant seeds on a grid with this many points per dimension.
    pub constant_grid: usize,
    /// Node noise added to iterates of shorter-period orbits.
    pub iterate_noise: f64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { count: 24, rng_seed: 1, fourier_modes: 2, amplitude: 0.15, constant_grid: 4, iterate_noise: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiiConfig {
    /// "working" uses eps0 = 1/k and `rho0`; "certified" estimates both.
    pub mode: String,
    pub rho0: f64,
}

impl Default for RadiiConfig {
    fn default() -> Self {
        RadiiConfig { mode: "working".into(), rho0: 0.25 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoPath {
    Constant,
    MovingPoint,
    Sinusoidal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BangertConfig {
    pub path: DemoPath,
    pub orders: Vec<usize>,
    /// Grid cells along the path.
    pub cells: usize,
    /// Slices s written to the homotopy CSVs.
    pub slices: Vec<f64>,
    /// Largest n whose slices are written.
    pub csv_max_n: usize,
}

impl Default for BangertConfig {
    fn default() -> Self {
        BangertConfig {
            path: DemoPath::MovingPoint,
            orders: vec![2, 4, 8, 16, 32],
            cells: 16,
            slices: vec![0.0, 0.5, 1.0],
            csv_max_n: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub lagrangian: LagrangianConfig,
    pub prime: usize,
    /// Periods to search, each a power of `prime`.
    pub periods: Vec<usize>,
    /// Nodes per unit time.
    pub k: usize,
    /// Action bound a: a number or "auto".
    pub bound: Setting,
    pub bound_margin: f64,
    /// "none", "auto" or a radius R.
    pub modification: Setting,
    pub initial_radius: f64,
    pub max_doublings: usize,
    pub radii: RadiiConfig,
    pub seeds: SeedConfig,
    pub solver: SolverParams,
    pub dedupe_tol: f64,
    /// EL residual tolerance for the rail check under the original L.
    pub el_tol: f64,
    /// Iterates up to this n enter the index tables.
    pub index_max_n: usize,
    pub out: PathBuf,
    pub bangert: BangertConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            lagrangian: LagrangianConfig::preset(Preset::Pendulum),
            prime: 2,
            periods: vec![1, 2, 4],
            k: 16,
            bound: Setting::auto(),
            bound_margin: 0.25,
            modification: Setting::Word("none".into()),
            initial_radius: 2.0,
            max_doublings: 4,
            radii: RadiiConfig::default(),
            seeds: SeedConfig::default(),
            solver: SolverParams::default(),
            dedupe_tol: DEDUPE_TOL,
            el_tol: 1e-6,
            index_max_n: 8,
            out: PathBuf::from("out"),
            bangert: BangertConfig::default(),
        }
    }
}

fn is_prime(p: usize) -> bool {
    p >= 2 && (2..).take_while(|d| d * d <= p).all(|d| p % d != 0)
}

impl CampaignConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: CampaignConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !is_prime(self.prime) {
            return bad(format!("p = {} is not prime", self.prime));
        }
        if self.periods.is_empty() {
            return bad("period list is empty".into());
        }
        for &t in &self.periods {
            let mut x = t;
            while x > 1 && x % self.prime == 0 {
                x /= self.prime;
            }
            if t == 0 || x != 1 {
                return bad(format!("period {t} is not a power of {}", self.prime));
            }
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if !(self.radii.rho0 > 0.0 && self.radii.rho0 < 0.5) {
            return bad("rho0 must lie in (0, 1/2)".into());
        }
        if !matches!(self.radii.mode.as_str(), "working" | "certified") {
            return bad(format!("radii mode {:?} is neither \"working\" nor \"certified\"", self.radii.mode));
        }
        self.bound_setting()?;
        self.modification_setting()?;
        if self.bangert.orders.iter().any(|&n| n == 0) {
            return bad("Bangert orders must be positive".into());
        }
        Ok(())
    }

    pub fn bound_setting(&self) -> Result<Bound> {
        match &self.bound {
            Setting::Value(a) if a.is_finite() => Ok(Bound::Fixed(*a)),
            Setting::Word(w) if w == "auto" => Ok(Bound::Auto { margin: self.bound_margin }),
            other => Err(Error::Config(format!("bound must be a number or \"auto\", got {other:?}"))),
        }
    }

    pub fn modification_setting(&self) -> Result<Modification> {
        match &self.modification {
            Setting::Value(r) if *r > 0.0 => Ok(Modification::Fixed(*r)),
            Setting::Word(w) if w == "none" => Ok(Modification::None),
            Setting::Word(w) if w == "auto" => {
                Ok(Modification::Auto { initial: self.initial_radius, max_doublings: self.max_doublings })
            }
            other => Err(Error::Config(format!("modification must be a radius, \"auto\" or \"none\", got {other:?}"))),
        }
    }
}
