//! Run configuration: a JSON file merged with command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rbal_core::balance::SolveMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    P1,
    Product,
    File,
    /// Rational curve `[1 : t^{a_1} : … ]` in ℙᴺ given by monomial exponents.
    Curve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Titer,
    Descent,
}

impl From<Mode> for SolveMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Titer => SolveMode::Titer,
            Mode::Descent => SolveMode::Descent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    /// Degree of the zonal harmonic `cos^d θ`; 0 means none.
    pub harmonic: u32,
    pub amplitude: f64,
}

impl FromStr for Perturbation {
    type Err = String;

    /// `DEGREE:AMPLITUDE`, e.g. `2:0.1`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (d, a) = s.split_once(':').ok_or("expected DEGREE:AMPLITUDE")?;
        let harmonic = d.trim().parse().map_err(|e| format!("bad degree: {e}"))?;
        let amplitude = a.trim().parse().map_err(|e| format!("bad amplitude: {e}"))?;
        Ok(Self { harmonic, amplitude })
    }
}

impl Perturbation {
    pub fn eval(&self, params: &[f64]) -> f64 {
        if self.harmonic == 0 {
            0.0
        } else {
            self.amplitude * params[0].cos().powi(self.harmonic as i32)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange(pub u32, pub u32);

impl FromStr for KRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or("expected A:B")?;
        let a = a.trim().parse().map_err(|e| format!("bad lower bound: {e}"))?;
        let b = b.trim().parse().map_err(|e| format!("bad upper bound: {e}"))?;
        if a < 1 || b < a {
            return Err(format!("need 1 ≤ A ≤ B, got {a}:{b}"));
        }
        Ok(Self(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid(pub usize, pub usize);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(['x', 'X']).ok_or("expected NxM")?;
        Ok(Self(a.trim().parse().map_err(|e| format!("bad N: {e}"))?, b.trim().parse().map_err(|e| format!("bad M: {e}"))?))
    }
}

/// Flags shared by all subcommands. Every flag overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long, value_enum)]
    pub geometry: Option<GeometryKind>,
    /// Sampled variety file for `--geometry file`.
    #[arg(long, value_name = "PATH")]
    pub frame: Option<PathBuf>,
    /// Monomial exponents for `--geometry curve`, e.g. `0,1,3`.
    #[arg(long, value_delimiter = ',')]
    pub exponents: Option<Vec<u32>>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, value_name = "A:B")]
    pub k_range: Option<KRange>,
    #[arg(long, value_name = "NxM")]
    pub grid: Option<Grid>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub torus: Option<Switch>,
    /// Starting or base inner product (H.json format).
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Potential perturbation `DEGREE:AMPLITUDE` (zonal `cos^d θ`).
    #[arg(long, value_name = "D:A")]
    pub psi: Option<Perturbation>,
    /// Random samples or directions for empirical reports.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Distortion gate R.
    #[arg(long)]
    pub gate: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: Option<GeometryKind>,
    pub path: Option<PathBuf>,
    pub exponents: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: Option<Mode>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusConfig {
    pub enabled: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Option<GeometryConfig>,
    pub level_k: Option<u32>,
    pub k_range: Option<[u32; 2]>,
    pub grid: Option<[usize; 2]>,
    pub solver: Option<SolverConfig>,
    pub torus: Option<TorusConfig>,
    pub outputs: Option<OutputConfig>,
    pub input: Option<PathBuf>,
    pub perturbation: Option<Perturbation>,
    pub samples: Option<usize>,
    pub gate: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

/// Fully resolved settings. Recorded verbatim in every report.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub geometry: GeometryKind,
    pub frame_path: Option<PathBuf>,
    pub exponents: Option<Vec<u32>>,
    pub level_k: Option<u32>,
    pub k_range: Option<[u32; 2]>,
    pub grid: Option<[usize; 2]>,
    pub mode: Option<Mode>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: u64,
    pub torus: bool,
    pub input: Option<PathBuf>,
    pub perturbation: Option<Perturbation>,
    pub samples: Option<usize>,
    pub gate: Option<f64>,
    pub out: PathBuf,
}

impl Settings {
    pub fn resolve(flags: &Common) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let geo = file.geometry.unwrap_or_default();
        let solver = file.solver.unwrap_or_default();
        let k_range = match (flags.k_range, file.k_range) {
            (Some(KRange(a, b)), _) => Some([a, b]),
            (None, Some([a, b])) => {
                if a < 1 || b < a {
                    bail!("config k_range must satisfy 1 ≤ a ≤ b, got [{a}, {b}]");
                }
                Some([a, b])
            }
            (None, None) => None,
        };
        let s = Self {
            geometry: flags.geometry.or(geo.kind).unwrap_or(GeometryKind::P1),
            frame_path: flags.frame.clone().or(geo.path),
            exponents: flags.exponents.clone().or(geo.exponents),
            level_k: flags.k.or(file.level_k),
            k_range,
            grid: flags.grid.map(|g| [g.0, g.1]).or(file.grid),
            mode: flags.mode.or(solver.mode),
            tol: flags.tol.or(solver.tol),
            max_iter: flags.max_iter.or(solver.max_iter),
            seed: flags.seed.or(solver.seed).unwrap_or(0),
            torus: flags.torus.map(|t| t == Switch::On).or(file.torus.and_then(|t| t.enabled)).unwrap_or(true),
            input: flags.input.clone().or(file.input),
            perturbation: flags.psi.or(file.perturbation),
            samples: flags.samples.or(file.samples),
            gate: flags.gate.or(file.gate),
            out: flags.out.clone().or(file.outputs.and_then(|o| o.dir)).unwrap_or_else(|| PathBuf::from(".")),
        };
        if let Some(t) = s.tol {
            if !(t > 0.0) {
                bail!("tol must be positive, got {t}");
            }
        }
        Ok(s)
    }

    pub fn require_k(&self) -> Result<u32> {
        match self.level_k {
            Some(0) => bail!("--k must be at least 1"),
            Some(k) => Ok(k),
            None => bail!("missing --k (or level_k in the config)"),
        }
    }

    /// Levels for scanning commands: the range if given, else the single `k`.
    pub fn levels(&self) -> Result<Vec<u32>> {
        match (self.k_range, self.level_k) {
            (Some([a, b]), _) => Ok((a..=b).collect()),
            (None, Some(_)) => Ok(vec![self.require_k()?]),
            (None, None) => bail!("missing --k-range (or --k)"),
        }
    }
}
