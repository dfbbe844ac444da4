//! Problem configuration files (TOML).
//!
//! ```toml
//! [cell]
//! period_t = 1.0
//! period_x = 2.0
//! # n_t = 512, n_x = 256 by default
//!
//! [kernel]
//! name = "biweight"     # or: table = "kernel.csv", or: samples = [...]
//! radius = 1.0
//!
//! [a0]
//! constant = 1.0
//! [[a0.modes]]          # amp · cos(2π m t/T + 2π n x/p + phase)
//! m = 0
//! n = 1
//! amp = 0.3
//!
//! [b]
//! constant = 1.0
//!
//! # Optional sections with defaults: [solver], [frontsim], [wave], [output].
//! ```
//!
//! Semantic errors carry the line of the offending section or key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FitnessSpec, FourierTable, PeriodicCell};
use crate::frontsim::{ComparisonOptions, FrontOptions, InitialKind, SpreadOptions};
use crate::kernel::{make_kernel, Kernel, KernelSpec, BUILTIN_KERNELS};
use crate::spectrum::EigenOptions;
use crate::speed::SpeedOptions;
use crate::steady::SteadyOptions;
use crate::waves::{WaveCheckOptions, WaveOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub period_t: f64,
    pub period_x: f64,
    #[serde(default = "default_n_t")]
    pub n_t: usize,
    #[serde(default = "default_n_x")]
    pub n_x: usize,
}

fn default_n_t() -> usize {
    512
}

fn default_n_x() -> usize {
    256
}

/// Exactly one of `name`, `table` or `samples`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
    pub mu_tol: f64,
    pub mu_scan_limit: f64,
    pub steady_tol: f64,
    /// Seed for every random quantity (start vectors, property-test data).
    pub seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let e = EigenOptions::default();
        let s = SpeedOptions::default();
        Self {
            eigen_tol: e.tol,
            eigen_max_iter: e.max_iter,
            mu_tol: s.mu_tol,
            mu_scan_limit: s.scan_limit,
            steady_tol: SteadyOptions::default().tol,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontSection {
    pub n_periods: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_per_period: Option<usize>,
    pub thetas: Vec<f64>,
    pub burn_in: f64,
    pub behind_cells: usize,
    pub ahead_cells: usize,
    pub snapshot_every: usize,
}

impl Default for FrontSection {
    fn default() -> Self {
        let f = FrontOptions::default();
        Self {
            n_periods: f.n_periods,
            steps_per_period: Some(128),
            thetas: vec![0.25, 0.5, 0.75],
            burn_in: f.burn_in,
            behind_cells: f.behind_periods,
            ahead_cells: f.ahead_periods,
            snapshot_every: f.snapshot_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveSection {
    pub n_t: usize,
    pub n_x: usize,
    pub speed_multiple: f64,
    pub tol: f64,
    pub max_periods: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_eta: Option<f64>,
}

impl Default for WaveSection {
    fn default() -> Self {
        let w = WaveOptions::default();
        Self {
            n_t: w.n_t,
            n_x: w.n_x,
            speed_multiple: 1.5,
            tol: w.tol,
            max_periods: w.max_periods,
            l_eta: w.l_eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// A validated problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub cell: CellSection,
    pub kernel: KernelSection,
    pub a0: FourierTable,
    pub b: FourierTable,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub frontsim: FrontSection,
    #[serde(default)]
    pub wave: WaveSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory that relative paths are resolved against (not serialized).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// 1-based line of `[section]` (and of `key =` inside it, when given).
fn locate(src: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line == header;
            if in_section && key.is_none() {
                return Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some(k) = key {
                let name = line.split('=').next().unwrap_or("").trim();
                if name == k {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn anchored(src: &str, section: &str, key: Option<&str>, msg: impl std::fmt::Display) -> Error {
    match locate(src, section, key).or_else(|| locate(src, section, None)) {
        Some(line) => Error::Config(format!("line {line}: {msg}")),
        None => Error::Config(format!("[{section}]: {msg}")),
    }
}

impl ProblemConfig {
    /// Reads and validates a config file; relative paths resolve against
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&src, &base)
    }

    /// Parses and validates config text.
    pub fn parse(src: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate(src)?;
        Ok(cfg)
    }

    /// Serializes back to TOML; parsing the result yields an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn validate(&self, src: &str) -> Result<()> {
        let c = &self.cell;
        for (key, v) in [("period_t", c.period_t), ("period_x", c.period_x)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(anchored(src, "cell", Some(key), format!("{key} must be positive (got {v})")));
            }
        }
        for (key, v) in [("n_t", c.n_t), ("n_x", c.n_x)] {
            if v < 4 {
                return Err(anchored(src, "cell", Some(key), format!("{key} must be at least 4 (got {v})")));
            }
        }
        let k = &self.kernel;
        let given = [k.name.is_some(), k.table.is_some(), k.samples.is_some()].iter().filter(|b| **b).count();
        if given != 1 {
            return Err(anchored(
                src,
                "kernel",
                None,
                "give exactly one of `name`, `table` or `samples`",
            ));
        }
        if let Some(name) = &k.name {
            if !BUILTIN_KERNELS.contains(&name.trim().to_ascii_lowercase().as_str()) {
                return Err(anchored(
                    src,
                    "kernel",
                    Some("name"),
                    format!("unknown kernel '{name}' (built-ins: {})", BUILTIN_KERNELS.join(", ")),
                ));
            }
        }
        if let Some(table) = &k.table {
            let path = self.base_dir.join(table);
            if !path.is_file() {
                return Err(anchored(
                    src,
                    "kernel",
                    Some("table"),
                    format!("kernel table {} does not exist", path.display()),
                ));
            }
        }
        if !(k.radius > 0.0 && k.radius.is_finite()) {
            return Err(anchored(src, "kernel", Some("radius"), "radius must be positive"));
        }
        let cell = self.periodic_cell().map_err(|e| anchored(src, "cell", None, e))?;
        let fs_a = crate::fields::evaluate_fourier(&self.a0, &cell).map_err(|e| anchored(src, "a0", None, e))?;
        let fs_b = crate::fields::evaluate_fourier(&self.b, &cell).map_err(|e| anchored(src, "b", None, e))?;
        if fs_b.min() <= 0.0 {
            return Err(anchored(
                src,
                "b",
                Some("constant"),
                format!("saturation must be strictly positive (min b = {})", fs_b.min()),
            ));
        }
        drop(fs_a);
        let s = &self.solver;
        for (key, v) in [
            ("eigen_tol", s.eigen_tol),
            ("mu_tol", s.mu_tol),
            ("mu_scan_limit", s.mu_scan_limit),
            ("steady_tol", s.steady_tol),
        ] {
            if !(v > 0.0) {
                return Err(anchored(src, "solver", Some(key), format!("{key} must be positive")));
            }
        }
        let f = &self.frontsim;
        if f.thetas.is_empty() || f.thetas.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(anchored(src, "frontsim", Some("thetas"), "thresholds must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&f.burn_in) {
            return Err(anchored(src, "frontsim", Some("burn_in"), "burn_in must lie in [0, 1)"));
        }
        if f.behind_cells < 2 || f.ahead_cells < 2 {
            return Err(anchored(src, "frontsim", None, "window must extend at least 2 cells each way"));
        }
        let w = &self.wave;
        if !(w.tol > 0.0) {
            return Err(anchored(src, "wave", Some("tol"), "tol must be positive"));
        }
        if w.n_t < 4 || w.n_x < 4 {
            return Err(anchored(src, "wave", None, "wave grid must have at least 4 nodes per axis"));
        }
        if let Some(l) = w.l_eta {
            if !(l > 0.0) {
                return Err(anchored(src, "wave", Some("l_eta"), "l_eta must be positive"));
            }
        }
        Ok(())
    }

    pub fn periodic_cell(&self) -> Result<PeriodicCell> {
        PeriodicCell::new(self.cell.period_t, self.cell.period_x, self.cell.n_t, self.cell.n_x)
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let k = &self.kernel;
        if let Some(name) = &k.name {
            KernelSpec::Named(name.clone())
        } else if let Some(table) = &k.table {
            KernelSpec::Table(self.base_dir.join(table))
        } else {
            KernelSpec::Samples(k.samples.clone().unwrap_or_default())
        }
    }

    pub fn build_kernel(&self) -> Result<Kernel> {
        make_kernel(&self.kernel_spec(), self.kernel.radius)
    }

    pub fn fitness(&self) -> Result<FitnessSpec> {
        FitnessSpec::from_tables(&self.a0, &self.b, &self.periodic_cell()?)
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.solver.eigen_tol,
            max_iter: self.solver.eigen_max_iter,
            seed: self.solver.seed,
            ..EigenOptions::default()
        }
    }

    pub fn speed_options(&self) -> SpeedOptions {
        SpeedOptions {
            mu_tol: self.solver.mu_tol,
            scan_limit: self.solver.mu_scan_limit,
            ..SpeedOptions::default()
        }
    }

    pub fn steady_options(&self) -> SteadyOptions {
        SteadyOptions {
            tol: self.solver.steady_tol,
            ..SteadyOptions::default()
        }
    }

    pub fn front_options(&self) -> FrontOptions {
        let f = &self.frontsim;
        FrontOptions {
            behind_periods: f.behind_cells,
            ahead_periods: f.ahead_cells,
            n_periods: f.n_periods,
            steps_per_period: f.steps_per_period,
            thetas: f.thetas.clone(),
            burn_in: f.burn_in,
            initial: InitialKind::Step,
            snapshot_every: f.snapshot_every,
        }
    }

    pub fn spread_options(&self) -> SpreadOptions {
        SpreadOptions {
            n_periods: self.frontsim.n_periods,
            steps_per_period: self.frontsim.steps_per_period,
            ..SpreadOptions::default()
        }
    }

    pub fn comparison_options(&self) -> ComparisonOptions {
        ComparisonOptions {
            seed: self.solver.seed,
            ..ComparisonOptions::default()
        }
    }

    pub fn wave_options(&self) -> WaveOptions {
        let w = &self.wave;
        WaveOptions {
            n_t: w.n_t,
            n_x: w.n_x,
            l_eta: w.l_eta,
            tol: w.tol,
            max_periods: w.max_periods,
            eigen_tol: WaveOptions::default().eigen_tol.min(self.solver.eigen_tol),
            ..WaveOptions::default()
        }
    }

    pub fn wave_check_options(&self) -> WaveCheckOptions {
        WaveCheckOptions::default()
    }

    /// Output directory, resolved against the config location.
    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[cell]
period_t = 1.0
period_x = 2.0

[kernel]
name = \"biweight\"
radius = 1.0

[a0]
constant = 1.0

[b]
constant = 1.0
";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ProblemConfig::parse(MINIMAL, Path::new(".")).unwrap();
        assert_eq!((cfg.cell.n_t, cfg.cell.n_x), (512, 256));
        assert_eq!(cfg.solver, SolverSection::default());
        assert_eq!(cfg.wave.speed_multiple, 1.5);
        let k = cfg.build_kernel().unwrap();
        assert_eq!(k.name(), "biweight");
    }

    #[test]
    fn zero_saturation_is_rejected_with_line() {
        let src = MINIMAL.replace("[b]\nconstant = 1.0", "[b]\nconstant = 0.0");
        let err = ProblemConfig::parse(&src, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("saturation must be strictly positive"), "{err}");
        assert!(err.contains("line 13"), "{err}");
    }

    #[test]
    fn unknown_kernel_lists_builtins() {
        let src = MINIMAL.replace("biweight", "gaussian");
        let err = ProblemConfig::parse(&src, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("line 6") && err.contains("biweight, triweight"), "{err}");
    }

    #[test]
    fn nonpositive_period_and_missing_section() {
        let src = MINIMAL.replace("period_x = 2.0", "period_x = -2.0");
        let err = ProblemConfig::parse(&src, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("period_x"), "{err}");
        let src = MINIMAL.replace("[a0]\nconstant = 1.0\n", "");
        let err = ProblemConfig::parse(&src, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("a0") && err.contains("line"), "{err}");
    }

    #[test]
    fn missing_table_file_is_rejected() {
        let src = MINIMAL.replace("name = \"biweight\"", "table = \"does-not-exist.csv\"");
        let err = ProblemConfig::parse(&src, Path::new("/nonexistent")).unwrap_err().to_string();
        assert!(err.contains("does not exist"), "{err}");
    }

    #[test]
    fn round_trip() {
        let src = format!(
            "{MINIMAL}\n[[a0.modes]]\nm = 1\nn = 1\namp = 0.3\nphase = 0.25\nkind = \"sin\"\n\n[wave]\nl_eta = 20.0\n"
        );
        let cfg = ProblemConfig::parse(&src, Path::new(".")).unwrap();
        assert_eq!(cfg.a0.modes.len(), 1);
        let text = cfg.to_toml().unwrap();
        let back = ProblemConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.to_toml().unwrap(), text);
    }
}
