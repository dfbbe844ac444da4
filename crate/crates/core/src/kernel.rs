//! Compactly supported dispersal kernels, their tilted moment transform, and
//! exact periodization onto a cell grid.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::ClampedSpline;
use crate::quad;

/// Names of the built-in kernel profiles.
pub const BUILTIN_KERNELS: &[&str] = &["biweight", "triweight"];

/// Tolerance for symmetry and endpoint checks on sampled kernels.
const TABLE_TOL: f64 = 1e-12;

/// Spatial direction on the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+1")]
    Plus,
    #[serde(rename = "-1")]
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Plus => Direction::Minus,
            Direction::Minus => Direction::Plus,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Plus => write!(f, "+1"),
            Direction::Minus => write!(f, "-1"),
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+1" | "1" | "+" | "plus" => Ok(Direction::Plus),
            "-1" | "-" | "minus" => Ok(Direction::Minus),
            other => Err(Error::InvalidInput(format!(
                "direction must be +1 or -1, got '{other}'"
            ))),
        }
    }
}

/// A direction together with an exponential decay rate `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltedDirection {
    pub xi: Direction,
    pub mu: f64,
}

impl TiltedDirection {
    pub fn new(xi: Direction, mu: f64) -> Self {
        Self { xi, mu }
    }

    /// The signed rate `μ·ξ` that multiplies the displacement in the tilt.
    pub fn rate(&self) -> f64 {
        self.mu * self.xi.sign()
    }
}

/// How a kernel is specified in a problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// One of [`BUILTIN_KERNELS`].
    Named(String),
    /// CSV file of profile samples on a uniform grid over `[-r0, r0]`.
    Table(PathBuf),
    /// Inline samples on a uniform grid over `[-r0, r0]`.
    Samples(Vec<f64>),
}

/// Builds a normalized kernel from a spec and support radius.
pub fn make_kernel(spec: &KernelSpec, radius: f64) -> Result<Kernel> {
    match spec {
        KernelSpec::Named(name) => Kernel::builtin(name, radius),
        KernelSpec::Table(path) => Kernel::from_table(&read_table(path)?, radius),
        KernelSpec::Samples(samples) => Kernel::from_table(samples, radius),
    }
}

fn read_table(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)?;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        // Accept either one column (value) or two columns (s, value).
        let field = record.iter().last().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            // tolerate a single textual header row
            Err(_) if values.is_empty() => continue,
            Err(_) => {
                return Err(Error::InvalidKernel(format!(
                    "non-numeric kernel sample '{field}' in {}",
                    path.display()
                )))
            }
        }
    }
    Ok(values)
}

#[derive(Debug, Clone)]
enum Profile {
    Biweight,
    Triweight,
    Table(ClampedSpline),
}

/// A normalized, even, compactly supported dispersal kernel.
#[derive(Debug, Clone)]
pub struct Kernel {
    radius: f64,
    profile: Profile,
    name: String,
    norm: f64,
    second_moment: f64,
    samples: Vec<f64>,
}

/// Number of quadrature samples stored for inspection.
const SAMPLE_COUNT: usize = 201;

impl Kernel {
    /// Built-in profile by name (`biweight` or `triweight`).
    pub fn builtin(name: &str, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let (profile, norm) = match name.trim().to_ascii_lowercase().as_str() {
            "biweight" => (Profile::Biweight, 15.0 / (16.0 * radius)),
            "triweight" => (Profile::Triweight, 35.0 / (32.0 * radius)),
            other => {
                return Err(Error::InvalidKernel(format!(
                    "unknown kernel '{other}' (built-ins: {})",
                    BUILTIN_KERNELS.join(", ")
                )))
            }
        };
        Ok(Self::finish(radius, profile, name.trim().to_ascii_lowercase(), Some(norm)))
    }

    /// Kernel from samples on a uniform grid over `[-r0, r0]` (endpoints
    /// included). The profile is resampled with a clamped cubic spline and
    /// renormalized.
    pub fn from_table(samples: &[f64], radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let n = samples.len();
        if n < 5 {
            return Err(Error::InvalidKernel(format!(
                "kernel table needs at least 5 samples, got {n}"
            )));
        }
        if let Some((i, v)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidKernel(format!("sample {i} is not finite ({v})")));
        }
        if let Some((i, v)) = samples.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::InvalidKernel(format!("negative sample {v} at index {i}")));
        }
        let peak = samples.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 || samples[1..n - 1].iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidKernel("kernel not positive on support".into()));
        }
        for i in 0..n / 2 {
            let d = (samples[i] - samples[n - 1 - i]).abs();
            if d > TABLE_TOL * peak {
                return Err(Error::InvalidKernel(format!(
                    "kernel table not even: samples {i} and {} differ by {d:.3e}",
                    n - 1 - i
                )));
            }
        }
        if samples[0] > TABLE_TOL * peak || samples[n - 1] > TABLE_TOL * peak {
            return Err(Error::InvalidKernel(format!(
                "kernel does not vanish at the support edge (values {:.3e}, {:.3e})",
                samples[0],
                samples[n - 1]
            )));
        }
        let h = 2.0 * radius / (n - 1) as f64;
        let slope = (-3.0 * samples[0] + 4.0 * samples[1] - samples[2]) / (2.0 * h);
        if slope.abs() > 0.05 * peak / radius {
            return Err(Error::InvalidKernel(format!(
                "kernel derivative does not vanish at the support edge (slope {slope:.3e})"
            )));
        }
        // Resample the right half (using the symmetrized values) on [0, r0].
        let half = (n - 1) / 2;
        let (xs, ys): (Vec<f64>, Vec<f64>) = if (n - 1) % 2 == 0 {
            (half..n)
                .map(|i| {
                    let s = -radius + i as f64 * h;
                    let v = 0.5 * (samples[i] + samples[n - 1 - i]);
                    (s.max(0.0), v)
                })
                .unzip()
        } else {
            // even count: the midpoint lies between two samples
            let mid = 0.5 * (samples[half] + samples[half + 1]);
            std::iter::once((0.0, mid))
                .chain((half + 1..n).map(|i| {
                    let s = -radius + i as f64 * h;
                    (s, 0.5 * (samples[i] + samples[n - 1 - i]))
                }))
                .unzip()
        };
        let spline = ClampedSpline::new(xs, ys, 0.0, 0.0);
        Ok(Self::finish(radius, Profile::Table(spline), "table".into(), None))
    }

    fn finish(radius: f64, profile: Profile, name: String, norm: Option<f64>) -> Self {
        let mut k = Self {
            radius,
            profile,
            name,
            norm: 1.0,
            second_moment: 0.0,
            samples: Vec::new(),
        };
        k.norm = match norm {
            Some(c) => c,
            None => {
                let total = quad::integrate(|s| k.raw(s), -radius, radius, 1e-14);
                1.0 / total
            }
        };
        k.second_moment = quad::integrate(|s| s * s * k.eval(s), -radius, radius, 1e-15);
        k.samples = (0..SAMPLE_COUNT)
            .map(|i| k.eval(-radius + 2.0 * radius * i as f64 / (SAMPLE_COUNT - 1) as f64))
            .collect();
        k
    }

    fn raw(&self, s: f64) -> f64 {
        let z = s.abs() / self.radius;
        if z >= 1.0 {
            return 0.0;
        }
        match &self.profile {
            Profile::Biweight => {
                let w = 1.0 - z * z;
                w * w
            }
            Profile::Triweight => {
                let w = 1.0 - z * z;
                w * w * w
            }
            Profile::Table(spline) => spline.eval(s.abs()).max(0.0),
        }
    }

    /// Normalized profile value `k(s)`.
    pub fn eval(&self, s: f64) -> f64 {
        self.norm * self.raw(s)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `∫ s² k(s) ds`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Normalized profile samples on a uniform grid over `[-r0, r0]`.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `k̂(μ) = ∫ e^{-μ s} k(s) ds`.
    pub fn moment_transform(&self, mu: f64) -> f64 {
        let r = self.radius;
        let scale = (mu.abs() * r).exp();
        quad::integrate(|s| (-mu * s).exp() * self.eval(s), -r, r, 1e-15 * scale)
    }

    /// Grid-aligned taps `Δx·k(jΔx)` for `|jΔx| < r0`, rescaled so they sum
    /// to exactly one.
    pub fn line_taps(&self, dx: f64) -> LineTaps {
        let half = ((self.radius / dx).ceil() as usize).max(1);
        let mut taps: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let s = (i as f64 - half as f64) * dx;
                if s.abs() < self.radius {
                    dx * self.eval(s)
                } else {
                    0.0
                }
            })
            .collect();
        // symmetrize exactly, then renormalize
        for i in 0..half {
            let v = 0.5 * (taps[i] + taps[2 * half - i]);
            taps[i] = v;
            taps[2 * half - i] = v;
        }
        let total: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= total;
        }
        LineTaps { dx, half, taps }
    }

    /// Tilted circulant weights on a periodic grid of `n_x` nodes over a cell
    /// of length `p`: `(Cu)_i = Σ_j w_j u_{i+j}`.
    pub fn periodize(&self, td: TiltedDirection, period: f64, n_x: usize) -> Result<Vec<f64>> {
        if n_x < 8 {
            return Err(Error::InvalidInput(format!("n_x must be at least 8, got {n_x}")));
        }
        if !(period > 0.0) {
            return Err(Error::InvalidInput(format!("period must be positive, got {period}")));
        }
        let taps = self.line_taps(period / n_x as f64);
        Ok(taps.fold(td.rate(), n_x))
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius.is_finite() && radius > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!("radius must be positive, got {radius}")))
    }
}

/// Symmetric convolution taps on a uniform line grid.
#[derive(Debug, Clone)]
pub struct LineTaps {
    dx: f64,
    half: usize,
    taps: Vec<f64>,
}

impl LineTaps {
    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Largest offset `h` with a (possibly zero) tap; taps cover `-h..=h`.
    pub fn half_width(&self) -> usize {
        self.half
    }

    /// Tap at offset `j` (zero outside the stencil).
    pub fn tap(&self, j: isize) -> f64 {
        let i = j + self.half as isize;
        if i < 0 || i as usize >= self.taps.len() {
            0.0
        } else {
            self.taps[i as usize]
        }
    }

    /// Taps ordered from offset `-h` to `+h`.
    pub fn as_slice(&self) -> &[f64] {
        &self.taps
    }

    /// Tilted taps `t_j e^{-rate·jΔx}`, ordered from `-h` to `+h`.
    pub fn tilted(&self, rate: f64) -> Vec<f64> {
        self.taps
            .iter()
            .enumerate()
            .map(|(i, t)| t * (-rate * (i as f64 - self.half as f64) * self.dx).exp())
            .collect()
    }

    /// Folds the tilted taps onto a periodic grid of `n` nodes.
    pub fn fold(&self, rate: f64, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for (i, t) in self.tilted(rate).into_iter().enumerate() {
            let j = i as isize - self.half as isize;
            w[j.rem_euclid(n as isize) as usize] += t;
        }
        w
    }
}
