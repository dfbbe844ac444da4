//! Time-space periodic grids, sampled fields, Fourier-table coefficients and
//! the KPP normal-form fitness `f(t, x, u) = a0(t, x) - b(t, x) u`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fundamental cell `[0, T) × [0, p)` with a uniform `n_t × n_x` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCell {
    pub period_t: f64,
    pub period_x: f64,
    pub n_t: usize,
    pub n_x: usize,
}

impl PeriodicCell {
    pub fn new(period_t: f64, period_x: f64, n_t: usize, n_x: usize) -> Result<Self> {
        if !(period_t.is_finite() && period_t > 0.0) {
            return Err(Error::InvalidField(format!("time period must be positive, got {period_t}")));
        }
        if !(period_x.is_finite() && period_x > 0.0) {
            return Err(Error::InvalidField(format!("space period must be positive, got {period_x}")));
        }
        if n_t < 8 || n_x < 8 {
            return Err(Error::InvalidField(format!(
                "grid counts must be at least 8 (n_t = {n_t}, n_x = {n_x})"
            )));
        }
        Ok(Self {
            period_t,
            period_x,
            n_t,
            n_x,
        })
    }

    pub fn dt(&self) -> f64 {
        self.period_t / self.n_t as f64
    }

    pub fn dx(&self) -> f64 {
        self.period_x / self.n_x as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_x
    }

    /// Same periods with grid counts multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_t: self.n_t * factor,
            n_x: self.n_x * factor,
            ..*self
        }
    }

    /// Same periods with different grid counts.
    pub fn with_grid(&self, n_t: usize, n_x: usize) -> Result<Self> {
        Self::new(self.period_t, self.period_x, n_t, n_x)
    }
}

/// Periodic 4-point interpolation of `row` at real index `pos`.
fn periodic_cubic(row: &[f64], pos: f64) -> f64 {
    let n = row.len() as isize;
    let base = pos.floor();
    let mut frac = pos - base;
    let mut k = base as isize;
    if frac > 1.0 - 1e-12 {
        k += 1;
        frac = 0.0;
    } else if frac < 1e-12 {
        frac = 0.0;
    }
    let w = crate::interp::cubic_weights(frac);
    (0..4)
        .map(|o| w[o] * row[(k + o as isize - 1).rem_euclid(n) as usize])
        .sum()
}

/// A function of `(t, x)` sampled on a periodic cell, stored row-major with
/// one row per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    cell: PeriodicCell,
    values: Vec<f64>,
}

impl PeriodicField {
    pub fn new(cell: PeriodicCell, values: Vec<f64>) -> Result<Self> {
        if values.len() != cell.len() {
            return Err(Error::InvalidField(format!(
                "expected {} samples, got {}",
                cell.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite sample at (t-index {}, x-index {})",
                i / cell.n_x,
                i % cell.n_x
            )));
        }
        Ok(Self { cell, values })
    }

    pub fn constant(cell: PeriodicCell, value: f64) -> Self {
        Self {
            cell,
            values: vec![value; cell.len()],
        }
    }

    pub fn from_fn(cell: PeriodicCell, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(cell.len());
        for k in 0..cell.n_t {
            for j in 0..cell.n_x {
                values.push(f(cell.t(k), cell.x(j)));
            }
        }
        Self::new(cell, values)
    }

    /// Samples the field on another grid of the same cell by periodic cubic
    /// interpolation in `t` and then `x` (exact where nodes coincide).
    pub fn resampled(&self, cell: PeriodicCell) -> Result<Self> {
        if cell.period_t != self.cell.period_t || cell.period_x != self.cell.period_x {
            return Err(Error::InvalidField("resampling cannot change the periods".into()));
        }
        let src = self.cell;
        let times: Vec<f64> = (0..cell.n_t).map(|k| cell.t(k)).collect();
        let rows = crate::linear::rows_at_times(self, &times);
        let mut values = Vec::with_capacity(cell.len());
        for k in 0..cell.n_t {
            let row = &rows[k * src.n_x..(k + 1) * src.n_x];
            for j in 0..cell.n_x {
                values.push(periodic_cubic(row, cell.x(j) / src.dx()));
            }
        }
        Self::new(cell, values)
    }

    /// Builds a field from one spatial profile per time row.
    pub fn from_rows(cell: PeriodicCell, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != cell.n_t || rows.iter().any(|r| r.len() != cell.n_x) {
            return Err(Error::InvalidField("row shape does not match the cell".into()));
        }
        Self::new(cell, rows.concat())
    }

    pub fn cell(&self) -> &PeriodicCell {
        &self.cell
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Spatial profile at time index `k` (wrapped).
    pub fn row(&self, k: isize) -> &[f64] {
        let k = k.rem_euclid(self.cell.n_t as isize) as usize;
        &self.values[k * self.cell.n_x..(k + 1) * self.cell.n_x]
    }

    /// Sample at `(k, j)` with periodic wrap-around in both indices.
    pub fn get(&self, k: isize, j: isize) -> f64 {
        let k = k.rem_euclid(self.cell.n_t as isize) as usize;
        let j = j.rem_euclid(self.cell.n_x as isize) as usize;
        self.values[k * self.cell.n_x + j]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `a + δ`.
    pub fn shifted(&self, delta: f64) -> Self {
        self.map(|v| v + delta)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            cell: self.cell,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Spatial reflection `x ↦ -x`, i.e. index `j ↦ (n_x - j) mod n_x`.
    pub fn reflected(&self) -> Self {
        let n = self.cell.n_x;
        let mut values = Vec::with_capacity(self.values.len());
        for k in 0..self.cell.n_t {
            let row = self.row(k as isize);
            values.extend((0..n).map(|j| row[(n - j) % n]));
        }
        Self {
            cell: self.cell,
            values,
        }
    }

    /// True when every row equals the first one within `tol`.
    pub fn is_time_independent(&self, tol: f64) -> bool {
        let first = self.row(0);
        (1..self.cell.n_t as isize).all(|k| {
            self.row(k)
                .iter()
                .zip(first)
                .all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    /// `â(x) = (1/T) ∫ a(t, x) dt`: the periodic trapezoid rule, which on a
    /// uniform periodic grid is the plain mean over rows.
    pub fn time_average(&self) -> Vec<f64> {
        let n = self.cell.n_x;
        let mut avg = vec![0.0; n];
        for k in 0..self.cell.n_t {
            for (a, v) in avg.iter_mut().zip(self.row(k as isize)) {
                *a += v;
            }
        }
        let inv = 1.0 / self.cell.n_t as f64;
        avg.iter_mut().for_each(|a| *a *= inv);
        avg
    }

    /// Writes the field as CSV with a leading grid-metadata comment line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path)?;
        let c = &self.cell;
        writeln!(
            file,
            "#cell,T={:e},p={:e},n_t={},n_x={}",
            c.period_t, c.period_x, c.n_t, c.n_x
        )?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(["t", "x", "value"])?;
        for k in 0..c.n_t {
            for j in 0..c.n_x {
                writer.write_record(&[
                    format!("{:e}", c.t(k)),
                    format!("{:e}", c.x(j)),
                    format!("{:e}", self.values[k * c.n_x + j]),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a field written by [`PeriodicField::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut meta = String::new();
        reader.read_line(&mut meta)?;
        let cell = parse_cell_meta(meta.trim())?;
        let mut csv_reader = csv::Reader::from_reader(reader);
        let mut values = Vec::with_capacity(cell.len());
        for record in csv_reader.records() {
            let record = record?;
            let v = record
                .get(2)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidField(format!("bad field row: {record:?}")))?;
            values.push(v);
        }
        Self::new(cell, values)
    }
}

fn parse_cell_meta(line: &str) -> Result<PeriodicCell> {
    let bad = || Error::InvalidField(format!("missing grid metadata line, got '{line}'"));
    let body = line.strip_prefix("#cell,").ok_or_else(bad)?;
    let (mut t, mut p, mut nt, mut nx) = (None, None, None, None);
    for part in body.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(bad)?;
        match key.trim() {
            "T" => t = value.parse::<f64>().ok(),
            "p" => p = value.parse::<f64>().ok(),
            "n_t" => nt = value.parse::<usize>().ok(),
            "n_x" => nx = value.parse::<usize>().ok(),
            _ => {}
        }
    }
    match (t, p, nt, nx) {
        (Some(t), Some(p), Some(nt), Some(nx)) => PeriodicCell::new(t, p, nt, nx),
        _ => Err(bad()),
    }
}

/// Whether a Fourier mode is a cosine or a sine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    #[default]
    Cos,
    Sin,
}

/// `amp · cos/sin(2π m t/T + 2π n x/p + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub m: i64,
    pub n: i64,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub kind: ModeKind,
}

impl FourierMode {
    pub fn cos(m: i64, n: i64, amp: f64) -> Self {
        Self {
            m,
            n,
            amp,
            phase: 0.0,
            kind: ModeKind::Cos,
        }
    }

    pub fn sin(m: i64, n: i64, amp: f64) -> Self {
        Self {
            kind: ModeKind::Sin,
            ..Self::cos(m, n, amp)
        }
    }

    fn basis(&self, cell: &PeriodicCell, t: f64, x: f64) -> f64 {
        let theta = 2.0 * PI * (self.m as f64 * t / cell.period_t + self.n as f64 * x / cell.period_x)
            + self.phase;
        match self.kind {
            ModeKind::Cos => theta.cos(),
            ModeKind::Sin => theta.sin(),
        }
    }
}

/// A constant plus a list of Fourier modes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FourierTable {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<FourierMode>,
}

impl FourierTable {
    pub fn constant(value: f64) -> Self {
        Self {
            constant: value,
            modes: Vec::new(),
        }
    }

    pub fn with_mode(mut self, mode: FourierMode) -> Self {
        self.modes.push(mode);
        self
    }

    /// Upper bound `|constant| + Σ|amp|`, attained or not.
    pub fn amplitude_bound(&self) -> (f64, f64) {
        let spread: f64 = self.modes.iter().map(|m| m.amp.abs()).sum();
        (self.constant - spread, self.constant + spread)
    }
}

/// Samples a Fourier table on the cell grid.
pub fn evaluate_fourier(table: &FourierTable, cell: &PeriodicCell) -> Result<PeriodicField> {
    for mode in &table.modes {
        if 2 * mode.m.unsigned_abs() as usize >= cell.n_t || 2 * mode.n.unsigned_abs() as usize >= cell.n_x {
            return Err(Error::InvalidField(format!(
                "mode (m = {}, n = {}) is beyond the Nyquist limit of the {}×{} grid",
                mode.m, mode.n, cell.n_t, cell.n_x
            )));
        }
        if !mode.amp.is_finite() || !mode.phase.is_finite() {
            return Err(Error::InvalidField("non-finite mode amplitude or phase".into()));
        }
    }
    PeriodicField::from_fn(*cell, |t, x| {
        table.constant + table.modes.iter().map(|m| m.amp * m.basis(cell, t, x)).sum::<f64>()
    })
}

/// Least-squares amplitudes of `field` on each mode's basis function, assuming
/// the modes have distinct frequencies `(|m|, |n|)` pairs up to sign.
pub fn project_fourier(field: &PeriodicField, modes: &[FourierMode]) -> Vec<f64> {
    let cell = *field.cell();
    modes
        .iter()
        .map(|mode| {
            let mut dot = 0.0;
            let mut norm = 0.0;
            for k in 0..cell.n_t {
                for j in 0..cell.n_x {
                    let b = mode.basis(&cell, cell.t(k), cell.x(j));
                    dot += b * field.get(k as isize, j as isize);
                    norm += b * b;
                }
            }
            if norm == 0.0 {
                0.0
            } else {
                dot / norm
            }
        })
        .collect()
}

/// Growth coefficient `a0` and saturation `b` of `f = a0 - b u`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessSpec {
    pub a0: PeriodicField,
    pub b: PeriodicField,
}

impl FitnessSpec {
    /// Pairs the two fields; the saturation must be strictly positive.
    pub fn new(a0: PeriodicField, b: PeriodicField) -> Result<Self> {
        let fs = Self::unchecked(a0, b)?;
        if fs.b_min() <= 0.0 {
            return Err(Error::InvalidField(format!(
                "saturation must be strictly positive (min b = {})",
                fs.b_min()
            )));
        }
        Ok(fs)
    }

    /// Pairs the two fields without checking the sign of `b` (for diagnostics).
    pub fn unchecked(a0: PeriodicField, b: PeriodicField) -> Result<Self> {
        if a0.cell() != b.cell() {
            return Err(Error::InvalidField("a0 and b live on different cells".into()));
        }
        Ok(Self { a0, b })
    }

    pub fn cell(&self) -> &PeriodicCell {
        self.a0.cell()
    }

    pub fn b_min(&self) -> f64 {
        self.b.min()
    }

    /// The medium seen from the opposite direction.
    pub fn reflected(&self) -> Self {
        Self {
            a0: self.a0.reflected(),
            b: self.b.reflected(),
        }
    }

    /// Both fields interpolated onto another grid of the same cell.
    pub fn resampled(&self, cell: PeriodicCell) -> Result<Self> {
        Self::new(self.a0.resampled(cell)?, self.b.resampled(cell)?)
    }

    /// Both fields on a coarser or finer grid, resampled from Fourier tables.
    pub fn from_tables(a0: &FourierTable, b: &FourierTable, cell: &PeriodicCell) -> Result<Self> {
        Self::new(evaluate_fourier(a0, cell)?, evaluate_fourier(b, cell)?)
    }
}

/// Standing-hypothesis flags for a fitness specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Saturation strictly positive, so `f` is strictly decreasing in `u`.
    pub h1_decreasing: bool,
    /// Zero state linearly unstable: `λ0(a0) > 0`.
    pub h2_unstable: bool,
    /// Principal eigenvalue attained at `μ = 0`: `λ0 > -1 + max â0`.
    pub eigenvalue_exists: bool,
    pub b_min: f64,
    pub lambda0: f64,
    pub max_time_average: f64,
}

/// Checks the standing hypotheses given `λ0(a0)` at `μ = 0`.
pub fn check_hypotheses(fs: &FitnessSpec, lambda0: f64) -> HypothesisReport {
    let max_avg = fs.a0.time_average().into_iter().fold(f64::NEG_INFINITY, f64::max);
    HypothesisReport {
        h1_decreasing: fs.b_min() > 0.0,
        h2_unstable: lambda0 > 0.0,
        eigenvalue_exists: crate::spectrum::existence_check(&fs.a0, lambda0),
        b_min: fs.b_min(),
        lambda0,
        max_time_average: max_avg,
    }
}
