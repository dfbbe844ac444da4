//! Explicit RK4 time stepping on the periodic cell and the period
//! (monodromy) map of the tilted linear equation
//!
//! ```text
//! u_t = C_μ u - u + a(t, x) u.
//! ```

use crate::conv::Circulant;
use crate::error::{Error, Result};
use crate::fields::{PeriodicCell, PeriodicField};
use crate::interp::cubic_weights;
use crate::kernel::{Kernel, TiltedDirection};

/// Upper bound on `h · (stiffness scale)` for the explicit step.
const STEP_BOUND: f64 = 0.5;

/// Samples `field` at arbitrary times by periodic cubic interpolation in `t`
/// (exact at grid nodes), returning one spatial row per requested time.
pub(crate) fn rows_at_times(field: &PeriodicField, times: &[f64]) -> Vec<f64> {
    let cell = field.cell();
    let n_x = cell.n_x;
    let mut out = Vec::with_capacity(times.len() * n_x);
    for &t in times {
        let pos = t / cell.dt();
        let base = pos.floor();
        let mut frac = pos - base;
        let mut base = base as isize;
        if frac > 1.0 - 1e-12 {
            base += 1;
            frac = 0.0;
        } else if frac < 1e-12 {
            frac = 0.0;
        }
        if frac == 0.0 {
            out.extend_from_slice(field.row(base));
            continue;
        }
        let w = cubic_weights(frac);
        let rows = [
            field.row(base - 1),
            field.row(base),
            field.row(base + 1),
            field.row(base + 2),
        ];
        for j in 0..n_x {
            out.push(w[0] * rows[0][j] + w[1] * rows[1][j] + w[2] * rows[2][j] + w[3] * rows[3][j]);
        }
    }
    out
}

/// RK4 integrator for `u_t = C u - u + u (a - b u)` on a periodic grid, with
/// coefficients pre-sampled at every RK stage time of one period.
#[derive(Debug, Clone)]
pub(crate) struct CellStepper {
    cell: PeriodicCell,
    circ: Circulant,
    /// Steps per period (each split into `substeps` RK4 substeps).
    steps: usize,
    substeps: usize,
    h: f64,
    /// Coefficient rows at the half-substep times `q h / 2`.
    a_rows: Vec<f64>,
    b_rows: Option<Vec<f64>>,
}

impl CellStepper {
    /// `scale` is the magnitude used for the automatic substep rule.
    pub(crate) fn new(
        circ: Circulant,
        a: &PeriodicField,
        b: Option<&PeriodicField>,
        steps: usize,
        scale: f64,
    ) -> Result<Self> {
        let dt = a.cell().period_t / steps.max(1) as f64;
        let substeps = (dt * scale / STEP_BOUND).floor() as usize + 1;
        Self::with_substeps(circ, a, b, steps, substeps)
    }

    /// As [`CellStepper::new`] with an explicit substep count.
    pub(crate) fn with_substeps(
        circ: Circulant,
        a: &PeriodicField,
        b: Option<&PeriodicField>,
        steps: usize,
        substeps: usize,
    ) -> Result<Self> {
        let cell = *a.cell();
        if steps == 0 || substeps == 0 {
            return Err(Error::InvalidInput("steps per period must be positive".into()));
        }
        if circ.len() != cell.n_x {
            return Err(Error::InvalidInput("circulant size does not match the cell".into()));
        }
        let dt = cell.period_t / steps as f64;
        let h = dt / substeps as f64;
        let times: Vec<f64> = (0..2 * steps * substeps).map(|q| 0.5 * h * q as f64).collect();
        let a_rows = rows_at_times(a, &times);
        let b_rows = b.map(|b| rows_at_times(b, &times));
        Ok(Self {
            cell,
            circ,
            steps,
            substeps,
            h,
            a_rows,
            b_rows,
        })
    }

    pub(crate) fn cell(&self) -> &PeriodicCell {
        &self.cell
    }

    pub(crate) fn circulant(&self) -> &Circulant {
        &self.circ
    }

    pub(crate) fn steps(&self) -> usize {
        self.steps
    }

    pub(crate) fn substeps(&self) -> usize {
        self.substeps
    }

    pub(crate) fn dt(&self) -> f64 {
        self.cell.period_t / self.steps as f64
    }

    /// Number of half-substep coefficient rows per period.
    fn rows_per_period(&self) -> usize {
        2 * self.steps * self.substeps
    }

    pub(crate) fn a_row(&self, q: usize) -> &[f64] {
        let n = self.cell.n_x;
        let q = q % self.rows_per_period();
        &self.a_rows[q * n..(q + 1) * n]
    }

    pub(crate) fn b_row(&self, q: usize) -> Option<&[f64]> {
        let n = self.cell.n_x;
        let q = q % self.rows_per_period();
        self.b_rows.as_ref().map(|b| &b[q * n..(q + 1) * n])
    }

    /// `out = C u - u + u (a_q - b_q u)`.
    pub(crate) fn rhs(&self, u: &[f64], q: usize, out: &mut [f64]) {
        self.circ.apply(u, out);
        let a = self.a_row(q);
        match self.b_row(q) {
            Some(b) => {
                for j in 0..u.len() {
                    out[j] += u[j] * (a[j] - 1.0 - b[j] * u[j]);
                }
            }
            None => {
                for j in 0..u.len() {
                    out[j] += u[j] * (a[j] - 1.0);
                }
            }
        }
    }

    /// One RK4 substep starting at half-substep row `q` (even). When `stages`
    /// is given, the four stage inputs are appended to it.
    fn substep(&self, u: &mut [f64], q: usize, mut stages: Option<&mut Vec<Vec<f64>>>) {
        let n = u.len();
        let h = self.h;
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut w = vec![0.0; n];
        if let Some(s) = stages.as_deref_mut() {
            s.push(u.to_vec());
        }
        self.rhs(u, q, &mut k1);
        for j in 0..n {
            w[j] = u[j] + 0.5 * h * k1[j];
        }
        if let Some(s) = stages.as_deref_mut() {
            s.push(w.clone());
        }
        self.rhs(&w, q + 1, &mut k2);
        for j in 0..n {
            w[j] = u[j] + 0.5 * h * k2[j];
        }
        if let Some(s) = stages.as_deref_mut() {
            s.push(w.clone());
        }
        self.rhs(&w, q + 1, &mut k3);
        for j in 0..n {
            w[j] = u[j] + h * k3[j];
        }
        if let Some(s) = stages.as_deref_mut() {
            s.push(w.clone());
        }
        self.rhs(&w, q + 2, &mut k4);
        for j in 0..n {
            u[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }

    /// Advances `u` from step index `k` by one step (all substeps).
    pub(crate) fn step_in_place(&self, u: &mut [f64], k: usize) -> Result<()> {
        let k = k % self.steps;
        for s in 0..self.substeps {
            self.substep(u, 2 * (k * self.substeps + s), None);
        }
        if let Some(j) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                time: (k + 1) as f64 * self.dt(),
                step: k as u64,
                detail: format!("non-finite value at node {j}"),
            });
        }
        Ok(())
    }

    /// Like [`CellStepper::step_in_place`] but also returns the RK stage
    /// input vectors of every substep (4 per substep).
    pub(crate) fn step_with_stages(&self, u: &mut [f64], k: usize) -> Vec<Vec<f64>> {
        let k = k % self.steps;
        let mut stages = Vec::with_capacity(4 * self.substeps);
        for s in 0..self.substeps {
            self.substep(u, 2 * (k * self.substeps + s), Some(&mut stages));
        }
        stages
    }

    /// Evolves over one period, calling `visit(k, u(t_k))` before each step.
    pub(crate) fn period_with(
        &self,
        u0: &[f64],
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>> {
        let mut u = u0.to_vec();
        for k in 0..self.steps {
            visit(k, &u);
            self.step_in_place(&mut u, k)?;
        }
        Ok(u)
    }

    pub(crate) fn period(&self, u0: &[f64]) -> Result<Vec<f64>> {
        self.period_with(u0, |_, _| {})
    }

    /// RK stage inputs of every step of one period started from `u0`.
    pub(crate) fn period_stages(&self, u0: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let mut u = u0.to_vec();
        (0..self.steps).map(|k| self.step_with_stages(&mut u, k)).collect()
    }
}

/// Tilted linear generator on the periodic cell together with its RK4
/// discretization.
#[derive(Debug, Clone)]
pub struct LinearBundle {
    td: TiltedDirection,
    stepper: CellStepper,
    kernel_total: f64,
}

impl LinearBundle {
    /// Assembles the tilted circulant and the stage coefficients of `a`.
    pub fn new(kernel: &Kernel, td: TiltedDirection, a: &PeriodicField) -> Result<Self> {
        let cell = a.cell();
        Self::with_steps(kernel, td, a, cell.n_t)
    }

    /// As [`LinearBundle::new`] with a custom number of steps per period.
    pub fn with_steps(
        kernel: &Kernel,
        td: TiltedDirection,
        a: &PeriodicField,
        steps: usize,
    ) -> Result<Self> {
        Self::with_stepping(kernel, td, a, steps, None)
    }

    /// As [`LinearBundle::with_steps`] with an optional fixed substep count
    /// (automatic when `None`), e.g. to match another stepper exactly.
    pub fn with_stepping(
        kernel: &Kernel,
        td: TiltedDirection,
        a: &PeriodicField,
        steps: usize,
        substeps: Option<usize>,
    ) -> Result<Self> {
        let cell = a.cell();
        let weights = kernel.periodize(td, cell.period_x, cell.n_x)?;
        let circ = Circulant::new(weights);
        let kernel_total = circ.total();
        let stepper = match substeps {
            Some(s) => CellStepper::with_substeps(circ, a, None, steps, s)?,
            None => {
                let scale = a.sup_norm() + kernel_total + 1.0;
                CellStepper::new(circ, a, None, steps, scale)?
            }
        };
        Ok(Self {
            td,
            stepper,
            kernel_total,
        })
    }

    /// RK stage inputs of every step of one period of the linear flow.
    pub(crate) fn period_stages(&self, u0: &[f64]) -> Vec<Vec<Vec<f64>>> {
        self.stepper.period_stages(u0)
    }

    pub fn tilt(&self) -> TiltedDirection {
        self.td
    }

    pub fn cell(&self) -> &PeriodicCell {
        self.stepper.cell()
    }

    /// Time step `T / steps`.
    pub fn dt(&self) -> f64 {
        self.stepper.dt()
    }

    /// RK4 substeps per time step (1 unless the step bound forces more).
    pub fn substeps(&self) -> usize {
        self.stepper.substeps()
    }

    /// Image of the constant 1 under the discrete tilted circulant.
    pub fn kernel_total(&self) -> f64 {
        self.kernel_total
    }

    /// Circulant weights `w_j` with `(Cu)_i = Σ_j w_j u_{i+j}`.
    pub fn weights(&self) -> &[f64] {
        self.stepper.circulant().weights()
    }

    /// Applies the tilted circulant.
    pub fn apply_kernel(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.stepper.circulant().apply(u, &mut out);
        out
    }

    /// One RK4 step from time index `k`.
    pub fn step(&self, u: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let mut v = u.to_vec();
        self.stepper.step_in_place(&mut v, k)?;
        Ok(v)
    }

    /// The period map `Φ(T)` applied to `u0`.
    pub fn monodromy_apply(&self, u0: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u0)?;
        self.stepper.period(u0)
    }

    /// Period map that also reports `u(t_k)` before each step.
    pub fn monodromy_with(&self, u0: &[f64], visit: impl FnMut(usize, &[f64])) -> Result<Vec<f64>> {
        self.check_len(u0)?;
        self.stepper.period_with(u0, visit)
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.cell().n_x {
            return Err(Error::InvalidInput(format!(
                "state has {} nodes, cell has {}",
                u.len(),
                self.cell().n_x
            )));
        }
        if let Some(j) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite initial value at node {j}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Direction;
    use std::f64::consts::PI;

    fn setup(n_t: usize, n_x: usize) -> (Kernel, PeriodicCell) {
        (
            Kernel::builtin("biweight", 1.0).unwrap(),
            PeriodicCell::new(1.0, 2.0, n_t, n_x).unwrap(),
        )
    }

    fn flat(mu: f64) -> TiltedDirection {
        TiltedDirection::new(Direction::Plus, mu)
    }

    #[test]
    fn constants_are_fixed_points() {
        let (k, c) = setup(64, 32);
        let b = LinearBundle::new(&k, flat(0.0), &PeriodicField::constant(c, 0.0)).unwrap();
        let u = b.step(&vec![1.0; 32], 0).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn scalar_growth() {
        let (k, c) = setup(64, 32);
        let alpha = 0.7;
        let b = LinearBundle::new(&k, flat(0.0), &PeriodicField::constant(c, alpha)).unwrap();
        let u = b.step(&vec![1.0; 32], 0).unwrap();
        let dt = c.dt();
        assert!(u.iter().all(|v| (v - (alpha * dt).exp()).abs() < 1e-11));
        let m = b.monodromy_apply(&vec![1.0; 32]).unwrap();
        assert!(m.iter().all(|v| (v - alpha.exp()).abs() < 1e-8));
    }

    #[test]
    fn separable_coefficient_factorizes() {
        let (k, c) = setup(128, 32);
        let beta = PeriodicField::from_fn(c, |_, x| 0.3 * (PI * x).cos()).unwrap();
        let full = PeriodicField::from_fn(c, |t, x| 0.4 * (2.0 * PI * t).sin() + 0.2 + 0.3 * (PI * x).cos()).unwrap();
        let td = flat(0.6);
        let u0: Vec<f64> = (0..32).map(|j| 1.0 + 0.5 * (j as f64 * 0.4).sin()).collect();
        let m_full = LinearBundle::new(&k, td, &full).unwrap().monodromy_apply(&u0).unwrap();
        let m_beta = LinearBundle::new(&k, td, &beta).unwrap().monodromy_apply(&u0).unwrap();
        // ∫0^1 (0.4 sin(2πt) + 0.2) dt = 0.2
        let factor = 0.2f64.exp();
        for (a, b) in m_full.iter().zip(&m_beta) {
            assert!((a - factor * b).abs() < 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn linearity() {
        let (k, c) = setup(32, 16);
        let a = PeriodicField::from_fn(c, |t, x| (2.0 * PI * t).cos() + x).unwrap();
        let b = LinearBundle::new(&k, flat(1.0), &a).unwrap();
        let u: Vec<f64> = (0..16).map(|j| (j as f64).cos() + 2.0).collect();
        let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        let m1 = b.monodromy_apply(&u).unwrap();
        let m2 = b.monodromy_apply(&u2).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn fourth_order_in_time() {
        let k = Kernel::builtin("biweight", 1.0).unwrap();
        let run = |n_t: usize| {
            let c = PeriodicCell::new(1.0, 2.0, n_t, 32).unwrap();
            let a = PeriodicField::from_fn(c, |t, x| 0.5 * (2.0 * PI * t).sin() + 0.3 * (PI * x).cos()).unwrap();
            let u0: Vec<f64> = (0..32).map(|j| 1.0 + 0.5 * (PI * c.x(j)).sin()).collect();
            LinearBundle::new(&k, flat(0.8), &a).unwrap().monodromy_apply(&u0).unwrap()
        };
        let (u1, u2, u4) = (run(16), run(32), run(64));
        let e1 = u1.iter().zip(&u2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let e2 = u2.iter().zip(&u4).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn substeps_engage_for_large_tilts() {
        let (k, c) = setup(8, 16);
        let b = LinearBundle::new(&k, flat(8.0), &PeriodicField::constant(c, 0.0)).unwrap();
        assert!(b.substeps() > 1);
        assert!(b.dt() / b.substeps() as f64 * (b.kernel_total() + 1.0) < 0.5);
    }

    #[test]
    fn stage_rows_are_exact_at_nodes() {
        let c = PeriodicCell::new(2.0, 1.0, 16, 8).unwrap();
        let f = PeriodicField::from_fn(c, |t, x| t * t + x).unwrap();
        let rows = rows_at_times(&f, &[0.0, 0.125, 2.0 - 0.125]);
        assert_eq!(&rows[0..8], f.row(0));
        assert_eq!(&rows[8..16], f.row(1));
        assert_eq!(&rows[16..24], f.row(15));
    }
}
