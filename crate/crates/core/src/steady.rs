//! The positive time-space periodic state `u*` of the nonlinear equation,
//! computed as the attracting fixed point of the stroboscopic period map.

use serde::{Deserialize, Serialize};

use crate::conv::Circulant;
use crate::error::{Error, Result};
use crate::fields::{FitnessSpec, PeriodicField};
use crate::kernel::{Direction, Kernel, TiltedDirection};
use crate::linear::CellStepper;
use crate::spectrum::{principal_eigen, EigenOptions};

/// Controls for [`steady_periodic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyOptions {
    /// Stop when successive period-map iterates differ by less than this.
    pub tol: f64,
    pub max_periods: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_periods: 10_000,
        }
    }
}

/// The periodic state together with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    /// `u*(t_k, x_j)` on the cell grid.
    pub u_star: PeriodicField,
    /// `‖u(T) - u(0)‖∞` of the recorded orbit.
    pub period_map_residual: f64,
    /// Sup distance between the orbits reached from the two seeds.
    pub seeds_agreement: f64,
    /// Periods used from the upper and the lower seed.
    pub periods: (usize, usize),
    /// Principal eigenvalue of the linearization at zero (`μ = 0`).
    pub lambda_zero: f64,
}

/// RK4 stepper of the full nonlinear equation on the periodic cell.
pub(crate) fn nonlinear_stepper(kernel: &Kernel, fs: &FitnessSpec, steps: usize) -> Result<CellStepper> {
    nonlinear_stepper_with(kernel, fs, steps, None)
}

/// As [`nonlinear_stepper`] with an optional fixed substep count.
pub(crate) fn nonlinear_stepper_with(
    kernel: &Kernel,
    fs: &FitnessSpec,
    steps: usize,
    substeps: Option<usize>,
) -> Result<CellStepper> {
    let cell = fs.cell();
    let weights = kernel.periodize(TiltedDirection::new(Direction::Plus, 0.0), cell.period_x, cell.n_x)?;
    let circ = Circulant::new(weights);
    match substeps {
        Some(s) => CellStepper::with_substeps(circ, &fs.a0, Some(&fs.b), steps, s),
        None => {
            let u_max = (fs.a0.max() / fs.b_min()).max(0.0);
            let scale = fs.a0.sup_norm() + 2.0 + 2.0 * fs.b.max() * u_max;
            CellStepper::new(circ, &fs.a0, Some(&fs.b), steps, scale)
        }
    }
}

/// Iterates the period map from `seed` until successive iterates agree
/// within `tol`; returns the final state and the number of periods used.
pub(crate) fn converge_period_map(
    stepper: &CellStepper,
    seed: Vec<f64>,
    tol: f64,
    max_periods: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut u = seed;
    for n in 1..=max_periods {
        let v = stepper.period(&u)?;
        let change = v.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let top = v.iter().cloned().fold(0.0f64, f64::max);
        if top < 1e-300 {
            return Err(Error::IterationFailed(
                "period map collapsed to the zero state".into(),
            ));
        }
        u = v;
        if change < tol {
            return Ok((u, n));
        }
    }
    Err(Error::IterationFailed(format!(
        "period map did not settle within {max_periods} periods"
    )))
}

/// Records the orbit of `u0` over one period on the stepper's time grid.
pub(crate) fn record_orbit(stepper: &CellStepper, u0: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(stepper.steps());
    let end = stepper.period_with(u0, |_, u| rows.push(u.to_vec()))?;
    Ok((rows, end))
}

/// Computes `u*` from the upper seed `max a0 / min b` and cross-checks it
/// against the orbit reached from the small seed `0.01 · max a0 / max b`.
pub fn steady_periodic(kernel: &Kernel, fs: &FitnessSpec, opts: &SteadyOptions) -> Result<PeriodicOrbit> {
    let cell = *fs.cell();
    if fs.b_min() <= 0.0 {
        return Err(Error::InvalidField("saturation must be strictly positive".into()));
    }
    let eig = principal_eigen(
        kernel,
        TiltedDirection::new(Direction::Plus, 0.0),
        &fs.a0,
        &EigenOptions { gap: false, ..EigenOptions::default() },
    )?;
    if eig.lambda0 <= 0.0 {
        return Err(Error::NotUnstable { lambda0: eig.lambda0 });
    }
    let stepper = nonlinear_stepper(kernel, fs, cell.n_t)?;
    let a_max = fs.a0.max();
    let high = vec![a_max / fs.b_min(); cell.n_x];
    let low = vec![0.01 * a_max / fs.b.max(); cell.n_x];
    let (upper, lower) = rayon::join(
        || converge_period_map(&stepper, high, opts.tol, opts.max_periods),
        || converge_period_map(&stepper, low, opts.tol, opts.max_periods),
    );
    let (u0, n_high) = upper?;
    let (v0, n_low) = lower?;
    let (rows, end) = record_orbit(&stepper, &u0)?;
    let (rows_low, _) = record_orbit(&stepper, &v0)?;
    let seeds_agreement = rows
        .iter()
        .flatten()
        .zip(rows_low.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let period_map_residual = end.iter().zip(&u0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let u_star = PeriodicField::from_rows(cell, &rows)?;
    if u_star.min() <= 0.0 {
        return Err(Error::IterationFailed("periodic state is not positive".into()));
    }
    Ok(PeriodicOrbit {
        u_star,
        period_map_residual,
        seeds_agreement,
        periods: (n_high, n_low),
        lambda_zero: eig.lambda0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PeriodicCell;
    use crate::quad;
    use std::f64::consts::PI;

    fn kernel() -> Kernel {
        Kernel::builtin("biweight", 1.0).unwrap()
    }

    #[test]
    fn homogeneous_logistic_is_one() {
        let c = PeriodicCell::new(1.0, 2.0, 64, 32).unwrap();
        let fs = FitnessSpec::new(PeriodicField::constant(c, 1.0), PeriodicField::constant(c, 1.0)).unwrap();
        let orbit = steady_periodic(&kernel(), &fs, &SteadyOptions::default()).unwrap();
        assert!(orbit.u_star.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(orbit.seeds_agreement < 1e-8);
        assert!(orbit.period_map_residual < 1e-10);
    }

    #[test]
    fn periodic_logistic_matches_bernoulli_solution() {
        // u' = u (r(t) - u): w = 1/u solves w' = -r w + 1.
        let r = |t: f64| 1.0 + 0.5 * (2.0 * PI * t).sin();
        let big_r = |t: f64| t + 0.5 * (1.0 - (2.0 * PI * t).cos()) / (2.0 * PI);
        let integral = quad::integrate(|s| big_r(s).exp(), 0.0, 1.0, 1e-15);
        let decay = (-big_r(1.0)).exp();
        let w0 = integral * decay / (1.0 - decay);
        let exact = 1.0 / w0;

        let c = PeriodicCell::new(1.0, 2.0, 256, 16).unwrap();
        let a0 = PeriodicField::from_fn(c, |t, _| r(t)).unwrap();
        let fs = FitnessSpec::new(a0, PeriodicField::constant(c, 1.0)).unwrap();
        let orbit = steady_periodic(&kernel(), &fs, &SteadyOptions::default()).unwrap();
        for v in orbit.u_star.row(0) {
            assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
        }
    }

    #[test]
    fn space_periodic_state_is_stationary_and_squeezed() {
        let c = PeriodicCell::new(1.0, 2.0, 32, 64).unwrap();
        let a0 = PeriodicField::from_fn(c, |_, x| 1.0 + 0.3 * (PI * x).cos()).unwrap();
        let fs = FitnessSpec::new(a0, PeriodicField::constant(c, 1.0)).unwrap();
        let orbit = steady_periodic(&kernel(), &fs, &SteadyOptions::default()).unwrap();
        assert!(orbit.u_star.is_time_independent(1e-9));
        assert!(orbit.u_star.min() > 0.7 - 1e-6 && orbit.u_star.max() < 1.3 + 1e-6);
        assert!(orbit.u_star.min() > 0.5);
    }

    #[test]
    fn unstable_zero_required() {
        let c = PeriodicCell::new(1.0, 2.0, 16, 16).unwrap();
        let fs = FitnessSpec::new(PeriodicField::constant(c, -0.2), PeriodicField::constant(c, 1.0)).unwrap();
        assert!(matches!(
            steady_periodic(&kernel(), &fs, &SteadyOptions::default()),
            Err(Error::NotUnstable { .. })
        ));
    }
}
