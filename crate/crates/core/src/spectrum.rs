//! Principal eigenvalue `λ0(ξ, μ, a)` of the tilted periodic-parabolic
//! operator via power iteration on the period map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{PeriodicCell, PeriodicField};
use crate::kernel::{Kernel, TiltedDirection};
use crate::linear::LinearBundle;

/// Slack used by [`existence_check`].
const EXISTENCE_SLACK: f64 = 1e-9;

/// Deflated iterations used for the gap diagnostic.
const GAP_ITERATIONS: usize = 20;

/// Power-iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Relative change of the growth factor that declares convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed of the random start vector of the gap diagnostic.
    pub seed: u64,
    /// Whether to run the deflated gap diagnostic.
    pub gap: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            seed: 0,
            gap: true,
        }
    }
}

/// Principal eigenpair of the tilted operator.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub tilt: TiltedDirection,
    pub lambda0: f64,
    /// Positive eigenfunction with unit sup norm, periodic in `(t, x)`.
    pub phi: PeriodicField,
    pub residual: f64,
    /// Estimated ratio of the second to the first period-map eigenvalue.
    pub gap_estimate: f64,
    pub iterations: usize,
    /// Spectral radius `e^{λ0 T}` of the discrete period map.
    pub growth: f64,
}

/// Runs power iteration for `λ0(ξ, μ, a)`.
pub fn principal_eigen(
    kernel: &Kernel,
    td: TiltedDirection,
    a: &PeriodicField,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    let bundle = LinearBundle::new(kernel, td, a)?;
    principal_eigen_with(&bundle, a, opts)
}

/// Power iteration on a pre-assembled bundle.
pub fn principal_eigen_with(
    bundle: &LinearBundle,
    a: &PeriodicField,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    let cell = *bundle.cell();
    let n = cell.n_x;
    let mut u = vec![1.0; n];
    let mut r_prev = f64::NAN;
    let mut r = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let v = bundle.monodromy_apply(&u)?;
        iterations += 1;
        let growth = sup(&v);
        if !(growth > 0.0 && growth.is_finite()) {
            return Err(Error::Blowup {
                time: iterations as f64 * cell.period_t,
                step: iterations as u64,
                detail: format!("period-map growth factor {growth}"),
            });
        }
        r_prev = r;
        r = growth;
        u = v.into_iter().map(|x| x / growth).collect();
        if (r - r_prev).abs() < opts.tol * r {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            last: r,
            previous: r_prev,
        });
    }
    let lambda0 = r.ln() / cell.period_t;

    // One more period, storing e^{-λ t_k} U(t_k) u at every time node.
    let mut rows = vec![Vec::new(); cell.n_t];
    bundle.monodromy_with(&u, |k, state| {
        let damp = (-lambda0 * cell.t(k)).exp();
        rows[k] = state.iter().map(|v| v * damp).collect();
    })?;
    let phi = PeriodicField::from_rows(cell, &rows)?;
    let scale = phi.max();
    let phi = phi.map(|v| v / scale);

    let gap_estimate = if opts.gap {
        deflated_gap(bundle, phi.row(0), r, opts.seed)?
    } else {
        f64::NAN
    };
    let mut result = EigenResult {
        tilt: bundle.tilt(),
        lambda0,
        phi,
        residual: 0.0,
        gap_estimate,
        iterations,
        growth: r,
    };
    result.residual = eigen_residual_with(&result, bundle, a);
    Ok(result)
}

/// Growth of `v ← P Φ(T) v`, with `P` the orthogonal projector removing `φ`,
/// relative to the principal growth factor.
fn deflated_gap(bundle: &LinearBundle, phi0: &[f64], r: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pp: f64 = phi0.iter().map(|x| x * x).sum();
    let project = |v: &mut Vec<f64>| {
        let c = v.iter().zip(phi0).map(|(a, b)| a * b).sum::<f64>() / pp;
        v.iter_mut().zip(phi0).for_each(|(a, b)| *a -= c * b);
    };
    let mut v: Vec<f64> = (0..phi0.len()).map(|_| rng.random::<f64>() - 0.5).collect();
    project(&mut v);
    let mut log_norm = 0.0;
    let mut log10 = 0.0;
    for it in 1..=GAP_ITERATIONS {
        let mut w = bundle.monodromy_apply(&v)?;
        project(&mut w);
        let norm = l2(&w);
        if norm == 0.0 {
            return Ok(0.0);
        }
        log_norm += norm.ln() - l2(&v).ln();
        v = w.into_iter().map(|x| x / norm).collect();
        if it == GAP_ITERATIONS / 2 {
            log10 = log_norm;
        }
    }
    let per_period = ((log_norm - log10) / (GAP_ITERATIONS / 2) as f64).exp();
    Ok(per_period / r)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Whether `λ0 > -1 + max_x â(x)`, i.e. the principal spectrum point is a
/// genuine eigenvalue.
pub fn existence_check(a: &PeriodicField, lambda0: f64) -> bool {
    let max_avg = a.time_average().into_iter().fold(f64::NEG_INFINITY, f64::max);
    lambda0 > -1.0 + max_avg + EXISTENCE_SLACK
}

/// `sup |-∂tφ + Cφ - φ + aφ - λ0 φ|` with `∂t` from fourth-order central
/// periodic differences.
pub fn eigen_residual(res: &EigenResult, kernel: &Kernel, a: &PeriodicField) -> Result<f64> {
    let bundle = LinearBundle::new(kernel, res.tilt, a)?;
    Ok(eigen_residual_with(res, &bundle, a))
}

fn eigen_residual_with(res: &EigenResult, bundle: &LinearBundle, a: &PeriodicField) -> f64 {
    operator_defect(&res.phi, res.lambda0, bundle, a)
}

/// Sup norm of `-∂tφ + Cφ - φ + aφ - λφ` on the grid.
pub(crate) fn operator_defect(phi: &PeriodicField, lambda: f64, bundle: &LinearBundle, a: &PeriodicField) -> f64 {
    let cell: PeriodicCell = *phi.cell();
    let dt = cell.dt();
    let mut worst: f64 = 0.0;
    for k in 0..cell.n_t as isize {
        let row = phi.row(k);
        let cphi = bundle.apply_kernel(row);
        let (m2, m1, p1, p2) = (phi.row(k - 2), phi.row(k - 1), phi.row(k + 1), phi.row(k + 2));
        let ak = a.row(k);
        for j in 0..cell.n_x {
            let dphi = (-p2[j] + 8.0 * p1[j] - 8.0 * m1[j] + m2[j]) / (12.0 * dt);
            let d = -dphi + cphi[j] - row[j] + ak[j] * row[j] - lambda * row[j];
            worst = worst.max(d.abs());
        }
    }
    worst
}
