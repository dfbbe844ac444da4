//! Variational spreading speed `c*(ξ) = inf_{μ>0} λ0(ξ, μ, a0)/μ` and
//! derivative/convexity diagnostics of `μ ↦ λ0(μ)`.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::PeriodicField;
use crate::kernel::{Direction, Kernel, TiltedDirection};
use crate::linear::LinearBundle;
use crate::spectrum::{principal_eigen_with, EigenOptions, EigenResult};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Memoizing evaluator of `μ ↦ λ0(ξ, μ, a0)` for one direction and grid.
#[derive(Debug)]
pub struct LambdaSolver {
    kernel: Kernel,
    a0: PeriodicField,
    xi: Direction,
    opts: EigenOptions,
    /// Fixed `(steps, substeps)` per period; the cell's defaults when `None`.
    stepping: Option<(usize, usize)>,
    memo: Mutex<HashMap<u64, f64>>,
}

impl LambdaSolver {
    pub fn new(kernel: &Kernel, a0: &PeriodicField, xi: Direction, opts: EigenOptions) -> Self {
        Self {
            kernel: kernel.clone(),
            a0: a0.clone(),
            xi,
            opts: EigenOptions { gap: false, ..opts },
            stepping: None,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Uses a fixed time discretization for every eigenproblem.
    pub fn with_stepping(mut self, steps: usize, substeps: usize) -> Self {
        self.stepping = Some((steps, substeps));
        self.memo.lock().expect("memo poisoned").clear();
        self
    }

    fn bundle(&self, mu: f64) -> Result<LinearBundle> {
        let td = TiltedDirection::new(self.xi, mu);
        match self.stepping {
            Some((steps, sub)) => LinearBundle::with_stepping(&self.kernel, td, &self.a0, steps, Some(sub)),
            None => LinearBundle::new(&self.kernel, td, &self.a0),
        }
    }

    pub fn direction(&self) -> Direction {
        self.xi
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn medium(&self) -> &PeriodicField {
        &self.a0
    }

    /// `λ0(ξ, μ, a0)`, cached by the exact bits of `μ`.
    pub fn lambda(&self, mu: f64) -> Result<f64> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidInput(format!("decay rate must be nonnegative, got {mu}")));
        }
        if let Some(&v) = self.memo.lock().expect("memo poisoned").get(&mu.to_bits()) {
            return Ok(v);
        }
        let res = principal_eigen_with(&self.bundle(mu)?, &self.a0, &self.opts)?;
        self.memo
            .lock()
            .expect("memo poisoned")
            .insert(mu.to_bits(), res.lambda0);
        Ok(res.lambda0)
    }

    /// Evaluates several rates concurrently.
    pub fn lambda_many(&self, mus: &[f64]) -> Result<Vec<f64>> {
        mus.par_iter().map(|&mu| self.lambda(mu)).collect()
    }

    /// Full eigenpair (not cached).
    pub fn eigen(&self, mu: f64) -> Result<EigenResult> {
        let opts = EigenOptions { gap: true, ..self.opts };
        principal_eigen_with(&self.bundle(mu)?, &self.a0, &opts)
    }

    /// `λ0(μ)/μ`.
    pub fn quotient(&self, mu: f64) -> Result<f64> {
        Ok(self.lambda(mu)? / mu)
    }

    /// Number of distinct rates evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.memo.lock().expect("memo poisoned").len()
    }
}

/// Minimizes a unimodal function on `[lo, hi]` by golden-section search
/// until the bracket is shorter than `tol`. Returns `(x, f(x))`.
pub fn golden_section_min<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Controls for [`spreading_speed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedOptions {
    /// First rate of the geometric bracket scan.
    pub scan_start: f64,
    /// The scan gives up beyond this rate.
    pub scan_limit: f64,
    /// Final bracket width of the golden-section search.
    pub mu_tol: f64,
}

impl Default for SpeedOptions {
    fn default() -> Self {
        Self {
            scan_start: 0.05,
            scan_limit: 100.0,
            mu_tol: 1e-5,
        }
    }
}

/// One evaluated point of `μ ↦ (λ0(μ), λ0(μ)/μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub mu: f64,
    pub lambda: f64,
    pub quotient: f64,
}

/// Spreading speed in one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedResult {
    pub xi: Direction,
    pub c_star: f64,
    pub mu_star: f64,
    pub lambda_at_zero: f64,
    pub bracket: (f64, f64),
    /// All evaluated samples, sorted by `μ`.
    pub samples: Vec<SpeedSample>,
    /// Sampled chord-convexity violations of `λ0(μ)` beyond 1e-8.
    pub convexity_violations: usize,
    /// Samples `μ < μ*` where the convexity certificate of
    /// `λ'(μ) < λ(μ)/μ` fails (i.e. `λ(μ)/μ ≤ c*`).
    pub derivative_violations: usize,
}

/// Computes `c*(ξ)` by a geometric bracket scan and golden-section search.
pub fn spreading_speed(solver: &LambdaSolver, opts: &SpeedOptions) -> Result<SpeedResult> {
    let lambda_at_zero = solver.lambda(0.0)?;
    if lambda_at_zero <= 0.0 {
        return Err(Error::NotUnstable { lambda0: lambda_at_zero });
    }
    // Scan μ_j = start·2^j until the quotient first increases.
    let mut mus = vec![opts.scan_start];
    let mut qs = vec![solver.quotient(opts.scan_start)?];
    loop {
        let mu = 2.0 * mus[mus.len() - 1];
        if mu > opts.scan_limit {
            return Err(Error::BracketFailed { limit: opts.scan_limit });
        }
        let q = solver.quotient(mu)?;
        mus.push(mu);
        qs.push(q);
        if q > qs[qs.len() - 2] {
            break;
        }
    }
    let m = mus.len() - 2;
    let lo = if m == 0 { 0.5 * mus[0] } else { mus[m - 1] };
    let hi = mus[m + 1];
    let (mu_star, c_star) = golden_section_min(|mu| solver.quotient(mu), lo, hi, opts.mu_tol)?;

    let samples = collect_samples(solver)?;
    let convexity_violations = samples
        .windows(3)
        .filter(|w| {
            let (m0, m1, m2) = (w[0].mu, w[1].mu, w[2].mu);
            let chord = w[0].lambda + (w[2].lambda - w[0].lambda) * (m1 - m0) / (m2 - m0);
            w[1].lambda > chord + 1e-8
        })
        .count();
    let derivative_violations = samples
        .iter()
        .filter(|s| s.mu > 0.0 && s.mu < mu_star && s.quotient <= c_star)
        .count();
    Ok(SpeedResult {
        xi: solver.direction(),
        c_star,
        mu_star,
        lambda_at_zero,
        bracket: (lo, hi),
        samples,
        convexity_violations,
        derivative_violations,
    })
}

fn collect_samples(solver: &LambdaSolver) -> Result<Vec<SpeedSample>> {
    let mut mus: Vec<f64> = solver
        .memo
        .lock()
        .expect("memo poisoned")
        .keys()
        .map(|&b| f64::from_bits(b))
        .filter(|&mu| mu > 0.0)
        .collect();
    mus.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    mus.into_iter()
        .map(|mu| {
            let lambda = solver.lambda(mu)?;
            Ok(SpeedSample {
                mu,
                lambda,
                quotient: lambda / mu,
            })
        })
        .collect()
}

/// `λ'(μ)` by central differences with one Richardson step-halving.
pub fn lambda_derivative(solver: &LambdaSolver, mu: f64, h: f64) -> Result<f64> {
    let d = |h: f64| -> Result<f64> { Ok((solver.lambda(mu + h)? - solver.lambda(mu - h)?) / (2.0 * h)) };
    let coarse = d(h)?;
    let fine = d(0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Derivative-inequality check at one rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEntry {
    pub mu: f64,
    pub lambda: f64,
    pub derivative: f64,
    /// `λ(μ)/μ - λ'(μ)`; positive below `μ*`.
    pub margin: f64,
}

/// Chord-convexity check `αλ(μ1) + (1-α)λ(μ2) ≥ λ(αμ1 + (1-α)μ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCheck {
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    /// `chord - λ(mid)`; nonnegative for convex `λ`.
    pub slack: f64,
    pub violated: bool,
}

/// Report of [`derivative_diagnostics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub entries: Vec<DerivativeEntry>,
    /// `|μ* λ'(μ*) - λ(μ*)|`.
    pub optimality_defect: f64,
    pub convexity: Vec<ConvexityCheck>,
    pub margin_violations: usize,
    pub convexity_violations: usize,
}

/// Derivative margins at `mus` (each should lie in `(0, μ*)`), first-order
/// optimality at `μ*`, and chord-convexity checks for `(μ1, μ2, α)` triples.
pub fn derivative_diagnostics(
    solver: &LambdaSolver,
    speed: &SpeedResult,
    mus: &[f64],
    triples: &[(f64, f64, f64)],
) -> Result<DerivativeReport> {
    const H: f64 = 1e-4;
    let entries = mus
        .par_iter()
        .map(|&mu| {
            let lambda = solver.lambda(mu)?;
            let derivative = lambda_derivative(solver, mu, H)?;
            Ok(DerivativeEntry {
                mu,
                lambda,
                derivative,
                margin: lambda / mu - derivative,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ms = speed.mu_star;
    let optimality_defect = (ms * lambda_derivative(solver, ms, H)? - solver.lambda(ms)?).abs();
    let convexity = triples
        .par_iter()
        .map(|&(mu1, mu2, alpha)| convexity_check(solver, mu1, mu2, alpha, 1e-8))
        .collect::<Result<Vec<_>>>()?;
    Ok(DerivativeReport {
        margin_violations: entries.iter().filter(|e| e.mu < ms && e.margin <= 0.0).count(),
        convexity_violations: convexity.iter().filter(|c| c.violated).count(),
        entries,
        optimality_defect,
        convexity,
    })
}

/// One chord-convexity check with tolerance `tol`.
pub fn convexity_check(solver: &LambdaSolver, mu1: f64, mu2: f64, alpha: f64, tol: f64) -> Result<ConvexityCheck> {
    let mid = alpha * mu1 + (1.0 - alpha) * mu2;
    let chord = alpha * solver.lambda(mu1)? + (1.0 - alpha) * solver.lambda(mu2)?;
    let slack = chord - solver.lambda(mid)?;
    Ok(ConvexityCheck {
        mu1,
        mu2,
        alpha,
        slack,
        violated: slack < -tol,
    })
}
