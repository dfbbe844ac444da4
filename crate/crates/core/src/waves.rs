//! Periodic traveling waves with speed above the minimal one: the
//! exponential sub/super-solution family, the monotone iteration between
//! them, and diagnostics of the resulting profile `Ψ(η, t, z)`.
//!
//! All work happens on a dedicated wave grid and in the frame where the wave
//! travels to the right (the medium is reflected for `ξ = -1`). Everything is
//! simulated in one fixed medium on the line. With `η = x - w - ct`, a run
//! started from an envelope at phase `w` and read at time `nT` is the `n`-th
//! iterate at medium offset `z = w + cnT`. Hence the run of phase `w` at
//! `nT` and the run of phase `w + cT` at `(n-1)T` are consecutive iterates at
//! the same `(x, z)`, and monotonicity is checked node by node without any
//! interpolation.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FitnessSpec, PeriodicCell, PeriodicField};
use crate::frontsim::{LineSolver, LineState, OrbitStages, Pad, PadFill};
use crate::interp::cubic_weights;
use crate::kernel::{Direction, Kernel, TiltedDirection};
use crate::linear::LinearBundle;
use crate::spectrum::{EigenOptions, EigenResult};
use crate::speed::{spreading_speed, LambdaSolver, SpeedOptions};
use crate::steady::nonlinear_stepper;

/// Requested wave speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum WaveSpeed {
    Absolute(f64),
    /// Multiple of the minimal speed on the wave grid.
    Multiple(f64),
}

/// Controls for the wave construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveOptions {
    /// Time nodes (and steps) per period of the wave grid.
    pub n_t: usize,
    /// Space nodes per cell of the wave grid.
    pub n_x: usize,
    /// Half length of the stored `η` range; `30/μ` when `None`.
    pub l_eta: Option<f64>,
    /// Stop when consecutive iterates differ by less than this.
    pub tol: f64,
    pub max_periods: usize,
    /// Allowed monotonicity violation of the iterates.
    pub monotone_tol: f64,
    pub eigen_tol: f64,
    /// Sub-solution residual accepted by the depth calibration.
    pub sub_tol: f64,
    pub d_max: f64,
    /// Safety factor applied to the largest admissible floor amplitude.
    pub b_factor: f64,
    /// Position of `μ1` inside `(μ, min(2μ, μ*))`.
    pub mu1_fraction: f64,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            n_t: 32,
            n_x: 32,
            l_eta: None,
            tol: 1e-6,
            max_periods: 500,
            monotone_tol: 1e-8,
            eigen_tol: 1e-13,
            sub_tol: 1e-8,
            d_max: (1u64 << 30) as f64,
            b_factor: 0.9,
            mu1_fraction: 0.5,
        }
    }
}

/// Time derivatives of the building blocks on the wave grid, from their
/// defining equations.
#[derive(Debug, Clone)]
struct Derivatives {
    phi: Vec<f64>,
    phi1: Vec<f64>,
    phi0: Vec<f64>,
    u_star: Vec<f64>,
}

/// Sub/super-solution data for one direction and speed, on the wave grid
/// in the right-moving frame.
#[derive(Debug, Clone)]
pub struct WaveBounds {
    pub xi: Direction,
    /// `λ(μ)/μ`, equal to the requested speed up to the bisection tolerance.
    pub c: f64,
    pub c_requested: f64,
    pub c_star: f64,
    pub mu_star: f64,
    pub mu: f64,
    pub mu1: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda_zero: f64,
    /// Principal eigenfunctions at `μ`, `μ1` and `0` (sup norm 1).
    pub phi: PeriodicField,
    pub phi1: PeriodicField,
    pub phi0: PeriodicField,
    pub u_star: PeriodicField,
    /// Depth of the exponential sub-solution.
    pub d: f64,
    /// Floor amplitude.
    pub b: f64,
    /// Matching abscissa.
    pub m: f64,
    /// Kernel support bound.
    pub delta0: f64,
    pub l_eta: f64,
    /// Oriented medium on the wave grid.
    pub medium: FitnessSpec,
    pub substeps: usize,
    kernel: Kernel,
    derivs: Arc<Derivatives>,
    orbit: Arc<OrbitStages>,
    far_field: Arc<Vec<Vec<Vec<f64>>>>,
}

/// Value, time derivative and activity of an envelope at one point.
#[derive(Debug, Clone, Copy)]
struct Point {
    u: f64,
    du: f64,
    active: bool,
}

/// The closed-form envelopes whose residual signs are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    /// `e^{-μη} φ`.
    UpperExp,
    /// `min{e^{-μη} φ, u*}`.
    UpperMin,
    /// `e^{-μη} φ - d e^{-μ1 η} φ1`.
    LowerExp,
    /// `max{b φ0, lower exponential}` left of `M`, the exponential beyond.
    LowerFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Sub,
    Super,
}

impl Candidate {
    pub const ALL: [Candidate; 4] = [Self::UpperExp, Self::UpperMin, Self::LowerExp, Self::LowerFloor];

    pub fn kind(self) -> SolutionKind {
        match self {
            Self::UpperExp | Self::UpperMin => SolutionKind::Super,
            Self::LowerExp | Self::LowerFloor => SolutionKind::Sub,
        }
    }
}

/// Worst signed defect `∂t u - [K0 u - u + u f(u)]` of a candidate: the
/// maximum for sub-solutions, the minimum for super-solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub candidate: Candidate,
    pub kind: SolutionKind,
    pub worst: f64,
    /// `(t, η, z)` of the worst node.
    pub at: (f64, f64, f64),
    pub nodes: usize,
}

/// Margins of the four floor conditions (all must be nonnegative, the
/// positivity margin strictly positive) and of the floor sub-solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorReport {
    /// `min (lower exponential - b φ0)` on `M - 2δ0 ≤ η ≤ M`.
    pub matching: f64,
    /// `M` minus the largest zero of the lower exponential.
    pub positivity: f64,
    /// `min (e^{-μη} φ - b φ0)` on `η ≤ M`.
    pub below_exponential: f64,
    /// `min (u* - b φ)`.
    pub below_state: f64,
    /// `min (λ(0) - b b_sat φ0)`, which makes `b φ0` a sub-solution.
    pub floor_growth: f64,
    pub holds: bool,
}

/// Builds the sub/super-solution family for speed `speed` in direction `xi`.
pub fn build_bounds(
    kernel: &Kernel,
    fs: &FitnessSpec,
    xi: Direction,
    speed: WaveSpeed,
    opts: &WaveOptions,
) -> Result<WaveBounds> {
    let cell = fs.cell().with_grid(opts.n_t, opts.n_x)?;
    let mut medium = fs.resampled(cell)?;
    if xi == Direction::Minus {
        medium = medium.reflected();
    }
    let stepper = nonlinear_stepper(kernel, &medium, cell.n_t)?;
    let substeps = stepper.substeps();
    let eig_opts = EigenOptions {
        tol: opts.eigen_tol,
        ..EigenOptions::default()
    };
    let solver = LambdaSolver::new(kernel, &medium.a0, Direction::Plus, eig_opts).with_stepping(cell.n_t, substeps);
    let sp = spreading_speed(&solver, &SpeedOptions::default())?;
    let c_requested = match speed {
        WaveSpeed::Absolute(c) => c,
        WaveSpeed::Multiple(m) => m * sp.c_star,
    };
    if !(c_requested > sp.c_star) {
        return Err(Error::BelowMinimalSpeed {
            c: c_requested,
            c_star: sp.c_star,
        });
    }
    let mu = solve_decay_rate(&solver, c_requested, sp.mu_star)?;
    let mu1 = mu + opts.mu1_fraction * ((2.0 * mu).min(sp.mu_star) - mu);
    let eig = solver.eigen(mu)?;
    let eig1 = solver.eigen(mu1)?;
    let eig0 = solver.eigen(0.0)?;
    let c = eig.lambda0 / mu;

    let seed = vec![medium.a0.max() / medium.b_min(); cell.n_x];
    let orbit = OrbitStages::compute(&stepper, seed)?;
    let rows: Vec<Vec<f64>> = (0..cell.n_t).map(|k| orbit.at_step(k).to_vec()).collect();
    let u_star = PeriodicField::from_rows(cell, &rows)?;

    let bundle = |m: f64| LinearBundle::with_stepping(kernel, TiltedDirection::new(Direction::Plus, m), &medium.a0, cell.n_t, Some(substeps));
    let b_mu = bundle(mu)?;
    let far_field = b_mu.period_stages(eig.phi.row(0));
    let derivs = Derivatives {
        phi: eigen_derivative(&b_mu, &eig, &medium.a0),
        phi1: eigen_derivative(&bundle(mu1)?, &eig1, &medium.a0),
        phi0: eigen_derivative(&bundle(0.0)?, &eig0, &medium.a0),
        u_star: state_derivative(&bundle(0.0)?, &u_star, &medium),
    };

    let mut wb = WaveBounds {
        xi,
        c,
        c_requested,
        c_star: sp.c_star,
        mu_star: sp.mu_star,
        mu,
        mu1,
        lambda: eig.lambda0,
        lambda1: eig1.lambda0,
        lambda_zero: eig0.lambda0,
        phi: eig.phi,
        phi1: eig1.phi,
        phi0: eig0.phi,
        u_star,
        d: 0.0,
        b: 0.0,
        m: 0.0,
        delta0: kernel.radius() + cell.dx(),
        l_eta: opts.l_eta.unwrap_or(30.0 / mu),
        medium,
        substeps,
        kernel: kernel.clone(),
        derivs: Arc::new(derivs),
        orbit: Arc::new(orbit),
        far_field: Arc::new(far_field),
    };
    wb.d = calibrate_d_star(&wb, opts.sub_tol, opts.d_max)?;
    let (b, m) = choose_floor(&wb, opts.b_factor)?;
    wb.b = b;
    wb.m = m;
    Ok(wb)
}

/// Solves `λ(μ)/μ = c` on `(0, μ*)` by bisection (the quotient decreases
/// strictly there).
fn solve_decay_rate(solver: &LambdaSolver, c: f64, mu_star: f64) -> Result<f64> {
    let mut hi = mu_star;
    let mut lo = 0.5 * mu_star;
    let mut tries = 0;
    while solver.quotient(lo)? <= c {
        lo *= 0.5;
        tries += 1;
        if tries > 60 {
            return Err(Error::IterationFailed("decay-rate bisection could not bracket the speed".into()));
        }
    }
    if solver.quotient(hi)? >= c {
        return Err(Error::IterationFailed("decay-rate bisection: speed not above the quotient at mu*".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if solver.quotient(mid)? > c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * mu_star {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `φ_t = C_μ φ - φ + a φ - λ φ` row by row.
fn eigen_derivative(bundle: &LinearBundle, eig: &EigenResult, a: &PeriodicField) -> Vec<f64> {
    let cell = *eig.phi.cell();
    let mut out = Vec::with_capacity(cell.len());
    for k in 0..cell.n_t as isize {
        let row = eig.phi.row(k);
        let cphi = bundle.apply_kernel(row);
        let ak = a.row(k);
        out.extend((0..cell.n_x).map(|j| cphi[j] - row[j] + ak[j] * row[j] - eig.lambda0 * row[j]));
    }
    out
}

/// `u*_t = K0 u* - u* + u* (a0 - b u*)` row by row.
fn state_derivative(bundle: &LinearBundle, u: &PeriodicField, fs: &FitnessSpec) -> Vec<f64> {
    let cell = *u.cell();
    let mut out = Vec::with_capacity(cell.len());
    for k in 0..cell.n_t as isize {
        let row = u.row(k);
        let cu = bundle.apply_kernel(row);
        let (a, b) = (fs.a0.row(k), fs.b.row(k));
        out.extend((0..cell.n_x).map(|j| cu[j] - row[j] + row[j] * (a[j] - b[j] * row[j])));
    }
    out
}

impl WaveBounds {
    pub fn cell(&self) -> &PeriodicCell {
        self.medium.cell()
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Largest zero `η0 = ln(d φ1/φ)/(μ1 - μ)` of the lower exponential.
    pub fn eta_zero(&self) -> f64 {
        let gap = self.mu1 - self.mu;
        self.phi
            .values()
            .iter()
            .zip(self.phi1.values())
            .map(|(p, p1)| (self.d * p1 / p).ln() / gap)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Envelope value and analytic time derivative at `(t_i, η, z_j)`.
    fn point(&self, cand: Candidate, i: usize, eta: f64, j: usize) -> Point {
        let n_x = self.cell().n_x;
        let q = i * n_x + j;
        let vals = |f: &PeriodicField| f.values()[q];
        let e = (-self.mu * eta).exp();
        let vbar = e * vals(&self.phi);
        let dvbar = e * (self.c * self.mu * vals(&self.phi) + self.derivs.phi[q]);
        let lower = |s: &Self| {
            let e1 = (-s.mu1 * eta).exp();
            let w1 = e1 * vals(&s.phi1);
            let dw1 = e1 * (s.c * s.mu1 * vals(&s.phi1) + s.derivs.phi1[q]);
            (vbar - s.d * w1, dvbar - s.d * dw1)
        };
        match cand {
            Candidate::UpperExp => Point {
                u: vbar,
                du: dvbar,
                active: true,
            },
            Candidate::UpperMin => {
                let us = vals(&self.u_star);
                if vbar <= us {
                    Point { u: vbar, du: dvbar, active: true }
                } else {
                    Point {
                        u: us,
                        du: self.derivs.u_star[q],
                        active: true,
                    }
                }
            }
            Candidate::LowerExp => {
                let (u, du) = lower(self);
                Point { u, du, active: u > 0.0 }
            }
            Candidate::LowerFloor => {
                let (v, dv) = lower(self);
                let floor = self.b * vals(&self.phi0);
                if eta <= self.m && floor >= v {
                    Point {
                        u: floor,
                        du: self.b * self.derivs.phi0[q],
                        active: floor > 0.0,
                    }
                } else {
                    Point { u: v, du: dv, active: v > 0.0 }
                }
            }
        }
    }

    /// Envelope value at `(t_i, η, z_j)`.
    pub fn envelope(&self, cand: Candidate, i: usize, eta: f64, j: usize) -> f64 {
        self.point(cand, i, eta, j).u
    }

    fn eta_range(&self, cand: Candidate) -> (f64, f64) {
        match cand {
            Candidate::UpperExp | Candidate::UpperMin => (-self.l_eta, self.l_eta),
            Candidate::LowerExp | Candidate::LowerFloor => {
                (-self.l_eta, self.l_eta.max(self.eta_zero().max(0.0) + self.l_eta))
            }
        }
    }
}

/// Evaluates the signed defect of `cand` on lab nodes covering its `η`
/// range, for every time node and every grid phase, with `K0` applied to
/// the candidate itself on the line.
pub fn residual_check(wb: &WaveBounds, cand: Candidate) -> ResidualReport {
    let cell = *wb.cell();
    let dx = cell.dx();
    let taps = wb.kernel.line_taps(dx);
    let taps = taps.as_slice();
    let h = (taps.len() - 1) / 2;
    let (lo, hi) = wb.eta_range(cand);
    let kind = cand.kind();
    let better = |a: f64, b: f64| match kind {
        SolutionKind::Sub => a > b,
        SolutionKind::Super => a < b,
    };
    let jobs: Vec<(usize, usize)> = (0..cell.n_t).flat_map(|i| (0..cell.n_x).map(move |k| (i, k))).collect();
    let init = match kind {
        SolutionKind::Sub => f64::NEG_INFINITY,
        SolutionKind::Super => f64::INFINITY,
    };
    let partial: Vec<(f64, (f64, f64, f64), usize)> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let t = cell.t(i);
            let shift = k as f64 * dx + wb.c * t;
            let m_a = ((lo + shift) / dx).ceil() as i64;
            let m_b = ((hi + shift) / dx).floor() as i64;
            let first = m_a - h as i64;
            let pts: Vec<Point> = (first..=m_b + h as i64)
                .map(|m| {
                    let eta = m as f64 * dx - shift;
                    wb.point(cand, i, eta, m.rem_euclid(cell.n_x as i64) as usize)
                })
                .collect();
            let (a, b) = (wb.medium.a0.row(i as isize), wb.medium.b.row(i as isize));
            let mut worst = init;
            let mut at = (t, f64::NAN, f64::NAN);
            let mut nodes = 0;
            for m in m_a..=m_b {
                let c = (m - first) as usize;
                let p = pts[c];
                if !p.active {
                    continue;
                }
                let ku: f64 = taps.iter().enumerate().map(|(o, w)| w * pts[c + o - h].u).sum();
                let j = m.rem_euclid(cell.n_x as i64) as usize;
                let defect = p.du - (ku - p.u + p.u * (a[j] - b[j] * p.u));
                nodes += 1;
                if better(defect, worst) {
                    worst = defect;
                    at = (t, m as f64 * dx - shift, cell.x(j));
                }
            }
            (worst, at, nodes)
        })
        .collect();
    let mut report = ResidualReport {
        candidate: cand,
        kind,
        worst: init,
        at: (f64::NAN, f64::NAN, f64::NAN),
        nodes: 0,
    };
    for (w, at, n) in partial {
        report.nodes += n;
        if better(w, report.worst) {
            report.worst = w;
            report.at = at;
        }
    }
    report
}

/// Smallest power of two `d ≥ 1` whose lower exponential has sub-solution
/// residual at most `tol` wherever it is positive; returns twice that value.
pub fn calibrate_d_star(wb: &WaveBounds, tol: f64, d_max: f64) -> Result<f64> {
    let mut trial = wb.clone();
    let mut d = 1.0;
    loop {
        trial.d = d;
        let r = residual_check(&trial, Candidate::LowerExp);
        if r.worst <= tol {
            return Ok(2.0 * d);
        }
        d *= 2.0;
        if d > d_max {
            return Err(Error::IterationFailed(format!(
                "sub-solution depth exceeds {d_max:e} (bounds inconsistent)"
            )));
        }
    }
}

/// Largest floor amplitude for which the floor conditions hold at matching
/// abscissa `m`.
fn floor_bound(wb: &WaveBounds, m: f64) -> f64 {
    let cell = *wb.cell();
    let n = cell.len();
    let phi = wb.phi.values();
    let phi1 = wb.phi1.values();
    let phi0 = wb.phi0.values();
    let us = wb.u_star.values();
    let samples = (2.0 * wb.delta0 / (0.25 * cell.dx())).ceil() as usize;
    let mut bound = f64::INFINITY;
    for q in 0..n {
        for s in 0..=samples {
            let eta = m - 2.0 * wb.delta0 * (1.0 - s as f64 / samples as f64);
            let v = (-wb.mu * eta).exp() * phi[q] - wb.d * (-wb.mu1 * eta).exp() * phi1[q];
            bound = bound.min(v / phi0[q]);
        }
        bound = bound.min((-wb.mu * m).exp() * phi[q] / phi0[q]);
        bound = bound.min(us[q] / phi[q]);
    }
    let growth = wb
        .medium
        .b
        .values()
        .iter()
        .zip(phi0)
        .map(|(b, p)| b * p)
        .fold(0.0, f64::max);
    bound.min(wb.lambda_zero / growth).max(0.0)
}

/// Scans matching abscissas beyond the positivity threshold, sets
/// `b = factor · max_M b(M)` and returns it with the smallest `M` at which
/// the floor conditions hold for that `b`.
fn choose_floor(wb: &WaveBounds, factor: f64) -> Result<(f64, f64)> {
    let step = 0.25 * wb.cell().dx();
    let start = wb.eta_zero() + 2.0 * wb.delta0;
    let mut values = Vec::new();
    let mut best = 0.0f64;
    for s in 1..=4000 {
        let m = start + s as f64 * step;
        let b = floor_bound(wb, m);
        values.push((m, b));
        best = best.max(b);
        if best > 0.0 && b < 0.5 * best {
            break;
        }
    }
    if best <= 0.0 {
        return Err(Error::IterationFailed("no admissible floor amplitude".into()));
    }
    let b = factor * best;
    let m = values
        .iter()
        .find(|(_, bm)| *bm >= b)
        .map(|(m, _)| *m)
        .expect("the maximizer satisfies the bound");
    Ok((b, m))
}

/// Re-verifies the floor conditions for the stored `d`, `b`, `M` on every
/// grid node (η sampled at a quarter of the grid spacing).
pub fn verify_floor_conditions(wb: &WaveBounds) -> FloorReport {
    let cell = *wb.cell();
    let phi = wb.phi.values();
    let phi1 = wb.phi1.values();
    let phi0 = wb.phi0.values();
    let us = wb.u_star.values();
    let samples = (2.0 * wb.delta0 / (0.25 * cell.dx())).ceil() as usize;
    let mut matching = f64::INFINITY;
    let mut below_exponential = f64::INFINITY;
    let mut below_state = f64::INFINITY;
    for q in 0..cell.len() {
        for s in 0..=samples {
            let eta = wb.m - 2.0 * wb.delta0 * (1.0 - s as f64 / samples as f64);
            let v = (-wb.mu * eta).exp() * phi[q] - wb.d * (-wb.mu1 * eta).exp() * phi1[q];
            matching = matching.min(v - wb.b * phi0[q]);
        }
        below_exponential = below_exponential.min((-wb.mu * wb.m).exp() * phi[q] - wb.b * phi0[q]);
        below_state = below_state.min(us[q] - wb.b * phi[q]);
    }
    let positivity = wb.m - wb.eta_zero();
    let floor_growth = wb
        .medium
        .b
        .values()
        .iter()
        .zip(phi0)
        .map(|(b, p)| wb.lambda_zero - wb.b * b * p)
        .fold(f64::INFINITY, f64::min);
    FloorReport {
        matching,
        positivity,
        below_exponential,
        below_state,
        floor_growth,
        holds: matching >= 0.0
            && positivity > 0.0
            && below_exponential >= 0.0
            && below_state >= 0.0
            && floor_growth >= 0.0,
    }
}

/// Right boundary values: the exponential super-solution, built from the RK
/// stage vectors of the eigenfunction so that it is an exact solution of the
/// discrete linear flow.
struct FarField {
    n_x: usize,
    steps: usize,
    dx: f64,
    mu: f64,
    ct: f64,
    k: usize,
    lead: u64,
    stages: Arc<Vec<Vec<Vec<f64>>>>,
}

impl PadFill for FarField {
    fn fill(&self, m_first: i64, step: u64, stage: usize, out: &mut [f64]) {
        let period = step / self.steps as u64;
        let s = (step % self.steps as u64) as usize;
        let frame = frame_position(self.k, self.lead + period, self.dx, self.ct);
        let v = &self.stages[s][stage];
        for (i, o) in out.iter_mut().enumerate() {
            let m = m_first + i as i64;
            *o = (self.mu * (frame - m as f64 * self.dx)).exp() * v[m.rem_euclid(self.n_x as i64) as usize];
        }
    }
}

/// Phase `w = kΔx` advanced by `periods` periods: the lab position of `η = 0`.
fn frame_position(k: usize, periods: u64, dx: f64, ct: f64) -> f64 {
    k as f64 * dx + periods as f64 * ct
}

/// Convergence record of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub period: usize,
    /// `sup |u^n - u^{n-1}|` of the upper iterates.
    pub upper_change: f64,
    pub lower_change: f64,
    /// Largest increase of the upper iterates (should be ≤ 0).
    pub upper_violation: f64,
    /// Largest decrease of the lower iterates (should be ≤ 0).
    pub lower_violation: f64,
}

/// Converged wave profile on `η_l × t_i × z_j`, with `η_l = η_origin + lΔx`
/// for `l = 0..n_eta`. Values are stored in the right-moving frame: for
/// `ξ = -1` the physical offset of index `j` is `-z_j`.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    pub xi: Direction,
    pub c: f64,
    pub mu: f64,
    pub cell: PeriodicCell,
    pub eta_origin: f64,
    pub d_eta: f64,
    pub n_eta: usize,
    /// `Ψ⁺`, limit of the iterates from above.
    pub upper: Vec<f64>,
    /// `Ψ⁻`, limit of the iterates from below.
    pub lower: Vec<f64>,
    /// `sup |Ψ⁺ - Ψ⁻|`.
    pub gap: f64,
    /// Defect of `Ψ(·, 0, ·)` evolved one period and shifted back by `cT`.
    pub residual: f64,
    pub periods: usize,
    pub monotone_violation: f64,
    /// Largest `lower - upper` over all iterates.
    pub ordering_violation: f64,
    /// Smallest lower iterate behind the front (`η ≤ 0`).
    pub lower_floor: f64,
    pub history: Vec<IterationRecord>,
}

impl WaveProfile {
    fn index(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.cell.n_t + i) * self.cell.n_x + j
    }

    pub fn eta(&self, l: usize) -> f64 {
        self.eta_origin + l as f64 * self.d_eta
    }

    /// `Ψ(η_l, t_i, z_j) = Ψ⁺`.
    pub fn psi(&self, l: usize, i: usize, j: usize) -> f64 {
        self.upper[self.index(l, i, j)]
    }

    pub fn psi_lower(&self, l: usize, i: usize, j: usize) -> f64 {
        self.lower[self.index(l, i, j)]
    }

    /// Physical offset `z` of grid index `j`.
    pub fn z(&self, j: usize) -> f64 {
        let z = self.cell.x(j);
        match self.xi {
            Direction::Plus => z,
            Direction::Minus => {
                if j == 0 {
                    0.0
                } else {
                    self.cell.period_x - z
                }
            }
        }
    }

    /// Writes `eta,t,z,psi_upper,psi_lower` rows for every `t_stride`-th
    /// time node.
    pub fn write_csv(&self, path: &Path, t_stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["eta", "t", "z", "psi_upper", "psi_lower"])?;
        for i in (0..self.cell.n_t).step_by(t_stride.max(1)) {
            for l in 0..self.n_eta {
                for j in 0..self.cell.n_x {
                    w.write_record(&[
                        format!("{:.10e}", self.eta(l)),
                        format!("{:.10e}", self.cell.t(i)),
                        format!("{:.10e}", self.z(j)),
                        format!("{:.15e}", self.psi(l, i, j)),
                        format!("{:.15e}", self.psi_lower(l, i, j)),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One lab-frame run pair (upper and lower envelope) at a fixed phase.
struct Run {
    k: usize,
    lead: u64,
    solver: LineSolver,
    upper: LineState,
    lower: LineState,
}

struct Geometry {
    dx: f64,
    ct: f64,
    n_x: usize,
    steps: usize,
    behind: f64,
    len: usize,
}

impl Geometry {
    fn m_left(&self, frame: f64) -> i64 {
        ((frame - self.behind) / self.dx).floor() as i64
    }
}

impl Run {
    fn periods(&self, g: &Geometry) -> u64 {
        self.upper.step / g.steps as u64
    }

    /// Moves both windows so that they start `behind` to the left of the
    /// current frame, filling new nodes with the upper envelope.
    fn recenter(&mut self, wb: &WaveBounds, g: &Geometry) {
        let frame = frame_position(self.k, self.lead + self.periods(g), g.dx, g.ct);
        let target = g.m_left(frame);
        for s in [&mut self.upper, &mut self.lower] {
            let shift = (target - s.m_left) as usize;
            if shift == 0 {
                continue;
            }
            let keep = s.values.len().saturating_sub(shift);
            s.values.drain(..s.values.len() - keep);
            let start = target + keep as i64;
            for m in start..target + g.len as i64 {
                let j = m.rem_euclid(g.n_x as i64) as usize;
                let v = (wb.mu * (frame - m as f64 * g.dx)).exp() * wb.phi.row(0)[j];
                s.values.push(v.min(wb.u_star.row(0)[j]));
            }
            s.m_left = target;
        }
    }

    fn advance_period(&mut self, wb: &WaveBounds, g: &Geometry) -> Result<()> {
        for _ in 0..g.steps {
            self.solver.step(&mut self.upper)?;
            self.solver.step(&mut self.lower)?;
        }
        self.recenter(wb, g);
        Ok(())
    }
}

/// Runs the monotone iteration from both envelopes until consecutive
/// iterates agree within `opts.tol`, then assembles `Ψ±` over one more
/// period and measures the entire-solution residual.
pub fn wave_iterate(wb: &WaveBounds, opts: &WaveOptions) -> Result<WaveProfile> {
    let cell = *wb.cell();
    let dx = cell.dx();
    let steps = cell.n_t;
    let ct = wb.c * cell.period_t;
    let margin = 2.0 * cell.period_x + 2.0 * wb.kernel.radius() + ct;
    let g = Geometry {
        dx,
        ct,
        n_x: cell.n_x,
        steps,
        behind: wb.l_eta + margin,
        len: ((2.0 * (wb.l_eta + margin) + ct) / dx).ceil() as usize + 4,
    };
    let base = nonlinear_stepper_for(wb)?;
    let ceiling = wb.u_star.max() + 1.0;
    let make = |k: usize, lead: u64| -> Result<Run> {
        let pad = FarField {
            n_x: cell.n_x,
            steps,
            dx,
            mu: wb.mu,
            ct,
            k,
            lead,
            stages: wb.far_field.clone(),
        };
        let solver = LineSolver::with_stepper(
            &wb.kernel,
            base.clone(),
            g.len,
            Pad::Fill(wb.orbit.clone()),
            Pad::Fill(Arc::new(pad)),
            ceiling,
        );
        let w = frame_position(k, lead, dx, ct);
        let m_left = g.m_left(w);
        let env = |cand: Candidate| -> Vec<f64> {
            (0..g.len as i64)
                .map(|i| {
                    let m = m_left + i;
                    let eta = m as f64 * dx - w;
                    wb.envelope(cand, 0, eta, m.rem_euclid(cell.n_x as i64) as usize)
                })
                .collect()
        };
        Ok(Run {
            k,
            lead,
            solver,
            upper: LineState::new(m_left, dx, env(Candidate::UpperMin)),
            lower: LineState::new(m_left, dx, env(Candidate::LowerFloor)),
        })
    };
    let mut family_a: Vec<Run> = (0..cell.n_x).map(|k| make(k, 0)).collect::<Result<_>>()?;
    let mut family_b: Vec<Run> = (0..cell.n_x).map(|k| make(k, 1)).collect::<Result<_>>()?;

    let mut history = Vec::new();
    let mut monotone_violation = f64::NEG_INFINITY;
    let mut ordering_violation = f64::NEG_INFINITY;
    let mut lower_floor = f64::INFINITY;
    let mut converged_at = None;
    for n in 1..=opts.max_periods {
        family_a.par_iter_mut().try_for_each(|r| r.advance_period(wb, &g))?;
        if n >= 2 {
            family_b.par_iter_mut().try_for_each(|r| r.advance_period(wb, &g))?;
        }
        let mut rec = IterationRecord {
            period: n,
            upper_change: 0.0,
            lower_change: 0.0,
            upper_violation: f64::NEG_INFINITY,
            lower_violation: f64::NEG_INFINITY,
        };
        for (a, b) in family_a.iter().zip(&family_b) {
            debug_assert_eq!(a.upper.m_left, b.upper.m_left);
            for (x, y) in a.upper.values.iter().zip(&b.upper.values) {
                rec.upper_change = rec.upper_change.max((x - y).abs());
                rec.upper_violation = rec.upper_violation.max(x - y);
            }
            for (x, y) in a.lower.values.iter().zip(&b.lower.values) {
                rec.lower_change = rec.lower_change.max((x - y).abs());
                rec.lower_violation = rec.lower_violation.max(y - x);
            }
            for (lo, up) in a.lower.values.iter().zip(&a.upper.values) {
                ordering_violation = ordering_violation.max(lo - up);
            }
            let frame = frame_position(a.k, n as u64, dx, ct);
            for (i, v) in a.lower.values.iter().enumerate() {
                if a.lower.x(i) - frame <= 0.0 {
                    lower_floor = lower_floor.min(*v);
                }
            }
        }
        monotone_violation = monotone_violation.max(rec.upper_violation).max(rec.lower_violation);
        history.push(rec);
        if monotone_violation > opts.monotone_tol {
            return Err(Error::Monotonicity(format!(
                "iterates moved the wrong way by {monotone_violation:.3e} at period {n}"
            )));
        }
        if rec.upper_change < opts.tol && rec.lower_change < opts.tol {
            converged_at = Some(n);
            break;
        }
    }
    let n_conv = converged_at.ok_or_else(|| {
        let last = history.last().copied();
        Error::IterationFailed(format!(
            "wave iteration did not converge in {} periods (last changes {:?})",
            opts.max_periods,
            last.map(|r| (r.upper_change, r.lower_change))
        ))
    })?;
    drop(family_b);

    // Frame of phase 0 at the final period: N c T = (g + φ) Δx.
    let f0 = frame_position(0, n_conv as u64, dx, ct) / dx;
    let g_int = f0.floor();
    let frac = f0 - g_int;
    let g_int = g_int as i64;
    let half = (wb.l_eta / dx).ceil() as i64;
    let n_eta = (2 * half + 1) as usize;
    let eta_origin = -(half as f64 + frac) * dx;
    let size = n_eta * cell.n_t * cell.n_x;
    let mut upper = vec![0.0; size];
    let mut lower = vec![0.0; size];
    let idx = |l: usize, i: usize, j: usize| (l * cell.n_t + i) * cell.n_x + j;
    for i in 0..steps {
        let sigma = -wb.c * cell.t(i) / dx;
        for l in 0..n_eta {
            let l_rel = l as i64 - half;
            for j in 0..cell.n_x {
                let s = (j as i64 - l_rel - g_int) as f64 + sigma;
                let base_k = s.floor();
                let w = cubic_weights(s - base_k);
                let base_k = base_k as i64;
                let (mut up, mut lo) = (0.0, 0.0);
                for (o, wo) in w.iter().enumerate() {
                    if *wo == 0.0 {
                        continue;
                    }
                    let kk = base_k + o as i64 - 1;
                    let run = &family_a[kk.rem_euclid(cell.n_x as i64) as usize];
                    let m = j as i64 - kk.div_euclid(cell.n_x as i64) * cell.n_x as i64;
                    let pos = m - run.upper.m_left;
                    if pos < 0 || pos >= g.len as i64 {
                        return Err(Error::IterationFailed("wave window too short for the stored range".into()));
                    }
                    up += wo * run.upper.values[pos as usize];
                    lo += wo * run.lower.values[pos as usize];
                }
                upper[idx(l, i, j)] = up;
                lower[idx(l, i, j)] = lo;
            }
        }
        family_a.par_iter_mut().try_for_each(|r| -> Result<()> {
            r.solver.step(&mut r.upper)?;
            r.solver.step(&mut r.lower)
        })?;
    }

    // Ψ(·, 0, ·) evolved one period must equal Ψ(· - cT, 0, ·).
    let shift = ct / dx;
    let mut residual: f64 = 0.0;
    for r in &family_a {
        for (state, table) in [(&r.upper, &upper), (&r.lower, &lower)] {
            for (p, v) in state.values.iter().enumerate() {
                let m = state.m_left + p as i64;
                let pos = (m - r.k as i64 - g_int + half) as f64 - shift;
                let base_l = pos.floor();
                if base_l < 1.0 || base_l + 2.0 >= n_eta as f64 {
                    continue;
                }
                let w = cubic_weights(pos - base_l);
                let base_l = base_l as usize;
                let j = m.rem_euclid(cell.n_x as i64) as usize;
                let pred: f64 = (0..4).map(|o| w[o] * table[idx(base_l + o - 1, 0, j)]).sum();
                residual = residual.max((v - pred).abs());
            }
        }
    }
    let gap = upper
        .iter()
        .zip(&lower)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(WaveProfile {
        xi: wb.xi,
        c: wb.c,
        mu: wb.mu,
        cell,
        eta_origin,
        d_eta: dx,
        n_eta,
        upper,
        lower,
        gap,
        residual,
        periods: n_conv,
        monotone_violation: monotone_violation.max(0.0),
        ordering_violation: ordering_violation.max(0.0),
        lower_floor,
        history,
    })
}

fn nonlinear_stepper_for(wb: &WaveBounds) -> Result<crate::linear::CellStepper> {
    crate::steady::nonlinear_stepper_with(&wb.kernel, &wb.medium, wb.cell().n_t, Some(wb.substeps))
}

/// Thresholds of [`wave_checks`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveCheckOptions {
    pub monotone_tol: f64,
    pub gap_tol: f64,
    pub left_tol: f64,
    pub ratio_band: (f64, f64),
    pub residual_tol: f64,
}

impl Default for WaveCheckOptions {
    fn default() -> Self {
        Self {
            monotone_tol: 1e-8,
            gap_tol: 1e-4,
            left_tol: 1e-3,
            ratio_band: (0.99, 1.01),
            residual_tol: 1e-5,
        }
    }
}

/// Diagnostics of a converged profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveReport {
    pub gap: f64,
    /// `sup |Ψ - u*|` over `η ≤ -L_η/2`.
    pub left_limit_error: f64,
    /// Range of `Ψ / (e^{-μη} φ)` over `L_η/4 ≤ η ≤ L_η/2`.
    pub decay_ratio: (f64, f64),
    pub residual: f64,
    pub monotone_violation: f64,
    /// `u̲ ≤ Ψ ≤ ū` at `t = 0`, largest violation.
    pub sandwich_violation: f64,
    /// Largest spread of `Ψ` over `z` at fixed `(η, t)`.
    pub z_spread: f64,
    /// Periodicity defects in `t` and `z` (zero by construction).
    pub periodicity_t: f64,
    pub periodicity_z: f64,
    pub passed: bool,
}

/// Left limit, tail ratio, sandwich and residual checks of `wp`.
pub fn wave_checks(wp: &WaveProfile, wb: &WaveBounds, opts: &WaveCheckOptions) -> WaveReport {
    let cell = wp.cell;
    let mut left: f64 = 0.0;
    let mut ratio = (f64::INFINITY, f64::NEG_INFINITY);
    let mut sandwich: f64 = 0.0;
    let mut z_spread: f64 = 0.0;
    for l in 0..wp.n_eta {
        let eta = wp.eta(l);
        for i in 0..cell.n_t {
            let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in 0..cell.n_x {
                let (up, lo) = (wp.psi(l, i, j), wp.psi_lower(l, i, j));
                zmin = zmin.min(up);
                zmax = zmax.max(up);
                if eta <= -0.5 * wb.l_eta {
                    let us = wb.u_star.get(i as isize, j as isize);
                    left = left.max((up - us).abs()).max((lo - us).abs());
                }
                if eta >= 0.25 * wb.l_eta && eta <= 0.5 * wb.l_eta {
                    let scale = (-wb.mu * eta).exp() * wb.phi.get(i as isize, j as isize);
                    for v in [up, lo] {
                        ratio.0 = ratio.0.min(v / scale);
                        ratio.1 = ratio.1.max(v / scale);
                    }
                }
                if i == 0 {
                    let hi = wb.envelope(Candidate::UpperMin, 0, eta, j);
                    let floor = wb.envelope(Candidate::LowerFloor, 0, eta, j);
                    sandwich = sandwich.max(up - hi).max(floor - lo);
                }
            }
            z_spread = z_spread.max(zmax - zmin);
        }
    }
    let passed = wp.monotone_violation < opts.monotone_tol
        && wp.gap < opts.gap_tol
        && left < opts.left_tol
        && ratio.0 >= opts.ratio_band.0
        && ratio.1 <= opts.ratio_band.1
        && wp.residual < opts.residual_tol;
    WaveReport {
        gap: wp.gap,
        left_limit_error: left,
        decay_ratio: ratio,
        residual: wp.residual,
        monotone_violation: wp.monotone_violation,
        sandwich_violation: sandwich,
        z_spread,
        periodicity_t: 0.0,
        periodicity_z: 0.0,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn homogeneous() -> (Kernel, FitnessSpec) {
        let k = Kernel::builtin("biweight", 1.0).unwrap();
        let c = PeriodicCell::new(1.0, 2.0, 32, 32).unwrap();
        let fs = FitnessSpec::new(PeriodicField::constant(c, 1.0), PeriodicField::constant(c, 1.0)).unwrap();
        (k, fs)
    }

    fn small_opts() -> WaveOptions {
        WaveOptions {
            n_t: 16,
            n_x: 16,
            ..WaveOptions::default()
        }
    }

    #[test]
    fn decay_rate_matches_scalar_bisection() {
        let (k, fs) = homogeneous();
        let wb = build_bounds(&k, &fs, Direction::Plus, WaveSpeed::Multiple(1.5), &small_opts()).unwrap();
        // On a homogeneous medium the period map multiplies the constant
        // profile by the RK4 amplification of the rate (tilted tap sum - 1 + a0).
        let taps = k.line_taps(wb.cell().dx());
        let n = (wb.cell().n_t * wb.substeps) as f64;
        let h = wb.cell().period_t / n;
        let q = |mu: f64| {
            let z = h * taps.tilted(mu).iter().sum::<f64>();
            let amp = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
            n * amp.ln() / wb.cell().period_t / mu
        };
        let (mut lo, mut hi) = (1e-3, wb.mu_star);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q(mid) > wb.c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((wb.mu - lo).abs() < 1e-8, "{} vs {}", wb.mu, lo);
        assert!(wb.mu1 > wb.mu && wb.mu1 < (2.0 * wb.mu).min(wb.mu_star));
        assert!((wb.c - 1.5 * wb.c_star).abs() < 1e-9);
    }

    #[test]
    fn minimal_speed_has_no_wave() {
        let (k, fs) = homogeneous();
        let err = build_bounds(&k, &fs, Direction::Plus, WaveSpeed::Multiple(1.0), &small_opts()).unwrap_err();
        assert!(err.to_string().contains("no wave below the minimal speed"));
    }

    #[test]
    fn residual_signs_and_floor_conditions() {
        let (k, fs) = homogeneous();
        let wb = build_bounds(&k, &fs, Direction::Plus, WaveSpeed::Multiple(1.5), &small_opts()).unwrap();
        assert!(residual_check(&wb, Candidate::UpperExp).worst >= -1e-9);
        assert!(residual_check(&wb, Candidate::UpperMin).worst >= -1e-9);
        assert!(residual_check(&wb, Candidate::LowerExp).worst <= 1e-8);
        assert!(residual_check(&wb, Candidate::LowerFloor).worst <= 1e-8);
        assert!(verify_floor_conditions(&wb).holds);
        let mut shallow = wb.clone();
        shallow.d = 0.0;
        assert!(residual_check(&shallow, Candidate::LowerExp).worst > 0.0);
    }

    #[test]
    fn homogeneous_wave_is_z_independent_and_monotone() {
        let (k, fs) = homogeneous();
        let opts = small_opts();
        let wb = build_bounds(&k, &fs, Direction::Plus, WaveSpeed::Multiple(1.5), &opts).unwrap();
        let wp = wave_iterate(&wb, &opts).unwrap();
        let report = wave_checks(&wp, &wb, &WaveCheckOptions::default());
        assert!(report.z_spread < 1e-6, "{report:?}");
        assert!(report.passed, "{report:?}");
        assert!(report.sandwich_violation < 1e-10);
        for i in 0..wp.cell.n_t {
            for l in 1..wp.n_eta {
                assert!(wp.psi(l, i, 0) <= wp.psi(l - 1, i, 0) + 1e-12);
            }
        }
    }

    #[test]
    fn reflected_direction_runs() {
        let k = Kernel::builtin("biweight", 1.0).unwrap();
        let c = PeriodicCell::new(1.0, 2.0, 16, 16).unwrap();
        let a0 = PeriodicField::from_fn(c, |_, x| 1.0 + 0.3 * (PI * x).cos() + 0.1 * (PI * x).sin()).unwrap();
        let fs = FitnessSpec::new(a0, PeriodicField::constant(c, 1.0)).unwrap();
        let wb = build_bounds(&k, &fs, Direction::Minus, WaveSpeed::Multiple(1.5), &small_opts()).unwrap();
        assert!(verify_floor_conditions(&wb).holds);
        assert!(wb.c > wb.c_star);
    }
}
