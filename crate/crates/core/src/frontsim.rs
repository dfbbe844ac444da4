//! Direct simulation of the nonlinear equation on a truncated line: front
//! initial data, RK4 stepping with boundary pads, level-set front tracking,
//! speed regression and the spreading-dichotomy check.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::LineCorrelator;
use crate::error::{Error, Result};
use crate::fields::FitnessSpec;
use crate::kernel::{Direction, Kernel};
use crate::linear::CellStepper;
use crate::steady::{converge_period_map, nonlinear_stepper, PeriodicOrbit};

/// Values on a uniform line grid `X_m = m Δx`, `m = m_left .. m_left + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineState {
    pub m_left: i64,
    pub dx: f64,
    pub values: Vec<f64>,
    /// Steps taken since `t = 0` (time is `step · Δt`).
    pub step: u64,
    pub t: f64,
}

impl LineState {
    pub fn new(m_left: i64, dx: f64, values: Vec<f64>) -> Self {
        Self {
            m_left,
            dx,
            values,
            step: 0,
            t: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Abscissa of interior node `i`.
    pub fn x(&self, i: usize) -> f64 {
        (self.m_left + i as i64) as f64 * self.dx
    }

    pub fn x_left(&self) -> f64 {
        self.x(0)
    }

    pub fn x_right(&self) -> f64 {
        self.x(self.len() - 1)
    }
}

/// Magnitude below which line values are set to exactly zero.
const UNDERFLOW: f64 = 1e-200;

/// Supplies boundary values for the nodes just outside the interior.
pub(crate) trait PadFill: Send + Sync {
    /// Fills `out[i]` with the value at node `m_first + i` for RK stage
    /// `stage` of global step `step`.
    fn fill(&self, m_first: i64, step: u64, stage: usize, out: &mut [f64]);
}

/// RK stage vectors of the discrete periodic orbit, one list per step.
#[derive(Debug, Clone)]
pub(crate) struct OrbitStages {
    n_x: usize,
    steps: Vec<Vec<Vec<f64>>>,
}

impl OrbitStages {
    /// Converges the period map of `stepper` from `seed` and records the
    /// stage inputs of every step of one period.
    pub(crate) fn compute(stepper: &CellStepper, seed: Vec<f64>) -> Result<Self> {
        let (mut u, _) = converge_period_map(stepper, seed, 1e-13, 100_000)?;
        let steps = (0..stepper.steps())
            .map(|k| stepper.step_with_stages(&mut u, k))
            .collect();
        Ok(Self {
            n_x: stepper.cell().n_x,
            steps,
        })
    }

    /// Orbit value at the start of step `k` at medium node `j`.
    pub(crate) fn at_step(&self, k: usize) -> &[f64] {
        &self.steps[k % self.steps.len()][0]
    }

    pub(crate) fn min(&self) -> f64 {
        self.steps.iter().flat_map(|s| s[0].iter()).cloned().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn max(&self) -> f64 {
        self.steps.iter().flat_map(|s| s[0].iter()).cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl PadFill for OrbitStages {
    fn fill(&self, m_first: i64, step: u64, stage: usize, out: &mut [f64]) {
        let stages = &self.steps[(step % self.steps.len() as u64) as usize];
        let v = &stages[stage];
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[(m_first + i as i64).rem_euclid(self.n_x as i64) as usize];
        }
    }
}

/// Boundary condition on one side of the truncated line.
#[derive(Clone)]
pub(crate) enum Pad {
    Zero,
    Fill(Arc<dyn PadFill>),
}

/// RK4 solver of the nonlinear equation on a fixed-length line window.
pub(crate) struct LineSolver {
    stepper: CellStepper,
    correlator: LineCorrelator,
    len: usize,
    left: Pad,
    right: Pad,
    ceiling: f64,
}

impl LineSolver {
    pub(crate) fn new(
        kernel: &Kernel,
        fs: &FitnessSpec,
        steps: usize,
        len: usize,
        left: Pad,
        right: Pad,
        ceiling: f64,
    ) -> Result<Self> {
        let stepper = nonlinear_stepper(kernel, fs, steps)?;
        Ok(Self::with_stepper(kernel, stepper, len, left, right, ceiling))
    }

    pub(crate) fn with_stepper(
        kernel: &Kernel,
        stepper: CellStepper,
        len: usize,
        left: Pad,
        right: Pad,
        ceiling: f64,
    ) -> Self {
        let taps = kernel.line_taps(stepper.cell().dx());
        let correlator = LineCorrelator::new(taps.as_slice().to_vec(), len);
        Self {
            stepper,
            correlator,
            len,
            left,
            right,
            ceiling,
        }
    }

    pub(crate) fn dt(&self) -> f64 {
        self.stepper.dt()
    }

    /// `out = K0 w - w + w (a - b w)` with pads for stage `stage` of `step`.
    fn rhs(&self, w: &[f64], m_left: i64, step: u64, q: usize, stage: usize, ext: &mut [f64], out: &mut [f64]) {
        let h = self.correlator.half_width();
        let n = self.len;
        {
            let (lp, rest) = ext.split_at_mut(h);
            let (mid, rp) = rest.split_at_mut(n);
            match &self.left {
                Pad::Zero => lp.fill(0.0),
                Pad::Fill(f) => f.fill(m_left - h as i64, step, stage, lp),
            }
            mid.copy_from_slice(w);
            match &self.right {
                Pad::Zero => rp.fill(0.0),
                Pad::Fill(f) => f.fill(m_left + n as i64, step, stage, rp),
            }
        }
        // Outputs can only be nonzero within `h` nodes of a nonzero input.
        let lo = match self.left {
            Pad::Zero => w.iter().position(|&v| v != 0.0).map_or(n, |i| i.saturating_sub(h)),
            Pad::Fill(_) => 0,
        };
        let hi = match self.right {
            Pad::Zero => w.iter().rposition(|&v| v != 0.0).map_or(0, |i| (i + h + 1).min(n)),
            Pad::Fill(_) => n,
        };
        let (lo, hi) = if lo >= hi && !matches!((&self.left, &self.right), (Pad::Zero, Pad::Zero)) {
            (0, n)
        } else {
            (lo, hi)
        };
        self.correlator.apply_range(ext, out, lo.min(hi), hi);
        let a = self.stepper.a_row(q);
        let b = self.stepper.b_row(q).expect("nonlinear stepper has a saturation row");
        let n_x = a.len() as i64;
        let mut j = m_left.rem_euclid(n_x) as usize;
        for i in 0..n {
            out[i] += w[i] * (a[j] - 1.0 - b[j] * w[i]);
            j += 1;
            if j == n_x as usize {
                j = 0;
            }
        }
    }

    /// Advances the state by one time step.
    pub(crate) fn step(&self, s: &mut LineState) -> Result<()> {
        let n = self.len;
        debug_assert_eq!(s.values.len(), n);
        let steps = self.stepper.steps() as u64;
        let sub = self.stepper.substeps();
        let k = (s.step % steps) as usize;
        let h = self.dt() / sub as f64;
        let mut ext = vec![0.0; n + 2 * self.correlator.half_width()];
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut w = vec![0.0; n];
        for sidx in 0..sub {
            let q = 2 * (k * sub + sidx);
            let st = 4 * sidx;
            let u = &s.values;
            self.rhs(u, s.m_left, s.step, q, st, &mut ext, &mut k1);
            for i in 0..n {
                w[i] = u[i] + 0.5 * h * k1[i];
            }
            self.rhs(&w, s.m_left, s.step, q + 1, st + 1, &mut ext, &mut k2);
            for i in 0..n {
                w[i] = u[i] + 0.5 * h * k2[i];
            }
            self.rhs(&w, s.m_left, s.step, q + 1, st + 2, &mut ext, &mut k3);
            for i in 0..n {
                w[i] = u[i] + h * k3[i];
            }
            self.rhs(&w, s.m_left, s.step, q + 2, st + 3, &mut ext, &mut k4);
            let u = &mut s.values;
            for i in 0..n {
                u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        // Flush values far below any resolvable level so the active support
        // stays compact ahead of the front.
        for v in s.values.iter_mut() {
            if v.abs() < UNDERFLOW {
                *v = 0.0;
            }
        }
        s.step += 1;
        s.t = s.step as f64 * self.dt();
        if let Some((i, &v)) = s
            .values
            .iter()
            .enumerate()
            .find(|(_, &v)| !v.is_finite() || v < -1e-9 || v > self.ceiling)
        {
            return Err(Error::Blowup {
                time: s.t,
                step: s.step,
                detail: format!(
                    "value {v:.6e} at x = {:.6} outside [0, {:.6}] (state max {:.6e}, min {:.6e})",
                    s.x(i),
                    self.ceiling,
                    s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    s.values.iter().cloned().fold(f64::INFINITY, f64::min),
                ),
            });
        }
        Ok(())
    }
}

/// Kind of initial data on the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialKind {
    /// `u*(0, x)` for `x ≤ 0`, zero beyond.
    Step,
    /// `u*(0, x) · min(1, e^{-μ x})`.
    Exponential { mu: f64 },
    /// `σ cos²(π x / (2w))` on `|x| < w`, zero elsewhere.
    Bump { height: f64, half_width: f64 },
}

/// Initial line data on the nodes `m_left .. m_left + len`, using the
/// periodic state row `u0` at `t = 0` on the cell grid.
pub fn make_front_data(kind: InitialKind, u0: &[f64], m_left: i64, len: usize, dx: f64) -> Result<LineState> {
    let n_x = u0.len() as i64;
    let ustar = |m: i64| u0[m.rem_euclid(n_x) as usize];
    let values = (0..len as i64)
        .map(|i| {
            let m = m_left + i;
            let x = m as f64 * dx;
            match kind {
                InitialKind::Step => Ok(if m <= 0 { ustar(m) } else { 0.0 }),
                InitialKind::Exponential { mu } => {
                    if !(mu > 0.0) {
                        return Err(Error::InvalidInput(format!("tail rate must be positive, got {mu}")));
                    }
                    Ok(ustar(m) * (-mu * x).exp().min(1.0))
                }
                InitialKind::Bump { height, half_width } => {
                    if !(height >= 0.0 && half_width > 0.0) {
                        return Err(Error::InvalidInput("bump needs height ≥ 0 and width > 0".into()));
                    }
                    Ok(if x.abs() < half_width {
                        let c = (std::f64::consts::FRAC_PI_2 * x / half_width).cos();
                        height * c * c
                    } else {
                        0.0
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LineState::new(m_left, dx, values))
}

/// Rightmost linearly interpolated crossing of `level`; `x_left` when the
/// state is below the level everywhere, `x_right` when it is above at the
/// right end.
pub fn front_position(s: &LineState, level: f64) -> f64 {
    let v = &s.values;
    match v.iter().rposition(|&u| u >= level) {
        None => s.x_left(),
        Some(i) if i + 1 == v.len() => s.x_right(),
        Some(i) => s.x(i) + s.dx * (v[i] - level) / (v[i] - v[i + 1]),
    }
}

/// Level-crossing history of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub theta: f64,
    pub level: f64,
    /// `(t, x_f(t))` pairs with strictly increasing `t`.
    pub samples: Vec<(f64, f64)>,
    pub speed: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// Front displacement over each full period after the burn-in.
    pub increments: Vec<f64>,
}

/// Least-squares line through the samples with `t ≥ burn_in · t_end`.
/// Returns `(slope, intercept, window)`.
pub fn estimate_speed(samples: &[(f64, f64)], burn_in: f64) -> Result<(f64, f64, (f64, f64))> {
    let t_end = samples.last().map(|s| s.0).unwrap_or(0.0);
    let t0 = samples.first().map(|s| s.0).unwrap_or(0.0);
    let cut = t0 + burn_in * (t_end - t0);
    let used: Vec<(f64, f64)> = samples.iter().cloned().filter(|s| s.0 >= cut).collect();
    if used.len() < 20 {
        return Err(Error::InvalidInput(format!(
            "speed fit needs at least 20 samples after burn-in, got {}",
            used.len()
        )));
    }
    let n = used.len() as f64;
    let mt = used.iter().map(|s| s.0).sum::<f64>() / n;
    let mx = used.iter().map(|s| s.1).sum::<f64>() / n;
    let stt: f64 = used.iter().map(|s| (s.0 - mt) * (s.0 - mt)).sum();
    let stx: f64 = used.iter().map(|s| (s.0 - mt) * (s.1 - mx)).sum();
    let slope = stx / stt;
    Ok((slope, mx - slope * mt, (used[0].0, used[used.len() - 1].0)))
}

/// Controls for front simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontOptions {
    /// Window length kept behind the front, in cell lengths.
    pub behind_periods: usize,
    /// Window length kept ahead of the front, in cell lengths.
    pub ahead_periods: usize,
    pub n_periods: usize,
    /// Time steps per period; the cell's `n_t` when `None`.
    pub steps_per_period: Option<usize>,
    pub thetas: Vec<f64>,
    pub burn_in: f64,
    pub initial: InitialKind,
    /// Record a snapshot of the state every this many periods (0 = never).
    pub snapshot_every: usize,
}

impl Default for FrontOptions {
    fn default() -> Self {
        Self {
            behind_periods: 10,
            ahead_periods: 20,
            n_periods: 60,
            steps_per_period: None,
            thetas: vec![0.5],
            burn_in: 0.3,
            initial: InitialKind::Step,
            snapshot_every: 0,
        }
    }
}

/// Output of [`simulate_front`].
#[derive(Debug, Clone)]
pub struct FrontRun {
    pub xi: Direction,
    pub traces: Vec<FrontTrace>,
    pub final_state: LineState,
    /// `(t, values)` snapshots.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

/// Front run in direction `ξ`: the medium is reflected for `ξ = -1` so the
/// front always travels to the right. The left pad follows the periodic
/// state, the right pad is zero, and the window moves with the front in
/// whole-cell shifts so that the medium stays aligned with the grid.
pub fn simulate_front(
    kernel: &Kernel,
    fs: &FitnessSpec,
    orbit: &PeriodicOrbit,
    xi: Direction,
    opts: &FrontOptions,
) -> Result<FrontRun> {
    let (fs, ustar) = oriented(fs, orbit, xi);
    let cell = *fs.cell();
    let steps = opts.steps_per_period.unwrap_or(cell.n_t);
    let stepper = nonlinear_stepper(kernel, &fs, steps)?;
    let stages = Arc::new(OrbitStages::compute(&stepper, ustar.row(0).to_vec())?);
    let n_x = cell.n_x as i64;
    if opts.behind_periods < 2 || opts.ahead_periods < 2 {
        return Err(Error::InvalidInput(
            "front window needs at least two cells on each side".into(),
        ));
    }
    let m_left = -(opts.behind_periods as i64) * n_x;
    let len = ((opts.behind_periods + opts.ahead_periods) as i64 * n_x + 1) as usize;
    let recenter_at = (opts.behind_periods + 1) as f64 * cell.period_x;
    let ceiling = stages.max() + 1.0;
    let min_star = stages.min();
    let solver = LineSolver::with_stepper(
        kernel,
        stepper,
        len,
        Pad::Fill(stages.clone()),
        Pad::Zero,
        ceiling,
    );
    let mut state = make_front_data(opts.initial, stages.at_step(0), m_left, len, cell.dx())?;
    let levels: Vec<f64> = opts.thetas.iter().map(|th| th * min_star).collect();
    let mut samples: Vec<Vec<(f64, f64)>> = vec![Vec::new(); levels.len()];
    let mut snapshots = Vec::new();
    let record = |state: &LineState, samples: &mut Vec<Vec<(f64, f64)>>| {
        for (trace, &level) in samples.iter_mut().zip(&levels) {
            trace.push((state.t, front_position(state, level)));
        }
    };
    record(&state, &mut samples);
    let track = levels.iter().cloned().fold(f64::INFINITY, f64::min).min(0.5 * min_star);
    for period in 0..opts.n_periods {
        for _ in 0..steps {
            solver.step(&mut state)?;
            record(&state, &mut samples);
            if front_position(&state, track) - state.x_left() > recenter_at {
                shift_window(&mut state, n_x as usize);
            }
        }
        if opts.snapshot_every > 0 && (period + 1) % opts.snapshot_every == 0 {
            snapshots.push((state.t, state.values.clone()));
        }
    }
    let traces = samples
        .into_iter()
        .zip(opts.thetas.iter().zip(&levels))
        .map(|(samples, (&theta, &level))| {
            let (speed, intercept, window) = estimate_speed(&samples, opts.burn_in)?;
            let increments = samples
                .iter()
                .step_by(steps)
                .filter(|s| s.0 >= window.0 - 1e-12)
                .map(|s| s.1)
                .collect::<Vec<_>>()
                .windows(2)
                .map(|w| w[1] - w[0])
                .collect();
            Ok(FrontTrace {
                theta,
                level,
                samples,
                speed,
                intercept,
                window,
                increments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrontRun {
        xi,
        traces,
        final_state: state,
        snapshots,
    })
}

/// Drops `shift` nodes on the left and appends zeros on the right.
fn shift_window(state: &mut LineState, shift: usize) {
    state.values.drain(..shift);
    state.values.resize(state.values.len() + shift, 0.0);
    state.m_left += shift as i64;
}

/// Medium and periodic state seen from direction `ξ`.
pub(crate) fn oriented(fs: &FitnessSpec, orbit: &PeriodicOrbit, xi: Direction) -> (FitnessSpec, crate::fields::PeriodicField) {
    match xi {
        Direction::Plus => (fs.clone(), orbit.u_star.clone()),
        Direction::Minus => (fs.reflected(), orbit.u_star.reflected()),
    }
}

/// Controls for [`verify_spreading`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadOptions {
    pub n_periods: usize,
    /// Periods at the end of the run over which the checks are evaluated.
    pub final_periods: usize,
    pub steps_per_period: Option<usize>,
    pub bump_height: f64,
    /// Bump half width in cell lengths.
    pub bump_half_width: f64,
    pub fast_factor: f64,
    pub faster_factor: f64,
    pub slow_factor: f64,
    pub fast_tol: f64,
    pub slow_tol: f64,
}

impl Default for SpreadOptions {
    fn default() -> Self {
        Self {
            n_periods: 60,
            final_periods: 10,
            steps_per_period: None,
            bump_height: 0.5,
            bump_half_width: 1.0,
            fast_factor: 1.2,
            faster_factor: 2.0,
            slow_factor: 0.8,
            fast_tol: 1e-3,
            slow_tol: 5e-2,
        }
    }
}

/// Spreading checks in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionSpread {
    pub xi: Direction,
    pub c_star: f64,
    /// `max u` over `x·ξ ≥ 1.2 c* t` in the final periods.
    pub leading_max: f64,
    /// Same at `2 c*`.
    pub leading_max_faster: f64,
    /// `max |u - u*|` over `0 ≤ x·ξ ≤ 0.8 c* t` in the final periods.
    pub behind_deviation: f64,
    pub fast_ok: bool,
    pub slow_ok: bool,
}

/// Result of [`verify_spreading`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadingReport {
    pub directions: Vec<DirectionSpread>,
    /// False when the population never established (e.g. zero data).
    pub invaded: bool,
    pub notes: Vec<String>,
    pub passed: bool,
}

/// Runs compactly supported bump data on a symmetric domain with zero pads
/// and checks decay ahead of `1.2 c*` and convergence to `u*` behind
/// `0.8 c*` in both directions.
pub fn verify_spreading(
    kernel: &Kernel,
    fs: &FitnessSpec,
    orbit: &PeriodicOrbit,
    c_plus: f64,
    c_minus: f64,
    opts: &SpreadOptions,
) -> Result<SpreadingReport> {
    let cell = *fs.cell();
    let steps = opts.steps_per_period.unwrap_or(cell.n_t);
    let stepper = nonlinear_stepper(kernel, fs, steps)?;
    let stages = OrbitStages::compute(&stepper, orbit.u_star.row(0).to_vec())?;
    let horizon = opts.n_periods as f64 * cell.period_t;
    let reach = opts.fast_factor.max(1.0) * c_plus.max(c_minus) * horizon;
    let half = reach + (4.0 + opts.bump_half_width) * cell.period_x + 2.0 * kernel.radius();
    let n_x = cell.n_x as i64;
    let m_half = (half / cell.dx()).ceil() as i64 + n_x;
    let len = (2 * m_half + 1) as usize;
    let solver = LineSolver::with_stepper(kernel, stepper, len, Pad::Zero, Pad::Zero, stages.max() + 1.0);
    let kind = InitialKind::Bump {
        height: opts.bump_height,
        half_width: opts.bump_half_width * cell.period_x,
    };
    let mut state = make_front_data(kind, stages.at_step(0), -m_half, len, cell.dx())?;

    let dirs = [(Direction::Plus, c_plus), (Direction::Minus, c_minus)];
    let mut stats: Vec<DirectionSpread> = dirs
        .iter()
        .map(|&(xi, c)| DirectionSpread {
            xi,
            c_star: c,
            leading_max: 0.0,
            leading_max_faster: 0.0,
            behind_deviation: 0.0,
            fast_ok: false,
            slow_ok: false,
        })
        .collect();
    let first_checked = (opts.n_periods.saturating_sub(opts.final_periods) * steps) as u64;
    let total = (opts.n_periods * steps) as u64;
    while state.step < total {
        solver.step(&mut state)?;
        if state.step < first_checked {
            continue;
        }
        let t = state.t;
        let ustar = stages.at_step((state.step % steps as u64) as usize);
        for st in stats.iter_mut() {
            let sign = st.xi.sign();
            for (i, &u) in state.values.iter().enumerate() {
                let m = state.m_left + i as i64;
                let y = sign * m as f64 * cell.dx();
                if y >= opts.fast_factor * st.c_star * t {
                    st.leading_max = st.leading_max.max(u);
                }
                if y >= opts.faster_factor * st.c_star * t {
                    st.leading_max_faster = st.leading_max_faster.max(u);
                }
                if y >= 0.0 && y <= opts.slow_factor * st.c_star * t {
                    let target = ustar[m.rem_euclid(n_x) as usize];
                    st.behind_deviation = st.behind_deviation.max((u - target).abs());
                }
            }
        }
    }
    let peak = state.values.iter().cloned().fold(0.0, f64::max);
    let invaded = peak >= 0.5 * stages.min();
    let mut notes = Vec::new();
    if !invaded {
        notes.push("no invasion: the population did not establish".to_string());
    }
    for st in stats.iter_mut() {
        st.fast_ok = st.leading_max < opts.fast_tol;
        st.slow_ok = invaded && st.behind_deviation < opts.slow_tol;
    }
    let passed = stats.iter().all(|s| s.fast_ok && s.slow_ok);
    Ok(SpreadingReport {
        directions: stats,
        invaded,
        notes,
        passed,
    })
}

/// Controls for [`comparison_trials`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOptions {
    pub pairs: usize,
    pub periods: usize,
    /// Line length in cells (zero pads on both sides).
    pub cells: usize,
    pub steps_per_period: Option<usize>,
    pub seed: u64,
    pub tol: f64,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            pairs: 50,
            periods: 5,
            cells: 4,
            steps_per_period: Some(64),
            seed: 0,
            tol: 1e-10,
        }
    }
}

/// Result of [`comparison_trials`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub pairs: usize,
    /// Largest `u - v` seen at any node and step over all pairs.
    pub worst_violation: f64,
    /// Pairs whose ordering broke by more than the tolerance.
    pub violations: usize,
    pub passed: bool,
}

/// Evolves seeded random ordered pairs `u0 ≤ v0` (nodewise, within
/// `[0, max a0 / min b]`) and records the largest ordering violation.
pub fn comparison_trials(kernel: &Kernel, fs: &FitnessSpec, opts: &ComparisonOptions) -> Result<ComparisonReport> {
    let cell = *fs.cell();
    let steps = opts.steps_per_period.unwrap_or(cell.n_t);
    let len = opts.cells * cell.n_x;
    let top = fs.a0.max() / fs.b_min();
    let solver = LineSolver::new(kernel, fs, steps, len, Pad::Zero, Pad::Zero, top + 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.pairs)
        .map(|_| {
            let u: Vec<f64> = (0..len).map(|_| top * rng.random::<f64>()).collect();
            let v: Vec<f64> = u.iter().map(|&x| x + (top - x) * rng.random::<f64>()).collect();
            (u, v)
        })
        .collect();
    let worst = pairs
        .into_par_iter()
        .map(|(u, v)| -> Result<f64> {
            let mut su = LineState::new(0, cell.dx(), u);
            let mut sv = LineState::new(0, cell.dx(), v);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..opts.periods * steps {
                solver.step(&mut su)?;
                solver.step(&mut sv)?;
                let gap = su.values.iter().zip(&sv.values).fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b));
                worst = worst.max(gap);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let violations = worst.iter().filter(|&&w| w > opts.tol).count();
    Ok(ComparisonReport {
        pairs: opts.pairs,
        worst_violation: worst.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        violations,
        passed: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{PeriodicCell, PeriodicField};
    use crate::steady::{steady_periodic, SteadyOptions};

    fn homogeneous(n_t: usize, n_x: usize) -> (Kernel, FitnessSpec, PeriodicOrbit) {
        let k = Kernel::builtin("biweight", 1.0).unwrap();
        let c = PeriodicCell::new(1.0, 2.0, n_t, n_x).unwrap();
        let fs = FitnessSpec::new(PeriodicField::constant(c, 1.0), PeriodicField::constant(c, 1.0)).unwrap();
        let orbit = steady_periodic(&k, &fs, &SteadyOptions::default()).unwrap();
        (k, fs, orbit)
    }

    #[test]
    fn exact_linear_fit() {
        let samples: Vec<(f64, f64)> = (0..50).map(|i| {
            let t = i as f64 * 0.1;
            (t, 0.3 + 2.1 * t)
        }).collect();
        let (slope, intercept, _) = estimate_speed(&samples, 0.3).unwrap();
        assert!((slope - 2.1).abs() < 1e-12);
        assert!((intercept - 0.3).abs() < 1e-12);
        assert!(estimate_speed(&samples[..10], 0.0).is_err());
    }

    #[test]
    fn front_positions() {
        let u0 = vec![1.0; 16];
        let dx = 0.125;
        let s = make_front_data(InitialKind::Step, &u0, -40, 81, dx).unwrap();
        let x = front_position(&s, 0.5);
        assert!(x.abs() <= dx);
        let zero = LineState::new(-40, dx, vec![0.0; 81]);
        assert_eq!(front_position(&zero, 0.5), zero.x_left());
        let shifted = make_front_data(InitialKind::Step, &u0, -40 - 8, 81, dx).unwrap();
        let moved = LineState::new(-40, dx, shifted.values.clone());
        assert!((front_position(&moved, 0.5) - 1.0).abs() <= dx);
        let full = LineState::new(-40, dx, vec![1.0; 81]);
        assert_eq!(front_position(&full, 0.5), full.x_right());
    }

    #[test]
    fn initial_data_shapes() {
        let u0 = vec![1.0; 16];
        let dx = 0.125;
        let bump = make_front_data(InitialKind::Bump { height: 0.5, half_width: 2.0 }, &u0, -40, 81, dx).unwrap();
        for (i, &v) in bump.values.iter().enumerate() {
            if bump.x(i).abs() >= 2.0 {
                assert_eq!(v, 0.0);
            }
            assert!(v <= 0.5);
        }
        let mu = 0.9;
        let e = make_front_data(InitialKind::Exponential { mu }, &u0, -40, 81, dx).unwrap();
        for i in 0..81 {
            if e.x(i) > 0.0 {
                let r = e.values[i] / (-mu * e.x(i)).exp();
                assert!((0.9..=1.1).contains(&r));
            }
        }
    }

    #[test]
    fn periodic_state_and_zero_are_preserved() {
        let (k, fs, orbit) = homogeneous(32, 16);
        let stepper = nonlinear_stepper(&k, &fs, 32).unwrap();
        let stages = Arc::new(OrbitStages::compute(&stepper, orbit.u_star.row(0).to_vec()).unwrap());
        // each RK4 step widens the support by four stencils; keep it off the pads
        let len = 700;
        let solver = LineSolver::new(&k, &fs, 32, len, Pad::Fill(stages.clone()), Pad::Fill(stages.clone()), 3.0).unwrap();
        let mut s = LineState::new(-100, fs.cell().dx(), vec![1.0; len]);
        for _ in 0..10 {
            solver.step(&mut s).unwrap();
            assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-8));
        }
        let zsolver = LineSolver::new(&k, &fs, 32, len, Pad::Zero, Pad::Zero, 3.0).unwrap();
        let mut z = LineState::new(-100, fs.cell().dx(), vec![0.0; len]);
        zsolver.step(&mut z).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn homogeneous_media_are_translation_covariant() {
        let (k, fs, _) = homogeneous(32, 16);
        // each RK4 step widens the support by four stencils; keep it off the pads
        let len = 700;
        let solver = LineSolver::new(&k, &fs, 32, len, Pad::Zero, Pad::Zero, 3.0).unwrap();
        let bump = |start: usize| {
            let mut v = vec![0.0; len];
            for (i, x) in v[start..start + 12].iter_mut().enumerate() {
                *x = 0.5 + 0.4 * (i as f64 * 0.7).sin();
            }
            LineState::new(0, fs.cell().dx(), v)
        };
        let m = 7;
        let (mut a, mut b) = (bump(300), bump(300 + m));
        for _ in 0..8 {
            solver.step(&mut a).unwrap();
            solver.step(&mut b).unwrap();
        }
        assert_eq!(a.values[0], 0.0);
        assert_eq!(b.values[len - 1], 0.0);
        assert!(a.values[300 + 12 + 100] > 0.0);
        assert_eq!(&a.values[..len - m], &b.values[m..]);
    }

    #[test]
    fn homogeneous_front_speed_is_close_to_variational() {
        let (k, fs, orbit) = homogeneous(32, 16);
        let opts = FrontOptions {
            behind_periods: 5,
            ahead_periods: 10,
            n_periods: 60,
            thetas: vec![0.5],
            ..FrontOptions::default()
        };
        let run = simulate_front(&k, &fs, &orbit, Direction::Plus, &opts).unwrap();
        let taps = k.line_taps(fs.cell().dx());
        let c_star = (1..4000)
            .map(|i| {
                let mu = i as f64 * 1e-3;
                taps.tilted(mu).iter().sum::<f64>() / mu
            })
            .fold(f64::INFINITY, f64::min);
        let speed = run.traces[0].speed;
        assert!((speed - c_star).abs() < 0.05 * c_star, "{speed} vs {c_star}");
    }
}
