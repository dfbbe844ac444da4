// Small interpolation kernels shared by the time-stepping code.

/// Periodic 4-point Lagrange weights for a sample at fractional position
/// `frac` in `[0, 1)` between nodes `k` and `k + 1`. Returns the node offsets
/// `-1, 0, 1, 2` weights.
pub(crate) fn cubic_weights(frac: f64) -> [f64; 4] {
    if frac == 0.0 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let s = frac;
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

/// Cubic interpolation of a uniformly sampled sequence at real index `pos`,
/// clamping the stencil to the available range.
#[cfg(test)]
pub(crate) fn cubic_at(values: &[f64], pos: f64) -> f64 {
    let n = values.len();
    debug_assert!(n >= 4);
    let base = pos.floor();
    let (k_lo, k_hi) = (1.0, (n - 3) as f64);
    let k = base.clamp(k_lo, k_hi);
    let w = cubic_weights(pos - k);
    let k = k as usize;
    w[0] * values[k - 1] + w[1] * values[k] + w[2] * values[k + 1] + w[3] * values[k + 2]
}

/// Natural-free cubic spline with prescribed end slopes (clamped spline).
#[derive(Debug, Clone)]
pub(crate) struct ClampedSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl ClampedSpline {
    pub(crate) fn new(xs: Vec<f64>, ys: Vec<f64>, slope_start: f64, slope_end: f64) -> Self {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n);
        // tridiagonal system for second derivatives
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let h0 = xs[1] - xs[0];
        b[0] = h0 / 3.0;
        c[0] = h0 / 6.0;
        d[0] = (ys[1] - ys[0]) / h0 - slope_start;
        for i in 1..n - 1 {
            let hl = xs[i] - xs[i - 1];
            let hr = xs[i + 1] - xs[i];
            a[i] = hl / 6.0;
            b[i] = (hl + hr) / 3.0;
            c[i] = hr / 6.0;
            d[i] = (ys[i + 1] - ys[i]) / hr - (ys[i] - ys[i - 1]) / hl;
        }
        let hn = xs[n - 1] - xs[n - 2];
        a[n - 1] = hn / 6.0;
        b[n - 1] = hn / 3.0;
        d[n - 1] = slope_end - (ys[n - 1] - ys[n - 2]) / hn;
        // Thomas algorithm
        for i in 1..n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = d[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (d[i] - c[i] * m[i + 1]) / b[i];
        }
        Self { xs, ys, m }
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let u = 1.0 - t;
        u * self.ys[i]
            + t * self.ys[i + 1]
            + h * h / 6.0 * ((u * u * u - u) * self.m[i] + (t * t * t - t) * self.m[i + 1])
    }
}
