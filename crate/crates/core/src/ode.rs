//! Adaptive Dormand–Prince 5(4) integration with a 4th-order continuous
//! extension (dense output), following Hairer, Nørsett & Wanner.
//!
//! Steps are never taken across the edges of a [`StepWindow`], so a short
//! pump pulse cannot be skipped by a large step taken from a quiescent state.

use crate::error::{Error, Result};

/// A first-order system `dy/dt = f(t, y)` over flat real state vectors.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<()>;
}

/// Interval `[start, end]` within which steps are capped at `max_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWindow {
    pub start: f64,
    pub end: f64,
    pub max_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub windows: Vec<StepWindow>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-10, max_step: f64::INFINITY, windows: Vec::new(), max_steps: 5_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Integrate from `t_out[0]` with initial state `y0`, calling `sink(t, y)` at
/// every requested output time (ascending). The state handed to `sink` at
/// interior times comes from the dense-output interpolant.
pub fn integrate_dense<S, F>(
    system: &S,
    y0: &[f64],
    t_out: &[f64],
    opts: &OdeOptions,
    mut sink: F,
) -> Result<OdeStats>
where
    S: OdeSystem + ?Sized,
    F: FnMut(f64, &[f64]) -> Result<()>,
{
    let n = system.dim();
    assert_eq!(y0.len(), n, "initial state has the wrong dimension");
    let mut stats = OdeStats::default();
    let Some(&t_start) = t_out.first() else {
        return Ok(stats);
    };
    let t_end = *t_out.last().unwrap();
    if t_out.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("output times must be ascending".into()));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }

    let mut y = y0.to_vec();
    let mut t = t_start;
    let mut out_idx = 0;
    while out_idx < t_out.len() && t_out[out_idx] <= t_start {
        sink(t_start, &y)?;
        out_idx += 1;
    }
    if out_idx == t_out.len() {
        return Ok(stats);
    }

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut dense = DenseCoeffs::new(n);
    let mut yout = vec![0.0; n];

    system.rhs(t, &y, &mut k1)?;
    stats.rhs_evals += 1;

    let mut breakpoints: Vec<f64> = opts
        .windows
        .iter()
        .flat_map(|w| [w.start, w.end])
        .filter(|&b| b > t_start && b < t_end)
        .collect();
    breakpoints.push(t_end);
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut h = initial_step(system, t, &y, &k1, opts, &mut stats)?;
    h = h.min(step_cap(opts, t)).min(t_end - t);

    let mut last_rejected = false;
    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::Integration { t, reason: "maximum number of steps exceeded".into() });
        }
        let cap = step_cap(opts, t);
        let next_break = breakpoints.iter().copied().find(|&b| b > t).unwrap_or(t_end);
        let mut h_step = h.min(cap);
        let mut hits_break = false;
        if t + h_step >= next_break || next_break - (t + h_step) < 1e-12 * h_step {
            h_step = next_break - t;
            hits_break = true;
        }
        if h_step <= f64::EPSILON * 16.0 * t.abs().max(1e-300) {
            return Err(Error::Integration { t, reason: "step size underflow".into() });
        }

        for i in 0..n {
            ytmp[i] = y[i] + h_step * A21 * k1[i];
        }
        system.rhs(t + C2 * h_step, &ytmp, &mut k2)?;
        for i in 0..n {
            ytmp[i] = y[i] + h_step * (A31 * k1[i] + A32 * k2[i]);
        }
        system.rhs(t + C3 * h_step, &ytmp, &mut k3)?;
        for i in 0..n {
            ytmp[i] = y[i] + h_step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        system.rhs(t + C4 * h_step, &ytmp, &mut k4)?;
        for i in 0..n {
            ytmp[i] = y[i] + h_step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        system.rhs(t + C5 * h_step, &ytmp, &mut k5)?;
        for i in 0..n {
            ytmp[i] = y[i]
                + h_step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if hits_break { next_break } else { t + h_step };
        system.rhs(t_new, &ytmp, &mut k6)?;
        for i in 0..n {
            ynew[i] = y[i]
                + h_step * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        system.rhs(t_new, &ynew, &mut k7)?;
        stats.rhs_evals += 6;

        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = h_step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(ynew[i].abs());
            let r = e / sc;
            err_sq += r * r;
            finite &= ynew[i].is_finite();
        }
        let err = (err_sq / n as f64).sqrt();
        if !finite || !err.is_finite() {
            // Retry with a much smaller step before giving up.
            stats.rejected += 1;
            h = h_step * FAC_MIN;
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            if out_idx < t_out.len() && t_out[out_idx] <= t_new {
                dense.prepare(h_step, &y, &ynew, &k1, &k3, &k4, &k5, &k6, &k7);
                while out_idx < t_out.len() && t_out[out_idx] <= t_new {
                    let to = t_out[out_idx];
                    if to == t_new {
                        sink(to, &ynew)?;
                    } else {
                        let theta = (to - t) / h_step;
                        dense.eval(theta, &mut yout);
                        sink(to, &yout)?;
                    }
                    out_idx += 1;
                }
            }
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;

            let mut fac = SAFETY * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            let proposed = h_step * fac;
            // A step shortened to land on a breakpoint should not shrink the
            // next proposal.
            h = if hits_break { proposed.max(h) } else { proposed };
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (SAFETY * err.powf(-0.2)).max(FAC_MIN);
            h = h_step * fac;
            last_rejected = true;
        }
    }
    Ok(stats)
}

fn step_cap(opts: &OdeOptions, t: f64) -> f64 {
    opts.windows
        .iter()
        .filter(|w| t >= w.start && t < w.end)
        .map(|w| w.max_step)
        .fold(opts.max_step, f64::min)
}

fn initial_step<S: OdeSystem + ?Sized>(
    system: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    opts: &OdeOptions,
    stats: &mut OdeStats,
) -> Result<f64> {
    let n = y.len();
    let scale: Vec<f64> = y.iter().map(|v| opts.abs_tol + opts.rel_tol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(opts.max_step);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    system.rhs(t + h0, &y1, &mut f1)?;
    stats.rhs_evals += 1;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(opts.max_step))
}

struct DenseCoeffs {
    r1: Vec<f64>,
    r2: Vec<f64>,
    r3: Vec<f64>,
    r4: Vec<f64>,
    r5: Vec<f64>,
}

impl DenseCoeffs {
    fn new(n: usize) -> Self {
        Self { r1: vec![0.0; n], r2: vec![0.0; n], r3: vec![0.0; n], r4: vec![0.0; n], r5: vec![0.0; n] }
    }

    #[allow(clippy::too_many_arguments)]
    fn prepare(
        &mut self,
        h: f64,
        y0: &[f64],
        y1: &[f64],
        k1: &[f64],
        k3: &[f64],
        k4: &[f64],
        k5: &[f64],
        k6: &[f64],
        k7: &[f64],
    ) {
        for i in 0..y0.len() {
            let dy = y1[i] - y0[i];
            let bspl = h * k1[i] - dy;
            self.r1[i] = y0[i];
            self.r2[i] = dy;
            self.r3[i] = bspl;
            self.r4[i] = dy - h * k7[i] - bspl;
            self.r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
    }

    fn eval(&self, theta: f64, out: &mut [f64]) {
        let theta1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r1[i]
                + theta * (self.r2[i] + theta1 * (self.r3[i] + theta * (self.r4[i] + theta1 * self.r5[i])));
        }
    }
}

/// Uniform output grid `t_start + k·dt` for `k = 0..=n`, with the last point
/// clamped to `t_end` when the span is not an exact multiple of `dt`.
pub fn uniform_grid(t_start: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let n = ((t_end - t_start) / dt + 1e-9).floor() as usize;
    (0..=n).map(|k| t_start + k as f64 * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator {
        omega: f64,
    }

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<()> {
            dydt[0] = y[1];
            dydt[1] = -self.omega * self.omega * y[0];
            Ok(())
        }
    }

    struct Decay;

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<()> {
            dydt[0] = -y[0] + (-((t - 1.0) / 0.01).powi(2)).exp();
            Ok(())
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let sys = Oscillator { omega: 3.0 };
        let ts = uniform_grid(0.0, 10.0, 0.013);
        let opts = OdeOptions { rel_tol: 1e-10, abs_tol: 1e-12, ..Default::default() };
        let mut max_err: f64 = 0.0;
        integrate_dense(&sys, &[1.0, 0.0], &ts, &opts, |t, y| {
            max_err = max_err.max((y[0] - (3.0 * t).cos()).abs());
            Ok(())
        })
        .unwrap();
        assert!(max_err < 1e-8, "{max_err}");
    }

    #[test]
    fn window_forces_resolution_of_a_spike() {
        // Without a window the integrator can step straight over the source.
        let ts = vec![0.0, 3.0];
        let opts = OdeOptions {
            windows: vec![StepWindow { start: 0.9, end: 1.1, max_step: 0.0025 }],
            ..Default::default()
        };
        let mut last = 0.0;
        integrate_dense(&Decay, &[0.0], &ts, &opts, |_, y| {
            last = y[0];
            Ok(())
        })
        .unwrap();
        let expected = 0.01 * std::f64::consts::PI.sqrt() * (-2.0f64).exp() * (0.25e-4f64).exp();
        assert!(((last - expected) / expected).abs() < 1e-6, "{last} vs {expected}");
    }

    #[test]
    fn grid_shape() {
        let g = uniform_grid(-0.2, 4.0, 0.001);
        assert_eq!(g.len(), 4201);
        assert_eq!(g[0], -0.2);
        assert!((g[4200] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rhs_is_an_error() {
        struct Blowup;
        impl OdeSystem for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, y: &[f64], d: &mut [f64]) -> Result<()> {
                d[0] = y[0] * y[0];
                Ok(())
            }
        }
        let err = integrate_dense(&Blowup, &[1.0], &[0.0, 2.0], &OdeOptions::default(), |_, _| Ok(()));
        assert!(matches!(err, Err(Error::Integration { .. })), "{err:?}");
    }

    #[test]
    fn deterministic() {
        let sys = Oscillator { omega: 1.7 };
        let ts = uniform_grid(0.0, 5.0, 0.01);
        let run = || {
            let mut v = Vec::new();
            integrate_dense(&sys, &[0.3, 0.1], &ts, &OdeOptions::default(), |_, y| {
                v.push(y[0].to_bits());
                Ok(())
            })
            .unwrap();
            v
        };
        assert_eq!(run(), run());
    }
}
