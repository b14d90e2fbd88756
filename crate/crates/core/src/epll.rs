//! Enhanced phase-locked loop: a single-phase amplitude/frequency/phase
//! estimator driven by instantaneous voltage samples.
//!
//! With `e = x − √2·Â·cos φ̂` the estimator integrates
//!
//! ```text
//! dÂ/dt = 2·k1·e·cos φ̂
//! dω̂/dt = −2·k2·e·sin φ̂
//! dφ̂/dt = −2·k3·e·sin φ̂ + ω̂
//! ```
//!
//! The error factor in the ω̂ and φ̂ equations is required for the loop to
//! respond to its input at all; some printed statements of these equations
//! drop it.
//!
//! `Â` is the RMS amplitude. Around lock the phase error obeys a
//! second-order loop with `ωn² = √2·Â·k2` and `2ζωn = √2·Â·k3`, so gains
//! designed for a nominal peak amplitude `A0` give the design `ζ, ωn` when
//! `√2·Â = A0`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpllParams<T> {
    pub k1: T,
    pub k2: T,
    pub k3: T,
    /// Nominal peak amplitude the gains were designed for, volts.
    pub a0: T,
    pub sample_rate: T,
}

pub const DEFAULT_SAMPLE_RATE: f64 = 10_000.0;

impl<T: Real> EpllParams<T> {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.k1, self.k2, self.k3, self.a0, self.sample_rate];
        if fields.iter().all(|v| *v > T::zero() && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("E-PLL gains, a0 and sample rate must be positive".into()))
        }
    }

    pub fn with_sample_rate(self, sample_rate: T) -> Self {
        Self { sample_rate, ..self }
    }
}

/// Gains placing the phase loop at damping `zeta` and natural frequency
/// `omega_n` for a signal of peak amplitude `a0`: `a0·k2 = ωn²`,
/// `a0·k3 = 2ζωn`.
pub fn design_gains<T: Real>(zeta: T, omega_n: T, a0: T, k1: T) -> Result<EpllParams<T>> {
    if !(zeta >= T::zero()) || !(omega_n > T::zero()) || !(a0 > T::zero()) || !(k1 > T::zero()) {
        return Err(Error::InvalidParameter(
            "zeta must be non-negative; omega_n, a0 and k1 positive".into(),
        ));
    }
    Ok(EpllParams {
        k1,
        k2: omega_n * omega_n / a0,
        k3: T::lit(2.0) * zeta * omega_n / a0,
        a0,
        sample_rate: T::lit(DEFAULT_SAMPLE_RATE),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpllState<T> {
    /// RMS amplitude estimate, volts.
    pub a_hat: T,
    /// Frequency estimate, rad/s.
    pub omega_hat: T,
    /// Phase estimate, rad (unwrapped).
    pub phi_hat: T,
}

impl<T: Real> EpllState<T> {
    pub fn new(a_hat: T, omega_hat: T, phi_hat: T) -> Self {
        Self { a_hat, omega_hat, phi_hat }
    }

    /// `Â = a0`, `ω̂ = 2π·60`, `φ̂ = 0`.
    pub fn nominal(a0: T) -> Self {
        Self::new(a0, T::lit(2.0 * PI * 60.0), T::zero())
    }
}

/// Estimation error `x − √2·Â·cos φ̂`.
pub fn epll_error<T: Real>(state: &EpllState<T>, x: T) -> T {
    x - T::lit(2.0).sqrt() * state.a_hat * state.phi_hat.cos()
}

fn rates<T: Real>(a: T, w: T, phi: T, e: T, p: &EpllParams<T>) -> [T; 3] {
    let _ = a;
    let two = T::lit(2.0);
    let (s, c) = phi.sin_cos();
    [two * p.k1 * e * c, -two * p.k2 * e * s, -two * p.k3 * e * s + w]
}

/// `(dÂ/dt, dω̂/dt, dφ̂/dt)` for input sample `x`.
pub fn epll_derivatives<T: Real>(state: &EpllState<T>, x: T, params: &EpllParams<T>) -> (T, T, T) {
    let e = epll_error(state, x);
    let [da, dw, dphi] = rates(state.a_hat, state.omega_hat, state.phi_hat, e, params);
    (da, dw, dphi)
}

fn rk4<T: Real, F>(state: &EpllState<T>, dt: T, f: F) -> EpllState<T>
where
    F: Fn(T, &[T; 3]) -> [T; 3],
{
    let half = T::lit(0.5);
    let y0 = [state.a_hat, state.omega_hat, state.phi_hat];
    let add = |y: &[T; 3], k: &[T; 3], h: T| [y[0] + k[0] * h, y[1] + k[1] * h, y[2] + k[2] * h];
    let k1 = f(T::zero(), &y0);
    let k2 = f(dt * half, &add(&y0, &k1, dt * half));
    let k3 = f(dt * half, &add(&y0, &k2, dt * half));
    let k4 = f(dt, &add(&y0, &k3, dt));
    let six = T::lit(6.0);
    let two = T::lit(2.0);
    let y: Vec<T> = (0..3)
        .map(|i| y0[i] + dt / six * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect();
    EpllState { a_hat: y[0].max(T::zero()), omega_hat: y[1], phi_hat: y[2] }
}

/// One classical RK4 step of length `dt` for sample `x`.
///
/// The estimation error is evaluated once at the sample instant and held
/// across the step. A locked state therefore advances only its phase,
/// by exactly `ω̂·dt`. Holding the raw sample instead would feed the loop a
/// spurious error of order `√2·Â·ω·dt` within every step. `Â` is clamped at
/// zero.
pub fn epll_step<T: Real>(state: &EpllState<T>, x: T, dt: T, params: &EpllParams<T>) -> EpllState<T> {
    let e = epll_error(state, x);
    rk4(state, dt, |_, y| rates(y[0], y[1], y[2], e, params))
}

/// One RK4 step of the continuous-time estimator for an input known as a
/// function of time, evaluated at every stage (`input(t0 + τ)`).
pub fn epll_step_continuous<T: Real, F>(
    state: &EpllState<T>,
    input: F,
    t0: T,
    dt: T,
    params: &EpllParams<T>,
) -> EpllState<T>
where
    F: Fn(T) -> T,
{
    let sqrt2 = T::lit(2.0).sqrt();
    rk4(state, dt, |tau, y| {
        let e = input(t0 + tau) - sqrt2 * y[0] * y[2].cos();
        rates(y[0], y[1], y[2], e, params)
    })
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle<T: Real>(phi: T) -> T {
    let two_pi = T::two_pi();
    let mut w = phi - two_pi * ((phi + T::pi()) / two_pi).floor();
    if w <= -T::pi() {
        w += two_pi;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpllSample<T> {
    pub t: T,
    pub x: T,
    pub a_hat: T,
    pub omega_hat: T,
    /// Wrapped to `(−π, π]`.
    pub phi_hat: T,
    pub e: T,
}

/// Runs the estimator over `signal` sampled at `fs`. Sample `k` of the
/// trace holds the estimate before sample `k` is consumed.
pub fn run_epll<T: Real>(
    signal: &[T],
    fs: T,
    params: &EpllParams<T>,
    init: EpllState<T>,
) -> Result<Vec<EpllSample<T>>> {
    params.validate()?;
    if !(fs > T::zero()) {
        return Err(Error::InvalidParameter("sample rate must be positive".into()));
    }
    let dt = T::one() / fs;
    let mut state = init;
    let mut out = Vec::with_capacity(signal.len());
    for (k, &x) in signal.iter().enumerate() {
        out.push(EpllSample {
            t: T::lit(k as f64) * dt,
            x,
            a_hat: state.a_hat,
            omega_hat: state.omega_hat,
            phi_hat: wrap_angle(state.phi_hat),
            e: epll_error(&state, x),
        });
        state = epll_step(&state, x, dt, params);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_gains() -> EpllParams<f64> {
        design_gains(0.85, 200.0, 480.0 * 2f64.sqrt(), 200.0).unwrap()
    }

    #[test]
    fn gain_design_arithmetic() {
        let p = paper_gains();
        let a0 = 480.0 * 2f64.sqrt();
        assert!((p.k2 - 40000.0 / a0).abs() < 1e-12);
        assert!((p.k3 - 340.0 / a0).abs() < 1e-12);
        assert!((p.k2 - 58.926).abs() < 1e-3);
        assert!((p.k3 - 0.50087).abs() < 1e-5);
        assert_eq!(p.k1, 200.0);

        let unit = design_gains(0.7, 50.0, 1.0, 3.0).unwrap();
        assert_eq!(unit.k2, 2500.0);
        assert_eq!(unit.k3, 70.0);
        assert_eq!(design_gains(0.0, 50.0, 1.0, 3.0).unwrap().k3, 0.0);
        assert!(design_gains(0.7, 0.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let p = paper_gains();
        let s = EpllState::new(300.0, 377.0, 0.3);
        let x = 2f64.sqrt() * 300.0 * 0.3f64.cos();
        let (da, dw, dphi) = epll_derivatives(&s, x, &p);
        assert!(da.abs() < 1e-9 && dw.abs() < 1e-9);
        assert!((dphi - 377.0).abs() < 1e-9);

        let s = EpllState::new(300.0, 377.0, std::f64::consts::FRAC_PI_2);
        let (da, _, _) = epll_derivatives(&s, 123.0, &p);
        assert!(da.abs() < 1e-9);

        let a = 250.0;
        let s = EpllState::new(a, 377.0, 0.0);
        assert!((epll_error(&s, 0.0) + 2f64.sqrt() * a).abs() < 1e-12);
        let (da, dw, dphi) = epll_derivatives(&s, 0.0, &p);
        assert!((da + 2.0 * 2f64.sqrt() * p.k1 * a).abs() < 1e-9);
        assert_eq!(dw, 0.0);
        assert_eq!(dphi, 377.0);
    }

    #[test]
    fn locked_step_only_advances_phase() {
        let p = paper_gains();
        let s = EpllState::new(480.0, 377.0, 1.1);
        let x = 2f64.sqrt() * 480.0 * 1.1f64.cos();
        let n = epll_step(&s, x, 1e-4, &p);
        assert_eq!(n.a_hat, 480.0);
        assert_eq!(n.omega_hat, 377.0);
        assert!((n.phi_hat - (1.1 + 377.0 * 1e-4)).abs() < 1e-14);
    }

    #[test]
    fn amplitude_is_clamped() {
        let p = paper_gains();
        let s = EpllState::new(1.0, 377.0, 0.0);
        let n = epll_step(&s, -1e4, 1e-3, &p);
        assert_eq!(n.a_hat, 0.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = paper_gains();
        let f = 60.7;
        let input = |t: f64| 2f64.sqrt() * 470.0 * (2.0 * PI * f * t + 0.2).cos();
        let s0 = EpllState::new(480.0, 2.0 * PI * 60.0, 0.0);
        let horizon = 2e-3;
        let integrate = |steps: usize| {
            let dt = horizon / steps as f64;
            (0..steps).fold(s0, |s, k| epll_step_continuous(&s, input, k as f64 * dt, dt, &p))
        };
        let reference = integrate(2000);
        let err = |s: EpllState<f64>| {
            ((s.a_hat - reference.a_hat) / 480.0).abs()
                + ((s.omega_hat - reference.omega_hat) / 377.0).abs()
                + (s.phi_hat - reference.phi_hat).abs()
        };
        let coarse = err(integrate(40));
        let fine = err(integrate(80));
        let ratio = coarse / fine;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn fixed_point_over_one_second() {
        let p = paper_gains();
        let a0 = p.a0;
        let fs = 10_000.0;
        let w = 2.0 * PI * 60.0;
        let signal: Vec<f64> = (0..10_000).map(|k| 2f64.sqrt() * a0 * (w * k as f64 / fs).cos()).collect();
        let tr = run_epll(&signal, fs, &p, EpllState::new(a0, w, 0.0)).unwrap();
        for s in &tr {
            assert!((s.a_hat - a0).abs() <= 1e-9 * a0);
            assert!((s.omega_hat - w).abs() <= 1e-9 * w);
        }
        assert!(run_epll(&[], fs, &p, EpllState::nominal(a0)).unwrap().is_empty());
    }

    fn settle_time(tr: &[EpllSample<f64>], from: f64, value: impl Fn(&EpllSample<f64>) -> f64, target: f64, tol: f64) -> f64 {
        let mut last_out = from;
        for s in tr.iter().filter(|s| s.t >= from) {
            if (value(s) - target).abs() > tol * target.abs() {
                last_out = s.t;
            }
        }
        last_out - from
    }

    #[test]
    fn tracks_frequency_mismatch() {
        let p = paper_gains();
        let fs = 10_000.0;
        let w = 2.0 * PI * 60.0;
        let amp = p.a0 / 2f64.sqrt();
        let signal: Vec<f64> = (0..2000).map(|k| 2f64.sqrt() * amp * (w * k as f64 / fs).cos()).collect();
        let tr = run_epll(&signal, fs, &p, EpllState::new(amp, w - 2.0 * PI * 0.5, 0.0)).unwrap();
        let t = settle_time(&tr, 0.0, |s| s.omega_hat, w, 1e-3);
        assert!(t <= 0.06, "settled after {t}");
    }

    #[test]
    fn amplitude_scaling_and_phase_shift() {
        let p = paper_gains();
        let fs = 10_000.0;
        let w = 2.0 * PI * 60.0;
        let amp = p.a0 / 2f64.sqrt();
        let run = |alpha: f64, tau: f64| {
            let signal: Vec<f64> =
                (0..3000).map(|k| alpha * 2f64.sqrt() * amp * (w * (k as f64 / fs - tau)).cos()).collect();
            run_epll(&signal, fs, &p, EpllState::new(amp * 0.9, w + 3.0, 0.0)).unwrap()
        };
        let base = run(1.0, 0.0);
        let scaled = run(1.2, 0.0);
        let shifted = run(1.0, 1e-3);
        let (b, s, d) = (base.last().unwrap(), scaled.last().unwrap(), shifted.last().unwrap());
        assert!((s.a_hat - 1.2 * b.a_hat).abs() < 1e-6 * b.a_hat);
        assert!((s.omega_hat - b.omega_hat).abs() < 1e-6 * w);
        assert!((d.a_hat - b.a_hat).abs() < 1e-6 * b.a_hat);
        let dphi = wrap_angle(d.phi_hat - b.phi_hat + w * 1e-3);
        assert!(dphi.abs() < 1e-6, "phase shift residual {dphi}");
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5f64) - 0.5).abs() < 1e-15);
        assert!((wrap_angle(-7.0f64) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn single_precision_runs() {
        let p: EpllParams<f32> = design_gains(0.85f32, 200.0, 678.8, 200.0).unwrap();
        let s = epll_step(&EpllState::new(480.0f32, 377.0, 0.0), 678.8, 1e-4, &p);
        assert!((s.phi_hat - 0.0377f32).abs() < 1e-5);
    }
}
