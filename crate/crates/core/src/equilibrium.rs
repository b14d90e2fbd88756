//! Steady-state operating point of the droop-controlled network.
//!
//! Two routes lead to an [`OperatingPoint`]: a power flow from prescribed
//! inverter injections ([`power_flow`]) or the droop equilibrium from
//! frequency/voltage setpoints ([`solve_droop_equilibrium`]). Both use the
//! same damped Gauss–Newton iteration over bus voltage magnitudes and angles
//! with bus 1 as the angle reference.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::BusAdmittanceMatrix;
use crate::scalar::{cabs, Real};

/// Droop and measurement parameters of one inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterParams<T> {
    /// Frequency droop, rad/s per watt.
    pub kp: T,
    /// Voltage droop, volts per VAR.
    pub kv: T,
    /// Measurement filter pole, rad/s.
    pub omega_f: T,
    /// Frequency setpoint, rad/s.
    pub omega_0: T,
    /// Voltage magnitude setpoint, per-phase RMS volts.
    pub e_0: T,
}

impl<T: Real> InverterParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.omega_f > T::zero()) {
            return bad("omega_f must be positive");
        }
        if !(self.kp >= T::zero()) || !(self.kv >= T::zero()) {
            return bad("droop coefficients must be non-negative");
        }
        if !(self.e_0 > T::zero()) {
            return bad("voltage setpoint must be positive");
        }
        Ok(())
    }
}

/// Sign convention for reactive power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QConvention {
    /// `q = e_q·i_d − e_d·i_q`, i.e. `Q = Im(E·conj(I))`.
    #[default]
    A,
    /// `q = e_d·i_q − e_q·i_d`, the sign implied by the printed `I_s`/`E_s` blocks.
    B,
}

impl QConvention {
    pub fn flipped(self) -> Self {
        match self {
            QConvention::A => QConvention::B,
            QConvention::B => QConvention::A,
        }
    }

    /// `+1` for A, `-1` for B: `q = sign · Im(E·conj(I))`.
    pub fn sign<T: Real>(self) -> T {
        match self {
            QConvention::A => T::one(),
            QConvention::B => -T::one(),
        }
    }

    /// Complex power `p + j·q` under this convention.
    fn apply<T: Real>(self, s: Complex<T>) -> Complex<T> {
        match self {
            QConvention::A => s,
            QConvention::B => s.conj(),
        }
    }
}

/// Per-bus slice of an operating point. Voltages and currents are per-phase
/// RMS phasors in the common synchronous frame; powers are per phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusState<T> {
    pub e_d: T,
    pub e_q: T,
    pub i_d: T,
    pub i_q: T,
    pub p: T,
    pub q: T,
}

impl<T: Real> BusState<T> {
    pub fn voltage(&self) -> Complex<T> {
        Complex::new(self.e_d, self.e_q)
    }

    pub fn current(&self) -> Complex<T> {
        Complex::new(self.i_d, self.i_q)
    }

    pub fn magnitude(&self) -> T {
        self.e_d.hypot(self.e_q)
    }

    pub fn angle(&self) -> T {
        self.e_q.atan2(self.e_d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint<T> {
    pub buses: Vec<BusState<T>>,
    /// Common equilibrium frequency, rad/s.
    pub omega: T,
    pub q_convention: QConvention,
}

impl<T: Real> OperatingPoint<T> {
    /// Completes currents and powers from bus voltages.
    pub fn from_voltages(
        y: &BusAdmittanceMatrix<T>,
        e: &[Complex<T>],
        omega: T,
        q_convention: QConvention,
    ) -> Result<Self> {
        let i = bus_currents(y, e)?;
        let buses = e
            .iter()
            .zip(&i)
            .map(|(v, c)| {
                let (p, q) = bus_powers(v.re, v.im, c.re, c.im, q_convention);
                BusState { e_d: v.re, e_q: v.im, i_d: c.re, i_q: c.im, p, q }
            })
            .collect();
        Ok(Self { buses, omega, q_convention })
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn voltages(&self) -> Vec<Complex<T>> {
        self.buses.iter().map(BusState::voltage).collect()
    }

    /// Per-phase complex power `p + j·q` at each bus.
    pub fn powers(&self) -> Vec<Complex<T>> {
        self.buses.iter().map(|b| Complex::new(b.p, b.q)).collect()
    }
}

pub fn bus_currents<T: Real>(y: &BusAdmittanceMatrix<T>, e: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    y.mul_vec(e)
}

/// `(p, q)` from d/q voltage and current components.
pub fn bus_powers<T: Real>(e_d: T, e_q: T, i_d: T, i_q: T, conv: QConvention) -> (T, T) {
    let p = e_d * i_d + e_q * i_q;
    let q = match conv {
        QConvention::A => e_q * i_d - e_d * i_q,
        QConvention::B => e_d * i_q - e_q * i_d,
    };
    (p, q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions<T> {
    pub max_iterations: usize,
    /// Convergence threshold on the residual norm relative to the problem scale.
    pub tolerance: T,
    pub max_halvings: usize,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: T::lit(1e-9).max(T::default_epsilon() * T::lit(64.0)),
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution<T> {
    pub voltages: Vec<Complex<T>>,
    /// Euclidean norm of the power mismatch, VA.
    pub residual: T,
    /// `residual / ‖s‖`.
    pub relative_residual: T,
    pub iterations: usize,
    /// False when the injections are inconsistent and the result is the
    /// least-squares point rather than an exact solution.
    pub exact: bool,
}

struct GaussNewtonResult<T: Real> {
    x: DVector<T>,
    residual: T,
    iterations: usize,
    exact: bool,
}

fn gauss_newton<T, F>(
    x0: DVector<T>,
    scale: T,
    opts: &NewtonOptions<T>,
    f: F,
) -> Result<GaussNewtonResult<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<(DVector<T>, DMatrix<T>)>,
{
    let mut x = x0;
    let (mut r, mut jac) = f(&x)?;
    let mut rn = r.norm();
    for iteration in 0..=opts.max_iterations {
        if rn <= opts.tolerance * scale {
            return Ok(GaussNewtonResult { x, residual: rn, iterations: iteration, exact: true });
        }
        let grad = jac.transpose() * &r;
        let jn = jac.norm();
        let stationary = grad.norm() <= T::lit(1e-10) * jn * rn;
        if iteration == opts.max_iterations {
            break;
        }
        let svd = jac.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if !(smax > T::zero()) || !smax.is_finite() {
            return Err(Error::SingularJacobian);
        }
        let cutoff = smax * T::default_epsilon() * T::lit(1e4);
        let dx = svd.solve(&(-&r), cutoff).map_err(|_| Error::SingularJacobian)?;

        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &x + &dx * alpha;
            if let Ok((rt, jt)) = f(&trial) {
                let tn = rt.norm();
                if tn < rn {
                    accepted = Some((trial, rt, jt, tn));
                    break;
                }
            }
            alpha *= T::lit(0.5);
        }
        match accepted {
            Some((xt, rt, jt, tn)) => {
                x = xt;
                r = rt;
                jac = jt;
                rn = tn;
            }
            None if stationary => {
                return Ok(GaussNewtonResult { x, residual: rn, iterations: iteration, exact: false });
            }
            None => {
                return Err(Error::NoConvergence { iterations: iteration, residual: rn.as_f64() });
            }
        }
    }
    let grad = jac.transpose() * &r;
    if grad.norm() <= T::lit(1e-6) * jac.norm() * rn {
        Ok(GaussNewtonResult { x, residual: rn, iterations: opts.max_iterations, exact: false })
    } else {
        Err(Error::NoConvergence { iterations: opts.max_iterations, residual: rn.as_f64() })
    }
}

/// Voltages from magnitudes and angles, with the reference angle fixed at 0.
fn polar_voltages<T: Real>(mags: &[T], angles_after_ref: &[T]) -> Result<Vec<Complex<T>>> {
    mags.iter()
        .enumerate()
        .map(|(k, &v)| {
            if !(v > T::zero()) {
                return Err(Error::NonPositiveVoltage { bus: k + 1, magnitude: v.as_f64() });
            }
            let th = if k == 0 { T::zero() } else { angles_after_ref[k - 1] };
            Ok(Complex::new(v * th.cos(), v * th.sin()))
        })
        .collect()
}

/// Convention-adjusted bus powers and their derivatives with respect to
/// every voltage magnitude (`dv`, N×N) and angle (`dth`, N×N).
struct PowerSensitivity<T> {
    s: Vec<Complex<T>>,
    dv: DMatrix<Complex<T>>,
    dth: DMatrix<Complex<T>>,
}

fn power_sensitivity<T: Real>(
    y: &BusAdmittanceMatrix<T>,
    e: &[Complex<T>],
    conv: QConvention,
) -> Result<PowerSensitivity<T>> {
    let n = e.len();
    let cur = y.mul_vec(e)?;
    let j = Complex::new(T::zero(), T::one());
    let mut dv = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
    let mut dth = dv.clone();
    for k in 0..n {
        let mag = cabs(e[k]);
        // d e_k / d|e_k| and d e_k / d theta_k
        let u_v = e[k] / mag;
        let u_t = j * e[k];
        for i in 0..n {
            let yik = y.get(i, k);
            let mut sv = e[i] * (yik * u_v).conj();
            let mut st = e[i] * (yik * u_t).conj();
            if i == k {
                sv += u_v * cur[i].conj();
                st += u_t * cur[i].conj();
            }
            dv[(i, k)] = conv.apply(sv);
            dth[(i, k)] = conv.apply(st);
        }
    }
    let s = e.iter().zip(&cur).map(|(v, c)| conv.apply(*v * c.conj())).collect();
    Ok(PowerSensitivity { s, dv, dth })
}

pub fn power_flow<T: Real>(
    y: &BusAdmittanceMatrix<T>,
    s_injections: &[Complex<T>],
    v_guess: T,
    conv: QConvention,
) -> Result<PowerFlowSolution<T>> {
    power_flow_with(y, s_injections, v_guess, conv, &NewtonOptions::default())
}

/// Solves `diag(e)·conj(Y·e) = s` for the bus voltages, in the least-squares
/// sense when the injections are not exactly consistent with the network.
pub fn power_flow_with<T: Real>(
    y: &BusAdmittanceMatrix<T>,
    s_injections: &[Complex<T>],
    v_guess: T,
    conv: QConvention,
    opts: &NewtonOptions<T>,
) -> Result<PowerFlowSolution<T>> {
    let n = y.n();
    if s_injections.len() != n {
        return Err(Error::Dimension(format!(
            "{} injections for {} buses",
            s_injections.len(),
            n
        )));
    }
    if !(v_guess > T::zero()) {
        return Err(Error::InvalidVoltage(v_guess.as_f64()));
    }
    let s_norm = s_injections
        .iter()
        .fold(T::zero(), |acc, s| acc + s.norm_sqr())
        .sqrt();
    let scale = s_norm.max(T::default_epsilon());

    let mut x0 = DVector::zeros(2 * n - 1);
    x0.rows_mut(0, n).fill(v_guess);

    let eval = |x: &DVector<T>| -> Result<(DVector<T>, DMatrix<T>)> {
        let e = polar_voltages(&x.as_slice()[..n], &x.as_slice()[n..])?;
        let sens = power_sensitivity(y, &e, conv)?;
        let mut r = DVector::zeros(2 * n);
        let mut jac = DMatrix::zeros(2 * n, 2 * n - 1);
        for i in 0..n {
            let mismatch = sens.s[i] - s_injections[i];
            r[i] = mismatch.re;
            r[n + i] = mismatch.im;
            for k in 0..n {
                jac[(i, k)] = sens.dv[(i, k)].re;
                jac[(n + i, k)] = sens.dv[(i, k)].im;
            }
            for k in 1..n {
                jac[(i, n + k - 1)] = sens.dth[(i, k)].re;
                jac[(n + i, n + k - 1)] = sens.dth[(i, k)].im;
            }
        }
        Ok((r, jac))
    };

    let gn = gauss_newton(x0, scale, opts, eval)?;
    let voltages = polar_voltages(&gn.x.as_slice()[..n], &gn.x.as_slice()[n..])?;
    Ok(PowerFlowSolution {
        voltages,
        residual: gn.residual,
        relative_residual: gn.residual / scale,
        iterations: gn.iterations,
        exact: gn.exact,
    })
}

pub fn solve_droop_equilibrium<T: Real>(
    y: &BusAdmittanceMatrix<T>,
    inverters: &[InverterParams<T>],
    conv: QConvention,
) -> Result<OperatingPoint<T>> {
    solve_droop_equilibrium_with(y, inverters, conv, &NewtonOptions::default())
}

/// Common frequency and bus voltages satisfying both droop laws at every
/// inverter: `ω = ω0_i − kp_i·p_i` and `|e_i| = e0_i − kv_i·q_i`.
pub fn solve_droop_equilibrium_with<T: Real>(
    y: &BusAdmittanceMatrix<T>,
    inverters: &[InverterParams<T>],
    conv: QConvention,
    opts: &NewtonOptions<T>,
) -> Result<OperatingPoint<T>> {
    let n = y.n();
    if inverters.len() != n {
        return Err(Error::Dimension(format!(
            "{} inverters for {} buses",
            inverters.len(),
            n
        )));
    }
    for inv in inverters {
        inv.validate()?;
    }
    let scale = inverters
        .iter()
        .fold(T::zero(), |acc, p| acc + p.omega_0 * p.omega_0 + p.e_0 * p.e_0)
        .sqrt();

    // x = (|e|_1..N, theta_2..N, omega)
    let mut x0 = DVector::zeros(2 * n);
    for (k, inv) in inverters.iter().enumerate() {
        x0[k] = inv.e_0;
    }
    let mean_w0 = inverters.iter().fold(T::zero(), |acc, p| acc + p.omega_0) / T::lit(n as f64);
    x0[2 * n - 1] = mean_w0;

    let eval = |x: &DVector<T>| -> Result<(DVector<T>, DMatrix<T>)> {
        let e = polar_voltages(&x.as_slice()[..n], &x.as_slice()[n..2 * n - 1])?;
        let omega = x[2 * n - 1];
        let sens = power_sensitivity(y, &e, conv)?;
        let mut r = DVector::zeros(2 * n);
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for (i, inv) in inverters.iter().enumerate() {
            r[i] = omega - inv.omega_0 + inv.kp * sens.s[i].re;
            r[n + i] = x[i] - inv.e_0 + inv.kv * sens.s[i].im;
            for k in 0..n {
                jac[(i, k)] = inv.kp * sens.dv[(i, k)].re;
                jac[(n + i, k)] = inv.kv * sens.dv[(i, k)].im;
            }
            for k in 1..n {
                jac[(i, n + k - 1)] = inv.kp * sens.dth[(i, k)].re;
                jac[(n + i, n + k - 1)] = inv.kv * sens.dth[(i, k)].im;
            }
            jac[(i, 2 * n - 1)] = T::one();
            jac[(n + i, i)] += T::one();
        }
        Ok((r, jac))
    };

    let gn = gauss_newton(x0, scale, opts, eval)?;
    if !gn.exact {
        return Err(Error::NoConvergence { iterations: gn.iterations, residual: gn.residual.as_f64() });
    }
    let e = polar_voltages(&gn.x.as_slice()[..n], &gn.x.as_slice()[n..2 * n - 1])?;
    OperatingPoint::from_voltages(y, &e, gn.x[2 * n - 1], conv)
}

/// Setpoints `(ω0_i, e0_i)` for which `op` is a droop equilibrium.
pub fn implied_setpoints<T: Real>(op: &OperatingPoint<T>, inverters: &[InverterParams<T>]) -> Vec<(T, T)> {
    op.buses
        .iter()
        .zip(inverters)
        .map(|(b, inv)| (op.omega + inv.kp * b.p, b.magnitude() + inv.kv * b.q))
        .collect()
}

/// Copies of `inverters` with setpoints replaced by [`implied_setpoints`].
pub fn with_implied_setpoints<T: Real>(
    op: &OperatingPoint<T>,
    inverters: &[InverterParams<T>],
) -> Vec<InverterParams<T>> {
    implied_setpoints(op, inverters)
        .into_iter()
        .zip(inverters)
        .map(|((omega_0, e_0), inv)| InverterParams { omega_0, e_0, ..*inv })
        .collect()
}
