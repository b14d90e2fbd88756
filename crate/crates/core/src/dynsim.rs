//! Nonlinear phasor-domain simulation of the droop-controlled network.
//!
//! The network is solved algebraically at every evaluation; each inverter
//! carries three states, its voltage angle `δ` in a frame rotating at the
//! initial equilibrium frequency and its filtered powers `p_f`, `q_f`:
//!
//! ```text
//! E_i   = e0_i − kv_i·q_f_i
//! e_i   = E_i·(cos δ_i, sin δ_i),  i = Y·e,  (p_i, q_i) from e_i, i_i
//! δ̇_i   = ω0_i − kp_i·p_f_i − ω_frame
//! ṗ_f_i = ωf_i·(p_i − p_f_i)
//! q̇_f_i = ωf_i·(q_i − q_f_i)
//! ```
//!
//! State vectors interleave `(δ, p_f, q_f)` per inverter. Loads are constant
//! admittances throughout a run.

use std::fmt;

use nalgebra::{Complex, DMatrix, DVector};

use crate::eigen::eigenvalues;
use crate::epll::{run_epll, EpllParams, EpllSample, EpllState};
use crate::equilibrium::{bus_powers, solve_droop_equilibrium, InverterParams, OperatingPoint, QConvention};
use crate::error::{Error, Result};
use crate::network::{BusAdmittanceMatrix, NetworkModel};
use crate::scalar::Real;
use crate::system::ResolvedSystem;

/// States above this magnitude count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;
pub const DEFAULT_DT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerQuantity {
    Real,
    Reactive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind<T> {
    /// Sets the load admittance at `bus` (1-based) to `factor` times nominal.
    LoadScale { bus: usize, factor: T },
    /// Adds `delta` rad/s to the frequency setpoint of `inverter` (1-based).
    Omega0Step { inverter: usize, delta: T },
    /// Adds `delta` volts (per-phase RMS) to the voltage setpoint.
    E0Step { inverter: usize, delta: T },
    /// Moves the steady-state output of `inverter` by `fraction` of its
    /// pre-event value. Realized as `omega0` (real power) or `e0` (reactive
    /// power) setpoint steps sized by the equilibrium DC gain.
    PowerTarget { inverter: usize, quantity: PowerQuantity, fraction: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent<T> {
    pub time: T,
    pub kind: EventKind<T>,
}

impl<T: Real> StepEvent<T> {
    pub fn new(time: T, kind: EventKind<T>) -> Self {
        Self { time, kind }
    }
}

impl<T: Real> fmt::Display for EventKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::LoadScale { bus, factor } => write!(f, "load_scale bus {bus} factor {}", factor.as_f64()),
            EventKind::Omega0Step { inverter, delta } => {
                write!(f, "omega0_step inverter {inverter} delta {} rad/s", delta.as_f64())
            }
            EventKind::E0Step { inverter, delta } => write!(f, "e0_step inverter {inverter} delta {} V", delta.as_f64()),
            EventKind::PowerTarget { inverter, quantity, fraction } => {
                let q = match quantity {
                    PowerQuantity::Real => "p",
                    PowerQuantity::Reactive => "q",
                };
                write!(f, "power_target inverter {inverter} {q} fraction {}", fraction.as_f64())
            }
        }
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Real> {
    network: NetworkModel<T>,
    inverters: Vec<InverterParams<T>>,
    initial_op: OperatingPoint<T>,
    events: Vec<StepEvent<T>>,
    resolved_events: Vec<StepEvent<T>>,
    dt: T,
    duration: T,
    q_convention: QConvention,
}

#[derive(Debug, Clone)]
struct Active<T: Real> {
    ybus: BusAdmittanceMatrix<T>,
    inverters: Vec<InverterParams<T>>,
    load_scale: Vec<T>,
}

impl<T: Real> Active<T> {
    fn apply(&mut self, network: &NetworkModel<T>, kind: &EventKind<T>) -> Result<()> {
        match *kind {
            EventKind::LoadScale { bus, factor } => {
                self.load_scale[bus - 1] = factor;
                self.ybus = network.ybus_with_load_scale(&self.load_scale)?;
            }
            EventKind::Omega0Step { inverter, delta } => self.inverters[inverter - 1].omega_0 += delta,
            EventKind::E0Step { inverter, delta } => self.inverters[inverter - 1].e_0 += delta,
            EventKind::PowerTarget { .. } => {
                return Err(Error::InvalidParameter("power targets must be resolved before use".into()))
            }
        }
        Ok(())
    }
}

impl<T: Real> Scenario<T> {
    /// Validates the scenario and converts power-target events into
    /// setpoint steps. `inverters` must carry setpoints for which
    /// `initial_op` is an equilibrium.
    pub fn new(
        network: NetworkModel<T>,
        inverters: Vec<InverterParams<T>>,
        initial_op: OperatingPoint<T>,
        events: Vec<StepEvent<T>>,
        dt: T,
        duration: T,
    ) -> Result<Self> {
        let n = network.n();
        if inverters.len() != n || initial_op.n() != n {
            return Err(Error::Dimension(format!(
                "{} buses, {} inverters, {} operating-point buses",
                n,
                inverters.len(),
                initial_op.n()
            )));
        }
        for inv in &inverters {
            inv.validate()?;
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if !(duration >= T::zero()) || !duration.is_finite() {
            return Err(Error::InvalidParameter("duration must be non-negative".into()));
        }
        let mut prev = T::zero();
        for ev in &events {
            if !(ev.time >= prev) || ev.time > duration {
                return Err(Error::InvalidParameter(format!(
                    "event times must be sorted and within [0, {}]",
                    duration.as_f64()
                )));
            }
            prev = ev.time;
            let idx = match ev.kind {
                EventKind::LoadScale { bus, factor } => {
                    if !(factor > T::zero()) {
                        return Err(Error::InvalidParameter("load scale factor must be positive".into()));
                    }
                    bus
                }
                EventKind::Omega0Step { inverter, .. }
                | EventKind::E0Step { inverter, .. }
                | EventKind::PowerTarget { inverter, .. } => inverter,
            };
            if idx == 0 || idx > n {
                return Err(Error::BusOutOfRange { index: idx, n });
            }
        }
        let q_convention = initial_op.q_convention;
        let mut sc = Self {
            network,
            inverters,
            initial_op,
            events,
            resolved_events: Vec::new(),
            dt,
            duration,
            q_convention,
        };
        sc.resolved_events = sc.resolve_power_targets()?;
        Ok(sc)
    }

    pub fn from_resolved(
        network: NetworkModel<T>,
        resolved: &ResolvedSystem<T>,
        events: Vec<StepEvent<T>>,
        dt: T,
        duration: T,
    ) -> Result<Self> {
        Self::new(network, resolved.inverters.clone(), resolved.op.clone(), events, dt, duration)
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    pub fn network(&self) -> &NetworkModel<T> {
        &self.network
    }

    pub fn inverters(&self) -> &[InverterParams<T>] {
        &self.inverters
    }

    pub fn initial_op(&self) -> &OperatingPoint<T> {
        &self.initial_op
    }

    pub fn events(&self) -> &[StepEvent<T>] {
        &self.events
    }

    /// Events with every power target replaced by the setpoint steps that
    /// realize it.
    pub fn resolved_events(&self) -> &[StepEvent<T>] {
        &self.resolved_events
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn duration(&self) -> T {
        self.duration
    }

    pub fn q_convention(&self) -> QConvention {
        self.q_convention
    }

    /// Frequency of the rotating frame, the initial equilibrium frequency.
    pub fn omega_frame(&self) -> T {
        self.initial_op.omega
    }

    pub fn sample_count(&self) -> usize {
        // tolerate duration/dt landing a hair below an integer
        let r = (self.duration / self.dt).as_f64();
        (r * (1.0 + 1e-12)).floor() as usize + 1
    }

    /// Grid index an event at `time` snaps to.
    pub fn event_step(&self, time: T) -> usize {
        (time / self.dt).as_f64().round() as usize
    }

    pub fn initial_state(&self) -> DVector<T> {
        state_from_operating_point(&self.initial_op)
    }

    /// `max(|x0_j|, 1)` per state component; the unit used for relative
    /// perturbations and error norms.
    pub fn state_scale(&self) -> DVector<T> {
        self.initial_state().map(|v| v.abs().max(T::one()))
    }

    fn initial_active(&self) -> Active<T> {
        Active {
            ybus: self.network.ybus(),
            inverters: self.inverters.clone(),
            load_scale: vec![T::one(); self.n()],
        }
    }

    fn active_at(&self, t: T) -> Result<Active<T>> {
        let mut active = self.initial_active();
        for ev in &self.resolved_events {
            if T::lit(self.event_step(ev.time) as f64) * self.dt <= t {
                active.apply(&self.network, &ev.kind)?;
            }
        }
        Ok(active)
    }

    fn resolve_power_targets(&self) -> Result<Vec<StepEvent<T>>> {
        let mut active = self.initial_active();
        let mut out = Vec::with_capacity(self.events.len());
        let mut i = 0;
        while i < self.events.len() {
            let time = self.events[i].time;
            let mut group = Vec::new();
            while i < self.events.len() && self.events[i].time == time {
                group.push(self.events[i]);
                i += 1;
            }
            let targets: Vec<(usize, PowerQuantity, T)> = group
                .iter()
                .filter_map(|ev| match ev.kind {
                    EventKind::PowerTarget { inverter, quantity, fraction } => Some((inverter, quantity, fraction)),
                    _ => None,
                })
                .collect();
            // direct events at the same instant act first
            for ev in group.iter().filter(|ev| !matches!(ev.kind, EventKind::PowerTarget { .. })) {
                active.apply(&self.network, &ev.kind)?;
                out.push(*ev);
            }
            if targets.is_empty() {
                continue;
            }
            let steps = self.setpoint_steps(&active, &targets)?;
            for kind in steps {
                active.apply(&self.network, &kind)?;
                out.push(StepEvent { time, kind });
            }
        }
        Ok(out)
    }

    /// Setpoint changes moving the equilibrium outputs named in `targets`
    /// by the requested fractions, from a finite-difference DC gain.
    fn setpoint_steps(&self, active: &Active<T>, targets: &[(usize, PowerQuantity, T)]) -> Result<Vec<EventKind<T>>> {
        let m = targets.len();
        let conv = self.q_convention;
        let outputs = |op: &OperatingPoint<T>| -> DVector<T> {
            DVector::from_iterator(
                m,
                targets.iter().map(|&(inv, q, _)| match q {
                    PowerQuantity::Real => op.buses[inv - 1].p,
                    PowerQuantity::Reactive => op.buses[inv - 1].q,
                }),
            )
        };
        let base = solve_droop_equilibrium(&active.ybus, &active.inverters, conv)?;
        let y0 = outputs(&base);
        let want = DVector::from_iterator(m, targets.iter().zip(y0.iter()).map(|(t, y)| t.2 * *y));

        let rel = T::lit(1e-4);
        let mut gain = DMatrix::zeros(m, m);
        let mut h = vec![T::zero(); m];
        for (c, &(inv, q, _)) in targets.iter().enumerate() {
            let p = &active.inverters[inv - 1];
            h[c] = match q {
                PowerQuantity::Real => rel * p.omega_0.abs().max(T::one()),
                PowerQuantity::Reactive => rel * p.e_0.abs().max(T::one()),
            };
            let shifted = |sign: T| -> Result<DVector<T>> {
                let mut invs = active.inverters.clone();
                match q {
                    PowerQuantity::Real => invs[inv - 1].omega_0 += sign * h[c],
                    PowerQuantity::Reactive => invs[inv - 1].e_0 += sign * h[c],
                }
                Ok(outputs(&solve_droop_equilibrium(&active.ybus, &invs, conv)?))
            };
            let col = (shifted(T::one())? - shifted(-T::one())?) / (T::lit(2.0) * h[c]);
            gain.set_column(c, &col);
        }
        let du = gain
            .lu()
            .solve(&want)
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::InvalidParameter("power targets are not independently reachable".into()))?;
        Ok(targets
            .iter()
            .zip(du.iter())
            .map(|(&(inverter, q, _), &delta)| match q {
                PowerQuantity::Real => EventKind::Omega0Step { inverter, delta },
                PowerQuantity::Reactive => EventKind::E0Step { inverter, delta },
            })
            .collect())
    }

    /// Largest normalized state derivative at the initial state: `δ̇` over
    /// `ω_frame`, filter rates over `ωf·max(|x|, 1)`.
    pub fn equilibrium_residual(&self) -> Result<T> {
        let x = self.initial_state();
        let (f, _) = evaluate(&self.initial_active(), &x, self.q_convention, self.omega_frame())?;
        let mut worst = T::zero();
        for (i, inv) in self.inverters.iter().enumerate() {
            worst = worst.max(f[3 * i].abs() / self.omega_frame().abs().max(T::one()));
            for k in 1..3 {
                let j = 3 * i + k;
                worst = worst.max(f[j].abs() / (inv.omega_f * x[j].abs().max(T::one())));
            }
        }
        Ok(worst)
    }
}

/// `(δ, p_f, q_f)` per inverter at an operating point.
pub fn state_from_operating_point<T: Real>(op: &OperatingPoint<T>) -> DVector<T> {
    let mut x = DVector::zeros(3 * op.n());
    for (i, b) in op.buses.iter().enumerate() {
        x[3 * i] = b.angle();
        x[3 * i + 1] = b.p;
        x[3 * i + 2] = b.q;
    }
    x
}

/// Algebraic quantities at one state.
#[derive(Debug, Clone, PartialEq)]
struct Algebraic<T> {
    e: Vec<Complex<T>>,
    mag: Vec<T>,
    p: Vec<T>,
    q: Vec<T>,
}

fn evaluate<T: Real>(
    active: &Active<T>,
    x: &DVector<T>,
    conv: QConvention,
    omega_frame: T,
) -> Result<(DVector<T>, Algebraic<T>)> {
    let n = active.inverters.len();
    if x.len() != 3 * n {
        return Err(Error::Dimension(format!("state has {} entries for {} inverters", x.len(), n)));
    }
    let mut e = Vec::with_capacity(n);
    let mut mag = Vec::with_capacity(n);
    for (i, inv) in active.inverters.iter().enumerate() {
        let m = inv.e_0 - inv.kv * x[3 * i + 2];
        if !(m > T::zero()) {
            return Err(Error::NonPositiveVoltage { bus: i + 1, magnitude: m.as_f64() });
        }
        let (s, c) = x[3 * i].sin_cos();
        e.push(Complex::new(m * c, m * s));
        mag.push(m);
    }
    let cur = active.ybus.mul_vec(&e)?;
    let mut f = DVector::zeros(3 * n);
    let mut p = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for (i, inv) in active.inverters.iter().enumerate() {
        let (pi, qi) = bus_powers(e[i].re, e[i].im, cur[i].re, cur[i].im, conv);
        f[3 * i] = inv.omega_0 - inv.kp * x[3 * i + 1] - omega_frame;
        f[3 * i + 1] = inv.omega_f * (pi - x[3 * i + 1]);
        f[3 * i + 2] = inv.omega_f * (qi - x[3 * i + 2]);
        p.push(pi);
        q.push(qi);
    }
    Ok((f, Algebraic { e, mag, p, q }))
}

/// State derivative at time `t`, with every event whose grid time is at or
/// before `t` in effect.
pub fn dynamics<T: Real>(state: &DVector<T>, scenario: &Scenario<T>, t: T) -> Result<DVector<T>> {
    let active = scenario.active_at(t)?;
    evaluate(&active, state, scenario.q_convention, scenario.omega_frame()).map(|(f, _)| f)
}

/// Per-bus series of a simulation. Powers are per-phase, voltages per-phase
/// RMS, frequency in rad/s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BusTrace<T> {
    pub omega: Vec<T>,
    pub e_mag: Vec<T>,
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub e_d: Vec<T>,
    pub e_q: Vec<T>,
    pub delta: Vec<T>,
    pub p_f: Vec<T>,
    pub q_f: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventMarker<T> {
    /// Requested time.
    pub time: T,
    /// Grid time the event took effect.
    pub applied_at: T,
    pub step: usize,
    pub kind: EventKind<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace<T> {
    pub t: Vec<T>,
    pub buses: Vec<BusTrace<T>>,
    pub events: Vec<EventMarker<T>>,
}

impl<T: Real> SimTrace<T> {
    fn with_capacity(n: usize, cap: usize) -> Self {
        let bus = BusTrace {
            omega: Vec::with_capacity(cap),
            e_mag: Vec::with_capacity(cap),
            p: Vec::with_capacity(cap),
            q: Vec::with_capacity(cap),
            e_d: Vec::with_capacity(cap),
            e_q: Vec::with_capacity(cap),
            delta: Vec::with_capacity(cap),
            p_f: Vec::with_capacity(cap),
            q_f: Vec::with_capacity(cap),
        };
        Self { t: Vec::with_capacity(cap), buses: vec![bus; n], events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Simulator state at sample `k`.
    pub fn state(&self, k: usize) -> DVector<T> {
        let n = self.buses.len();
        DVector::from_fn(3 * n, |j, _| {
            let b = &self.buses[j / 3];
            match j % 3 {
                0 => b.delta[k],
                1 => b.p_f[k],
                _ => b.q_f[k],
            }
        })
    }

    fn push(&mut self, t: T, active: &Active<T>, x: &DVector<T>, alg: &Algebraic<T>) {
        self.t.push(t);
        for (i, b) in self.buses.iter_mut().enumerate() {
            let inv = &active.inverters[i];
            b.omega.push(inv.omega_0 - inv.kp * x[3 * i + 1]);
            b.e_mag.push(alg.mag[i]);
            b.p.push(alg.p[i]);
            b.q.push(alg.q[i]);
            b.e_d.push(alg.e[i].re);
            b.e_q.push(alg.e[i].im);
            b.delta.push(x[3 * i]);
            b.p_f.push(x[3 * i + 1]);
            b.q_f.push(x[3 * i + 2]);
        }
    }
}

/// A run that stopped early. `trace` holds every sample up to the last
/// good one.
#[derive(Debug, Clone)]
pub struct SimAbort<T> {
    pub trace: SimTrace<T>,
    pub time: T,
    pub reason: String,
}

impl<T: Real> fmt::Display for SimAbort<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "simulation aborted at t = {} s: {}", self.time.as_f64(), self.reason)
    }
}

impl<T: Real> std::error::Error for SimAbort<T> {}

fn rk4_step<T: Real>(
    active: &Active<T>,
    x: &DVector<T>,
    dt: T,
    conv: QConvention,
    omega_frame: T,
) -> Result<DVector<T>> {
    let half = T::lit(0.5);
    let f = |y: &DVector<T>| evaluate(active, y, conv, omega_frame).map(|(d, _)| d);
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * (dt * half)))?;
    let k3 = f(&(x + &k2 * (dt * half)))?;
    let k4 = f(&(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * T::lit(2.0) + k3 * T::lit(2.0) + k4) * (dt / T::lit(6.0)))
}

/// Fixed-step RK4 from the scenario's initial equilibrium.
pub fn simulate<T: Real>(scenario: &Scenario<T>) -> std::result::Result<SimTrace<T>, SimAbort<T>> {
    simulate_from(scenario, scenario.initial_state())
}

/// Fixed-step RK4 from an arbitrary initial state. Events take effect at
/// the grid point nearest their requested time, before that sample is
/// recorded.
pub fn simulate_from<T: Real>(
    scenario: &Scenario<T>,
    x0: DVector<T>,
) -> std::result::Result<SimTrace<T>, SimAbort<T>> {
    let n = scenario.n();
    let count = scenario.sample_count();
    let conv = scenario.q_convention;
    let wf = scenario.omega_frame();
    let dt = scenario.dt;
    let limit = T::lit(DIVERGENCE_LIMIT);
    let mut trace = SimTrace::with_capacity(n, count);
    let mut active = scenario.initial_active();
    let mut x = x0;
    let mut pending = scenario.resolved_events.iter().peekable();
    for k in 0..count {
        let t = T::lit(k as f64) * dt;
        while let Some(ev) = pending.next_if(|ev| scenario.event_step(ev.time) <= k) {
            if let Err(e) = active.apply(&scenario.network, &ev.kind) {
                return Err(SimAbort { trace, time: t, reason: e.to_string() });
            }
            trace.events.push(EventMarker { time: ev.time, applied_at: t, step: k, kind: ev.kind });
        }
        let alg = match evaluate(&active, &x, conv, wf) {
            Ok((_, alg)) => alg,
            Err(e) => return Err(SimAbort { trace, time: t, reason: e.to_string() }),
        };
        trace.push(t, &active, &x, &alg);
        if k + 1 == count {
            break;
        }
        match rk4_step(&active, &x, dt, conv, wf) {
            Ok(next) if next.iter().all(|v| v.is_finite() && v.abs() <= limit) => x = next,
            Ok(_) => {
                return Err(SimAbort { trace, time: t + dt, reason: "state diverged".to_string() })
            }
            Err(e) => return Err(SimAbort { trace, time: t + dt, reason: e.to_string() }),
        }
    }
    Ok(trace)
}

/// Central-difference Jacobian of the undisturbed dynamics at the initial
/// state. Column `j` uses the step `h·max(|x_j|, 1)`.
pub fn fd_jacobian<T: Real>(scenario: &Scenario<T>, h: T) -> Result<DMatrix<T>> {
    if !(h >= T::lit(1e-7) && h <= T::lit(1e-4)) {
        return Err(Error::InvalidParameter("relative step must lie in [1e-7, 1e-4]".into()));
    }
    let active = scenario.initial_active();
    let x0 = scenario.initial_state();
    let n = x0.len();
    let conv = scenario.q_convention;
    let wf = scenario.omega_frame();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let s = h * x0[j].abs().max(T::one());
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += s;
        xm[j] -= s;
        let fp = evaluate(&active, &xp, conv, wf)?.0;
        let fm = evaluate(&active, &xm, conv, wf)?.0;
        jac.set_column(j, &((fp - fm) / (T::lit(2.0) * s)));
    }
    Ok(jac)
}

/// Eigenvalues of the finite-difference Jacobian, computed on the similar
/// matrix `D⁻¹·J·D` with `D = diag(state_scale)`. Angles in radians and
/// powers in watts otherwise differ by four orders of magnitude, which
/// makes the zero modes ill-conditioned for any dense eigen-solver.
pub fn fd_spectrum<T: Real>(scenario: &Scenario<T>, h: T) -> Result<Vec<Complex<T>>> {
    let j = fd_jacobian(scenario, h)?;
    let d = scenario.state_scale();
    let scaled = DMatrix::from_fn(j.nrows(), j.ncols(), |r, c| j[(r, c)] * d[c] / d[r]);
    eigenvalues(&scaled)
}

/// Linear map from simulator deviations `(δ, p_f, q_f)` to small-signal
/// deviations `(ω, e_d, e_q)` at the initial equilibrium, block diagonal
/// with blocks `[[0, −kp, 0], [−E·sinδ, 0, −kv·cosδ], [E·cosδ, 0, −kv·sinδ]]`.
pub fn coordinate_map<T: Real>(scenario: &Scenario<T>) -> DMatrix<T> {
    let n = scenario.n();
    let mut t = DMatrix::zeros(3 * n, 3 * n);
    for (i, (inv, b)) in scenario.inverters.iter().zip(&scenario.initial_op.buses).enumerate() {
        let (s, c) = b.angle().sin_cos();
        let e = b.magnitude();
        let o = 3 * i;
        t[(o, o + 1)] = -inv.kp;
        t[(o + 1, o)] = -e * s;
        t[(o + 1, o + 2)] = -inv.kv * c;
        t[(o + 2, o)] = e * c;
        t[(o + 2, o + 2)] = -inv.kv * s;
    }
    t
}

/// Largest scaled gap, over `[0, horizon]`, between the nonlinear response
/// to the initial deviation `dx0` and the linear response
/// `T⁻¹·exp(A·t)·T·dx0`. Components are divided by [`Scenario::state_scale`].
/// Events are ignored. Needs `kp·kv > 0` at every inverter so the
/// coordinate map is invertible.
pub fn linearization_gap<T: Real>(scenario: &Scenario<T>, a: &DMatrix<T>, dx0: &DVector<T>, horizon: T) -> Result<T> {
    let n3 = 3 * scenario.n();
    if a.shape() != (n3, n3) || dx0.len() != n3 {
        return Err(Error::Dimension("state matrix or perturbation has the wrong size".into()));
    }
    let tm = coordinate_map(scenario);
    let tinv = tm
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("coordinate map is singular (zero droop gain)".into()))?;
    let lin = &tinv * a * &tm;
    let dt = scenario.dt;
    let phi = (&lin * dt).exp();

    let undisturbed = Scenario { resolved_events: Vec::new(), events: Vec::new(), duration: horizon, ..scenario.clone() };
    let x0 = scenario.initial_state();
    let trace = simulate_from(&undisturbed, &x0 + dx0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let scale = scenario.state_scale();
    let mut z = dx0.clone();
    let mut worst = T::zero();
    for k in 0..trace.len() {
        let dev = trace.state(k) - &x0 - &z;
        for j in 0..n3 {
            worst = worst.max(dev[j].abs() / scale[j]);
        }
        z = &phi * z;
    }
    Ok(worst)
}

fn interp<T: Real>(t: &[T], v: &[T], at: T, hint: &mut usize) -> T {
    let last = t.len() - 1;
    while *hint < last && t[*hint + 1] <= at {
        *hint += 1;
    }
    if *hint >= last {
        return v[last];
    }
    let w = (at - t[*hint]) / (t[*hint + 1] - t[*hint]);
    v[*hint] + (v[*hint + 1] - v[*hint]) * w
}

/// Instantaneous phase-to-neutral waveform of `bus` (1-based) sampled at
/// `fs`, and the E-PLL estimate on it.
///
/// `x(t) = √2·E(t)·cos θ(t)` with `θ̇ = ω`, `θ(0) = δ(0)`, and `E`, `ω`
/// interpolated linearly between trace samples. The estimator starts
/// matched to the first sample.
pub fn synthesize_and_track<T: Real>(
    trace: &SimTrace<T>,
    bus: usize,
    fs: T,
    params: &EpllParams<T>,
) -> Result<(Vec<T>, Vec<EpllSample<T>>)> {
    if bus == 0 || bus > trace.buses.len() {
        return Err(Error::BusOutOfRange { index: bus, n: trace.buses.len() });
    }
    if trace.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let b = &trace.buses[bus - 1];
    let nominal_hz = b.omega[0] / T::two_pi();
    if !(fs >= T::lit(10.0) * nominal_hz) {
        return Err(Error::InvalidParameter("sample rate must be at least ten times the line frequency".into()));
    }
    let t_end = *trace.t.last().unwrap();
    let count = (t_end * fs).as_f64().floor() as usize + 1;
    let ts = T::one() / fs;
    let sqrt2 = T::lit(2.0).sqrt();
    let mut samples = Vec::with_capacity(count);
    let (mut h_e, mut h_w) = (0, 0);
    let mut theta = b.delta[0];
    let mut w_prev = b.omega[0];
    for k in 0..count {
        let t = T::lit(k as f64) * ts;
        let w = interp(&trace.t, &b.omega, t, &mut h_w);
        if k > 0 {
            theta += (w_prev + w) * T::lit(0.5) * ts;
        }
        w_prev = w;
        let e = interp(&trace.t, &b.e_mag, t, &mut h_e);
        samples.push(sqrt2 * e * theta.cos());
    }
    let init = EpllState::new(b.e_mag[0], b.omega[0], b.delta[0]);
    let est = run_epll(&samples, fs, params, init)?;
    Ok((samples, est))
}
