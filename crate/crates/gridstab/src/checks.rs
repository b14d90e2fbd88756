//! Self-consistency checks between the small-signal model and the
//! nonlinear simulator.

use nalgebra::DVector;
use serde::Serialize;

use gridstab_core::dynsim::{fd_spectrum, linearization_gap, Scenario};
use gridstab_core::eigen::{eigenvalues, match_nearest};
use gridstab_core::equilibrium::OperatingPoint;
use gridstab_core::smallsignal::{default_zero_tol, rotation_vector, SmallSignalModel};
use gridstab_core::system::{DroopSystem, ResolvedSystem};
use gridstab_core::Complex;

pub const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
pub const FD_MATCH_TOL: f64 = 1e-2;
pub const FD_STABILITY_TOL: f64 = 1e-3;
pub const GAUGE_TOL: f64 = 1e-8;
pub const ZERO_DROOP_TOL: f64 = 1e-9;
pub const GAP_EXPONENT_RANGE: (f64, f64) = (1.8, 2.2);
pub const GAP_HORIZON: f64 = 0.2;
pub const GAP_EPSILONS: [f64; 2] = [1e-3, 1e-4];

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self { name: name.to_string(), passed: measured <= tolerance, measured, tolerance, detail }
    }
}

/// Relative distance between two spectra after nearest matching. Pairs
/// with both members inside `zero_tol` count as equal.
pub fn spectrum_mismatch(a: &[Complex<f64>], b: &[Complex<f64>], zero_tol: f64) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    match_nearest(a, b)
        .into_iter()
        .map(|(i, j)| {
            let (x, y) = (a[i], b[j]);
            if x.norm() < zero_tol && y.norm() < zero_tol {
                0.0
            } else {
                (x - y).norm() / x.norm().max(y.norm())
            }
        })
        .fold(0.0, f64::max)
}

/// The small-signal model at `resolved`, optionally assembled under the
/// opposite reactive-power sign from the one the simulator uses.
pub fn model_for(resolved: &ResolvedSystem<f64>, flip_convention: bool) -> anyhow::Result<SmallSignalModel<f64>> {
    let op = if flip_convention {
        let conv = resolved.op.q_convention.flipped();
        OperatingPoint::from_voltages(&resolved.ybus, &resolved.op.voltages(), resolved.op.omega, conv)?
    } else {
        resolved.op.clone()
    };
    Ok(SmallSignalModel::build(&resolved.ybus, &op, &resolved.inverters)?)
}

fn still_scenario(system: &DroopSystem<f64>, resolved: &ResolvedSystem<f64>) -> anyhow::Result<Scenario<f64>> {
    Ok(Scenario::from_resolved(system.network.clone(), resolved, Vec::new(), 1e-4, 0.0)?)
}

/// Finite-difference Jacobian of the simulator against the assembled
/// state matrix, and the stability of that comparison under the FD step.
pub fn fd_against_model(system: &DroopSystem<f64>, flip_convention: bool) -> anyhow::Result<Vec<Check>> {
    let resolved = system.resolve()?;
    let model = model_for(&resolved, flip_convention)?;
    let sc = still_scenario(system, &resolved)?;
    let zero_tol = default_zero_tol(system.inverters[0].omega_f);
    let ev_a = eigenvalues(&model.a)?;
    let spectra = FD_STEPS.iter().map(|h| fd_spectrum(&sc, *h)).collect::<Result<Vec<_>, _>>()?;
    let mismatch = spectra.iter().map(|s| spectrum_mismatch(&ev_a, s, zero_tol)).fold(0.0, f64::max);
    let mut drift: f64 = 0.0;
    for s in &spectra[1..] {
        drift = drift.max(spectrum_mismatch(&spectra[0], s, zero_tol));
    }
    Ok(vec![
        Check::at_most(
            "fd_jacobian_spectrum",
            mismatch,
            FD_MATCH_TOL,
            format!("largest relative eigenvalue mismatch over h in {FD_STEPS:?}"),
        ),
        Check::at_most("fd_step_stability", drift, FD_STABILITY_TOL, "relative drift of the FD spectrum across h".into()),
    ])
}

/// `‖A·v‖ / (‖A‖·‖v‖)` for the uniform phasor rotation `v`.
pub fn gauge_residual(model: &SmallSignalModel<f64>, op: &OperatingPoint<f64>) -> f64 {
    let v: DVector<f64> = rotation_vector(op);
    (&model.a * &v).norm() / (model.a.norm() * v.norm())
}

pub fn gauge_mode(system: &DroopSystem<f64>, flip_convention: bool) -> anyhow::Result<Check> {
    let resolved = system.resolve()?;
    let model = model_for(&resolved, flip_convention)?;
    Ok(Check::at_most(
        "gauge_mode",
        gauge_residual(&model, &resolved.op),
        GAUGE_TOL,
        "normalized residual of A on the uniform-rotation vector".into(),
    ))
}

/// Largest deviation, relative to `ωf`, of a spectrum from
/// `{−ωf × 2N, 0 × N}`.
pub fn zero_droop_deviation(ev: &[Complex<f64>], omega_f: f64) -> f64 {
    let n = ev.len() / 3;
    let mut expected = vec![Complex::new(-omega_f, 0.0); 2 * n];
    expected.extend(vec![Complex::new(0.0, 0.0); n]);
    if ev.len() != expected.len() {
        return f64::INFINITY;
    }
    match_nearest(ev, &expected)
        .into_iter()
        .map(|(i, j)| (ev[i] - expected[j]).norm() / omega_f)
        .fold(0.0, f64::max)
}

pub fn zero_droop(system: &DroopSystem<f64>) -> anyhow::Result<Check> {
    let zero = system.with_gains(Some(0.0), Some(0.0), None);
    let resolved = zero.resolve()?;
    let model = SmallSignalModel::build(&resolved.ybus, &resolved.op, &resolved.inverters)?;
    let wf = zero.inverters[0].omega_f;
    let dev_a = zero_droop_deviation(&eigenvalues(&model.a)?, wf);
    let sc = still_scenario(&zero, &resolved)?;
    let dev_fd = zero_droop_deviation(&fd_spectrum(&sc, 1e-5)?, wf);
    Ok(Check::at_most(
        "zero_droop_spectrum",
        dev_a.max(dev_fd),
        ZERO_DROOP_TOL,
        format!("state matrix {dev_a:.3e}, finite-difference Jacobian {dev_fd:.3e}"),
    ))
}

fn perturbation_direction(n: usize) -> DVector<f64> {
    // fixed mixed-sign pattern touching every state
    DVector::from_fn(n, |j, _| {
        let s = if j % 2 == 0 { 1.0 } else { -1.0 };
        s * (0.3 + 0.7 * ((j * 7 + 3) % 11) as f64 / 10.0)
    })
}

/// Gaps between nonlinear and linear trajectories for each relative
/// perturbation size in [`GAP_EPSILONS`].
pub fn linearization_gaps(system: &DroopSystem<f64>, flip_convention: bool) -> anyhow::Result<Vec<f64>> {
    let resolved = system.resolve()?;
    let model = model_for(&resolved, flip_convention)?;
    let sc = still_scenario(system, &resolved)?;
    let dir = perturbation_direction(3 * system.n()).component_mul(&sc.state_scale());
    GAP_EPSILONS
        .iter()
        .map(|eps| Ok(linearization_gap(&sc, &model.a, &(&dir * *eps), GAP_HORIZON)?))
        .collect()
}

pub fn linear_vs_nonlinear(system: &DroopSystem<f64>, flip_convention: bool) -> anyhow::Result<Check> {
    let gaps = linearization_gaps(system, flip_convention)?;
    let exponent = (gaps[0] / gaps[1]).log10() / (GAP_EPSILONS[0] / GAP_EPSILONS[1]).log10();
    let (lo, hi) = GAP_EXPONENT_RANGE;
    Ok(Check {
        name: "linear_vs_nonlinear".into(),
        passed: (lo..=hi).contains(&exponent),
        measured: exponent,
        tolerance: hi,
        detail: format!("gap scaling exponent, expected in [{lo}, {hi}]; gaps {:.3e}, {:.3e}", gaps[0], gaps[1]),
    })
}

/// Every verification check on one system.
pub fn run_all(system: &DroopSystem<f64>, flip_convention: bool) -> anyhow::Result<Vec<Check>> {
    let mut out = fd_against_model(system, flip_convention)?;
    out.push(gauge_mode(system, flip_convention)?);
    out.push(zero_droop(system)?);
    out.push(linear_vs_nonlinear(system, flip_convention)?);
    Ok(out)
}

/// Time after `t_step` at which `v` last leaves the band
/// `|v − v_final| ≤ band·|v_final − v_before|`, where `v_before` is the
/// last sample before the step. Zero if it never leaves.
pub fn settling_time(t: &[f64], v: &[f64], t_step: f64, band: f64) -> f64 {
    let k0 = t.iter().position(|x| *x >= t_step - 1e-12).unwrap_or(t.len());
    if k0 == 0 || k0 >= t.len() {
        return 0.0;
    }
    let fin = v[v.len() - 1];
    let width = band * (fin - v[k0 - 1]).abs();
    let mut last = t_step;
    for k in k0..v.len() {
        if (v[k] - fin).abs() > width {
            last = t[k];
        }
    }
    last - t_step
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_of_first_order_step() {
        let t: Vec<f64> = (0..=2000).map(|k| k as f64 * 1e-3).collect();
        let v: Vec<f64> = t.iter().map(|&x| if x < 1.0 { 5.0 } else { 6.0 - (-(x - 1.0) / 0.1).exp() }).collect();
        let ts = settling_time(&t, &v, 1.0, 0.05);
        assert!((ts - 0.1 * 20f64.ln()).abs() < 2e-3, "{ts}");
        assert_eq!(settling_time(&t, &vec![1.0; t.len()], 1.0, 0.05), 0.0);
    }

    #[test]
    fn mismatch_ignores_gauge_pairs() {
        let a = [Complex::new(0.0, 0.0), Complex::new(-10.0, 1.0)];
        let b = [Complex::new(-10.1, 1.0), Complex::new(1e-9, 0.0)];
        assert!((spectrum_mismatch(&a, &b, 1e-6) - 0.1 / 10.1f64.hypot(1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_droop_deviation_of_exact_spectrum() {
        let ev = [Complex::new(-5.0, 0.0), Complex::new(-5.0, 0.0), Complex::new(0.0, 0.0)];
        assert_eq!(zero_droop_deviation(&ev, 5.0), 0.0);
    }
}
