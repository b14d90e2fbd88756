#![allow(dead_code)]

use std::f64::consts::PI;

use gridstab_core::equilibrium::{InverterParams, QConvention};
use gridstab_core::network::{LineSpec, LoadSpec, NetworkModel, PowerBasis};
use gridstab_core::system::{DroopSystem, EquilibriumSpec};
use gridstab_core::Complex;

pub const V_LL: f64 = 480.0;

fn c(re: f64, im: f64) -> Complex<f64> {
    Complex::new(re, im)
}

fn lines() -> Vec<LineSpec<f64>> {
    vec![
        LineSpec::new(1, 2, c(1.5, 3.0)),
        LineSpec::new(1, 3, c(0.25, 1.0)),
        LineSpec::new(2, 3, c(0.5, 4.0)),
    ]
}

fn system(loads: [Complex<f64>; 3], sources: [Complex<f64>; 3], conv: QConvention) -> DroopSystem<f64> {
    let loads = loads.iter().enumerate().map(|(i, s)| LoadSpec::new(i + 1, *s, V_LL)).collect();
    let net = NetworkModel::new(3, lines(), loads, PowerBasis::ThreePhaseTotal).unwrap();
    let inv = InverterParams { kp: 5e-4, kv: 5e-4, omega_f: 75.4, omega_0: 2.0 * PI * 60.0, e_0: V_LL / 3f64.sqrt() };
    let eq = EquilibriumSpec::PowerInjections {
        injections: sources.iter().map(|s| s / 3.0).collect(),
        omega: 2.0 * PI * 60.0,
        v_guess: V_LL / 3f64.sqrt(),
    };
    DroopSystem::new(net, vec![inv; 3], eq, conv).unwrap()
}

pub fn case1() -> DroopSystem<f64> {
    system(
        [c(11059.0, 6128.0), c(14061.0, 6183.0), c(7025.0, 3462.0)],
        [c(11073.0, 5996.0), c(13951.0, 5538.0), c(7123.0, 4296.0)],
        QConvention::A,
    )
}

pub fn case2() -> DroopSystem<f64> {
    system(
        [c(900.0, 400.0), c(750.0, 375.0), c(1000.0, 450.0)],
        [c(900.0, 400.0), c(750.0, 375.0), c(1000.0, 450.0)],
        QConvention::A,
    )
}
