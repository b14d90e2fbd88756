//! Built-in three-bus reference cases.

use std::f64::consts::SQRT_2;

use anyhow::bail;

use crate::config::{
    EpllConfig, EventConfig, InverterConfig, LineConfig, LoadConfig, NetworkConfig, Options, Quantity,
    ScenarioConfig, SimulationConfig, SCHEMA_VERSION,
};

pub const PRESET_NAMES: [&str; 2] = ["case1", "case2"];

fn lines() -> Vec<LineConfig> {
    vec![
        LineConfig { from: 1, to: 2, r_ohm: 1.5, x_ohm: 3.0 },
        LineConfig { from: 1, to: 3, r_ohm: 0.25, x_ohm: 1.0 },
        LineConfig { from: 2, to: 3, r_ohm: 0.5, x_ohm: 4.0 },
    ]
}

fn build(loads: [[f64; 2]; 3], sources: [[f64; 2]; 3], q_step: f64) -> ScenarioConfig {
    let inverters = sources
        .iter()
        .map(|s| InverterConfig {
            kp: 0.0005,
            kv: 0.0005,
            omega_f: 75.4,
            omega0_hz: None,
            e0_v: None,
            power_va: Some(*s),
        })
        .collect();
    ScenarioConfig {
        schema: SCHEMA_VERSION.to_string(),
        network: NetworkConfig {
            rated_voltage_ll: 480.0,
            nominal_frequency_hz: 60.0,
            lines: lines(),
            loads: loads
                .iter()
                .enumerate()
                .map(|(i, l)| LoadConfig { bus: i + 1, p_w: l[0], q_var: l[1] })
                .collect(),
        },
        inverters,
        scenario: SimulationConfig {
            events: vec![
                EventConfig::PowerTarget { time: 0.5, inverter: 2, quantity: Quantity::P, fraction: 0.1 },
                EventConfig::PowerTarget { time: 0.5, inverter: 3, quantity: Quantity::Q, fraction: q_step },
            ],
            dt: 1e-4,
            duration: 1.0,
        },
        epll: EpllConfig { a0: Some(480.0 * SQRT_2), ..EpllConfig::default() },
        options: Options::default(),
    }
}

pub fn case1() -> ScenarioConfig {
    build(
        [[11059.0, 6128.0], [14061.0, 6183.0], [7025.0, 3462.0]],
        [[11073.0, 5996.0], [13951.0, 5538.0], [7123.0, 4296.0]],
        0.10,
    )
}

/// Real and reactive steps of 10% and 15%, on the same inverters as the
/// first case.
pub fn case2() -> ScenarioConfig {
    build(
        [[900.0, 400.0], [750.0, 375.0], [1000.0, 450.0]],
        [[900.0, 400.0], [750.0, 375.0], [1000.0, 450.0]],
        0.15,
    )
}

pub fn preset(name: &str) -> anyhow::Result<ScenarioConfig> {
    match name {
        "case1" => Ok(case1()),
        "case2" => Ok(case2()),
        other => bail!("unknown preset {other:?}; available: {}", PRESET_NAMES.join(", ")),
    }
}
