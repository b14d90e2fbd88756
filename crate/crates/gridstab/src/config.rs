//! Scenario configuration documents.
//!
//! Units are fixed: ohms, VA, volts line-to-line RMS, Hz for setpoints and
//! rad/s for the measurement filter pole. Conversion to the per-phase RMS
//! quantities used by the solvers happens here and nowhere else.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use gridstab_core::dynsim::{EventKind, PowerQuantity, Scenario, StepEvent};
use gridstab_core::epll::{design_gains, EpllParams};
use gridstab_core::equilibrium::{InverterParams, QConvention};
use gridstab_core::network::{LineSpec, LoadSpec, NetworkModel, PowerBasis};
use gridstab_core::system::{DroopSystem, EquilibriumSpec, ResolvedSystem};
use gridstab_core::Complex;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    pub network: NetworkConfig,
    pub inverters: Vec<InverterConfig>,
    #[serde(default)]
    pub scenario: SimulationConfig,
    #[serde(default)]
    pub epll: EpllConfig,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub rated_voltage_ll: f64,
    #[serde(default = "default_frequency")]
    pub nominal_frequency_hz: f64,
    pub lines: Vec<LineConfig>,
    #[serde(default)]
    pub loads: Vec<LoadConfig>,
}

fn default_frequency() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub bus: usize,
    pub p_w: f64,
    pub q_var: f64,
}

/// One inverter per bus, in bus order. Either `power_va` or both
/// `omega0_hz` and `e0_v` must be given, and every inverter in a document
/// uses the same style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterConfig {
    /// rad/s per W.
    pub kp: f64,
    /// V per VAR.
    pub kv: f64,
    /// rad/s.
    pub omega_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0_hz: Option<f64>,
    /// Line-to-line RMS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e0_v: Option<f64>,
    /// `[P, Q]` delivered at the operating point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_va: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
}

fn default_dt() -> f64 {
    1e-4
}

fn default_duration() -> f64 {
    1.0
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { events: Vec::new(), dt: default_dt(), duration: default_duration() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    P,
    Q,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventConfig {
    LoadScale { time: f64, bus: usize, factor: f64 },
    Omega0Step { time: f64, inverter: usize, delta_hz: f64 },
    /// Line-to-line RMS volts.
    E0Step { time: f64, inverter: usize, delta_v: f64 },
    PowerTarget { time: f64, inverter: usize, quantity: Quantity, fraction: f64 },
}

impl EventConfig {
    pub fn time(&self) -> f64 {
        match *self {
            Self::LoadScale { time, .. }
            | Self::Omega0Step { time, .. }
            | Self::E0Step { time, .. }
            | Self::PowerTarget { time, .. } => time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpllConfig {
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default = "default_omega_n")]
    pub omega_n: f64,
    #[serde(default = "default_k1")]
    pub k1: f64,
    /// Design amplitude in volts; `√2·rated_voltage_ll` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
}

fn default_zeta() -> f64 {
    0.85
}

fn default_omega_n() -> f64 {
    200.0
}

fn default_k1() -> f64 {
    200.0
}

fn default_sample_rate() -> f64 {
    10_000.0
}

impl Default for EpllConfig {
    fn default() -> Self {
        Self {
            zeta: default_zeta(),
            omega_n: default_omega_n(),
            k1: default_k1(),
            a0: None,
            sample_rate: default_sample_rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum QConventionConfig {
    #[default]
    A,
    B,
}

impl From<QConventionConfig> for QConvention {
    fn from(c: QConventionConfig) -> Self {
        match c {
            QConventionConfig::A => QConvention::A,
            QConventionConfig::B => QConvention::B,
        }
    }
}

/// How table VA figures relate to the per-phase model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadConversion {
    #[default]
    ThreePhaseTotal,
    PerPhase,
}

impl From<LoadConversion> for PowerBasis {
    fn from(c: LoadConversion) -> Self {
        match c {
            LoadConversion::ThreePhaseTotal => PowerBasis::ThreePhaseTotal,
            LoadConversion::PerPhase => PowerBasis::PerPhase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default)]
    pub q_convention: QConventionConfig,
    #[serde(default)]
    pub load_conversion: LoadConversion,
}

/// Inverter operating-point style shared by every inverter of a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatingStyle {
    PowerInjections,
    Setpoints,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid scenario document")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn n(&self) -> usize {
        self.inverters.len()
    }

    pub fn style(&self) -> anyhow::Result<OperatingStyle> {
        let mut style = None;
        for (k, inv) in self.inverters.iter().enumerate() {
            let here = match (inv.power_va.is_some(), inv.omega0_hz.is_some(), inv.e0_v.is_some()) {
                (true, false, false) => OperatingStyle::PowerInjections,
                (false, true, true) => OperatingStyle::Setpoints,
                _ => bail!("inverters[{k}]: give either power_va or both omega0_hz and e0_v"),
            };
            match style {
                None => style = Some(here),
                Some(s) if s != here => bail!("inverters[{k}]: all inverters must use the same operating-point style"),
                _ => {}
            }
        }
        style.ok_or_else(|| anyhow::anyhow!("inverters: at least one inverter is required"))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema != SCHEMA_VERSION {
            bail!("schema: unsupported version {:?}, expected {SCHEMA_VERSION:?}", self.schema);
        }
        let n = self.n();
        self.style()?;
        if !(self.network.rated_voltage_ll > 0.0) {
            bail!("network.rated_voltage_ll: must be positive");
        }
        if !(self.network.nominal_frequency_hz > 0.0) {
            bail!("network.nominal_frequency_hz: must be positive");
        }
        for (k, l) in self.network.lines.iter().enumerate() {
            if l.from == 0 || l.from > n || l.to == 0 || l.to > n {
                bail!("network.lines[{k}]: bus index outside 1..={n}");
            }
        }
        for (k, l) in self.network.loads.iter().enumerate() {
            if l.bus == 0 || l.bus > n {
                bail!("network.loads[{k}]: bus index outside 1..={n}");
            }
        }
        for (k, inv) in self.inverters.iter().enumerate() {
            if !(inv.omega_f > 0.0) {
                bail!("inverters[{k}].omega_f: must be positive");
            }
            if !(inv.kp >= 0.0) || !(inv.kv >= 0.0) {
                bail!("inverters[{k}]: droop coefficients must be non-negative");
            }
            if let Some(e0) = inv.e0_v {
                if !(e0 > 0.0) {
                    bail!("inverters[{k}].e0_v: must be positive");
                }
            }
        }
        if !(self.scenario.dt > 0.0) {
            bail!("scenario.dt: must be positive");
        }
        if !(self.scenario.duration >= 0.0) {
            bail!("scenario.duration: must be non-negative");
        }
        if !(self.epll.sample_rate > 0.0) || !(self.epll.omega_n > 0.0) || !(self.epll.k1 > 0.0) || !(self.epll.zeta >= 0.0) {
            bail!("epll: zeta must be non-negative; omega_n, k1 and sample_rate positive");
        }
        if let Some(a0) = self.epll.a0 {
            if !(a0 > 0.0) {
                bail!("epll.a0: must be positive");
            }
        }
        Ok(())
    }

    pub fn q_convention(&self) -> QConvention {
        self.options.q_convention.into()
    }

    pub fn basis(&self) -> PowerBasis {
        self.options.load_conversion.into()
    }

    /// Per-phase RMS voltage at the rated line-to-line value.
    pub fn v_phase(&self) -> f64 {
        self.network.rated_voltage_ll / 3f64.sqrt()
    }

    pub fn nominal_omega(&self) -> f64 {
        2.0 * PI * self.network.nominal_frequency_hz
    }

    pub fn network_model(&self) -> anyhow::Result<NetworkModel<f64>> {
        let lines = self
            .network
            .lines
            .iter()
            .map(|l| LineSpec::new(l.from, l.to, Complex::new(l.r_ohm, l.x_ohm)))
            .collect();
        let loads = self
            .network
            .loads
            .iter()
            .map(|l| LoadSpec::new(l.bus, Complex::new(l.p_w, l.q_var), self.network.rated_voltage_ll))
            .collect();
        Ok(NetworkModel::new(self.n(), lines, loads, self.basis())?)
    }

    pub fn system(&self) -> anyhow::Result<DroopSystem<f64>> {
        let style = self.style()?;
        let inverters = self
            .inverters
            .iter()
            .map(|inv| InverterParams {
                kp: inv.kp,
                kv: inv.kv,
                omega_f: inv.omega_f,
                omega_0: inv.omega0_hz.map_or(self.nominal_omega(), |f| 2.0 * PI * f),
                e_0: inv.e0_v.map_or(self.v_phase(), |v| v / 3f64.sqrt()),
            })
            .collect();
        let equilibrium = match style {
            OperatingStyle::PowerInjections => EquilibriumSpec::PowerInjections {
                injections: self
                    .inverters
                    .iter()
                    .map(|inv| {
                        let [p, q] = inv.power_va.expect("style checked");
                        self.basis().to_per_phase(Complex::new(p, q))
                    })
                    .collect(),
                omega: self.nominal_omega(),
                v_guess: self.v_phase(),
            },
            OperatingStyle::Setpoints => EquilibriumSpec::Setpoints,
        };
        Ok(DroopSystem::new(self.network_model()?, inverters, equilibrium, self.q_convention())?)
    }

    pub fn events(&self) -> Vec<StepEvent<f64>> {
        let root3 = 3f64.sqrt();
        self.scenario
            .events
            .iter()
            .map(|e| match *e {
                EventConfig::LoadScale { time, bus, factor } => StepEvent::new(time, EventKind::LoadScale { bus, factor }),
                EventConfig::Omega0Step { time, inverter, delta_hz } => {
                    StepEvent::new(time, EventKind::Omega0Step { inverter, delta: 2.0 * PI * delta_hz })
                }
                EventConfig::E0Step { time, inverter, delta_v } => {
                    StepEvent::new(time, EventKind::E0Step { inverter, delta: delta_v / root3 })
                }
                EventConfig::PowerTarget { time, inverter, quantity, fraction } => {
                    let quantity = match quantity {
                        Quantity::P => PowerQuantity::Real,
                        Quantity::Q => PowerQuantity::Reactive,
                    };
                    StepEvent::new(time, EventKind::PowerTarget { inverter, quantity, fraction })
                }
            })
            .collect()
    }

    pub fn scenario(&self, system: &DroopSystem<f64>, resolved: &ResolvedSystem<f64>) -> anyhow::Result<Scenario<f64>> {
        Ok(Scenario::from_resolved(
            system.network.clone(),
            resolved,
            self.events(),
            self.scenario.dt,
            self.scenario.duration,
        )?)
    }

    pub fn epll_a0(&self) -> f64 {
        self.epll.a0.unwrap_or(SQRT_2 * self.network.rated_voltage_ll)
    }

    pub fn epll_params(&self) -> anyhow::Result<EpllParams<f64>> {
        let p = design_gains(self.epll.zeta, self.epll.omega_n, self.epll_a0(), self.epll.k1)?;
        Ok(p.with_sample_rate(self.epll.sample_rate))
    }

    /// Applies command-line overrides to every inverter.
    pub fn override_gains(&mut self, kp: Option<f64>, kv: Option<f64>, omega_f: Option<f64>) {
        for inv in &mut self.inverters {
            inv.kp = kp.unwrap_or(inv.kp);
            inv.kv = kv.unwrap_or(inv.kv);
            inv.omega_f = omega_f.unwrap_or(inv.omega_f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "1",
        "network": {
            "rated_voltage_ll": 480,
            "lines": [{"from": 1, "to": 2, "r_ohm": 1.0, "x_ohm": 2.0}],
            "loads": [{"bus": 2, "p_w": 3000, "q_var": 900}]
        },
        "inverters": [
            {"kp": 1e-4, "kv": 1e-3, "omega_f": 50, "omega0_hz": 60.2, "e0_v": 490},
            {"kp": 1e-4, "kv": 1e-3, "omega_f": 50, "omega0_hz": 60.2, "e0_v": 490}
        ]
    }"#;

    #[test]
    fn minimal_document_uses_defaults() {
        let cfg = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.style().unwrap(), OperatingStyle::Setpoints);
        assert_eq!(cfg.scenario.dt, 1e-4);
        assert_eq!(cfg.options.q_convention, QConventionConfig::A);
        assert!((cfg.epll_a0() - 480.0 * SQRT_2).abs() < 1e-12);
        let sys = cfg.system().unwrap();
        assert!((sys.inverters[0].e_0 - 490.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((sys.inverters[0].omega_0 - 2.0 * PI * 60.2).abs() < 1e-12);
        let res = sys.resolve().unwrap();
        assert!(res.op.omega < sys.inverters[0].omega_0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = MINIMAL.replace("\"r_ohm\"", "\"resistance\": 1, \"r_ohm\"");
        let err = format!("{:#}", ScenarioConfig::from_json(&bad).unwrap_err());
        assert!(err.contains("resistance") && err.contains("line"), "{err}");
        let bad = MINIMAL.replace("\"schema\": \"1\",", "\"schema\": \"1\", \"extra\": true,");
        assert!(ScenarioConfig::from_json(&bad).is_err());
    }

    #[test]
    fn mixed_styles_are_rejected() {
        let bad = MINIMAL.replacen(
            "\"omega0_hz\": 60.2, \"e0_v\": 490",
            "\"power_va\": [1000, 200]",
            1,
        );
        let err = format!("{:#}", ScenarioConfig::from_json(&bad).unwrap_err());
        assert!(err.contains("inverters[1]"), "{err}");
        let half = MINIMAL.replacen(", \"e0_v\": 490", "", 1);
        assert!(ScenarioConfig::from_json(&half).is_err());
    }

    #[test]
    fn bad_schema_and_indices() {
        assert!(ScenarioConfig::from_json(&MINIMAL.replace("\"schema\": \"1\"", "\"schema\": \"2\"")).is_err());
        let err = format!(
            "{:#}",
            ScenarioConfig::from_json(&MINIMAL.replace("\"to\": 2", "\"to\": 3")).unwrap_err()
        );
        assert!(err.contains("network.lines[0]"), "{err}");
    }

    #[test]
    fn event_units_are_converted() {
        let doc = MINIMAL.replace(
            "\"inverters\"",
            r#""scenario": {"events": [
                {"kind": "omega0_step", "time": 0.1, "inverter": 1, "delta_hz": 0.5},
                {"kind": "e0_step", "time": 0.2, "inverter": 2, "delta_v": 3.0},
                {"kind": "power_target", "time": 0.3, "inverter": 2, "quantity": "p", "fraction": 0.1}
            ], "duration": 0.5},
            "inverters""#,
        );
        let cfg = ScenarioConfig::from_json(&doc).unwrap();
        let ev = cfg.events();
        assert_eq!(ev[0].kind, EventKind::Omega0Step { inverter: 1, delta: PI });
        assert_eq!(ev[1].kind, EventKind::E0Step { inverter: 2, delta: 3.0 / 3f64.sqrt() });
        assert!(matches!(ev[2].kind, EventKind::PowerTarget { quantity: PowerQuantity::Real, .. }));
        let bad = doc.replace("\"delta_hz\": 0.5", "\"delta_hz\": 0.5, \"oops\": 1");
        assert!(ScenarioConfig::from_json(&bad).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
