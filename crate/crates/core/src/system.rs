//! A complete droop-controlled system: network, one inverter per bus, and
//! the rule that fixes its operating point.

use nalgebra::Complex;

use crate::equilibrium::{
    power_flow, solve_droop_equilibrium, with_implied_setpoints, InverterParams, OperatingPoint,
    QConvention,
};
use crate::error::{Error, Result};
use crate::network::{BusAdmittanceMatrix, NetworkModel};
use crate::scalar::Real;
use crate::smallsignal::SmallSignalModel;

#[derive(Debug, Clone, PartialEq)]
pub enum EquilibriumSpec<T> {
    /// Per-phase injections resolved by power flow at a fixed frequency.
    /// Inverter setpoints are then implied by the droop laws, so the
    /// operating point does not move when droop gains change.
    PowerInjections { injections: Vec<Complex<T>>, omega: T, v_guess: T },
    /// Setpoints carried by the inverters; the droop equilibrium is solved.
    Setpoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroopSystem<T: Real> {
    pub network: NetworkModel<T>,
    pub inverters: Vec<InverterParams<T>>,
    pub equilibrium: EquilibriumSpec<T>,
    pub q_convention: QConvention,
}

/// An operating point together with the inverter setpoints that make it an
/// equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSystem<T: Real> {
    pub ybus: BusAdmittanceMatrix<T>,
    pub op: OperatingPoint<T>,
    pub inverters: Vec<InverterParams<T>>,
    /// Power-flow mismatch relative to the injections, when a power flow was run.
    pub power_flow_residual: Option<T>,
}

impl<T: Real> DroopSystem<T> {
    pub fn new(
        network: NetworkModel<T>,
        inverters: Vec<InverterParams<T>>,
        equilibrium: EquilibriumSpec<T>,
        q_convention: QConvention,
    ) -> Result<Self> {
        if inverters.len() != network.n() {
            return Err(Error::Dimension(format!(
                "{} inverters for {} buses",
                inverters.len(),
                network.n()
            )));
        }
        if let EquilibriumSpec::PowerInjections { injections, .. } = &equilibrium {
            if injections.len() != network.n() {
                return Err(Error::Dimension(format!(
                    "{} injections for {} buses",
                    injections.len(),
                    network.n()
                )));
            }
        }
        Ok(Self { network, inverters, equilibrium, q_convention })
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    pub fn resolve(&self) -> Result<ResolvedSystem<T>> {
        let ybus = self.network.ybus();
        match &self.equilibrium {
            EquilibriumSpec::PowerInjections { injections, omega, v_guess } => {
                let pf = power_flow(&ybus, injections, *v_guess, self.q_convention)?;
                let op = OperatingPoint::from_voltages(&ybus, &pf.voltages, *omega, self.q_convention)?;
                let inverters = with_implied_setpoints(&op, &self.inverters);
                Ok(ResolvedSystem { ybus, op, inverters, power_flow_residual: Some(pf.relative_residual) })
            }
            EquilibriumSpec::Setpoints => {
                let op = solve_droop_equilibrium(&ybus, &self.inverters, self.q_convention)?;
                Ok(ResolvedSystem { ybus, op, inverters: self.inverters.clone(), power_flow_residual: None })
            }
        }
    }

    /// Copy with the given gains applied to every inverter; `None` keeps the
    /// current value.
    pub fn with_gains(&self, kp: Option<T>, kv: Option<T>, omega_f: Option<T>) -> Self {
        let mut out = self.clone();
        for inv in &mut out.inverters {
            inv.kp = kp.unwrap_or(inv.kp);
            inv.kv = kv.unwrap_or(inv.kv);
            inv.omega_f = omega_f.unwrap_or(inv.omega_f);
        }
        out
    }

    pub fn with_convention(&self, q_convention: QConvention) -> Self {
        Self { q_convention, ..self.clone() }
    }

    /// Resolves the operating point and assembles the linearized model there.
    pub fn small_signal(&self) -> Result<(SmallSignalModel<T>, ResolvedSystem<T>)> {
        let resolved = self.resolve()?;
        let model = SmallSignalModel::build(&resolved.ybus, &resolved.op, &resolved.inverters)?;
        Ok((model, resolved))
    }
}
