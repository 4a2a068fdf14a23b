//! Equivalent-circuit battery plant.
//!
//! Each assembled battery is a constant open-circuit voltage behind a series
//! resistance. Terminal power `u` (positive = discharge) maps to terminal
//! current through `(ocv - R*I) * I = u`, and the state of charge is
//! integrated by coulomb counting.

use serde::{Deserialize, Serialize};

use crate::error::BatteryError;

/// Battery technology class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryKind {
    /// High-capacity, slow battery driven by the filtered error.
    Energy,
    /// High-power, fast battery driven by the raw tracking error.
    Power,
}

impl BatteryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BatteryKind::Energy => "energy",
            BatteryKind::Power => "power",
        }
    }
}

/// How the state of charge is integrated from commanded power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocIntegration {
    /// Coulomb counting on the equivalent-circuit terminal current.
    #[default]
    TerminalCurrent,
    /// `u / ocv` as the current, ignoring resistive loss.
    RawPower,
}

/// Static plant parameters of one battery.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryParams {
    pub id: String,
    pub kind: BatteryKind,
    /// Open-circuit voltage [V].
    pub ocv: f64,
    /// Series resistance [Ω].
    pub internal_resistance: f64,
    /// Capacity [Ah].
    pub capacity: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Maximal discharge power [W], positive.
    pub max_discharge_power: f64,
    /// Maximal charge power [W], negative.
    pub max_charge_power: f64,
}

impl BatteryParams {
    /// Largest terminal power the circuit can deliver, `ocv² / 4R`.
    pub fn deliverable_power(&self) -> f64 {
        self.ocv * self.ocv / (4.0 * self.internal_resistance)
    }

    /// Checks the parameter invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.ocv > 0.0) {
            return Err(format!("ocv must be > 0 (got {})", self.ocv));
        }
        if !(self.internal_resistance > 0.0) {
            return Err(format!(
                "internal_resistance must be > 0 (got {})",
                self.internal_resistance
            ));
        }
        if !(self.capacity > 0.0) {
            return Err(format!("capacity must be > 0 (got {})", self.capacity));
        }
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(format!(
                "soc bounds must satisfy 0 <= soc_min < soc_max <= 1 (got {} / {})",
                self.soc_min, self.soc_max
            ));
        }
        if !(self.max_charge_power < 0.0 && self.max_discharge_power > 0.0) {
            return Err(format!(
                "power bounds must satisfy max_charge_power < 0 < max_discharge_power (got {} / {})",
                self.max_charge_power, self.max_discharge_power
            ));
        }
        if !(self.max_discharge_power < self.deliverable_power()) {
            return Err(format!(
                "max_discharge_power {} W exceeds deliverable power ocv²/4R = {} W",
                self.max_discharge_power,
                self.deliverable_power()
            ));
        }
        Ok(())
    }
}

/// Dynamic state of one battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState {
    pub soc: f64,
    pub attached: bool,
    /// Power currently held at the terminals [W].
    pub applied_power: f64,
}

impl BatteryState {
    pub fn new(soc: f64) -> Self {
        Self {
            soc,
            attached: true,
            applied_power: 0.0,
        }
    }
}

/// Terminal current [A] for terminal power `u` [W]; positive current discharges.
///
/// Returns the smaller-magnitude root of `R*I² - ocv*I + u = 0`, written as
/// `2u / (ocv + sqrt(ocv² - 4Ru))` so that small powers do not cancel.
pub fn power_to_current(params: &BatteryParams, u: f64) -> Result<f64, BatteryError> {
    let r = params.internal_resistance;
    let disc = params.ocv * params.ocv - 4.0 * r * u;
    if disc < 0.0 {
        return Err(BatteryError::InfeasiblePower {
            id: params.id.clone(),
            power: u,
            limit: params.deliverable_power(),
        });
    }
    Ok(2.0 * u / (params.ocv + disc.sqrt()))
}

fn current_for(params: &BatteryParams, u: f64, mode: SocIntegration) -> Result<f64, BatteryError> {
    match mode {
        SocIntegration::TerminalCurrent => power_to_current(params, u),
        SocIntegration::RawPower => Ok(u / params.ocv),
    }
}

/// SOC change over `dt` seconds at terminal power `u`, without clamping.
pub fn soc_delta(
    params: &BatteryParams,
    u: f64,
    dt: f64,
    mode: SocIntegration,
) -> Result<f64, BatteryError> {
    let current = current_for(params, u, mode)?;
    Ok(-current * dt / (3600.0 * params.capacity))
}

/// Forward-Euler coulomb counting step; the result is clamped to `[0, 1]`.
pub fn soc_step(
    params: &BatteryParams,
    state: &BatteryState,
    u: f64,
    dt: f64,
    mode: SocIntegration,
) -> Result<f64, BatteryError> {
    let delta = soc_delta(params, u, dt, mode)?;
    Ok((state.soc + delta).clamp(0.0, 1.0))
}

/// Protective limiter applied between the controller command and the terminals.
///
/// Cuts discharge at the SOC floor and charge at the SOC ceiling, then clamps to
/// the power ratings. A detached battery always yields zero.
pub fn protective_clamp(params: &BatteryParams, state: &BatteryState, u_request: f64) -> f64 {
    if !state.attached {
        return 0.0;
    }
    if (state.soc <= params.soc_min && u_request > 0.0)
        || (state.soc >= params.soc_max && u_request < 0.0)
    {
        return 0.0;
    }
    u_request.clamp(params.max_charge_power, params.max_discharge_power)
}
