//! Per-battery decentralized controllers.
//!
//! Every battery integrates one broadcast error signal through a SOC-dependent
//! gain and maps the integrator state to power with a saturating
//! piecewise-linear switching function. Energy-type batteries first pass the
//! broadcast `r - y_E` through a local first-order lag; power-type batteries use
//! `r - y` directly. Controllers never read each other's state.

use serde::{Deserialize, Serialize};

/// Below this magnitude the integrator state carries no direction.
const PHI_DIRECTION_EPS: f64 = 1e-9;

/// Piecewise-linear saturating map from integrator state to power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingShape {
    /// Integrator state at which discharge saturates (> 0).
    pub phi_discharge_sat: f64,
    /// Integrator state at which charge saturates (< 0).
    pub phi_charge_sat: f64,
    /// Saturated discharge power [W] (> 0).
    pub u_discharge_max: f64,
    /// Saturated charge power [W] (< 0).
    pub u_charge_max: f64,
}

impl SwitchingShape {
    /// Slope on the discharge segment [W per unit state].
    pub fn discharge_slope(&self) -> f64 {
        self.u_discharge_max / self.phi_discharge_sat
    }

    /// Slope on the charge segment [W per unit state].
    pub fn charge_slope(&self) -> f64 {
        self.u_charge_max / self.phi_charge_sat
    }

    /// Integrator state `φ*` with `σ(φ*) = u`, or `None` when `u` is outside
    /// the output range. Saturated outputs return the saturation knee.
    pub fn inverse(&self, u: f64) -> Option<f64> {
        if u > self.u_discharge_max || u < self.u_charge_max {
            None
        } else if u > 0.0 {
            Some(u / self.discharge_slope())
        } else if u < 0.0 {
            Some(u / self.charge_slope())
        } else {
            Some(0.0)
        }
    }
}

/// Switching function `σ`.
pub fn sigma(shape: &SwitchingShape, phi: f64) -> f64 {
    if phi >= shape.phi_discharge_sat {
        shape.u_discharge_max
    } else if phi > 0.0 {
        shape.discharge_slope() * phi
    } else if phi <= shape.phi_charge_sat {
        shape.u_charge_max
    } else {
        shape.charge_slope() * phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// The upper bounds are used as constant gains.
    #[default]
    Fixed,
    /// Gains scale linearly with the SOC headroom in the demanded direction.
    SocVariable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Discharge,
    Charge,
}

impl Direction {
    /// Direction from the integrator state, falling back to the error sign.
    pub fn infer(phi: f64, error: f64) -> Self {
        if phi.abs() > PHI_DIRECTION_EPS {
            if phi > 0.0 {
                Direction::Discharge
            } else {
                Direction::Charge
            }
        } else if error < 0.0 {
            Direction::Charge
        } else {
            Direction::Discharge
        }
    }
}

/// Integrator gain schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSchedule {
    pub k_discharge_max: f64,
    pub k_charge_max: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub mode: GainMode,
}

/// Integrator gain for the given SOC and demand direction.
pub fn gain(schedule: &GainSchedule, soc: f64, direction: Direction) -> f64 {
    let span = schedule.soc_max - schedule.soc_min;
    match (schedule.mode, direction) {
        (GainMode::Fixed, Direction::Discharge) => schedule.k_discharge_max,
        (GainMode::Fixed, Direction::Charge) => schedule.k_charge_max,
        (GainMode::SocVariable, Direction::Discharge) => {
            schedule.k_discharge_max * ((soc - schedule.soc_min) / span).clamp(0.0, 1.0)
        }
        (GainMode::SocVariable, Direction::Charge) => {
            schedule.k_charge_max * ((schedule.soc_max - soc) / span).clamp(0.0, 1.0)
        }
    }
}

/// Exact zero-order-hold step of `t_f·ė + e = input`.
pub fn filtered_error_step(e_prev: f64, input: f64, dt: f64, t_f: f64) -> f64 {
    let alpha = (-dt / t_f).exp();
    alpha * e_prev + (1.0 - alpha) * input
}

fn integrate(
    phi: f64,
    error: f64,
    soc: f64,
    gains: &GainSchedule,
    shape: &SwitchingShape,
    dt_ctrl: f64,
    anti_windup: bool,
) -> f64 {
    let k = gain(gains, soc, Direction::infer(phi, error));
    let next = phi + k * error * dt_ctrl;
    if anti_windup {
        next.clamp(shape.phi_charge_sat, shape.phi_discharge_sat)
    } else {
        next
    }
}

/// Energy-type controller: local lag filter plus integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCtrlState {
    pub phi: f64,
    pub e_filtered: f64,
    pub gains: GainSchedule,
    pub shape: SwitchingShape,
    pub anti_windup: bool,
}

impl EnergyCtrlState {
    pub fn new(gains: GainSchedule, shape: SwitchingShape, anti_windup: bool) -> Self {
        Self {
            phi: 0.0,
            e_filtered: 0.0,
            gains,
            shape,
            anti_windup,
        }
    }
}

/// Advances an energy-type controller by one control period.
///
/// `soc` is the battery's own state of charge, read locally.
pub fn energy_ctrl_step(
    state: &EnergyCtrlState,
    broadcast_r_minus_ye: f64,
    soc: f64,
    t_f: f64,
    dt_ctrl: f64,
) -> (EnergyCtrlState, f64) {
    let e_filtered = filtered_error_step(state.e_filtered, broadcast_r_minus_ye, dt_ctrl, t_f);
    let phi = integrate(
        state.phi,
        e_filtered,
        soc,
        &state.gains,
        &state.shape,
        dt_ctrl,
        state.anti_windup,
    );
    let next = EnergyCtrlState {
        phi,
        e_filtered,
        ..state.clone()
    };
    (next, sigma(&state.shape, phi))
}

/// Power-type controller: integrator on the raw broadcast error.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCtrlState {
    pub phi: f64,
    pub gains: GainSchedule,
    pub shape: SwitchingShape,
    pub anti_windup: bool,
}

impl PowerCtrlState {
    pub fn new(gains: GainSchedule, shape: SwitchingShape, anti_windup: bool) -> Self {
        Self {
            phi: 0.0,
            gains,
            shape,
            anti_windup,
        }
    }
}

/// Advances a power-type controller by one control period.
pub fn power_ctrl_step(
    state: &PowerCtrlState,
    broadcast_r_minus_y: f64,
    soc: f64,
    dt_ctrl: f64,
) -> (PowerCtrlState, f64) {
    let phi = integrate(
        state.phi,
        broadcast_r_minus_y,
        soc,
        &state.gains,
        &state.shape,
        dt_ctrl,
        state.anti_windup,
    );
    let next = PowerCtrlState {
        phi,
        ..state.clone()
    };
    (next, sigma(&state.shape, phi))
}

/// Either controller type, as held by the simulation engine per battery.
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Energy(EnergyCtrlState),
    Power(PowerCtrlState),
}

impl Controller {
    pub fn phi(&self) -> f64 {
        match self {
            Controller::Energy(s) => s.phi,
            Controller::Power(s) => s.phi,
        }
    }

    pub fn shape(&self) -> &SwitchingShape {
        match self {
            Controller::Energy(s) => &s.shape,
            Controller::Power(s) => &s.shape,
        }
    }
}
