//! Declarative experiment description, validation, and the built-in presets.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::battery::{BatteryKind, BatteryParams, SocIntegration};
use crate::decentralized::{GainMode, GainSchedule, SwitchingShape};
use crate::error::ConfigError;

/// Tolerance, in steps, when checking that a duration is a whole number of steps.
const STEP_ALIGN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    #[default]
    Decentralized,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Plant integration step [s].
    pub dt_sim: f64,
    /// Control period [s].
    pub dt_ctrl: f64,
    /// Transport delay on the broadcast signals [s].
    pub broadcast_delay: f64,
    /// Lag time constant for the energy-type path [s].
    pub t_f: f64,
    pub duration: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            dt_sim: 0.01,
            dt_ctrl: 0.1,
            broadcast_delay: 0.3,
            t_f: 10.0,
            duration: 0.0,
        }
    }
}

/// Gain bounds and switching knees shared by all batteries of one type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeControl {
    pub k_discharge_max: f64,
    pub k_charge_max: f64,
    pub phi_discharge_sat: f64,
    pub phi_charge_sat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default)]
    pub gain_mode: GainMode,
    #[serde(default)]
    pub anti_windup: bool,
    pub energy: TypeControl,
    pub power: TypeControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub id: String,
    pub kind: BatteryKind,
    pub ocv: f64,
    pub internal_resistance: f64,
    pub capacity: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub max_discharge_power: f64,
    pub max_charge_power: f64,
    pub initial_soc: f64,
}

impl BatterySpec {
    pub fn params(&self) -> BatteryParams {
        BatteryParams {
            id: self.id.clone(),
            kind: self.kind,
            ocv: self.ocv,
            internal_resistance: self.internal_resistance,
            capacity: self.capacity,
            soc_min: self.soc_min,
            soc_max: self.soc_max,
            max_discharge_power: self.max_discharge_power,
            max_charge_power: self.max_charge_power,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub value: f64,
}

/// Demand as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSpec {
    SquareWave {
        cycles: u32,
        lead: f64,
        phase: f64,
        amplitude: f64,
    },
    Segments {
        segments: Vec<Segment>,
    },
}

impl DemandSpec {
    pub fn profile(&self) -> DemandProfile {
        match *self {
            DemandSpec::SquareWave {
                cycles,
                lead,
                phase,
                amplitude,
            } => square_wave_demand(cycles, lead, phase, amplitude),
            DemandSpec::Segments { ref segments } => DemandProfile {
                segments: segments.clone(),
            },
        }
    }

    /// End times of each full square-wave cycle; empty for explicit segments.
    pub fn cycle_ends(&self) -> Vec<f64> {
        match *self {
            DemandSpec::SquareWave {
                cycles,
                lead,
                phase,
                ..
            } => (1..=cycles)
                .map(|c| lead + 2.0 * phase * f64::from(c))
                .collect(),
            DemandSpec::Segments { .. } => Vec::new(),
        }
    }
}

/// Piecewise-constant demand `r(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub segments: Vec<Segment>,
}

impl DemandProfile {
    pub fn value_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .take_while(|s| s.start <= t)
            .last()
            .map_or(0.0, |s| s.value)
    }

    /// Time at which the last segment begins.
    pub fn last_start(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.start)
    }
}

/// Zero for `lead` seconds, then `cycles` × (+amplitude for `phase`, −amplitude for `phase`).
///
/// The last phase extends indefinitely; the natural duration is
/// `lead + 2·phase·cycles`.
pub fn square_wave_demand(cycles: u32, lead: f64, phase: f64, amplitude: f64) -> DemandProfile {
    let mut segments = vec![Segment {
        start: 0.0,
        value: 0.0,
    }];
    for c in 0..cycles {
        let base = lead + 2.0 * phase * f64::from(c);
        segments.push(Segment {
            start: base,
            value: amplitude,
        });
        segments.push(Segment {
            start: base + phase,
            value: -amplitude,
        });
    }
    DemandProfile { segments }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEvent {
    pub battery: String,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedConfig {
    pub failure_detect_delay: f64,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        Self {
            failure_detect_delay: 300.0,
        }
    }
}

/// A complete, self-describing simulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mode: ControlMode,
    #[serde(default)]
    pub soc_integration: SocIntegration,
    pub timing: Timing,
    pub controller: ControllerConfig,
    pub demand: DemandSpec,
    pub batteries: Vec<BatterySpec>,
    #[serde(default)]
    pub failures: Vec<FailureEvent>,
    #[serde(default)]
    pub centralized: CentralizedConfig,
}

/// Integer step bookkeeping derived from a validated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPlan {
    /// Simulation steps per control period.
    pub ctrl_steps: usize,
    /// Simulation steps of broadcast delay.
    pub delay_steps: usize,
    /// Number of integration steps; the trace has `total_steps + 1` rows.
    pub total_steps: usize,
}

fn whole_steps(value: f64, dt: f64, path: &str) -> Result<usize, ConfigError> {
    let ratio = value / dt;
    let rounded = ratio.round();
    if !ratio.is_finite() || rounded < 0.0 || (ratio - rounded).abs() > STEP_ALIGN_TOL {
        return Err(ConfigError::new(
            path,
            format!("{value} is not an integer multiple of dt_sim = {dt}"),
        ));
    }
    Ok(rounded as usize)
}

fn type_control_check(tc: &TypeControl, path: &str) -> Result<(), ConfigError> {
    if !(tc.k_discharge_max > 0.0) {
        return Err(ConfigError::new(
            format!("{path}.k_discharge_max"),
            "must be > 0",
        ));
    }
    if !(tc.k_charge_max > 0.0) {
        return Err(ConfigError::new(
            format!("{path}.k_charge_max"),
            "must be > 0",
        ));
    }
    if !(tc.phi_discharge_sat > 0.0) {
        return Err(ConfigError::new(
            format!("{path}.phi_discharge_sat"),
            "must be > 0",
        ));
    }
    if !(tc.phi_charge_sat < 0.0) {
        return Err(ConfigError::new(
            format!("{path}.phi_charge_sat"),
            "must be < 0",
        ));
    }
    Ok(())
}

impl Scenario {
    /// Checks every invariant and derives the step plan.
    pub fn plan(&self) -> Result<StepPlan, ConfigError> {
        let t = &self.timing;
        if !(t.dt_sim > 0.0) {
            return Err(ConfigError::new("timing.dt_sim", "must be > 0"));
        }
        if !(t.t_f > 0.0) {
            return Err(ConfigError::new("timing.t_f", "must be > 0"));
        }
        if !(t.duration > 0.0) {
            return Err(ConfigError::new("timing.duration", "must be > 0"));
        }
        let ctrl_steps = whole_steps(t.dt_ctrl, t.dt_sim, "timing.dt_ctrl")?;
        if ctrl_steps == 0 {
            return Err(ConfigError::new("timing.dt_ctrl", "must be > 0"));
        }
        let delay_steps = whole_steps(t.broadcast_delay, t.dt_sim, "timing.broadcast_delay")?;
        let total_steps = whole_steps(t.duration, t.dt_sim, "timing.duration")?;

        type_control_check(&self.controller.energy, "controller.energy")?;
        type_control_check(&self.controller.power, "controller.power")?;

        if self.batteries.is_empty() {
            return Err(ConfigError::new(
                "batteries",
                "at least one battery is required",
            ));
        }
        let mut ids = BTreeSet::new();
        for (i, b) in self.batteries.iter().enumerate() {
            let path = format!("batteries[{i}]");
            if b.id.is_empty() {
                return Err(ConfigError::new(format!("{path}.id"), "must not be empty"));
            }
            if !ids.insert(b.id.as_str()) {
                return Err(ConfigError::new(
                    format!("{path}.id"),
                    format!("duplicate id {}", b.id),
                ));
            }
            b.params()
                .validate()
                .map_err(|reason| ConfigError::new(path.clone(), reason))?;
            if !(0.0..=1.0).contains(&b.initial_soc) {
                return Err(ConfigError::new(
                    format!("{path}.initial_soc"),
                    "must lie in [0, 1]",
                ));
            }
        }

        match &self.demand {
            DemandSpec::SquareWave { lead, phase, .. } => {
                if !(*lead >= 0.0) {
                    return Err(ConfigError::new("demand.lead", "must be >= 0"));
                }
                if !(*phase > 0.0) {
                    return Err(ConfigError::new("demand.phase", "must be > 0"));
                }
            }
            DemandSpec::Segments { segments } => {
                if segments.first().map(|s| s.start) != Some(0.0) {
                    return Err(ConfigError::new(
                        "demand.segments",
                        "first segment must start at 0",
                    ));
                }
                for (i, w) in segments.windows(2).enumerate() {
                    if !(w[1].start > w[0].start) {
                        return Err(ConfigError::new(
                            format!("demand.segments[{}].start", i + 1),
                            "segment starts must be strictly increasing",
                        ));
                    }
                }
            }
        }
        for (i, s) in self.demand.profile().segments.iter().enumerate() {
            whole_steps(s.start, t.dt_sim, &format!("demand.segments[{i}].start"))?;
            if !s.value.is_finite() {
                return Err(ConfigError::new(
                    format!("demand.segments[{i}].value"),
                    "must be finite",
                ));
            }
        }

        for (i, f) in self.failures.iter().enumerate() {
            let path = format!("failures[{i}]");
            if !ids.contains(f.battery.as_str()) {
                return Err(ConfigError::new(
                    format!("{path}.battery"),
                    format!("unknown battery {}", f.battery),
                ));
            }
            if !(f.time >= 0.0) {
                return Err(ConfigError::new(format!("{path}.time"), "must be >= 0"));
            }
            whole_steps(f.time, t.dt_sim, &format!("{path}.time"))?;
        }
        if !(self.centralized.failure_detect_delay >= 0.0) {
            return Err(ConfigError::new(
                "centralized.failure_detect_delay",
                "must be >= 0",
            ));
        }

        Ok(StepPlan {
            ctrl_steps,
            delay_steps,
            total_steps,
        })
    }

    pub fn type_control(&self, kind: BatteryKind) -> &TypeControl {
        match kind {
            BatteryKind::Energy => &self.controller.energy,
            BatteryKind::Power => &self.controller.power,
        }
    }

    pub fn shape_for(&self, spec: &BatterySpec) -> SwitchingShape {
        let tc = self.type_control(spec.kind);
        SwitchingShape {
            phi_discharge_sat: tc.phi_discharge_sat,
            phi_charge_sat: tc.phi_charge_sat,
            u_discharge_max: spec.max_discharge_power,
            u_charge_max: spec.max_charge_power,
        }
    }

    pub fn gains_for(&self, spec: &BatterySpec) -> GainSchedule {
        let tc = self.type_control(spec.kind);
        GainSchedule {
            k_discharge_max: tc.k_discharge_max,
            k_charge_max: tc.k_charge_max,
            soc_min: spec.soc_min,
            soc_max: spec.soc_max,
            mode: self.controller.gain_mode,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let scenario: Scenario = toml::from_str(text)
            .map_err(|e| ConfigError::new("<document>", e.message().to_string()))?;
        scenario.plan()?;
        Ok(scenario)
    }
}

/// Built-in experiments on the reference ten-battery bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperTracking,
    PaperFailure,
    PaperEqualization,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::PaperTracking,
        Preset::PaperFailure,
        Preset::PaperEqualization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperTracking => "paper_tracking",
            Preset::PaperFailure => "paper_failure",
            Preset::PaperEqualization => "paper_equalization",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ConfigError::new("preset", format!("unknown preset {s}")))
    }
}

fn bank() -> Vec<BatterySpec> {
    let energy_socs = [0.7, 0.6, 0.5, 0.4, 0.3];
    let power_socs = [0.7, 0.65, 0.6, 0.55, 0.5];
    let energy = energy_socs.iter().enumerate().map(|(i, &soc)| BatterySpec {
        id: format!("E{}", i + 1),
        kind: BatteryKind::Energy,
        ocv: 80.0,
        internal_resistance: 0.1,
        capacity: 15.0,
        soc_min: 0.2,
        soc_max: 0.8,
        max_discharge_power: 750.0,
        max_charge_power: -750.0,
        initial_soc: soc,
    });
    let power = power_socs.iter().enumerate().map(|(j, &soc)| BatterySpec {
        id: format!("P{}", j + 1),
        kind: BatteryKind::Power,
        ocv: 80.0,
        internal_resistance: 0.5,
        capacity: 4.0,
        soc_min: 0.2,
        soc_max: 0.8,
        max_discharge_power: 3000.0,
        max_charge_power: -3000.0,
        initial_soc: soc,
    });
    energy.chain(power).collect()
}

/// Builds a preset scenario in decentralized mode.
pub fn preset(which: Preset) -> Scenario {
    let cycles = match which {
        Preset::PaperEqualization => 4,
        _ => 1,
    };
    let demand = DemandSpec::SquareWave {
        cycles,
        lead: 60.0,
        phase: 1200.0,
        amplitude: 3000.0,
    };
    let duration = 60.0 + 2400.0 * f64::from(cycles);
    let failures = match which {
        Preset::PaperFailure => vec![
            FailureEvent {
                battery: "E2".into(),
                time: 660.0,
            },
            FailureEvent {
                battery: "E4".into(),
                time: 1860.0,
            },
        ],
        _ => Vec::new(),
    };
    let gain_mode = match which {
        Preset::PaperEqualization => GainMode::SocVariable,
        _ => GainMode::Fixed,
    };
    Scenario {
        name: which.name().to_string(),
        mode: ControlMode::Decentralized,
        soc_integration: SocIntegration::TerminalCurrent,
        timing: Timing {
            duration,
            ..Timing::default()
        },
        controller: ControllerConfig {
            gain_mode,
            anti_windup: false,
            energy: TypeControl {
                k_discharge_max: 3e-7,
                k_charge_max: 3e-7,
                phi_discharge_sat: 1.0,
                phi_charge_sat: -1.0,
            },
            power: TypeControl {
                k_discharge_max: 1e-6,
                k_charge_max: 1e-6,
                phi_discharge_sat: 1.0,
                phi_charge_sat: -1.0,
            },
        },
        demand,
        batteries: bank(),
        failures,
        centralized: CentralizedConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_wave_single_cycle() {
        let p = square_wave_demand(1, 60.0, 1200.0, 3000.0);
        let starts: Vec<(f64, f64)> = p.segments.iter().map(|s| (s.start, s.value)).collect();
        assert_eq!(starts, vec![(0.0, 0.0), (60.0, 3000.0), (1260.0, -3000.0)]);
        assert_eq!(p.value_at(59.99), 0.0);
        assert_eq!(p.value_at(60.0), 3000.0);
        assert_eq!(p.value_at(2460.0), -3000.0);
        assert_eq!(preset(Preset::PaperTracking).timing.duration, 2460.0);
    }

    #[test]
    fn square_wave_zero_cycles_is_flat() {
        let p = square_wave_demand(0, 60.0, 1200.0, 3000.0);
        assert_eq!(p.segments.len(), 1);
        assert_eq!(p.value_at(1e6), 0.0);
    }

    #[test]
    fn square_wave_four_cycles() {
        let p = square_wave_demand(4, 60.0, 1200.0, 3000.0);
        assert_eq!(p.segments.len(), 9);
        let active = &p.segments[1..];
        for (i, s) in active.iter().enumerate() {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(s.value, sign * 3000.0);
            assert_eq!(s.start, 60.0 + 1200.0 * i as f64);
        }
        assert_eq!(p.last_start(), 8460.0);
        assert_eq!(preset(Preset::PaperEqualization).timing.duration, 9660.0);
    }

    #[test]
    fn presets_are_valid() {
        for p in Preset::ALL {
            let s = preset(p);
            let plan = s.plan().unwrap();
            assert_eq!(plan.ctrl_steps, 10);
            assert_eq!(plan.delay_steps, 30);
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        let f = preset(Preset::PaperFailure);
        assert_eq!(f.failures.len(), 2);
        assert_eq!(
            preset(Preset::PaperEqualization).controller.gain_mode,
            GainMode::SocVariable
        );
    }

    #[test]
    fn misaligned_control_period_is_rejected() {
        let mut s = preset(Preset::PaperTracking);
        s.timing.dt_sim = 0.04;
        let err = s.plan().unwrap_err();
        assert_eq!(err.path, "timing.dt_ctrl");
    }

    #[test]
    fn toml_round_trip() {
        for p in Preset::ALL {
            let s = preset(p);
            let back = Scenario::from_toml(&s.to_toml()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = preset(Preset::PaperTracking)
            .to_toml()
            .replace("anti_windup", "anti_wind");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn missing_capacity_is_rejected() {
        let text = preset(Preset::PaperTracking)
            .to_toml()
            .replacen("capacity = 15.0\n", "", 1);
        let err = Scenario::from_toml(&text).unwrap_err();
        assert!(err.reason.contains("capacity"), "{err}");
    }

    #[test]
    fn invalid_values_name_their_field() {
        let mut s = preset(Preset::PaperTracking);
        s.batteries[6].max_discharge_power = 3500.0;
        assert_eq!(s.plan().unwrap_err().path, "batteries[6]");

        let mut s = preset(Preset::PaperTracking);
        s.failures.push(FailureEvent {
            battery: "E9".into(),
            time: 10.0,
        });
        assert_eq!(s.plan().unwrap_err().path, "failures[0].battery");

        let mut s = preset(Preset::PaperTracking);
        s.batteries[1].id = "E1".into();
        assert_eq!(s.plan().unwrap_err().path, "batteries[1].id");

        let mut s = preset(Preset::PaperTracking);
        s.demand = DemandSpec::Segments {
            segments: vec![
                Segment {
                    start: 0.0,
                    value: 0.0,
                },
                Segment {
                    start: 0.0,
                    value: 1.0,
                },
            ],
        };
        assert_eq!(s.plan().unwrap_err().path, "demand.segments[1].start");
    }
}
