//! Fixed-timestep executor.
//!
//! Each simulation step runs, in order: due failure events, grid measurement of
//! the held powers, broadcast push, control update (on control ticks only),
//! protective clamping into applied powers, trace append, and SOC integration.

use std::collections::{BTreeMap, BTreeSet};

use crate::battery::{protective_clamp, soc_delta, BatteryKind, BatteryParams, BatteryState};
use crate::centralized::{
    allocate_energy, allocate_power, failure_monitor, r_e_step, CentralizedState,
};
use crate::decentralized::{
    energy_ctrl_step, power_ctrl_step, Controller, EnergyCtrlState, PowerCtrlState,
};
use crate::error::SimError;
use crate::grid_bus::{measure, AttachmentRegistry, BroadcastBus, BroadcastSample};
use crate::scenario::{ControlMode, Scenario, StepPlan};

/// Column-oriented record of one run, one row per simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub battery_ids: Vec<String>,
    pub kinds: Vec<BatteryKind>,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub y_e: Vec<f64>,
    pub y_p: Vec<f64>,
    pub e: Vec<f64>,
    /// Filtered error held by the energy-type controllers (zero in centralized mode).
    pub e_e: Vec<f64>,
    /// Applied power per battery, indexed `[battery][row]`.
    pub u: Vec<Vec<f64>>,
    pub soc: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub attached: Vec<Vec<bool>>,
}

impl SimTrace {
    fn with_capacity(ids: Vec<String>, kinds: Vec<BatteryKind>, rows: usize) -> Self {
        let n = ids.len();
        let col = || Vec::with_capacity(rows);
        Self {
            battery_ids: ids,
            kinds,
            t: col(),
            r: col(),
            y: col(),
            y_e: col(),
            y_p: col(),
            e: col(),
            e_e: col(),
            u: (0..n).map(|_| col()).collect(),
            soc: (0..n).map(|_| col()).collect(),
            phi: (0..n).map(|_| col()).collect(),
            attached: (0..n).map(|_| Vec::with_capacity(rows)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn battery_index(&self, id: &str) -> Option<usize> {
        self.battery_ids.iter().position(|b| b == id)
    }

    /// Indices of batteries of the given kind.
    pub fn of_kind(&self, kind: BatteryKind) -> Vec<usize> {
        (0..self.kinds.len())
            .filter(|&i| self.kinds[i] == kind)
            .collect()
    }

    /// Row index closest to time `t`.
    pub fn row_at(&self, t: f64) -> usize {
        match self.t.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.t.len() => self.t.len() - 1,
            Err(i) => {
                if (self.t[i] - t).abs() < (t - self.t[i - 1]).abs() {
                    i
                } else {
                    i - 1
                }
            }
        }
    }
}

struct Plant {
    params: Vec<BatteryParams>,
    states: Vec<BatteryState>,
}

fn demand_steps(scenario: &Scenario) -> Vec<(usize, f64)> {
    let dt = scenario.timing.dt_sim;
    scenario
        .demand
        .profile()
        .segments
        .iter()
        .map(|s| ((s.start / dt).round() as usize, s.value))
        .collect()
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<SimTrace, SimError> {
    let plan = scenario.plan()?;
    Engine::new(scenario, plan).run()
}

struct Engine<'a> {
    scenario: &'a Scenario,
    plan: StepPlan,
    plant: Plant,
    controllers: Vec<Controller>,
    registry: AttachmentRegistry,
    bus: BroadcastBus,
    central: CentralizedState,
    /// Controller output or centralized reference, zero-order held.
    commands: Vec<f64>,
    applied: Vec<f64>,
    demand: Vec<(usize, f64)>,
    failures: Vec<(usize, usize)>,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, plan: StepPlan) -> Self {
        let dt = scenario.timing.dt_sim;
        let params: Vec<BatteryParams> = scenario.batteries.iter().map(|b| b.params()).collect();
        let states = scenario
            .batteries
            .iter()
            .map(|b| BatteryState::new(b.initial_soc))
            .collect();
        let anti_windup = scenario.controller.anti_windup;
        let controllers = scenario
            .batteries
            .iter()
            .map(|b| {
                let gains = scenario.gains_for(b);
                let shape = scenario.shape_for(b);
                match b.kind {
                    BatteryKind::Energy => {
                        Controller::Energy(EnergyCtrlState::new(gains, shape, anti_windup))
                    }
                    BatteryKind::Power => {
                        Controller::Power(PowerCtrlState::new(gains, shape, anti_windup))
                    }
                }
            })
            .collect();
        let n = params.len();
        let initial_socs: BTreeMap<String, f64> = scenario
            .batteries
            .iter()
            .map(|b| (b.id.clone(), b.initial_soc))
            .collect();
        let mut failures: Vec<(usize, usize)> = scenario
            .failures
            .iter()
            .map(|f| {
                let idx = params
                    .iter()
                    .position(|p| p.id == f.battery)
                    .expect("validated id");
                ((f.time / dt).round() as usize, idx)
            })
            .collect();
        failures.sort_unstable();
        Self {
            scenario,
            plan,
            plant: Plant { params, states },
            controllers,
            registry: AttachmentRegistry::all_attached(n),
            bus: BroadcastBus::new(plan.delay_steps, plan.ctrl_steps),
            central: CentralizedState::new(initial_socs, scenario.centralized.failure_detect_delay),
            commands: vec![0.0; n],
            applied: vec![0.0; n],
            demand: demand_steps(scenario),
            failures,
        }
    }

    fn demand_at(&self, step: usize) -> f64 {
        self.demand
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map_or(0.0, |&(_, v)| v)
    }

    fn kinds(&self) -> Vec<BatteryKind> {
        self.plant.params.iter().map(|p| p.kind).collect()
    }

    fn run(mut self) -> Result<SimTrace, SimError> {
        let dt = self.scenario.timing.dt_sim;
        let kinds = self.kinds();
        let ids = self.plant.params.iter().map(|p| p.id.clone()).collect();
        let mut trace = SimTrace::with_capacity(ids, kinds.clone(), self.plan.total_steps + 1);
        let mut next_failure = 0;

        for step in 0..=self.plan.total_steps {
            let t = step as f64 * dt;
            let r = self.demand_at(step);

            while next_failure < self.failures.len() && self.failures[next_failure].0 <= step {
                let idx = self.failures[next_failure].1;
                self.registry.detach(idx, step);
                self.plant.states[idx].attached = false;
                self.plant.states[idx].applied_power = 0.0;
                self.applied[idx] = 0.0;
                next_failure += 1;
            }

            let held = measure(&self.applied, &kinds, &self.registry);
            self.bus.push(BroadcastSample {
                r_minus_ye: r - held.y_e,
                r_minus_y: r - held.y,
            });
            let broadcast = self.bus.broadcast_sample(step);

            if self.bus.is_control_tick(step) {
                match self.scenario.mode {
                    ControlMode::Decentralized => self.decentralized_tick(broadcast),
                    ControlMode::Centralized => self.centralized_tick(t, r),
                }
            }

            for i in 0..self.applied.len() {
                let u = protective_clamp(
                    &self.plant.params[i],
                    &self.plant.states[i],
                    self.commands[i],
                );
                self.applied[i] = u;
                self.plant.states[i].applied_power = u;
            }

            let m = measure(&self.applied, &kinds, &self.registry);
            trace.t.push(t);
            trace.r.push(r);
            trace.y.push(m.y);
            trace.y_e.push(m.y_e);
            trace.y_p.push(m.y_p);
            trace.e.push(r - m.y);
            trace.e_e.push(self.shared_filtered_error());
            for i in 0..self.applied.len() {
                trace.u[i].push(self.applied[i]);
                trace.soc[i].push(self.plant.states[i].soc);
                trace.phi[i].push(self.controllers[i].phi());
                trace.attached[i].push(self.registry.is_attached(i));
            }

            if step < self.plan.total_steps {
                self.integrate(dt, step)?;
            }
        }
        Ok(trace)
    }

    /// Filtered error of the first attached energy controller.
    fn shared_filtered_error(&self) -> f64 {
        self.controllers
            .iter()
            .enumerate()
            .find_map(|(i, c)| match c {
                Controller::Energy(s) if self.registry.is_attached(i) => Some(s.e_filtered),
                _ => None,
            })
            .unwrap_or(0.0)
    }

    fn decentralized_tick(&mut self, broadcast: BroadcastSample) {
        let t_f = self.scenario.timing.t_f;
        let dt_ctrl = self.scenario.timing.dt_ctrl;
        for (i, ctrl) in self.controllers.iter_mut().enumerate() {
            if !self.registry.is_attached(i) {
                continue;
            }
            let soc = self.plant.states[i].soc;
            let (next, u) = match ctrl {
                Controller::Energy(s) => {
                    let (n, u) = energy_ctrl_step(s, broadcast.r_minus_ye, soc, t_f, dt_ctrl);
                    (Controller::Energy(n), u)
                }
                Controller::Power(s) => {
                    let (n, u) = power_ctrl_step(s, broadcast.r_minus_y, soc, dt_ctrl);
                    (Controller::Power(n), u)
                }
            };
            *ctrl = next;
            self.commands[i] = u;
        }
    }

    fn centralized_tick(&mut self, t: f64, r: f64) {
        let timing = &self.scenario.timing;
        let params = &self.plant.params;
        for (p, s) in params.iter().zip(&self.plant.states) {
            if s.attached {
                self.central.report_soc(&p.id, s.soc);
            }
        }
        let commanded: BTreeMap<String, f64> = params
            .iter()
            .zip(&self.commands)
            .map(|(p, &c)| (p.id.clone(), c))
            .collect();
        let measured: BTreeMap<String, f64> = params
            .iter()
            .zip(&self.applied)
            .map(|(p, &u)| (p.id.clone(), u))
            .collect();
        let excluded: BTreeSet<String> = failure_monitor(
            t,
            &commanded,
            &measured,
            &mut self.central,
            0.5 * timing.dt_sim,
        );

        let r_e = r_e_step(&mut self.central, r, timing.dt_ctrl, timing.t_f);
        for (kind, demand) in [(BatteryKind::Energy, r_e), (BatteryKind::Power, r - r_e)] {
            let idx: Vec<usize> = (0..params.len())
                .filter(|&i| params[i].kind == kind)
                .collect();
            let group: Vec<BatteryParams> = idx.iter().map(|&i| params[i].clone()).collect();
            let socs: Vec<f64> = group
                .iter()
                .map(|p| self.central.known_socs[&p.id])
                .collect();
            let refs = match kind {
                BatteryKind::Energy => allocate_energy(&socs, &group, demand, &excluded),
                BatteryKind::Power => allocate_power(&socs, &group, demand, &excluded),
            };
            for (&i, u) in idx.iter().zip(refs) {
                self.commands[i] = u;
            }
        }
    }

    fn integrate(&mut self, dt: f64, step: usize) -> Result<(), SimError> {
        let mode = self.scenario.soc_integration;
        for (p, s) in self.plant.params.iter().zip(self.plant.states.iter_mut()) {
            if !s.attached {
                continue;
            }
            let delta = soc_delta(p, s.applied_power, dt, mode)
                .map_err(|source| SimError::Infeasible { step, source })?;
            s.soc = (s.soc + delta).clamp(0.0, 1.0);
        }
        Ok(())
    }
}
