//! Grid-side measurement and the two broadcast channels.
//!
//! The grid sums attached battery powers, records `r - y_E` and `r - y` at
//! simulation resolution, and hands controllers the values from `delay` seconds
//! earlier, held constant between control ticks.

use std::collections::VecDeque;

use crate::battery::BatteryKind;

/// Attachment flags per battery with the step index of the last change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachmentRegistry {
    attached: Vec<bool>,
    changed_at: Vec<Option<usize>>,
}

impl AttachmentRegistry {
    pub fn all_attached(n: usize) -> Self {
        Self {
            attached: vec![true; n],
            changed_at: vec![None; n],
        }
    }

    pub fn is_attached(&self, index: usize) -> bool {
        self.attached[index]
    }

    pub fn changed_at(&self, index: usize) -> Option<usize> {
        self.changed_at[index]
    }

    pub fn attach(&mut self, index: usize, step: usize) {
        if !self.attached[index] {
            self.attached[index] = true;
            self.changed_at[index] = Some(step);
        }
    }

    pub fn detach(&mut self, index: usize, step: usize) {
        if self.attached[index] {
            self.attached[index] = false;
            self.changed_at[index] = Some(step);
        }
    }

    pub fn flags(&self) -> &[bool] {
        &self.attached
    }
}

/// Totals over attached batteries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub y: f64,
    pub y_e: f64,
    pub y_p: f64,
}

/// Sums attached powers by type; `y` is formed as `y_e + y_p`.
pub fn measure(
    powers: &[f64],
    kinds: &[BatteryKind],
    registry: &AttachmentRegistry,
) -> Measurement {
    let mut y_e = 0.0;
    let mut y_p = 0.0;
    for (i, (&u, kind)) in powers.iter().zip(kinds).enumerate() {
        if !registry.is_attached(i) {
            continue;
        }
        match kind {
            BatteryKind::Energy => y_e += u,
            BatteryKind::Power => y_p += u,
        }
    }
    Measurement {
        y: y_e + y_p,
        y_e,
        y_p,
    }
}

/// One broadcast pair: `(r - y_E, r - y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BroadcastSample {
    pub r_minus_ye: f64,
    pub r_minus_y: f64,
}

/// Transport delay line plus zero-order hold, in units of simulation steps.
#[derive(Debug, Clone)]
pub struct BroadcastBus {
    delay_steps: usize,
    ctrl_steps: usize,
    history: VecDeque<BroadcastSample>,
    held: BroadcastSample,
    pushed: usize,
}

impl BroadcastBus {
    /// `delay_steps` and `ctrl_steps` count simulation steps; `ctrl_steps >= 1`.
    pub fn new(delay_steps: usize, ctrl_steps: usize) -> Self {
        assert!(
            ctrl_steps >= 1,
            "control period must span at least one step"
        );
        Self {
            delay_steps,
            ctrl_steps,
            history: VecDeque::with_capacity(delay_steps + 1),
            held: BroadcastSample::default(),
            pushed: 0,
        }
    }

    /// Records the signals measured at the current step.
    pub fn push(&mut self, sample: BroadcastSample) {
        self.history.push_back(sample);
        if self.history.len() > self.delay_steps + 1 {
            self.history.pop_front();
        }
        self.pushed += 1;
    }

    /// Value measured `delay` ago, or zero before any such measurement exists.
    fn delayed(&self) -> BroadcastSample {
        if self.pushed <= self.delay_steps {
            BroadcastSample::default()
        } else {
            self.history[self.history.len() - 1 - self.delay_steps]
        }
    }

    /// Broadcast seen by controllers at `step`, after that step's push.
    ///
    /// The held value only refreshes when `step` is a control tick.
    pub fn broadcast_sample(&mut self, step: usize) -> BroadcastSample {
        if step.is_multiple_of(self.ctrl_steps) {
            self.held = self.delayed();
        }
        self.held
    }

    pub fn is_control_tick(&self, step: usize) -> bool {
        step.is_multiple_of(self.ctrl_steps)
    }
}
