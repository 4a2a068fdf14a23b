//! Conventional centralized baseline.
//!
//! A server splits the demand into a slow part `r_E` (first-order lag of `r`)
//! for energy-type batteries and the remainder `r - r_E` for power-type
//! batteries, then shares each part in proportion to SOC headroom. References
//! are saturated at the power ratings with no redistribution of the shortage.
//! Failed batteries are noticed only after a fixed monitoring delay.

use std::collections::{BTreeMap, BTreeSet};

use crate::battery::BatteryParams;
use crate::decentralized::filtered_error_step;

/// Power mismatch above which a battery counts as deviating from its command [W].
pub const DEVIATION_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedState {
    /// Lag filter state `r_E` [W].
    pub r_e: f64,
    /// SOC as last reported to the server, by battery id.
    pub known_socs: BTreeMap<String, f64>,
    pub detected_failures: BTreeSet<String>,
    /// Seconds a deviation must persist before a battery is declared failed.
    pub failure_detect_delay: f64,
    /// Start time of the current uninterrupted deviation, by battery id.
    deviating_since: BTreeMap<String, f64>,
}

impl CentralizedState {
    pub fn new(initial_socs: BTreeMap<String, f64>, failure_detect_delay: f64) -> Self {
        Self {
            r_e: 0.0,
            known_socs: initial_socs,
            detected_failures: BTreeSet::new(),
            failure_detect_delay,
            deviating_since: BTreeMap::new(),
        }
    }

    /// Records a SOC report from a battery that is still communicating.
    pub fn report_soc(&mut self, id: &str, soc: f64) {
        if let Some(s) = self.known_socs.get_mut(id) {
            *s = soc;
        }
    }
}

/// One exact-exponential step of `t_f·ṙ_E + r_E = r`; updates and returns `r_E`.
pub fn r_e_step(state: &mut CentralizedState, r: f64, dt: f64, t_f: f64) -> f64 {
    state.r_e = filtered_error_step(state.r_e, r, dt, t_f);
    state.r_e
}

/// Clamp a reference to the battery's power ratings.
pub fn saturate(reference: f64, params: &BatteryParams) -> f64 {
    reference.clamp(params.max_charge_power, params.max_discharge_power)
}

/// SOC-proportional shares of `demand`, before saturation.
///
/// Excluded batteries get zero and drop out of the denominator. Headroom is
/// `s - s_min` when discharging and `s_max - s` when charging, floored at zero.
pub fn proportional_shares(
    socs: &[f64],
    params: &[BatteryParams],
    demand: f64,
    excluded: &BTreeSet<String>,
) -> Vec<f64> {
    let headroom: Vec<f64> = socs
        .iter()
        .zip(params)
        .map(|(&s, p)| {
            if excluded.contains(&p.id) {
                0.0
            } else if demand > 0.0 {
                (s - p.soc_min).max(0.0)
            } else {
                (p.soc_max - s).max(0.0)
            }
        })
        .collect();
    let total: f64 = headroom.iter().sum();
    if demand == 0.0 || total == 0.0 {
        return vec![0.0; socs.len()];
    }
    headroom.iter().map(|h| h / total * demand).collect()
}

/// Energy-type references: shares of `r_E`, saturated.
pub fn allocate_energy(
    socs: &[f64],
    params: &[BatteryParams],
    r_e: f64,
    excluded: &BTreeSet<String>,
) -> Vec<f64> {
    proportional_shares(socs, params, r_e, excluded)
        .into_iter()
        .zip(params)
        .map(|(x, p)| saturate(x, p))
        .collect()
}

/// Power-type references: shares of the transient part `r - r_E`, saturated.
pub fn allocate_power(
    socs: &[f64],
    params: &[BatteryParams],
    r_transient: f64,
    excluded: &BTreeSet<String>,
) -> Vec<f64> {
    allocate_energy(socs, params, r_transient, excluded)
}

/// Updates failure detection from one control tick of commands and measurements.
///
/// A battery whose measured power has differed from a nonzero command by more
/// than [`DEVIATION_THRESHOLD`] without interruption since `t_fail` is declared
/// failed once `t - t_fail >= failure_detect_delay`. Ticks with a zero command
/// neither start nor interrupt a deviation. `eps` absorbs float error in `t`.
pub fn failure_monitor(
    t: f64,
    commanded: &BTreeMap<String, f64>,
    measured: &BTreeMap<String, f64>,
    state: &mut CentralizedState,
    eps: f64,
) -> BTreeSet<String> {
    for (id, &cmd) in commanded {
        if state.detected_failures.contains(id) || cmd == 0.0 {
            continue;
        }
        let meas = measured.get(id).copied().unwrap_or(0.0);
        if (meas - cmd).abs() > DEVIATION_THRESHOLD {
            let since = *state.deviating_since.entry(id.clone()).or_insert(t);
            if t - since >= state.failure_detect_delay - eps {
                state.detected_failures.insert(id.clone());
                state.deviating_since.remove(id);
            }
        } else {
            state.deviating_since.remove(id);
        }
    }
    state.detected_failures.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::fixtures;
    use proptest::prelude::*;

    fn energy_bank() -> Vec<BatteryParams> {
        (1..=5)
            .map(|i| fixtures::energy(&format!("E{i}")))
            .collect()
    }

    fn power_bank() -> Vec<BatteryParams> {
        (1..=5).map(|i| fixtures::power(&format!("P{i}"))).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn r_e_follows_lag() {
        let mut s = CentralizedState::new(BTreeMap::new(), 300.0);
        let v = r_e_step(&mut s, 3000.0, 0.1, 10.0);
        assert!((v - 3000.0 * (1.0 - (-0.01f64).exp())).abs() < 1e-9);
        assert!((v - 29.8504).abs() < 1e-4);
        for _ in 0..10_000 {
            r_e_step(&mut s, 3000.0, 0.1, 10.0);
        }
        assert!((s.r_e - 3000.0).abs() < 1e-6);
        let before = s.r_e;
        r_e_step(&mut s, 0.0, 0.1, 10.0);
        assert!((s.r_e - before * (-0.01f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn energy_allocation_table_one() {
        let socs = [0.7, 0.6, 0.5, 0.4, 0.3];
        let none = BTreeSet::new();
        let raw = proportional_shares(&socs, &energy_bank(), 3000.0, &none);
        assert!(close(&raw, &[1000.0, 800.0, 600.0, 400.0, 200.0], 1e-9));
        let sat = allocate_energy(&socs, &energy_bank(), 3000.0, &none);
        assert!(close(&sat, &[750.0, 750.0, 600.0, 400.0, 200.0], 1e-9));
        assert!((sat.iter().sum::<f64>() - 2700.0).abs() < 1e-9);
        assert!(allocate_energy(&socs, &energy_bank(), 0.0, &none)
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn charge_allocation_uses_upper_headroom() {
        let socs = [0.7, 0.6, 0.5, 0.4, 0.3];
        let raw = proportional_shares(&socs, &energy_bank(), -1500.0, &BTreeSet::new());
        // headroom (0.1, 0.2, 0.3, 0.4, 0.5), total 1.5
        assert!(close(&raw, &[-100.0, -200.0, -300.0, -400.0, -500.0], 1e-9));
    }

    #[test]
    fn power_allocation_table_two() {
        let socs = [0.7, 0.65, 0.6, 0.55, 0.5];
        let none = BTreeSet::new();
        let alloc = allocate_power(&socs, &power_bank(), 3000.0, &none);
        assert!(close(&alloc, &[750.0, 675.0, 600.0, 525.0, 450.0], 1e-9));
        assert!(allocate_power(&socs, &power_bank(), 0.0, &none)
            .iter()
            .all(|&x| x == 0.0));
        let equal = allocate_power(&[0.5; 5], &power_bank(), 1000.0, &none);
        assert!(close(&equal, &[200.0; 5], 1e-9));
    }

    #[test]
    fn excluded_batteries_leave_the_denominator() {
        let socs = [0.7, 0.6, 0.5, 0.4, 0.3];
        let excluded: BTreeSet<String> = ["E2".to_string()].into();
        let raw = proportional_shares(&socs, &energy_bank(), 1100.0, &excluded);
        assert!(close(&raw, &[500.0, 0.0, 300.0, 200.0, 100.0], 1e-9));
    }

    #[test]
    fn empty_headroom_allocates_nothing() {
        let raw = proportional_shares(&[0.2; 5], &energy_bank(), 3000.0, &BTreeSet::new());
        assert!(raw.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn saturate_examples() {
        let p = fixtures::energy("E1");
        assert_eq!(saturate(1000.0, &p), 750.0);
        assert_eq!(saturate(500.0, &p), 500.0);
        assert_eq!(saturate(-900.0, &p), -750.0);
    }

    fn run_monitor(fail_at: f64, horizon: f64) -> Option<f64> {
        let mut state = CentralizedState::new(BTreeMap::new(), 300.0);
        let dt = 0.1;
        let n = (horizon / dt).round() as usize;
        for k in 0..=n {
            let t = k as f64 * dt;
            let commanded: BTreeMap<String, f64> =
                [("E2".to_string(), 700.0), ("E1".to_string(), 750.0)].into();
            let measured: BTreeMap<String, f64> = [
                (
                    "E2".to_string(),
                    if t >= fail_at - 1e-9 { 0.0 } else { 700.0 },
                ),
                ("E1".to_string(), 750.0),
            ]
            .into();
            let detected = failure_monitor(t, &commanded, &measured, &mut state, 1e-6);
            assert!(!detected.contains("E1"));
            if detected.contains("E2") {
                return Some(t);
            }
        }
        None
    }

    #[test]
    fn failure_detection_delay() {
        assert_eq!(run_monitor(f64::INFINITY, 1000.0), None);
        assert!((run_monitor(660.0, 1200.0).unwrap() - 960.0).abs() < 1e-6);
        assert!((run_monitor(1860.0, 2400.0).unwrap() - 2160.0).abs() < 1e-6);
    }

    #[test]
    fn interrupted_deviation_restarts_the_clock() {
        let mut state = CentralizedState::new(BTreeMap::new(), 300.0);
        let cmd: BTreeMap<String, f64> = [("P1".to_string(), 100.0)].into();
        let bad: BTreeMap<String, f64> = [("P1".to_string(), 0.0)].into();
        failure_monitor(0.0, &cmd, &bad, &mut state, 1e-6);
        failure_monitor(200.0, &cmd, &cmd, &mut state, 1e-6);
        failure_monitor(250.0, &cmd, &bad, &mut state, 1e-6);
        assert!(failure_monitor(400.0, &cmd, &bad, &mut state, 1e-6).is_empty());
        assert!(failure_monitor(550.0, &cmd, &bad, &mut state, 1e-6).contains("P1"));
    }

    fn soc_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0..1.0f64, 5)
    }

    proptest! {
        #[test]
        fn shares_sum_to_demand(socs in soc_vec(), demand in -5000.0..5000.0f64) {
            let raw = proportional_shares(&socs, &energy_bank(), demand, &BTreeSet::new());
            let total: f64 = raw.iter().sum();
            let any_headroom = socs.iter().any(|&s| if demand > 0.0 { s > 0.2 } else { s < 0.8 });
            if any_headroom && demand != 0.0 {
                prop_assert!((total - demand).abs() <= 1e-9 * demand.abs().max(1.0));
            } else {
                prop_assert_eq!(total, 0.0);
            }
        }

        #[test]
        fn shares_scale_with_demand(socs in soc_vec(), demand in 1.0..5000.0f64, scale in 0.01..10.0f64) {
            let none = BTreeSet::new();
            let a = proportional_shares(&socs, &energy_bank(), demand, &none);
            let b = proportional_shares(&socs, &energy_bank(), demand * scale, &none);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * scale - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }

        #[test]
        fn discharge_shares_follow_soc_order(socs in soc_vec(), demand in 1.0..5000.0f64) {
            let raw = proportional_shares(&socs, &energy_bank(), demand, &BTreeSet::new());
            for i in 0..5 {
                for j in 0..5 {
                    if socs[i] >= socs[j] {
                        prop_assert!(raw[i] >= raw[j] - 1e-9);
                    }
                }
            }
        }
    }
}
