mod common;

use bess_core::battery::SocIntegration;
use bess_core::scenario::ControlMode;
use std::sync::OnceLock;

use bess_core::{preset, run, Preset, Scenario, SimTrace};

fn both_modes() -> Vec<Scenario> {
    Preset::ALL
        .into_iter()
        .flat_map(|p| {
            let dec = preset(p);
            let cen = Scenario {
                mode: ControlMode::Centralized,
                ..dec.clone()
            };
            [dec, cen]
        })
        .collect()
}

fn runs() -> &'static [(Scenario, SimTrace)] {
    static RUNS: OnceLock<Vec<(Scenario, SimTrace)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        both_modes()
            .into_iter()
            .map(|s| {
                let trace = run(&s).unwrap();
                (s, trace)
            })
            .collect()
    })
}

#[test]
fn presets_satisfy_structural_invariants_in_both_modes() {
    for (s, trace) in runs() {
        let bad = common::structural_violations(trace, s);
        assert!(bad.is_empty(), "{} ({:?}): {bad:?}", s.name, s.mode);
    }
}

#[test]
fn soc_follows_coulomb_counting_of_applied_power() {
    for (s, trace) in runs() {
        let worst = common::worst_bookkeeping_error(trace, s);
        assert!(worst < 1e-9, "{} ({:?}): {worst:e}", s.name, s.mode);
    }
}

#[test]
fn soc_never_drifts_past_the_protective_bounds() {
    // The clamp acts on the current SOC, so a bound can be crossed by at most one step.
    for (s, trace) in runs() {
        for spec in &s.batteries {
            let b = trace.battery_index(&spec.id).unwrap();
            let max_i = common::current_by_bisection(
                spec.ocv,
                spec.internal_resistance,
                spec.max_discharge_power,
            )
            .abs()
            .max(
                common::current_by_bisection(
                    spec.ocv,
                    spec.internal_resistance,
                    spec.max_charge_power,
                )
                .abs(),
            );
            let slack = max_i * s.timing.dt_sim / (3600.0 * spec.capacity) + 1e-12;
            for &soc in &trace.soc[b] {
                assert!(
                    soc >= spec.soc_min - slack && soc <= spec.soc_max + slack,
                    "{} {}: soc {soc}",
                    s.name,
                    spec.id
                );
            }
        }
    }
}

#[test]
fn detached_batteries_hold_their_soc() {
    let s = preset(Preset::PaperFailure);
    let trace = run(&s).unwrap();
    for f in &s.failures {
        let b = trace.battery_index(&f.battery).unwrap();
        let k = common::row(&trace, f.time);
        assert!(trace.attached[b][k - 1] && !trace.attached[b][k]);
        assert!(trace.soc[b][k..].iter().all(|&x| x == trace.soc[b][k]));
        assert!(trace.u[b][k..].iter().all(|&u| u == 0.0));
    }
}

#[test]
fn repeated_runs_are_identical() {
    for (s, trace) in runs() {
        assert_eq!(&run(s).unwrap(), trace, "{}", s.name);
    }
}

#[test]
fn raw_power_integration_uses_power_over_voltage() {
    let mut s = preset(Preset::PaperTracking);
    s.soc_integration = SocIntegration::RawPower;
    s.timing.duration = 200.0;
    let trace = run(&s).unwrap();
    let dt = s.timing.dt_sim;
    for spec in &s.batteries {
        let b = trace.battery_index(&spec.id).unwrap();
        for k in 0..trace.len() - 1 {
            let expected =
                trace.soc[b][k] - trace.u[b][k] / spec.ocv * dt / (3600.0 * spec.capacity);
            assert!((trace.soc[b][k + 1] - expected).abs() < 1e-12);
        }
    }
}
