//! Independent oracles and trace checks shared by the integration tests.
#![allow(dead_code)]

use bess_core::battery::BatteryKind;
use bess_core::battery::SocIntegration;
use bess_core::{Scenario, SimTrace};

/// Terminal current for power `p` by bisection on `p = ocv·i - R·i²`
/// over the branch `i <= ocv / 2R`, where terminal power rises with current.
pub fn current_by_bisection(ocv: f64, resistance: f64, p: f64) -> f64 {
    let terminal = |i: f64| ocv * i - resistance * i * i;
    let (mut lo, mut hi) = (-ocv / resistance, ocv / (2.0 * resistance));
    // 100 halvings shrink the bracket far below one ulp of any current here.
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if terminal(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`; `b < a` integrates backwards.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

/// Quadrature over `[a, b]`, split at the given breakpoints so each piece is smooth.
pub fn piecewise_quadrature(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> f64 {
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    cuts.extend(breaks.iter().copied().filter(|&x| x > lo && x < hi));
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    sign * cuts
        .windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], tol))
        .sum::<f64>()
}

/// Every violated structural property of a trace, one description per kind.
pub fn structural_violations(trace: &SimTrace, scenario: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    let mut flag = |ok: bool, what: &dyn Fn() -> String| {
        if !ok {
            let what = what();
            if !out.contains(&what) {
                out.push(what);
            }
        }
    };
    let dt = scenario.timing.dt_sim;
    let rows = trace.len();
    flag(
        rows == (scenario.timing.duration / dt).round() as usize + 1,
        &|| format!("row count {rows}"),
    );

    for k in 0..rows {
        flag(
            (trace.t[k] - k as f64 * dt).abs() <= 1e-9 * (1.0 + trace.t[k]),
            &|| "time grid".into(),
        );
        flag(trace.y[k] == trace.y_e[k] + trace.y_p[k], &|| {
            "y = y_E + y_P".into()
        });
        flag(trace.e[k] == trace.r[k] - trace.y[k], &|| {
            "e = r - y".into()
        });
        let (mut y_e, mut y_p) = (0.0, 0.0);
        for (i, spec) in scenario.batteries.iter().enumerate() {
            let b = trace.battery_index(&spec.id).expect("battery column");
            assert_eq!(b, i, "columns follow scenario order");
            let u = trace.u[b][k];
            let attached = trace.attached[b][k];
            if attached {
                match spec.kind {
                    BatteryKind::Energy => y_e += u,
                    BatteryKind::Power => y_p += u,
                }
            } else {
                flag(u == 0.0, &|| format!("{} detached but u = {u}", spec.id));
            }
            flag(
                u <= spec.max_discharge_power && u >= spec.max_charge_power,
                &|| format!("{} power bound", spec.id),
            );
            let s = trace.soc[b][k];
            flag((0.0..=1.0).contains(&s), &|| {
                format!("{} soc outside [0, 1]", spec.id)
            });
            if k > 0 {
                flag(!attached || trace.attached[b][k - 1], &|| {
                    format!("{} reattached", spec.id)
                });
            }
        }
        flag((y_e - trace.y_e[k]).abs() <= 1e-9, &|| {
            "y_E = sum of attached energy-type u".into()
        });
        flag((y_p - trace.y_p[k]).abs() <= 1e-9, &|| {
            "y_P = sum of attached power-type u".into()
        });
    }
    out
}

/// Largest mismatch between consecutive SOC samples and coulomb counting of
/// the recorded terminal power, with current from [`current_by_bisection`].
pub fn worst_bookkeeping_error(trace: &SimTrace, scenario: &Scenario) -> f64 {
    assert_eq!(scenario.soc_integration, SocIntegration::TerminalCurrent);
    let dt = scenario.timing.dt_sim;
    let mut worst = 0.0f64;
    for spec in &scenario.batteries {
        let b = trace.battery_index(&spec.id).unwrap();
        // Idle and saturated powers repeat heavily; bisect each value once.
        let mut memo = std::collections::HashMap::new();
        for k in 0..trace.len() - 1 {
            let u = trace.u[b][k];
            let i = *memo
                .entry(u.to_bits())
                .or_insert_with(|| current_by_bisection(spec.ocv, spec.internal_resistance, u));
            let expected = (trace.soc[b][k] - i * dt / (3600.0 * spec.capacity)).clamp(0.0, 1.0);
            worst = worst.max((trace.soc[b][k + 1] - expected).abs());
        }
    }
    worst
}

/// Mean of `|r - y|` over rows with `t0 <= t < t1`.
pub fn mean_abs_error(trace: &SimTrace, t0: f64, t1: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for k in 0..trace.len() {
        if trace.t[k] >= t0 - 1e-9 && trace.t[k] < t1 - 1e-9 {
            sum += (trace.r[k] - trace.y[k]).abs();
            n += 1;
        }
    }
    sum / n as f64
}

/// Row index at time `t` on the uniform grid.
pub fn row(trace: &SimTrace, t: f64) -> usize {
    let dt = trace.t[1] - trace.t[0];
    (t / dt).round() as usize
}
