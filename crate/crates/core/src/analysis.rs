//! Post-hoc analysis of simulation traces.
//!
//! The Lyapunov check evaluates
//!
//! ```text
//! Ṽ = e_E²/2 + (1/T_f) Σ_i V_i(φ_i),    V_i(φ) = ∫_{φ0}^{φ} (σ_i(x) - r_i) / K_i dx
//! ```
//!
//! at every control tick, where `Σ r_i = r` over the attached energy-type
//! batteries, and compares the discrete slope of `Ṽ` with `-e_E²/T_f`. The
//! remaining metrics cover tracking error, the power-type residual at phase
//! ends, and SOC spread.

use serde::Serialize;

use crate::battery::BatteryKind;
use crate::decentralized::{GainMode, SwitchingShape};
use crate::error::AnalysisError;
use crate::scenario::{ControlMode, Scenario};
use crate::sim::SimTrace;

/// Lower integration limit of the per-battery Lyapunov term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerLimitMode {
    /// Integrate from `φ = 0`.
    Zero,
    /// Integrate from the equilibrium `φ*` with `σ(φ*) = r_i`; always `>= 0`.
    #[default]
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovConfig {
    pub lower_limit_mode: LowerLimitMode,
    /// Multiplier in the discretization tolerance.
    pub epsilon_factor: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            lower_limit_mode: LowerLimitMode::Equilibrium,
            epsilon_factor: 2.0,
        }
    }
}

/// `∫_0^x σ(s) ds` in closed form.
fn sigma_primitive(shape: &SwitchingShape, x: f64) -> f64 {
    if x >= 0.0 {
        let knee = shape.phi_discharge_sat;
        let m = shape.discharge_slope();
        if x <= knee {
            0.5 * m * x * x
        } else {
            0.5 * m * knee * knee + shape.u_discharge_max * (x - knee)
        }
    } else {
        let knee = shape.phi_charge_sat;
        let m = shape.charge_slope();
        if x >= knee {
            0.5 * m * x * x
        } else {
            0.5 * m * knee * knee + shape.u_charge_max * (x - knee)
        }
    }
}

/// `∫_0^x (σ(s) - r_i) / K(s) ds` with `K = k_discharge` on `s >= 0`, `k_charge` below.
fn lyapunov_primitive(
    shape: &SwitchingShape,
    r_i: f64,
    k_discharge: f64,
    k_charge: f64,
    x: f64,
) -> f64 {
    let k = if x >= 0.0 { k_discharge } else { k_charge };
    (sigma_primitive(shape, x) - r_i * x) / k
}

fn equilibrium(shape: &SwitchingShape, r_i: f64) -> Result<f64, AnalysisError> {
    shape
        .inverse(r_i)
        .ok_or(AnalysisError::InfeasibleReference {
            reference: r_i,
            min: shape.u_charge_max,
            max: shape.u_discharge_max,
        })
}

/// Per-battery Lyapunov term with separate gains on either side of `φ = 0`.
pub fn v_ei_split(
    phi: f64,
    r_i: f64,
    k_discharge: f64,
    k_charge: f64,
    shape: &SwitchingShape,
    mode: LowerLimitMode,
) -> Result<f64, AnalysisError> {
    let star = equilibrium(shape, r_i)?;
    let lower = match mode {
        LowerLimitMode::Zero => 0.0,
        LowerLimitMode::Equilibrium => star,
    };
    Ok(lyapunov_primitive(shape, r_i, k_discharge, k_charge, phi)
        - lyapunov_primitive(shape, r_i, k_discharge, k_charge, lower))
}

/// Per-battery Lyapunov term `∫ (σ(x) - r_i) / k dx` from the configured lower limit to `phi`.
pub fn v_ei(
    phi: f64,
    r_i: f64,
    k: f64,
    shape: &SwitchingShape,
    mode: LowerLimitMode,
) -> Result<f64, AnalysisError> {
    v_ei_split(phi, r_i, k, k, shape, mode)
}

/// Splits `r` across batteries as evenly as their switching ranges allow.
///
/// Returns `None` when `r` exceeds the combined range.
pub fn equal_split(r: f64, shapes: &[SwitchingShape]) -> Option<Vec<f64>> {
    let n = shapes.len();
    if n == 0 {
        return (r == 0.0).then(Vec::new);
    }
    let bound = |s: &SwitchingShape| {
        if r >= 0.0 {
            s.u_discharge_max
        } else {
            s.u_charge_max
        }
    };
    let capacity: f64 = shapes.iter().map(bound).sum();
    if r.abs() > capacity.abs() * (1.0 + 1e-12) {
        return None;
    }
    let mut share = vec![0.0; n];
    let mut free: Vec<usize> = (0..n).collect();
    let mut remaining = r;
    // water filling: pin batteries whose bound is below the equal share
    loop {
        let each = remaining / free.len() as f64;
        let (pinned, open): (Vec<usize>, Vec<usize>) = free
            .iter()
            .partition(|&&i| bound(&shapes[i]).abs() < each.abs());
        if pinned.is_empty() {
            for &i in &open {
                share[i] = each;
            }
            return Some(share);
        }
        for &i in &pinned {
            share[i] = bound(&shapes[i]);
            remaining -= share[i];
        }
        if open.is_empty() {
            return Some(share);
        }
        free = open;
    }
}

/// Per-battery data the verifier needs, taken from the scenario.
#[derive(Debug, Clone)]
struct EnergyBattery {
    row_index: usize,
    shape: SwitchingShape,
    k_discharge: f64,
    k_charge: f64,
}

fn energy_batteries(
    trace: &SimTrace,
    scenario: &Scenario,
) -> Result<Vec<EnergyBattery>, AnalysisError> {
    scenario
        .batteries
        .iter()
        .filter(|b| b.kind == BatteryKind::Energy)
        .map(|b| {
            let row_index = trace
                .battery_index(&b.id)
                .ok_or_else(|| AnalysisError::UnknownBattery(b.id.clone()))?;
            let gains = scenario.gains_for(b);
            Ok(EnergyBattery {
                row_index,
                shape: scenario.shape_for(b),
                k_discharge: gains.k_discharge_max,
                k_charge: gains.k_charge_max,
            })
        })
        .collect()
}

/// `Ṽ` at one trace row, with `r_i` from [`equal_split`] over the attached energy batteries.
pub fn v_tilde(
    trace: &SimTrace,
    row: usize,
    scenario: &Scenario,
    config: &LyapunovConfig,
) -> Result<f64, AnalysisError> {
    let batteries = energy_batteries(trace, scenario)?;
    v_tilde_with(
        trace,
        row,
        &batteries,
        scenario.timing.t_f,
        config.lower_limit_mode,
    )
}

fn v_tilde_with(
    trace: &SimTrace,
    row: usize,
    batteries: &[EnergyBattery],
    t_f: f64,
    mode: LowerLimitMode,
) -> Result<f64, AnalysisError> {
    let attached: Vec<&EnergyBattery> = batteries
        .iter()
        .filter(|b| trace.attached[b.row_index][row])
        .collect();
    let shapes: Vec<SwitchingShape> = attached.iter().map(|b| b.shape).collect();
    let r = trace.r[row];
    let split = equal_split(r, &shapes).ok_or(AnalysisError::InfeasibleReference {
        reference: r,
        min: shapes.iter().map(|s| s.u_charge_max).sum(),
        max: shapes.iter().map(|s| s.u_discharge_max).sum(),
    })?;
    let mut sum = 0.0;
    for (b, r_i) in attached.iter().zip(split) {
        let phi = trace.phi[b.row_index][row];
        sum += v_ei_split(phi, r_i, b.k_discharge, b.k_charge, &b.shape, mode)?;
    }
    let e = trace.e_e[row];
    Ok(0.5 * e * e + sum / t_f)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub r: f64,
    pub ticks: usize,
    pub violations: usize,
    /// Tolerance applied to this segment [1/s · W²].
    pub epsilon: f64,
    /// Largest `ΔṼ/Δt + e_E²/T_f` seen in the segment, floored at zero.
    pub max_positive_excursion: f64,
    /// Why the segment was not checked, e.g. a demand no equilibrium can meet.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub lower_limit_mode: LowerLimitMode,
    pub ticks_checked: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Largest `ΔṼ/Δt + e_E²/T_f` over all checked ticks, floored at zero.
    pub max_positive_excursion: f64,
    pub segments: Vec<LyapunovSegment>,
    pub epsilon_rule: String,
    /// Set when gains were SOC-variable and their upper bounds were used instead.
    pub caveat: Option<String>,
}

/// Rows that fall on control ticks, found from their time stamps.
fn tick_rows(trace: &SimTrace, scenario: &Scenario) -> Vec<usize> {
    let dt = scenario.timing.dt_sim;
    let ctrl = (scenario.timing.dt_ctrl / dt).round() as usize;
    (0..trace.len())
        .filter(|&k| ((trace.t[k] / dt).round() as usize).is_multiple_of(ctrl))
        .collect()
}

/// Checks `ΔṼ/Δt <= -e_E²/T_f + ε` at every control tick of every
/// constant-demand, constant-attachment segment.
///
/// A pair of consecutive ticks is checked only once the delayed broadcast
/// reflects the segment, i.e. from `segment start + delay` on. The slope of
/// `Ṽ` is compared against the trapezoidal mean of `-e_E²/T_f` over the
/// interval. Per segment, `ε = factor · max|e_E| · (max |Δs| over one control
/// period + max |s(t) - s(t - delay)|) / T_f`, where `s = r - y_E`.
pub fn lyapunov_report(
    trace: &SimTrace,
    scenario: &Scenario,
    config: &LyapunovConfig,
) -> Result<LyapunovReport, AnalysisError> {
    let batteries = energy_batteries(trace, scenario)?;
    let t_f = scenario.timing.t_f;
    let delay = scenario.timing.broadcast_delay;
    let dt = scenario.timing.dt_sim;
    let ticks = tick_rows(trace, scenario);

    let key = |row: usize| -> (u64, Vec<bool>) {
        (
            trace.r[row].to_bits(),
            batteries
                .iter()
                .map(|b| trace.attached[b.row_index][row])
                .collect(),
        )
    };

    let mut segments = Vec::new();
    let mut start = 0;
    while start < ticks.len() {
        let k0 = key(ticks[start]);
        let mut end = start;
        while end + 1 < ticks.len() && key(ticks[end + 1]) == k0 {
            end += 1;
        }
        segments.push(&ticks[start..=end]);
        start = end + 1;
    }

    // Ṽ is undefined where the attached batteries cannot reach r; those
    // segments are reported as skipped rather than failing the whole report.
    let v: Vec<Result<f64, AnalysisError>> = ticks
        .iter()
        .map(|&row| v_tilde_with(trace, row, &batteries, t_f, config.lower_limit_mode))
        .collect();
    let tick_pos = |row: usize| ticks.binary_search(&row).expect("tick row");

    let s = |row: usize| trace.r[row] - trace.y_e[row];
    let mut report_segments = Vec::new();
    let (mut checked, mut violations, mut max_exc) = (0usize, 0usize, 0.0f64);

    for seg in segments {
        let seg_start_t = trace.t[seg[0]];
        let seg_end_t = trace.t[*seg.last().unwrap()];
        if let Some(Err(e)) = seg
            .iter()
            .map(|&row| &v[tick_pos(row)])
            .find(|x| x.is_err())
        {
            report_segments.push(LyapunovSegment {
                t_start: seg_start_t,
                t_end: seg_end_t,
                r: trace.r[seg[0]],
                ticks: 0,
                violations: 0,
                epsilon: 0.0,
                max_positive_excursion: 0.0,
                skipped: Some(e.to_string()),
            });
            continue;
        }
        let v_at = |row: usize| *v[tick_pos(row)].as_ref().expect("checked above");
        let clean: Vec<(usize, usize)> = seg
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|&(a, _)| trace.t[a] >= seg_start_t + delay - 0.5 * dt)
            .collect();

        let max_e = clean
            .iter()
            .flat_map(|&(a, b)| [trace.e_e[a].abs(), trace.e_e[b].abs()])
            .fold(0.0, f64::max);
        let max_ds = clean
            .iter()
            .map(|&(a, b)| (s(b) - s(a)).abs())
            .fold(0.0, f64::max);
        let max_delay = clean
            .iter()
            .filter_map(|&(_, b)| {
                let t_back = trace.t[b] - delay;
                (t_back >= seg_start_t - 0.5 * dt).then(|| (s(b) - s(trace.row_at(t_back))).abs())
            })
            .fold(0.0, f64::max);
        let epsilon = config.epsilon_factor * max_e * (max_ds + max_delay) / t_f;

        let mut seg_viol = 0;
        let mut seg_exc = 0.0f64;
        for &(a, b) in &clean {
            let step = trace.t[b] - trace.t[a];
            let slope = (v_at(b) - v_at(a)) / step;
            let dissipation = 0.5 * (trace.e_e[a].powi(2) + trace.e_e[b].powi(2)) / t_f;
            let residual = slope + dissipation;
            seg_exc = seg_exc.max(residual);
            if residual > epsilon {
                seg_viol += 1;
            }
        }
        checked += clean.len();
        violations += seg_viol;
        max_exc = max_exc.max(seg_exc);
        report_segments.push(LyapunovSegment {
            t_start: seg_start_t,
            t_end: seg_end_t,
            r: trace.r[seg[0]],
            ticks: clean.len(),
            violations: seg_viol,
            epsilon,
            max_positive_excursion: seg_exc,
            skipped: None,
        });
    }

    let caveat = (scenario.controller.gain_mode == GainMode::SocVariable).then(|| {
        "gains are SOC-variable; the verifier used their fixed upper bounds, so the \
         dissipation identity is not expected to hold"
            .to_string()
    });
    Ok(LyapunovReport {
        lower_limit_mode: config.lower_limit_mode,
        ticks_checked: checked,
        violations,
        violation_fraction: if checked == 0 { 0.0 } else { violations as f64 / checked as f64 },
        max_positive_excursion: max_exc,
        segments: report_segments,
        epsilon_rule: format!(
            "per segment: {} * max|e_E| * (max|Δs| per control period + max|s(t) - s(t - delay)|) / T_f, s = r - y_E",
            config.epsilon_factor
        ),
        caveat,
    })
}

/// Maximal run of rows with the same demand value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub first_row: usize,
    pub last_row: usize,
    pub r: f64,
}

/// Splits the trace into constant-demand phases.
pub fn phases(trace: &SimTrace) -> Vec<Phase> {
    let mut out = Vec::new();
    let mut first = 0;
    for k in 1..=trace.len() {
        if k == trace.len() || trace.r[k] != trace.r[first] {
            out.push(Phase {
                first_row: first,
                last_row: k - 1,
                r: trace.r[first],
            });
            first = k;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTracking {
    pub t_start: f64,
    pub t_end: f64,
    pub r: f64,
    /// Mean `|r - y|` over the final 10% of the phase [W].
    pub steady_state_error: f64,
    /// Seconds from phase start until `|r - y|` stays within the band for good.
    pub settling_time: Option<f64>,
    pub settling_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingMetrics {
    pub phases: Vec<PhaseTracking>,
    pub rmse: f64,
}

/// Settling band: 1% of `|r|`, or 1 W when the demand is zero.
pub fn settling_band(r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else {
        0.01 * r.abs()
    }
}

pub fn tracking_metrics(trace: &SimTrace) -> TrackingMetrics {
    let err = |k: usize| (trace.r[k] - trace.y[k]).abs();
    let phases = phases(trace)
        .into_iter()
        .map(|p| {
            let n = p.last_row - p.first_row + 1;
            let tail = (n / 10).max(1);
            let from = p.last_row + 1 - tail;
            let steady_state_error = (from..=p.last_row).map(err).sum::<f64>() / tail as f64;
            let band = settling_band(p.r);
            let last_out = (p.first_row..=p.last_row).rev().find(|&k| err(k) >= band);
            let settling_time = match last_out {
                None => Some(0.0),
                Some(k) if k == p.last_row => None,
                Some(k) => Some(trace.t[k + 1] - trace.t[p.first_row]),
            };
            PhaseTracking {
                t_start: trace.t[p.first_row],
                t_end: trace.t[p.last_row],
                r: p.r,
                steady_state_error,
                settling_time,
                settling_band: band,
            }
        })
        .collect();
    let rmse = if trace.is_empty() {
        0.0
    } else {
        ((0..trace.len()).map(|k| err(k).powi(2)).sum::<f64>() / trace.len() as f64).sqrt()
    };
    TrackingMetrics { phases, rmse }
}

/// Mean `|r - y|` over rows with `t0 <= t < t1`.
pub fn mean_abs_error(trace: &SimTrace, t0: f64, t1: f64) -> f64 {
    let rows: Vec<usize> = (0..trace.len())
        .filter(|&k| trace.t[k] >= t0 && trace.t[k] < t1)
        .collect();
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter()
        .map(|&k| (trace.r[k] - trace.y[k]).abs())
        .sum::<f64>()
        / rows.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseResidual {
    pub t_end: f64,
    pub r: f64,
    /// `Σ_j |u_Pj|` at the phase's final row [W].
    pub power_type_total: f64,
}

pub fn power_steadystate_residual(trace: &SimTrace) -> Vec<PhaseResidual> {
    let power = trace.of_kind(BatteryKind::Power);
    phases(trace)
        .into_iter()
        .map(|p| PhaseResidual {
            t_end: trace.t[p.last_row],
            r: p.r,
            power_type_total: power.iter().map(|&i| trace.u[i][p.last_row].abs()).sum(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpreadSample {
    pub t: f64,
    pub spread: f64,
}

/// `max s - min s` over attached batteries of `kind`, at the rows nearest `times`.
pub fn soc_spread(trace: &SimTrace, kind: BatteryKind, times: &[f64]) -> Vec<SpreadSample> {
    let idx = trace.of_kind(kind);
    times
        .iter()
        .map(|&t| {
            let k = trace.row_at(t);
            let socs = idx
                .iter()
                .filter(|&&i| trace.attached[i][k])
                .map(|&i| trace.soc[i][k]);
            let (lo, hi) = socs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s), hi.max(s))
            });
            SpreadSample {
                t: trace.t[k],
                spread: if hi >= lo { hi - lo } else { 0.0 },
            }
        })
        .collect()
}

/// Start time plus every cycle end within the trace; for non-periodic demand,
/// the start and final time.
pub fn cycle_sample_times(trace: &SimTrace, scenario: &Scenario) -> Vec<f64> {
    let end = trace.t.last().copied().unwrap_or(0.0);
    let mut times = vec![0.0];
    let ends = scenario.demand.cycle_ends();
    if ends.is_empty() {
        times.push(end);
    } else {
        times.extend(ends.into_iter().filter(|&t| t <= end + 1e-9));
    }
    times
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadByKind {
    pub energy: Vec<SpreadSample>,
    pub power: Vec<SpreadSample>,
}

/// Everything written to a metrics document for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: ControlMode,
    pub tracking: TrackingMetrics,
    pub power_steadystate_residual: Vec<PhaseResidual>,
    pub soc_spread: SpreadByKind,
    pub lyapunov: Option<LyapunovReport>,
}

/// Computes the full metrics set; the Lyapunov report only applies to decentralized runs.
pub fn analyze(trace: &SimTrace, scenario: &Scenario) -> Result<MetricsReport, AnalysisError> {
    if trace.battery_ids.len() != scenario.batteries.len() {
        return Err(AnalysisError::Mismatch(format!(
            "trace has {} batteries, scenario {}",
            trace.battery_ids.len(),
            scenario.batteries.len()
        )));
    }
    let times = cycle_sample_times(trace, scenario);
    let lyapunov = match scenario.mode {
        ControlMode::Decentralized => Some(lyapunov_report(
            trace,
            scenario,
            &LyapunovConfig::default(),
        )?),
        ControlMode::Centralized => None,
    };
    Ok(MetricsReport {
        scenario: scenario.name.clone(),
        mode: scenario.mode,
        tracking: tracking_metrics(trace),
        power_steadystate_residual: power_steadystate_residual(trace),
        soc_spread: SpreadByKind {
            energy: soc_spread(trace, BatteryKind::Energy, &times),
            power: soc_spread(trace, BatteryKind::Power, &times),
        },
        lyapunov,
    })
}
