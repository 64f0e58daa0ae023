//! Diagnostics along a trajectory and fit-then-verify checks of the a priori
//! estimates.
//!
//! Existential constants are fitted on the burn-in window `[0, 1]` (raw value
//! plus a 10% margin) and the inequality is then asserted on `(1, t_end]`.

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use crate::class::{self, CohomologyClass};
use crate::error::{Error, Result};
use crate::flow::{self, FlowState, Scenario, Trajectory};
use crate::grid::{self, HermitianMatrixField, ScalarField};
use crate::herm;

/// End of the burn-in window used for fitting constants.
pub const BURN_IN: f64 = 1.0;
/// Absolute slack in asserted inequalities.
pub const TOL: f64 = 1e-6;
/// Slack in the exact convexity inequality.
pub const JENSEN_TOL: f64 = 1e-9;
/// Per-step slack in monotonicity checks.
pub const MONOTONE_TOL: f64 = 1e-7;
/// Length of the late window used for trend fits.
pub const LATE_WINDOW: f64 = 4.0;

const EPS_T: f64 = 1e-9;

/// Per-sample diagnostic quantities, always expressed for the unshifted potential `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub max_u: f64,
    pub min_u: f64,
    pub mean_u: f64,
    pub max_udot: f64,
    pub min_udot: f64,
    pub mean_udot: f64,
    pub udot_plus_u_max: f64,
    pub udot_plus_u_min: f64,
    pub udot_plus_u_mean: f64,
    pub uddot_plus_udot_max: f64,
    pub uddot_plus_udot_min: f64,
    /// `det` of the class at time `t`.
    pub class_volume: f64,
    /// Grid mean of `ρ e^{∂u/∂t + u}`.
    pub volume_integral: f64,
    /// Grid mean of `det g̃`.
    pub det_mean: f64,
    /// `∫(∂u/∂t + u) ρ̂` with `ρ̂` normalized to unit mass (shifted accordingly).
    pub jensen_lhs: f64,
    pub osc_u: f64,
    pub min_eig_metric: f64,
    pub ric_min: f64,
    pub ric_max: f64,
    /// `min (∂u/∂t + u + n t − φ)`.
    #[serde(rename = "thm13_min")]
    pub lower_control_min: f64,
    /// `min (u − φ)`.
    pub u_minus_phi_min: f64,
}

/// Centered (one-sided at the ends) three-point derivative on a non-uniform grid.
fn time_derivative(ts: &[f64], fields: &[&[f64]]) -> Vec<Vec<f64>> {
    let m = ts.len();
    let len = fields.first().map_or(0, |f| f.len());
    (0..m)
        .map(|i| {
            if m < 2 {
                return vec![0.0; len];
            }
            if m == 2 {
                let h = ts[1] - ts[0];
                return (0..len).map(|p| (fields[1][p] - fields[0][p]) / h).collect();
            }
            let (j, w) = if i == 0 {
                let (h1, h2) = (ts[1] - ts[0], ts[2] - ts[1]);
                (
                    0,
                    [
                        -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
                        (h1 + h2) / (h1 * h2),
                        -h1 / (h2 * (h1 + h2)),
                    ],
                )
            } else if i == m - 1 {
                let (h1, h2) = (ts[m - 2] - ts[m - 3], ts[m - 1] - ts[m - 2]);
                (
                    m - 3,
                    [
                        h2 / (h1 * (h1 + h2)),
                        -(h1 + h2) / (h1 * h2),
                        (h1 + 2.0 * h2) / (h2 * (h1 + h2)),
                    ],
                )
            } else {
                let (h1, h2) = (ts[i] - ts[i - 1], ts[i + 1] - ts[i]);
                (
                    i - 1,
                    [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))],
                )
            };
            (0..len)
                .map(|p| w[0] * fields[j][p] + w[1] * fields[j + 1][p] + w[2] * fields[j + 2][p])
                .collect()
        })
        .collect()
}

/// Finite-difference `∂²u/∂t²` at every sample, from the cached right-hand sides.
pub fn fd_second_derivatives(states: &[FlowState]) -> Vec<Vec<f64>> {
    let ts: Vec<f64> = states.iter().map(|s| s.t).collect();
    let fields: Vec<&[f64]> = states.iter().map(|s| s.u_dot.values()).collect();
    time_derivative(&ts, &fields)
}

/// `∂²u/∂t² = Δ(∂u/∂t) − e^{−t}⟨g̃, ω₀ − L⟩ − ∂u/∂t`, evaluated at a state.
pub fn analytic_second_derivative(state: &FlowState, scenario: &Scenario) -> Result<ScalarField> {
    let (_, u_dot) = state.u_gauge(scenario)?;
    let g = state.metric(scenario)?;
    let lap = grid::laplacian(&g, &u_dot)?;
    let direction = scenario.omega0.combine(1.0, &scenario.l, -1.0)?;
    let tr = grid::trace_pair(&g, &HermitianMatrixField::constant(g.grid().clone(), &direction)?)?;
    let decay = (-state.t).exp();
    let values = (0..lap.values().len())
        .map(|p| lap.values()[p] - decay * tr.values()[p] - u_dot.values()[p])
        .collect();
    ScalarField::new(g.grid().clone(), values)
}

/// Largest gap between finite-difference and analytic `∂²u/∂t²` over interior samples in `[t0, t1]`.
pub fn second_derivative_discrepancy(trajectory: &Trajectory, t0: f64, t1: f64) -> Result<f64> {
    let fd = fd_second_derivatives(&trajectory.states);
    let last = trajectory.states.len().saturating_sub(1);
    let mut worst = 0.0f64;
    for (i, state) in trajectory.states.iter().enumerate() {
        if i == 0 || i == last || state.t < t0 - EPS_T || state.t > t1 + EPS_T {
            continue;
        }
        let exact = analytic_second_derivative(state, &trajectory.scenario)?;
        for (a, b) in fd[i].iter().zip(exact.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Diagnostics for one state; `u_ddot` is the time derivative of `∂u/∂t` at this sample.
pub fn diagnostics(state: &FlowState, u_ddot: &[f64], scenario: &Scenario) -> Result<DiagnosticsRow> {
    let (u, u_dot) = state.u_gauge(scenario)?;
    let n = scenario.n();
    let t = state.t;
    let rho = scenario.rho.values();
    let g = state.metric(scenario)?;
    let det = grid::ma_determinant(&g);
    let points = u.values().len() as f64;
    let rho_mass = scenario.rho.mean();

    let sum_plus: Vec<f64> = u.values().iter().zip(u_dot.values()).map(|(a, b)| a + b).collect();
    let q: Vec<f64> = u_ddot.iter().zip(u_dot.values()).map(|(a, b)| a + b).collect();
    let volume_integral = sum_plus.iter().zip(rho).map(|(s, r)| r * s.exp()).sum::<f64>() / points;
    let jensen_lhs =
        sum_plus.iter().zip(rho).map(|(s, r)| r / rho_mass * s).sum::<f64>() / points + rho_mass.ln();

    let mut min_eig = f64::INFINITY;
    for m in g.points() {
        min_eig = min_eig.min(herm::min_eigenvalue(m, n));
    }
    let (mut ric_min, mut ric_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in grid::ricci_of_metric(&g)?.points() {
        let e = herm::eigenvalues(m, n);
        ric_min = ric_min.min(e[0]);
        ric_max = ric_max.max(e[n - 1]);
    }
    let phi = scenario.phi.values();
    let nt = n as f64 * t;
    let lower = sum_plus.iter().zip(phi).map(|(s, f)| s + nt - f).fold(f64::INFINITY, f64::min);
    let u_minus_phi = u.values().iter().zip(phi).map(|(a, f)| a - f).fold(f64::INFINITY, f64::min);

    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let row = DiagnosticsRow {
        t,
        max_u: u.max(),
        min_u: u.min(),
        mean_u: u.mean(),
        max_udot: u_dot.max(),
        min_udot: u_dot.min(),
        mean_udot: u_dot.mean(),
        udot_plus_u_max: max(&sum_plus),
        udot_plus_u_min: min(&sum_plus),
        udot_plus_u_mean: mean(&sum_plus),
        uddot_plus_udot_max: max(&q),
        uddot_plus_udot_min: min(&q),
        class_volume: scenario.class_at(t)?.det(),
        volume_integral,
        det_mean: det.mean(),
        jensen_lhs,
        osc_u: u.max() - u.min(),
        min_eig_metric: min_eig,
        ric_min,
        ric_max,
        lower_control_min: lower,
        u_minus_phi_min: u_minus_phi,
    };
    let finite = [
        row.max_u, row.min_u, row.udot_plus_u_max, row.uddot_plus_udot_max, row.volume_integral,
        row.jensen_lhs, row.ric_min, row.ric_max, row.lower_control_min,
    ];
    if let Some(i) = finite.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(row)
}

/// Diagnostics for every sampled state.
pub fn diagnostics_rows(states: &[FlowState], scenario: &Scenario) -> Result<Vec<DiagnosticsRow>> {
    let mass = scenario.rho.mean();
    if (mass - 1.0).abs() > 1e-12 {
        info!(
            "density has mass {mass:.12}; Jensen side uses the normalized density with gauge shift log(mass) = {:.12}",
            mass.ln()
        );
    }
    let uddot = fd_second_derivatives(states);
    let kf = scenario.gauge_k();
    states
        .iter()
        .zip(&uddot)
        .map(|(s, d)| {
            // the gauge shift has second derivative −k e^{−t}
            let shifted: Vec<f64> = d.iter().map(|v| v - kf * (-s.t).exp()).collect();
            diagnostics(s, &shifted, scenario)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    /// Probe of an unproven statement found no counterexample.
    Consistent,
    /// Probe of an unproven statement found a counterexample candidate.
    Violated,
    /// Reporting-only probe.
    Reported,
}

impl Verdict {
    pub fn is_failure(self) -> bool {
        matches!(self, Verdict::Fail | Verdict::Violated)
    }
}

/// One sample supporting a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub t: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// The inequality being tested.
    pub anchor: String,
    pub fitted_constants: BTreeMap<String, f64>,
    pub burn_in: [f64; 2],
    pub verdict: Verdict,
    pub worst_margin: Option<f64>,
    pub evidence: Vec<Evidence>,
    pub notes: Vec<String>,
}

impl CheckResult {
    fn new(name: &str, anchor: &str) -> Self {
        Self {
            name: name.to_string(),
            anchor: anchor.to_string(),
            fitted_constants: BTreeMap::new(),
            burn_in: [0.0, BURN_IN],
            verdict: Verdict::Inconclusive,
            worst_margin: None,
            evidence: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn constant(mut self, key: &str, value: f64) -> Self {
        self.fitted_constants.insert(key.to_string(), value);
        self
    }

    fn inconclusive(name: &str, anchor: &str, why: String) -> Self {
        let mut r = Self::new(name, anchor);
        r.notes.push(why);
        r
    }

    /// Folds `(t, value, bound)` triples asserting `value ≤ bound`.
    fn assert_le(mut self, samples: impl IntoIterator<Item = (f64, f64, f64)>) -> Self {
        let mut worst: Option<(f64, Evidence)> = None;
        let mut last = None;
        let mut first = None;
        for (t, value, bound) in samples {
            let margin = bound - value;
            let ev = Evidence { t, value, bound };
            if first.is_none() {
                first = Some(ev.clone());
            }
            if worst.as_ref().is_none_or(|(m, _)| margin < *m || margin.is_nan()) {
                worst = Some((margin, ev.clone()));
            }
            last = Some(ev);
        }
        let Some((margin, ev)) = worst else {
            self.notes.push("no verification samples".into());
            self.verdict = Verdict::Inconclusive;
            return self;
        };
        let margin = match self.worst_margin {
            Some(m) => m.min(margin),
            None => margin,
        };
        self.worst_margin = Some(margin);
        let failed = self.verdict == Verdict::Fail;
        self.verdict = if !failed && margin >= 0.0 { Verdict::Pass } else { Verdict::Fail };
        for e in [first, Some(ev), last].into_iter().flatten() {
            if !self.evidence.contains(&e) {
                self.evidence.push(e);
            }
        }
        self
    }
}

/// Collection of check results for one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub scenario: String,
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.iter().any(|c| c.verdict.is_failure())
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Assembles a report, keeping the first result for each check name.
pub fn report(scenario: &str, checks: Vec<CheckResult>) -> CheckReport {
    let mut out: Vec<CheckResult> = Vec::with_capacity(checks.len());
    for c in checks {
        if !out.iter().any(|o| o.name == c.name) {
            out.push(c);
        }
    }
    CheckReport {
        scenario: scenario.to_string(),
        checks: out,
    }
}

fn margin(raw: f64) -> f64 {
    raw + 0.1 * raw.abs()
}

fn burn_in(rows: &[DiagnosticsRow]) -> impl Iterator<Item = &DiagnosticsRow> {
    rows.iter().filter(|r| r.t <= BURN_IN + EPS_T)
}

fn verification(rows: &[DiagnosticsRow]) -> impl Iterator<Item = &DiagnosticsRow> {
    rows.iter().filter(|r| r.t > BURN_IN + EPS_T)
}

/// Least-squares slope of `(t, y)` pairs.
pub fn slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let tm = points.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / m;
    let num: f64 = points.iter().map(|(t, y)| (t - tm) * (y - ym)).sum();
    let den: f64 = points.iter().map(|(t, _)| (t - tm) * (t - tm)).sum();
    num / den
}

fn late_window(trajectory: &Trajectory) -> (f64, f64) {
    let end = trajectory.final_time();
    (end - LATE_WINDOW, end)
}

fn late_slope(trajectory: &Trajectory, f: impl Fn(&DiagnosticsRow) -> f64) -> f64 {
    let (t0, _) = late_window(trajectory);
    let pts: Vec<(f64, f64)> = trajectory
        .rows
        .iter()
        .filter(|r| r.t >= t0 - EPS_T)
        .map(|r| (r.t, f(r)))
        .collect();
    slope(&pts)
}

fn no_forcing(trajectory: &Trajectory) -> Result<()> {
    if trajectory.scenario.forcing.is_some() {
        return Err(Error::InvalidScenario(
            "estimate checks require a run without forcing".into(),
        ));
    }
    Ok(())
}

/// Dense time grid on `[0, t_end]` for sup/inf of class data.
fn class_times(t_end: f64) -> impl Iterator<Item = f64> {
    (0..=4000).map(move |i| t_end * i as f64 / 4000.0)
}

fn log_rho_range(scenario: &Scenario) -> (f64, f64) {
    (scenario.rho.min().ln(), scenario.rho.max().ln())
}

pub const UPPER_BOUND_U: &str = "upper_bound_u";
pub const SECOND_DERIVATIVE_DECAY: &str = "second_derivative_decay";
pub const MONOTONICITY: &str = "monotonicity";
pub const VOLUME_IDENTITY: &str = "volume_identity";
pub const JENSEN_UPPER: &str = "jensen_upper";
pub const LOWER_CONTROL: &str = "lower_control";
pub const DERIVATIVE_RECURRENCE: &str = "derivative_recurrence";
pub const SEMIAMPLE_ASYMPTOTIC: &str = "semiample_asymptotic";
pub const CONJECTURE_PROBE: &str = "conjecture_probe";
pub const LIMIT_PROBE: &str = "limit_probe";
pub const RICCI_PROBE: &str = "ricci_probe";

/// `max u(t) ≤ max(0, K)` with `K = sup_{t,x} log(det(ω_t)/ρ(x))`.
pub fn check_upper_bound_u(trajectory: &Trajectory) -> Result<CheckResult> {
    no_forcing(trajectory)?;
    let sc = &trajectory.scenario;
    let poly = class::volume_polynomial(&sc.l, &sc.omega0)?;
    let sup_log_vol = class_times(trajectory.final_time())
        .map(|t| poly.at_time(t).ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let k_const = sup_log_vol - log_rho_range(sc).0;
    let bound = k_const.max(0.0) + TOL;
    Ok(CheckResult::new(UPPER_BOUND_U, "u ≤ max(0, sup log(det ω_t / ρ))")
        .constant("K", k_const)
        .assert_le(trajectory.rows.iter().map(|r| (r.t, r.max_u, bound))))
}

fn require_density(trajectory: &Trajectory) -> Result<()> {
    let ts = trajectory.times();
    let end = trajectory.final_time();
    let too_sparse = ts.windows(2).any(|w| w[1] - w[0] > 1.0 / 3.0 + EPS_T);
    if ts.len() < 4 || too_sparse || end <= BURN_IN {
        return Err(Error::InsufficientSampling(format!(
            "need at least 3 samples per unit time beyond t = {BURN_IN}, got {} samples on [0, {end}]",
            ts.len()
        )));
    }
    Ok(())
}

/// Fitted `(C, C')` of the second-derivative and first-derivative decay bounds.
pub fn decay_constants(rows: &[DiagnosticsRow]) -> (f64, f64) {
    let c = burn_in(rows)
        .map(|r| r.t.exp() * r.uddot_plus_udot_max.max(0.0))
        .fold(0.0, f64::max);
    let c1 = burn_in(rows)
        .map(|r| (0.5 * r.t).exp() * r.max_udot.max(0.0))
        .fold(0.0, f64::max);
    (margin(c), margin(c1))
}

/// `∂²u/∂t² + ∂u/∂t ≤ C e^{−t}` and `∂u/∂t ≤ C' e^{−t/2}`.
pub fn check_second_derivative_decay(trajectory: &Trajectory) -> Result<CheckResult> {
    no_forcing(trajectory)?;
    require_density(trajectory)?;
    let rows = &trajectory.rows;
    let (c, c1) = decay_constants(rows);
    let first = verification(rows).map(|r| (r.t, r.uddot_plus_udot_max, c * (-r.t).exp() + TOL));
    let second = verification(rows).map(|r| (r.t, r.max_udot, c1 * (-0.5 * r.t).exp() + TOL));
    Ok(
        CheckResult::new(SECOND_DERIVATIVE_DECAY, "∂²u/∂t² + ∂u/∂t ≤ C e^{−t}; ∂u/∂t ≤ C' e^{−t/2}")
            .constant("C", c)
            .constant("C_prime", c1)
            .assert_le(first)
            .assert_le(second),
    )
}

/// `max(u + 2C'e^{−t/2})` and `max(∂u/∂t + u + Ce^{−t})` are non-increasing.
pub fn check_monotonicity(trajectory: &Trajectory) -> Result<CheckResult> {
    no_forcing(trajectory)?;
    require_density(trajectory)?;
    let rows = &trajectory.rows;
    let (c, c1) = decay_constants(rows);
    let pairs = || rows.windows(2).filter(|w| w[1].t > BURN_IN + EPS_T);
    let a = |r: &DiagnosticsRow| r.max_u + 2.0 * c1 * (-0.5 * r.t).exp();
    let b = |r: &DiagnosticsRow| r.udot_plus_u_max + c * (-r.t).exp();
    Ok(CheckResult::new(
        MONOTONICITY,
        "u + 2C' e^{−t/2} and ∂u/∂t + u + C e^{−t} non-increasing",
    )
    .constant("C", c)
    .constant("C_prime", c1)
    .assert_le(pairs().map(|w| (w[1].t, a(&w[1]) - a(&w[0]), MONOTONE_TOL)))
    .assert_le(pairs().map(|w| (w[1].t, b(&w[1]) - b(&w[0]), MONOTONE_TOL))))
}

/// `∫ e^{∂u/∂t + u} Ω = det(ω_t)` at every sample.
pub fn check_volume_identity(trajectory: &Trajectory) -> Result<CheckResult> {
    no_forcing(trajectory)?;
    let rows = &trajectory.rows;
    let scale = rows.first().map_or(1.0, |r| r.class_volume);
    let bound = 1e-6 * scale;
    let mut r = CheckResult::new(VOLUME_IDENTITY, "∫ e^{∂u/∂t + u} Ω = [ω_t]^n");
    r.burn_in = [0.0, 0.0];
    Ok(r
        .constant("class_volume_0", scale)
        .assert_le(rows.iter().map(|r| (r.t, (r.volume_integral - r.class_volume).abs(), bound))))
}

/// `∫(∂u/∂t + u)Ω ≤ log[ω_t]^n` exactly, and `≤ −kt + C` after burn-in.
pub fn check_jensen_upper(trajectory: &Trajectory) -> Result<CheckResult> {
    no_forcing(trajectory)?;
    let sc = &trajectory.scenario;
    let rows = &trajectory.rows;
    let k = if sc.l.is_nef() {
        class::collapse_order(&sc.l, &sc.omega0)? as f64
    } else {
        0.0
    };
    let fitted = margin(
        burn_in(rows)
            .map(|r| r.jensen_lhs + k * r.t)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    // the Jensen gap may shrink after burn-in, so the asserted constant is the
    // class-level one the estimate is derived from
    let poly = class::volume_polynomial(&sc.l, &sc.omega0)?;
    let c = class_times(trajectory.final_time())
        .map(|t| poly.at_time(t).ln() + k * t)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = CheckResult::new(JENSEN_UPPER, "∫(∂u/∂t + u)Ω ≤ log[ω_t]^n; ∫(∂u/∂t + u)Ω ≤ −kt + C")
        .constant("C", c)
        .constant("burn_in_fit", fitted)
        .constant("k", k)
        .assert_le(rows.iter().map(|r| (r.t, r.jensen_lhs, r.class_volume.ln() + JENSEN_TOL)))
        .assert_le(rows.iter().map(|r| (r.t, r.jensen_lhs, r.volume_integral.ln() + JENSEN_TOL)))
        .assert_le(verification(rows).map(|r| (r.t, r.jensen_lhs, c - k * r.t + TOL)));
    let gap = rows
        .iter()
        .map(|r| r.class_volume.ln() - r.jensen_lhs)
        .fold(f64::INFINITY, f64::min);
    out.fitted_constants.insert("min_gap".into(), gap);
    let mass = sc.rho.mean();
    if (mass - 1.0).abs() > 1e-12 {
        out.notes.push(format!("density normalized to unit mass; gauge shift log(mass) = {:.12}", mass.ln()));
    }
    Ok(out)
}

/// Verifies that `φ` keeps `L + i∂∂̄φ` positive semidefinite on the grid.
pub fn validate_phi(l: &CohomologyClass, phi: &ScalarField) -> Result<()> {
    let form = grid::form_field(l, phi)?;
    let min = grid::min_eigenvalue(&form).min();
    let scale = l.eigenvalues().iter().fold(1.0f64, |a, e| a.max(e.abs()));
    if min < -1e-10 * scale {
        return Err(Error::InvalidScenario(format!(
            "L + i∂∂̄φ is not semidefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

fn lower_series(trajectory: &Trajectory, phi: Option<&ScalarField>, with_udot: bool) -> Result<Vec<(f64, f64)>> {
    let sc = &trajectory.scenario;
    let phi = phi.unwrap_or(&sc.phi);
    validate_phi(&sc.l, phi)?;
    if **phi.grid() != *sc.grid {
        return Err(Error::GridMismatch);
    }
    let n = sc.n() as f64;
    trajectory
        .states
        .iter()
        .map(|s| {
            let (u, u_dot) = s.u_gauge(sc)?;
            let m = (0..u.values().len())
                .map(|p| {
                    let base = u.values()[p] - phi.values()[p];
                    if with_udot {
                        base + u_dot.values()[p] + n * s.t
                    } else {
                        base
                    }
                })
                .fold(f64::INFINITY, f64::min);
            Ok((s.t, m))
        })
        .collect()
}

/// `∂u/∂t + u + nt ≥ φ + C` for `φ ∈ PSH_L`.
pub fn check_lower_control(trajectory: &Trajectory, phi: Option<&ScalarField>) -> Result<CheckResult> {
    no_forcing(trajectory)?;
    let series = lower_series(trajectory, phi, true)?;
    let raw = series
        .iter()
        .filter(|(t, _)| *t <= BURN_IN + EPS_T)
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    let c = raw - 0.1 * raw.abs();
    let mut out = CheckResult::new(LOWER_CONTROL, "∂u/∂t + u + nt ≥ φ + C")
        .constant("C", c)
        .assert_le(
            series
                .iter()
                .filter(|(t, _)| *t > BURN_IN + EPS_T)
                .map(|&(t, q)| (t, c - TOL, q)),
        );
    let mut running = f64::INFINITY;
    let curve: Vec<String> = series
        .iter()
        .filter(|(t, _)| *t > BURN_IN + EPS_T)
        .step_by(20)
        .map(|&(t, q)| {
            running = running.min(q);
            format!("{t:.3}:{running:.6e}")
        })
        .collect();
    out.notes.push(format!("running minimum: {}", curve.join(" ")));
    Ok(out)
}

/// In every unit window after burn-in some sample has `max ∂u/∂t ≥ −n − ε`.
pub fn check_derivative_recurrence(trajectory: &Trajectory, epsilon: f64) -> Result<CheckResult> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidScenario(format!("epsilon must be positive, got {epsilon}")));
    }
    let sc = &trajectory.scenario;
    let rows = &trajectory.rows;
    let end = trajectory.final_time();
    let threshold = -(sc.n() as f64) - epsilon;
    let mut out = CheckResult::new(DERIVATIVE_RECURRENCE, "max ∂u/∂t ≥ −n − ε along a sequence t_i → ∞")
        .constant("epsilon", epsilon);
    let mut windows = Vec::new();
    let mut t0 = BURN_IN;
    while t0 + 1.0 <= end + EPS_T {
        windows.push((t0, t0 + 1.0));
        t0 += 1.0;
    }
    if windows.is_empty() && end > BURN_IN {
        windows.push((BURN_IN, end));
    }
    if windows.is_empty() {
        out.notes.push("trajectory ends before the burn-in window closes".into());
        return Ok(out);
    }
    let mut witnesses = Vec::new();
    let mut samples = Vec::new();
    for (a, b) in windows {
        let best = rows
            .iter()
            .filter(|r| r.t >= a - EPS_T && r.t <= b + EPS_T)
            .max_by(|x, y| x.max_udot.total_cmp(&y.max_udot));
        match best {
            Some(r) => {
                witnesses.push(format!("{:.3}", r.t));
                samples.push((r.t, threshold, r.max_udot));
            }
            None => samples.push((a, threshold, f64::NEG_INFINITY)),
        }
    }
    out = out.assert_le(samples);
    out.notes.push(format!("witness times: {}", witnesses.join(" ")));
    Ok(out)
}

/// `u ∼ −kt` with `v = u − f(t)` bounded and trend-free.
pub fn check_semiample_asymptotic(trajectory: &Trajectory, k: Option<usize>) -> Result<CheckResult> {
    let sc = &trajectory.scenario;
    let anchor = "mean u slope = −k; |v| ≤ C with no growth";
    if !sc.l.is_nef() {
        return Ok(CheckResult::inconclusive(SEMIAMPLE_ASYMPTOTIC, anchor, "L is not nef".into()));
    }
    let k = match k {
        Some(k) => k,
        None => class::collapse_order(&sc.l, &sc.omega0)?,
    };
    let end = trajectory.final_time();
    if end < 10.0 - EPS_T {
        return Ok(CheckResult::inconclusive(
            SEMIAMPLE_ASYMPTOTIC,
            anchor,
            format!("needs t_max ≥ 10, trajectory ends at {end}"),
        ));
    }
    let kf = k as f64;
    let poly = class::volume_polynomial(&sc.l, &sc.omega0)?;
    let (lo_rho, hi_rho) = log_rho_range(sc);
    let (mut sup, mut inf) = (f64::NEG_INFINITY, f64::INFINITY);
    for t in class_times(end) {
        let g = poly.at_time(t).ln() + kf * t;
        sup = sup.max(g);
        inf = inf.min(g);
    }
    // maximum-principle comparison for v' + v = log(det g̃/ρ) + kt, v(0) = 0
    let c_v = (sup - lo_rho).max(0.0).max(-(inf - hi_rho).min(0.0));
    let abs_v = |r: &DiagnosticsRow| {
        let f = flow::shift(kf, r.t);
        (r.max_u - f).abs().max((r.min_u - f).abs())
    };
    let mean_slope = late_slope(trajectory, |r| r.mean_u);
    let v_slope = late_slope(trajectory, abs_v);
    let (t0, _) = late_window(trajectory);
    let mut out = CheckResult::new(SEMIAMPLE_ASYMPTOTIC, anchor)
        .constant("k", kf)
        .constant("C_v", c_v)
        .constant("mean_u_slope", mean_slope)
        .constant("abs_v_slope", v_slope)
        .assert_le(trajectory.rows.iter().map(|r| (r.t, abs_v(r), c_v + TOL)))
        .assert_le([(end, (mean_slope + kf).abs(), 0.05), (end, v_slope.abs(), 0.01)]);
    out.burn_in = [t0, end];
    let late_udot = trajectory.rows.last().map_or(0.0, |r| r.max_udot.abs().max(r.min_udot.abs()));
    out.notes.push(format!("late |∂u/∂t| = {late_udot:.6e}"));
    Ok(out)
}

/// Probes `∂u/∂t ≥ −C` and `u ≥ −kt − C + φ` through late-window trends.
pub fn check_conjecture(trajectory: &Trajectory, phi: Option<&ScalarField>) -> Result<CheckResult> {
    let sc = &trajectory.scenario;
    let anchor = "∂u/∂t ≥ −C and u ≥ −kt − C + φ";
    if !sc.l.is_nef() {
        return Ok(CheckResult::inconclusive(CONJECTURE_PROBE, anchor, "L is not nef".into()));
    }
    let end = trajectory.final_time();
    if end < BURN_IN + LATE_WINDOW - EPS_T {
        return Ok(CheckResult::inconclusive(
            CONJECTURE_PROBE,
            anchor,
            format!("needs t_max ≥ {}, trajectory ends at {end}", BURN_IN + LATE_WINDOW),
        ));
    }
    let kf = class::collapse_order(&sc.l, &sc.omega0)? as f64;
    let series = lower_series(trajectory, phi, false)?;
    let (t0, _) = late_window(trajectory);
    let late: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= t0 - EPS_T)
        .map(|&(t, m)| (t, m + kf * t))
        .collect();
    let udot_slope = late_slope(trajectory, |r| r.min_udot);
    let lower_slope = slope(&late);
    let min_udot = trajectory.rows.iter().map(|r| r.min_udot).fold(f64::INFINITY, f64::min);
    let min_lower = series.iter().map(|&(t, m)| m + kf * t).fold(f64::INFINITY, f64::min);
    let mut out = CheckResult::new(CONJECTURE_PROBE, anchor)
        .constant("k", kf)
        .constant("min_udot_slope", udot_slope)
        .constant("lower_slope", lower_slope)
        .constant("inf_udot", min_udot)
        .constant("inf_u_plus_kt_minus_phi", min_lower);
    out.burn_in = [t0, end];
    let worst = udot_slope.min(lower_slope) + 0.01;
    out.worst_margin = Some(worst);
    out.evidence.push(Evidence { t: end, value: udot_slope, bound: -0.01 });
    out.evidence.push(Evidence { t: end, value: lower_slope, bound: -0.01 });
    out.verdict = if worst >= 0.0 {
        Verdict::Consistent
    } else {
        log::error!(
            "conjecture probe violated on '{}': slopes {udot_slope:e}, {lower_slope:e}",
            sc.name
        );
        out.notes.push("VIOLATED: a lower bound shows a decreasing late trend".into());
        Verdict::Violated
    };
    Ok(out)
}

fn classify(slope: f64) -> &'static str {
    if slope < -0.1 {
        "diverging"
    } else if slope.abs() <= 0.01 {
        "stabilizing"
    } else {
        "undetermined"
    }
}

/// Reports late-time trends of `u` and `∂u/∂t + u`.
pub fn probe_limits(trajectory: &Trajectory) -> Result<CheckResult> {
    let anchor = "u(·, ∞) and (∂u/∂t + u)(·, ∞) diverge or stabilize together";
    let end = trajectory.final_time();
    if end < 10.0 - EPS_T {
        return Ok(CheckResult::inconclusive(
            LIMIT_PROBE,
            anchor,
            format!("needs t_max ≥ 10, trajectory ends at {end}"),
        ));
    }
    let su = late_slope(trajectory, |r| r.mean_u);
    let sw = late_slope(trajectory, |r| r.udot_plus_u_mean);
    let (cu, cw) = (classify(su), classify(sw));
    let mut out = CheckResult::new(LIMIT_PROBE, anchor)
        .constant("u_slope", su)
        .constant("udot_plus_u_slope", sw);
    let (t0, _) = late_window(trajectory);
    out.burn_in = [t0, end];
    out.verdict = Verdict::Reported;
    out.notes.push(format!("u: {cu}; ∂u/∂t + u: {cw}; classifications agree: {}", cu == cw));
    if let Some(r) = trajectory.rows.last() {
        out.notes.push(format!(
            "late ∂u/∂t in [{:.6e}, {:.6e}] (convergence to 0 not asserted)",
            r.min_udot, r.max_udot
        ));
    }
    Ok(out)
}

/// Reports Ricci extrema against the oscillation of `u` and the lower bound of `∂u/∂t`.
pub fn probe_ricci(trajectory: &Trajectory) -> Result<CheckResult> {
    let rows = &trajectory.rows;
    let ric_lo = rows.iter().map(|r| r.ric_min).fold(f64::INFINITY, f64::min);
    let ric_hi = rows.iter().map(|r| r.ric_max).fold(f64::NEG_INFINITY, f64::max);
    let osc_slope = late_slope(trajectory, |r| r.osc_u);
    let osc_max = rows.iter().map(|r| r.osc_u).fold(0.0, f64::max);
    let late_min_udot = rows.last().map_or(0.0, |r| r.min_udot);
    let mut out = CheckResult::new(RICCI_PROBE, "Ric ≥ α ⇒ osc u bounded; Ric ≤ C ⇒ ∂u/∂t ≥ −C")
        .constant("ric_min", ric_lo)
        .constant("ric_max", ric_hi)
        .constant("osc_u_max", osc_max);
    if osc_slope.is_finite() {
        out.fitted_constants.insert("osc_u_late_slope".into(), osc_slope);
    }
    out.burn_in = [0.0, trajectory.final_time()];
    out.verdict = Verdict::Reported;
    let bounded = osc_slope.is_nan() || osc_slope.abs() <= 0.01;
    out.notes.push(format!(
        "Ricci bounded below by {ric_lo:.6e}; oscillation trend-free: {bounded}"
    ));
    out.notes.push(format!("Ricci bounded above by {ric_hi:.6e}; late min ∂u/∂t = {late_min_udot:.6e}"));
    Ok(out)
}

/// A configured check with resolved parameters.
#[derive(Clone, Debug)]
pub enum Check {
    UpperBoundU,
    SecondDerivativeDecay,
    Monotonicity,
    VolumeIdentity,
    JensenUpper,
    LowerControl { phi: Option<ScalarField> },
    DerivativeRecurrence { epsilon: f64 },
    SemiampleAsymptotic { k: Option<usize> },
    ConjectureProbe { phi: Option<ScalarField> },
    LimitProbe,
    RicciProbe,
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::UpperBoundU => UPPER_BOUND_U,
            Check::SecondDerivativeDecay => SECOND_DERIVATIVE_DECAY,
            Check::Monotonicity => MONOTONICITY,
            Check::VolumeIdentity => VOLUME_IDENTITY,
            Check::JensenUpper => JENSEN_UPPER,
            Check::LowerControl { .. } => LOWER_CONTROL,
            Check::DerivativeRecurrence { .. } => DERIVATIVE_RECURRENCE,
            Check::SemiampleAsymptotic { .. } => SEMIAMPLE_ASYMPTOTIC,
            Check::ConjectureProbe { .. } => CONJECTURE_PROBE,
            Check::LimitProbe => LIMIT_PROBE,
            Check::RicciProbe => RICCI_PROBE,
        }
    }

    /// Every check with default parameters.
    pub fn default_suite() -> Vec<Check> {
        vec![
            Check::UpperBoundU,
            Check::SecondDerivativeDecay,
            Check::Monotonicity,
            Check::VolumeIdentity,
            Check::JensenUpper,
            Check::LowerControl { phi: None },
            Check::DerivativeRecurrence { epsilon: 0.1 },
            Check::SemiampleAsymptotic { k: None },
            Check::ConjectureProbe { phi: None },
            Check::LimitProbe,
            Check::RicciProbe,
        ]
    }

    pub fn evaluate(&self, trajectory: &Trajectory) -> Result<CheckResult> {
        match self {
            Check::UpperBoundU => check_upper_bound_u(trajectory),
            Check::SecondDerivativeDecay => check_second_derivative_decay(trajectory),
            Check::Monotonicity => check_monotonicity(trajectory),
            Check::VolumeIdentity => check_volume_identity(trajectory),
            Check::JensenUpper => check_jensen_upper(trajectory),
            Check::LowerControl { phi } => check_lower_control(trajectory, phi.as_ref()),
            Check::DerivativeRecurrence { epsilon } => check_derivative_recurrence(trajectory, *epsilon),
            Check::SemiampleAsymptotic { k } => check_semiample_asymptotic(trajectory, *k),
            Check::ConjectureProbe { phi } => check_conjecture(trajectory, phi.as_ref()),
            Check::LimitProbe => probe_limits(trajectory),
            Check::RicciProbe => probe_ricci(trajectory),
        }
    }
}

/// Runs the checks; a precondition error turns into an inconclusive result.
pub fn run_checks(trajectory: &Trajectory, checks: &[Check]) -> CheckReport {
    let results = checks
        .iter()
        .map(|c| {
            c.evaluate(trajectory)
                .unwrap_or_else(|e| CheckResult::inconclusive(c.name(), "", e.to_string()))
        })
        .collect();
    report(&trajectory.scenario.name, results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Backend, PeriodicGrid, RealAxis};

    #[test]
    fn time_derivative_is_exact_on_quadratics() {
        let ts = [0.0, 0.1, 0.25, 0.3, 0.5];
        let vals: Vec<Vec<f64>> = ts.iter().map(|t| vec![t * t - 2.0 * t]).collect();
        let refs: Vec<&[f64]> = vals.iter().map(|v| v.as_slice()).collect();
        let d = time_derivative(&ts, &refs);
        for (t, v) in ts.iter().zip(&d) {
            assert!((v[0] - (2.0 * t - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_of_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        assert!((slope(&pts) + 0.5).abs() < 1e-14);
        assert!(slope(&pts[..1]).is_nan());
    }

    #[test]
    fn margin_widens_both_signs() {
        assert_eq!(margin(1.0), 1.1);
        assert_eq!(margin(-1.0), -0.9);
        assert_eq!(margin(0.0), 0.0);
    }

    #[test]
    fn empty_report_is_valid() {
        let r = report("empty", vec![]);
        assert!(r.checks.is_empty());
        assert!(r.passed());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<CheckReport>(&json).unwrap(), r);
    }

    #[test]
    fn report_keeps_each_name_once() {
        let a = CheckResult::new("a", "");
        let r = report("s", vec![a.clone(), a.clone(), CheckResult::new("b", "")]);
        assert_eq!(r.checks.len(), 2);
    }

    #[test]
    fn diagnostics_of_flat_kahler_state() {
        let grid = PeriodicGrid::new(2, &[RealAxis::X(0)], 8, Backend::Spectral).unwrap();
        let rho = ScalarField::constant(grid.clone(), 1.0);
        let id = CohomologyClass::identity(2);
        let sc = Scenario::new("flat", grid.clone(), id.clone(), id, rho);
        let s = FlowState::initial(&sc).unwrap();
        let row = diagnostics(&s, &[0.0; 8], &sc).unwrap();
        assert_eq!(row.osc_u, 0.0);
        assert_eq!(row.ric_min, 0.0);
        assert_eq!(row.ric_max, 0.0);
        assert!((row.min_eig_metric - 1.0).abs() < 1e-15);
        assert!((row.volume_integral - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collapsed_state_at_unit_time() {
        let grid = PeriodicGrid::new(2, &[RealAxis::X(0)], 8, Backend::Spectral).unwrap();
        let rho = ScalarField::constant(grid.clone(), 1.0);
        let sc = Scenario::new(
            "collapsed",
            grid.clone(),
            CohomologyClass::diagonal(&[1.0, 0.0]),
            CohomologyClass::identity(2),
            rho,
        );
        let e = (-1.0f64).exp();
        let u = ScalarField::constant(grid.clone(), -e);
        let u_dot = flow::rhs(&u, 1.0, &sc).unwrap();
        let s = FlowState { t: 1.0, u, u_dot };
        let row = diagnostics(&s, &[0.0; 8], &sc).unwrap();
        assert!((row.max_udot - (-1.0 + e)).abs() < 1e-14);
        assert!((row.jensen_lhs + 1.0).abs() < 1e-14);
        assert!((row.class_volume - e).abs() < 1e-15);
        assert!((row.lower_control_min - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_psh_phi() {
        let grid = PeriodicGrid::new(2, &[RealAxis::X(0)], 16, Backend::Spectral).unwrap();
        let l = CohomologyClass::diagonal(&[1.0, 0.0]);
        let good = ScalarField::from_fn(grid.clone(), |x| x[0].cos()).unwrap();
        let bad = ScalarField::from_fn(grid.clone(), |x| 8.0 * x[0].cos()).unwrap();
        assert!(validate_phi(&l, &good).is_ok());
        assert!(validate_phi(&l, &bad).is_err());
        assert!(validate_phi(&l, &ScalarField::zeros(grid)).is_ok());
    }
}
