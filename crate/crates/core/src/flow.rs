//! Time integration of the scalar potential flow
//!
//! ```text
//! ∂u/∂t = log(det(ω_t + i∂∂̄u) / ρ) − u  (+ k t in the v-gauge),   u(·, 0) = 0
//! ```
//!
//! by explicit RK4 on the method-of-lines system, with step-doubling error
//! control and a pointwise positivity guard on the evolving metric.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::class::{self, CohomologyClass};
use crate::error::{Error, Result};
use crate::grid::{self, HermitianMatrixField, PeriodicGrid, RealAxis, ScalarField};
use crate::herm;
use crate::verify::{self, DiagnosticsRow};

/// Which potential is evolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gauge {
    /// `u`, the potential of the unmodified equation.
    #[default]
    U,
    /// `v = u − f(t)` with `f' + f = −k t`, `f(0) = 0`.
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    /// Positivity floor `ε_pos` for the smallest metric eigenvalue.
    pub pos_floor: f64,
    /// Plain RK4 with this step instead of adaptive stepping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_dt: Option<f64>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            dt_init: 1e-3,
            dt_min: 1e-7,
            pos_floor: 1e-8,
            fixed_dt: None,
        }
    }
}

/// Space-time source term `F(x, t)` added to the right-hand side (testing only).
pub type Forcing = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Density as a function of the real coordinates.
pub type Density = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Full problem statement for one flow run.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub grid: Arc<PeriodicGrid>,
    pub l: CohomologyClass,
    pub omega0: CohomologyClass,
    pub rho: ScalarField,
    /// Comparison potential for the lower-control checks.
    pub phi: ScalarField,
    pub gauge: Gauge,
    pub k: usize,
    pub t_max: f64,
    pub sample_dt: f64,
    pub forcing: Option<Forcing>,
    pub integrator: IntegratorSettings,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("grid", &self.grid)
            .field("l", &self.l)
            .field("omega0", &self.omega0)
            .field("gauge", &self.gauge)
            .field("k", &self.k)
            .field("t_max", &self.t_max)
            .field("sample_dt", &self.sample_dt)
            .field("forcing", &self.forcing.is_some())
            .field("integrator", &self.integrator)
            .finish()
    }
}

impl Scenario {
    /// Scenario with default gauge, sampling and integrator settings; `k`
    /// defaults to the collapse order when `L` is nef and to 0 otherwise.
    pub fn new(
        name: impl Into<String>,
        grid: Arc<PeriodicGrid>,
        l: CohomologyClass,
        omega0: CohomologyClass,
        rho: ScalarField,
    ) -> Self {
        let k = class::collapse_order(&l, &omega0).unwrap_or(0);
        let phi = ScalarField::zeros(grid.clone());
        Self {
            name: name.into(),
            grid,
            l,
            omega0,
            rho,
            phi,
            gauge: Gauge::U,
            k,
            t_max: 10.0,
            sample_dt: 0.05,
            forcing: None,
            integrator: IntegratorSettings::default(),
        }
    }

    pub fn with_gauge(mut self, gauge: Gauge) -> Self {
        self.gauge = gauge;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_sample_dt(mut self, sample_dt: f64) -> Self {
        self.sample_dt = sample_dt;
        self
    }

    pub fn with_phi(mut self, phi: ScalarField) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn with_integrator(mut self, integrator: IntegratorSettings) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for c in [&self.l, &self.omega0] {
            if c.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: c.n(),
                });
            }
        }
        if **self.rho.grid() != *self.grid || **self.phi.grid() != *self.grid {
            return Err(Error::GridMismatch);
        }
        if !class::kahler_check(&self.omega0) {
            return Err(Error::NotKahler(self.omega0.min_eigenvalue()));
        }
        if let Some((index, &value)) = self.rho.values().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositiveDensity { index, value });
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidScenario(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt <= self.t_max) {
            return Err(Error::InvalidScenario(format!(
                "sample_dt must lie in (0, t_max], got {}",
                self.sample_dt
            )));
        }
        let horizon = class::singularity_time(&self.l, &self.omega0)?;
        if self.t_max >= horizon {
            return Err(Error::InvalidScenario(format!(
                "t_max = {} reaches the singularity time T = {horizon:.12}",
                self.t_max
            )));
        }
        let s = &self.integrator;
        let positive = [s.rtol, s.atol, s.dt_init, s.dt_min, s.pos_floor];
        if positive.iter().any(|v| !(*v > 0.0)) || s.fixed_dt.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::InvalidScenario("integrator settings must be positive".into()));
        }
        Ok(())
    }

    /// Sample times `0, Δ, 2Δ, …, t_max`.
    pub fn sample_times(&self) -> Vec<f64> {
        let m = (self.t_max / self.sample_dt - 1e-9).ceil() as usize;
        (0..=m).map(|i| (i as f64 * self.sample_dt).min(self.t_max)).collect()
    }

    pub fn class_at(&self, t: f64) -> Result<CohomologyClass> {
        class::class_path(&self.l, &self.omega0, t)
    }

    /// `k` entering the gauge shift of the current gauge (0 in the u-gauge).
    pub fn gauge_k(&self) -> f64 {
        match self.gauge {
            Gauge::U => 0.0,
            Gauge::V => self.k as f64,
        }
    }
}

/// `f(t) = k(1 − e^{−t}) − k t`, the solution of `f' + f = −k t`, `f(0) = 0`.
pub fn shift(k: f64, t: f64) -> f64 {
    k * (1.0 - (-t).exp()) - k * t
}

/// `f'(t) = k e^{−t} − k`.
pub fn shift_rate(k: f64, t: f64) -> f64 {
    k * (-t).exp() - k
}

/// One point of the flow.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    /// Potential in the scenario's gauge.
    pub u: ScalarField,
    /// Right-hand side evaluated at `(u, t)`.
    pub u_dot: ScalarField,
}

impl FlowState {
    pub fn initial(scenario: &Scenario) -> Result<Self> {
        let u = ScalarField::zeros(scenario.grid.clone());
        let u_dot = rhs(&u, 0.0, scenario)?;
        Ok(Self { t: 0.0, u, u_dot })
    }

    /// Evolving metric `ω_t + i∂∂̄u`.
    pub fn metric(&self, scenario: &Scenario) -> Result<HermitianMatrixField> {
        grid::form_field(&scenario.class_at(self.t)?, &self.u)
    }

    /// `(u, ∂u/∂t)` of the unshifted potential, whatever the gauge.
    pub fn u_gauge(&self, scenario: &Scenario) -> Result<(ScalarField, ScalarField)> {
        match scenario.gauge {
            Gauge::U => Ok((self.u.clone(), self.u_dot.clone())),
            Gauge::V => {
                let k = scenario.k as f64;
                let (f, df) = (shift(k, self.t), shift_rate(k, self.t));
                Ok((self.u.map(|v| v + f)?, self.u_dot.map(|v| v + df)?))
            }
        }
    }
}

/// Right-hand side of the flow at `(u, t)`.
pub fn rhs(u: &ScalarField, t: f64, scenario: &Scenario) -> Result<ScalarField> {
    let grid = u.grid();
    let n = grid.n();
    let metric = grid::form_field(&scenario.class_at(t)?, u)?;
    let floor = scenario.integrator.pos_floor;
    let gauge_term = scenario.gauge_k() * t;
    let mut out = Vec::with_capacity(grid.num_points());
    let mut breach: Option<(f64, usize)> = None;
    for (p, m) in metric.points().enumerate() {
        let min_eig = herm::min_eigenvalue(m, n);
        if !(min_eig > floor) {
            if breach.is_none_or(|(worst, _)| min_eig < worst) {
                breach = Some((min_eig, p));
            }
            continue;
        }
        let det = herm::det(m, n).re;
        let mut value = (det / scenario.rho.values()[p]).ln() - u.values()[p] + gauge_term;
        if let Some(force) = &scenario.forcing {
            value += force(&grid.coordinates(p), t);
        }
        out.push(value);
    }
    if let Some((min_eig, index)) = breach {
        return Err(Error::GuardBreach { min_eig, index });
    }
    ScalarField::new(grid.clone(), out)
}

fn axpy(u: &ScalarField, a: f64, k: &ScalarField) -> Result<ScalarField> {
    u.zip_with(k, |x, y| x + a * y)
}

fn rk4(u: &ScalarField, t: f64, dt: f64, k1: &ScalarField, scenario: &Scenario) -> Result<ScalarField> {
    let k2 = rhs(&axpy(u, 0.5 * dt, k1)?, t + 0.5 * dt, scenario)?;
    let k3 = rhs(&axpy(u, 0.5 * dt, &k2)?, t + 0.5 * dt, scenario)?;
    let k4 = rhs(&axpy(u, dt, &k3)?, t + dt, scenario)?;
    let values = (0..u.values().len())
        .map(|i| {
            u.values()[i]
                + dt / 6.0 * (k1.values()[i] + 2.0 * k2.values()[i] + 2.0 * k3.values()[i] + k4.values()[i])
        })
        .collect();
    ScalarField::new(u.grid().clone(), values)
}

/// Result of one step-doubled RK4 step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: FlowState,
    /// Local error estimate in units of the tolerance (`≤ 1` means acceptable).
    pub error: f64,
    /// Largest pointwise |two half steps − one full step|.
    pub raw_difference: f64,
}

/// Advances by `dt` using two half steps, with one full step as the error reference.
pub fn step(state: &FlowState, dt: f64, scenario: &Scenario) -> Result<StepOutcome> {
    if !(dt > 0.0) {
        return Err(Error::InvalidScenario(format!("step size must be positive, got {dt}")));
    }
    let full = rk4(&state.u, state.t, dt, &state.u_dot, scenario)?;
    let half = rk4(&state.u, state.t, 0.5 * dt, &state.u_dot, scenario)?;
    let mid = state.t + 0.5 * dt;
    let half_dot = rhs(&half, mid, scenario)?;
    let two = rk4(&half, mid, 0.5 * dt, &half_dot, scenario)?;
    let t = state.t + dt;
    let u_dot = rhs(&two, t, scenario)?;
    let s = &scenario.integrator;
    let mut error = 0.0f64;
    let mut raw = 0.0f64;
    for ((a, b), c) in two.values().iter().zip(full.values()).zip(state.u.values()) {
        let diff = (a - b).abs();
        raw = raw.max(diff);
        error = error.max(diff / 15.0 / (s.atol + s.rtol * a.abs().max(c.abs())));
    }
    Ok(StepOutcome {
        state: FlowState { t, u: two, u_dot },
        error,
        raw_difference: raw,
    })
}

/// Largest step keeping explicit RK4 well inside its stability region.
///
/// The linearized right-hand side is `Δ_g − 1`; its spectral radius is bounded
/// by the largest symbol of the discrete second derivative times the largest
/// eigenvalue of `g^{-1}` on the active complex directions.
pub fn stability_limit(state: &FlowState, scenario: &Scenario) -> Result<f64> {
    let grid = &scenario.grid;
    let n = grid.n();
    let active: Vec<usize> = {
        let mut v: Vec<usize> = grid.active_axes().iter().map(|a| a.complex_index()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if active.is_empty() {
        return Ok(f64::INFINITY);
    }
    let axes = grid.active_axes().len() as f64;
    let res = grid.resolution() as f64;
    let symbol = match grid.backend() {
        grid::Backend::Spectral => (0.5 * res - 1.0).powi(2),
        grid::Backend::Fd4 => 16.0 / 3.0 / grid.spacing().powi(2),
    };
    let metric = state.metric(scenario)?;
    let m = active.len();
    let mut worst = 0.0f64;
    for (index, g) in metric.points().enumerate() {
        let inv = herm::inverse(g, n).ok_or(Error::GuardBreach { min_eig: 0.0, index })?;
        let sub: Vec<_> = active
            .iter()
            .flat_map(|&j| active.iter().map(move |&k| (j, k)))
            .map(|(j, k)| inv[j * n + k])
            .collect();
        worst = worst.max(herm::eigenvalues(&sub, m)[m - 1]);
    }
    let radius = 0.25 * axes * symbol * worst + 1.0;
    Ok(2.0 / radius)
}

/// Plain RK4 step (used by the fixed-step mode).
pub fn step_fixed(state: &FlowState, dt: f64, scenario: &Scenario) -> Result<FlowState> {
    let u = rk4(&state.u, state.t, dt, &state.u_dot, scenario)?;
    let t = state.t + dt;
    let u_dot = rhs(&u, t, scenario)?;
    Ok(FlowState { t, u, u_dot })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    PositivityBreakdown { t: f64, min_eig: f64, index: usize },
    StepSizeUnderflow { t: f64 },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Completed => f.write_str("completed"),
            Termination::PositivityBreakdown { t, min_eig, index } => {
                write!(f, "positivity breakdown at t = {t:.6} (min eigenvalue {min_eig:e} at point {index})")
            }
            Termination::StepSizeUnderflow { t } => write!(f, "step size underflow at t = {t:.6}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub accepted: usize,
    pub rejected: usize,
    pub guard_rejections: usize,
}

/// Sampled flow plus per-sample diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub scenario: Arc<Scenario>,
    pub states: Vec<FlowState>,
    pub rows: Vec<DiagnosticsRow>,
    pub termination: Termination,
    pub stats: RunStats,
}

impl Trajectory {
    /// Assembles a trajectory from sampled states and computes its diagnostics.
    pub fn from_states(
        scenario: Arc<Scenario>,
        states: Vec<FlowState>,
        termination: Termination,
        stats: RunStats,
    ) -> Result<Self> {
        if states.first().is_none_or(|s| s.t != 0.0) {
            return Err(Error::InvalidScenario("trajectory must start at t = 0".into()));
        }
        if states.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidScenario("sample times must increase strictly".into()));
        }
        let rows = verify::diagnostics_rows(&states, &scenario)?;
        Ok(Self {
            scenario,
            states,
            rows,
            termination,
            stats,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn final_time(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }

    /// Index of the sample closest to `t`.
    pub fn sample_near(&self, t: f64) -> usize {
        (0..self.states.len())
            .min_by(|&a, &b| (self.states[a].t - t).abs().total_cmp(&(self.states[b].t - t).abs()))
            .unwrap_or(0)
    }
}

/// Integrates the scenario to `t_max`, sampling every `sample_dt`.
///
/// Guard breaches halve the step; once the step falls below `dt_min` the run
/// stops and the reason is recorded in [`Trajectory::termination`].
pub fn run(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let shared = Arc::new(scenario.clone());
    let settings = &scenario.integrator;
    let mut stats = RunStats::default();
    let mut state = FlowState::initial(scenario)?;
    let mut states = vec![state.clone()];
    let mut dt = settings.fixed_dt.unwrap_or(settings.dt_init);
    let mut termination = Termination::Completed;

    'samples: for &target in scenario.sample_times().iter().skip(1) {
        while state.t < target - 1e-12 {
            let remaining = target - state.t;
            let h = match settings.fixed_dt {
                Some(_) => dt.min(remaining),
                None => dt.min(stability_limit(&state, scenario)?).min(remaining),
            };
            // snap the last sliver so sample times stay exact
            let h = if remaining - h < 1e-12 { remaining } else { h };
            let attempt = if settings.fixed_dt.is_some() {
                step_fixed(&state, h, scenario).map(|s| (s, 0.0))
            } else {
                step(&state, h, scenario).map(|o| (o.state, o.error))
            };
            match attempt {
                Ok((next, error)) if error <= 1.0 => {
                    stats.accepted += 1;
                    state = next;
                    if settings.fixed_dt.is_none() {
                        let factor = if error == 0.0 { 5.0 } else { (0.9 * error.powf(-0.2)).clamp(0.2, 5.0) };
                        let proposal = h * factor;
                        dt = if h < dt { dt.max(proposal) } else { proposal };
                    }
                }
                Ok((_, error)) => {
                    stats.rejected += 1;
                    dt = h * (0.9 * error.powf(-0.2)).clamp(0.2, 0.9);
                    if dt < settings.dt_min {
                        termination = Termination::StepSizeUnderflow { t: state.t };
                        break 'samples;
                    }
                }
                Err(Error::GuardBreach { min_eig, index }) => {
                    stats.guard_rejections += 1;
                    dt = 0.5 * h;
                    if dt < settings.dt_min {
                        termination = Termination::PositivityBreakdown {
                            t: state.t,
                            min_eig,
                            index,
                        };
                        break 'samples;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        state.t = target;
        states.push(state.clone());
    }
    Trajectory::from_states(shared, states, termination, stats)
}

/// Reference values for spatially constant data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleSample {
    pub t: f64,
    /// Potential in the requested gauge.
    pub value: f64,
    pub u: f64,
    pub v: f64,
    pub f: f64,
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_quadrature(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    simpson(f, a, b, f(a), f(m), f(b), tol, 48)
}

/// Solves `w' + w = g(t)`, `w(0) = 0`, at increasing `times` by the integrating factor.
fn integrating_factor(g: &dyn Fn(f64) -> f64, times: &[f64], tol: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let (mut t_prev, mut w) = (0.0, 0.0);
    for &t in times {
        let integrand = |s: f64| (s - t).exp() * g(s);
        w = (t_prev - t).exp() * w + adaptive_quadrature(&integrand, t_prev, t, tol);
        out.push(w);
        t_prev = t;
    }
    out
}

/// Spatially homogeneous reference solution.
///
/// For constant data the flow reduces to `u' + u = log(det ω_t / ρ)` (plus
/// `k t` in the v-gauge), solved by integrating factor and adaptive
/// quadrature. Both gauges are integrated independently; `f` is the exact
/// shift between them.
pub fn homogeneous_oracle(
    l: &CohomologyClass,
    omega0: &CohomologyClass,
    rho: f64,
    k: usize,
    gauge: Gauge,
    times: &[f64],
) -> Result<Vec<OracleSample>> {
    if !(rho > 0.0) {
        return Err(Error::NonPositiveDensity { index: 0, value: rho });
    }
    if times.iter().any(|&t| !(t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidScenario("oracle times must be nonnegative and sorted".into()));
    }
    let horizon = class::singularity_time(l, omega0)?;
    if times.last().is_some_and(|&t| t >= horizon) {
        return Err(Error::InvalidScenario(format!("oracle time beyond singularity time {horizon}")));
    }
    let poly = class::volume_polynomial(l, omega0)?;
    let kf = k as f64;
    let log_ratio = |s: f64| (poly.at_time(s) / rho).ln();
    let g_u = |s: f64| log_ratio(s);
    let g_v = |s: f64| log_ratio(s) + kf * s;
    const TOL: f64 = 1e-10;
    let us = integrating_factor(&g_u, times, TOL);
    let vs = integrating_factor(&g_v, times, TOL);
    Ok(times
        .iter()
        .zip(us.iter().zip(&vs))
        .map(|(&t, (&u, &v))| OracleSample {
            t,
            value: if gauge == Gauge::U { u } else { v },
            u,
            v,
            f: shift(kf, t),
        })
        .collect())
}

/// Re-expresses a u-gauge trajectory in the v-gauge: `v = u − f(t)`.
pub fn gauge_shift(trajectory: &Trajectory, k: usize) -> Result<Trajectory> {
    let scenario = &trajectory.scenario;
    if scenario.gauge != Gauge::U {
        return Err(Error::InvalidScenario("gauge shift expects a u-gauge trajectory".into()));
    }
    let kf = k as f64;
    let states = trajectory
        .states
        .iter()
        .map(|s| {
            let (f, df) = (shift(kf, s.t), shift_rate(kf, s.t));
            Ok(FlowState {
                t: s.t,
                u: s.u.map(|v| v - f)?,
                u_dot: s.u_dot.map(|v| v - df)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let shifted = Arc::new(Scenario::clone(scenario).with_gauge(Gauge::V).with_k(k));
    Trajectory::from_states(shifted, states, trajectory.termination.clone(), trajectory.stats.clone())
}

/// Spatial profile of a manufactured potential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    /// `cos x`
    Cosine,
    /// `1 / (b − cos x)`, `b > 1`; analytic but not band-limited.
    Rational { b: f64 },
}

impl Profile {
    fn value(self, x: f64) -> f64 {
        match self {
            Profile::Cosine => x.cos(),
            Profile::Rational { b } => 1.0 / (b - x.cos()),
        }
    }

    fn second_derivative(self, x: f64) -> f64 {
        match self {
            Profile::Cosine => -x.cos(),
            Profile::Rational { b } => {
                let (s, c) = x.sin_cos();
                let d = b - c;
                -c / (d * d) + 2.0 * s * s / (d * d * d)
            }
        }
    }
}

/// Manufactured potential `u*(x, t) = A (1 − e^{−t}) ψ(x_axis)` with the matching forcing.
#[derive(Clone, Copy, Debug)]
pub struct Manufactured {
    pub amplitude: f64,
    pub profile: Profile,
    pub axis: RealAxis,
}

impl Manufactured {
    pub fn exact(&self, coords: &[f64], t: f64, n: usize) -> f64 {
        self.amplitude * (1.0 - (-t).exp()) * self.profile.value(coords[self.axis.index(n)])
    }

    /// Forcing that makes `u*` an exact solution for the given classes and density.
    pub fn forcing(
        &self,
        l: &CohomologyClass,
        omega0: &CohomologyClass,
        rho: Density,
    ) -> Forcing {
        let (l, omega0, me) = (l.clone(), omega0.clone(), *self);
        let n = l.n();
        Arc::new(move |x: &[f64], t: f64| {
            let a = me.amplitude * (1.0 - (-t).exp());
            let da = me.amplitude * (-t).exp();
            let xa = x[me.axis.index(n)];
            let psi = me.profile.value(xa);
            let class = class::class_path(&l, &omega0, t).expect("matching dimensions");
            let mut m = class.entries().to_vec();
            let j = me.axis.complex_index();
            m[j * n + j] += 0.25 * a * me.profile.second_derivative(xa);
            let det = herm::det(&m, n).re;
            da * psi - (det / rho(x)).ln() + a * psi
        })
    }

    /// Largest pointwise error over all samples of a trajectory.
    pub fn max_error(&self, trajectory: &Trajectory) -> f64 {
        let grid = &trajectory.scenario.grid;
        let n = grid.n();
        trajectory
            .states
            .iter()
            .flat_map(|s| {
                s.u.values()
                    .iter()
                    .enumerate()
                    .map(move |(p, v)| (v - self.exact(&grid.coordinates(p), s.t, n)).abs())
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Backend;

    fn collapsed(res: usize) -> Scenario {
        let grid = PeriodicGrid::new(2, &[RealAxis::X(0)], res, Backend::Spectral).unwrap();
        let rho = ScalarField::constant(grid.clone(), 1.0);
        Scenario::new(
            "collapsed",
            grid,
            CohomologyClass::diagonal(&[1.0, 0.0]),
            CohomologyClass::identity(2),
            rho,
        )
    }

    #[test]
    fn rhs_examples() {
        let sc = collapsed(8);
        assert_eq!(sc.k, 1);
        let u = ScalarField::zeros(sc.grid.clone());
        assert!(rhs(&u, 0.0, &sc).unwrap().values().iter().all(|v| v.abs() < 1e-15));
        assert!(rhs(&u, 1.0, &sc).unwrap().values().iter().all(|v| (v + 1.0).abs() < 1e-14));
        let sv = sc.clone().with_gauge(Gauge::V);
        assert!(rhs(&u, 1.0, &sv).unwrap().values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn rhs_guard_reports_offending_point() {
        let sc = collapsed(16);
        let u = ScalarField::from_fn(sc.grid.clone(), |x| 8.0 * x[0].cos()).unwrap();
        match rhs(&u, 0.0, &sc) {
            Err(Error::GuardBreach { min_eig, index }) => {
                assert!((min_eig + 1.0).abs() < 1e-12);
                assert_eq!(index, 0);
            }
            other => panic!("expected guard breach, got {other:?}"),
        }
    }

    #[test]
    fn kahler_fixed_point_stays_zero() {
        let grid = PeriodicGrid::new(2, &[RealAxis::X(0)], 8, Backend::Spectral).unwrap();
        let rho = ScalarField::constant(grid.clone(), 1.0);
        let sc = Scenario::new("fixed", grid, CohomologyClass::identity(2), CohomologyClass::identity(2), rho);
        let s0 = FlowState::initial(&sc).unwrap();
        for dt in [0.01, 0.3, 2.0] {
            let out = step(&s0, dt, &sc).unwrap();
            assert!(out.state.u.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_step_matches_closed_form() {
        let sc = collapsed(8);
        let s0 = FlowState::initial(&sc).unwrap();
        let out = step(&s0, 0.1, &sc).unwrap();
        let exact = 1.0 - 0.1 - (-0.1f64).exp();
        assert!(out.state.u.values().iter().all(|v| (v - exact).abs() <= 1e-7));
        assert_eq!(out.state.t, 0.1);
    }

    #[test]
    fn step_doubling_difference_is_fifth_order() {
        let grid = PeriodicGrid::new(2, &[RealAxis::X(0)], 16, Backend::Spectral).unwrap();
        let rho = ScalarField::from_fn(grid.clone(), |x| (0.3 * x[0].cos()).exp()).unwrap();
        let sc = Scenario::new(
            "varying",
            grid,
            CohomologyClass::diagonal(&[1.0, 0.0]),
            CohomologyClass::identity(2),
            rho,
        );
        let s0 = FlowState::initial(&sc).unwrap();
        let d1 = step(&s0, 0.02, &sc).unwrap().raw_difference;
        let d2 = step(&s0, 0.01, &sc).unwrap().raw_difference;
        let ratio = d1 / d2;
        // local error of RK4 is O(dt^5): halving dt divides it by ~32
        assert!((ratio - 32.0).abs() < 4.0, "ratio {ratio}");
    }

    #[test]
    fn oracle_examples() {
        let l = CohomologyClass::diagonal(&[1.0, 0.0]);
        let w = CohomologyClass::identity(2);
        let s = homogeneous_oracle(&l, &w, 1.0, 1, Gauge::U, &[0.0, 0.5, 1.0, 10.0]).unwrap();
        for o in &s {
            let exact = 1.0 - o.t - (-o.t).exp();
            assert!((o.u - exact).abs() < 1e-10, "{o:?}");
            assert!(o.v.abs() < 1e-10);
            assert!((o.f - exact).abs() < 1e-14);
        }
        assert!((s[2].u + (-1.0f64).exp()).abs() < 1e-10);
        let z = homogeneous_oracle(&w, &w, 1.0, 0, Gauge::U, &[1.0, 5.0]).unwrap();
        assert!(z.iter().all(|o| o.u == 0.0 && o.f == 0.0));
    }

    #[test]
    fn kahler_oracle_matches_quadrature_form() {
        let w = CohomologyClass::identity(2);
        let s = homogeneous_oracle(&w, &w.scaled(2.0), 1.0, 0, Gauge::U, &[1.0]).unwrap();
        // independent fixed-order Gauss-Legendre of e^{-1} ∫ e^s 2 log(1+e^{-s}) ds on [0,1]
        let nodes = [-0.906179845938664, -0.538469310105683, 0.0, 0.538469310105683, 0.906179845938664];
        let weights = [0.236926885056189, 0.478628670499366, 0.568888888888889, 0.478628670499366, 0.236926885056189];
        let g = |s: f64| s.exp() * 2.0 * (1.0 + (-s).exp()).ln();
        let q: f64 = nodes.iter().zip(weights).map(|(x, w)| 0.5 * w * g(0.5 * (x + 1.0))).sum();
        let expected = (-1.0f64).exp() * q;
        assert!((s[0].u - expected).abs() < 1e-8, "{} vs {expected}", s[0].u);
        assert!((s[0].u - 0.572).abs() < 1e-3);
    }

    #[test]
    fn oracle_refuses_times_past_singularity() {
        let w = CohomologyClass::identity(2);
        let l = CohomologyClass::diagonal(&[2.0, -1.0]);
        assert!(homogeneous_oracle(&l, &w, 1.0, 0, Gauge::U, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn validate_rejects_t_max_past_singularity() {
        let mut sc = collapsed(8);
        sc.l = CohomologyClass::diagonal(&[2.0, -1.0]);
        sc.t_max = 1.0;
        assert!(matches!(sc.validate(), Err(Error::InvalidScenario(_))));
        sc.t_max = 0.5;
        assert!(sc.validate().is_ok());
    }

    #[test]
    fn sample_times_cover_horizon() {
        let sc = collapsed(8).with_t_max(1.0).with_sample_dt(0.3);
        assert_eq!(sc.sample_times(), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
    }

    #[test]
    fn shift_solves_its_ode() {
        for t in [0.0, 0.7, 3.0] {
            assert!((shift_rate(2.0, t) + shift(2.0, t) + 2.0 * t).abs() < 1e-14);
        }
        assert_eq!(shift(0.0, 5.0), 0.0);
    }
}
