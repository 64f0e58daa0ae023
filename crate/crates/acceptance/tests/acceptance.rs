//! Acceptance gate: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit on any failure.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use krflab::class::{self, CohomologyClass};
use krflab::cli;
use krflab::config::ScenarioConfig;
use krflab::flow::{self, Gauge, Profile, Scenario, Termination, Trajectory};
use krflab::grid::{self, Backend};
use krflab::verify::{self, Check, Verdict};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[path = "../../core/tests/common/mod.rs"]
mod common;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&mut Runs) -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios")
}

fn config(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_dir().join(format!("{name}.toml"))).unwrap()
}

fn scenario(name: &str) -> Scenario {
    config(name).build(&scenario_dir(), None).unwrap()
}

const SHIPPED: [&str; 5] = ["collapsed_homogeneous", "collapsed_varying", "collapsed_3d", "kahler", "finite_time"];
const COLLAPSED: [&str; 3] = ["collapsed_homogeneous", "collapsed_varying", "collapsed_3d"];

/// Runs are shared between criteria.
#[derive(Default)]
struct Runs(HashMap<(String, u64), Trajectory>);

impl Runs {
    fn get(&mut self, name: &str, t_max: Option<f64>) -> &Trajectory {
        let mut sc = scenario(name);
        if let Some(t) = t_max {
            sc = sc.with_t_max(t);
        }
        self.0
            .entry((name.to_string(), sc.t_max.to_bits()))
            .or_insert_with(|| flow::run(&sc).unwrap())
    }
}

fn window_slope(tr: &Trajectory, t0: f64, t1: f64, f: impl Fn(&verify::DiagnosticsRow) -> f64) -> f64 {
    let pts: Vec<(f64, f64)> = tr
        .rows
        .iter()
        .filter(|r| r.t >= t0 - 1e-12 && r.t <= t1 + 1e-12)
        .map(|r| (r.t, f(r)))
        .collect();
    verify::slope(&pts)
}

fn homogeneous_oracle(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let sc = scenario("collapsed_homogeneous");
    let tr = flow::run(&sc).unwrap();
    let secs = start.elapsed().as_secs_f64();
    runs.0.insert((sc.name.clone(), sc.t_max.to_bits()), tr.clone());
    let err = tr
        .states
        .iter()
        .flat_map(|s| s.u.values().iter().map(move |v| (v - (1.0 - s.t - (-s.t).exp())).abs()))
        .fold(0.0, f64::max);
    ensure(
        sc.t_max == 10.0 && tr.termination == Termination::Completed && err <= 1e-6 && secs < 1.0,
        format!("max error {err:.2e} over [0, {}], {secs:.3}s", sc.t_max),
    )
}

fn collapse_rate(runs: &mut Runs) -> Outcome {
    let tr = runs.get("collapsed_homogeneous", Some(10.0));
    let slope = window_slope(tr, 6.0, 10.0, |r| r.volume_integral.ln());
    let c = cli::classify(&config("collapsed_homogeneous")).unwrap();
    ensure(
        (slope + 1.0).abs() <= 0.01 && c.collapse_order == Some(1) && c.singularity_time.is_none(),
        format!("log-volume slope {slope:.6}, k = {:?}, T = {:?}", c.collapse_order, c.singularity_time),
    )
}

fn semiample_asymptotic(runs: &mut Runs) -> Outcome {
    let start = Instant::now();
    let tr = runs.get("collapsed_varying", None);
    let secs = start.elapsed().as_secs_f64();
    let res = tr.scenario.grid.resolution();
    let t_end = tr.final_time();
    let slope = window_slope(tr, 8.0, 12.0, |r| r.mean_u);
    let k = tr.scenario.k as f64;
    let v_sup: Vec<(f64, f64)> = tr
        .states
        .iter()
        .filter(|s| s.t >= t_end - verify::LATE_WINDOW - 1e-12)
        .map(|s| (s.t, s.u.values().iter().map(|u| (u - flow::shift(k, s.t)).abs()).fold(0.0, f64::max)))
        .collect();
    let v_slope = verify::slope(&v_sup);
    let v_max = v_sup.iter().map(|p| p.1).fold(0.0, f64::max);
    ensure(
        res == 128 && t_end >= 12.0 && (slope + 1.0).abs() <= 0.05 && v_slope.abs() <= 0.01 && secs < 60.0,
        format!("mean_u slope {slope:.5}, sup|v| {v_max:.3e} with slope {v_slope:.2e}, {res} points, {secs:.2}s"),
    )
}

fn volume_identity(runs: &mut Runs) -> Outcome {
    let mut worst: f64 = 0.0;
    for name in SHIPPED {
        let tr = runs.get(name, None);
        let v0 = tr.rows[0].class_volume;
        for r in &tr.rows {
            worst = worst.max((r.volume_integral - r.class_volume).abs() / v0);
        }
    }
    ensure(worst <= 1e-6, format!("worst relative gap {worst:.2e} over {} scenarios", SHIPPED.len()))
}

fn estimate_suite(runs: &mut Runs) -> Outcome {
    let asserting = [
        verify::SECOND_DERIVATIVE_DECAY,
        verify::MONOTONICITY,
        verify::UPPER_BOUND_U,
        verify::JENSEN_UPPER,
        verify::LOWER_CONTROL,
        verify::DERIVATIVE_RECURRENCE,
    ];
    let suite = [
        Check::SecondDerivativeDecay,
        Check::Monotonicity,
        Check::UpperBoundU,
        Check::JensenUpper,
        Check::LowerControl { phi: None },
        Check::DerivativeRecurrence { epsilon: 0.1 },
    ];
    let mut problems = Vec::new();
    for name in ["collapsed_homogeneous", "collapsed_varying", "kahler"] {
        let short = verify::run_checks(runs.get(name, Some(10.0)), &suite);
        let long = verify::run_checks(runs.get(name, Some(14.0)), &suite);
        for check in asserting {
            let (a, b) = (short.get(check).unwrap().verdict, long.get(check).unwrap().verdict);
            if a != Verdict::Pass || b != Verdict::Pass {
                problems.push(format!("{name}/{check}: {a:?} at t_max 10, {b:?} at t_max 14"));
            }
        }
    }
    let detail = if problems.is_empty() {
        "6 estimates pass on 3 scenarios at t_max 10 and 14".to_string()
    } else {
        problems.join("; ")
    };
    ensure(problems.is_empty(), detail)
}

fn kahler_convergence(runs: &mut Runs) -> Outcome {
    let tr = runs.get("kahler", Some(10.0));
    let sc = tr.scenario.clone();
    let last = tr.states.last().unwrap();
    let udot = last.u_dot.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    // stationary equation on the limit class L
    let g = grid::form_field(&sc.l, &last.u).unwrap();
    let det = grid::ma_determinant(&g);
    let residual = det
        .values()
        .iter()
        .zip(sc.rho.values())
        .zip(last.u.values())
        .map(|((d, r), u)| ((d / r).ln() - u).abs())
        .fold(0.0, f64::max);
    ensure(
        last.t == 10.0 && udot <= 1e-4 && residual <= 1e-4,
        format!("|u_t|(10) = {udot:.3e}, stationary residual {residual:.3e} (threshold 1e-4)"),
    )
}

fn second_derivative_cross_check(_: &mut Runs) -> Outcome {
    let sc = scenario("collapsed_varying").with_t_max(4.0);
    let coarse = flow::run(&sc.clone().with_sample_dt(0.05)).unwrap();
    let fine = flow::run(&sc.with_sample_dt(0.025)).unwrap();
    let a = verify::second_derivative_discrepancy(&coarse, 1.0, 4.0).unwrap();
    let b = verify::second_derivative_discrepancy(&fine, 1.0, 4.0).unwrap();
    let ratio = a / b;
    ensure((ratio - 4.0).abs() <= 1.0, format!("discrepancy {a:.3e} -> {b:.3e}, ratio {ratio:.3}"))
}

fn discretization(runs: &mut Runs) -> Outcome {
    let coarse = common::manufactured_error(32, Profile::Rational { b: 1.5 }, 1e-3, 1.0);
    let fine = common::manufactured_error(64, Profile::Rational { b: 1.5 }, 1e-3, 1.0);
    let e1 = common::manufactured_error(32, Profile::Cosine, 0.02, 2.0);
    let e2 = common::manufactured_error(32, Profile::Cosine, 0.01, 2.0);
    let order = (e1 / e2).log2();
    let spectral = runs.get("collapsed_varying", None).clone();
    let fd4 = flow::run(&spectral.scenario.as_ref().clone_on(Backend::Fd4)).unwrap();
    let gap = spectral
        .states
        .iter()
        .zip(&fd4.states)
        .flat_map(|(a, b)| a.u.values().iter().zip(b.u.values()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    ensure(
        coarse / fine >= 100.0 && (order - 4.0).abs() <= 0.3 && gap <= 1e-5 && spectral.states.len() == fd4.states.len(),
        format!(
            "space {coarse:.2e} -> {fine:.2e} ({:.0}x), time order {order:.3}, backend gap {gap:.2e} at 128 points",
            coarse / fine
        ),
    )
}

trait OnBackend {
    fn clone_on(&self, backend: Backend) -> Scenario;
}

impl OnBackend for Scenario {
    fn clone_on(&self, backend: Backend) -> Scenario {
        let grid = self.grid.with_backend(backend).unwrap();
        let lift = |f: &grid::ScalarField| grid::ScalarField::new(grid.clone(), f.values().to_vec()).unwrap();
        let mut sc = self.clone();
        sc.rho = lift(&self.rho);
        sc.phi = lift(&self.phi);
        sc.grid = grid;
        sc
    }
}

fn class_calculus(_: &mut Runs) -> Outcome {
    let mut rng = StdRng::seed_from_u64(20240917);
    let (mut multilinear, mut oracle_gap): (f64, f64) = (0.0, 0.0);
    let mut exact = true;
    for n in [2usize, 3] {
        for _ in 0..100 {
            let a: Vec<CohomologyClass> = (0..n).map(|_| common::random_hermitian(&mut rng, n)).collect();
            let refs: Vec<&CohomologyClass> = a.iter().collect();
            let d = class::mixed_discriminant(&refs).unwrap();
            oracle_gap = oracle_gap.max((d - common::oracle(&refs)).abs());
            for (p, _) in common::permutations(n) {
                let permuted: Vec<&CohomologyClass> = p.iter().map(|&i| &a[i]).collect();
                exact &= class::mixed_discriminant(&permuted).unwrap().to_bits() == d.to_bits();
            }
            let b = common::random_hermitian(&mut rng, n);
            let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            for slot in 0..n {
                let combo = a[slot].combine(x, &b, y).unwrap();
                let mut with_combo = refs.clone();
                with_combo[slot] = &combo;
                let mut with_b = refs.clone();
                with_b[slot] = &b;
                let lhs = class::mixed_discriminant(&with_combo).unwrap();
                let rhs = x * d + y * class::mixed_discriminant(&with_b).unwrap();
                multilinear = multilinear.max((lhs - rhs).abs());
            }
            exact &= class::mixed_discriminant(&vec![&a[0]; n]).unwrap() == a[0].det();
        }
    }
    let w = CohomologyClass::identity(2);
    let t_inf = class::singularity_time(&CohomologyClass::diagonal(&[1.0, 0.0]), &w).unwrap();
    let t_log2 = class::singularity_time(&CohomologyClass::diagonal(&[2.0, -1.0]), &w).unwrap();
    let t_err = (t_log2 - 2f64.ln()).abs();
    ensure(
        exact && multilinear <= 1e-10 && oracle_gap <= 1e-10 && t_inf == f64::INFINITY && t_err <= 1e-10,
        format!(
            "symmetry/diagonal exact: {exact}, multilinearity {multilinear:.1e}, oracle gap {oracle_gap:.1e}, T = {t_inf} and log 2 {t_err:.1e}"
        ),
    )
}

fn gauge_invariance(runs: &mut Runs) -> Outcome {
    let base = scenario("collapsed_varying").with_t_max(10.0);
    let u = runs.get("collapsed_varying", Some(10.0)).clone();
    let v = flow::run(&base.clone().with_gauge(Gauge::V)).unwrap();
    let k = base.k as f64;
    let gauge_gap = u
        .states
        .iter()
        .zip(&v.states)
        .flat_map(|(a, b)| {
            let f = flow::shift(k, a.t);
            a.u.values().iter().zip(b.u.values()).map(move |(x, y)| (x - y - f).abs())
        })
        .fold(0.0, f64::max);

    let mut scaled = base.clone();
    scaled.rho = base.rho.map(|r| 3.0 * r).unwrap();
    let s = flow::run(&scaled).unwrap();
    let (mut shift_gap, mut metric_gap): (f64, f64) = (0.0, 0.0);
    for (a, b) in u.states.iter().zip(&s.states) {
        let c = -(1.0 - (-a.t).exp()) * 3f64.ln();
        for (x, y) in a.u.values().iter().zip(b.u.values()) {
            shift_gap = shift_gap.max((y - x - c).abs());
        }
        let ga = a.metric(&base).unwrap();
        let gb = b.metric(&scaled).unwrap();
        metric_gap = metric_gap.max(ga.max_abs_diff(&gb).unwrap());
    }
    ensure(
        gauge_gap <= 1e-6 && shift_gap <= 1e-8 && metric_gap <= 1e-10 && u.states.len() == s.states.len(),
        format!("u - v - f {gauge_gap:.2e}, rescaled shift {shift_gap:.2e}, metric {metric_gap:.2e}"),
    )
}

fn conjecture_probe(runs: &mut Runs) -> Outcome {
    let mut verdicts = Vec::new();
    for name in COLLAPSED {
        let report = verify::run_checks(runs.get(name, None), &[Check::ConjectureProbe { phi: None }]);
        verdicts.push((name, report.checks[0].verdict));
    }
    let ok = verdicts.iter().all(|(_, v)| *v == Verdict::Consistent);
    let detail = verdicts.iter().map(|(n, v)| format!("{n}: {v:?}")).collect::<Vec<_>>().join(", ");
    if verdicts.iter().any(|(_, v)| *v == Verdict::Violated) {
        eprintln!("!!! conjecture probe VIOLATED: {detail}");
    }
    ensure(ok, detail)
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("homogeneous oracle equivalence", homogeneous_oracle),
        ("collapse rate of the volume", collapse_rate),
        ("semi-ample asymptotic u ~ -kt", semiample_asymptotic),
        ("volume identity on shipped scenarios", volume_identity),
        ("estimate suite, stable for t_max 10 -> 14", estimate_suite),
        ("kahler case converges by t = 10", kahler_convergence),
        ("second time derivative cross-check", second_derivative_cross_check),
        ("discretization quality", discretization),
        ("class calculus", class_calculus),
        ("gauge invariances", gauge_invariance),
        ("conjecture probe on collapsed scenarios", conjecture_probe),
    ];
    let mut runs = Runs::default();
    let mut failed = 0;
    for (i, (title, criterion)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = criterion(&mut runs);
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] AC-{:<2} {title}: {detail} [{secs:.2}s]", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
