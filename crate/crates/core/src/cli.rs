//! Command-line front end: scenario ingestion, runs, checks and artifacts.
//!
//! Exit codes: 0 success, 1 check failure, 2 positivity breakdown, 3 config or input error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::class;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::flow::{self, FlowState, RunStats, Termination, Trajectory};
use crate::grid::{Backend, ScalarField};
use crate::svg::{LinePlot, Series};
use crate::verify::{self, CheckReport, DiagnosticsRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_BREAKDOWN: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Environment variable naming the artifact directory.
pub const OUT_DIR_ENV: &str = "KRFLAB_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "krflab-out";

pub const CSV_COLUMNS: [&str; 15] = [
    "t",
    "max_u",
    "min_u",
    "mean_u",
    "max_udot",
    "min_udot",
    "uddot_plus_udot_max",
    "class_volume",
    "volume_integral",
    "jensen_lhs",
    "osc_u",
    "min_eig_metric",
    "ric_min",
    "ric_max",
    "thm13_min",
];

#[derive(Parser, Debug)]
#[command(name = "krflab", version, about = "Scalar potential flow lab on flat complex tori")]
pub struct Cli {
    /// Differentiation backend, overriding the config.
    #[arg(long, global = true)]
    pub backend: Option<Backend>,
    /// Artifact directory (default: $KRFLAB_OUT_DIR or ./krflab-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Singularity time, collapse order and volume polynomial of the classes.
    Classify { config: PathBuf },
    /// Integrate the flow and write diagnostics.
    Run { config: PathBuf },
    /// Run (or load) a trajectory and verify the estimates.
    Check {
        #[arg(required_unless_present = "trajectory", conflicts_with = "trajectory")]
        config: Option<PathBuf>,
        /// Stored trajectory JSON written by `run`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Render SVG plots from a diagnostics CSV.
    Plot {
        csv: PathBuf,
        /// Slope of the `−k t` overlay (default: from the run manifest).
        #[arg(long)]
        k: Option<f64>,
    },
    /// Reference solution for spatially constant data.
    Oracle {
        config: PathBuf,
        /// Comma-separated sample times (default: integers up to t_max).
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
}

/// One row per check in the printed summary.
fn summarize(report: &CheckReport) -> String {
    let mut s = String::new();
    for c in &report.checks {
        let margin = c.worst_margin.map_or("-".to_string(), |m| format!("{m:.3e}"));
        let _ = writeln!(s, "{:<26} {:<13} worst margin {margin}", c.name, format!("{:?}", c.verdict).to_lowercase());
    }
    s
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in rows {
        let vals = [
            r.t,
            r.max_u,
            r.min_u,
            r.mean_u,
            r.max_udot,
            r.min_udot,
            r.uddot_plus_udot_max,
            r.class_volume,
            r.volume_integral,
            r.jensen_lhs,
            r.osc_u,
            r.min_eig_metric,
            r.ric_min,
            r.ric_max,
            r.lower_control_min,
        ];
        w.write_record(vals.iter().map(|v| format!("{v:.12e}"))).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Columns of a diagnostics CSV keyed by header name.
pub fn read_csv(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Config(format!("CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::Config("empty CSV".into()));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Config(format!("CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        for (c, f) in cols.iter_mut().zip(record.iter()) {
            c.push(
                f.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("CSV line {line}: `{f}`: {e}")))?,
            );
        }
    }
    Ok(header.into_iter().zip(cols).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredSample {
    pub t: f64,
    pub u: Vec<f64>,
    pub u_dot: Vec<f64>,
}

/// Self-contained trajectory file: config, density values and sampled states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTrajectory {
    pub config: ScenarioConfig,
    pub backend: Backend,
    pub rho: Vec<f64>,
    pub termination: Termination,
    pub stats: RunStats,
    pub samples: Vec<StoredSample>,
}

impl StoredTrajectory {
    pub fn from_trajectory(config: &ScenarioConfig, trajectory: &Trajectory) -> Self {
        let sc = &trajectory.scenario;
        Self {
            config: config.clone(),
            backend: sc.grid.backend(),
            rho: sc.rho.values().to_vec(),
            termination: trajectory.termination.clone(),
            stats: trajectory.stats.clone(),
            samples: trajectory
                .states
                .iter()
                .map(|s| StoredSample {
                    t: s.t,
                    u: s.u.values().to_vec(),
                    u_dot: s.u_dot.values().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the trajectory and recomputes its diagnostics.
    pub fn restore(&self, backend: Option<Backend>) -> Result<Trajectory> {
        let mut config = self.config.clone();
        // the stored density is already normalized if requested
        config.rho_normalize = false;
        let scenario = config.build_with(Path::new("."), Some(backend.unwrap_or(self.backend)), Some(self.rho.clone()))?;
        let grid = scenario.grid.clone();
        let first = self.samples.first().ok_or_else(|| Error::Config("trajectory has no samples".into()))?;
        if first.t != 0.0 || first.u.iter().any(|v| *v != 0.0) {
            return Err(Error::Config("trajectory must start from u = 0 at t = 0".into()));
        }
        let states = self
            .samples
            .iter()
            .map(|s| {
                Ok(FlowState {
                    t: s.t,
                    u: ScalarField::new(grid.clone(), s.u.clone())?,
                    u_dot: ScalarField::new(grid.clone(), s.u_dot.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(format!("trajectory samples: {e}")))?;
        Trajectory::from_states(Arc::new(scenario), states, self.termination.clone(), self.stats.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub backend: Backend,
    pub k: usize,
    pub termination: Termination,
    pub stats: RunStats,
    pub samples: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub name: String,
    /// `None` when the singularity time is infinite.
    pub singularity_time: Option<f64>,
    pub collapse_order: Option<usize>,
    pub volume_coefficients: Vec<f64>,
    pub l_kahler: bool,
    pub l_nef: bool,
}

pub fn config_hash(config: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

pub fn classify(config: &ScenarioConfig) -> Result<Classification> {
    let l = config.l_class()?;
    let omega0 = config.omega0_class()?;
    let t = class::singularity_time(&l, &omega0).map_err(|e| Error::Config(format!("field `omega0`: {e}")))?;
    Ok(Classification {
        name: config.name.clone(),
        singularity_time: t.is_finite().then_some(t),
        collapse_order: class::collapse_order(&l, &omega0).ok(),
        volume_coefficients: class::volume_polynomial(&l, &omega0)?.coefficients,
        l_kahler: class::kahler_check(&l),
        l_nef: l.is_nef(),
    })
}

/// Artifacts of a completed `run` or `check`.
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub dir: PathBuf,
}

/// Integrates a config and writes `diagnostics.csv`, `trajectory.json` and `manifest.json`.
pub fn run_config(config: &ScenarioConfig, base: &Path, backend: Option<Backend>, out: &Path) -> Result<RunOutput> {
    let scenario = config.build(base, backend)?;
    let start = Instant::now();
    let trajectory = flow::run(&scenario)?;
    let wall = start.elapsed().as_secs_f64();
    let dir = out.join(&config.name);
    write(&dir.join("diagnostics.csv"), &diagnostics_csv(&trajectory.rows))?;
    write(
        &dir.join("trajectory.json"),
        &to_json(&StoredTrajectory::from_trajectory(config, &trajectory))?,
    )?;
    let manifest = Manifest {
        name: config.name.clone(),
        config_sha256: config_hash(config),
        backend: scenario.grid.backend(),
        k: scenario.k,
        termination: trajectory.termination.clone(),
        stats: trajectory.stats.clone(),
        samples: trajectory.states.len(),
        wall_time_s: wall,
    };
    write(&dir.join("manifest.json"), &to_json(&manifest)?)?;
    info!("{}: {} samples in {wall:.2}s, {}", config.name, trajectory.states.len(), trajectory.termination);
    Ok(RunOutput { trajectory, dir })
}

/// Runs the configured checks and writes `report.json`.
pub fn check_trajectory(config: &ScenarioConfig, trajectory: &Trajectory, dir: &Path) -> Result<CheckReport> {
    let checks = config.build_checks(&trajectory.scenario)?;
    let report = verify::run_checks(trajectory, &checks);
    write(&dir.join("report.json"), &to_json(&report)?)?;
    Ok(report)
}

/// Writes `u.svg`, `volume.svg` and `margins.svg` next to the CSV (or into `out`).
pub fn plot_csv(csv: &Path, k: Option<f64>, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(csv).map_err(|e| Error::Config(format!("cannot read {}: {e}", csv.display())))?;
    let cols = read_csv(&text)?;
    let col = |name: &str| {
        cols.get(name)
            .ok_or_else(|| Error::Config(format!("{}: missing column `{name}`", csv.display())))
    };
    let t = col("t")?;
    let pair = |name: &str| -> Result<Vec<(f64, f64)>> { Ok(t.iter().copied().zip(col(name)?.iter().copied()).collect()) };
    let dir = out.map_or_else(|| base_dir(csv), Path::to_path_buf);
    let k = match k {
        Some(k) => k,
        None => fs::read_to_string(base_dir(csv).join("manifest.json"))
            .ok()
            .and_then(|s| serde_json::from_str::<Manifest>(&s).ok())
            .map_or(0.0, |m| m.k as f64),
    };

    let mean_u = pair("mean_u")?;
    let t_end = t.last().copied().unwrap_or(0.0);
    let late: Vec<f64> = mean_u
        .iter()
        .filter(|(s, _)| *s >= t_end - verify::LATE_WINDOW)
        .map(|(s, u)| u + k * s)
        .collect();
    let offset = if late.is_empty() { 0.0 } else { late.iter().sum::<f64>() / late.len() as f64 };
    let u_plot = LinePlot {
        title: "potential".into(),
        x_label: "t".into(),
        y_label: "u".into(),
        log_y: false,
        series: vec![
            Series::new("max u", "#1f77b4", pair("max_u")?),
            Series::new("mean u", "#2ca02c", mean_u.clone()),
            Series::new("min u", "#ff7f0e", pair("min_u")?),
            Series::new(format!("slope -{k}"), "#d62728", t.iter().map(|&s| (s, offset - k * s)).collect()).dashed(),
        ],
    };
    let volume_plot = LinePlot {
        title: "volume".into(),
        x_label: "t".into(),
        y_label: "volume".into(),
        log_y: true,
        series: vec![
            Series::new("class volume", "#1f77b4", pair("class_volume")?),
            Series::new("volume integral", "#d62728", pair("volume_integral")?).dashed(),
        ],
    };
    let q = col("uddot_plus_udot_max")?;
    let gap: Vec<(f64, f64)> = t
        .iter()
        .zip(col("class_volume")?.iter().zip(col("jensen_lhs")?))
        .map(|(&s, (v, j))| (s, v.ln() - j))
        .collect();
    let margins_plot = LinePlot {
        title: "estimate margins".into(),
        x_label: "t".into(),
        y_label: "value".into(),
        log_y: false,
        series: vec![
            Series::new("e^t (u'' + u')", "#1f77b4", t.iter().zip(q).map(|(&s, v)| (s, s.exp() * v)).collect()),
            Series::new("min (u' + u + nt)", "#2ca02c", pair("thm13_min")?),
            Series::new("Jensen gap", "#9467bd", gap),
        ],
    };
    let mut written = Vec::new();
    for (name, plot) in [("u.svg", u_plot), ("volume.svg", volume_plot), ("margins.svg", margins_plot)] {
        let path = dir.join(name);
        write(&path, &plot.render())?;
        written.push(path);
    }
    Ok(written)
}

fn oracle_table(config: &ScenarioConfig, base: &Path, times: &[f64], out: &Path) -> Result<String> {
    let scenario = config.build(base, None)?;
    if !scenario.rho.is_constant() {
        return Err(Error::Config("oracle needs a spatially constant density".into()));
    }
    let times: Vec<f64> = if times.is_empty() {
        (0..=scenario.t_max.floor() as usize).map(|i| i as f64).collect()
    } else {
        times.to_vec()
    };
    let samples = flow::homogeneous_oracle(
        &scenario.l,
        &scenario.omega0,
        scenario.rho.values()[0],
        scenario.k,
        scenario.gauge,
        &times,
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    let mut csv = String::from("t,u,f,v\n");
    let mut table = format!("{:>10} {:>16} {:>16} {:>16}\n", "t", "u", "f", "v");
    for s in &samples {
        let _ = writeln!(csv, "{:.12e},{:.12e},{:.12e},{:.12e}", s.t, s.u, s.f, s.v);
        let _ = writeln!(table, "{:>10.4} {:>16.9} {:>16.9} {:>16.9}", s.t, s.u, s.f, s.v);
    }
    write(&out.join(&config.name).join("oracle.csv"), &csv)?;
    Ok(table)
}

fn exit_for(report: &CheckReport, termination: &Termination) -> i32 {
    if !report.passed() {
        EXIT_CHECK_FAILED
    } else if !termination.is_completed() {
        EXIT_BREAKDOWN
    } else {
        EXIT_OK
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let out = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    match cli.command {
        Command::Classify { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let c = classify(&cfg)?;
            let t = c.singularity_time.map_or("inf".to_string(), |t| format!("{t:.12}"));
            let k = c.collapse_order.map_or("undefined (L not nef)".to_string(), |k| k.to_string());
            println!("singularity time T = {t}");
            println!("collapse order k = {k}");
            println!("volume polynomial coefficients = {:?}", c.volume_coefficients);
            println!("L kahler = {}, L nef = {}", c.l_kahler, c.l_nef);
            write(&out.join(&cfg.name).join("classify.json"), &to_json(&c)?)?;
            Ok(EXIT_OK)
        }
        Command::Run { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let run = run_config(&cfg, &base_dir(&config), cli.backend, &out)?;
            println!("{}: {} ({} samples) -> {}", cfg.name, run.trajectory.termination, run.trajectory.states.len(), run.dir.display());
            Ok(if run.trajectory.termination.is_completed() { EXIT_OK } else { EXIT_BREAKDOWN })
        }
        Command::Check { config, trajectory } => {
            let (cfg, traj, dir) = match (config, trajectory) {
                (Some(path), None) => {
                    let cfg = ScenarioConfig::load(&path)?;
                    let run = run_config(&cfg, &base_dir(&path), cli.backend, &out)?;
                    (cfg, run.trajectory, run.dir)
                }
                (None, Some(path)) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    let stored: StoredTrajectory = serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    let traj = stored.restore(cli.backend)?;
                    let dir = out.join(&stored.config.name);
                    (stored.config, traj, dir)
                }
                _ => return Err(Error::Config("give a config or --trajectory".into())),
            };
            let report = check_trajectory(&cfg, &traj, &dir)?;
            print!("{}", summarize(&report));
            if report.checks.iter().any(|c| c.verdict == verify::Verdict::Violated) {
                eprintln!("CONJECTURE PROBE VIOLATED on {}: inspect {}", cfg.name, dir.join("report.json").display());
            }
            Ok(exit_for(&report, &traj.termination))
        }
        Command::Plot { csv, k } => {
            for p in plot_csv(&csv, k, None)? {
                println!("{}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Oracle { config, times } => {
            let cfg = ScenarioConfig::load(&config)?;
            print!("{}", oracle_table(&cfg, &base_dir(&config), &times, &out)?);
            Ok(EXIT_OK)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_through_reader() {
        let row = DiagnosticsRow {
            t: 1.0,
            max_u: -0.5,
            min_u: -0.5,
            mean_u: -0.5,
            max_udot: 0.0,
            min_udot: 0.0,
            mean_udot: 0.0,
            udot_plus_u_max: 0.0,
            udot_plus_u_min: 0.0,
            udot_plus_u_mean: 0.0,
            uddot_plus_udot_max: 0.0,
            uddot_plus_udot_min: 0.0,
            class_volume: 1.0,
            volume_integral: 1.0,
            det_mean: 1.0,
            jensen_lhs: 0.0,
            osc_u: 0.0,
            min_eig_metric: 1.0,
            ric_min: 0.0,
            ric_max: 0.0,
            lower_control_min: 3.25,
            u_minus_phi_min: 0.0,
        };
        let text = diagnostics_csv(&[row]);
        assert!(text.starts_with("t,max_u,min_u,mean_u,max_udot,min_udot,uddot_plus_udot_max,class_volume,"));
        let cols = read_csv(&text).unwrap();
        assert_eq!(cols.len(), 15);
        assert_eq!(cols["thm13_min"], vec![3.25]);
        assert_eq!(cols["mean_u"], vec![-0.5]);
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(read_csv("t,a\n1,2,3\n").is_err());
        assert!(read_csv("").is_err());
    }

    #[test]
    fn usage_errors_map_to_config_exit() {
        assert_eq!(main_with_args(["krflab", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["krflab", "--backend", "fd5", "classify", "x.toml"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["krflab", "classify", "/nonexistent/x.toml"]), EXIT_CONFIG);
    }
}
