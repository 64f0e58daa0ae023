//! Plain-text scenario description (TOML).
//!
//! ```toml
//! name = "collapsed_varying"
//! n = 2
//! active_axes = ["x1"]
//! resolution = 128
//! L = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
//! omega0 = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]
//! rho = "exp(0.3 * cos(x1))"
//! rho_normalize = true
//! t_max = 12.0
//! ```
//!
//! Matrices are row-major with `[re, im]` entries.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::class::{self, CohomologyClass};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::flow::{Gauge, IntegratorSettings, Scenario};
use crate::grid::{Backend, PeriodicGrid, RealAxis, ScalarField};
use crate::herm::C64;
use crate::verify::{self, Check};

pub type MatrixConfig = Vec<Vec<[f64; 2]>>;

fn default_sample_dt() -> f64 {
    0.05
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub active_axes: Vec<String>,
    pub resolution: usize,
    #[serde(rename = "L")]
    pub l: MatrixConfig,
    pub omega0: MatrixConfig,
    /// Density expression; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<String>,
    /// Whitespace-separated grid values, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub rho_normalize: bool,
    /// Comparison potential for the lower-control checks; defaults to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(default)]
    pub gauge: Gauge,
    /// Gauge constant; defaults to the collapse order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub t_max: f64,
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

fn field_error(field: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{field}`: {e}"))
}

impl ScenarioConfig {
    /// Parses TOML; syntax and type errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn axes(&self) -> Result<Vec<RealAxis>> {
        self.active_axes
            .iter()
            .map(|s| s.parse::<RealAxis>().map_err(|e| field_error("active_axes", e)))
            .collect()
    }

    pub fn grid(&self, backend: Option<Backend>) -> Result<Arc<PeriodicGrid>> {
        PeriodicGrid::new(
            self.n,
            &self.axes()?,
            self.resolution,
            backend.unwrap_or(self.backend),
        )
        .map_err(|e| field_error("resolution", e))
    }

    fn matrix(&self, field: &str, m: &MatrixConfig) -> Result<CohomologyClass> {
        if m.len() != self.n || m.iter().any(|row| row.len() != self.n) {
            return Err(field_error(field, format!("expected a {0}x{0} matrix", self.n)));
        }
        let entries = m.iter().flatten().map(|[re, im]| C64::new(*re, *im)).collect();
        CohomologyClass::new(self.n, entries).map_err(|e| field_error(field, e))
    }

    pub fn l_class(&self) -> Result<CohomologyClass> {
        self.matrix("L", &self.l)
    }

    pub fn omega0_class(&self) -> Result<CohomologyClass> {
        self.matrix("omega0", &self.omega0)
    }

    /// Density on the grid (before normalization).
    pub fn density(&self, grid: &Arc<PeriodicGrid>, base: &Path) -> Result<ScalarField> {
        let rho = match (&self.rho, &self.rho_file) {
            (Some(_), Some(_)) => return Err(field_error("rho", "give either rho or rho_file, not both")),
            (Some(src), None) => Expr::parse(src)
                .and_then(|e| e.sample(grid))
                .map_err(|e| field_error("rho", e))?,
            (None, Some(file)) => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| field_error("rho_file", format!("{}: {e}", path.display())))?;
                let values = text
                    .split_whitespace()
                    .map(|w| w.parse::<f64>().map_err(|e| field_error("rho_file", format!("`{w}`: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                ScalarField::new(grid.clone(), values).map_err(|e| field_error("rho_file", e))?
            }
            (None, None) => ScalarField::constant(grid.clone(), 1.0),
        };
        if let Some(p) = rho.values().iter().position(|v| !(*v > 0.0)) {
            return Err(field_error("rho", format!("density must be positive (value {} at point {p})", rho.values()[p])));
        }
        Ok(rho)
    }

    fn potential(src: &Option<String>, field: &str, grid: &Arc<PeriodicGrid>, l: &CohomologyClass) -> Result<Option<ScalarField>> {
        let Some(src) = src else { return Ok(None) };
        let phi = Expr::parse(src).and_then(|e| e.sample(grid)).map_err(|e| field_error(field, e))?;
        verify::validate_phi(l, &phi).map_err(|e| field_error(field, e))?;
        Ok(Some(phi))
    }

    /// Builds and validates the scenario; `rho` overrides the configured density.
    pub fn build_with(&self, base: &Path, backend: Option<Backend>, rho: Option<Vec<f64>>) -> Result<Scenario> {
        let grid = self.grid(backend)?;
        let l = self.l_class()?;
        let omega0 = self.omega0_class()?;
        if !class::kahler_check(&omega0) {
            return Err(field_error("omega0", "initial class must be positive definite"));
        }
        let mut rho = match rho {
            Some(values) => ScalarField::new(grid.clone(), values).map_err(|e| field_error("rho", e))?,
            None => self.density(&grid, base)?,
        };
        if self.rho_normalize {
            let mass = rho.mean();
            rho = rho.map(|v| v / mass)?;
        }
        let k = match (self.k, self.gauge) {
            (Some(k), _) => k,
            (None, gauge) => match class::collapse_order(&l, &omega0) {
                Ok(k) => k,
                Err(_) if gauge == Gauge::U => 0,
                Err(e) => return Err(field_error("k", format!("v-gauge needs k for a non-nef L ({e})"))),
            },
        };
        let mut scenario = Scenario::new(self.name.clone(), grid.clone(), l.clone(), omega0, rho)
            .with_gauge(self.gauge)
            .with_k(k)
            .with_t_max(self.t_max)
            .with_sample_dt(self.sample_dt)
            .with_integrator(self.integrator.clone());
        if let Some(phi) = Self::potential(&self.phi, "phi", &grid, &l)? {
            scenario = scenario.with_phi(phi);
        }
        scenario.validate().map_err(|e| match e {
            Error::InvalidScenario(msg) if msg.contains("t_max") => field_error("t_max", msg),
            other => Error::Config(other.to_string()),
        })?;
        Ok(scenario)
    }

    pub fn build(&self, base: &Path, backend: Option<Backend>) -> Result<Scenario> {
        self.build_with(base, backend, None)
    }

    /// Configured checks, or the full default suite when none are listed.
    pub fn build_checks(&self, scenario: &Scenario) -> Result<Vec<Check>> {
        if self.checks.is_empty() {
            return Ok(Check::default_suite());
        }
        self.checks
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let field = format!("checks[{i}]");
                let phi = Self::potential(&c.phi, &field, &scenario.grid, &scenario.l)?;
                Ok(match c.name.as_str() {
                    verify::UPPER_BOUND_U => Check::UpperBoundU,
                    verify::SECOND_DERIVATIVE_DECAY => Check::SecondDerivativeDecay,
                    verify::MONOTONICITY => Check::Monotonicity,
                    verify::VOLUME_IDENTITY => Check::VolumeIdentity,
                    verify::JENSEN_UPPER => Check::JensenUpper,
                    verify::LOWER_CONTROL => Check::LowerControl { phi },
                    verify::DERIVATIVE_RECURRENCE => Check::DerivativeRecurrence {
                        epsilon: c.epsilon.unwrap_or(0.1),
                    },
                    verify::SEMIAMPLE_ASYMPTOTIC => Check::SemiampleAsymptotic { k: c.k },
                    verify::CONJECTURE_PROBE => Check::ConjectureProbe { phi },
                    verify::LIMIT_PROBE => Check::LimitProbe,
                    verify::RICCI_PROBE => Check::RicciProbe,
                    other => return Err(field_error(&field, format!("unknown check `{other}`"))),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "sample"
n = 2
active_axes = ["x1"]
resolution = 16
L = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
omega0 = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]
rho = "exp(0.3 * cos(x1))"
rho_normalize = true
t_max = 2.0

[integrator]
rtol = 1e-9

[[checks]]
name = "derivative_recurrence"
epsilon = 0.2
"#;

    #[test]
    fn round_trips() {
        let c = ScenarioConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.integrator.rtol, 1e-9);
        assert_eq!(c.integrator.atol, 1e-10);
        let again = ScenarioConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn builds_scenario() {
        let c = ScenarioConfig::parse(SAMPLE).unwrap();
        let sc = c.build(Path::new("."), None).unwrap();
        assert_eq!(sc.k, 1);
        assert!((sc.rho.mean() - 1.0).abs() < 1e-14);
        let checks = c.build_checks(&sc).unwrap();
        assert!(matches!(checks[..], [Check::DerivativeRecurrence { epsilon }] if epsilon == 0.2));
    }

    #[test]
    fn syntax_errors_carry_line() {
        let broken = SAMPLE.replace("t_max = 2.0", "t_max = ");
        let e = ScenarioConfig::parse(&broken).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
        let unknown = format!("{SAMPLE}\nbogus = 1\n").replace("[[checks]]", "bogus2 = 1\n[[checks]]");
        assert!(ScenarioConfig::parse(&unknown).is_err());
    }

    #[test]
    fn field_errors_name_the_field() {
        let mut c = ScenarioConfig::parse(SAMPLE).unwrap();
        c.omega0[1][1] = [-1.0, 0.0];
        assert!(c.build(Path::new("."), None).unwrap_err().to_string().contains("omega0"));
        let mut c = ScenarioConfig::parse(SAMPLE).unwrap();
        c.rho = Some("exp(cos(y1))".into());
        assert!(c.build(Path::new("."), None).unwrap_err().to_string().contains("rho"));
        let mut c = ScenarioConfig::parse(SAMPLE).unwrap();
        c.l = vec![vec![[2.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0], [-1.0, 0.0]]];
        c.t_max = 1.0;
        assert!(c.build(Path::new("."), None).unwrap_err().to_string().contains("t_max"));
        let mut c = ScenarioConfig::parse(SAMPLE).unwrap();
        c.checks[0].name = "nonsense".into();
        let sc = c.build(Path::new("."), None).unwrap();
        assert!(c.build_checks(&sc).unwrap_err().to_string().contains("checks[0]"));
    }
}
