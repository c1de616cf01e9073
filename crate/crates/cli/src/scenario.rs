//! Scenario files: one TOML document per run.
//!
//! ```toml
//! name = "concentration"
//! regime = "increasing"
//!
//! [model.depoly]
//! kind = "linear_increasing"
//! d0 = 0.5
//! alpha = 1.0
//!
//! [model.frag.rate]
//! kind = "none"
//!
//! [model.nucleation]
//! epsilon = 0
//! i0 = 1
//!
//! [initial]
//! m = 2.0
//! u0 = { kind = "gaussian", center = 1.0, width = 0.15, number = 1.0 }
//!
//! [grid]
//! x_max = 4.0
//! n_cells = 2048
//! ```
//!
//! Exactly one of `initial.m` (then `V₀ = M − ∫ x u₀`) and `initial.v0`
//! (then `M = V₀ + ∫ x u₀`) must be present.

use std::path::{Path, PathBuf};

use polykin::diagnostics::{self, AsymptoticResult};
use polykin::kinetics::{Probes, SolverOptions};
use polykin::rates::{validate_assumptions, AssumptionReport};
use polykin::steady::SteadyOptions;
use polykin::{RateModel, Regime, SizeGrid, SystemState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Eulerian,
    Lagrangian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Zero,
    /// Normal bump restricted to `x > 0`, rescaled to carry `number` polymers.
    Gaussian { center: f64, width: f64, number: f64 },
    /// `(number/scale) e^{−x/scale}`, rescaled likewise.
    Exponential { scale: f64, number: f64 },
    /// A snapshot CSV; its grid replaces `[grid]`. Relative paths resolve
    /// against the scenario file.
    Snapshot { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub m: Option<f64>,
    pub v0: Option<f64>,
    pub u0: InitialProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_max: f64,
    pub n_cells: usize,
}

/// Size the `W₂` probe measures against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum W2Target {
    Size(f64),
    /// `"xbar"`: the predicted critical size.
    Named(NamedTarget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedTarget {
    Xbar,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub w2_target: Option<W2Target>,
    pub snapshot_every: Option<usize>,
    /// Long-time result whose rates `simulate` and `sweep` fit.
    pub fit: Option<AsymptoticResult>,
    pub fit_window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub regime: Regime,
    #[serde(default)]
    pub solver: SolverKind,
    pub model: RateModel,
    pub initial: InitialData,
    pub grid: GridSpec,
    #[serde(default)]
    pub options: SolverOptions,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub steady: SteadyOptions,
}

/// A scenario resolved into solver inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: RateModel,
    pub state: SystemState,
    pub m: f64,
    pub options: SolverOptions,
    pub probes: Probes,
    pub assumptions: AssumptionReport,
}

/// Raw text together with its parsed form and hash.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub text: String,
    pub hash: String,
    pub base_dir: PathBuf,
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<LoadedScenario, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        let scenario = Self::parse(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedScenario { hash: config_hash(&text), scenario, text, base_dir })
    }

    pub fn with_resolution(mut self, n: Option<usize>) -> Self {
        if let Some(n) = n {
            self.grid.n_cells = n;
            self.steady.n = n;
        }
        self
    }

    /// Validate and build the initial state. Every failure here is a
    /// validation error (exit code 2).
    pub fn prepare(&self, base_dir: &Path) -> Result<Prepared, CliError> {
        let invalid = |e: polykin::Error| CliError::Validation(e.to_string());
        self.model.check().map_err(invalid)?;
        self.options.check().map_err(invalid)?;
        let assumptions = validate_assumptions(&self.model, self.regime);
        if !assumptions.all_passed() {
            let failed: Vec<String> =
                assumptions.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect();
            return Err(CliError::Validation(format!(
                "model does not satisfy the {:?} regime: {}",
                self.regime,
                failed.join("; ")
            )));
        }
        let (grid, u) = match &self.initial.u0 {
            InitialProfile::Snapshot { path } => {
                let path = base_dir.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Validation(format!("cannot read snapshot {}: {e}", path.display())))?;
                let (state, _) = SystemState::from_snapshot_csv(&text).map_err(invalid)?;
                (state.grid, state.u)
            }
            profile => {
                let grid = SizeGrid::new(self.grid.x_max, self.grid.n_cells).map_err(invalid)?;
                (grid, sample_profile(profile, &grid)?)
            }
        };
        let polymer_mass: f64 = u.iter().enumerate().map(|(i, ui)| grid.center(i) * ui).sum::<f64>() * grid.dx();
        let (v0, m) = match (self.initial.m, self.initial.v0) {
            (Some(m), None) => (m - polymer_mass, m),
            (None, Some(v0)) => (v0, v0 + polymer_mass),
            _ => {
                return Err(CliError::Validation(
                    "give exactly one of initial.m and initial.v0".into(),
                ))
            }
        };
        if !(m > 0.0 && m.is_finite()) {
            return Err(CliError::Validation(format!("total mass must be positive, got {m}")));
        }
        if !(v0 >= 0.0) {
            return Err(CliError::Validation(format!(
                "initial polymers carry {polymer_mass} > M = {m}, leaving V0 = {v0}"
            )));
        }
        let state = SystemState::new(grid, v0, u).map_err(invalid)?;
        let w2_target = match self.diagnostics.w2_target {
            None => None,
            Some(W2Target::Size(x)) => Some(x),
            Some(W2Target::Named(NamedTarget::Xbar)) => {
                let (x, _) = diagnostics::predict_xbar(m, state.number(), &self.model.depoly).map_err(invalid)?;
                Some(x)
            }
        };
        let probes = Probes { w2_target, snapshot_every: self.diagnostics.snapshot_every };
        Ok(Prepared { model: self.model, state, m, options: self.options, probes, assumptions })
    }
}

fn sample_profile(profile: &InitialProfile, grid: &SizeGrid) -> Result<Vec<f64>, CliError> {
    let bad = |msg: String| Err(CliError::Validation(msg));
    let (shape, number): (Box<dyn Fn(f64) -> f64>, f64) = match *profile {
        InitialProfile::Zero => return Ok(vec![0.0; grid.len()]),
        InitialProfile::Gaussian { center, width, number } => {
            if !(width > 0.0) {
                return bad(format!("gaussian width must be positive, got {width}"));
            }
            (Box::new(move |x: f64| (-0.5 * ((x - center) / width).powi(2)).exp()), number)
        }
        InitialProfile::Exponential { scale, number } => {
            if !(scale > 0.0) {
                return bad(format!("exponential scale must be positive, got {scale}"));
            }
            (Box::new(move |x: f64| (-x / scale).exp()), number)
        }
        InitialProfile::Snapshot { .. } => unreachable!("snapshots are read by the caller"),
    };
    if !(number >= 0.0 && number.is_finite()) {
        return bad(format!("number must be nonnegative, got {number}"));
    }
    let mut u = grid.sample(shape);
    let total: f64 = u.iter().sum::<f64>() * grid.dx();
    if number == 0.0 {
        return Ok(vec![0.0; grid.len()]);
    }
    if !(total > 0.0) {
        return bad("initial profile has no support on the grid".into());
    }
    let scale = number / total;
    u.iter_mut().for_each(|x| *x *= scale);
    Ok(u)
}

/// Set a dotted key (`model.nucleation.i0`) in a TOML document. Integers stay
/// integers when the value parses as one.
pub fn override_field(text: &str, axis: &str, value: &str) -> Result<String, CliError> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let keys: Vec<&str> = axis.split('.').collect();
    let (last, parents) = keys.split_last().ok_or_else(|| CliError::Validation("empty axis".into()))?;
    let mut table = &mut doc;
    for k in parents {
        table = table
            .get_mut(*k)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| CliError::Validation(format!("axis {axis}: no table `{k}`")))?;
    }
    let old = table
        .get(*last)
        .ok_or_else(|| CliError::Validation(format!("axis {axis} does not name a scenario field")))?;
    let new = match old {
        // an integer field may take a fractional value; the scenario reads it as a float
        toml::Value::Integer(_) => value
            .parse::<i64>()
            .map(toml::Value::Integer)
            .or_else(|_| value.parse::<f64>().map(toml::Value::Float))
            .ok(),
        toml::Value::Float(_) => value.parse::<f64>().ok().map(toml::Value::Float),
        _ => return Err(CliError::Validation(format!("axis {axis} is not a scalar number"))),
    }
    .ok_or_else(|| CliError::Validation(format!("axis {axis}: cannot use value `{value}`")))?;
    table.insert((*last).to_string(), new);
    toml::to_string(&doc).map_err(|e| CliError::Parse(e.to_string()))
}
