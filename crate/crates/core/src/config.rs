//! Experiment configuration files.
//!
//! Configs are TOML with one table per concern. Quantities carry their unit
//! in the key (`_s`, `_deg`, `_per_s`); degrees are converted to radians
//! here and nowhere else.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::basis::{basis_by_name, RegressorBasis};
use crate::benchmarks::linear::{discounted_riccati, ideal_weights, LinearBenchmark};
use crate::benchmarks::uav::{Airframe, OuterLoopGains, Setpoint, UavScenario};
use crate::error::{IrlError, Result};
use crate::learner::{IndicatorMode, LearnerConfig, PenaltyInput, UpdateLaw};
use crate::model::{augment, catalog, AffinePlant, AugmentedDynamics, ReferenceModel};
use crate::policy::SaturationSpec;
use crate::sim::{run_experiment, AffineScenario, RunFailure, Scenario, SimConfig, Telemetry, DITHER_DECAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub law: UpdateLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub id: String,
    /// Row-major drift matrix for `id = "linear"`.
    pub a: Option<Vec<Vec<f64>>>,
    /// Row-major input matrix for `id = "linear"`.
    pub b: Option<Vec<Vec<f64>>>,
    /// Initial plant state; defaults to the reference's initial state.
    pub x0: Option<Vec<f64>>,
    pub airspeed_mps: Option<f64>,
    /// Bundled airframe name or a path relative to the config file.
    pub airframe: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointSection {
    pub t_start_s: f64,
    pub attitude_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub id: String,
    pub omega_rad_per_s: Option<f64>,
    /// Row-major generator matrix for `id = "linear"`.
    pub s: Option<Vec<Vec<f64>>>,
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub schedule: Vec<SetpointSection>,
    pub outer_loop_gains_per_s: Option<[f64; 3]>,
    /// Symmetric clamp on each commanded body rate.
    pub rate_limit_deg_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationSection {
    pub u_max: Option<f64>,
    pub u_max_deg: Option<f64>,
    pub r_diag: Vec<f64>,
}

/// A scalar broadcast to every entry, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, n: usize, field: &str) -> Result<DVector<f64>> {
        match self {
            ScalarOrList::Scalar(v) => Ok(DVector::from_element(n, *v)),
            ScalarOrList::List(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            ScalarOrList::List(v) => Err(IrlError::config(
                field,
                format!("expected {n} entries, found {}", v.len()),
            )),
        }
    }
}

fn default_robust() -> ScalarOrList {
    ScalarOrList::Scalar(0.01)
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub alpha: f64,
    pub q2: f64,
    pub k2: f64,
    pub gamma_per_s: f64,
    pub interval_s: f64,
    pub q1_diag: Vec<f64>,
    #[serde(default = "default_robust")]
    pub k1: ScalarOrList,
    /// Diagonal of `K2`.
    #[serde(default = "default_robust")]
    pub k2_diag: ScalarOrList,
    #[serde(default = "default_true")]
    pub m_term: bool,
    #[serde(default)]
    pub indicator: IndicatorMode,
    #[serde(default)]
    pub penalty_input: PenaltyInput,
    pub initial_weights: Option<Vec<f64>>,
}

fn default_record_every() -> usize {
    1
}

fn default_decay() -> f64 {
    DITHER_DECAY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt_s: f64,
    pub t_end_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub dither_gain: Option<f64>,
    pub dither_gain_deg: Option<f64>,
    #[serde(default = "default_decay")]
    pub dither_decay_per_s: f64,
    #[serde(default)]
    pub learning_start_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
}

/// A complete experiment description as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub plant: PlantSection,
    pub reference: ReferenceSection,
    pub basis: BasisSection,
    pub saturation: SaturationSection,
    pub learner: LearnerSection,
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Parses a `key.path=value` override; the value is read as TOML, falling back to a bare string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| IrlError::config(text, "override must look like section.key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(IrlError::config(key, "empty path segment in override"));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("override path is non-empty");
    let mut cursor = table;
    for p in parents {
        let entry = cursor
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| IrlError::config(path.join("."), format!("`{p}` is not a table")))?;
    }
    cursor.insert(last.clone(), value);
    Ok(())
}

fn parse_error(e: impl std::fmt::Display) -> IrlError {
    IrlError::config("config", e.to_string().trim_end().to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(parse_error)
    }

    /// Parses `text` and applies each `key=value` override in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Self::from_toml(text);
        }
        let mut table: toml::Table = toml::from_str(text).map_err(parse_error)?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        toml::Value::Table(table).try_into().map_err(parse_error)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IrlError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_with_overrides(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn u_max(&self) -> Result<f64> {
        match (self.saturation.u_max, self.saturation.u_max_deg) {
            (Some(v), None) => Ok(v),
            (None, Some(d)) => Ok(d.to_radians()),
            (Some(_), Some(_)) => Err(IrlError::config(
                "saturation.u_max",
                "give either u_max or u_max_deg, not both",
            )),
            (None, None) => Err(IrlError::config("saturation.u_max", "missing")),
        }
    }

    pub fn dither_gain(&self) -> Result<f64> {
        match (self.sim.dither_gain, self.sim.dither_gain_deg) {
            (Some(v), None) => Ok(v),
            (None, Some(d)) => Ok(d.to_radians()),
            (None, None) => Ok(0.0),
            (Some(_), Some(_)) => Err(IrlError::config(
                "sim.dither_gain",
                "give either dither_gain or dither_gain_deg, not both",
            )),
        }
    }

    pub fn saturation_spec(&self) -> Result<SaturationSpec> {
        SaturationSpec::new(self.u_max()?, self.saturation.r_diag.clone())
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        Ok(SimConfig {
            dt: self.sim.dt_s,
            t_end: self.sim.t_end_s,
            seed: self.sim.seed,
            record_every: self.sim.record_every,
            dither_gain: self.dither_gain()?,
            dither_decay: self.sim.dither_decay_per_s,
            learning_start: self.sim.learning_start_s,
        })
    }

    /// Learner settings for an augmented state of dimension `dim_z` and `n_features` regressors.
    pub fn learner_config(&self, dim_z: usize, n_features: usize) -> Result<LearnerConfig> {
        let l = &self.learner;
        if l.q1_diag.len() != dim_z {
            return Err(IrlError::config(
                "learner.q1_diag",
                format!("expected {dim_z} entries (augmented state size), found {}", l.q1_diag.len()),
            ));
        }
        let q1 = DMatrix::from_diagonal(&DVector::from_column_slice(&l.q1_diag));
        let mut cfg = LearnerConfig::new(
            l.alpha,
            l.q2,
            l.k2,
            l.gamma_per_s,
            l.interval_s,
            q1,
            self.saturation_spec()?,
            n_features,
        );
        cfg.robust_k1 = l.k1.expand(n_features, "learner.k1")?;
        cfg.robust_k2 = DMatrix::from_diagonal(&l.k2_diag.expand(n_features, "learner.k2_diag")?);
        cfg.m_term = l.m_term;
        cfg.indicator = l.indicator;
        cfg.penalty_input = l.penalty_input;
        Ok(cfg)
    }

    /// Every problem found, without building anything expensive twice.
    pub fn issues(&self) -> Vec<IrlError> {
        let mut out = Vec::new();
        match Experiment::build(self) {
            Ok(_) => {}
            Err(e) => out.push(e),
        }
        for e in self.shallow_issues() {
            if !out.contains(&e) {
                out.push(e);
            }
        }
        out
    }

    /// Checks that need no catalog resolution; reported alongside the first resolution error.
    fn shallow_issues(&self) -> Vec<IrlError> {
        let mut out = Vec::new();
        if let Err(e) = self.saturation_spec() {
            out.push(e);
        }
        if let Err(e) = self.dither_gain() {
            out.push(e);
        }
        let l = &self.learner;
        for (field, v, strict) in [
            ("learner.alpha", l.alpha, true),
            ("learner.interval_s", l.interval_s, true),
            ("learner.q2", l.q2, false),
            ("learner.k2", l.k2, false),
            ("learner.gamma_per_s", l.gamma_per_s, false),
        ] {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if !ok {
                let what = if strict { "must be positive" } else { "must be non-negative" };
                out.push(IrlError::config(field, what));
            }
        }
        if l.q1_diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            out.push(IrlError::config("learner.q1_diag", "entries must be non-negative"));
        }
        if let Ok(sim) = self.sim_config() {
            if let Err(e) = sim.validate(l.interval_s) {
                out.push(e);
            }
            if l.interval_s > 0.0 && sim.dt > 0.0 {
                if let Err(e) = crate::learner::interval_steps(l.interval_s, sim.dt) {
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.dir.as_ref().map(PathBuf::from)
    }
}

fn matrix(rows: &Option<Vec<Vec<f64>>>, field: &str) -> Result<DMatrix<f64>> {
    let rows = rows
        .as_ref()
        .ok_or_else(|| IrlError::config(field, "required for this id"))?;
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(IrlError::config(field, "must be a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_row_iterator(nr, nc, rows.iter().flatten().copied()))
}

fn vector(v: &Option<Vec<f64>>, n: usize, field: &str) -> Result<Option<DVector<f64>>> {
    match v {
        Some(v) if v.len() == n => Ok(Some(DVector::from_column_slice(v))),
        Some(v) => Err(IrlError::config(field, format!("expected {n} entries, found {}", v.len()))),
        None => Ok(None),
    }
}

/// Riccati ground truth for linear-plant, linear-reference experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub p: DMatrix<f64>,
    pub weights: DVector<f64>,
}

enum Plant {
    Linear(DMatrix<f64>, DMatrix<f64>),
    Other(AffinePlant),
}

enum Built {
    Affine(AffineScenario),
    Uav(Box<UavScenario>),
}

/// A resolved, runnable experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    scenario: Built,
    pub basis: Arc<dyn RegressorBasis>,
    pub learner: LearnerConfig,
    pub sim: SimConfig,
    pub law: UpdateLaw,
    pub initial_weights: Option<DVector<f64>>,
    pub oracle: Option<Oracle>,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("name", &self.config.experiment.name)
            .field("law", &self.law)
            .field("basis", &self.basis.name())
            .finish()
    }
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let sat = cfg.saturation_spec()?;
        let (scenario, dim_z, linear) = if cfg.plant.id == "aerosonde" {
            (Built::Uav(Box::new(build_uav(cfg)?)), 6, None)
        } else {
            let (dynamics, x0, linear) = build_affine(cfg)?;
            let dim = 2 * dynamics.n();
            (Built::Affine(AffineScenario::new(dynamics, &x0)?), dim, linear)
        };
        let basis = basis_by_name(&cfg.basis.id, dim_z)?;
        let learner = cfg.learner_config(dim_z, basis.len())?;
        let sim = cfg.sim_config()?;
        let m = match &scenario {
            Built::Affine(s) => s.m(),
            Built::Uav(s) => s.m(),
        };
        if sat.m() != m {
            return Err(IrlError::config(
                "saturation.r_diag",
                format!("expected {m} entries (one per control channel), found {}", sat.m()),
            ));
        }
        learner.validate(basis.len(), dim_z, sim.dt)?;
        sim.validate(learner.interval)?;
        let initial_weights = vector(&cfg.learner.initial_weights, basis.len(), "learner.initial_weights")?;
        let oracle = match linear {
            Some(bench) if basis.as_quadratic().is_some() => {
                let p = discounted_riccati(&bench.a, &bench.b, &learner.q1, &sat.r_matrix(), learner.gamma)?;
                let weights = ideal_weights(&p, basis.as_ref())?;
                Some(Oracle { p, weights })
            }
            _ => None,
        };
        Ok(Experiment {
            config: cfg.clone(),
            scenario,
            basis,
            learner,
            sim,
            law: cfg.experiment.law,
            initial_weights,
            oracle,
        })
    }

    pub fn uav(&self) -> Option<&UavScenario> {
        match &self.scenario {
            Built::Uav(s) => Some(s),
            Built::Affine(_) => None,
        }
    }

    pub fn scenario_mut(&mut self) -> &mut dyn Scenario {
        match &mut self.scenario {
            Built::Affine(s) => s,
            Built::Uav(s) => s.as_mut(),
        }
    }

    /// Runs to completion, consuming the scenario's state.
    pub fn run(mut self) -> std::result::Result<Telemetry, RunFailure> {
        let basis = Arc::clone(&self.basis);
        let learner = self.learner.clone();
        let sim = self.sim.clone();
        let law = self.law;
        let w0 = self.initial_weights.clone();
        run_experiment(self.scenario_mut(), basis.as_ref(), &learner, &sim, law, w0)
    }
}

fn build_plant(cfg: &ExperimentConfig) -> Result<Plant> {
    match cfg.plant.id.as_str() {
        "linear2" => {
            let (a, b) = catalog::linear2_matrices();
            Ok(Plant::Linear(a, b))
        }
        "linear" => Ok(Plant::Linear(
            matrix(&cfg.plant.a, "plant.a")?,
            matrix(&cfg.plant.b, "plant.b")?,
        )),
        "integrator" => Ok(Plant::Linear(DMatrix::zeros(1, 1), DMatrix::identity(1, 1))),
        "zero" => {
            let n = cfg
                .reference
                .x0
                .as_ref()
                .map_or(1, Vec::len)
                .max(1);
            Ok(Plant::Other(catalog::zero_plant(n, cfg.saturation.r_diag.len().max(1))))
        }
        other => Err(IrlError::config(
            "plant.id",
            format!("unknown plant `{other}`; known: {:?} and \"aerosonde\"", catalog::PLANTS),
        )),
    }
}

fn build_reference(cfg: &ExperimentConfig, n: usize) -> Result<(ReferenceModel, Option<DMatrix<f64>>)> {
    let r = &cfg.reference;
    let x0 = vector(&r.x0, n, "reference.x0")?.unwrap_or_else(|| DVector::zeros(n));
    match r.id.as_str() {
        "zero" => {
            let s = DMatrix::zeros(n, n);
            Ok((ReferenceModel::linear(s.clone(), x0)?, Some(s)))
        }
        "harmonic" => {
            let omega = r
                .omega_rad_per_s
                .ok_or_else(|| IrlError::config("reference.omega_rad_per_s", "required for harmonic"))?;
            if !(omega.is_finite()) {
                return Err(IrlError::config("reference.omega_rad_per_s", "must be finite"));
            }
            if n != 2 {
                return Err(IrlError::config("reference.id", "harmonic reference needs a two-state plant"));
            }
            let s = DMatrix::from_row_slice(2, 2, &[0.0, omega, -omega, 0.0]);
            Ok((catalog::harmonic(omega, x0)?, Some(s)))
        }
        "linear" => {
            let s = matrix(&r.s, "reference.s")?;
            if s.shape() != (n, n) {
                return Err(IrlError::config("reference.s", format!("must be {n}x{n}")));
            }
            Ok((ReferenceModel::linear(s.clone(), x0)?, Some(s)))
        }
        other => Err(IrlError::config(
            "reference.id",
            format!("unknown reference `{other}`; known: {:?}", catalog::REFERENCES),
        )),
    }
}

fn build_affine(cfg: &ExperimentConfig) -> Result<(AugmentedDynamics, DVector<f64>, Option<LinearBenchmark>)> {
    let plant = build_plant(cfg)?;
    let n = match &plant {
        Plant::Linear(a, _) => a.nrows(),
        Plant::Other(p) => p.n(),
    };
    let (reference, s) = build_reference(cfg, n)?;
    let x0 = vector(&cfg.plant.x0, n, "plant.x0")?.unwrap_or_else(|| reference.initial().clone());
    match plant {
        Plant::Linear(a, b) => {
            let bench = match s {
                Some(s) => Some(LinearBenchmark::new(a.clone(), b.clone(), s)?),
                None => None,
            };
            let dynamics = augment(AffinePlant::linear(a, b)?, reference)?;
            Ok((dynamics, x0, bench))
        }
        Plant::Other(p) => Ok((augment(p, reference)?, x0, None)),
    }
}

fn build_uav(cfg: &ExperimentConfig) -> Result<UavScenario> {
    if cfg.reference.id != "attitude_schedule" {
        return Err(IrlError::config(
            "reference.id",
            "the aerosonde plant tracks an `attitude_schedule` reference",
        ));
    }
    let airframe = match cfg.plant.airframe.as_deref() {
        None | Some("aerosonde") => Airframe::aerosonde(),
        Some(path) => {
            let full = match &cfg.base_dir {
                Some(base) => base.join(path),
                None => PathBuf::from(path),
            };
            let text = std::fs::read_to_string(&full)
                .map_err(|e| IrlError::config("plant.airframe", format!("{}: {e}", full.display())))?;
            Airframe::from_toml(&text)?
        }
    };
    let airspeed = cfg
        .plant
        .airspeed_mps
        .ok_or_else(|| IrlError::config("plant.airspeed_mps", "required for aerosonde"))?;
    let gains = match cfg.reference.outer_loop_gains_per_s {
        Some([roll, pitch, yaw]) => OuterLoopGains { roll, pitch, yaw },
        None => OuterLoopGains::default(),
    };
    if [gains.roll, gains.pitch, gains.yaw].iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(IrlError::config("reference.outer_loop_gains_per_s", "must be positive"));
    }
    let schedule: Vec<Setpoint> = cfg
        .reference
        .schedule
        .iter()
        .map(|s| Setpoint {
            t_start: s.t_start_s,
            attitude: Vector3::new(
                s.attitude_deg[0].to_radians(),
                s.attitude_deg[1].to_radians(),
                s.attitude_deg[2].to_radians(),
            ),
        })
        .collect();
    let limit = match cfg.reference.rate_limit_deg_per_s {
        Some(l) if !(l.is_finite() && l > 0.0) => {
            return Err(IrlError::config("reference.rate_limit_deg_per_s", "must be positive"))
        }
        other => other.map(f64::to_radians),
    };
    Ok(UavScenario::new(airframe, airspeed, gains, schedule)?.with_rate_limit(limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"
[experiment]
name = "tiny"

[plant]
id = "linear2"

[reference]
id = "harmonic"
omega_rad_per_s = 1.0
x0 = [1.0, 0.0]

[basis]
id = "quadratic"

[saturation]
u_max = 50.0
r_diag = [1.0]

[learner]
alpha = 10.0
q2 = 0.0
k2 = 0.0
gamma_per_s = 0.1
interval_s = 0.001
q1_diag = [10.0, 10.0, 0.0, 0.0]

[sim]
dt_s = 0.001
t_end_s = 0.1
"#;

    #[test]
    fn parses_and_builds_with_oracle() {
        let cfg = ExperimentConfig::from_toml(LINEAR).unwrap();
        assert!(cfg.issues().is_empty());
        let exp = Experiment::build(&cfg).unwrap();
        assert_eq!(exp.basis.len(), 14);
        assert!(exp.oracle.is_some());
        assert_eq!(exp.learner.robust_k1[3], 0.01);
        let tel = exp.run().unwrap();
        assert_eq!(tel.records.len(), 101);
    }

    #[test]
    fn overrides_replace_values() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            LINEAR,
            &["learner.alpha=2.5".into(), "experiment.law=baseline".into(), "sim.dither_gain_deg=3".into()],
        )
        .unwrap();
        assert_eq!(cfg.learner.alpha, 2.5);
        assert_eq!(cfg.experiment.law, UpdateLaw::Baseline);
        assert!((cfg.dither_gain().unwrap() - 3f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn negative_saturation_names_the_field() {
        let cfg = ExperimentConfig::from_toml_with_overrides(LINEAR, &["saturation.u_max=-1".into()]).unwrap();
        let issues = cfg.issues();
        assert!(issues
            .iter()
            .any(|e| matches!(e, IrlError::Config { field, .. } if field == "saturation.u_max")));
    }

    #[test]
    fn interval_shorter_than_step_is_rejected() {
        let cfg = ExperimentConfig::from_toml_with_overrides(LINEAR, &["learner.interval_s=0.0005".into()]).unwrap();
        let text: Vec<String> = cfg.issues().iter().map(|e| e.to_string()).collect();
        assert!(text.iter().any(|t| t.contains("sim.dt_s") && t.contains("reinforcement interval")));
    }

    #[test]
    fn parse_errors_carry_a_line() {
        let broken = LINEAR.replace("alpha = 10.0", "alpha = ");
        let err = ExperimentConfig::from_toml(&broken).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let extra = LINEAR.replace("q2 = 0.0", "q2 = 0.0\nq3 = 1.0");
        let err = ExperimentConfig::from_toml(&extra).unwrap_err().to_string();
        assert!(err.contains("q3"), "{err}");
    }

    #[test]
    fn unknown_plant_is_reported() {
        let cfg = ExperimentConfig::from_toml_with_overrides(LINEAR, &["plant.id=\"pendulum\"".into()]).unwrap();
        assert!(cfg.issues()[0].to_string().contains("plant.id"));
    }

    #[test]
    fn degree_units_convert() {
        let cfg = ExperimentConfig::from_toml(&LINEAR.replace("u_max = 50.0", "u_max_deg = 90.0")).unwrap();
        assert!((cfg.u_max().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
