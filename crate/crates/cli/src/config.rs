//! Run configuration: a sectioned TOML file in which every key is optional.
//!
//! ```toml
//! [model]
//! levels = 3            # 2 or 3 select the built-in atoms
//! # energies = [...]    # custom atom: ascending level energies
//! # dipoles = [[...]]   # and the symmetric dipole matrix
//!
//! [cavity]
//! n_modes = 400
//! length = 2.362e5
//! atom_position = 1.181e5
//! coupling = 0.0103
//!
//! [mtef]
//! n_traj = 10000
//! seed = 0
//! dt = 0.02
//!
//! [exact]
//! per_mode_cap = 2
//! total_cap = 2
//! krylov_dimension = 30
//! tolerance = 1e-11
//! memory_budget = 2000000
//!
//! [output]
//! t_final = 2100.0
//! snapshot_times = [100.0, 600.0, 1200.0, 2100.0]
//! series_interval = 10.0
//! grid_points = 1024
//! g2_points = 256
//! directory = "out"
//! format = "csv"
//!
//! [estimators]
//! g2 = "full"           # or "paper"
//! intensity = "full"    # or "diagonal"
//! mask_fraction = 1e-3
//! ```

use std::fmt;

use mtef_core::exact::{ExactConfig, KrylovOptions, DEFAULT_MEMORY_BUDGET};
use mtef_core::model::{AtomModel, CavityModel, Constants, DEFAULT_COUPLING, DEFAULT_LENGTH, DEFAULT_MODES};
use mtef_core::mtef::{
    RunPlan, DEFAULT_DT, DEFAULT_G2_POINTS, DEFAULT_GRID_POINTS, DEFAULT_SERIES_INTERVAL, DEFAULT_SNAPSHOTS,
    DEFAULT_T_FINAL,
};
use mtef_core::observables::{EstimatorOptions, G2Variant, IntensityVariant, DEFAULT_MASK_FRACTION};
use mtef_core::sampling::EnsembleSpec;
use serde::{Deserialize, Deserializer, Serialize};

pub const DEFAULT_N_TRAJ: usize = 10_000;

/// Accept integer literals wherever a float is expected (`t_final = 2100`).
mod number {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Number {
        Int(i64),
        Float(f64),
    }

    impl From<Number> for f64 {
        fn from(n: Number) -> f64 {
            match n {
                Number::Int(i) => i as f64,
                Number::Float(x) => x,
            }
        }
    }

    pub fn float<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Number::deserialize(d).map(f64::from)
    }

    pub fn optional<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Number>::deserialize(d)?.map(f64::from))
    }

    pub fn list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Number>::deserialize(d)?.into_iter().map(f64::from).collect())
    }

    pub fn optional_list<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        Ok(Option::<Vec<Number>>::deserialize(d)?.map(|v| v.into_iter().map(f64::from).collect()))
    }

    pub fn optional_matrix<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        Ok(Option::<Vec<Vec<Number>>>::deserialize(d)?
            .map(|m| m.into_iter().map(|row| row.into_iter().map(f64::from).collect()).collect()))
    }
}

/// A rejected configuration, pointing at the offending key when possible.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct ConfigError {
    /// dotted key, e.g. `mtef.dt`
    pub key: Option<String>,
    /// 1-based line of the key in the source text
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.key, self.line) {
            (Some(key), Some(line)) => write!(f, "invalid `{key}` (line {line}): {}", self.message),
            (Some(key), None) => write!(f, "invalid `{key}`: {}", self.message),
            (None, Some(line)) => write!(f, "line {line}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub levels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(deserialize_with = "number::optional_list", default)]
    pub energies: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(deserialize_with = "number::optional_matrix", default)]
    pub dipoles: Option<Vec<Vec<f64>>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            levels: 2,
            energies: None,
            dipoles: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavitySection {
    pub n_modes: usize,
    #[serde(deserialize_with = "number::float")]
    pub length: f64,
    /// defaults to the cavity center
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(deserialize_with = "number::optional", default)]
    pub atom_position: Option<f64>,
    #[serde(deserialize_with = "number::float")]
    pub coupling: f64,
}

impl Default for CavitySection {
    fn default() -> Self {
        Self {
            n_modes: DEFAULT_MODES,
            length: DEFAULT_LENGTH,
            atom_position: None,
            coupling: DEFAULT_COUPLING,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtefSection {
    pub n_traj: usize,
    pub seed: u64,
    #[serde(deserialize_with = "number::float")]
    pub dt: f64,
}

impl Default for MtefSection {
    fn default() -> Self {
        Self {
            n_traj: DEFAULT_N_TRAJ,
            seed: 0,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactSection {
    pub per_mode_cap: u32,
    pub total_cap: u32,
    pub krylov_dimension: usize,
    #[serde(deserialize_with = "number::float")]
    pub tolerance: f64,
    pub memory_budget: usize,
}

impl Default for ExactSection {
    fn default() -> Self {
        let k = KrylovOptions::default();
        Self {
            per_mode_cap: 2,
            total_cap: 2,
            krylov_dimension: k.dimension,
            tolerance: k.tolerance,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(deserialize_with = "number::float")]
    pub t_final: f64,
    #[serde(deserialize_with = "number::list")]
    pub snapshot_times: Vec<f64>,
    #[serde(deserialize_with = "number::float")]
    pub series_interval: f64,
    pub grid_points: usize,
    pub g2_points: usize,
    pub directory: String,
    pub format: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            t_final: DEFAULT_T_FINAL,
            snapshot_times: DEFAULT_SNAPSHOTS.to_vec(),
            series_interval: DEFAULT_SERIES_INTERVAL,
            grid_points: DEFAULT_GRID_POINTS,
            g2_points: DEFAULT_G2_POINTS,
            directory: "out".into(),
            format: "csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub g2: String,
    pub intensity: String,
    #[serde(deserialize_with = "number::float")]
    pub mask_fraction: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            g2: G2Variant::default().as_str().into(),
            intensity: IntensityVariant::default().as_str().into(),
            mask_fraction: DEFAULT_MASK_FRACTION,
        }
    }
}

/// Complete run configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub cavity: CavitySection,
    pub mtef: MtefSection,
    pub exact: ExactSection,
    pub output: OutputSection,
    pub estimators: EstimatorSection,
}

/// Line of `key` inside `[section]`, if it is written out in `text`.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            current = header.trim_end_matches(']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(n + 1);
                }
            }
        }
    }
    None
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Checker<'a> {
    text: &'a str,
}

impl Checker<'_> {
    fn fail(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            key: Some(format!("{section}.{key}")),
            line: locate(self.text, section, key),
            message: message.into(),
        }
    }

    fn positive(&self, section: &str, key: &str, v: f64) -> Result<(), ConfigError> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(self.fail(section, key, format!("must be a positive finite number, got {v}")))
        }
    }

    fn at_least(&self, section: &str, key: &str, v: usize, min: usize) -> Result<(), ConfigError> {
        if v >= min {
            Ok(())
        } else {
            Err(self.fail(section, key, format!("must be at least {min}, got {v}")))
        }
    }

    fn multiple_of_dt(&self, section: &str, key: &str, t: f64, dt: f64) -> Result<(), ConfigError> {
        let n = (t / dt).round();
        if (n * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(self.fail(section, key, format!("{t} is not a multiple of mtef.dt = {dt}")));
        }
        Ok(())
    }
}

impl RunConfig {
    /// Atom described by the `[model]` section.
    pub fn atom(&self) -> mtef_core::Result<AtomModel> {
        match (&self.model.energies, &self.model.dipoles) {
            (Some(e), Some(d)) => AtomModel::new(e.clone(), d.clone()),
            _ => AtomModel::paper_default(self.model.levels),
        }
    }

    pub fn cavity(&self) -> mtef_core::Result<CavityModel> {
        let c = &self.cavity;
        CavityModel::build(
            c.n_modes,
            c.length,
            c.atom_position.unwrap_or(c.length / 2.0),
            c.coupling,
            Constants::default(),
        )
    }

    pub fn estimators(&self) -> EstimatorOptions {
        EstimatorOptions {
            g2: self.estimators.g2.parse().unwrap_or_default(),
            intensity: self.estimators.intensity.parse().unwrap_or_default(),
            mask_fraction: self.estimators.mask_fraction,
        }
    }

    pub fn plan(&self, cavity: &CavityModel) -> RunPlan {
        let o = &self.output;
        RunPlan {
            dt: self.mtef.dt,
            t_final: o.t_final,
            snapshot_times: o.snapshot_times.clone(),
            series_interval: o.series_interval,
            r_grid: cavity.uniform_grid(o.grid_points),
            g2_grid: cavity.uniform_grid(o.g2_points),
            estimators: self.estimators(),
        }
    }

    pub fn ensemble(&self) -> mtef_core::Result<EnsembleSpec> {
        EnsembleSpec::uniform(self.mtef.n_traj, self.mtef.seed)
    }

    pub fn exact_config(&self) -> ExactConfig {
        let e = &self.exact;
        ExactConfig {
            per_mode_cap: e.per_mode_cap,
            total_cap: e.total_cap,
            krylov: KrylovOptions {
                dimension: e.krylov_dimension,
                tolerance: e.tolerance,
            },
            memory_budget: e.memory_budget,
        }
    }

    /// Fill in the values that default to functions of other keys.
    fn resolve(&mut self) -> mtef_core::Result<()> {
        if self.model.energies.is_none() && self.model.dipoles.is_none() {
            let atom = AtomModel::paper_default(self.model.levels)?;
            let m = atom.levels();
            self.model.energies = Some(atom.energies().to_vec());
            self.model.dipoles = Some((0..m).map(|k| (0..m).map(|l| atom.dipole(k, l)).collect()).collect());
        }
        if let Some(e) = &self.model.energies {
            self.model.levels = e.len();
        }
        self.cavity.atom_position.get_or_insert(self.cavity.length / 2.0);
        Ok(())
    }

    fn validate(&self, text: &str) -> Result<(), ConfigError> {
        let ck = Checker { text };
        let m = &self.model;
        match (&m.energies, &m.dipoles) {
            (None, None) if !(2..=3).contains(&m.levels) => {
                return Err(ck.fail(
                    "model",
                    "levels",
                    format!("no built-in atom with {} levels (use 2 or 3, or give energies and dipoles)", m.levels),
                ));
            }
            // a missing partner key has no line of its own; point at the one given
            (Some(_), None) => {
                let mut err = ck.fail("model", "dipoles", "required together with model.energies");
                err.line = locate(text, "model", "energies");
                return Err(err);
            }
            (None, Some(_)) => {
                let mut err = ck.fail("model", "energies", "required together with model.dipoles");
                err.line = locate(text, "model", "dipoles");
                return Err(err);
            }
            (Some(e), Some(_)) => {
                if locate(text, "model", "levels").is_some() && e.len() != m.levels {
                    return Err(ck.fail(
                        "model",
                        "levels",
                        format!("{} levels but {} energies", m.levels, e.len()),
                    ));
                }
                if let Err(err) = self.atom() {
                    let key = if err.to_string().contains("dipole") { "dipoles" } else { "energies" };
                    return Err(ck.fail("model", key, err.to_string()));
                }
            }
            _ => {}
        }

        let c = &self.cavity;
        ck.at_least("cavity", "n_modes", c.n_modes, 1)?;
        ck.positive("cavity", "length", c.length)?;
        if let Some(r) = c.atom_position {
            if !(r > 0.0 && r < c.length) {
                return Err(ck.fail("cavity", "atom_position", format!("must lie strictly inside (0, {})", c.length)));
            }
        }
        if !c.coupling.is_finite() {
            return Err(ck.fail("cavity", "coupling", "must be finite"));
        }

        ck.at_least("mtef", "n_traj", self.mtef.n_traj, 1)?;
        ck.positive("mtef", "dt", self.mtef.dt)?;

        let e = &self.exact;
        if e.per_mode_cap < 1 {
            return Err(ck.fail("exact", "per_mode_cap", "must be at least 1"));
        }
        if e.total_cap < 1 {
            return Err(ck.fail("exact", "total_cap", "must be at least 1"));
        }
        ck.at_least("exact", "krylov_dimension", e.krylov_dimension, 2)?;
        ck.positive("exact", "tolerance", e.tolerance)?;
        ck.at_least("exact", "memory_budget", e.memory_budget, 1)?;

        let o = &self.output;
        let dt = self.mtef.dt;
        ck.positive("output", "t_final", o.t_final)?;
        ck.multiple_of_dt("output", "t_final", o.t_final, dt)?;
        ck.positive("output", "series_interval", o.series_interval)?;
        ck.multiple_of_dt("output", "series_interval", o.series_interval, dt)?;
        for (k, &t) in o.snapshot_times.iter().enumerate() {
            if !(0.0..=o.t_final).contains(&t) {
                return Err(ck.fail("output", "snapshot_times", format!("{t} outside [0, t_final = {}]", o.t_final)));
            }
            ck.multiple_of_dt("output", "snapshot_times", t, dt)?;
            if o.snapshot_times[..k].iter().any(|&s| (s - t).abs() < 0.5 * dt) {
                return Err(ck.fail("output", "snapshot_times", format!("duplicate time {t}")));
            }
        }
        ck.at_least("output", "grid_points", o.grid_points, 2)?;
        ck.at_least("output", "g2_points", o.g2_points, 2)?;
        if o.directory.is_empty() {
            return Err(ck.fail("output", "directory", "must not be empty"));
        }
        if o.format != "csv" {
            return Err(ck.fail("output", "format", format!("unsupported format `{}` (only `csv`)", o.format)));
        }

        let s = &self.estimators;
        if let Err(err) = s.g2.parse::<G2Variant>() {
            return Err(ck.fail("estimators", "g2", err.to_string()));
        }
        if let Err(err) = s.intensity.parse::<IntensityVariant>() {
            return Err(ck.fail("estimators", "intensity", err.to_string()));
        }
        if !(s.mask_fraction >= 0.0 && s.mask_fraction < 1.0) {
            return Err(ck.fail("estimators", "mask_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Serialize as TOML that [`parse_config`] reads back unchanged.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }
}

/// Parse, validate and resolve a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut config: RunConfig = toml::from_str(text).map_err(|err| ConfigError {
        key: None,
        line: err.span().map(|s| line_of(text, s.start)),
        message: err.message().to_string(),
    })?;
    config.validate(text)?;
    config.resolve().map_err(|err| ConfigError {
        key: Some("model.levels".into()),
        line: locate(text, "model", "levels"),
        message: err.to_string(),
    })?;
    Ok(config)
}
