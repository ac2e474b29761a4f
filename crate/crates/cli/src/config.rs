use std::path::{Path, PathBuf};

use affleg::immersion::ImmersionSpec;
use affleg::model::ModelSpec;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Bad config file or flag combination; maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    Ascent,
    Descent,
}

/// Per-check tolerance overrides. Every value must be positive.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub structure: Option<f64>,
    pub eta_einstein: Option<f64>,
    pub rho_oracle: Option<f64>,
    pub first_variation: Option<f64>,
    pub second_variation: Option<f64>,
    pub eigen_residual: Option<f64>,
    pub stability: Option<f64>,
    pub convexity: Option<f64>,
    pub modulus: Option<f64>,
    pub angle_gradient: Option<f64>,
    pub calibration: Option<f64>,
    pub special_defect: Option<f64>,
    pub moduli_defect: Option<f64>,
    pub flow: Option<f64>,
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, Option<f64>); 14] {
        [
            ("structure", self.structure),
            ("eta_einstein", self.eta_einstein),
            ("rho_oracle", self.rho_oracle),
            ("first_variation", self.first_variation),
            ("second_variation", self.second_variation),
            ("eigen_residual", self.eigen_residual),
            ("stability", self.stability),
            ("convexity", self.convexity),
            ("modulus", self.modulus),
            ("angle_gradient", self.angle_gradient),
            ("calibration", self.calibration),
            ("special_defect", self.special_defect),
            ("moduli_defect", self.moduli_defect),
            ("flow", self.flow),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub plots: Option<PathBuf>,
    /// Adds wall time to the report, which then stops being byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub immersion: Option<ImmersionSpec>,
    pub nodes: usize,
    pub seed: u64,
    /// Random points, random fields or geodesics, depending on the command.
    pub samples: usize,
    pub steps: usize,
    pub step_size: f64,
    pub t_final: f64,
    pub dt: f64,
    pub direction: FlowDirection,
    /// Highest Fourier mode kept in flow step directions.
    pub modes: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn immersion(&self) -> Result<&ImmersionSpec, ConfigError> {
        self.immersion.as_ref().ok_or_else(|| ConfigError("this command needs an immersion family".into()))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for (name, tol) in self.tolerances.entries() {
            if let Some(t) = tol {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(ConfigError(format!("tolerance {name} must be positive, got {t}")));
                }
            }
        }
        if self.nodes < 3 {
            return Err(ConfigError(format!("nodes must be at least 3, got {}", self.nodes)));
        }
        for (name, v) in [("step_size", self.step_size), ("t_final", self.t_final), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.samples == 0 || self.steps == 0 {
            return Err(ConfigError("samples and steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Flag values that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub model_params: Vec<(&'static str, Value)>,
    pub family: Option<String>,
    pub family_params: Vec<(&'static str, Value)>,
    pub top_level: Vec<(&'static str, Value)>,
    pub output: Vec<(&'static str, Value)>,
    pub tolerances: Vec<(String, f64)>,
}

fn table(v: &mut Value) -> &mut Table {
    if !v.is_table() {
        *v = Value::Table(Table::new());
    }
    v.as_table_mut().unwrap()
}

fn sub<'a>(t: &'a mut Table, key: &str) -> &'a mut Table {
    table(t.entry(key).or_insert_with(|| Value::Table(Table::new())))
}

/// Replace the tagged sub-table when the tag changes, then set the tag.
fn retag(t: &mut Table, key: &str, tag: &str, value: &str) {
    let s = sub(t, key);
    if s.get(tag).and_then(Value::as_str) != Some(value) {
        s.clear();
        s.insert(tag.into(), Value::String(value.into()));
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(defaults: &ExperimentConfig, file: Option<&Path>, flags: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut merged = Table::try_from(defaults).map_err(|e| ConfigError(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let user: Table = text.parse().map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        for (key, value) in user {
            match (key.as_str(), value) {
                ("output" | "tolerances", Value::Table(t)) => sub(&mut merged, &key).extend(t),
                (_, value) => {
                    merged.insert(key, value);
                }
            }
        }
    }
    if let Some(kind) = &flags.model {
        // Every model kind has n; keep it across a kind change.
        let n = merged.get("model").and_then(|m| m.get("n")).cloned();
        retag(&mut merged, "model", "kind", kind);
        if let Some(n) = n {
            sub(&mut merged, "model").entry("n").or_insert(n);
        }
    }
    for (key, value) in &flags.model_params {
        sub(&mut merged, "model").insert((*key).into(), value.clone());
    }
    if let Some(family) = &flags.family {
        retag(&mut merged, "immersion", "family", family);
    }
    // The Heisenberg line lives in the model's dimension.
    let line = merged.get("immersion").and_then(|i| i.get("family")).and_then(Value::as_str) == Some("heisenberg_line");
    if line {
        if let Some((_, n)) = flags.model_params.iter().find(|(k, _)| *k == "n") {
            sub(&mut merged, "immersion").insert("n".into(), n.clone());
        }
    }
    for (key, value) in &flags.family_params {
        sub(&mut merged, "immersion").insert((*key).into(), value.clone());
    }
    for (key, value) in &flags.top_level {
        merged.insert((*key).into(), value.clone());
    }
    for (key, value) in &flags.output {
        sub(&mut merged, "output").insert((*key).into(), value.clone());
    }
    for (key, value) in &flags.tolerances {
        sub(&mut merged, "tolerances").insert(key.clone(), Value::Float(*value));
    }
    let config: ExperimentConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelSpec::Sphere { n: 2 },
            immersion: Some(ImmersionSpec::TorusCurve { a: 0.6, k: 2.0 }),
            nodes: 64,
            seed: 0,
            samples: 3,
            steps: 10,
            step_size: 0.05,
            t_final: 0.5,
            dt: 1e-3,
            direction: FlowDirection::Ascent,
            modes: 2,
            tolerances: Tolerances::default(),
            output: OutputConfig::default(),
        }
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_round_trip() {
        assert_eq!(resolve(&base(), None, &Overrides::default()).unwrap(), base());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let f = file("nodes = 32\nseed = 9\n[tolerances]\nrho_oracle = 1e-6\n");
        let flags = Overrides {
            top_level: vec![("nodes", Value::Integer(48))],
            tolerances: vec![("modulus".into(), 1e-4)],
            ..Default::default()
        };
        let c = resolve(&base(), Some(f.path()), &flags).unwrap();
        assert_eq!((c.nodes, c.seed, c.samples), (48, 9, 3));
        assert_eq!(c.tolerances.rho_oracle, Some(1e-6));
        assert_eq!(c.tolerances.modulus, Some(1e-4));
    }

    #[test]
    fn model_kind_change_keeps_dimension() {
        let flags = Overrides {
            model: Some("perturbed_heisenberg".into()),
            model_params: vec![("delta", Value::Float(0.1))],
            ..Default::default()
        };
        let c = resolve(&base(), None, &flags).unwrap();
        assert_eq!(c.model, ModelSpec::PerturbedHeisenberg { n: 2, delta: 0.1 });
    }

    #[test]
    fn family_change_drops_old_parameters() {
        let flags = Overrides { family: Some("great_circle".into()), ..Default::default() };
        let c = resolve(&base(), None, &flags).unwrap();
        assert_eq!(c.immersion, Some(ImmersionSpec::GreatCircle { phase: 0.0 }));
        // Same family: parameters merge instead.
        let flags = Overrides {
            family: Some("torus_curve".into()),
            family_params: vec![("k", Value::Float(-1.0))],
            ..Default::default()
        };
        let c = resolve(&base(), None, &flags).unwrap();
        assert_eq!(c.immersion, Some(ImmersionSpec::TorusCurve { a: 0.6, k: -1.0 }));
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["nodes = 2\n", "step_size = -1.0\n", "bogus = 1\n", "[tolerances]\nflow = 0.0\n", "nodes = \n"] {
            let f = file(text);
            assert!(resolve(&base(), Some(f.path()), &Overrides::default()).is_err(), "{text:?}");
        }
        let missing = Path::new("/nonexistent/affleg.toml");
        assert!(resolve(&base(), Some(missing), &Overrides::default()).is_err());
    }
}
