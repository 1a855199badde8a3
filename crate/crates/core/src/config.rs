//! JSON run configuration: the system, the two schedules and optional run parameters.
//!
//! ```json
//! {
//!   "n": 1, "m": 1,
//!   "A11": [[2.0]], "A12": [[1.0]], "A21": [[1.0]], "A22": [[1.0]],
//!   "b1": [1.0], "b2": [2.0],
//!   "noise": {"Gamma11": [[1.0]], "Gamma12": [[0.0]], "Gamma22": [[1.0]], "distribution": "gaussian"},
//!   "beta": {"base": 1.0, "tau": 10.0, "alpha": 1.0},
//!   "gamma": {"base": 1.0, "tau": 10.0, "alpha": 0.7},
//!   "run": {"replicas": 4000, "steps": 100000, "seed": 1}
//! }
//! ```
//!
//! The system fields may instead live in a separate file named by a
//! `"system"` string, resolved relative to the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::Initial;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{NoiseDistribution, NoiseSpec, SystemSpec};
use crate::schedules::{ScheduleParams, SchedulePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFile {
    #[serde(rename = "Gamma11")]
    pub gamma11: Vec<Vec<f64>>,
    #[serde(rename = "Gamma12")]
    pub gamma12: Vec<Vec<f64>>,
    #[serde(rename = "Gamma22")]
    pub gamma22: Vec<Vec<f64>>,
    #[serde(default)]
    pub distribution: NoiseDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A11")]
    pub a11: Vec<Vec<f64>>,
    #[serde(rename = "A12")]
    pub a12: Vec<Vec<f64>>,
    #[serde(rename = "A21")]
    pub a21: Vec<Vec<f64>>,
    #[serde(rename = "A22")]
    pub a22: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub noise: NoiseFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitFile {
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
}

/// Optional command parameters; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<InitFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub system: SystemFile,
    pub beta: ScheduleParams,
    pub gamma: ScheduleParams,
    #[serde(default, skip_serializing_if = "is_default")]
    pub run: RunParams,
}

fn is_default(p: &RunParams) -> bool {
    *p == RunParams::default()
}

const SYSTEM_KEYS: [&str; 9] = ["n", "m", "A11", "A12", "A21", "A22", "b1", "b2", "noise"];

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<Matrix> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(name: &str, v: &[f64], len: usize) -> Result<Vector> {
    if v.len() != len {
        return Err(Error::Dimension(format!("{name} must have length {len}")));
    }
    Ok(Vector::from_column_slice(v))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl SystemFile {
    pub fn to_spec(&self) -> Result<SystemSpec> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return Err(Error::Dimension("n and m must be positive".into()));
        }
        let noise = NoiseSpec::new(
            matrix("Gamma11", &self.noise.gamma11, n, n)?,
            matrix("Gamma12", &self.noise.gamma12, n, m)?,
            matrix("Gamma22", &self.noise.gamma22, m, m)?,
            self.noise.distribution,
        );
        SystemSpec::new(
            matrix("A11", &self.a11, n, n)?,
            matrix("A12", &self.a12, n, m)?,
            matrix("A21", &self.a21, m, n)?,
            matrix("A22", &self.a22, m, m)?,
            vector("b1", &self.b1, n)?,
            vector("b2", &self.b2, m)?,
            noise,
        )
    }

    pub fn from_spec(spec: &SystemSpec) -> Self {
        Self {
            n: spec.n(),
            m: spec.m(),
            a11: rows(&spec.a11),
            a12: rows(&spec.a12),
            a21: rows(&spec.a21),
            a22: rows(&spec.a22),
            b1: spec.b1.iter().copied().collect(),
            b2: spec.b2.iter().copied().collect(),
            noise: NoiseFile {
                gamma11: rows(&spec.noise.gamma11),
                gamma12: rows(&spec.noise.gamma12),
                gamma22: rows(&spec.noise.gamma22),
                distribution: spec.noise.distribution,
            },
        }
    }
}

impl RunConfig {
    pub fn new(spec: &SystemSpec, beta: ScheduleParams, gamma: ScheduleParams) -> Self {
        Self {
            system: SystemFile::from_spec(spec),
            beta,
            gamma,
            run: RunParams::default(),
        }
    }

    /// Parses config text; `base_dir` resolves a `"system"` file reference.
    pub fn from_json_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| config_err("config must be a JSON object"))?;
        if let Some(reference) = obj.remove("system") {
            let rel = reference
                .as_str()
                .ok_or_else(|| config_err("\"system\" must be a file path"))?;
            let path = base_dir.map(|d| d.join(rel)).unwrap_or_else(|| PathBuf::from(rel));
            let sys_text = std::fs::read_to_string(&path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let sys: Value = serde_json::from_str(&sys_text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let sys = sys
                .as_object()
                .ok_or_else(|| config_err(format!("{}: expected a JSON object", path.display())))?;
            for (k, v) in sys {
                if obj.contains_key(k) {
                    return Err(config_err(format!("\"{k}\" given both inline and in {}", path.display())));
                }
                obj.insert(k.clone(), v.clone());
            }
        }
        let allowed: Vec<&str> = SYSTEM_KEYS.iter().copied().chain(["beta", "gamma", "run"]).collect();
        if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(config_err(format!("unknown key \"{k}\"")));
        }
        serde_json::from_value(value).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text, path.parent())
    }

    /// Pretty JSON with the system inlined; floats print in shortest round-trip form.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config values are always serializable")
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        self.system.to_spec()
    }

    pub fn schedule_pair(&self) -> Result<SchedulePair> {
        SchedulePair::from_params(self.beta, self.gamma)
    }

    pub fn initial(&self, spec: &SystemSpec) -> Result<Initial> {
        match &self.run.init {
            None => Ok(Initial::origin(spec)),
            Some(init) => {
                let out = Initial::new(vector("init.theta", &init.theta, spec.n())?, vector("init.r", &init.r, spec.m())?);
                out.check(spec)?;
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use proptest::prelude::*;

    const SYS_A: &str = r#"{
        "n": 1, "m": 1,
        "A11": [[2.0]], "A12": [[1.0]], "A21": [[1.0]], "A22": [[1.0]],
        "b1": [1.0], "b2": [2.0],
        "noise": {"Gamma11": [[1.0]], "Gamma12": [[0.0]], "Gamma22": [[1.0]]},
        "beta": {"base": 1.0, "tau": 10.0, "alpha": 1.0},
        "gamma": {"base": 1.0, "tau": 10.0, "alpha": 0.7}
    }"#;

    #[test]
    fn parses_inline_system() {
        let cfg = RunConfig::from_json_str(SYS_A, None).unwrap();
        let spec = cfg.system_spec().unwrap();
        assert_eq!(spec.a11, sys_a().a11);
        assert_eq!(spec.noise.distribution, NoiseDistribution::Gaussian);
        assert!((cfg.schedule_pair().unwrap().beta_bar - 0.1).abs() < 1e-15);
    }

    #[test]
    fn canonical_round_trip() {
        let cfg = RunConfig::from_json_str(SYS_A, None).unwrap();
        let text = cfg.to_canonical_json();
        let again = RunConfig::from_json_str(&text, None).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_canonical_json());
    }

    #[test]
    fn resolves_system_file() {
        let dir = tempfile::tempdir().unwrap();
        let sys: Value = serde_json::from_str(SYS_A).unwrap();
        let mut sys = sys.as_object().unwrap().clone();
        sys.remove("beta");
        sys.remove("gamma");
        std::fs::write(dir.path().join("sys.json"), Value::Object(sys).to_string()).unwrap();
        let main = r#"{"system": "sys.json",
            "beta": {"base": 1.0, "tau": 10.0, "alpha": 1.0},
            "gamma": {"base": 1.0, "tau": 10.0, "alpha": 0.7},
            "run": {"replicas": 10, "seed": 3}}"#;
        std::fs::write(dir.path().join("run.json"), main).unwrap();
        let cfg = RunConfig::load(&dir.path().join("run.json")).unwrap();
        assert_eq!(cfg.run.replicas, Some(10));
        assert_eq!(cfg.system, RunConfig::from_json_str(SYS_A, None).unwrap().system);
    }

    #[test]
    fn malformed_and_unknown_rejected() {
        assert!(matches!(RunConfig::from_json_str("{not json", None), Err(Error::Config(_))));
        let extra = SYS_A.replacen("\"n\": 1", "\"n\": 1, \"bogus\": 2", 1);
        assert!(matches!(RunConfig::from_json_str(&extra, None), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_shapes_are_dimension_errors() {
        let bad = SYS_A.replace("\"A12\": [[1.0]]", "\"A12\": [[1.0, 2.0]]");
        let cfg = RunConfig::from_json_str(&bad, None).unwrap();
        assert!(matches!(cfg.system_spec(), Err(Error::Dimension(_))));
    }

    #[test]
    fn rademacher_tag() {
        let text = SYS_A.replace("\"Gamma22\": [[1.0]]}", "\"Gamma22\": [[1.0]], \"distribution\": \"scaled-rademacher\"}");
        let cfg = RunConfig::from_json_str(&text, None).unwrap();
        assert_eq!(cfg.system.noise.distribution, NoiseDistribution::ScaledRademacher);
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(
            vals in proptest::collection::vec(-1e6f64..1e6, 4),
            seed in any::<u64>(),
            steps in 1u64..1_000_000_000,
        ) {
            let mut cfg = RunConfig::from_json_str(SYS_A, None).unwrap();
            cfg.system.a11 = vec![vec![vals[0]]];
            cfg.system.b1 = vec![vals[1]];
            cfg.beta.base = vals[2].abs() + 1e-3;
            cfg.gamma.tau = vals[3].abs() + 1e-3;
            cfg.run.seed = Some(seed);
            cfg.run.steps = Some(steps);
            let text = cfg.to_canonical_json();
            let again = RunConfig::from_json_str(&text, None).unwrap();
            prop_assert_eq!(&cfg, &again);
            prop_assert_eq!(text, again.to_canonical_json());
        }
    }
}
