//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "dataset": { "source": "two_moons", "n": 2000, "noise": 0.2,
//!                "label_noise": 0.4, "split": [0.6, 0.2, 0.2], "standardize": true },
//!   "model": { "hidden": [32, 32], "activation": "relu" },
//!   "optimizer": { "lr": 0.01, "momentum": 0.9, "weight_decay": 0.0001,
//!                  "schedule": [[60, 0.2]], "epochs": 100, "batch_size": 32 },
//!   "regularizers": ["none", { "variant": "logdet", "lambda1": 0.001 }],
//!   "seeds": [0, 1, 2],
//!   "grid": { "lambda1": [0.0001, 0.001], "lambda2": [0.001], "gamma": [1, 10] },
//!   "output": "results.csv",
//!   "curves": "curves.csv"
//! }
//! ```
//!
//! Only `dataset` and `model` are required. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::diversity::{RegularizerSpec, Variant};
use crate::error::{Error, Result};
use crate::network::Activation;

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);
pub const DEFAULT_OUTPUT: &str = "results.csv";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    TwoMoons { n: usize, noise: f64 },
    Blobs { n_per_class: usize, num_classes: usize, dim: usize, spread: f64 },
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf, label_column: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Fraction of train and validation labels flipped; test stays clean.
    pub label_noise: f64,
    pub split: (f64, f64, f64),
    /// Z-score features with statistics of the training split.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Vec<(usize, f64)>,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Vec::new(),
            epochs: 100,
            batch_size: 32,
        }
    }
}

/// Hyperparameter axes for `sweep`. An empty axis keeps each regulariser's
/// own value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub regularizers: Vec<RegularizerSpec>,
    pub seeds: Vec<u64>,
    pub grid: Grid,
    pub output: PathBuf,
    pub curves: Option<PathBuf>,
}

/// Reads and parses a config file; relative data paths resolve against the
/// file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config_in(&text, path.parent())
}

/// Parses a config with data paths taken relative to the working directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_in(text, None)
}

pub fn parse_config_in(text: &str, base: Option<&Path>) -> Result<ExperimentConfig> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
        key: "<root>".into(),
        msg: format!("invalid JSON: {e}"),
    })?;
    let root = Obj::new(&root, "")?;
    root.only(&["dataset", "model", "optimizer", "regularizers", "seeds", "grid", "output", "curves"])?;

    let dataset = parse_dataset(&root.required_obj("dataset")?, base)?;
    let model = parse_model(&root.required_obj("model")?)?;
    let optimizer = match root.opt_obj("optimizer")? {
        Some(o) => parse_optimizer(&o)?,
        None => OptimizerConfig::default(),
    };

    let regularizers = match root.get("regularizers") {
        None => Variant::ALL.iter().map(|&v| RegularizerSpec::new(v)).collect(),
        Some(v) => {
            let items = v.as_array().ok_or_else(|| schema("regularizers", "expected an array"))?;
            items
                .iter()
                .enumerate()
                .map(|(i, item)| parse_regularizer(item, &format!("regularizers[{i}]")))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if regularizers.is_empty() {
        return Err(schema("regularizers", "at least one variant is required"));
    }

    let seeds = match root.get("seeds") {
        None => vec![0],
        Some(v) => v
            .as_array()
            .ok_or_else(|| schema("seeds", "expected an array of integers"))?
            .iter()
            .map(|s| s.as_u64().ok_or_else(|| schema("seeds", "seeds must be non-negative integers")))
            .collect::<Result<Vec<_>>>()?,
    };
    if seeds.is_empty() {
        return Err(schema("seeds", "at least one seed is required"));
    }

    let grid = match root.opt_obj("grid")? {
        Some(g) => {
            g.only(&["lambda1", "lambda2", "gamma"])?;
            Grid {
                lambda1: g.f64_list("lambda1", false)?,
                lambda2: g.f64_list("lambda2", false)?,
                gamma: g.f64_list("gamma", true)?,
            }
        }
        None => Grid::default(),
    };

    let output = root.opt_str("output")?.map_or_else(|| PathBuf::from(DEFAULT_OUTPUT), PathBuf::from);
    let curves = root.opt_str("curves")?.map(PathBuf::from);

    Ok(ExperimentConfig {
        dataset,
        model,
        optimizer,
        regularizers,
        seeds,
        grid,
        output,
        curves,
    })
}

fn schema(key: &str, msg: impl Into<String>) -> Error {
    Error::Schema {
        key: key.to_string(),
        msg: msg.into(),
    }
}

struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, path: &str) -> Result<Self> {
        let map = v
            .as_object()
            .ok_or_else(|| schema(if path.is_empty() { "<root>" } else { path }, "expected an object"))?;
        Ok(Self {
            map,
            path: path.to_string(),
        })
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(schema(&self.key(k), "unknown key")),
            None => Ok(()),
        }
    }

    fn get(&self, k: &str) -> Option<&'a Value> {
        self.map.get(k)
    }

    fn required_obj(&self, k: &str) -> Result<Obj<'a>> {
        self.opt_obj(k)?.ok_or_else(|| schema(&self.key(k), "required"))
    }

    fn opt_obj(&self, k: &str) -> Result<Option<Obj<'a>>> {
        self.get(k).map(|v| Obj::new(v, &self.key(k))).transpose()
    }

    fn opt_str(&self, k: &str) -> Result<Option<&'a str>> {
        self.get(k)
            .map(|v| v.as_str().ok_or_else(|| schema(&self.key(k), "expected a string")))
            .transpose()
    }

    fn required_str(&self, k: &str) -> Result<&'a str> {
        self.opt_str(k)?.ok_or_else(|| schema(&self.key(k), "required"))
    }

    fn opt_f64(&self, k: &str) -> Result<Option<f64>> {
        self.get(k)
            .map(|v| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| schema(&self.key(k), "expected a finite number"))
            })
            .transpose()
    }

    /// Non-negative number (strictly positive when `strict`).
    fn opt_nonneg(&self, k: &str, strict: bool) -> Result<Option<f64>> {
        match self.opt_f64(k)? {
            Some(v) if v < 0.0 || (strict && v == 0.0) => Err(schema(
                &self.key(k),
                format!("must be {}, got {v}", if strict { "> 0" } else { ">= 0" }),
            )),
            other => Ok(other),
        }
    }

    fn opt_usize(&self, k: &str) -> Result<Option<usize>> {
        self.get(k)
            .map(|v| {
                v.as_u64()
                    .map(|x| x as usize)
                    .ok_or_else(|| schema(&self.key(k), "expected a non-negative integer"))
            })
            .transpose()
    }

    fn required_usize(&self, k: &str) -> Result<usize> {
        self.opt_usize(k)?.ok_or_else(|| schema(&self.key(k), "required"))
    }

    fn f64_list(&self, k: &str, strict: bool) -> Result<Vec<f64>> {
        let Some(v) = self.get(k) else {
            return Ok(Vec::new());
        };
        let key = self.key(k);
        let items = v.as_array().ok_or_else(|| schema(&key, "expected an array of numbers"))?;
        items
            .iter()
            .map(|x| {
                let x = x
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| schema(&key, "expected finite numbers"))?;
                if x < 0.0 || (strict && x == 0.0) {
                    Err(schema(&key, format!("out of range value {x}")))
                } else {
                    Ok(x)
                }
            })
            .collect()
    }
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

fn require_file(key: String, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Schema {
            key,
            msg: format!("file {} does not exist", path.display()),
        })
    }
}

fn parse_dataset(o: &Obj<'_>, base: Option<&Path>) -> Result<DatasetConfig> {
    let source_name = o.required_str("source")?;
    let common = ["source", "label_noise", "split", "standardize"];
    let allow = |extra: &[&str]| {
        let keys: Vec<&str> = common.iter().chain(extra).copied().collect();
        o.only(&keys)
    };
    let source = match source_name {
        "two_moons" => {
            allow(&["n", "noise"])?;
            DatasetSource::TwoMoons {
                n: o.opt_usize("n")?.unwrap_or(2000),
                noise: o.opt_nonneg("noise", false)?.unwrap_or(0.2),
            }
        }
        "blobs" => {
            allow(&["n_per_class", "num_classes", "dim", "spread"])?;
            DatasetSource::Blobs {
                n_per_class: o.opt_usize("n_per_class")?.unwrap_or(400),
                num_classes: o.opt_usize("num_classes")?.unwrap_or(5),
                dim: o.opt_usize("dim")?.unwrap_or(2),
                spread: o.opt_nonneg("spread", false)?.unwrap_or(1.0),
            }
        }
        "idx" => {
            allow(&["images", "labels"])?;
            let images = resolve(base, o.required_str("images")?);
            let labels = resolve(base, o.required_str("labels")?);
            require_file(o.key("images"), &images)?;
            require_file(o.key("labels"), &labels)?;
            DatasetSource::Idx { images, labels }
        }
        "csv" => {
            allow(&["path", "label_column"])?;
            let path = resolve(base, o.required_str("path")?);
            require_file(o.key("path"), &path)?;
            DatasetSource::Csv {
                path,
                label_column: o.required_usize("label_column")?,
            }
        }
        other => {
            return Err(schema(
                &o.key("source"),
                format!("unknown source {other:?}; expected two_moons, blobs, idx or csv"),
            ))
        }
    };

    let label_noise = o.opt_nonneg("label_noise", false)?.unwrap_or(0.0);
    if label_noise > 1.0 {
        return Err(schema(&o.key("label_noise"), "must be in [0, 1]"));
    }
    let split = match o.get("split") {
        None => DEFAULT_SPLIT,
        Some(_) => {
            let v = o.f64_list("split", false)?;
            if v.len() != 3 || ((v[0] + v[1] + v[2]) - 1.0).abs() > 1e-9 {
                return Err(schema(&o.key("split"), "expected three fractions summing to 1"));
            }
            (v[0], v[1], v[2])
        }
    };
    let standardize = match o.get("standardize") {
        None => true,
        Some(b) => b
            .as_bool()
            .ok_or_else(|| schema(&o.key("standardize"), "expected a boolean"))?,
    };
    Ok(DatasetConfig {
        source,
        label_noise,
        split,
        standardize,
    })
}

fn parse_model(o: &Obj<'_>) -> Result<ModelConfig> {
    o.only(&["hidden", "activation"])?;
    let key = o.key("hidden");
    let hidden: Vec<usize> = o
        .get("hidden")
        .ok_or_else(|| schema(&key, "required"))?
        .as_array()
        .ok_or_else(|| schema(&key, "expected an array of layer widths"))?
        .iter()
        .map(|v| v.as_u64().filter(|&w| w > 0).map(|w| w as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| schema(&key, "layer widths must be positive integers"))?;
    if hidden.is_empty() {
        return Err(schema(&key, "at least one hidden layer is required"));
    }
    let activation = match o.opt_str("activation")?.unwrap_or("relu") {
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        other => {
            return Err(schema(
                &o.key("activation"),
                format!("unknown activation {other:?}; expected relu or tanh"),
            ))
        }
    };
    Ok(ModelConfig { hidden, activation })
}

fn parse_optimizer(o: &Obj<'_>) -> Result<OptimizerConfig> {
    o.only(&["lr", "momentum", "weight_decay", "schedule", "epochs", "batch_size"])?;
    let d = OptimizerConfig::default();
    let momentum = o.opt_nonneg("momentum", false)?.unwrap_or(d.momentum);
    if momentum >= 1.0 {
        return Err(schema(&o.key("momentum"), "must be in [0, 1)"));
    }
    let schedule = match o.get("schedule") {
        None => d.schedule,
        Some(v) => {
            let key = o.key("schedule");
            v.as_array()
                .ok_or_else(|| schema(&key, "expected [[epoch, multiplier], ...]"))?
                .iter()
                .map(|pair| {
                    let p = pair.as_array().filter(|p| p.len() == 2);
                    let epoch = p.and_then(|p| p[0].as_u64());
                    let mult = p.and_then(|p| p[1].as_f64()).filter(|m| m.is_finite() && *m > 0.0);
                    match (epoch, mult) {
                        (Some(e), Some(m)) => Ok((e as usize, m)),
                        _ => Err(schema(&key, "entries must be [epoch, multiplier > 0]")),
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let batch_size = o.opt_usize("batch_size")?.unwrap_or(d.batch_size);
    if batch_size == 0 {
        return Err(schema(&o.key("batch_size"), "must be >= 1"));
    }
    Ok(OptimizerConfig {
        lr: o.opt_nonneg("lr", true)?.unwrap_or(d.lr),
        momentum,
        weight_decay: o.opt_nonneg("weight_decay", false)?.unwrap_or(d.weight_decay),
        schedule,
        epochs: o.opt_usize("epochs")?.unwrap_or(d.epochs),
        batch_size,
    })
}

fn parse_regularizer(v: &Value, path: &str) -> Result<RegularizerSpec> {
    if let Some(name) = v.as_str() {
        return Ok(RegularizerSpec::new(name.parse()?));
    }
    let o = Obj::new(v, path)?;
    o.only(&["variant", "lambda1", "lambda2", "gamma", "epsilon", "smooth_kernel"])?;
    let mut spec = RegularizerSpec::new(o.required_str("variant")?.parse()?);
    if let Some(x) = o.opt_nonneg("lambda1", false)? {
        spec.lambda1 = x;
    }
    if let Some(x) = o.opt_nonneg("lambda2", false)? {
        spec.lambda2 = x;
    }
    if let Some(x) = o.opt_nonneg("gamma", true)? {
        spec.gamma = x;
    }
    if let Some(x) = o.opt_nonneg("epsilon", true)? {
        spec.epsilon = x;
    }
    if let Some(b) = o.get("smooth_kernel") {
        spec.smooth_kernel = b
            .as_bool()
            .ok_or_else(|| schema(&o.key("smooth_kernel"), "expected a boolean"))?;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::{DEFAULT_EPSILON, DEFAULT_GAMMA, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2};

    const MINIMAL: &str = r#"{"dataset": {"source": "two_moons"}, "model": {"hidden": [32, 32]}}"#;

    fn schema_key(text: &str) -> String {
        match parse_config(text) {
            Err(Error::Schema { key, .. }) => key,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.regularizers.len(), 5);
        for r in &cfg.regularizers {
            assert_eq!(r.lambda1, DEFAULT_LAMBDA1);
            assert_eq!(r.lambda2, DEFAULT_LAMBDA2);
            assert_eq!(r.gamma, DEFAULT_GAMMA);
            assert_eq!(r.epsilon, DEFAULT_EPSILON);
        }
        assert_eq!((DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_GAMMA, DEFAULT_EPSILON), (0.001, 0.001, 10.0, 1e-6));
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.output, PathBuf::from("results.csv"));
        assert_eq!(cfg.dataset.split, DEFAULT_SPLIT);
        assert_eq!(cfg.model.activation, Activation::Relu);
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
    }

    #[test]
    fn misspelled_variant() {
        let text = r#"{"dataset": {"source": "two_moons"}, "model": {"hidden": [4]},
                       "regularizers": [{"variant": "logdte"}]}"#;
        assert!(matches!(parse_config(text), Err(Error::UnknownVariant(v)) if v == "logdte"));
        let text = r#"{"dataset": {"source": "two_moons"}, "model": {"hidden": [4]}, "regularizers": ["dirct"]}"#;
        assert!(matches!(parse_config(text), Err(Error::UnknownVariant(_))));
    }

    #[test]
    fn negative_lambda_names_the_key() {
        let text = r#"{"dataset": {"source": "two_moons"}, "model": {"hidden": [4]},
                       "regularizers": [{"variant": "direct", "lambda1": -0.1}]}"#;
        assert_eq!(schema_key(text), "regularizers[0].lambda1");
    }

    #[test]
    fn other_schema_errors() {
        assert_eq!(schema_key(r#"{"model": {"hidden": [4]}}"#), "dataset");
        assert_eq!(schema_key(r#"{"dataset": {"source": "two_moons"}, "model": {"hidden": []}}"#), "model.hidden");
        assert_eq!(
            schema_key(r#"{"dataset": {"source": "two_moons", "nois": 0.1}, "model": {"hidden": [4]}}"#),
            "dataset.nois"
        );
        assert_eq!(
            schema_key(r#"{"dataset": {"source": "idx", "images": "/nonexistent/a", "labels": "/nonexistent/b"}, "model": {"hidden": [4]}}"#),
            "dataset.images"
        );
        assert_eq!(schema_key(&MINIMAL.replace("}}", "}, \"seeds\": []}")), "seeds");
        assert_eq!(
            schema_key(r#"{"dataset": {"source": "two_moons", "split": [0.5, 0.5, 0.5]}, "model": {"hidden": [4]}}"#),
            "dataset.split"
        );
        assert_eq!(schema_key("not json"), "<root>");
    }

    #[test]
    fn full_config_round_trip() {
        let text = r#"{
            "dataset": {"source": "blobs", "n_per_class": 50, "num_classes": 5, "dim": 4, "spread": 1.5,
                        "label_noise": 0.2, "split": [0.7, 0.15, 0.15]},
            "model": {"hidden": [32, 16], "activation": "tanh"},
            "optimizer": {"lr": 0.1, "momentum": 0.5, "weight_decay": 0, "schedule": [[10, 0.5]],
                          "epochs": 20, "batch_size": 32},
            "regularizers": ["none", {"variant": "logdet", "lambda1": 0.01, "gamma": 1, "epsilon": 1e-5, "smooth_kernel": true}],
            "seeds": [3, 4],
            "grid": {"lambda1": [0.001, 0.01], "gamma": [1, 10]},
            "output": "out.csv",
            "curves": "curves.csv"
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(
            cfg.dataset.source,
            DatasetSource::Blobs { n_per_class: 50, num_classes: 5, dim: 4, spread: 1.5 }
        );
        assert_eq!(cfg.dataset.label_noise, 0.2);
        assert_eq!(cfg.model.hidden, vec![32, 16]);
        assert_eq!(cfg.optimizer.schedule, vec![(10, 0.5)]);
        assert_eq!(cfg.regularizers[1].variant, Variant::Logdet);
        assert!(cfg.regularizers[1].smooth_kernel);
        assert_eq!(cfg.regularizers[1].lambda2, DEFAULT_LAMBDA2);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.grid.lambda1, vec![0.001, 0.01]);
        assert!(cfg.grid.lambda2.is_empty());
        assert_eq!(cfg.curves, Some(PathBuf::from("curves.csv")));
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.csv"), "1,0\n2,1\n").unwrap();
        let text = r#"{"dataset": {"source": "csv", "path": "d.csv", "label_column": 1}, "model": {"hidden": [4]}}"#;
        let cfg = parse_config_in(text, Some(dir.path())).unwrap();
        assert_eq!(
            cfg.dataset.source,
            DatasetSource::Csv { path: dir.path().join("d.csv"), label_column: 1 }
        );
    }
}
