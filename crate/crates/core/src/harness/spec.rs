use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::EvalOptions;
use crate::error::{validate, Error, Result};
use crate::model::{NetConfig, Variant};
use crate::synth::{Dataset, DatasetConfig};
use crate::train::{Schedule, TrainConfig};

/// A row of the ablation: a network variant paired with a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunVariant {
    SemanticOnly,
    DepthOnly,
    Mtl,
    /// Fusion network, joint schedule.
    Sosd,
    /// Fusion network, alternating schedule.
    Esosd,
}

impl RunVariant {
    pub const ALL: [RunVariant; 5] =
        [RunVariant::SemanticOnly, RunVariant::DepthOnly, RunVariant::Mtl, RunVariant::Sosd, RunVariant::Esosd];

    pub fn name(self) -> &'static str {
        match self {
            RunVariant::SemanticOnly => "semantic-only",
            RunVariant::DepthOnly => "depth-only",
            RunVariant::Mtl => "mtl",
            RunVariant::Sosd => "sosd",
            RunVariant::Esosd => "esosd",
        }
    }

    pub fn network(self) -> Variant {
        match self {
            RunVariant::SemanticOnly => Variant::SemanticOnly,
            RunVariant::DepthOnly => Variant::DepthOnly,
            RunVariant::Mtl => Variant::Mtl,
            RunVariant::Sosd | RunVariant::Esosd => Variant::Sosd,
        }
    }

    pub fn schedule(self) -> Schedule {
        match self {
            RunVariant::Esosd => Schedule::Em,
            _ => Schedule::Joint,
        }
    }
}

impl std::str::FromStr for RunVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown variant {s:?}")))
    }
}

/// Everything an experiment needs: data, network, optimization, the
/// variants and seeds to run, and evaluation options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Generator settings, used when `dataset_dir` is absent.
    pub dataset: DatasetConfig,
    /// An existing dataset on disk; relative paths resolve against the
    /// spec file's directory.
    pub dataset_dir: Option<PathBuf>,
    /// Seed for generating the dataset in memory.
    pub dataset_seed: u64,
    /// Network settings on top of the defaults. Input size and class count
    /// come from the dataset, the variant from the run.
    pub net: serde_json::Map<String, serde_json::Value>,
    pub train: TrainConfig,
    pub variants: Vec<RunVariant>,
    pub seeds: Vec<u64>,
    pub eval: EvalOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            dataset_dir: None,
            dataset_seed: 0,
            net: serde_json::Map::new(),
            train: TrainConfig::default(),
            variants: RunVariant::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads and validates a spec file, resolving `dataset_dir` against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::parse(&text)?;
        if let Some(dir) = &spec.dataset_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                spec.dataset_dir = Some(base.join(dir));
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        validate(!self.seeds.is_empty(), || "the seed list is empty".into())?;
        validate(!self.variants.is_empty(), || "the variant list is empty".into())?;
        for key in ["height", "width", "num_classes", "variant"] {
            validate(!self.net.contains_key(key), || format!("net.{key} is derived and cannot be set"))?;
        }
        let d = &self.dataset;
        self.net_config(d.height, d.width, d.num_classes, Variant::Sosd)?.validate()
    }

    /// The network configuration for a run on data of the given shape.
    pub fn net_config(&self, height: usize, width: usize, num_classes: usize, variant: Variant) -> Result<NetConfig> {
        let mut obj = self.net.clone();
        obj.insert("height".into(), height.into());
        obj.insert("width".into(), width.into());
        obj.insert("num_classes".into(), num_classes.into());
        obj.insert("variant".into(), serde_json::to_value(variant)?);
        let cfg: NetConfig = serde_json::from_value(serde_json::Value::Object(obj))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net_for(&self, dataset: &Dataset, variant: Variant) -> Result<NetConfig> {
        let m = &dataset.manifest;
        self.net_config(m.height, m.width, m.num_classes, variant)
    }

    /// The training configuration of one run.
    pub fn train_for(&self, variant: RunVariant, seed: u64) -> TrainConfig {
        TrainConfig { schedule: variant.schedule(), seed, ..self.train.clone() }
    }

    /// Loads `dataset_dir`, or generates the configured dataset in memory
    /// from `seed` (default `dataset_seed`).
    pub fn dataset(&self, seed: Option<u64>) -> Result<Dataset> {
        match &self.dataset_dir {
            Some(dir) => Dataset::load(dir),
            None => Dataset::generate(&self.dataset, seed.unwrap_or(self.dataset_seed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_benchmark() {
        let s = ExperimentSpec::default();
        s.validate().unwrap();
        assert_eq!((s.dataset.train_scenes, s.dataset.val_scenes), (512, 128));
        assert_eq!((s.dataset.height, s.dataset.width, s.dataset.num_classes), (64, 128, 6));
        assert_eq!(s.seeds.len(), 5);
    }

    #[test]
    fn parses_partial_specs() {
        let s = ExperimentSpec::parse(r#"{"net":{"base_channels":8},"variants":["mtl","esosd"],"seeds":[3]}"#).unwrap();
        let net = s.net_config(64, 128, 6, Variant::Mtl).unwrap();
        assert_eq!(net.base_channels, 8);
        assert_eq!(s.variants, vec![RunVariant::Mtl, RunVariant::Esosd]);
        assert_eq!(s.train_for(RunVariant::Esosd, 9).schedule, Schedule::Em);
        assert_eq!(s.train_for(RunVariant::Esosd, 9).seed, 9);
    }

    #[test]
    fn rejects_bad_specs() {
        for text in [
            r#"{"seeds":[]}"#,
            r#"{"variants":[]}"#,
            r#"{"net":{"height":32}}"#,
            r#"{"net":{"base_channels":0}}"#,
            r#"{"net":{"no_such_field":1}}"#,
            r#"{"unknown":1}"#,
            r#"{"variants":["resnet"]}"#,
        ] {
            let err = ExperimentSpec::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in RunVariant::ALL {
            assert_eq!(v.name().parse::<RunVariant>().unwrap(), v);
            assert_eq!(serde_json::to_value(v).unwrap(), v.name());
        }
    }
}
