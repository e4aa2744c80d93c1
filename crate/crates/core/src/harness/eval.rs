use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spec::ExperimentSpec;
use crate::checkpoint;
use crate::error::{validate, Error, Result};
use crate::metrics::{
    DepthAccumulator, DepthMetricOptions, DepthMetricReport, SegAccumulator, SegMetricReport, DEFAULT_THRESHOLDS,
};
use crate::model::{forward, Forward, Heads, Mode, Model};
use crate::pnm;
use crate::synth::{Dataset, Split, SyntheticScene};
use crate::tensor::Tensor;
use crate::tensor_io;
use crate::train::Batch;

fn default_split() -> Split {
    Split::Val
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default = "default_split")]
    pub split: Split,
    pub batch_size: usize,
    pub ignore_id: Option<usize>,
    /// Write per-scene prediction files next to the report.
    pub dump_predictions: bool,
    /// At most this many scenes are dumped.
    pub dump_limit: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { split: Split::Val, batch_size: 8, ignore_id: None, dump_predictions: false, dump_limit: None }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        validate(self.batch_size >= 1, || "eval batch_size must be at least 1".into())
    }
}

/// One scene's predictions: depth in meters and class ids, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub depth: Option<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl Prediction {
    /// The ground truth itself, for checking the evaluation pipeline.
    pub fn oracle(scene: &SyntheticScene) -> Self {
        Self { depth: Some(scene.depth.data().to_vec()), labels: Some(scene.semantic.clone()) }
    }
}

fn argmax_channels(logits: &Tensor) -> Vec<usize> {
    let (n, c, h, w) = logits.nchw().expect("logits are NCHW");
    let d = logits.data();
    let mut out = Vec::with_capacity(n * h * w);
    for b in 0..n {
        for p in 0..h * w {
            let mut best = 0;
            for k in 1..c {
                if d[(b * c + k) * h * w + p] > d[(b * c + best) * h * w + p] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    out
}

/// Eval-mode forward over `scenes` in batches of `batch_size`.
pub fn predict(model: &Model, scenes: &[SyntheticScene], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(batch_size.max(1)) {
        let batch = Batch::from_scenes(chunk)?;
        let mut fw = Forward::new(model, Mode::Eval);
        let x = fw.input(batch.image)?;
        let o = forward(&mut fw, x, Heads::BOTH)?;
        let hw = chunk[0].pixels();
        let depth = o.depth.map(|v| fw.graph.value(v).data().to_vec());
        let labels = o.logits.map(|v| argmax_channels(fw.graph.value(v)));
        if depth.as_ref().is_some_and(|d| d.iter().any(|v| !v.is_finite()))
            || o.logits.is_some_and(|v| !fw.graph.value(v).all_finite())
        {
            return Err(Error::NonFinite("network output during evaluation".into()));
        }
        for i in 0..chunk.len() {
            out.push(Prediction {
                depth: depth.as_ref().map(|d| d[i * hw..(i + 1) * hw].to_vec()),
                labels: labels.as_ref().map(|l| l[i * hw..(i + 1) * hw].to_vec()),
            });
        }
    }
    Ok(out)
}

/// Metric conventions recorded with every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConventions {
    pub pooling: String,
    pub delta_comparison: String,
    pub delta_thresholds: [f64; 3],
    pub absent_classes: String,
    pub holes: String,
    pub disparity: String,
    pub disparity_factor: f64,
    pub ignore_id: Option<usize>,
}

impl MetricConventions {
    fn new(disparity_factor: f64, ignore_id: Option<usize>) -> Self {
        Self {
            pooling: "global over all valid pixels of the split".into(),
            delta_comparison: "strict: max(y/y*, y*/y) < t".into(),
            delta_thresholds: DEFAULT_THRESHOLDS,
            absent_classes: "excluded from miou and mean_accuracy".into(),
            holes: "excluded from every depth metric".into(),
            disparity: "fx * baseline / depth".into(),
            disparity_factor,
            ignore_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub dataset_id: String,
    pub checkpoint_id: String,
    pub split: Split,
    pub scenes: usize,
    pub conventions: MetricConventions,
    pub depth: Option<DepthMetricReport>,
    pub segmentation: Option<SegMetricReport>,
}

/// Scores `predictions` against `scenes`, pooling all pixels.
pub fn evaluate(
    predictions: &[Prediction],
    scenes: &[SyntheticScene],
    num_classes: usize,
    ignore_id: Option<usize>,
    disparity_factor: f64,
) -> Result<(Option<DepthMetricReport>, Option<SegMetricReport>)> {
    validate(predictions.len() == scenes.len(), || {
        format!("{} predictions for {} scenes", predictions.len(), scenes.len())
    })?;
    let has_depth = predictions.first().is_some_and(|p| p.depth.is_some());
    let has_labels = predictions.first().is_some_and(|p| p.labels.is_some());
    let mut depth = DepthAccumulator::new(DepthMetricOptions::new(disparity_factor));
    let mut seg = SegAccumulator::new(num_classes, ignore_id);
    for (p, s) in predictions.iter().zip(scenes) {
        if let Some(d) = &p.depth {
            depth.add(d, s.depth.data(), &s.valid_mask)?;
        }
        if let Some(l) = &p.labels {
            seg.add(l, &s.semantic)?;
        }
    }
    Ok((has_depth.then(|| depth.report()), has_labels.then(|| seg.report())))
}

/// Short content hash of a dataset manifest.
pub(crate) fn dataset_id(dataset: &Dataset) -> Result<String> {
    let text = serde_json::to_string(&dataset.manifest)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(format!("{digest:x}")[..16].to_string())
}

fn dump_prediction(dir: &Path, p: &Prediction, scene: &SyntheticScene) -> Result<()> {
    let (h, w) = (scene.height, scene.width);
    if let Some(d) = &p.depth {
        tensor_io::write(&dir.join("depth.sosd"), &Tensor::new(vec![h, w], d.clone())?)?;
        pnm::gray_normalized(d, h, w, None).write(&dir.join("depth.pgm"))?;
    }
    if let Some(l) = &p.labels {
        let t = Tensor::new(vec![h, w], l.iter().map(|&c| c as f64).collect())?;
        tensor_io::write(&dir.join("semantic.sosd"), &t)?;
        pnm::labels_indexed_color(l, h, w).write(&dir.join("semantic.ppm"))?;
    }
    Ok(())
}

/// Evaluates a checkpoint (or, with `checkpoint = None`, the ground truth
/// itself) on the spec's split and writes `report.json` to `out`.
pub fn cmd_eval(
    spec: &ExperimentSpec,
    checkpoint: Option<&Path>,
    dataset_seed: Option<u64>,
    out: &Path,
) -> Result<EvalReport> {
    let dataset = spec.dataset(dataset_seed)?;
    let scenes = dataset.split(spec.eval.split);
    let m = &dataset.manifest;
    let (predictions, checkpoint_id) = match checkpoint {
        Some(dir) => {
            let trainer = checkpoint::load(dir)?;
            let net = &trainer.model.config;
            if net.num_classes != m.num_classes {
                return Err(Error::Validation(format!(
                    "checkpoint predicts {} classes, dataset has {}",
                    net.num_classes, m.num_classes
                )));
            }
            if (net.height, net.width) != (m.height, m.width) {
                return Err(Error::Validation(format!(
                    "checkpoint expects {}x{} inputs, dataset has {}x{}",
                    net.height, net.width, m.height, m.width
                )));
            }
            (predict(&trainer.model, scenes, spec.eval.batch_size)?, checkpoint::fingerprint(dir)?)
        }
        None => (scenes.iter().map(Prediction::oracle).collect(), "oracle".to_string()),
    };
    let factor = m.intrinsics.fx * m.config.disparity_baseline;
    let (depth, segmentation) = evaluate(&predictions, scenes, m.num_classes, spec.eval.ignore_id, factor)?;
    let report = EvalReport {
        format: "sosd-eval".into(),
        version: 1,
        dataset_id: dataset_id(&dataset)?,
        checkpoint_id,
        split: spec.eval.split,
        scenes: scenes.len(),
        conventions: MetricConventions::new(factor, spec.eval.ignore_id),
        depth,
        segmentation,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&path, e))?;
    if spec.eval.dump_predictions {
        let limit = spec.eval.dump_limit.unwrap_or(scenes.len());
        for (i, (p, s)) in predictions.iter().zip(scenes).take(limit).enumerate() {
            dump_prediction(&out.join("predictions").join(format!("{i:06}")), p, s)?;
        }
    }
    Ok(report)
}
