use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::spec::{ExperimentSpec, RunVariant};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::synth::{dump_scene, generate_dataset, DatasetManifest, Split};
use crate::train::{LossRecord, Trainer};

/// Renders the spec's dataset from `seed` into `out`.
pub fn cmd_gen_data(spec: &ExperimentSpec, seed: u64, out: &Path) -> Result<DatasetManifest> {
    generate_dataset(&spec.dataset, seed, out)
}

/// Writes visual dumps of the first `count` scenes of `split`.
pub fn cmd_dump(
    spec: &ExperimentSpec,
    dataset_seed: Option<u64>,
    split: Split,
    count: usize,
    out: &Path,
) -> Result<usize> {
    let dataset = spec.dataset(dataset_seed)?;
    let scenes = dataset.split(split);
    let n = count.min(scenes.len());
    let ids: Vec<&str> = dataset.manifest.scenes.iter().filter(|e| e.split == split).map(|e| e.id.as_str()).collect();
    for (scene, id) in scenes.iter().zip(ids).take(n) {
        dump_scene(&out.join(id), scene)?;
    }
    Ok(n)
}

#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub variant: RunVariant,
    pub seed: u64,
    /// Overrides the dataset seed of the spec.
    pub dataset_seed: Option<u64>,
    pub out: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
    /// Stop after this many total steps even if the budget is larger.
    pub stop_at: Option<u64>,
    /// Log `wall_ms` as 0 so that every output file is reproducible.
    pub deterministic: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub final_checkpoint: PathBuf,
    pub first: Option<LossRecord>,
    pub last: Option<LossRecord>,
}

pub(crate) fn step_dir(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step-{step:08}"))
}

fn log_line(log: &mut BufWriter<File>, path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| Error::io(path, e))
}

/// Trains one variant. Writes `train_log.jsonl`, checkpoints under
/// `checkpoints/step-N` (at the start, every `checkpoint_every` steps and
/// at the end) and a copy of the last one in `final`.
pub fn cmd_train(spec: &ExperimentSpec, req: &TrainRequest) -> Result<TrainOutcome> {
    let dataset = spec.dataset(req.dataset_seed)?;
    let mut trainer = match &req.resume {
        Some(dir) => {
            let t = checkpoint::load(dir)?;
            let (net, m) = (&t.model.config, &dataset.manifest);
            if (net.height, net.width, net.num_classes) != (m.height, m.width, m.num_classes) {
                return Err(Error::Validation("checkpoint and dataset disagree on input size or classes".into()));
            }
            t
        }
        None => {
            let net = spec.net_for(&dataset, req.variant.network())?;
            Trainer::new(&net, spec.train_for(req.variant, req.seed))?
        }
    };
    fs::create_dir_all(&req.out).map_err(|e| Error::io(&req.out, e))?;
    let log_path = req.out.join("train_log.jsonl");
    let file = if req.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);

    let scenes = &dataset.train;
    let total = trainer.total_steps(scenes.len());
    let until = req.stop_at.map_or(total, |s| s.min(total));
    if trainer.step == 0 {
        checkpoint::save(&step_dir(&req.out, 0), &trainer)?;
    }
    let every = trainer.config.checkpoint_every;
    let (mut first, mut last) = (None, None);
    let result = trainer.run_until(scenes, until, |t, rec| {
        let mut rec = rec.clone();
        if req.deterministic {
            rec.wall_ms = 0.0;
        }
        log_line(&mut log, &log_path, &rec)?;
        first.get_or_insert_with(|| rec.clone());
        last = Some(rec);
        if every.is_some_and(|k| t.step % k == 0) {
            checkpoint::save(&step_dir(&req.out, t.step), t)?;
        }
        Ok(())
    });
    if let Err(e) = result {
        let diag = serde_json::json!({ "step": trainer.step, "error": e.to_string(), "exit_code": e.exit_code() });
        log_line(&mut log, &log_path, &diag)?;
        return Err(e);
    }
    let last_dir = step_dir(&req.out, trainer.step);
    if !last_dir.exists() {
        checkpoint::save(&last_dir, &trainer)?;
    }
    let final_checkpoint = req.out.join("final");
    checkpoint::save(&final_checkpoint, &trainer)?;
    Ok(TrainOutcome { trainer, final_checkpoint, first, last })
}
