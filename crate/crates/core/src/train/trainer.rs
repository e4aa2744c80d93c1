use super::adam::AdamState;
use super::batch::Batch;
use super::em::{em_step, EmState};
use super::losses::LossRecord;
use super::{joint_step, Schedule, TrainConfig};
use crate::augment::augment;
use crate::error::{Error, Result};
use crate::model::{build_model, Model, NetConfig, Variant};
use crate::rng::{domain, Rng};
use crate::synth::SyntheticScene;

/// Owns everything a training run mutates. Batch order and augmentation
/// are derived from `(seed, step)` alone, so a trainer restored at step
/// `k` continues exactly as an uninterrupted one would.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub em: EmState,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub config: TrainConfig,
}

impl Trainer {
    /// Fresh model initialized from `config.seed`.
    pub fn new(net: &NetConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.schedule == Schedule::Em && net.variant != Variant::Sosd {
            return Err(Error::Validation(format!(
                "the em schedule needs the sosd variant, not {}",
                net.variant.name()
            )));
        }
        let model = build_model(net, &mut Rng::substream(config.seed, domain::INIT, 0))?;
        let adam = AdamState::new(&model.store);
        Ok(Self { model, adam, em: EmState::default(), step: 0, config })
    }

    pub fn steps_per_epoch(&self, train_scenes: usize) -> u64 {
        train_scenes.div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self, train_scenes: usize) -> u64 {
        self.config.max_steps.unwrap_or(self.config.epochs * self.steps_per_epoch(train_scenes))
    }

    /// The scene indices of step `step`: the epoch's seeded permutation,
    /// cut into consecutive batches (the last one may be short).
    pub fn batch_indices(&self, train_scenes: usize, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch(train_scenes);
        let (epoch, i) = (step / spe, (step % spe) as usize);
        let perm = Rng::substream(self.config.seed, domain::SHUFFLE, epoch).permutation(train_scenes);
        let bs = self.config.batch_size;
        perm[i * bs..((i + 1) * bs).min(train_scenes)].to_vec()
    }

    /// The augmented batch for `step`.
    pub fn batch_at(&self, scenes: &[SyntheticScene], step: u64) -> Result<Batch> {
        let bs = self.config.batch_size as u64;
        let picked: Vec<SyntheticScene> = self
            .batch_indices(scenes.len(), step)
            .into_iter()
            .enumerate()
            .map(|(j, idx)| {
                let mut rng = Rng::substream(self.config.seed, domain::AUGMENT, step * bs + j as u64);
                augment(&scenes[idx], &self.config.augment, &mut rng)
            })
            .collect();
        Batch::from_scenes(&picked)
    }

    /// Takes one optimizer step on the next batch.
    pub fn step_once(&mut self, scenes: &[SyntheticScene]) -> Result<LossRecord> {
        if scenes.is_empty() {
            return Err(Error::Validation("the training split is empty".into()));
        }
        let batch = self.batch_at(scenes, self.step)?;
        let step = self.step;
        let record = match self.config.schedule {
            Schedule::Em => {
                let epoch_end = (step + 1) % self.steps_per_epoch(scenes.len()) == 0;
                em_step(&mut self.model, &mut self.adam, &mut self.em, &batch, &self.config, step, epoch_end)?
            }
            Schedule::Joint => joint_step(&mut self.model, &mut self.adam, &batch, &self.config, step)?,
        };
        self.step += 1;
        Ok(record)
    }

    /// Steps until `until` steps have been taken, calling `on_step` after
    /// each one.
    pub fn run_until<F>(&mut self, scenes: &[SyntheticScene], until: u64, mut on_step: F) -> Result<()>
    where
        F: FnMut(&Trainer, &LossRecord) -> Result<()>,
    {
        while self.step < until {
            let record = self.step_once(scenes)?;
            on_step(self, &record)?;
        }
        Ok(())
    }
}
