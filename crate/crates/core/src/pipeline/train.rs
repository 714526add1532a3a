use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, PipelineConfig, Sgd, StepSchedule};
use crate::debate::AcceptanceManifest;
use crate::error::{Error, Result};
use crate::fadenet::{batch_from_images, Checkpoint, FadeNet, Mode};
use crate::losses::{build_mask_target, build_mixed_target, total_loss, LossBreakdown, Supervision, SupervisionTarget, TargetBatch};
use crate::raster::{load_mask, resize_nearest, ColorImage};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const TRAIN_LOG: &str = "train_log.jsonl";
const KEY_NEXT_STEP: &str = "train.next_step";
const KEY_CONFIG: &str = "train.config";

/// One training image at network resolution with its target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image_id: String,
    pub image: ColorImage,
    pub target: SupervisionTarget,
}

impl TrainSample {
    fn flipped(&self) -> Self {
        Self {
            image_id: self.image_id.clone(),
            image: self.image.flipped_horizontally(),
            target: self.target.flipped_horizontally(),
        }
    }
}

/// Builds targets for every scribbled record that has at least one accepted
/// pseudo mask; other records are skipped with a warning. Inputs are resized
/// to the network resolution before dilation.
pub fn prepare_training_set(
    dataset: &DatasetManifest,
    pseudo: &AcceptanceManifest,
    pseudo_root: &Path,
    config: &PipelineConfig,
) -> Result<Vec<TrainSample>> {
    let side = config.network.image_size;
    let mut out = Vec::new();
    for record in dataset.usable() {
        let entries: Vec<_> = pseudo.masks_for(&record.image_id).collect();
        if entries.is_empty() {
            tracing::warn!(image_id = %record.image_id, "no accepted pseudo mask; image not used for training");
            continue;
        }
        let loaded = record.load()?;
        let Some(scribbles) = loaded.scribbles else {
            tracing::warn!(image_id = %record.image_id, "no scribble annotation; image not used for training");
            continue;
        };
        let masks = entries
            .iter()
            .map(|e| Ok(resize_nearest(load_mask(pseudo_root.join(&e.mask_path))?.view(), side, side)))
            .collect::<Result<Vec<_>>>()?;
        let scribbles = scribbles.resized(side, side);
        let target = match config.loss.supervision {
            Supervision::Mix => build_mixed_target(&masks, &scribbles, config.train.dilation_radius)?,
            Supervision::Mask => build_mask_target(&masks, &scribbles)?,
        };
        out.push(TrainSample {
            image_id: loaded.image_id,
            image: loaded.image.resized(side, side),
            target,
        });
    }
    if out.is_empty() {
        return Err(Error::Data("no trainable images: every record lacks pseudo masks or scribbles".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<StepLog>,
    /// Latest checkpoint written, if an output directory was given.
    pub checkpoint: Option<PathBuf>,
    /// False when `max_epochs` stopped the run before the schedule ended.
    pub complete: bool,
}

/// The training loop state: network, optimizer, and position in the schedule.
pub struct Trainer {
    config: PipelineConfig,
    net: FadeNet,
    optim: Sgd,
    next_step: usize,
}

impl Trainer {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let net = FadeNet::new(config.network.clone(), config.architecture.clone(), config.train.seed, DType::F32)?;
        let optim = Sgd::new(config.train.momentum, config.train.weight_decay);
        Ok(Self {
            config,
            net,
            optim,
            next_step: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::run`].
    pub fn resume(config: PipelineConfig, checkpoint: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let mut trainer = Self::new(config)?;
        let (net_config, flags, _) = ckpt.network_config()?;
        if net_config != trainer.config.network || flags != trainer.config.architecture {
            return Err(Error::Config("checkpoint architecture differs from the configuration".into()));
        }
        ckpt.restore_into(&trainer.net)?;
        trainer.optim.load_state(&ckpt.tensors, DType::F32)?;
        trainer.next_step = ckpt
            .metadata
            .get(KEY_NEXT_STEP)
            .ok_or_else(|| Error::Checkpoint(format!("missing {KEY_NEXT_STEP}")))?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("{KEY_NEXT_STEP} is not an integer")))?;
        Ok(trainer)
    }

    pub fn network(&self) -> &FadeNet {
        &self.net
    }

    pub fn into_network(self) -> FadeNet {
        self.net
    }

    pub fn next_step(&self) -> usize {
        self.next_step
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_network(&self.net, self.config.train.seed)?;
        ckpt.tensors.extend(self.optim.state());
        ckpt.metadata.insert(KEY_NEXT_STEP.into(), self.next_step.to_string());
        ckpt.metadata.insert(KEY_CONFIG.into(), serde_json::to_string(&self.config)?);
        Ok(ckpt)
    }

    /// Forward, loss, backward, and one optimizer update.
    pub fn train_step(&mut self, batch: &[&TrainSample], lr: f64) -> Result<LossBreakdown> {
        let images: Vec<&ColorImage> = batch.iter().map(|s| &s.image).collect();
        let targets: Vec<&SupervisionTarget> = batch.iter().map(|s| &s.target).collect();
        let x = batch_from_images(&images, self.config.network.image_size, DType::F32)?;
        let t = TargetBatch::from_targets(&targets, DType::F32)?;
        let out = self.net.forward(&x, Mode::Train)?;
        let (loss, breakdown) = total_loss(&out.seg, &out.scrib, &t, &self.config.loss)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Invariant(format!("non-finite loss at step {}", self.next_step)));
        }
        let grads = loss.backward()?;
        self.optim.step(self.net.params().params(), &grads, lr)?;
        self.next_step += 1;
        Ok(breakdown)
    }

    /// Sample order and flips of one epoch, a function of the seed and epoch.
    fn epoch_plan(&self, epoch: usize, n: usize) -> Vec<(usize, bool)> {
        let mix = (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.train.seed ^ mix);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
            .into_iter()
            .map(|i| (i, self.config.train.horizontal_flip && rng.random_bool(0.5)))
            .collect()
    }

    /// Trains from the current step to the end of the schedule, or for at most
    /// `max_epochs` further epochs. With `out_dir`, step logs are appended to
    /// `train_log.jsonl` and checkpoints are written at epoch boundaries.
    pub fn run(&mut self, samples: &[TrainSample], out_dir: Option<&Path>, max_epochs: Option<usize>) -> Result<TrainReport> {
        if samples.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let train = self.config.train.clone();
        let per_epoch = samples.len().div_ceil(train.batch_size);
        let schedule = StepSchedule::new(&train, per_epoch);
        if self.next_step % per_epoch != 0 {
            return Err(Error::Checkpoint("checkpoint does not sit on an epoch boundary for this data".into()));
        }
        let first_epoch = self.next_step / per_epoch;
        let last_epoch = max_epochs.map_or(train.epochs, |m| (first_epoch + m).min(train.epochs));
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(TRAIN_LOG);
                Some((
                    OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?,
                    path,
                ))
            }
            None => None,
        };
        let mut report = TrainReport {
            history: Vec::new(),
            checkpoint: None,
            complete: last_epoch == train.epochs,
        };
        for epoch in first_epoch..last_epoch {
            let plan = self.epoch_plan(epoch, samples.len());
            for chunk in plan.chunks(train.batch_size) {
                let flipped: Vec<TrainSample> = chunk.iter().filter(|(_, f)| *f).map(|&(i, _)| samples[i].flipped()).collect();
                let mut flipped_iter = flipped.iter();
                let batch: Vec<&TrainSample> = chunk
                    .iter()
                    .map(|&(i, f)| if f { flipped_iter.next().expect("one flipped copy per flag") } else { &samples[i] })
                    .collect();
                let step = self.next_step;
                let lr = schedule.lr_at(step);
                let loss = self.train_step(&batch, lr)?;
                let entry = StepLog { epoch, step, lr, loss };
                tracing::info!(
                    step,
                    epoch,
                    lr,
                    total = loss.total,
                    cod = ?loss.cod,
                    scrib = ?loss.scrib,
                    debias = ?loss.debias,
                    "train step"
                );
                if let Some((file, path)) = log.as_mut() {
                    let mut line = serde_json::to_vec(&entry)?;
                    line.push(b'\n');
                    file.write_all(&line).map_err(|e| Error::io(&*path, e))?;
                }
                report.history.push(entry);
            }
            let boundary = (epoch + 1) % train.checkpoint_every == 0 || epoch + 1 == last_epoch;
            if let (Some(dir), true) = (out_dir, boundary) {
                let ckpt = self.checkpoint()?;
                let path = dir.join(CHECKPOINT_DIR).join(format!("epoch_{:04}.safetensors", epoch + 1));
                ckpt.save(&path)?;
                ckpt.save(dir.join(LAST_CHECKPOINT))?;
                report.checkpoint = Some(dir.join(LAST_CHECKPOINT));
            }
        }
        Ok(report)
    }
}
