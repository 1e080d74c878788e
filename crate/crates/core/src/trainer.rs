//! Three-stage training: per-view density pretraining of the shared
//! backbone, scene-level training of fusion and decoder on a frozen
//! backbone, then joint fine-tuning with a decaying learning rate.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Reduction, Tape, Var};
use crate::dataset::{Dataset, SceneFrame, Split};
use crate::error::{Error, Result};
use crate::model::{Bound, Fcn7Config, ModelConfig, ParamGroup, Rig, TpMvcc};
use crate::optim::{LrSchedule, OptimizerKind, OptimizerState};
use crate::tensor::Tensor;

/// Architecture knobs that are not fixed by the dataset geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub backbone_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub decoder_dilation: usize,
    pub plane_reduction: Reduction,
    pub density_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let m = ModelConfig::new(crate::model::PlaneLayout::new([0.0, 0.0], 1.0, 1, 1, 1.0));
        ArchConfig {
            backbone_channels: m.backbone.channels,
            decoder_channels: m.decoder_channels,
            decoder_dilation: m.decoder_dilation,
            plane_reduction: m.plane_reduction,
            density_scale: m.density_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Epochs for stages 1, 2 and 3.
    pub epochs: [usize; 3],
    /// Base learning rates for stages 1, 2 and 3.
    pub lr: [f64; 3],
    /// Views per step in stage 1.
    pub view_batch: usize,
    /// Scenes per step in stages 2 and 3.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Stage-3 decay factor, applied every third of the stage.
    pub lr_gamma: f64,
    pub backbone_trainable_in_stage3: bool,
    pub dilation: usize,
    /// Views used in stages 2 and 3; empty means all.
    pub views: Vec<usize>,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            epochs: [50, 50, 30],
            lr: [1e-3, 1e-3, 1e-4],
            view_batch: 1,
            batch_size: 1,
            optimizer: OptimizerKind::default(),
            lr_gamma: 0.5,
            backbone_trainable_in_stage3: true,
            dilation: 2,
            views: Vec::new(),
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Narrow network and short schedule that trains the benchmark in a
    /// few minutes per run on one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: [15, 20, 10],
            lr: [1e-3, 1e-3, 3e-4],
            arch: ArchConfig {
                backbone_channels: vec![8, 8, 16, 16, 16, 16, 16],
                decoder_channels: vec![16, 8, 1],
                ..ArchConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_batch == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        if self.lr.iter().any(|&lr| !(lr > 0.0)) || !(self.lr_gamma > 0.0) {
            return Err(Error::InvalidArgument("learning rates and decay must be positive".into()));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be >= 1".into()));
        }
        if self.views.contains(&0) {
            return Err(Error::InvalidArgument("view ids are 1-based".into()));
        }
        Ok(())
    }

    /// Architecture for a dataset's plane geometry.
    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(dataset.scene_config().plane_layout());
        m.backbone = Fcn7Config {
            channels: self.arch.backbone_channels.clone(),
            ..Fcn7Config::default()
        }
        .with_dilation(self.dilation);
        m.decoder_channels = self.arch.decoder_channels.clone();
        m.decoder_dilation = self.arch.decoder_dilation;
        m.plane_reduction = self.arch.plane_reduction;
        m.density_scale = self.arch.density_scale;
        m.validate()?;
        if m.backbone.downsample() != dataset.scene_config().view_downsample {
            return Err(Error::Dataset(format!(
                "view density maps are downsampled by {}, the backbone by {}",
                dataset.scene_config().view_downsample,
                m.backbone.downsample()
            )));
        }
        Ok(m)
    }

    pub fn init_model(&self, dataset: &Dataset) -> Result<TpMvcc> {
        TpMvcc::new(self.model_config(dataset)?, self.seed)
    }

    /// The configured subset, or every dataset view, sorted.
    pub fn view_subset(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        let all: Vec<usize> = dataset.cameras().iter().map(|c| c.0).collect();
        if self.views.is_empty() {
            return Ok(all);
        }
        let mut v = self.views.clone();
        v.sort_unstable();
        v.dedup();
        if let Some(&bad) = v.iter().find(|id| !all.contains(id)) {
            return Err(Error::UnknownView(bad));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    /// Mean loss over each epoch's samples.
    pub losses: Vec<f64>,
    pub steps: u64,
    pub final_lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub stages: Vec<StageReport>,
    /// SHA-256 over every parameter of the final model.
    pub checkpoint: String,
    pub seconds: f64,
}

impl TrainReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("train report: {e}")))
    }

    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.seconds = 0.0;
        r.stages.iter_mut().for_each(|s| s.seconds = 0.0);
        r
    }
}

pub fn checkpoint_id(model: &TpMvcc) -> String {
    let mut h = Sha256::new();
    for g in [ParamGroup::Backbone, ParamGroup::ViewHead, ParamGroup::Fusion, ParamGroup::Decoder] {
        h.update(model.params().group_hash(g).as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn stage_rng(seed: u64, stage: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + stage as u64);
    rng
}

/// Minibatch loop shared by all stages. `loss_fn(model, tape, bound, k)`
/// builds the loss of sample `k`; batch gradients are averaged.
#[allow(clippy::too_many_arguments)]
fn run_stage<F>(
    stage: u8,
    model: &mut TpMvcc,
    trainable: &[ParamGroup],
    samples: usize,
    epochs: usize,
    batch: usize,
    opt: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
    loss_fn: F,
) -> Result<StageReport>
where
    F: Fn(&TpMvcc, &mut Tape, &Bound, usize) -> Result<Var>,
{
    let start = Instant::now();
    let indices: Vec<usize> = trainable
        .iter()
        .flat_map(|&g| model.params().group_indices(g))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..samples).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut acc: Vec<Option<Tensor>> = vec![None; indices.len()];
            for &k in chunk {
                let mut tape = Tape::new();
                let b = model.bind(&mut tape, |g| trainable.contains(&g));
                let loss = loss_fn(model, &mut tape, &b, k)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Autodiff(format!("stage {stage} loss became {value}")));
                }
                total += value;
                tape.backward(loss)?;
                for (slot, &i) in acc.iter_mut().zip(&indices) {
                    if let Some(g) = tape.take_grad(b.vars[i]) {
                        match slot {
                            Some(a) => a.add_assign(&g),
                            None => *slot = Some(g),
                        }
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            let grads: Vec<Option<Tensor>> = acc.into_iter().map(|g| g.map(|g| g.scale(inv))).collect();
            let refs: Vec<Option<&Tensor>> = grads.iter().map(Option::as_ref).collect();
            let mut params = model.params_mut().select_mut(&indices);
            opt.step(&mut params, &refs)?;
        }
        let mean = if samples > 0 { total / samples as f64 } else { 0.0 };
        log::info!("stage {stage} epoch {}: loss {mean:.6e}", losses.len() + 1);
        losses.push(mean);
    }
    Ok(StageReport {
        stage,
        losses,
        steps: opt.steps(),
        final_lr: opt.current_lr(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn optimizer(config: &TrainConfig, schedule: LrSchedule) -> OptimizerState {
    OptimizerState::new(config.optimizer, schedule)
}

/// Ground-truth map as a `[1, H, W]` target in network units.
fn target(t: &Tensor, model: &TpMvcc) -> Result<Tensor> {
    let (c, h, w) = t.chw()?;
    t.scale(model.config().density_scale).reshape(vec![c, h, w])
}

fn check_arch(model: &TpMvcc, config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    let expected = config.model_config(dataset)?;
    if &expected != model.config() {
        return Err(Error::Checkpoint(format!(
            "checkpoint architecture does not match the training config (dilation {} vs {})",
            model.config().backbone.dilation(),
            config.dilation
        )));
    }
    Ok(())
}

/// Stage 1: backbone and view head on every training view image.
pub fn train_stage1(dataset: &Dataset, config: &TrainConfig) -> Result<(TpMvcc, StageReport)> {
    config.validate()?;
    let mut model = config.init_model(dataset)?;
    let frames = dataset.split(Split::Train)?;
    let mut samples: Vec<(&Tensor, Tensor)> = Vec::new();
    for f in &frames {
        for v in &f.views {
            let den = v.density.as_ref().ok_or_else(|| {
                Error::Dataset(format!("frame {} view {} has no view density map", f.id, v.id))
            })?;
            samples.push((&v.image, target(&den.grid, &model)?));
        }
    }
    let mut opt = optimizer(config, LrSchedule::constant(config.lr[0]));
    let mut rng = stage_rng(config.seed, 1);
    let report = run_stage(
        1,
        &mut model,
        &[ParamGroup::Backbone, ParamGroup::ViewHead],
        samples.len(),
        config.epochs[0],
        config.view_batch,
        &mut opt,
        &mut rng,
        |m, tape, b, k| {
            let (image, target) = &samples[k];
            let x = tape.constant((*image).clone());
            let f = m.backbone_forward(tape, b, x)?;
            let d = m.view_density_head(tape, b, f)?;
            let t = tape.constant(target.clone());
            tape.mse_loss(d, t)
        },
    )?;
    Ok((model, report))
}

fn scene_stage(
    stage: u8,
    dataset: &Dataset,
    mut model: TpMvcc,
    config: &TrainConfig,
    trainable: &[ParamGroup],
    schedule: LrSchedule,
) -> Result<(TpMvcc, StageReport)> {
    config.validate()?;
    check_arch(&model, config, dataset)?;
    let views = config.view_subset(dataset)?;
    let rig = model.rig(dataset.cameras())?;
    let frames: Vec<&SceneFrame> = dataset.split(Split::Train)?;
    let targets = frames
        .iter()
        .map(|f| target(&f.scene_density.grid, &model))
        .collect::<Result<Vec<_>>>()?;
    let inputs = frames
        .iter()
        .map(|f| views.iter().map(|&id| Ok((id, &f.view(id)?.image))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut opt = optimizer(config, schedule);
    let mut rng = stage_rng(config.seed, stage);
    let report = run_stage(
        stage,
        &mut model,
        trainable,
        frames.len(),
        config.epochs[stage as usize - 1],
        config.batch_size,
        &mut opt,
        &mut rng,
        |m, tape, b, k| scene_loss(m, tape, b, &rig, &inputs[k], &targets[k]),
    )?;
    Ok((model, report))
}

fn scene_loss(
    model: &TpMvcc,
    tape: &mut Tape,
    b: &Bound,
    rig: &Rig,
    images: &[(usize, &Tensor)],
    target: &Tensor,
) -> Result<Var> {
    let out = model.scene_forward(tape, b, rig, images)?;
    let t = tape.constant(target.clone());
    tape.mse_loss(out.density, t)
}

/// Stage 2: fusion and decoder on scene maps; the backbone is frozen.
pub fn train_stage2(dataset: &Dataset, stage1: TpMvcc, config: &TrainConfig) -> Result<(TpMvcc, StageReport)> {
    scene_stage(
        2,
        dataset,
        stage1,
        config,
        &[ParamGroup::Fusion, ParamGroup::Decoder],
        LrSchedule::constant(config.lr[1]),
    )
}

/// Learning-rate schedule of stage 3: halves every third of the stage.
pub fn stage3_schedule(config: &TrainConfig, steps_per_epoch: usize) -> LrSchedule {
    let period = (config.epochs[2] / 3).max(1) * steps_per_epoch.max(1);
    LrSchedule::step_decay(config.lr[2], config.lr_gamma, period as u64)
}

/// Stage 3: joint fine-tuning; the backbone joins only when
/// `backbone_trainable_in_stage3` is set.
pub fn train_stage3(dataset: &Dataset, stage2: TpMvcc, config: &TrainConfig) -> Result<(TpMvcc, StageReport)> {
    let mut groups = vec![ParamGroup::Fusion, ParamGroup::Decoder];
    if config.backbone_trainable_in_stage3 {
        groups.push(ParamGroup::Backbone);
    }
    let n = dataset.split(Split::Train)?.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    scene_stage(3, dataset, stage2, config, &groups, stage3_schedule(config, steps_per_epoch))
}

pub struct TrainRun {
    pub stage1: TpMvcc,
    pub stage2: TpMvcc,
    pub model: TpMvcc,
    pub report: TrainReport,
}

pub fn train_all(dataset: &Dataset, config: &TrainConfig) -> Result<TrainRun> {
    let start = Instant::now();
    let (m1, r1) = train_stage1(dataset, config)?;
    let (m2, r2) = train_stage2(dataset, m1.clone(), config)?;
    let (m3, r3) = train_stage3(dataset, m2.clone(), config)?;
    let report = TrainReport {
        config: config.clone(),
        model: m3.config().clone(),
        stages: vec![r1, r2, r3],
        checkpoint: checkpoint_id(&m3),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainRun {
        stage1: m1,
        stage2: m2,
        model: m3,
        report,
    })
}
