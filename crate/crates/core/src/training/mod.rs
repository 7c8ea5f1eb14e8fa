//! Dataset assembly and optimization.
//!
//! Every epoch draws fresh sequences per subject (speed via the truncated
//! normal, masks via the mask policy), deterministically in (seed, epoch).
//! RMS-prop drives the updates; the learning rate halves whenever
//! validation loss plateaus for `plateau_patience` epochs, floored at
//! `lr_end`. Curriculum mode samples sequences with probability
//! proportional to their current loss rank, so hard sequences are visited
//! more often. Batch gradients are accumulated in input order regardless
//! of parallelism, so a fixed seed reproduces the loss history exactly;
//! `parallel = false` is the reference deterministic mode that avoids
//! thread scheduling altogether.

use std::io::Write;
use std::path::Path;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::params::{any_non_finite, axpy, num_params, zeroed, ParamSet};
use crate::network::{LossBreakdown, LossMode, PoseLstm, TrackerModel};
use crate::parallel::{map_ordered, map_ordered_indexed};
use crate::phantom::Volume;
use crate::rigid3d::Pose;
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::{acquire_sequence, interleaved_order, MaskPolicy, SliceSequence};
use crate::trajectory::{
    sample_speed_with, synthesize_trajectory, SpeedDistribution, TrajectoryConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub sequences_per_subject: usize,
    pub val_sequences_per_subject: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub curriculum: bool,
    pub mask_policy: MaskPolicy,
    pub loss_mode: LossMode,
    /// Whether masked timesteps contribute to the estimation loss.
    pub include_masked_in_loss: bool,
    /// False selects the sequential reference path.
    pub parallel: bool,
    /// Reuse the epoch-0 pool every epoch instead of drawing fresh
    /// sequences (overfit smoke tests).
    pub fixed_pool: bool,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub speed: SpeedDistribution,
    pub trajectory: TrajectoryConfig,
    pub gap_mm: f64,
    pub slice_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr_start: 1e-3,
            lr_end: 1e-5,
            plateau_patience: 50,
            lr_decay: 0.5,
            sequences_per_subject: 32,
            val_sequences_per_subject: 8,
            n: 10,
            m: 10,
            seed: 0,
            batch_size: 32,
            curriculum: true,
            mask_policy: MaskPolicy::RandomOne { prob: 0.5 },
            loss_mode: LossMode::SplitMse,
            include_masked_in_loss: true,
            parallel: true,
            fixed_pool: false,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            speed: SpeedDistribution::default(),
            trajectory: TrajectoryConfig::default(),
            gap_mm: 5.0,
            slice_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return Err(Error::invalid(format!(
                "need lr_start > lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.plateau_patience == 0 {
            return Err(Error::invalid("plateau patience must be >= 1"));
        }
        if self.batch_size == 0 || self.sequences_per_subject == 0 {
            return Err(Error::invalid("batch size and sequences per subject must be positive"));
        }
        Ok(())
    }
}

/// Validation-loss-driven learning-rate decay.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    lr_end: f64,
    factor: f64,
    patience: usize,
    best: f64,
    since: usize,
}

impl PlateauSchedule {
    pub fn new(lr_start: f64, lr_end: f64, factor: f64, patience: usize) -> Self {
        PlateauSchedule {
            lr: lr_start,
            lr_end,
            factor,
            patience,
            best: f64::INFINITY,
            since: 0,
        }
    }

    pub fn current(&self) -> f64 {
        self.lr
    }

    /// Record one validation loss; steps the rate down after `patience`
    /// consecutive non-improving epochs.
    pub fn observe(&mut self, val_loss: f64) {
        if val_loss < self.best {
            self.best = val_loss;
            self.since = 0;
        } else {
            self.since += 1;
            if self.since >= self.patience {
                self.lr = (self.lr * self.factor).max(self.lr_end);
                self.since = 0;
            }
        }
    }
}

/// Generate one sequence deterministically from its task seed.
fn generate_sequence(
    volume: &Volume,
    cfg: &TrainConfig,
    task_seed: u64,
    mask_policy: MaskPolicy,
) -> Result<SliceSequence> {
    let total = cfg.n + cfg.m;
    let k = sample_speed_with(&mut rng_from_seed(derive_seed(task_seed, 1)), &cfg.speed);
    let traj = synthesize_trajectory(derive_seed(task_seed, 2), total, k, &cfg.trajectory)?;
    let order = interleaved_order(
        volume.dim(),
        cfg.gap_mm,
        volume.spacing_mm,
        derive_seed(task_seed, 3),
        total,
    )?;
    acquire_sequence(
        volume,
        &traj,
        &order,
        mask_policy,
        derive_seed(task_seed, 4),
        cfg.n,
        cfg.m,
        cfg.slice_size,
    )
}

/// Fresh sequences for one epoch: `sequences_per_subject` per subject,
/// deterministic in (seed, epoch_index).
pub fn build_epoch(
    subjects: &[Volume],
    cfg: &TrainConfig,
    epoch_index: usize,
) -> Result<Vec<SliceSequence>> {
    if subjects.is_empty() {
        return Err(Error::invalid("need at least one subject volume"));
    }
    let effective_epoch = if cfg.fixed_pool { 0 } else { epoch_index };
    let epoch_seed = derive_seed(cfg.seed, 0x0e70c0 + effective_epoch as u64);
    let total = subjects.len() * cfg.sequences_per_subject;
    let results = map_ordered_indexed(cfg.parallel, total, |idx| {
        let subject = idx / cfg.sequences_per_subject;
        generate_sequence(
            &subjects[subject],
            cfg,
            derive_seed(epoch_seed, idx as u64),
            cfg.mask_policy,
        )
    });
    results.into_iter().collect()
}

/// Fixed validation set from held-out subjects (epoch-independent).
pub fn build_validation(subjects: &[Volume], cfg: &TrainConfig) -> Result<Vec<SliceSequence>> {
    let val_seed = derive_seed(cfg.seed, 0x7a1);
    let total = subjects.len() * cfg.val_sequences_per_subject;
    let results = map_ordered_indexed(cfg.parallel, total, |idx| {
        let subject = idx / cfg.val_sequences_per_subject;
        generate_sequence(
            &subjects[subject],
            cfg,
            derive_seed(val_seed, idx as u64),
            cfg.mask_policy,
        )
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_rot_xy: f64,
    pub train_rot_z: f64,
    pub train_z: f64,
    pub val_total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Set when training hit a non-finite loss and rolled back.
    pub abort: Option<String>,
    /// Instrumentation: per-sequence loss of the epoch-0 pool, before any
    /// update.
    pub epoch0_sequence_losses: Vec<f64>,
    /// Instrumentation: presentation order of the epoch-0 pool.
    pub epoch0_order: Vec<usize>,
}

/// Flat RMS-prop accumulator over a ParamSet's visit order.
pub struct RmsProp {
    sq: Vec<f32>,
    decay: f32,
    eps: f32,
}

impl RmsProp {
    pub fn new(len: usize, decay: f64, eps: f64) -> Self {
        RmsProp {
            sq: vec![0.0; len],
            decay: decay as f32,
            eps: eps as f32,
        }
    }

    pub fn step<P: ParamSet<f32>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let mut gflat: Vec<f32> = Vec::with_capacity(self.sq.len());
        grads.visit(&mut |_, v| gflat.extend(v.iter().copied()));
        debug_assert_eq!(gflat.len(), self.sq.len());
        let lr = lr as f32;
        let (decay, eps) = (self.decay, self.eps);
        let sq = &mut self.sq;
        let mut pos = 0;
        params.visit_mut(&mut |_, mut v| {
            for x in v.iter_mut() {
                let g = gflat[pos];
                let s = decay * sq[pos] + (1.0 - decay) * g * g;
                sq[pos] = s;
                *x -= lr * g / (s.sqrt() + eps);
                pos += 1;
            }
        });
    }
}

fn est_include(seq: &SliceSequence, cfg: &TrainConfig) -> Option<Vec<bool>> {
    if cfg.include_masked_in_loss {
        None
    } else {
        Some(seq.mask_flags.iter().map(|&f| !f).collect())
    }
}

/// Training-mode loss of one sequence, no gradient work.
fn sequence_loss(
    model: &TrackerModel<f32>,
    seq: &SliceSequence,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let slices = crate::network::sequence_slices::<f32>(seq);
    let fwd = model.forward_train(&slices, cfg.m)?;
    let include = est_include(seq, cfg);
    let (loss, _) = crate::network::loss::loss_and_output_grads(
        &fwd.outputs,
        &seq.targets,
        cfg.n,
        cfg.loss_mode,
        include.as_deref(),
    )?;
    Ok(loss)
}

/// Presentation order for one epoch pool.
fn presentation_order(
    len: usize,
    losses: &[f64],
    curriculum: bool,
    rng: &mut crate::rng::SeedRng,
) -> Vec<usize> {
    if !curriculum {
        let mut order: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        return order;
    }
    // Rank-proportional sampling with replacement: hardest gets the
    // largest weight.
    debug_assert_eq!(losses.len(), len);
    let mut by_loss: Vec<usize> = (0..len).collect();
    by_loss.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut weight = vec![0.0f64; len];
    for (rank, &idx) in by_loss.iter().enumerate() {
        weight[idx] = (rank + 1) as f64;
    }
    let total: f64 = weight.iter().sum();
    (0..len)
        .map(|_| {
            let mut u = rng.random_range(0.0..total);
            for (idx, &w) in weight.iter().enumerate() {
                if u < w {
                    return idx;
                }
                u -= w;
            }
            len - 1
        })
        .collect()
}

/// Train a tracker model. Mutates `model` in place; on a non-finite loss
/// the parameters roll back to the last completed epoch and the report
/// carries the abort reason.
pub fn train(
    model: &mut TrackerModel<f32>,
    train_subjects: &[Volume],
    val_subjects: &[Volume],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if model.cfg.input_size != cfg.slice_size {
        return Err(Error::invalid(format!(
            "model input size {} vs configured slice size {}",
            model.cfg.input_size, cfg.slice_size
        )));
    }
    let val_set = build_validation(val_subjects, cfg)?;
    let mut schedule = PlateauSchedule::new(cfg.lr_start, cfg.lr_end, cfg.lr_decay, cfg.plateau_patience);
    let mut opt = RmsProp::new(num_params(model), cfg.rms_decay, cfg.rms_eps);
    let mut report = TrainReport::default();
    let mut last_good = model.clone();

    for epoch in 0..cfg.epochs {
        let pool = build_epoch(train_subjects, cfg, epoch)?;
        let lr = schedule.current();

        // Pre-pass losses: needed for curriculum weights, recorded at
        // epoch 0 as instrumentation either way.
        let need_prepass = cfg.curriculum || epoch == 0;
        let prepass: Vec<f64> = if need_prepass {
            let r = map_ordered(cfg.parallel, &pool, |seq| {
                sequence_loss(model, seq, cfg).map(|l| l.total())
            });
            r.into_iter().collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let mut order_rng = rng_from_seed(derive_seed(cfg.seed, 0x0d3e + epoch as u64));
        let order = presentation_order(pool.len(), &prepass, cfg.curriculum, &mut order_rng);
        if epoch == 0 {
            report.epoch0_sequence_losses = prepass.clone();
            report.epoch0_order = order.clone();
        }

        let mut sums = LossSums::default();
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&SliceSequence> = batch.iter().map(|&i| &pool[i]).collect();
            let steps = map_ordered(cfg.parallel, &refs, |seq| {
                let slices = crate::network::sequence_slices::<f32>(seq);
                let include = est_include(seq, cfg);
                model.train_step(&slices, &seq.targets, cfg.m, cfg.loss_mode, include.as_deref())
            });
            let steps: Vec<_> = steps.into_iter().collect::<Result<Vec<_>>>()?;

            let mut grad_acc = zeroed(model);
            let scale = 1.0 / steps.len() as f32;
            for step in &steps {
                if !step.loss.total().is_finite() {
                    *model = last_good;
                    let msg = format!("non-finite loss at epoch {epoch}");
                    report.abort = Some(msg);
                    return Ok(report);
                }
                sums.add(&step.loss);
                axpy(&mut grad_acc, scale, &step.grads);
                model.apply_bn_stats(&step.bn_stats);
            }
            if any_non_finite(&grad_acc) {
                *model = last_good;
                report.abort = Some(format!("non-finite gradient at epoch {epoch}"));
                return Ok(report);
            }
            opt.step(model, &grad_acc, lr);
        }

        // Held-out validation in inference mode.
        let val_losses: Vec<f64> = {
            let r = map_ordered(cfg.parallel, &val_set, |seq| {
                let outputs = model
                    .forward_eval(&crate::network::sequence_slices::<f32>(seq), cfg.m)?;
                let (l, _) = crate::network::loss::loss_and_output_grads(
                    &outputs,
                    &seq.targets,
                    cfg.n,
                    cfg.loss_mode,
                    None,
                )?;
                Ok(l.total())
            });
            r.into_iter().collect::<Result<Vec<_>>>()?
        };
        let val_total = mean(&val_losses);

        report.history.push(EpochRecord {
            epoch,
            train_total: sums.total(),
            train_rot_xy: sums.rot_xy(),
            train_rot_z: sums.rot_z(),
            train_z: sums.z(),
            val_total,
            lr,
        });
        schedule.observe(val_total);
        last_good = model.clone();
    }
    Ok(report)
}

/// Geodesic fine-tuning: a fixed small learning rate, rotation terms
/// replaced by squared geodesic distance.
pub fn fine_tune_geodesic(
    model: &mut TrackerModel<f32>,
    train_subjects: &[Volume],
    val_subjects: &[Volume],
    base: &TrainConfig,
    epochs: usize,
    lr: f64,
) -> Result<TrainReport> {
    if epochs == 0 {
        return Ok(TrainReport::default());
    }
    let cfg = TrainConfig {
        epochs,
        lr_start: lr,
        lr_end: lr * 0.99,
        plateau_patience: usize::MAX >> 1,
        loss_mode: LossMode::Geodesic,
        curriculum: false,
        seed: derive_seed(base.seed, 0x6e0),
        ..base.clone()
    };
    train(model, train_subjects, val_subjects, &cfg)
}

#[derive(Default)]
struct LossSums {
    rot_xy: f64,
    rot_z: f64,
    z: f64,
    count: usize,
}

impl LossSums {
    fn add(&mut self, l: &LossBreakdown) {
        self.rot_xy += l.est_rot_xy + l.pred_rot_xy;
        self.rot_z += l.est_rot_z + l.pred_rot_z;
        self.z += l.est_z + l.pred_z;
        self.count += 1;
    }
    fn rot_xy(&self) -> f64 {
        self.rot_xy / self.count.max(1) as f64
    }
    fn rot_z(&self) -> f64 {
        self.rot_z / self.count.max(1) as f64
    }
    fn z(&self) -> f64 {
        self.z / self.count.max(1) as f64
    }
    fn total(&self) -> f64 {
        self.rot_xy() + self.rot_z() + self.z()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Train the pose-sequence one-step regressor on ground-truth pose
/// sequences (the auto-regressive baseline's engine).
pub fn train_pose_regressor<FSeq: AsRef<[Pose]> + Sync>(
    model: &mut PoseLstm<f32>,
    sequences: &[FSeq],
    epochs: usize,
    lr: f64,
    seed: u64,
    parallel: bool,
) -> Result<Vec<f64>> {
    if sequences.is_empty() {
        return Err(Error::invalid("no pose sequences"));
    }
    let mut opt = RmsProp::new(num_params(model), 0.9, 1e-8);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        let mut rng = rng_from_seed(derive_seed(seed, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(16) {
            let refs: Vec<&FSeq> = batch.iter().map(|&i| &sequences[i]).collect();
            let steps = map_ordered(parallel, &refs, |s| {
                let poses = s.as_ref();
                let window = &poses[..poses.len() - 1];
                let targets: Vec<Pose> = poses[1..].to_vec();
                let fwd = model.forward(window)?;
                let (loss, grads_out) = crate::network::loss::loss_and_output_grads(
                    &fwd.outputs,
                    &targets,
                    targets.len(),
                    LossMode::SplitMse,
                    None,
                )?;
                let mut grads = zeroed(model);
                model.backward(&fwd, &grads_out, &mut grads);
                Ok((loss.total(), grads))
            });
            let steps: Vec<_> = steps.into_iter().collect::<Result<Vec<_>>>()?;
            let mut grad_acc = zeroed(model);
            let scale = 1.0 / steps.len() as f32;
            for (l, g) in &steps {
                epoch_loss += l / order.len() as f64;
                axpy(&mut grad_acc, scale, g);
            }
            opt.step(model, &grad_acc, lr);
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

/// Loss-history CSV: `epoch,train_total,train_rot_xy,train_rot_z,train_z,val_total,lr`.
/// An optional provenance line goes first as a `#` comment.
pub fn write_history_csv(
    path: &Path,
    history: &[EpochRecord],
    provenance: Option<&str>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(p) = provenance {
        writeln!(f, "# {p}")?;
    }
    writeln!(f, "epoch,train_total,train_rot_xy,train_rot_z,train_z,val_total,lr")?;
    for r in history {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.epoch, r.train_total, r.train_rot_xy, r.train_rot_z, r.train_z, r.val_total, r.lr
        )?;
    }
    Ok(())
}
