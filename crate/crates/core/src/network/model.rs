//! The tracking model: spatial encoder CNN, temporal encoder LSTM with a
//! P block per timestep, and an LSTM decoder that predicts future poses by
//! feeding back its own previous output (no teacher forcing).
//!
//! An empty `conv_channels` list turns the spatial encoder into a plain
//! flatten, which is exactly the direct-LSTM baseline: raw pixels into the
//! LSTM with the same decoder structure.

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use super::heads::{HeadCache, PoseHead};
use super::layers::{
    maxpool2_backward, maxpool2_forward, BatchNorm2d, BnBatchStats, BnCache, Conv3x3, Dense,
    PRelu, PoolCache,
};
use super::loss::{loss_and_output_grads, LossBreakdown, LossMode};
use super::lstm::{LstmCell, LstmStepCache};
use super::params::ParamSet;
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::rigid3d::{Pose, RotationVector};
use crate::rng::rng_from_seed;
use crate::sampler::SliceSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Slice edge length N; must be divisible by 2^len(conv_channels).
    pub input_size: usize,
    /// Filter count per spatial-encoder layer; empty = direct LSTM on raw
    /// pixels.
    pub conv_channels: Vec<usize>,
    /// LSTM hidden width, shared by encoder and decoder.
    pub hidden: usize,
    /// Width of the shared rotation trunk in the P block.
    pub rot_hidden: usize,
    /// Width the 4-dim pose estimate is embedded to before the decoder
    /// LSTM.
    pub decoder_embed: usize,
    pub prelu_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Init scale for weights reading the slice-position input, which is
    /// O(slice count) rather than O(1).
    pub z_input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            conv_channels: vec![32, 64, 128, 256, 512],
            hidden: 256,
            rot_hidden: 32,
            decoder_embed: 32,
            prelu_slope: 0.25,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            z_input_scale: 0.02,
        }
    }
}

impl ModelConfig {
    /// Direct-LSTM baseline: no spatial feature encoding.
    pub fn direct_lstm(input_size: usize, hidden: usize) -> Self {
        ModelConfig {
            input_size,
            conv_channels: vec![],
            hidden,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.conv_channels.len();
        let div = 1usize << l;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::invalid(format!(
                "input size {} not divisible by 2^{l}",
                self.input_size
            )));
        }
        if self.hidden == 0 || self.rot_hidden == 0 || self.decoder_embed == 0 {
            return Err(Error::invalid("zero-width layer"));
        }
        Ok(())
    }

    /// Flattened spatial-feature length per timestep.
    pub fn feature_len(&self) -> usize {
        match self.conv_channels.last() {
            None => self.input_size * self.input_size,
            Some(&c) => {
                let side = self.input_size >> self.conv_channels.len();
                c * side * side
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock<F> {
    pub conv: Conv3x3<F>,
    pub bn: BatchNorm2d<F>,
    pub prelu: PRelu<F>,
}

pub struct BlockCache<F> {
    input: Array4<F>,
    bn: BnCache<F>,
    prelu_in: Array4<F>,
    pool: PoolCache,
}

impl<F: Real> ConvBlock<F> {
    fn init(rng: &mut crate::rng::SeedRng, c_out: usize, c_in: usize, cfg: &ModelConfig) -> Self {
        ConvBlock {
            conv: Conv3x3::init(rng, c_out, c_in),
            bn: BatchNorm2d::init(c_out, cfg.bn_eps, cfg.bn_momentum),
            prelu: PRelu::init(c_out, cfg.prelu_slope),
        }
    }

    fn forward_train(&self, x: Array4<F>) -> (Array4<F>, BlockCache<F>, BnBatchStats<F>) {
        let conv_out = self.conv.forward(&x.view());
        let (bn_out, bn_cache, stats) = self.bn.forward_train(&conv_out.view());
        let act = self.prelu.forward(&bn_out.view());
        let (pooled, pool) = maxpool2_forward(&act.view());
        (
            pooled,
            BlockCache {
                input: x,
                bn: bn_cache,
                prelu_in: bn_out,
                pool,
            },
            stats,
        )
    }

    fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let conv_out = self.conv.forward(&x.view());
        let bn_out = self.bn.forward_eval(&conv_out.view());
        let act = self.prelu.forward(&bn_out.view());
        maxpool2_forward(&act.view()).0
    }

    fn backward(&self, cache: &BlockCache<F>, dy: &Array4<F>, g: &mut ConvBlock<F>) -> Array4<F> {
        let d_act = maxpool2_backward(&cache.pool, &dy.view());
        let d_bn_out = self
            .prelu
            .backward(&cache.prelu_in.view(), &d_act.view(), &mut g.prelu);
        let d_conv_out = self.bn.backward(&cache.bn, &d_bn_out.view(), &mut g.bn);
        self.conv
            .backward(&cache.input.view(), &d_conv_out.view(), &mut g.conv)
    }
}

#[derive(Debug, Clone)]
pub struct TrackerModel<F> {
    pub cfg: ModelConfig,
    pub spatial: Vec<ConvBlock<F>>,
    pub enc_lstm: LstmCell<F>,
    pub enc_head: PoseHead<F>,
    pub dec_embed: Dense<F>,
    pub dec_lstm: LstmCell<F>,
    pub dec_head: PoseHead<F>,
}

/// Everything the backward pass needs from one training forward.
pub struct TrainForward<F> {
    pub outputs: Vec<Array1<F>>,
    pub bn_stats: Vec<BnBatchStats<F>>,
    features: Array2<F>,
    spatial_caches: Vec<BlockCache<F>>,
    enc_caches: Vec<(LstmStepCache<F>, HeadCache<F>)>,
    dec_caches: Vec<(Array1<F>, LstmStepCache<F>, HeadCache<F>)>,
    n: usize,
    m: usize,
}

pub struct TrainStep<F> {
    pub loss: LossBreakdown,
    pub grads: TrackerModel<F>,
    pub bn_stats: Vec<BnBatchStats<F>>,
}

impl<F: Real> TrackerModel<F> {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut spatial = Vec::new();
        let mut c_in = 1;
        for &c_out in &cfg.conv_channels {
            spatial.push(ConvBlock::init(&mut rng, c_out, c_in, &cfg));
            c_in = c_out;
        }
        let feat = cfg.feature_len();
        let enc_lstm = LstmCell::init(&mut rng, cfg.hidden, feat);
        let enc_head = PoseHead::init(&mut rng, cfg.hidden, cfg.rot_hidden);
        let mut dec_embed = Dense::init(&mut rng, cfg.decoder_embed, 4);
        dec_embed.scale_column(3, cfg.z_input_scale);
        let dec_lstm = LstmCell::init(&mut rng, cfg.hidden, cfg.decoder_embed);
        let dec_head = PoseHead::init(&mut rng, cfg.hidden, cfg.rot_hidden);
        Ok(TrackerModel {
            cfg,
            spatial,
            enc_lstm,
            enc_head,
            dec_embed,
            dec_lstm,
            dec_head,
        })
    }

    pub fn num_params(&self) -> usize {
        super::params::num_params(self)
    }

    fn check_inputs(&self, slices: &Array3<F>, m: usize) -> Result<()> {
        let (n, h, w) = slices.dim();
        if n < 3 {
            return Err(Error::invalid(format!(
                "estimation window {n} too short to carry motion state (need >= 3)"
            )));
        }
        if m < 1 {
            return Err(Error::invalid("prediction horizon must be >= 1"));
        }
        if h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(Error::invalid(format!(
                "slice {h}x{w} does not match configured input size {}",
                self.cfg.input_size
            )));
        }
        Ok(())
    }

    /// Spatial features for all timesteps, training mode (batch statistics
    /// over the sequence's own slices).
    fn spatial_train(
        &self,
        slices: &Array3<F>,
    ) -> (Array2<F>, Vec<BlockCache<F>>, Vec<BnBatchStats<F>>) {
        let (n, h, w) = slices.dim();
        let mut x = slices.to_owned().insert_axis(Axis(1));
        let mut caches = Vec::with_capacity(self.spatial.len());
        let mut stats = Vec::with_capacity(self.spatial.len());
        for block in &self.spatial {
            let (y, cache, st) = block.forward_train(x);
            x = y;
            caches.push(cache);
            stats.push(st);
        }
        let feat = self.cfg.feature_len();
        debug_assert_eq!(x.len(), n * feat);
        let features = x
            .into_shape_with_order((n, feat))
            .expect("contiguous features");
        let _ = (h, w);
        (features, caches, stats)
    }

    fn spatial_eval(&self, slices: &Array3<F>) -> Array2<F> {
        let n = slices.dim().0;
        let mut x = slices.to_owned().insert_axis(Axis(1));
        for block in &self.spatial {
            x = block.forward_eval(&x);
        }
        let feat = self.cfg.feature_len();
        x.into_shape_with_order((n, feat)).expect("contiguous")
    }

    /// Decoder rollout from the encoder's final state and last estimate.
    fn decode(
        &self,
        h: Array1<F>,
        c: Array1<F>,
        last_estimate: Array1<F>,
        m: usize,
        outputs: &mut Vec<Array1<F>>,
        caches: &mut Vec<(Array1<F>, LstmStepCache<F>, HeadCache<F>)>,
    ) {
        let (mut h, mut c) = (h, c);
        let mut input_pose = last_estimate;
        for _ in 0..m {
            let emb = self.dec_embed.forward(&input_pose.view());
            let (nh, nc, lstm_cache) = self.dec_lstm.step(&emb.view(), &h, &c);
            h = nh;
            c = nc;
            let (pose, head_cache) = self.dec_head.forward(&h.view());
            caches.push((input_pose, lstm_cache, head_cache));
            input_pose = pose.clone();
            outputs.push(pose);
        }
    }

    /// Full training-mode forward with caches.
    pub fn forward_train(&self, slices: &Array3<F>, m: usize) -> Result<TrainForward<F>> {
        self.check_inputs(slices, m)?;
        let n = slices.dim().0;
        let (features, spatial_caches, bn_stats) = self.spatial_train(slices);

        let hsz = self.cfg.hidden;
        let mut h = Array1::<F>::zeros(hsz);
        let mut c = Array1::<F>::zeros(hsz);
        let mut outputs = Vec::with_capacity(n + m);
        let mut enc_caches = Vec::with_capacity(n);
        for i in 0..n {
            let (nh, nc, lstm_cache) = self.enc_lstm.step(&features.row(i), &h, &c);
            h = nh;
            c = nc;
            let (pose, head_cache) = self.enc_head.forward(&h.view());
            enc_caches.push((lstm_cache, head_cache));
            outputs.push(pose);
        }

        let mut dec_caches = Vec::with_capacity(m);
        let last = outputs[n - 1].clone();
        self.decode(h, c, last, m, &mut outputs, &mut dec_caches);

        Ok(TrainForward {
            outputs,
            bn_stats,
            features,
            spatial_caches,
            enc_caches,
            dec_caches,
            n,
            m,
        })
    }

    /// Inference: batch-norm running statistics, no caches.
    pub fn forward_eval(&self, slices: &Array3<F>, m: usize) -> Result<Vec<Array1<F>>> {
        self.check_inputs(slices, m)?;
        let n = slices.dim().0;
        let features = self.spatial_eval(slices);
        let hsz = self.cfg.hidden;
        let mut h = Array1::<F>::zeros(hsz);
        let mut c = Array1::<F>::zeros(hsz);
        let mut outputs = Vec::with_capacity(n + m);
        for i in 0..n {
            let (nh, nc, _) = self.enc_lstm.step(&features.row(i), &h, &c);
            h = nh;
            c = nc;
            let (pose, _) = self.enc_head.forward(&h.view());
            outputs.push(pose);
        }
        let mut input_pose = outputs[n - 1].clone();
        for _ in 0..m {
            let emb = self.dec_embed.forward(&input_pose.view());
            let (nh, nc, _) = self.dec_lstm.step(&emb.view(), &h, &c);
            h = nh;
            c = nc;
            let (pose, _) = self.dec_head.forward(&h.view());
            input_pose = pose.clone();
            outputs.push(pose);
        }
        Ok(outputs)
    }

    /// Backpropagate given gradients on every output pose; accumulates
    /// parameter gradients into `grads`.
    pub fn backward(
        &self,
        fwd: &TrainForward<F>,
        mut output_grads: Vec<Array1<F>>,
        grads: &mut TrackerModel<F>,
    ) {
        let (n, m) = (fwd.n, fwd.m);
        let hsz = self.cfg.hidden;

        // Decoder, reversed. The feedback path routes part of each step's
        // input gradient back to the previous step's emitted pose.
        let mut dh_carry = Array1::<F>::zeros(hsz);
        let mut dc_carry = Array1::<F>::zeros(hsz);
        for j in (0..m).rev() {
            let (input_pose, lstm_cache, head_cache) = &fwd.dec_caches[j];
            let dh_head =
                self.dec_head
                    .backward(head_cache, &output_grads[n + j].view(), &mut grads.dec_head);
            let dh_total = dh_head + &dh_carry;
            let (demb, dh_prev, dc_prev) =
                self.dec_lstm
                    .backward_step(lstm_cache, &dh_total, &dc_carry, &mut grads.dec_lstm);
            let dpose_in =
                self.dec_embed
                    .backward(&input_pose.view(), &demb.view(), &mut grads.dec_embed);
            let upstream = if j == 0 { n - 1 } else { n + j - 1 };
            output_grads[upstream] += &dpose_in;
            dh_carry = dh_prev;
            dc_carry = dc_prev;
        }

        // Encoder, reversed; the decoder's initial-state gradients flow
        // into the last encoder step.
        let mut dfeatures = Array2::<F>::zeros(fwd.features.dim());
        for i in (0..n).rev() {
            let (lstm_cache, head_cache) = &fwd.enc_caches[i];
            let dh_head =
                self.enc_head
                    .backward(head_cache, &output_grads[i].view(), &mut grads.enc_head);
            let dh_total = dh_head + &dh_carry;
            let (dx, dh_prev, dc_prev) =
                self.enc_lstm
                    .backward_step(lstm_cache, &dh_total, &dc_carry, &mut grads.enc_lstm);
            dfeatures.row_mut(i).assign(&dx);
            dh_carry = dh_prev;
            dc_carry = dc_prev;
        }

        // Spatial encoder, reversed.
        if !self.spatial.is_empty() {
            let (nb, cc, hh, ww) = fwd.spatial_caches.last().expect("non-empty").pool.in_dim;
            let mut dy = dfeatures
                .into_shape_with_order((nb, cc, hh / 2, ww / 2))
                .expect("contiguous");
            for idx in (0..self.spatial.len()).rev() {
                dy = self.spatial[idx].backward(
                    &fwd.spatial_caches[idx],
                    &dy,
                    &mut grads.spatial[idx],
                );
            }
        }
    }

    /// One full training step on one sequence: forward, loss, backward.
    pub fn train_step(
        &self,
        slices: &Array3<F>,
        targets: &[Pose],
        m: usize,
        mode: LossMode,
        est_include: Option<&[bool]>,
    ) -> Result<TrainStep<F>> {
        let fwd = self.forward_train(slices, m)?;
        if targets.len() != fwd.n + m {
            return Err(Error::invalid(format!(
                "{} targets for {} outputs",
                targets.len(),
                fwd.n + m
            )));
        }
        let (loss, output_grads) =
            loss_and_output_grads(&fwd.outputs, targets, fwd.n, mode, est_include)?;
        let mut grads = super::params::zeroed(self);
        self.backward(&fwd, output_grads, &mut grads);
        Ok(TrainStep {
            loss,
            grads,
            bn_stats: fwd.bn_stats,
        })
    }

    /// Fold one forward's batch-norm statistics into the running estimates
    /// (sequentially, after any parallel batch work).
    pub fn apply_bn_stats(&mut self, stats: &[BnBatchStats<F>]) {
        for (block, st) in self.spatial.iter_mut().zip(stats) {
            block.bn.apply_stats(st);
        }
    }

    /// Inference on a slice sequence; returns n estimated + m predicted
    /// poses.
    pub fn predict(&self, seq: &SliceSequence, m: usize) -> Result<Vec<Pose>> {
        let slices = sequence_slices::<F>(seq);
        let outputs = self.forward_eval(&slices, m)?;
        Ok(outputs.iter().map(|o| output_to_pose(o)).collect())
    }
}

/// Stack a sequence's slices into the model input tensor.
pub fn sequence_slices<F: Real>(seq: &SliceSequence) -> Array3<F> {
    let n = seq.n();
    let sz = seq.slice_size();
    let mut out = Array3::<F>::zeros((n, sz, sz));
    for (i, s) in seq.slices.iter().enumerate() {
        let mut dst = out.index_axis_mut(Axis(0), i);
        ndarray::Zip::from(&mut dst)
            .and(s)
            .for_each(|d, &v| *d = F::from_f64(v as f64));
    }
    out
}

pub fn output_to_pose<F: Real>(o: &Array1<F>) -> Pose {
    Pose::new(
        RotationVector::new(o[0].to_f64(), o[1].to_f64(), o[2].to_f64()),
        o[3].to_f64(),
    )
}

impl<F: Real> ParamSet<F> for TrackerModel<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        for (i, b) in self.spatial.iter().enumerate() {
            f(&format!("spatial.{i}.conv.w"), b.conv.w.view().into_dyn());
            f(&format!("spatial.{i}.bn.gamma"), b.bn.gamma.view().into_dyn());
            f(&format!("spatial.{i}.bn.beta"), b.bn.beta.view().into_dyn());
            f(&format!("spatial.{i}.prelu.a"), b.prelu.a.view().into_dyn());
        }
        visit_lstm(&self.enc_lstm, "enc_lstm", f);
        visit_head(&self.enc_head, "enc_head", f);
        f("dec_embed.w", self.dec_embed.w.view().into_dyn());
        f("dec_embed.b", self.dec_embed.b.view().into_dyn());
        visit_lstm(&self.dec_lstm, "dec_lstm", f);
        visit_head(&self.dec_head, "dec_head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        for (i, b) in self.spatial.iter_mut().enumerate() {
            f(&format!("spatial.{i}.conv.w"), b.conv.w.view_mut().into_dyn());
            f(&format!("spatial.{i}.bn.gamma"), b.bn.gamma.view_mut().into_dyn());
            f(&format!("spatial.{i}.bn.beta"), b.bn.beta.view_mut().into_dyn());
            f(&format!("spatial.{i}.prelu.a"), b.prelu.a.view_mut().into_dyn());
        }
        visit_lstm_mut(&mut self.enc_lstm, "enc_lstm", f);
        visit_head_mut(&mut self.enc_head, "enc_head", f);
        f("dec_embed.w", self.dec_embed.w.view_mut().into_dyn());
        f("dec_embed.b", self.dec_embed.b.view_mut().into_dyn());
        visit_lstm_mut(&mut self.dec_lstm, "dec_lstm", f);
        visit_head_mut(&mut self.dec_head, "dec_head", f);
    }

    fn visit_state(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        for (i, b) in self.spatial.iter().enumerate() {
            f(
                &format!("spatial.{i}.bn.running_mean"),
                b.bn.running_mean.view().into_dyn(),
            );
            f(
                &format!("spatial.{i}.bn.running_var"),
                b.bn.running_var.view().into_dyn(),
            );
        }
    }

    fn visit_state_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        for (i, b) in self.spatial.iter_mut().enumerate() {
            f(
                &format!("spatial.{i}.bn.running_mean"),
                b.bn.running_mean.view_mut().into_dyn(),
            );
            f(
                &format!("spatial.{i}.bn.running_var"),
                b.bn.running_var.view_mut().into_dyn(),
            );
        }
    }
}

pub(crate) fn visit_lstm<'a, F: Real>(
    l: &'a LstmCell<F>,
    prefix: &str,
    f: &mut dyn FnMut(&str, ArrayViewD<'a, F>),
) {
    f(&format!("{prefix}.w_x"), l.w_x.view().into_dyn());
    f(&format!("{prefix}.w_h"), l.w_h.view().into_dyn());
    f(&format!("{prefix}.b"), l.b.view().into_dyn());
}

pub(crate) fn visit_lstm_mut<F: Real>(
    l: &mut LstmCell<F>,
    prefix: &str,
    f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>),
) {
    f(&format!("{prefix}.w_x"), l.w_x.view_mut().into_dyn());
    f(&format!("{prefix}.w_h"), l.w_h.view_mut().into_dyn());
    f(&format!("{prefix}.b"), l.b.view_mut().into_dyn());
}

pub(crate) fn visit_head<'a, F: Real>(
    h: &'a PoseHead<F>,
    prefix: &str,
    f: &mut dyn FnMut(&str, ArrayViewD<'a, F>),
) {
    for (name, d) in [
        ("rot_shared", &h.rot_shared),
        ("rot_xy", &h.rot_xy),
        ("rot_z", &h.rot_z),
        ("slice", &h.slice),
    ] {
        f(&format!("{prefix}.{name}.w"), d.w.view().into_dyn());
        f(&format!("{prefix}.{name}.b"), d.b.view().into_dyn());
    }
}

pub(crate) fn visit_head_mut<F: Real>(
    h: &mut PoseHead<F>,
    prefix: &str,
    f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>),
) {
    for (name, d) in [
        ("rot_shared", &mut h.rot_shared),
        ("rot_xy", &mut h.rot_xy),
        ("rot_z", &mut h.rot_z),
        ("slice", &mut h.slice),
    ] {
        f(&format!("{prefix}.{name}.w"), d.w.view_mut().into_dyn());
        f(&format!("{prefix}.{name}.b"), d.b.view_mut().into_dyn());
    }
}
