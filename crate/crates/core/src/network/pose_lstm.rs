//! One-step-ahead pose-sequence regressor.
//!
//! An LSTM over embedded pose vectors with a P-block head on every step,
//! trained to predict the next pose. This is the learned engine behind the
//! auto-regressive baseline: at inference it slides over a window of pose
//! estimates and recursively appends its own predictions.

use ndarray::{Array1, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use super::heads::{HeadCache, PoseHead};
use super::layers::Dense;
use super::lstm::{LstmCell, LstmStepCache};
use super::model::{output_to_pose, visit_head, visit_head_mut, visit_lstm, visit_lstm_mut};
use super::params::ParamSet;
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::rigid3d::Pose;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseLstmConfig {
    pub hidden: usize,
    pub embed: usize,
    pub rot_hidden: usize,
    pub z_input_scale: f64,
}

impl Default for PoseLstmConfig {
    fn default() -> Self {
        PoseLstmConfig {
            hidden: 64,
            embed: 16,
            rot_hidden: 16,
            z_input_scale: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoseLstm<F> {
    pub cfg: PoseLstmConfig,
    pub embed: Dense<F>,
    pub lstm: LstmCell<F>,
    pub head: PoseHead<F>,
}

pub struct PoseLstmForward<F> {
    pub outputs: Vec<Array1<F>>,
    caches: Vec<(Array1<F>, LstmStepCache<F>, HeadCache<F>)>,
}

impl<F: Real> PoseLstm<F> {
    pub fn init(cfg: PoseLstmConfig, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut embed = Dense::init(&mut rng, cfg.embed, 4);
        embed.scale_column(3, cfg.z_input_scale);
        let lstm = LstmCell::init(&mut rng, cfg.hidden, cfg.embed);
        let head = PoseHead::init(&mut rng, cfg.hidden, cfg.rot_hidden);
        PoseLstm {
            cfg,
            embed,
            lstm,
            head,
        }
    }

    fn pose_to_input(p: &Pose) -> Array1<F> {
        ndarray::array![
            F::from_f64(p.rotation.vx),
            F::from_f64(p.rotation.vy),
            F::from_f64(p.rotation.vz),
            F::from_f64(p.z),
        ]
    }

    /// Run over `window`, emitting a next-pose output at every step.
    pub fn forward(&self, window: &[Pose]) -> Result<PoseLstmForward<F>> {
        if window.is_empty() {
            return Err(Error::invalid("empty pose window"));
        }
        let hsz = self.cfg.hidden;
        let mut h = Array1::<F>::zeros(hsz);
        let mut c = Array1::<F>::zeros(hsz);
        let mut outputs = Vec::with_capacity(window.len());
        let mut caches = Vec::with_capacity(window.len());
        for p in window {
            let x = Self::pose_to_input(p);
            let emb = self.embed.forward(&x.view());
            let (nh, nc, lstm_cache) = self.lstm.step(&emb.view(), &h, &c);
            h = nh;
            c = nc;
            let (pose, head_cache) = self.head.forward(&h.view());
            caches.push((x, lstm_cache, head_cache));
            outputs.push(pose);
        }
        Ok(PoseLstmForward { outputs, caches })
    }

    /// Backward from per-step output gradients; accumulates into `grads`.
    pub fn backward(
        &self,
        fwd: &PoseLstmForward<F>,
        output_grads: &[Array1<F>],
        grads: &mut PoseLstm<F>,
    ) {
        let hsz = self.cfg.hidden;
        let mut dh_carry = Array1::<F>::zeros(hsz);
        let mut dc_carry = Array1::<F>::zeros(hsz);
        for t in (0..fwd.caches.len()).rev() {
            let (x, lstm_cache, head_cache) = &fwd.caches[t];
            let dh_head = self
                .head
                .backward(head_cache, &output_grads[t].view(), &mut grads.head);
            let dh_total = dh_head + &dh_carry;
            let (demb, dh_prev, dc_prev) =
                self.lstm
                    .backward_step(lstm_cache, &dh_total, &dc_carry, &mut grads.lstm);
            self.embed.backward(&x.view(), &demb.view(), &mut grads.embed);
            dh_carry = dh_prev;
            dc_carry = dc_prev;
        }
    }

    /// Predict the pose following `window` (the last step's output).
    pub fn predict_next(&self, window: &[Pose]) -> Result<Pose> {
        let fwd = self.forward(window)?;
        Ok(output_to_pose(fwd.outputs.last().expect("non-empty")))
    }
}

impl<F: Real> ParamSet<F> for PoseLstm<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {
        f("embed.w", self.embed.w.view().into_dyn());
        f("embed.b", self.embed.b.view().into_dyn());
        visit_lstm(&self.lstm, "lstm", f);
        visit_head(&self.head, "head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {
        f("embed.w", self.embed.w.view_mut().into_dyn());
        f("embed.b", self.embed.b.view_mut().into_dyn());
        visit_lstm_mut(&mut self.lstm, "lstm", f);
        visit_head_mut(&mut self.head, "head", f);
    }
}
