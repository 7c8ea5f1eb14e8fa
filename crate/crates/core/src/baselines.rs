//! Non-learned and degenerate predictors used for comparison.
//!
//! The zero-velocity predictor repeats the last estimate across the whole
//! horizon. The auto-regressive predictor slides a window of pose vectors:
//! future slices do not exist, so it recurses over pose estimates with a
//! learned one-step regressor (see `network::pose_lstm`).

use crate::error::{Error, Result};
use crate::rigid3d::Pose;

/// One-step-ahead pose predictor over a sliding window.
pub trait OneStepPosePredictor {
    fn predict_next(&self, window: &[Pose]) -> Result<Pose>;
}

impl OneStepPosePredictor for crate::network::PoseLstm<f32> {
    fn predict_next(&self, window: &[Pose]) -> Result<Pose> {
        crate::network::PoseLstm::predict_next(self, window)
    }
}

/// Test stub: repeats the window's last pose.
pub struct EchoLast;

impl OneStepPosePredictor for EchoLast {
    fn predict_next(&self, window: &[Pose]) -> Result<Pose> {
        window
            .last()
            .copied()
            .ok_or_else(|| Error::invalid("empty window"))
    }
}

/// All m predictions equal the final estimate.
pub fn zero_velocity_predict(estimates: &[Pose], m: usize) -> Result<Vec<Pose>> {
    let last = *estimates
        .last()
        .ok_or_else(|| Error::invalid("zero-velocity needs at least one estimate"))?;
    Ok(vec![last; m])
}

/// Recursively append one-step predictions to a sliding window of size
/// `window`, starting from the estimates.
pub fn autoregressive_predict(
    model: &dyn OneStepPosePredictor,
    estimates: &[Pose],
    m: usize,
    window: usize,
) -> Result<Vec<Pose>> {
    if estimates.is_empty() {
        return Err(Error::invalid("auto-regression needs at least one estimate"));
    }
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    let mut track: Vec<Pose> = estimates.to_vec();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let lo = track.len().saturating_sub(window);
        let next = model.predict_next(&track[lo..])?;
        track.push(next);
        out.push(next);
    }
    Ok(out)
}
