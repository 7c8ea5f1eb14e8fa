//! Training objectives.
//!
//! The split objective sums three MSE terms per phase — in-plane rotation
//! (theta_x, theta_y), through-plane rotation (theta_z), and slice position
//! — for the estimation window and the prediction horizon:
//! `L_total = L_est + L_pred`, each `L = L_rot_xy + L_rot_z + L_z`, each
//! term the mean over its timesteps of the squared component error.
//! Geodesic mode swaps the two rotation terms for the squared geodesic
//! angle between the emitted and target orientations (fine-tuning).

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::scalar::Real;
use crate::error::{Error, Result};
use crate::rigid3d::{
    geodesic_distance, rotation_jacobian, rotvec_to_matrix, Pose, RotationVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    SplitMse,
    /// Rotation terms replaced by squared geodesic distance; reported under
    /// the `rot_xy` slot with `rot_z` zero.
    Geodesic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub est_rot_xy: f64,
    pub est_rot_z: f64,
    pub est_z: f64,
    pub pred_rot_xy: f64,
    pub pred_rot_z: f64,
    pub pred_z: f64,
}

impl LossBreakdown {
    pub fn est_total(&self) -> f64 {
        self.est_rot_xy + self.est_rot_z + self.est_z
    }

    pub fn pred_total(&self) -> f64 {
        self.pred_rot_xy + self.pred_rot_z + self.pred_z
    }

    pub fn total(&self) -> f64 {
        self.est_total() + self.pred_total()
    }
}

/// Loss plus the gradient with respect to every output pose vector.
///
/// `est_include`: which estimation steps contribute (masked timesteps can
/// be excluded); prediction steps always contribute.
pub fn loss_and_output_grads<F: Real>(
    outputs: &[Array1<F>],
    targets: &[Pose],
    n: usize,
    mode: LossMode,
    est_include: Option<&[bool]>,
) -> Result<(LossBreakdown, Vec<Array1<F>>)> {
    if outputs.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} outputs vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    if n > outputs.len() {
        return Err(Error::invalid("estimation window longer than outputs"));
    }
    if let Some(inc) = est_include {
        if inc.len() != n {
            return Err(Error::invalid("est_include length mismatch"));
        }
    }

    let mut grads: Vec<Array1<F>> = outputs.iter().map(|o| Array1::zeros(o.len())).collect();
    let mut breakdown = LossBreakdown::default();

    for phase in 0..2 {
        let (lo, hi) = if phase == 0 {
            (0, n)
        } else {
            (n, outputs.len())
        };
        let included: Vec<usize> = (lo..hi)
            .filter(|&t| {
                phase == 1
                    || est_include
                        .map(|inc| inc[t])
                        .unwrap_or(true)
            })
            .collect();
        if included.is_empty() {
            continue;
        }
        let count = included.len() as f64;

        let (mut l_xy, mut l_rz, mut l_z) = (0.0, 0.0, 0.0);
        for &t in &included {
            let out = &outputs[t];
            let tgt = &targets[t];
            let o = [
                out[0].to_f64(),
                out[1].to_f64(),
                out[2].to_f64(),
                out[3].to_f64(),
            ];
            let y = [tgt.rotation.vx, tgt.rotation.vy, tgt.rotation.vz, tgt.z];

            let dz = o[3] - y[3];
            l_z += dz * dz;
            grads[t][3] = F::from_f64(2.0 * dz / count);

            match mode {
                LossMode::SplitMse => {
                    let d0 = o[0] - y[0];
                    let d1 = o[1] - y[1];
                    let d2 = o[2] - y[2];
                    l_xy += d0 * d0 + d1 * d1;
                    l_rz += d2 * d2;
                    grads[t][0] = F::from_f64(2.0 * d0 / count);
                    grads[t][1] = F::from_f64(2.0 * d1 / count);
                    grads[t][2] = F::from_f64(2.0 * d2 / count);
                }
                LossMode::Geodesic => {
                    let v_hat = RotationVector::new(o[0], o[1], o[2]);
                    let r_hat = rotvec_to_matrix(&v_hat)
                        .map_err(|_| Error::invalid("non-finite rotation output"))?;
                    let r_tgt = rotvec_to_matrix(&tgt.rotation)?;
                    let d = geodesic_distance(&r_hat, &r_tgt);
                    l_xy += d * d;
                    // d(d^2)/du = -2d/sin(d) with u = (tr-1)/2; the factor
                    // is smooth through d = 0 and clamped near pi.
                    let factor = if d < 1e-6 {
                        1.0 + d * d / 6.0
                    } else {
                        d / d.sin().max(1e-9)
                    };
                    let jac = rotation_jacobian(&v_hat);
                    for k in 0..3 {
                        let mut tr_grad = 0.0;
                        for i in 0..3 {
                            for j in 0..3 {
                                tr_grad += r_tgt.matrix()[(i, j)] * jac[k][(i, j)];
                            }
                        }
                        grads[t][k] = F::from_f64(-factor * tr_grad / count);
                    }
                }
            }
        }
        if phase == 0 {
            breakdown.est_rot_xy = l_xy / count;
            breakdown.est_rot_z = l_rz / count;
            breakdown.est_z = l_z / count;
        } else {
            breakdown.pred_rot_xy = l_xy / count;
            breakdown.pred_rot_z = l_rz / count;
            breakdown.pred_z = l_z / count;
        }
    }

    Ok((breakdown, grads))
}
