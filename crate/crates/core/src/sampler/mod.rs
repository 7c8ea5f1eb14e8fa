//! Interleaved slice acquisition of a moving volume.
//!
//! Per timestep the anatomy is posed by the trajectory, one axial slice is
//! extracted at the index dictated by the interleaved acquisition order,
//! and the ground-truth target pairs the rotation *relative to the pose at
//! timestep 0* with the continuous slice index. Acquisition is restricted
//! to the central band `[0.4 S, 0.9 S]` where image features are dense.
//! Intra-slice motion is modeled as an all-zero (masked) slice; masking
//! never touches the targets.

pub mod shard;

use ndarray::Array2;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Volume;
use crate::rigid3d::{compose, matrix_to_rotvec, rotvec_to_matrix, Pose};
use crate::rng::rng_from_seed;
use crate::trajectory::Trajectory;

/// Fractional band of usable slice indices.
pub const BAND_LO_FRAC: f64 = 0.4;
pub const BAND_HI_FRAC: f64 = 0.9;

/// Inclusive slice-index band `[ceil(0.4 S), floor(0.9 S)]`.
pub fn slice_band(s: usize) -> (usize, usize) {
    let lo = (BAND_LO_FRAC * s as f64).ceil() as usize;
    let hi = (BAND_HI_FRAC * s as f64).floor() as usize;
    (lo, hi.min(s - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaskPolicy {
    /// No masking (evaluation, unmasked-training ablation).
    NoMask,
    /// With probability `prob`, zero exactly one uniformly chosen
    /// estimation timestep.
    RandomOne { prob: f64 },
    /// Always zero the given estimation timestep (probing).
    Fixed { timestep: usize },
}

/// One training/evaluation example: n observed slices and n+m targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSequence {
    /// Estimation-window slices, each `slice_size x slice_size`.
    pub slices: Vec<Array2<f32>>,
    /// Per estimation timestep; true means the slice was zeroed.
    pub mask_flags: Vec<bool>,
    /// Acquired slice index per timestep, for all n+m timesteps.
    pub acquisition_order: Vec<usize>,
    /// Relative-rotation + slice-position targets for all n+m timesteps.
    pub targets: Vec<Pose>,
    pub subject_id: String,
    pub speed_class: u32,
    pub age_label: f64,
}

impl SliceSequence {
    pub fn n(&self) -> usize {
        self.slices.len()
    }

    pub fn m(&self) -> usize {
        self.targets.len() - self.slices.len()
    }

    pub fn slice_size(&self) -> usize {
        self.slices[0].shape()[0]
    }
}

/// Interleaved acquisition order with explicit offset ordering; exposed for
/// tests that need the unpermuted pattern.
pub fn interleaved_order_with_offsets(
    s: usize,
    step: usize,
    offsets: &[usize],
    len: usize,
) -> Vec<usize> {
    let (lo, hi) = slice_band(s);
    let mut order = Vec::with_capacity(len);
    'outer: loop {
        for &off in offsets {
            let mut idx = lo + off;
            while idx <= hi {
                order.push(idx);
                if order.len() == len {
                    break 'outer;
                }
                idx += step;
            }
        }
    }
    order
}

/// Acquisition order of `len` slice indices: within the allowed band, step
/// by `gap/spacing`, cycling over the interleave offsets in a seed-permuted
/// order. A fresh offset permutation is drawn each time the band is
/// exhausted.
pub fn interleaved_order(
    s: usize,
    gap_mm: f64,
    spacing_mm: f64,
    seed: u64,
    len: usize,
) -> Result<Vec<usize>> {
    if s < 4 {
        return Err(Error::invalid(format!("need at least 4 slices, got {s}")));
    }
    if len == 0 {
        return Err(Error::invalid("empty acquisition order requested"));
    }
    let ratio = gap_mm / spacing_mm;
    let step = ratio.round() as usize;
    if step == 0 || (ratio - step as f64).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "slice gap {gap_mm} mm is not a positive multiple of spacing {spacing_mm} mm"
        )));
    }
    let (lo, hi) = slice_band(s);
    if hi < lo || hi - lo + 1 < step {
        return Err(Error::invalid(format!(
            "band [{lo}, {hi}] too narrow for interleave step {step}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut order = Vec::with_capacity(len);
    while order.len() < len {
        let mut offsets: Vec<usize> = (0..step).collect();
        // Fisher-Yates with the seeded rng.
        for i in (1..offsets.len()).rev() {
            let j = rng.random_range(0..=i);
            offsets.swap(i, j);
        }
        let cycle = interleaved_order_with_offsets(s, step, &offsets, (hi - lo + 1).min(len - order.len()));
        order.extend(cycle);
    }
    Ok(order)
}

/// Extract one axial slice of the volume rotated by `pose` about its
/// center: trilinear gather, zero outside support, center-cropped or
/// padded to `n x n`.
pub fn extract_slice(
    v: &Volume,
    pose: &Pose,
    slice_index: usize,
    n: usize,
) -> Result<Array2<f32>> {
    let d = v.dim();
    if slice_index >= d {
        return Err(Error::invalid(format!(
            "slice index {slice_index} out of range for volume of {d} slices"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("slice size must be positive"));
    }
    let rot = rotvec_to_matrix(&pose.rotation)?;
    let inv = rot.inverse();
    let c = v.center();
    let off = (d as f64 - n as f64) / 2.0;
    let mut out = Array2::<f32>::zeros((n, n));
    for row in 0..n {
        let y = row as f64 + off;
        for col in 0..n {
            let x = col as f64 + off;
            let p = nalgebra::Vector3::new(x, y, slice_index as f64);
            let src = inv.apply(&(p - c)) + c;
            out[(row, col)] = v.sample_trilinear(src.x, src.y, src.z);
        }
    }
    Ok(out)
}

/// Build a [`SliceSequence`]: slices for the first `n` timesteps, targets
/// for all `n + m`. Requires the trajectory and acquisition order to cover
/// all n+m timesteps (future slice positions are targets too).
pub fn acquire_sequence(
    v: &Volume,
    traj: &Trajectory,
    order: &[usize],
    mask_policy: MaskPolicy,
    seed: u64,
    n: usize,
    m: usize,
    slice_size: usize,
) -> Result<SliceSequence> {
    let total = n + m;
    if n == 0 {
        return Err(Error::invalid("estimation window must be non-empty"));
    }
    if traj.poses.len() < total {
        return Err(Error::invalid(format!(
            "trajectory has {} poses, need {total}",
            traj.poses.len()
        )));
    }
    if order.len() < total {
        return Err(Error::invalid(format!(
            "acquisition order has {} entries, need {total}",
            order.len()
        )));
    }

    let initial = rotvec_to_matrix(&traj.poses[0].rotation)?;
    let initial_inv = initial.inverse();
    let mut targets = Vec::with_capacity(total);
    for i in 0..total {
        let abs = rotvec_to_matrix(&traj.poses[i].rotation)?;
        let rel = matrix_to_rotvec(&compose(&abs, &initial_inv));
        targets.push(Pose::new(rel, order[i] as f64));
    }

    let mut slices = Vec::with_capacity(n);
    for i in 0..n {
        slices.push(extract_slice(v, &traj.poses[i], order[i], slice_size)?);
    }

    let mut mask_flags = vec![false; n];
    let masked_step = match mask_policy {
        MaskPolicy::NoMask => None,
        MaskPolicy::Fixed { timestep } => {
            if timestep >= n {
                return Err(Error::invalid(format!(
                    "mask timestep {timestep} outside estimation window of {n}"
                )));
            }
            Some(timestep)
        }
        MaskPolicy::RandomOne { prob } => {
            let mut rng = rng_from_seed(seed);
            if rng.random::<f64>() < prob {
                Some(rng.random_range(0..n))
            } else {
                None
            }
        }
    };
    if let Some(t) = masked_step {
        slices[t].fill(0.0);
        mask_flags[t] = true;
    }

    Ok(SliceSequence {
        slices,
        mask_flags,
        acquisition_order: order[..total].to_vec(),
        targets,
        subject_id: v.subject_id.clone(),
        speed_class: traj.speed_class,
        age_label: v.age_label,
    })
}
