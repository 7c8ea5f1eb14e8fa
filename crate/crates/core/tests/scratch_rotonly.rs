//! Diagnostic: is rotation learnable from slices when z is trivial?
//! Fixed acquisition order (same z schedule every sequence), one subject,
//! fresh trajectories per epoch.

use ndarray::Array3;

use slicetrack::network::params::{num_params, zeroed};
use slicetrack::network::{sequence_slices, LossMode, ModelConfig, TrackerModel};
use slicetrack::phantom::{generate_phantom, normalize, PhantomParams};
use slicetrack::rng::derive_seed;
use slicetrack::sampler::{acquire_sequence, interleaved_order, MaskPolicy, SliceSequence};
use slicetrack::trajectory::{synthesize_trajectory, TrajectoryConfig};
use slicetrack::training::RmsProp;

const D: usize = 40;
const N: usize = 32;

fn make_seq(vol: &slicetrack::phantom::Volume, order: &[usize], seed: u64) -> SliceSequence {
    let traj = synthesize_trajectory(seed, 20, 6, &TrajectoryConfig::default()).unwrap();
    acquire_sequence(vol, &traj, order, MaskPolicy::NoMask, 0, 10, 10, N).unwrap()
}

#[test]
#[ignore]
fn rotation_only_learnability() {
    let params = PhantomParams {
        min_blobs: 10,
        max_blobs: 16,
        center_spread: 0.25,
        blob_sigma: (0.04, 0.10),
        ..PhantomParams::default()
    };
    let vol = normalize(&generate_phantom(1, D, &params).unwrap()).unwrap();
    let order = interleaved_order(D, 5.0, 1.0, 7, 20).unwrap();

    let cfg = ModelConfig {
        input_size: N,
        conv_channels: vec![16, 32, 64],
        hidden: 96,
        rot_hidden: 32,
        decoder_embed: 16,
        ..ModelConfig::default()
    };
    let mut model = TrackerModel::<f32>::init(cfg, 50).unwrap();
    let mut opt = RmsProp::new(num_params(&model), 0.9, 1e-8);

    let lr0 = 1e-3;
    for epoch in 0..240usize {
        let lr = if epoch < 60 {
            lr0
        } else if epoch < 120 {
            lr0 / 3.0
        } else if epoch < 180 {
            lr0 / 10.0
        } else {
            lr0 / 30.0
        };
        let mut ep = [0.0f64; 3];
        let per_epoch = 32usize;
        for b in 0..per_epoch / 4 {
            let mut grads = zeroed(&model);
            let mut bn_all = Vec::new();
            for k in 0..4 {
                let seq = make_seq(
                    &vol,
                    &order,
                    derive_seed(3, (epoch * per_epoch + b * 4 + k) as u64),
                );
                let slices: Array3<f32> = sequence_slices(&seq);
                let step = model
                    .train_step(&slices, &seq.targets, 10, LossMode::SplitMse, None)
                    .unwrap();
                ep[0] += (step.loss.est_rot_xy + step.loss.pred_rot_xy) / per_epoch as f64;
                ep[1] += (step.loss.est_rot_z + step.loss.pred_rot_z) / per_epoch as f64;
                ep[2] += (step.loss.est_z + step.loss.pred_z) / per_epoch as f64;
                slicetrack::network::params::axpy(&mut grads, 0.25, &step.grads);
                bn_all.push(step.bn_stats);
            }
            for st in &bn_all {
                model.apply_bn_stats(st);
            }
            opt.step(&mut model, &grads, lr);
        }
        if epoch % 10 == 0 || epoch == 249 {
            eprintln!(
                "e{epoch:3} xy {:7.4} rz {:7.4} z {:8.4} lr {lr:.1e}",
                ep[0], ep[1], ep[2]
            );
        }
    }
}
