//! The P block: regression heads on top of an LSTM output.
//!
//! A shared rotation layer (tanh) feeds two split heads — in-plane
//! `theta_xy` and through-plane `theta_z` — each bounded by a `pi*tanh`
//! output; the slice-position head is a plain ReLU off the LSTM output.
//! Pose vectors are ordered `[theta_x, theta_y, theta_z, z]`.

use ndarray::{array, Array1, ArrayView1};

use super::layers::Dense;
use super::scalar::Real;
use crate::rng::SeedRng;

#[derive(Debug, Clone)]
pub struct PoseHead<F> {
    /// Shared rotation trunk: H -> rot_hidden, tanh.
    pub rot_shared: Dense<F>,
    /// rot_hidden -> 2, pi*tanh.
    pub rot_xy: Dense<F>,
    /// rot_hidden -> 1, pi*tanh.
    pub rot_z: Dense<F>,
    /// H -> 1, ReLU.
    pub slice: Dense<F>,
}

pub struct HeadCache<F> {
    o: Array1<F>,
    /// Shared trunk after tanh.
    s: Array1<F>,
    pose: Array1<F>,
}

impl<F: Real> PoseHead<F> {
    pub fn init(rng: &mut SeedRng, hidden: usize, rot_hidden: usize) -> Self {
        PoseHead {
            rot_shared: Dense::init(rng, rot_hidden, hidden),
            rot_xy: Dense::init(rng, 2, rot_hidden),
            rot_z: Dense::init(rng, 1, rot_hidden),
            slice: Dense::init(rng, 1, hidden),
        }
    }

    /// `o` is an LSTM output of width H; returns `[tx, ty, tz, z]`.
    pub fn forward(&self, o: &ArrayView1<'_, F>) -> (Array1<F>, HeadCache<F>) {
        let pi = F::from_f64(std::f64::consts::PI);
        let s = self.rot_shared.forward(o).mapv(F::tanh);
        let xy = self.rot_xy.forward(&s.view()).mapv(|v| pi * v.tanh());
        let tz = self.rot_z.forward(&s.view()).mapv(|v| pi * v.tanh());
        let zraw = self.slice.forward(o)[0];
        let z = if zraw > F::zero() { zraw } else { F::zero() };
        let pose = array![xy[0], xy[1], tz[0], z];
        let cache = HeadCache {
            o: o.to_owned(),
            s,
            pose: pose.clone(),
        };
        (pose, cache)
    }

    /// Backward from a pose gradient; accumulates into `g`, returns `dL/do`.
    pub fn backward(
        &self,
        cache: &HeadCache<F>,
        dpose: &ArrayView1<'_, F>,
        g: &mut PoseHead<F>,
    ) -> Array1<F> {
        let pi = F::from_f64(std::f64::consts::PI);
        let one = F::one();

        // d(pi*tanh(u))/du = pi - theta^2/pi with theta = pi*tanh(u).
        let dxy_pre = array![
            dpose[0] * (pi - cache.pose[0] * cache.pose[0] / pi),
            dpose[1] * (pi - cache.pose[1] * cache.pose[1] / pi),
        ];
        let dtz_pre = array![dpose[2] * (pi - cache.pose[2] * cache.pose[2] / pi)];
        let mut ds = self.rot_xy.backward(&cache.s.view(), &dxy_pre.view(), &mut g.rot_xy);
        ds += &self.rot_z.backward(&cache.s.view(), &dtz_pre.view(), &mut g.rot_z);
        let ds_pre = ndarray::Zip::from(&ds)
            .and(&cache.s)
            .map_collect(|&d, &s| d * (one - s * s));
        let mut do_ = self
            .rot_shared
            .backward(&cache.o.view(), &ds_pre.view(), &mut g.rot_shared);

        // ReLU: gradient passes only where the head fired.
        let dz_pre = if cache.pose[3] > F::zero() {
            dpose[3]
        } else {
            F::zero()
        };
        do_ += &self
            .slice
            .backward(&cache.o.view(), &array![dz_pre].view(), &mut g.slice);
        do_
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::RngExt;
    use ndarray::Array2;
    use std::f64::consts::PI;

    fn zero_grads(h: &PoseHead<f64>) -> PoseHead<f64> {
        let z = |d: &Dense<f64>| Dense {
            w: Array2::zeros(d.w.dim()),
            b: Array1::zeros(d.b.len()),
        };
        PoseHead {
            rot_shared: z(&h.rot_shared),
            rot_xy: z(&h.rot_xy),
            rot_z: z(&h.rot_z),
            slice: z(&h.slice),
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_pose() {
        let mut rng = rng_from_seed(31);
        let head: PoseHead<f64> = PoseHead::init(&mut rng, 6, 4);
        let o = Array1::zeros(6);
        let (pose, _) = head.forward(&o.view());
        // Biases start at zero, so tanh chains emit 0 and ReLU emits 0.
        for v in pose.iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn outputs_respect_bounds_for_any_input() {
        let mut rng = rng_from_seed(33);
        let head: PoseHead<f64> = PoseHead::init(&mut rng, 6, 4);
        for _ in 0..200 {
            let o = Array1::from_shape_fn(6, |_| rng.random_range(-100.0..100.0));
            let (pose, _) = head.forward(&o.view());
            assert!(pose[0].abs() < PI);
            assert!(pose[1].abs() < PI);
            assert!(pose[2].abs() < PI);
            assert!(pose[3] >= 0.0);
        }
    }

    #[test]
    fn saturated_head_pins_to_pi_with_vanishing_gradient() {
        let mut rng = rng_from_seed(35);
        let mut head: PoseHead<f64> = PoseHead::init(&mut rng, 6, 4);
        // Drive the pi*tanh units deep into saturation.
        head.rot_xy.w.mapv_inplace(|v| v * 1e6);
        head.rot_z.w.mapv_inplace(|v| v * 1e6);
        let o = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let (pose, cache) = head.forward(&o.view());
        for c in 0..3 {
            assert!((pose[c].abs() - PI).abs() < 1e-6, "component {c}: {}", pose[c]);
        }
        let mut g = zero_grads(&head);
        let dpose = array![1.0, 1.0, 1.0, 0.0];
        head.backward(&cache, &dpose.view(), &mut g);
        // Saturated tanh: gradients into the saturated units die out.
        assert!(g.rot_xy.b.iter().all(|v| v.abs() < 1e-6));
        assert!(g.rot_z.b.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from_seed(37);
        let head: PoseHead<f64> = PoseHead::init(&mut rng, 5, 3);
        let o = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let pw = array![0.7, -0.3, 0.5, 0.2];
        let loss = |h: &PoseHead<f64>, o: &Array1<f64>| -> f64 {
            let (p, _) = h.forward(&o.view());
            p.iter().zip(pw.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = head.forward(&o.view());
        let mut g = zero_grads(&head);
        let do_ = head.backward(&cache, &pw.view(), &mut g);

        let eps = 1e-6;
        let check = |analytic: f64, num: f64, what: &str| {
            let rel = (analytic - num).abs() / num.abs().max(1e-8);
            assert!(rel < 1e-6, "{what}: {analytic} vs {num}");
        };
        for idx in [(0usize, 0usize), (1, 2)] {
            let mut hp = head.clone();
            hp.rot_shared.w[idx] += eps;
            let mut hm = head.clone();
            hm.rot_shared.w[idx] -= eps;
            check(
                g.rot_shared.w[idx],
                (loss(&hp, &o) - loss(&hm, &o)) / (2.0 * eps),
                "rot_shared.w",
            );
        }
        for idx in [(0usize, 0usize), (1, 1)] {
            let mut hp = head.clone();
            hp.rot_xy.w[idx] += eps;
            let mut hm = head.clone();
            hm.rot_xy.w[idx] -= eps;
            check(
                g.rot_xy.w[idx],
                (loss(&hp, &o) - loss(&hm, &o)) / (2.0 * eps),
                "rot_xy.w",
            );
        }
        {
            let mut hp = head.clone();
            hp.slice.b[0] += eps;
            let mut hm = head.clone();
            hm.slice.b[0] -= eps;
            check(
                g.slice.b[0],
                (loss(&hp, &o) - loss(&hm, &o)) / (2.0 * eps),
                "slice.b",
            );
        }
        for k in 0..5 {
            let mut op = o.clone();
            op[k] += eps;
            let mut om = o.clone();
            om[k] -= eps;
            check(do_[k], (loss(&head, &op) - loss(&head, &om)) / (2.0 * eps), "do");
        }
    }
}
