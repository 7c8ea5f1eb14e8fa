//! Single LSTM cell with explicit step caches for backpropagation through
//! time.
//!
//! Gates follow the standard formulation: `i, f, o = sigmoid(W x + U h + b)`
//! blockwise, candidate `g = tanh(...)`, `c = f*c_prev + i*g`,
//! `h = o * tanh(c)`. Weight layout stacks the four gate blocks
//! `[i, f, o, g]` along the output axis.

use ndarray::{Array1, Array2, ArrayView1};
use rand::RngExt;

use super::scalar::Real;
use crate::rng::SeedRng;

#[derive(Debug, Clone)]
pub struct LstmCell<F> {
    /// (4H, input) — input connections.
    pub w_x: Array2<F>,
    /// (4H, H) — recurrent connections.
    pub w_h: Array2<F>,
    /// (4H,)
    pub b: Array1<F>,
}

pub struct LstmStepCache<F> {
    pub x: Array1<F>,
    pub h_prev: Array1<F>,
    pub c_prev: Array1<F>,
    pub i: Array1<F>,
    pub f: Array1<F>,
    pub o: Array1<F>,
    pub g: Array1<F>,
    pub tanh_c: Array1<F>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Real> LstmCell<F> {
    /// Uniform +-1/sqrt(H) init with the forget-gate bias lifted to +1.
    pub fn init(rng: &mut SeedRng, hidden: usize, input: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_x = Array2::from_shape_fn((4 * hidden, input), |_| {
            F::from_f64(rng.random_range(-bound..bound))
        });
        let w_h = Array2::from_shape_fn((4 * hidden, hidden), |_| {
            F::from_f64(rng.random_range(-bound..bound))
        });
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(ndarray::s![hidden..2 * hidden]).fill(F::one());
        LstmCell { w_x, w_h, b }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.dim().1
    }

    pub fn input(&self) -> usize {
        self.w_x.dim().1
    }

    pub fn step(
        &self,
        x: &ArrayView1<'_, F>,
        h_prev: &Array1<F>,
        c_prev: &Array1<F>,
    ) -> (Array1<F>, Array1<F>, LstmStepCache<F>) {
        let hsz = self.hidden();
        let a = self.w_x.dot(x) + self.w_h.dot(h_prev) + &self.b;
        let mut i = Array1::zeros(hsz);
        let mut f = Array1::zeros(hsz);
        let mut o = Array1::zeros(hsz);
        let mut g = Array1::zeros(hsz);
        for k in 0..hsz {
            i[k] = sigmoid(a[k]);
            f[k] = sigmoid(a[hsz + k]);
            o[k] = sigmoid(a[2 * hsz + k]);
            g[k] = a[3 * hsz + k].tanh();
        }
        let c = &f * c_prev + &i * &g;
        let tanh_c = c.mapv(F::tanh);
        let h = &o * &tanh_c;
        let cache = LstmStepCache {
            x: x.to_owned(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            o,
            g,
            tanh_c,
        };
        (h, c, cache)
    }

    /// One BPTT step. `dh`/`dc` are the total gradients flowing into this
    /// step's outputs; returns `(dx, dh_prev, dc_prev)` and accumulates
    /// parameter gradients into `g`.
    pub fn backward_step(
        &self,
        cache: &LstmStepCache<F>,
        dh: &Array1<F>,
        dc: &Array1<F>,
        grads: &mut LstmCell<F>,
    ) -> (Array1<F>, Array1<F>, Array1<F>) {
        let hsz = self.hidden();
        let one = F::one();
        // Through h = o * tanh(c).
        let do_ = dh * &cache.tanh_c;
        let dtanh = dh * &cache.o;
        let mut dc_total =
            dc + &(&dtanh * &cache.tanh_c.mapv(|t| one - t * t));
        let di = &dc_total * &cache.g;
        let df = &dc_total * &cache.c_prev;
        let dg = &dc_total * &cache.i;
        dc_total = &dc_total * &cache.f; // becomes dc_prev

        let mut da = Array1::<F>::zeros(4 * hsz);
        for k in 0..hsz {
            da[k] = di[k] * cache.i[k] * (one - cache.i[k]);
            da[hsz + k] = df[k] * cache.f[k] * (one - cache.f[k]);
            da[2 * hsz + k] = do_[k] * cache.o[k] * (one - cache.o[k]);
            da[3 * hsz + k] = dg[k] * (one - cache.g[k] * cache.g[k]);
        }

        for r in 0..4 * hsz {
            let d = da[r];
            if d != F::zero() {
                grads.w_x.row_mut(r).scaled_add(d, &cache.x);
                grads.w_h.row_mut(r).scaled_add(d, &cache.h_prev);
            }
        }
        grads.b += &da;

        let dx = self.w_x.t().dot(&da);
        let dh_prev = self.w_h.t().dot(&da);
        (dx, dh_prev, dc_total)
    }
}
