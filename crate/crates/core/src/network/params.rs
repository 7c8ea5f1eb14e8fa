//! Uniform access to model parameters.
//!
//! Every parameter container enumerates its arrays in a fixed order under
//! stable names. The optimizer, the checkpoint format, and the
//! finite-difference harness all run off this one enumeration, so they can
//! never disagree about what a model's parameters are.

use ndarray::{ArrayViewD, ArrayViewMutD};

use super::scalar::Real;

pub trait ParamSet<F: Real>: Clone {
    /// Trainable parameters, fixed order.
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, F>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>));

    /// Non-trainable state (batch-norm running statistics). Saved in
    /// checkpoints, ignored by optimizers.
    fn visit_state(&self, _f: &mut dyn FnMut(&str, ArrayViewD<'_, F>)) {}
    fn visit_state_mut(&mut self, _f: &mut dyn FnMut(&str, ArrayViewMutD<'_, F>)) {}
}

pub fn num_params<F: Real, P: ParamSet<F>>(p: &P) -> usize {
    let mut n = 0;
    p.visit(&mut |_, v| n += v.len());
    n
}

/// Clone with all trainable parameters and state zeroed (gradient /
/// optimizer accumulators).
pub fn zeroed<F: Real, P: ParamSet<F>>(p: &P) -> P {
    let mut out = p.clone();
    out.visit_mut(&mut |_, mut v| v.fill(F::zero()));
    out.visit_state_mut(&mut |_, mut v| v.fill(F::zero()));
    out
}

/// dst += a * src over trainable parameters.
pub fn axpy<F: Real, P: ParamSet<F>>(dst: &mut P, a: F, src: &P) {
    let mut flat: Vec<F> = Vec::new();
    src.visit(&mut |_, v| flat.extend(v.iter().copied()));
    let mut pos = 0;
    dst.visit_mut(&mut |_, mut v| {
        for x in v.iter_mut() {
            *x = *x + a * flat[pos];
            pos += 1;
        }
    });
    debug_assert_eq!(pos, flat.len());
}

pub fn scale<F: Real, P: ParamSet<F>>(p: &mut P, a: F) {
    p.visit_mut(&mut |_, mut v| v.mapv_inplace(|x| x * a));
}

/// Flattened read of a single trainable scalar (finite-difference probe).
pub fn get_flat<F: Real, P: ParamSet<F>>(p: &P, idx: usize) -> F {
    let mut pos = 0;
    let mut out = None;
    p.visit(&mut |_, v| {
        if out.is_none() && idx < pos + v.len() {
            out = Some(*v.iter().nth(idx - pos).unwrap());
        }
        pos += v.len();
    });
    out.expect("flat index in range")
}

pub fn add_flat<F: Real, P: ParamSet<F>>(p: &mut P, idx: usize, delta: F) {
    let mut pos = 0;
    let mut done = false;
    p.visit_mut(&mut |_, mut v| {
        if !done && idx < pos + v.len() {
            let x = v.iter_mut().nth(idx - pos).unwrap();
            *x = *x + delta;
            done = true;
        }
        pos += v.len();
    });
    assert!(done, "flat index out of range");
}

/// True if any trainable parameter is non-finite.
pub fn any_non_finite<F: Real, P: ParamSet<F>>(p: &P) -> bool {
    let mut bad = false;
    p.visit(&mut |_, v| bad |= v.iter().any(|x| !x.is_finite()));
    bad
}
