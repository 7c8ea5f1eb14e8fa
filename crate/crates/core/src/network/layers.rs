//! Network building blocks with explicit forward caches and hand-written
//! backward passes. Convolution goes through im2col so the inner loop is a
//! matrix multiply.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};
use rand::RngExt;

use super::scalar::Real;
use crate::rng::SeedRng;

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Dense<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Dense<F> {
    /// Xavier-uniform init; `input_scale` shrinks columns whose inputs are
    /// not O(1) (the slice-index channel of pose vectors).
    pub fn init(rng: &mut SeedRng, out: usize, inp: usize) -> Self {
        let bound = (6.0 / (out + inp) as f64).sqrt();
        let w = Array2::from_shape_fn((out, inp), |_| {
            F::from_f64(rng.random_range(-bound..bound))
        });
        Dense {
            w,
            b: Array1::zeros(out),
        }
    }

    pub fn scale_column(&mut self, col: usize, factor: f64) {
        self.w
            .column_mut(col)
            .mapv_inplace(|x| x * F::from_f64(factor));
    }

    pub fn forward(&self, x: &ArrayView1<F>) -> Array1<F> {
        self.w.dot(x) + &self.b
    }

    /// Accumulates parameter gradients into `g`, returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView1<F>, dy: &ArrayView1<F>, g: &mut Dense<F>) -> Array1<F> {
        for r in 0..self.w.nrows() {
            let dyr = dy[r];
            if dyr != F::zero() {
                g.w.row_mut(r).scaled_add(dyr, x);
            }
        }
        g.b += dy;
        self.w.t().dot(dy)
    }
}

/// 3x3 convolution, padding 1, no bias (batch norm follows).
#[derive(Debug, Clone)]
pub struct Conv3x3<F> {
    /// (c_out, c_in, 3, 3)
    pub w: Array4<F>,
}

fn im2col<F: Real>(x: &ArrayView3<'_, F>) -> Array2<F> {
    let (c_in, h, w) = x.dim();
    let mut cols = Array2::<F>::zeros((c_in * 9, h * w));
    for c in 0..c_in {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = c * 9 + ky * 3 + kx;
                let mut dst = cols.row_mut(row);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[y * w + xx] = x[(c, sy as usize, sx as usize)];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<F: Real>(dcols: &Array2<F>, dx: &mut ndarray::ArrayViewMut3<'_, F>) {
    let (c_in, h, w) = dx.dim();
    for c in 0..c_in {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = c * 9 + ky * 3 + kx;
                let src = dcols.row(row);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dx[(c, sy as usize, sx as usize)] =
                            dx[(c, sy as usize, sx as usize)] + src[y * w + xx];
                    }
                }
            }
        }
    }
}

impl<F: Real> Conv3x3<F> {
    /// He fan-in init (PReLU follows).
    pub fn init(rng: &mut SeedRng, c_out: usize, c_in: usize) -> Self {
        let std = (2.0 / (c_in * 9) as f64).sqrt();
        let w = Array4::from_shape_fn((c_out, c_in, 3, 3), |_| {
            F::from_f64(rng.random_range(-2.0..2.0) * std)
        });
        Conv3x3 { w }
    }

    pub fn c_out(&self) -> usize {
        self.w.dim().0
    }

    pub fn c_in(&self) -> usize {
        self.w.dim().1
    }

    /// x: (n, c_in, h, w) -> (n, c_out, h, w)
    pub fn forward(&self, x: &ArrayView4<'_, F>) -> Array4<F> {
        let (n, c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.c_in());
        let c_out = self.c_out();
        let w2 = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * 9))
            .expect("contiguous kernel");
        let mut out = Array4::<F>::zeros((n, c_out, h, w));
        for i in 0..n {
            let cols = im2col(&x.index_axis(Axis(0), i));
            let y2 = w2.dot(&cols);
            out.index_axis_mut(Axis(0), i)
                .assign(&y2.into_shape_with_order((c_out, h, w)).expect("shape"));
        }
        out
    }

    pub fn backward(
        &self,
        x: &ArrayView4<'_, F>,
        dy: &ArrayView4<'_, F>,
        g: &mut Conv3x3<F>,
    ) -> Array4<F> {
        let (n, c_in, h, w) = x.dim();
        let c_out = self.c_out();
        let w2 = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * 9))
            .expect("contiguous kernel");
        let mut dx = Array4::<F>::zeros((n, c_in, h, w));
        let mut gw = Array2::<F>::zeros((c_out, c_in * 9));
        for i in 0..n {
            let cols = im2col(&x.index_axis(Axis(0), i));
            let dy2 = dy
                .index_axis(Axis(0), i)
                .into_shape_with_order((c_out, h * w))
                .expect("contiguous grad");
            gw += &dy2.dot(&cols.t());
            let dcols = w2.t().dot(&dy2);
            col2im_add(&dcols, &mut dx.index_axis_mut(Axis(0), i));
        }
        let mut gview = g
            .w
            .view_mut()
            .into_shape_with_order((c_out, c_in * 9))
            .expect("contiguous grad kernel");
        gview += &gw;
        dx
    }
}

/// Per-channel batch normalization over (batch, height, width).
///
/// The forward pass never mutates the layer: training mode returns the
/// batch statistics so the caller can fold them into the running estimates
/// in a deterministic order after any parallel work.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: F,
    pub momentum: F,
}

pub struct BnCache<F> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct BnBatchStats<F> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

impl<F: Real> BatchNorm2d<F> {
    pub fn init(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: F::from_f64(eps),
            momentum: F::from_f64(momentum),
        }
    }

    pub fn forward_train(&self, x: &ArrayView4<'_, F>) -> (Array4<F>, BnCache<F>, BnBatchStats<F>) {
        let (n, c, h, w) = x.dim();
        let count = F::from_f64((n * h * w) as f64);
        let mut mean = Array1::<F>::zeros(c);
        let mut var = Array1::<F>::zeros(c);
        for ch in 0..c {
            let view = x.index_axis(Axis(1), ch);
            let m = view.iter().fold(F::zero(), |a, &b| a + b) / count;
            let v = view
                .iter()
                .fold(F::zero(), |a, &b| a + (b - m) * (b - m))
                / count;
            mean[ch] = m;
            var[ch] = v;
        }
        let inv_std = var.mapv(|v| F::one() / (v + self.eps).sqrt());
        let mut xhat = Array4::<F>::zeros((n, c, h, w));
        let mut y = Array4::<F>::zeros((n, c, h, w));
        for ch in 0..c {
            let (m, is, g, b) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
            let src = x.index_axis(Axis(1), ch);
            let mut xh = xhat.index_axis_mut(Axis(1), ch);
            let mut yy = y.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut xh).and(&mut yy).and(&src).for_each(
                |xh, yy, &s| {
                    *xh = (s - m) * is;
                    *yy = g * *xh + b;
                },
            );
        }
        (
            y,
            BnCache { xhat, inv_std },
            BnBatchStats { mean, var },
        )
    }

    pub fn forward_eval(&self, x: &ArrayView4<'_, F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let mut y = Array4::<F>::zeros((n, c, h, w));
        for ch in 0..c {
            let is = F::one() / (self.running_var[ch] + self.eps).sqrt();
            let (m, g, b) = (self.running_mean[ch], self.gamma[ch], self.beta[ch]);
            let src = x.index_axis(Axis(1), ch);
            let mut yy = y.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut yy)
                .and(&src)
                .for_each(|yy, &s| *yy = g * (s - m) * is + b);
        }
        y
    }

    pub fn backward(
        &self,
        cache: &BnCache<F>,
        dy: &ArrayView4<'_, F>,
        g: &mut BatchNorm2d<F>,
    ) -> Array4<F> {
        let (n, c, h, w) = dy.dim();
        let count = F::from_f64((n * h * w) as f64);
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        for ch in 0..c {
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let dyc = dy.index_axis(Axis(1), ch);
            let mut s1 = F::zero(); // sum of dxhat
            let mut s2 = F::zero(); // sum of dxhat * xhat
            let mut dg = F::zero();
            let mut db = F::zero();
            let gamma = self.gamma[ch];
            for (&d, &x) in dyc.iter().zip(xh.iter()) {
                let dxh = d * gamma;
                s1 = s1 + dxh;
                s2 = s2 + dxh * x;
                dg = dg + d * x;
                db = db + d;
            }
            g.gamma[ch] = g.gamma[ch] + dg;
            g.beta[ch] = g.beta[ch] + db;
            let is = cache.inv_std[ch];
            let mut dxc = dx.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut dxc).and(&dyc).and(&xh).for_each(
                |o, &d, &x| {
                    let dxh = d * gamma;
                    *o = is / count * (count * dxh - s1 - x * s2);
                },
            );
        }
        dx
    }

    /// Fold one batch's statistics into the running estimates.
    pub fn apply_stats(&mut self, stats: &BnBatchStats<F>) {
        let m = self.momentum;
        let om = F::one() - m;
        ndarray::Zip::from(&mut self.running_mean)
            .and(&stats.mean)
            .for_each(|r, &b| *r = om * *r + m * b);
        ndarray::Zip::from(&mut self.running_var)
            .and(&stats.var)
            .for_each(|r, &b| *r = om * *r + m * b);
    }
}

/// Per-channel parametric ReLU.
#[derive(Debug, Clone)]
pub struct PRelu<F> {
    pub a: Array1<F>,
}

impl<F: Real> PRelu<F> {
    pub fn init(channels: usize, slope: f64) -> Self {
        PRelu {
            a: Array1::from_elem(channels, F::from_f64(slope)),
        }
    }

    pub fn forward(&self, x: &ArrayView4<'_, F>) -> Array4<F> {
        let mut y = x.to_owned();
        for ch in 0..self.a.len() {
            let a = self.a[ch];
            y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| {
                if v > F::zero() {
                    v
                } else {
                    a * v
                }
            });
        }
        y
    }

    pub fn backward(
        &self,
        x: &ArrayView4<'_, F>,
        dy: &ArrayView4<'_, F>,
        g: &mut PRelu<F>,
    ) -> Array4<F> {
        let mut dx = Array4::<F>::zeros(x.dim());
        for ch in 0..self.a.len() {
            let a = self.a[ch];
            let mut da = F::zero();
            let xc = x.index_axis(Axis(1), ch);
            let dyc = dy.index_axis(Axis(1), ch);
            let mut dxc = dx.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut dxc).and(&xc).and(&dyc).for_each(
                |o, &xv, &d| {
                    if xv > F::zero() {
                        *o = d;
                    } else {
                        *o = d * a;
                        da = da + d * xv;
                    }
                },
            );
            g.a[ch] = g.a[ch] + da;
        }
        dx
    }
}

/// 2x2 max pooling, stride 2. Stateless; the cache records which of the
/// four corners won.
pub struct PoolCache {
    pub argmax: Array4<u8>,
    pub in_dim: (usize, usize, usize, usize),
}

pub fn maxpool2_forward<F: Real>(x: &ArrayView4<'_, F>) -> (Array4<F>, PoolCache) {
    let (n, c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array4::<F>::zeros((n, c, ho, wo));
    let mut argmax = Array4::<u8>::zeros((n, c, ho, wo));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = x[(i, ch, 2 * oy, 2 * ox)];
                    let mut arg = 0u8;
                    for (k, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = x[(i, ch, 2 * oy + dy, 2 * ox + dx)];
                        if v > best {
                            best = v;
                            arg = k as u8 + 1;
                        }
                    }
                    y[(i, ch, oy, ox)] = best;
                    argmax[(i, ch, oy, ox)] = arg;
                }
            }
        }
    }
    (y, PoolCache { argmax, in_dim: (n, c, h, w) })
}

pub fn maxpool2_backward<F: Real>(cache: &PoolCache, dy: &ArrayView4<'_, F>) -> Array4<F> {
    let mut dx = Array4::<F>::zeros(cache.in_dim);
    let (n, c, ho, wo) = dy.dim();
    const OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let (ry, rx) = OFFSETS[cache.argmax[(i, ch, oy, ox)] as usize];
                    dx[(i, ch, 2 * oy + ry, 2 * ox + rx)] = dy[(i, ch, oy, ox)];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::{ArrayD, IxDyn};

    /// Scalar objective for gradient checks: sum of outputs weighted by a
    /// fixed pseudorandom pattern, so every output element matters.
    fn probe_weights(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = rng_from_seed(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        assert!(
            rel < tol,
            "{what}: analytic {analytic:.9e} vs numeric {numeric:.9e} (rel {rel:.2e})"
        );
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(1);
        let layer: Dense<f64> = Dense::init(&mut rng, 5, 7);
        let x = Array1::from_shape_fn(7, |_| rng.random_range(-1.0..1.0));
        let pw = probe_weights(&[5], 2);
        let loss = |l: &Dense<f64>, x: &Array1<f64>| -> f64 {
            l.forward(&x.view())
                .iter()
                .zip(pw.iter())
                .map(|(y, w)| y * w)
                .sum()
        };
        let mut g = Dense {
            w: Array2::zeros((5, 7)),
            b: Array1::zeros(5),
        };
        let dy = Array1::from_iter(pw.iter().copied());
        let dx = layer.backward(&x.view(), &dy.view(), &mut g);

        let eps = 1e-6;
        for idx in [(0usize, 0usize), (2, 3), (4, 6)] {
            let mut lp = layer.clone();
            lp.w[idx] += eps;
            let mut lm = layer.clone();
            lm.w[idx] -= eps;
            let num = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
            assert_close(g.w[idx], num, 1e-7, "dense w");
        }
        for i in 0..7 {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let num = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps);
            assert_close(dx[i], num, 1e-7, "dense dx");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(3);
        let conv: Conv3x3<f64> = Conv3x3::init(&mut rng, 3, 2);
        let x = Array4::from_shape_fn((2, 2, 4, 4), |_| rng.random_range(-1.0..1.0));
        let pw = probe_weights(&[2, 3, 4, 4], 4);
        let loss = |c: &Conv3x3<f64>, x: &Array4<f64>| -> f64 {
            c.forward(&x.view())
                .iter()
                .zip(pw.iter())
                .map(|(y, w)| y * w)
                .sum()
        };
        let mut g = Conv3x3 {
            w: Array4::zeros((3, 2, 3, 3)),
        };
        let dy = Array4::from_shape_fn((2, 3, 4, 4), |i| pw[[i.0, i.1, i.2, i.3]]);
        let dx = conv.backward(&x.view(), &dy.view(), &mut g);

        let eps = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (2, 0, 1, 0)] {
            let mut cp = conv.clone();
            cp.w[idx] += eps;
            let mut cm = conv.clone();
            cm.w[idx] -= eps;
            let num = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps);
            assert_close(g.w[idx], num, 1e-6, "conv w");
        }
        for idx in [(0, 0, 0, 0), (1, 1, 3, 3), (0, 1, 2, 1)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let num = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
            assert_close(dx[idx], num, 1e-6, "conv dx");
        }
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(5);
        let mut bn: BatchNorm2d<f64> = BatchNorm2d::init(3, 1e-5, 0.1);
        bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let x = Array4::from_shape_fn((2, 3, 4, 4), |_| rng.random_range(-2.0..2.0));
        let pw = probe_weights(&[2, 3, 4, 4], 6);
        let loss = |b: &BatchNorm2d<f64>, x: &Array4<f64>| -> f64 {
            b.forward_train(&x.view())
                .0
                .iter()
                .zip(pw.iter())
                .map(|(y, w)| y * w)
                .sum()
        };
        let (_, cache, _) = bn.forward_train(&x.view());
        let mut g = BatchNorm2d::init(3, 1e-5, 0.1);
        g.gamma.fill(0.0);
        let dy = Array4::from_shape_fn((2, 3, 4, 4), |i| pw[[i.0, i.1, i.2, i.3]]);
        let dx = bn.backward(&cache, &dy.view(), &mut g);

        let eps = 1e-6;
        for ch in 0..3 {
            let mut bp = bn.clone();
            bp.gamma[ch] += eps;
            let mut bm = bn.clone();
            bm.gamma[ch] -= eps;
            let num = (loss(&bp, &x) - loss(&bm, &x)) / (2.0 * eps);
            assert_close(g.gamma[ch], num, 1e-6, "bn gamma");

            let mut bp = bn.clone();
            bp.beta[ch] += eps;
            let mut bm = bn.clone();
            bm.beta[ch] -= eps;
            let num = (loss(&bp, &x) - loss(&bm, &x)) / (2.0 * eps);
            assert_close(g.beta[ch], num, 1e-6, "bn beta");
        }
        for idx in [(0, 0, 0, 0), (1, 2, 3, 3), (0, 1, 2, 1)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let num = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * eps);
            assert_close(dx[idx], num, 1e-5, "bn dx");
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn: BatchNorm2d<f64> = BatchNorm2d::init(1, 1e-5, 0.1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0;
        let x = Array4::from_elem((1, 1, 2, 2), 4.0);
        let y = bn.forward_eval(&x.view());
        // (4 - 2) / sqrt(4 + eps) ~= 1
        assert!((y[(0, 0, 0, 0)] - 1.0).abs() < 1e-5);
        // All-zero input stays finite.
        let z = Array4::from_elem((1, 1, 2, 2), 0.0);
        let y = bn.forward_eval(&z.view());
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn prelu_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(7);
        let prelu: PRelu<f64> = PRelu::init(2, 0.25);
        let x = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.random_range(-1.0..1.0));
        let pw = probe_weights(&[2, 2, 3, 3], 8);
        let loss = |p: &PRelu<f64>, x: &Array4<f64>| -> f64 {
            p.forward(&x.view())
                .iter()
                .zip(pw.iter())
                .map(|(y, w)| y * w)
                .sum()
        };
        let mut g = PRelu { a: Array1::zeros(2) };
        let dy = Array4::from_shape_fn((2, 2, 3, 3), |i| pw[[i.0, i.1, i.2, i.3]]);
        let dx = prelu.backward(&x.view(), &dy.view(), &mut g);
        let eps = 1e-6;
        for ch in 0..2 {
            let mut pp = prelu.clone();
            pp.a[ch] += eps;
            let mut pm = prelu.clone();
            pm.a[ch] -= eps;
            let num = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * eps);
            assert_close(g.a[ch], num, 1e-6, "prelu a");
        }
        for idx in [(0, 0, 0, 0), (1, 1, 2, 2)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let num = (loss(&prelu, &xp) - loss(&prelu, &xm)) / (2.0 * eps);
            assert_close(dx[idx], num, 1e-6, "prelu dx");
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut x = Array4::<f64>::zeros((1, 1, 4, 4));
        x[(0, 0, 0, 1)] = 3.0;
        x[(0, 0, 2, 2)] = 5.0;
        x[(0, 0, 3, 3)] = 1.0;
        let (y, cache) = maxpool2_forward(&x.view());
        assert_eq!(y[(0, 0, 0, 0)], 3.0);
        assert_eq!(y[(0, 0, 1, 1)], 5.0);
        let mut dy = Array4::<f64>::zeros((1, 1, 2, 2));
        dy[(0, 0, 0, 0)] = 1.0;
        dy[(0, 0, 1, 1)] = 2.0;
        let dx = maxpool2_backward(&cache, &dy.view());
        assert_eq!(dx[(0, 0, 0, 1)], 1.0);
        assert_eq!(dx[(0, 0, 2, 2)], 2.0);
        assert_eq!(dx.iter().filter(|&&v| v != 0.0).count(), 2);
    }
}
