//! Layer normalization (over the channel axis) and softmax.

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

pub(crate) const LN_EPS: f64 = 1e-5;

struct LayerNormGrad {
    eps: f64,
}

/// Iterate positions (n, y, x); the channel axis is strided by h*w.
fn ln_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let plane = s.h * s.w;
    let positions = s.n * plane;
    let mut mean = vec![T::zero(); positions];
    let mut inv_std = vec![T::zero(); positions];
    let cf = T::of_f64(s.c as f64);
    for n in 0..s.n {
        for p in 0..plane {
            let mut m = T::zero();
            for c in 0..s.c {
                m += x.data()[(n * s.c + c) * plane + p];
            }
            m = m / cf;
            let mut v = T::zero();
            for c in 0..s.c {
                let d = x.data()[(n * s.c + c) * plane + p] - m;
                v += d * d;
            }
            v = v / cf;
            mean[n * plane + p] = m;
            inv_std[n * plane + p] = T::one() / (v + eps).sqrt();
        }
    }
    (mean, inv_std)
}

impl<T: Scalar> GradFn<T> for LayerNormGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        let gamma = ctx.input(1);
        let s = x.shape();
        let plane = s.h * s.w;
        let cf = T::of_f64(s.c as f64);
        let (mean, inv_std) = ln_stats(x, T::of_f64(self.eps));

        let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut ggamma = needs[1].then(|| vec![T::zero(); s.c]);
        let mut gbeta = needs[2].then(|| vec![T::zero(); s.c]);

        for n in 0..s.n {
            for p in 0..plane {
                let m = mean[n * plane + p];
                let is = inv_std[n * plane + p];
                // h = gamma * gy per channel; need mean(h) and mean(h * xhat)
                let mut mean_h = T::zero();
                let mut mean_hx = T::zero();
                for c in 0..s.c {
                    let i = (n * s.c + c) * plane + p;
                    let xhat = (x.data()[i] - m) * is;
                    let h = gamma.data()[c] * grad_out.data()[i];
                    mean_h += h;
                    mean_hx += h * xhat;
                    if let Some(gg) = ggamma.as_mut() {
                        gg[c] += grad_out.data()[i] * xhat;
                    }
                    if let Some(gb) = gbeta.as_mut() {
                        gb[c] += grad_out.data()[i];
                    }
                }
                mean_h = mean_h / cf;
                mean_hx = mean_hx / cf;
                if let Some(gx) = gx.as_mut() {
                    for c in 0..s.c {
                        let i = (n * s.c + c) * plane + p;
                        let xhat = (x.data()[i] - m) * is;
                        let h = gamma.data()[c] * grad_out.data()[i];
                        gx[i] = (h - mean_h - xhat * mean_hx) * is;
                    }
                }
            }
        }

        vec![
            gx.map(|v| Tensor::new(s, v)),
            ggamma.map(|v| Tensor::new(Shape::new(1, s.c, 1, 1), v)),
            gbeta.map(|v| Tensor::new(Shape::new(1, s.c, 1, 1), v)),
        ]
    }
}

struct SoftmaxGrad {
    axis: usize,
}

fn axis_strides(s: Shape, axis: usize) -> (usize, usize, usize) {
    let d = s.dims();
    let len = d[axis];
    let inner: usize = d[axis + 1..].iter().product();
    let outer: usize = d[..axis].iter().product();
    (outer, len, inner)
}

impl<T: Scalar> GradFn<T> for SoftmaxGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let y = ctx.output();
        let s = y.shape();
        let (outer, len, inner) = axis_strides(s, self.axis);
        let mut gx = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut dot = T::zero();
                for k in 0..len {
                    let idx = base + k * inner;
                    dot += grad_out.data()[idx] * y.data()[idx];
                }
                for k in 0..len {
                    let idx = base + k * inner;
                    gx[idx] = y.data()[idx] * (grad_out.data()[idx] - dot);
                }
            }
        }
        vec![Some(Tensor::new(s, gx))]
    }
}

impl<T: Scalar> Graph<T> {
    /// Per-position normalization over the channel axis followed by the
    /// (gamma, beta) affine. Epsilon sits inside the square root, so a
    /// constant input maps to beta exactly.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let s = self.shape(x);
        assert!(s.c >= 1, "layer_norm: empty channel axis");
        let gs = self.shape(gamma);
        assert_eq!(gs, Shape::new(1, s.c, 1, 1), "layer_norm: gamma shape mismatch");
        assert_eq!(
            self.shape(beta),
            gs,
            "layer_norm: beta shape mismatch"
        );
        let eps = T::of_f64(LN_EPS);
        let (mean, inv_std) = ln_stats(self.value(x), eps);
        let plane = s.h * s.w;
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut out = vec![T::zero(); s.len()];
        for n in 0..s.n {
            for c in 0..s.c {
                for p in 0..plane {
                    let i = (n * s.c + c) * plane + p;
                    let xhat = (xv.data()[i] - mean[n * plane + p]) * inv_std[n * plane + p];
                    out[i] = gv.data()[c] * xhat + bv.data()[c];
                }
            }
        }
        self.push_op(
            Tensor::new(s, out),
            vec![x, gamma, beta],
            Box::new(LayerNormGrad { eps: LN_EPS }),
        )
    }

    /// Numerically stable softmax along `axis` (0..4 in NCHW order).
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        assert!(axis < 4, "softmax: axis {} out of range", axis);
        let xv = self.value(x);
        let s = xv.shape();
        let (outer, len, inner) = axis_strides(s, axis);
        let mut out = vec![T::zero(); s.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for k in 0..len {
                    mx = mx.max(xv.data()[base + k * inner]);
                }
                let mut z = T::zero();
                for k in 0..len {
                    let e = (xv.data()[base + k * inner] - mx).exp();
                    out[base + k * inner] = e;
                    z += e;
                }
                for k in 0..len {
                    out[base + k * inner] = out[base + k * inner] / z;
                }
            }
        }
        self.push_op(Tensor::new(s, out), vec![x], Box::new(SoftmaxGrad { axis }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::full(Shape::new(1, 8, 2, 2), 3.7));
        let gamma = g.constant(Tensor::full(Shape::new(1, 8, 1, 1), 1.0));
        let beta = g.constant(Tensor::zeros(Shape::new(1, 8, 1, 1)));
        let y = g.layer_norm(x, gamma, beta);
        assert!(g.value(y).max_abs() < 1e-9);
    }

    #[test]
    fn normalized_mean_and_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let s = Shape::new(2, 16, 3, 3);
        let x = g.var(Tensor::rand_uniform(s, -2.0, 2.0, &mut rng));
        let gamma = g.constant(Tensor::full(Shape::new(1, 16, 1, 1), 1.0));
        let beta = g.constant(Tensor::zeros(Shape::new(1, 16, 1, 1)));
        let y = g.layer_norm(x, gamma, beta);
        let yv = g.value(y);
        let plane = 9;
        for n in 0..2 {
            for p in 0..plane {
                let mut m = 0.0;
                let mut v = 0.0;
                for c in 0..16 {
                    m += yv.data()[(n * 16 + c) * plane + p];
                }
                m /= 16.0;
                for c in 0..16 {
                    let d = yv.data()[(n * 16 + c) * plane + p] - m;
                    v += d * d;
                }
                v /= 16.0;
                assert!(m.abs() < 1e-6, "post-norm mean {}", m);
                assert!((v - 1.0).abs() < 1e-4, "post-norm variance {}", v);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_uniform_logits() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::full(Shape::new(1, 1, 1, 5), 0.3));
        let y = g.softmax(x, 3);
        for &v in g.value(y).data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let logits = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 1, 7), -3.0, 3.0, &mut rng);
        let mut g = Graph::<f64>::new();
        let a = g.constant(logits.clone());
        let b = g.constant(logits.map(|v| v + 123.456));
        let sa = g.softmax(a, 3);
        let sb = g.softmax(b, 3);
        assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-12);
    }
}
