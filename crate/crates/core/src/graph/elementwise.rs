//! Elementwise ops. Binary ops broadcast the right-hand side: every rhs
//! dim must equal the lhs dim or be 1 (bias vectors, per-channel gates,
//! scalars, strip-pooled maps).

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Apply `f(a, b)` with `b` broadcast against `a`'s shape.
pub(crate) fn broadcast_zip<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let sa = a.shape();
    let sb = b.shape();
    if sa == sb {
        return a.zip(b, f);
    }
    assert!(
        sa.broadcasts_from(&sb),
        "shape {} cannot broadcast against {}",
        sb,
        sa
    );
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(sa.len());
    // rhs strides with 0 on broadcast dims
    let stride_n = if sb.n == 1 { 0 } else { sb.c * sb.h * sb.w };
    let stride_c = if sb.c == 1 { 0 } else { sb.h * sb.w };
    let stride_h = if sb.h == 1 { 0 } else { sb.w };
    let stride_w = usize::from(sb.w != 1);
    let mut i = 0;
    for n in 0..sa.n {
        for c in 0..sa.c {
            for y in 0..sa.h {
                let base = n * stride_n + c * stride_c + y * stride_h;
                for x in 0..sa.w {
                    out.push(f(ad[i], bd[base + x * stride_w]));
                    i += 1;
                }
            }
        }
    }
    Tensor::new(sa, out)
}

/// Sum `t` down to `target` (dims where target is 1 are reduced).
pub(crate) fn reduce_to_shape<T: Scalar>(t: &Tensor<T>, target: Shape) -> Tensor<T> {
    let s = t.shape();
    if s == target {
        return t.clone();
    }
    assert!(
        s.broadcasts_from(&target),
        "cannot reduce {} to {}",
        s,
        target
    );
    let mut out = vec![T::zero(); target.len()];
    let td = t.data();
    let stride_n = if target.n == 1 { 0 } else { target.c * target.h * target.w };
    let stride_c = if target.c == 1 { 0 } else { target.h * target.w };
    let stride_h = if target.h == 1 { 0 } else { target.w };
    let stride_w = usize::from(target.w != 1);
    let mut i = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                let base = n * stride_n + c * stride_c + y * stride_h;
                for x in 0..s.w {
                    out[base + x * stride_w] += td[i];
                    i += 1;
                }
            }
        }
    }
    Tensor::new(target, out)
}

enum BinKind {
    Add,
    Sub,
    Mul,
}

struct BinaryGrad {
    kind: BinKind,
}

impl<T: Scalar> GradFn<T> for BinaryGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let a = ctx.input(0);
        let b = ctx.input(1);
        match self.kind {
            BinKind::Add => {
                let ga = needs[0].then(|| grad_out.clone());
                let gb = needs[1].then(|| reduce_to_shape(grad_out, b.shape()));
                vec![ga, gb]
            }
            BinKind::Sub => {
                let ga = needs[0].then(|| grad_out.clone());
                let gb = needs[1]
                    .then(|| reduce_to_shape(&grad_out.map(|v| -v), b.shape()));
                vec![ga, gb]
            }
            BinKind::Mul => {
                let ga = needs[0].then(|| broadcast_zip(grad_out, b, |g, bv| g * bv));
                let gb = needs[1].then(|| {
                    let full = grad_out.zip(a, |g, av| g * av);
                    reduce_to_shape(&full, b.shape())
                });
                vec![ga, gb]
            }
        }
    }
}

/// Unary elementwise op; `dfdx(x, y)` is the local derivative given the
/// input and output values.
struct UnaryGrad<T: Scalar> {
    dfdx: Box<dyn Fn(T, T) -> T + Send + Sync>,
}

impl<T: Scalar> GradFn<T> for UnaryGrad<T> {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        let y = ctx.output();
        let mut gx = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            gx.push(grad_out.data()[i] * (self.dfdx)(x.data()[i], y.data()[i]));
        }
        vec![Some(Tensor::new(x.shape(), gx))]
    }
}

// sqrt(2/pi) for the tanh GELU approximation
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044715;

fn gelu_val<T: Scalar>(x: T) -> T {
    let c = T::of_f64(GELU_C);
    let a = T::of_f64(GELU_A);
    let half = T::of_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of_f64(GELU_C);
    let a = T::of_f64(GELU_A);
    let half = T::of_f64(0.5);
    let three = T::of_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

fn sigmoid_val<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    fn binary(&mut self, a: NodeId, b: NodeId, kind: BinKind) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        match kind {
            BinKind::Add => broadcast_zip(av, bv, |x, y| x + y),
            BinKind::Sub => broadcast_zip(av, bv, |x, y| x - y),
            BinKind::Mul => broadcast_zip(av, bv, |x, y| x * y),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary(a, b, BinKind::Add);
        self.push_op(v, vec![a, b], Box::new(BinaryGrad { kind: BinKind::Add }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary(a, b, BinKind::Sub);
        self.push_op(v, vec![a, b], Box::new(BinaryGrad { kind: BinKind::Sub }))
    }

    /// Hadamard product (rhs may broadcast).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary(a, b, BinKind::Mul);
        self.push_op(v, vec![a, b], Box::new(BinaryGrad { kind: BinKind::Mul }))
    }

    fn unary(
        &mut self,
        x: NodeId,
        f: impl Fn(T) -> T,
        dfdx: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> NodeId {
        let v = self.value(x).map(f);
        self.push_op(v, vec![x], Box::new(UnaryGrad { dfdx: Box::new(dfdx) }))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let kk = T::of_f64(k);
        self.unary(x, move |v| v * kk, move |_, _| kk)
    }

    pub fn add_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        let kk = T::of_f64(k);
        self.unary(x, move |v| v + kk, |_, _| T::one())
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| v.abs(),
            |xv, _| {
                if xv > T::zero() {
                    T::one()
                } else if xv < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| v.max(T::zero()),
            |xv, _| if xv > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, gelu_val, |xv, _| gelu_grad(xv))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid_val, |_, yv| yv * (T::one() - yv))
    }

    /// 1/x (denominators are kept positive by construction).
    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| T::one() / v, |xv, _| -T::one() / (xv * xv))
    }

    /// Clamp to [0, 1]; used on the inference path only.
    pub fn clamp01(&mut self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| v.max(T::zero()).min(T::one()),
            |xv, _| {
                if xv >= T::zero() && xv <= T::one() {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }
}
