//! Affine maps and batched matrix products for the attention blocks.

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

struct LinearGrad {
    has_bias: bool,
}

impl<T: Scalar> GradFn<T> for LinearGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        let w = ctx.input(1);
        let (m, din) = (x.shape().n, x.shape().c);
        let dout = w.shape().c;

        // gx (m, din) = gy (m, dout) * w^T (dout, din)
        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); m * din];
            unsafe {
                T::gemm(
                    m,
                    dout,
                    din,
                    T::one(),
                    grad_out.data().as_ptr(),
                    dout as isize,
                    1,
                    w.data().as_ptr(),
                    1,
                    dout as isize,
                    T::zero(),
                    gx.as_mut_ptr(),
                    din as isize,
                    1,
                );
            }
            Tensor::new(x.shape(), gx)
        });

        // gw (din, dout) = x^T (din, m) * gy (m, dout)
        let gw = needs[1].then(|| {
            let mut gw = vec![T::zero(); din * dout];
            unsafe {
                T::gemm(
                    din,
                    m,
                    dout,
                    T::one(),
                    x.data().as_ptr(),
                    1,
                    din as isize,
                    grad_out.data().as_ptr(),
                    dout as isize,
                    1,
                    T::zero(),
                    gw.as_mut_ptr(),
                    dout as isize,
                    1,
                );
            }
            Tensor::new(w.shape(), gw)
        });

        let gb = (self.has_bias && needs[2]).then(|| {
            let mut gb = vec![T::zero(); dout];
            for r in 0..m {
                for c in 0..dout {
                    gb[c] += grad_out.data()[r * dout + c];
                }
            }
            Tensor::new(Shape::new(1, dout, 1, 1), gb)
        });

        if self.has_bias {
            vec![gx, gw, gb]
        } else {
            vec![gx, gw]
        }
    }
}

/// Batched matmul; `trans_b` selects y = a * b^T per group.
struct BmmGrad {
    trans_b: bool,
}

fn bmm_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Tensor<T> {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa.n, sb.n, "bmm: group counts differ: {} vs {}", sa, sb);
    assert_eq!(sa.w, 1, "bmm operands must be (g, m, k, 1)");
    assert_eq!(sb.w, 1, "bmm operands must be (g, m, k, 1)");
    let g = sa.n;
    let (m, k) = (sa.c, sa.h);
    let (kn, n) = if trans_b { (sb.h, sb.c) } else { (sb.c, sb.h) };
    assert_eq!(k, kn, "bmm: inner dims differ: {} vs {}", sa, sb);
    let mut out = vec![T::zero(); g * m * n];
    let (pa, pb, pc) = (m * k, sb.c * sb.h, m * n);
    for gi in 0..g {
        let (rsb, csb) = if trans_b {
            (1isize, sb.h as isize)
        } else {
            (sb.h as isize, 1isize)
        };
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.data()[gi * pa..].as_ptr(),
                k as isize,
                1,
                b.data()[gi * pb..].as_ptr(),
                rsb,
                csb,
                T::zero(),
                out[gi * pc..].as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(Shape::new(g, m, n, 1), out)
}

impl<T: Scalar> GradFn<T> for BmmGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let a = ctx.input(0);
        let b = ctx.input(1);
        if self.trans_b {
            // y = a b^T: ga = gy b ; gb = gy^T a
            let ga = needs[0].then(|| bmm_forward(grad_out, b, false));
            let gb = needs[1].then(|| bmm_transpose_first(grad_out, a));
            vec![ga, gb]
        } else {
            // y = a b: ga = gy b^T ; gb = a^T gy
            let ga = needs[0].then(|| bmm_forward(grad_out, b, true));
            let gb = needs[1].then(|| bmm_transpose_first(a, grad_out));
            vec![ga, gb]
        }
    }
}

/// (g, m, k, 1), (g, m, n, 1) -> a^T b per group: (g, k, n, 1).
fn bmm_transpose_first<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa.n, sb.n);
    assert_eq!(sa.c, sb.c);
    let g = sa.n;
    let (m, k, n) = (sa.c, sa.h, sb.h);
    let mut out = vec![T::zero(); g * k * n];
    for gi in 0..g {
        unsafe {
            T::gemm(
                k,
                m,
                n,
                T::one(),
                a.data()[gi * m * k..].as_ptr(),
                1,
                k as isize,
                b.data()[gi * m * n..].as_ptr(),
                n as isize,
                1,
                T::zero(),
                out[gi * k * n..].as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(Shape::new(g, k, n, 1), out)
}

impl<T: Scalar> Graph<T> {
    /// Affine map on a flattened view: x (m, d_in, 1, 1) * w (d_in, d_out, 1, 1) + b.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.h * xs.w, 1, "linear input must be (m, d, 1, 1), got {}", xs);
        assert_eq!(ws.h * ws.w, 1, "linear weight must be (d_in, d_out, 1, 1)");
        assert_eq!(
            xs.c, ws.n,
            "linear: inner dimensions disagree: input {} vs weight {}",
            xs, ws
        );
        let (m, din, dout) = (xs.n, xs.c, ws.c);
        let mut out = vec![T::zero(); m * dout];
        unsafe {
            T::gemm(
                m,
                din,
                dout,
                T::one(),
                self.value(x).data().as_ptr(),
                din as isize,
                1,
                self.value(w).data().as_ptr(),
                dout as isize,
                1,
                T::zero(),
                out.as_mut_ptr(),
                dout as isize,
                1,
            );
        }
        if let Some(bid) = b {
            let bt = self.value(bid);
            assert_eq!(
                bt.shape(),
                Shape::new(1, dout, 1, 1),
                "linear: bias shape mismatch"
            );
            for r in 0..m {
                for c in 0..dout {
                    out[r * dout + c] += bt.data()[c];
                }
            }
        }
        let v = Tensor::new(Shape::new(m, dout, 1, 1), out);
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        self.push_op(v, inputs, Box::new(LinearGrad { has_bias: b.is_some() }))
    }

    /// y[g] = a[g] * b[g]^T — (g,m,k,1) x (g,n,k,1) -> (g,m,n,1).
    pub fn bmm_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = bmm_forward(self.value(a), self.value(b), true);
        self.push_op(v, vec![a, b], Box::new(BmmGrad { trans_b: true }))
    }

    /// y[g] = a[g] * b[g] — (g,m,k,1) x (g,k,n,1) -> (g,m,n,1).
    pub fn bmm_nn(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = bmm_forward(self.value(a), self.value(b), false);
        self.push_op(v, vec![a, b], Box::new(BmmGrad { trans_b: false }))
    }
}
