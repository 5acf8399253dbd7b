//! Reductions: full sums/means and axis means (global average pooling,
//! strip pooling).

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Mean/sum over the dims where `out_shape` is 1.
struct ReduceGrad {
    mean: bool,
}

fn reduced_count(from: Shape, to: Shape) -> usize {
    from.len() / to.len()
}

impl<T: Scalar> GradFn<T> for ReduceGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        let scale = if self.mean {
            T::one() / T::of_f64(reduced_count(x.shape(), grad_out.shape()) as f64)
        } else {
            T::one()
        };
        // broadcast grad back up, scaled for means
        let gx = super::elementwise::broadcast_zip(
            &Tensor::full(x.shape(), scale),
            grad_out,
            |s, g| s * g,
        );
        vec![Some(gx)]
    }
}

impl<T: Scalar> Graph<T> {
    fn reduce(&mut self, x: NodeId, out_shape: Shape, mean: bool) -> NodeId {
        let xv = self.value(x);
        let s = xv.shape();
        assert!(
            s.broadcasts_from(&out_shape),
            "reduce target {} incompatible with {}",
            out_shape,
            s
        );
        let mut acc = super::elementwise::reduce_to_shape(xv, out_shape);
        if mean {
            let k = T::one() / T::of_f64(reduced_count(s, out_shape) as f64);
            acc = acc.scale(k);
        }
        self.push_op(acc, vec![x], Box::new(ReduceGrad { mean }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.reduce(x, Shape::scalar(), false)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.reduce(x, Shape::scalar(), true)
    }

    /// Global average pool: (n,c,h,w) -> (n,c,1,1).
    pub fn mean_spatial(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.reduce(x, Shape::new(s.n, s.c, 1, 1), true)
    }

    /// Mean over width: (n,c,h,w) -> (n,c,h,1).
    pub fn mean_width(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.reduce(x, Shape::new(s.n, s.c, s.h, 1), true)
    }

    /// Mean over height: (n,c,h,w) -> (n,c,1,w).
    pub fn mean_height(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.reduce(x, Shape::new(s.n, s.c, 1, s.w), true)
    }

    /// Mean absolute difference, the L1 building block of every loss term.
    pub fn l1(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_all_grad_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::from_f64s(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]));
        let m = g.mean_all(x);
        assert_eq!(g.value(m).data(), &[2.5]);
        let grads = g.backward(m);
        assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn spatial_pool() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, y, x| {
            (c * 10 + y * 2 + x) as f64
        }));
        let p = g.mean_spatial(x);
        assert_eq!(g.value(p).data(), &[1.5, 11.5]);
    }

    #[test]
    fn l1_of_equal_inputs_is_zero() {
        let mut g = Graph::<f64>::new();
        let a = g.var(Tensor::full(Shape::new(1, 3, 4, 4), 0.7));
        let b = g.constant(Tensor::full(Shape::new(1, 3, 4, 4), 0.7));
        let l = g.l1(a, b);
        assert_eq!(g.value(l).data()[0], 0.0);
    }
}
