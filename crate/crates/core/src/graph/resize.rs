//! Bilinear resampling with align-corners=false semantics.

use rayon::prelude::*;

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Source coordinate and lerp taps for one output index.
#[inline]
fn taps(dst: usize, scale: f64, in_len: usize) -> (usize, usize, f64) {
    let src = (dst as f64 + 0.5) * scale - 0.5;
    let src = src.max(0.0).min((in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

fn bilinear_plane<T: Scalar>(
    src: &[T],
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    dst: &mut [T],
) {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for oy in 0..oh {
        let (y0, y1, fy) = taps(oy, sy, h);
        let (fy0, fy1) = (T::of_f64(1.0 - fy), T::of_f64(fy));
        for ox in 0..ow {
            let (x0, x1, fx) = taps(ox, sx, w);
            let (fx0, fx1) = (T::of_f64(1.0 - fx), T::of_f64(fx));
            dst[oy * ow + ox] = fy0 * (fx0 * src[y0 * w + x0] + fx1 * src[y0 * w + x1])
                + fy1 * (fx0 * src[y1 * w + x0] + fx1 * src[y1 * w + x1]);
        }
    }
}

fn bilinear_plane_adjoint<T: Scalar>(
    gy: &[T],
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    gx: &mut [T],
) {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for oy in 0..oh {
        let (y0, y1, fy) = taps(oy, sy, h);
        let (fy0, fy1) = (T::of_f64(1.0 - fy), T::of_f64(fy));
        for ox in 0..ow {
            let (x0, x1, fx) = taps(ox, sx, w);
            let (fx0, fx1) = (T::of_f64(1.0 - fx), T::of_f64(fx));
            let g = gy[oy * ow + ox];
            gx[y0 * w + x0] += fy0 * fx0 * g;
            gx[y0 * w + x1] += fy0 * fx1 * g;
            gx[y1 * w + x0] += fy1 * fx0 * g;
            gx[y1 * w + x1] += fy1 * fx1 * g;
        }
    }
}

struct BilinearGrad;

impl<T: Scalar> GradFn<T> for BilinearGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = ctx.input(0).shape();
        let os = grad_out.shape();
        let in_plane = s.h * s.w;
        let out_plane = os.h * os.w;
        let mut gx = vec![T::zero(); s.len()];
        gx.par_chunks_mut(in_plane)
            .enumerate()
            .for_each(|(pc, dst)| {
                let src = &grad_out.data()[pc * out_plane..(pc + 1) * out_plane];
                bilinear_plane_adjoint(src, (s.h, s.w), (os.h, os.w), dst);
            });
        vec![Some(Tensor::new(s, gx))]
    }
}

impl<T: Scalar> Graph<T> {
    /// Resample to (oh, ow); handles both up and down directions.
    pub fn bilinear(&mut self, x: NodeId, oh: usize, ow: usize) -> NodeId {
        let s = self.shape(x);
        assert!(oh > 0 && ow > 0, "bilinear: empty target size");
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let in_plane = s.h * s.w;
        let out_plane = oh * ow;
        let mut out = vec![T::zero(); out_shape.len()];
        let xv = self.value(x);
        out.par_chunks_mut(out_plane)
            .enumerate()
            .for_each(|(pc, dst)| {
                let src = &xv.data()[pc * in_plane..(pc + 1) * in_plane];
                bilinear_plane(src, (s.h, s.w), (oh, ow), dst);
            });
        self.push_op(Tensor::new(out_shape, out), vec![x], Box::new(BilinearGrad))
    }
}
