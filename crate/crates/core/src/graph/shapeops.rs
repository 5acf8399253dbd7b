//! Structural ops: reshape, channel concat/slice, sub-pixel shuffles and
//! the token layouts used by the attention blocks. All of these are
//! permutations or block copies, so backward is the inverse mapping.

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

struct ReshapeGrad;

impl<T: Scalar> GradFn<T> for ReshapeGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad_out.reshaped(ctx.input(0).shape()))]
    }
}

struct ConcatGrad {
    channels: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for ConcatGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = grad_out.shape();
        let mut out = Vec::with_capacity(self.channels.len());
        let mut start = 0;
        for (k, &ck) in self.channels.iter().enumerate() {
            if needs[k] {
                out.push(Some(slice_channel_tensor(grad_out, start, ck)));
            } else {
                out.push(None);
            }
            start += ck;
        }
        debug_assert_eq!(start, s.c);
        debug_assert_eq!(out.len(), ctx.n_inputs());
        out
    }
}

fn slice_channel_tensor<T: Scalar>(t: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let s = t.shape();
    assert!(start + len <= s.c, "channel slice out of range");
    let out_shape = Shape::new(s.n, len, s.h, s.w);
    let plane = s.h * s.w;
    let mut out = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        let base = (n * s.c + start) * plane;
        out.extend_from_slice(&t.data()[base..base + len * plane]);
    }
    Tensor::new(out_shape, out)
}

struct SliceGrad {
    start: usize,
}

impl<T: Scalar> GradFn<T> for SliceGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = ctx.input(0).shape();
        let gs = grad_out.shape();
        let plane = s.h * s.w;
        let mut gx = vec![T::zero(); s.len()];
        for n in 0..s.n {
            let dst = (n * s.c + self.start) * plane;
            let src = n * gs.c * plane;
            gx[dst..dst + gs.c * plane]
                .copy_from_slice(&grad_out.data()[src..src + gs.c * plane]);
        }
        vec![Some(Tensor::new(s, gx))]
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TokenMode {
    /// One token per pixel over the whole map.
    Global,
    /// One token sequence per row strip.
    Rows,
    /// One token sequence per column strip.
    Cols,
}

/// Token tensor shape for a feature map split into `heads` heads.
fn token_shape(s: Shape, heads: usize, mode: TokenMode) -> Shape {
    assert!(
        s.c % heads == 0,
        "channel count {} not divisible by {} heads",
        s.c,
        heads
    );
    let dd = s.c / heads;
    match mode {
        TokenMode::Global => Shape::new(s.n * heads, s.h * s.w, dd, 1),
        TokenMode::Rows => Shape::new(s.n * heads * s.h, s.w, dd, 1),
        TokenMode::Cols => Shape::new(s.n * heads * s.w, s.h, dd, 1),
    }
}

/// Flat token-tensor index of feature element (n, c, y, x).
#[inline]
fn token_index(s: Shape, heads: usize, mode: TokenMode, n: usize, c: usize, y: usize, x: usize) -> usize {
    let dd = s.c / heads;
    let head = c / dd;
    let d = c % dd;
    match mode {
        TokenMode::Global => ((n * heads + head) * (s.h * s.w) + y * s.w + x) * dd + d,
        TokenMode::Rows => (((n * heads + head) * s.h + y) * s.w + x) * dd + d,
        TokenMode::Cols => (((n * heads + head) * s.w + x) * s.h + y) * dd + d,
    }
}

struct ToTokensGrad {
    heads: usize,
    mode: TokenMode,
}

impl<T: Scalar> GradFn<T> for ToTokensGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = ctx.input(0).shape();
        let g = grad_out.data();
        let gx = Tensor::from_fn(s, |n, c, y, x| g[token_index(s, self.heads, self.mode, n, c, y, x)]);
        vec![Some(gx)]
    }
}

struct FromTokensGrad {
    heads: usize,
    mode: TokenMode,
    feature_shape: Shape,
}

impl<T: Scalar> GradFn<T> for FromTokensGrad {
    fn backward(
        &self,
        _ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = self.feature_shape;
        let mut gx = vec![T::zero(); token_shape(s, self.heads, self.mode).len()];
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        gx[token_index(s, self.heads, self.mode, n, c, y, x)] =
                            grad_out.at(n, c, y, x);
                    }
                }
            }
        }
        vec![Some(Tensor::new(token_shape(s, self.heads, self.mode), gx))]
    }
}

struct PixelShuffleGrad {
    r: usize,
    inverse: bool,
}

impl<T: Scalar> GradFn<T> for PixelShuffleGrad {
    fn backward(
        &self,
        _ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = if self.inverse {
            shuffle_forward(grad_out, self.r)
        } else {
            unshuffle_forward(grad_out, self.r)
        };
        vec![Some(g)]
    }
}

fn shuffle_forward<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    assert!(
        s.c % (r * r) == 0,
        "pixel_shuffle: channel count {} not divisible by r^2 = {}",
        s.c,
        r * r
    );
    let out_shape = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    Tensor::from_fn(out_shape, |n, co, y, xx| {
        let (dy, dx) = (y % r, xx % r);
        x.at(n, co * r * r + dy * r + dx, y / r, xx / r)
    })
}

fn unshuffle_forward<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    assert!(
        s.h % r == 0 && s.w % r == 0,
        "pixel_unshuffle: spatial dims {} not divisible by r = {}",
        s,
        r
    );
    let out_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    Tensor::from_fn(out_shape, |n, c, y, xx| {
        let co = c / (r * r);
        let rem = c % (r * r);
        let (dy, dx) = (rem / r, rem % r);
        x.at(n, co, y * r + dy, xx * r + dx)
    })
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: NodeId, shape: Shape) -> NodeId {
        let v = self.value(x).reshaped(shape);
        self.push_op(v, vec![x], Box::new(ReshapeGrad))
    }

    /// Concatenate along the channel axis.
    pub fn concat_c(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "concat of zero tensors");
        let first = self.shape(xs[0]);
        let mut channels = Vec::with_capacity(xs.len());
        let mut total_c = 0;
        for &x in xs {
            let s = self.shape(x);
            assert!(
                s.n == first.n && s.h == first.h && s.w == first.w,
                "concat_c: incompatible shapes {} vs {}",
                s,
                first
            );
            channels.push(s.c);
            total_c += s.c;
        }
        let out_shape = Shape::new(first.n, total_c, first.h, first.w);
        let plane = first.h * first.w;
        let mut data = Vec::with_capacity(out_shape.len());
        for n in 0..first.n {
            for &x in xs {
                let t = self.value(x);
                let c = t.shape().c;
                let base = n * c * plane;
                data.extend_from_slice(&t.data()[base..base + c * plane]);
            }
        }
        self.push_op(
            Tensor::new(out_shape, data),
            xs.to_vec(),
            Box::new(ConcatGrad { channels }),
        )
    }

    /// Channel slice [start, start+len).
    pub fn slice_c(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = slice_channel_tensor(self.value(x), start, len);
        self.push_op(v, vec![x], Box::new(SliceGrad { start }))
    }

    /// (n, c, h, w) -> (n, c/r^2, rh, rw).
    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> NodeId {
        let v = shuffle_forward(self.value(x), r);
        self.push_op(v, vec![x], Box::new(PixelShuffleGrad { r, inverse: false }))
    }

    /// (n, c, h, w) -> (n, c*r^2, h/r, w/r).
    pub fn pixel_unshuffle(&mut self, x: NodeId, r: usize) -> NodeId {
        let v = unshuffle_forward(self.value(x), r);
        self.push_op(v, vec![x], Box::new(PixelShuffleGrad { r, inverse: true }))
    }

    /// Rearrange a feature map into per-head token sequences.
    pub fn to_tokens(&mut self, x: NodeId, heads: usize, mode: TokenMode) -> NodeId {
        let xv = self.value(x);
        let s = xv.shape();
        let out_shape = token_shape(s, heads, mode);
        let mut data = vec![T::zero(); out_shape.len()];
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    for x_ in 0..s.w {
                        data[token_index(s, heads, mode, n, c, y, x_)] = xv.at(n, c, y, x_);
                    }
                }
            }
        }
        self.push_op(
            Tensor::new(out_shape, data),
            vec![x],
            Box::new(ToTokensGrad { heads, mode }),
        )
    }

    /// Inverse of [`Graph::to_tokens`] for the given feature shape.
    pub fn from_tokens(
        &mut self,
        tokens: NodeId,
        heads: usize,
        mode: TokenMode,
        feature_shape: Shape,
    ) -> NodeId {
        let tv = self.value(tokens);
        assert_eq!(
            tv.shape(),
            token_shape(feature_shape, heads, mode),
            "from_tokens: token shape mismatch"
        );
        let td = tv.data();
        let v = Tensor::from_fn(feature_shape, |n, c, y, x| {
            td[token_index(feature_shape, heads, mode, n, c, y, x)]
        });
        self.push_op(
            v,
            vec![tokens],
            Box::new(FromTokensGrad {
                heads,
                mode,
                feature_shape,
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_shuffle_shapes_and_roundtrip() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::from_fn(Shape::new(1, 4, 3, 3), |_, c, y, x| {
            (c * 9 + y * 3 + x) as f64
        }));
        let y = g.pixel_shuffle(x, 2);
        assert_eq!(g.shape(y), Shape::new(1, 1, 6, 6));
        let back = g.pixel_unshuffle(y, 2);
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn pixel_shuffle_constant_stays_constant() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(Shape::new(2, 8, 4, 4), 0.3));
        let y = g.pixel_shuffle(x, 2);
        assert!(g.value(y).data().iter().all(|&v| v == 0.3));
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn pixel_shuffle_rejects_bad_channels() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 3, 4, 4)));
        let _ = g.pixel_shuffle(x, 2);
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let mut g = Graph::<f64>::new();
        let a = g.var(Tensor::full(Shape::new(2, 3, 2, 2), 1.0));
        let b = g.var(Tensor::full(Shape::new(2, 5, 2, 2), 2.0));
        let cat = g.concat_c(&[a, b]);
        assert_eq!(g.shape(cat), Shape::new(2, 8, 2, 2));
        let b2 = g.slice_c(cat, 3, 5);
        assert_eq!(g.value(b2).data(), g.value(b).data());
    }

    #[test]
    fn tokens_roundtrip_all_modes() {
        for mode in [TokenMode::Global, TokenMode::Rows, TokenMode::Cols] {
            let mut g = Graph::<f64>::new();
            let x = g.var(Tensor::from_fn(Shape::new(2, 4, 3, 5), |n, c, y, x| {
                (n * 1000 + c * 100 + y * 10 + x) as f64
            }));
            let t = g.to_tokens(x, 2, mode);
            let back = g.from_tokens(t, 2, mode, Shape::new(2, 4, 3, 5));
            assert_eq!(g.value(back).data(), g.value(x).data());
        }
    }
}
