//! conv2d / conv_transpose2d via im2col + GEMM.
//!
//! Convolution is cross-correlation (no kernel flip), the usual deep
//! learning convention. Weight layouts: conv2d takes (c_out, c_in, k, k),
//! conv_transpose2d takes (c_in, c_out, k, k). GEMM calls are single
//! threaded and output regions are disjoint, so results are bit
//! deterministic; batching parallelism runs over samples.

use rayon::prelude::*;

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn conv_out_dim(d: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        d + 2 * pad >= k,
        "conv2d: kernel {} larger than padded input {}",
        k,
        d + 2 * pad
    );
    (d + 2 * pad - k) / stride + 1
}

/// Fill the im2col matrix (oh*ow rows, cin*k*k cols) for one sample.
fn im2col_sample<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let patch = g.patch();
    cols.par_chunks_mut(patch)
        .enumerate()
        .for_each(|(row, dst)| {
            let oy = row / g.ow;
            let ox = row % g.ow;
            let iy0 = (oy * g.stride) as isize - g.pad as isize;
            let ix0 = (ox * g.stride) as isize - g.pad as isize;
            let mut di = 0;
            for c in 0..g.cin {
                let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
                for ky in 0..g.k {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst[di..di + g.k].fill(T::zero());
                        di += g.k;
                        continue;
                    }
                    let rowbase = iy as usize * g.w;
                    for kx in 0..g.k {
                        let ix = ix0 + kx as isize;
                        dst[di] = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            plane[rowbase + ix as usize]
                        };
                        di += 1;
                    }
                }
            }
        });
}

/// Adjoint of im2col: scatter column gradients back to the input plane.
fn col2im_sample<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let patch = g.patch();
    for (row, src) in cols.chunks(patch).enumerate() {
        let oy = row / g.ow;
        let ox = row % g.ow;
        let iy0 = (oy * g.stride) as isize - g.pad as isize;
        let ix0 = (ox * g.stride) as isize - g.pad as isize;
        let mut si = 0;
        for c in 0..g.cin {
            let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.k {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= g.h as isize {
                    si += g.k;
                    continue;
                }
                let rowbase = iy as usize * g.w;
                for kx in 0..g.k {
                    let ix = ix0 + kx as isize;
                    if ix >= 0 && ix < g.w as isize {
                        plane[rowbase + ix as usize] += src[si];
                    }
                    si += 1;
                }
            }
        }
    }
}

fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let n = x.shape().n;
    let patch = g.patch();
    let out_plane = g.oh * g.ow;
    let mut out = vec![T::zero(); n * g.cout * out_plane];
    let in_len = g.cin * g.h * g.w;

    out.par_chunks_mut(g.cout * out_plane)
        .enumerate()
        .for_each(|(s, dst)| {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let mut cols = vec![T::zero(); out_plane * patch];
            im2col_sample(xs, g, &mut cols);
            // dst (cout, oh*ow) = w (cout, patch) * cols^T (patch, oh*ow)
            unsafe {
                T::gemm(
                    g.cout,
                    patch,
                    out_plane,
                    T::one(),
                    w.data().as_ptr(),
                    patch as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    patch as isize,
                    T::zero(),
                    dst.as_mut_ptr(),
                    out_plane as isize,
                    1,
                );
            }
            if let Some(b) = b {
                for c in 0..g.cout {
                    let bv = b.data()[c];
                    for v in &mut dst[c * out_plane..(c + 1) * out_plane] {
                        *v += bv;
                    }
                }
            }
        });

    Tensor::new(Shape::new(n, g.cout, g.oh, g.ow), out)
}

struct Conv2dGrad {
    geom: ConvGeom,
    has_bias: bool,
}

impl<T: Scalar> GradFn<T> for Conv2dGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let x = ctx.input(0);
        let w = ctx.input(1);
        let n = x.shape().n;
        let patch = g.patch();
        let out_plane = g.oh * g.ow;
        let in_len = g.cin * g.h * g.w;

        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); x.len()];
            gx.par_chunks_mut(in_len)
                .enumerate()
                .for_each(|(s, dst)| {
                    let gys = &grad_out.data()[s * g.cout * out_plane..(s + 1) * g.cout * out_plane];
                    // dcols (oh*ow, patch) = gy^T (oh*ow, cout) * w (cout, patch)
                    let mut dcols = vec![T::zero(); out_plane * patch];
                    unsafe {
                        T::gemm(
                            out_plane,
                            g.cout,
                            patch,
                            T::one(),
                            gys.as_ptr(),
                            1,
                            out_plane as isize,
                            w.data().as_ptr(),
                            patch as isize,
                            1,
                            T::zero(),
                            dcols.as_mut_ptr(),
                            patch as isize,
                            1,
                        );
                    }
                    col2im_sample(&dcols, g, dst);
                });
            Tensor::new(x.shape(), gx)
        });

        let gw = needs[1].then(|| {
            let mut gw = vec![T::zero(); w.len()];
            let mut cols = vec![T::zero(); out_plane * patch];
            for s in 0..n {
                let xs = &x.data()[s * in_len..(s + 1) * in_len];
                im2col_sample(xs, g, &mut cols);
                let gys = &grad_out.data()[s * g.cout * out_plane..(s + 1) * g.cout * out_plane];
                // gw (cout, patch) += gy (cout, oh*ow) * cols (oh*ow, patch)
                let beta = if s == 0 { T::zero() } else { T::one() };
                unsafe {
                    T::gemm(
                        g.cout,
                        out_plane,
                        patch,
                        T::one(),
                        gys.as_ptr(),
                        out_plane as isize,
                        1,
                        cols.as_ptr(),
                        patch as isize,
                        1,
                        beta,
                        gw.as_mut_ptr(),
                        patch as isize,
                        1,
                    );
                }
            }
            Tensor::new(w.shape(), gw)
        });

        let gb = (self.has_bias && needs[2]).then(|| {
            let mut gb = vec![T::zero(); g.cout];
            for s in 0..n {
                for c in 0..g.cout {
                    let base = (s * g.cout + c) * out_plane;
                    gb[c] += grad_out.data()[base..base + out_plane]
                        .iter()
                        .copied()
                        .sum();
                }
            }
            Tensor::new(Shape::new(1, g.cout, 1, 1), gb)
        });

        if self.has_bias {
            vec![gx, gw, gb]
        } else {
            vec![gx, gw]
        }
    }
}

// ---------------------------------------------------------------------------
// transposed convolution
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct DeconvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn deconv_scatter<T: Scalar>(x: &[T], w: &[T], g: &DeconvGeom, out: &mut [T]) {
    // out[co, i*s+ky, j*s+kx] += w[ci, co, ky, kx] * x[ci, i, j]
    let out_plane = g.oh * g.ow;
    let in_plane = g.h * g.w;
    out.par_chunks_mut(out_plane).enumerate().for_each(|(co, dst)| {
        for ci in 0..g.cin {
            let xp = &x[ci * in_plane..(ci + 1) * in_plane];
            let wbase = (ci * g.cout + co) * g.k * g.k;
            for i in 0..g.h {
                for j in 0..g.w {
                    let xv = xp[i * g.w + j];
                    if xv == T::zero() {
                        continue;
                    }
                    for ky in 0..g.k {
                        let oy = i * g.stride + ky;
                        let rowbase = oy * g.ow + j * g.stride;
                        for kx in 0..g.k {
                            dst[rowbase + kx] += w[wbase + ky * g.k + kx] * xv;
                        }
                    }
                }
            }
        }
    });
}

fn deconv_gather_gx<T: Scalar>(gy: &[T], w: &[T], g: &DeconvGeom, gx: &mut [T]) {
    // gx[ci, i, j] = sum_{co,ky,kx} w[ci,co,ky,kx] * gy[co, i*s+ky, j*s+kx]
    let out_plane = g.oh * g.ow;
    let in_plane = g.h * g.w;
    gx.par_chunks_mut(in_plane).enumerate().for_each(|(ci, dst)| {
        for co in 0..g.cout {
            let gp = &gy[co * out_plane..(co + 1) * out_plane];
            let wbase = (ci * g.cout + co) * g.k * g.k;
            for i in 0..g.h {
                for j in 0..g.w {
                    let mut acc = T::zero();
                    for ky in 0..g.k {
                        let rowbase = (i * g.stride + ky) * g.ow + j * g.stride;
                        for kx in 0..g.k {
                            acc += w[wbase + ky * g.k + kx] * gp[rowbase + kx];
                        }
                    }
                    dst[i * g.w + j] += acc;
                }
            }
        }
    });
}

struct DeconvGrad {
    geom: DeconvGeom,
    has_bias: bool,
}

impl<T: Scalar> GradFn<T> for DeconvGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let x = ctx.input(0);
        let w = ctx.input(1);
        let n = x.shape().n;
        let in_len = g.cin * g.h * g.w;
        let out_len = g.cout * g.oh * g.ow;

        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); x.len()];
            gx.par_chunks_mut(in_len).enumerate().for_each(|(s, dst)| {
                deconv_gather_gx(
                    &grad_out.data()[s * out_len..(s + 1) * out_len],
                    w.data(),
                    g,
                    dst,
                );
            });
            Tensor::new(x.shape(), gx)
        });

        let gw = needs[1].then(|| {
            let mut gw = vec![T::zero(); w.len()];
            // gw[ci,co,ky,kx] = sum_s sum_{i,j} x[ci,i,j] * gy[co, i*s+ky, j*s+kx]
            let out_plane = g.oh * g.ow;
            let in_plane = g.h * g.w;
            for s in 0..n {
                let xs = &x.data()[s * in_len..(s + 1) * in_len];
                let gys = &grad_out.data()[s * out_len..(s + 1) * out_len];
                for ci in 0..g.cin {
                    let xp = &xs[ci * in_plane..(ci + 1) * in_plane];
                    for co in 0..g.cout {
                        let gp = &gys[co * out_plane..(co + 1) * out_plane];
                        let wbase = (ci * g.cout + co) * g.k * g.k;
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let mut acc = T::zero();
                                for i in 0..g.h {
                                    let rowbase = (i * g.stride + ky) * g.ow + kx;
                                    let xrow = &xp[i * g.w..(i + 1) * g.w];
                                    for (j, &xv) in xrow.iter().enumerate() {
                                        acc += xv * gp[rowbase + j * g.stride];
                                    }
                                }
                                gw[wbase + ky * g.k + kx] += acc;
                            }
                        }
                    }
                }
            }
            Tensor::new(w.shape(), gw)
        });

        let gb = (self.has_bias && needs[2]).then(|| {
            let out_plane = g.oh * g.ow;
            let mut gb = vec![T::zero(); g.cout];
            for s in 0..n {
                for c in 0..g.cout {
                    let base = (s * g.cout + c) * out_plane;
                    gb[c] += grad_out.data()[base..base + out_plane]
                        .iter()
                        .copied()
                        .sum();
                }
            }
            Tensor::new(Shape::new(1, g.cout, 1, 1), gb)
        });

        if self.has_bias {
            vec![gx, gw, gb]
        } else {
            vec![gx, gw]
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation with square odd kernel; `pad = (k-1)/2` keeps the
    /// spatial size at stride 1.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(
            ws.c, xs.c,
            "conv2d: weight expects {} input channels, tensor has {}",
            ws.c, xs.c
        );
        assert_eq!(ws.h, ws.w, "conv2d: kernel must be square, got {}", ws);
        assert!(ws.h % 2 == 1, "conv2d: kernel size {} must be odd", ws.h);
        let geom = ConvGeom {
            cin: xs.c,
            cout: ws.n,
            k: ws.h,
            stride,
            pad,
            h: xs.h,
            w: xs.w,
            oh: conv_out_dim(xs.h, ws.h, stride, pad),
            ow: conv_out_dim(xs.w, ws.w, stride, pad),
        };
        let bv = b.map(|id| self.value(id).clone());
        if let Some(ref bt) = bv {
            assert_eq!(
                bt.shape(),
                Shape::new(1, geom.cout, 1, 1),
                "conv2d: bias shape mismatch"
            );
        }
        let v = conv2d_forward(self.value(x), self.value(w), bv.as_ref(), &geom);
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        self.push_op(
            v,
            inputs,
            Box::new(Conv2dGrad {
                geom,
                has_bias: b.is_some(),
            }),
        )
    }

    /// Transposed convolution (adjoint of conv2d at the same stride),
    /// weight layout (c_in, c_out, k, k), no padding.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
    ) -> NodeId {
        assert!(stride >= 1, "conv_transpose2d: stride must be >= 1");
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(
            ws.n, xs.c,
            "conv_transpose2d: weight expects {} input channels, tensor has {}",
            ws.n, xs.c
        );
        assert_eq!(ws.h, ws.w, "conv_transpose2d: kernel must be square");
        let geom = DeconvGeom {
            cin: xs.c,
            cout: ws.c,
            k: ws.h,
            stride,
            h: xs.h,
            w: xs.w,
            oh: (xs.h - 1) * stride + ws.h,
            ow: (xs.w - 1) * stride + ws.h,
        };
        let n = xs.n;
        let out_len = geom.cout * geom.oh * geom.ow;
        let in_len = geom.cin * geom.h * geom.w;
        let mut out = vec![T::zero(); n * out_len];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            for s in 0..n {
                deconv_scatter(
                    &xv.data()[s * in_len..(s + 1) * in_len],
                    wv.data(),
                    &geom,
                    &mut out[s * out_len..(s + 1) * out_len],
                );
            }
        }
        if let Some(bid) = b {
            let bt = self.value(bid).clone();
            assert_eq!(
                bt.shape(),
                Shape::new(1, geom.cout, 1, 1),
                "conv_transpose2d: bias shape mismatch"
            );
            let out_plane = geom.oh * geom.ow;
            for s in 0..n {
                for c in 0..geom.cout {
                    let bvv = bt.data()[c];
                    let base = (s * geom.cout + c) * out_plane;
                    for v in &mut out[base..base + out_plane] {
                        *v += bvv;
                    }
                }
            }
        }
        let v = Tensor::new(Shape::new(n, geom.cout, geom.oh, geom.ow), out);
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        self.push_op(
            v,
            inputs,
            Box::new(DeconvGrad {
                geom,
                has_bias: b.is_some(),
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_conv() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| {
            (y * 3 + x) as f64
        }));
        let w = g.constant(Tensor::full(Shape::new(1, 1, 1, 1), 1.0));
        let y = g.conv2d(x, w, None, 1, 0);
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn ones_3x3_same_pad_on_constant() {
        // 3x3 all-ones kernel, pad 1, constant input c: interior 9c, corners 4c
        let mut g = Graph::<f64>::new();
        let c = 0.5;
        let x = g.constant(Tensor::full(Shape::new(1, 1, 5, 5), c));
        let w = g.constant(Tensor::full(Shape::new(1, 1, 3, 3), 1.0));
        let y = g.conv2d(x, w, None, 1, 1);
        let yv = g.value(y);
        assert_eq!(yv.at(0, 0, 2, 2), 9.0 * c);
        assert_eq!(yv.at(0, 0, 0, 0), 4.0 * c);
        assert_eq!(yv.at(0, 0, 0, 2), 6.0 * c);
    }

    #[test]
    fn conv_is_linear() {
        // conv(a*x + b*y) = a*conv(x) + b*conv(y), zero bias
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let shape = Shape::new(1, 2, 6, 6);
        let x = Tensor::<f64>::rand_uniform(shape, -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::rand_uniform(shape, -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut rng);
        let (a, b) = (1.7, -0.4);

        let mut g = Graph::<f64>::new();
        let xn = g.constant(x.clone());
        let yn = g.constant(y.clone());
        let wn = g.constant(w.clone());
        let ax = g.scale(xn, a);
        let by = g.scale(yn, b);
        let mix = g.add(ax, by);
        let conv_mix = g.conv2d(mix, wn, None, 1, 1);
        let cx = g.conv2d(xn, wn, None, 1, 1);
        let cy = g.conv2d(yn, wn, None, 1, 1);
        let acx = g.scale(cx, a);
        let bcy = g.scale(cy, b);
        let lincomb = g.add(acx, bcy);
        let err = g.value(conv_mix).max_abs_diff(g.value(lincomb));
        assert!(err < 1e-10, "linearity violated: {}", err);
    }

    #[test]
    #[should_panic(expected = "input channels")]
    fn channel_mismatch_is_hard_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 3, 4, 4)));
        let w = g.constant(Tensor::zeros(Shape::new(4, 2, 3, 3)));
        let _ = g.conv2d(x, w, None, 1, 1);
    }

    #[test]
    fn deconv_single_pixel_spreads_kernel() {
        // 1x1x1x1 input v, 2x2 kernel of ones, stride 2 -> 2x2 output all v
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::scalar(3.25));
        let w = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let y = g.conv_transpose2d(x, w, None, 2);
        assert_eq!(g.shape(y), Shape::new(1, 1, 2, 2));
        assert!(g.value(y).data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn deconv_doubles_spatial_size() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 4, 8, 8)));
        let w = g.constant(Tensor::zeros(Shape::new(4, 6, 2, 2)));
        let y = g.conv_transpose2d(x, w, None, 2);
        assert_eq!(g.shape(y), Shape::new(1, 6, 16, 16));
    }

    #[test]
    fn strided_conv_output_shape() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(Shape::new(2, 3, 8, 8)));
        let w = g.constant(Tensor::zeros(Shape::new(5, 3, 3, 3)));
        let y = g.conv2d(x, w, None, 2, 1);
        assert_eq!(g.shape(y), Shape::new(2, 5, 4, 4));
    }
}
