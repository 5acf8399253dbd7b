//! Differentiable wavelet split/merge and Fourier-domain modulation.
//!
//! The DWT ops move between (n, c, h, w) and a stacked band layout
//! (n, 4c, h/2, w/2) ordered [LL | LH | HL | HH] along channels; backward
//! passes are the exact adjoints of the circular filter banks.
//! `spectral_modulate` fuses dft2 -> per-bin real scale -> idft2 into one
//! node; with a real weight the operator is self-adjoint, so the input
//! gradient reuses the forward kernel.

use super::{Ctx, GradFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::spectral::fourier::{self, half_width};
use crate::spectral::wavelet::{
    analyze_1d_adjoint, bank, dwt2_plane, idwt2_plane, synthesize_1d, synthesize_1d_adjoint,
    FilterBank, WaveletFamily,
};
use crate::tensor::Tensor;

fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Adjoint of the 2-D analysis on one plane.
fn dwt2_plane_adjoint<T: Scalar>(
    gbands: [&[T]; 4],
    h: usize,
    w: usize,
    fb: &FilterBank,
) -> Vec<T> {
    let (hh2, wh2) = (h / 2, w / 2);
    // columns adjoint: (gll, ghl) -> grlo, (glh, ghh) -> grhi
    let mut grlo_t = vec![T::zero(); wh2 * h];
    let mut grhi_t = vec![T::zero(); wh2 * h];
    let mut clo = vec![T::zero(); hh2];
    let mut chi = vec![T::zero(); hh2];
    let mut col = vec![T::zero(); h];
    for u in 0..wh2 {
        for v in 0..hh2 {
            clo[v] = gbands[0][v * wh2 + u];
            chi[v] = gbands[2][v * wh2 + u];
        }
        analyze_1d_adjoint(&clo, &chi, fb, &mut col);
        grlo_t[u * h..(u + 1) * h].copy_from_slice(&col);
        for v in 0..hh2 {
            clo[v] = gbands[1][v * wh2 + u];
            chi[v] = gbands[3][v * wh2 + u];
        }
        analyze_1d_adjoint(&clo, &chi, fb, &mut col);
        grhi_t[u * h..(u + 1) * h].copy_from_slice(&col);
    }
    let mut grlo = vec![T::zero(); h * wh2];
    let mut grhi = vec![T::zero(); h * wh2];
    transpose(&grlo_t, wh2, h, &mut grlo);
    transpose(&grhi_t, wh2, h, &mut grhi);
    // rows adjoint
    let mut gx = vec![T::zero(); h * w];
    for y in 0..h {
        analyze_1d_adjoint(
            &grlo[y * wh2..(y + 1) * wh2],
            &grhi[y * wh2..(y + 1) * wh2],
            fb,
            &mut gx[y * w..(y + 1) * w],
        );
    }
    gx
}

/// Adjoint of the 2-D synthesis on one plane.
fn idwt2_plane_adjoint<T: Scalar>(gx: &[T], h: usize, w: usize, fb: &FilterBank) -> [Vec<T>; 4] {
    let (hh2, wh2) = (h / 2, w / 2);
    // rows adjoint: gx rows -> grlo, grhi
    let mut grlo = vec![T::zero(); h * wh2];
    let mut grhi = vec![T::zero(); h * wh2];
    for y in 0..h {
        synthesize_1d_adjoint(
            &gx[y * w..(y + 1) * w],
            fb,
            &mut grlo[y * wh2..(y + 1) * wh2],
            &mut grhi[y * wh2..(y + 1) * wh2],
        );
    }
    // columns adjoint
    let mut t = vec![T::zero(); wh2 * h];
    let mut out = [
        vec![T::zero(); hh2 * wh2],
        vec![T::zero(); hh2 * wh2],
        vec![T::zero(); hh2 * wh2],
        vec![T::zero(); hh2 * wh2],
    ];
    let mut clo = vec![T::zero(); hh2];
    let mut chi = vec![T::zero(); hh2];
    transpose(&grlo, h, wh2, &mut t);
    for u in 0..wh2 {
        synthesize_1d_adjoint(&t[u * h..(u + 1) * h], fb, &mut clo, &mut chi);
        for v in 0..hh2 {
            out[0][v * wh2 + u] = clo[v];
            out[2][v * wh2 + u] = chi[v];
        }
    }
    transpose(&grhi, h, wh2, &mut t);
    for u in 0..wh2 {
        synthesize_1d_adjoint(&t[u * h..(u + 1) * h], fb, &mut clo, &mut chi);
        for v in 0..hh2 {
            out[1][v * wh2 + u] = clo[v];
            out[3][v * wh2 + u] = chi[v];
        }
    }
    out
}

struct Dwt2Grad {
    family: WaveletFamily,
}

impl<T: Scalar> GradFn<T> for Dwt2Grad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = ctx.input(0).shape();
        let fb = bank(self.family);
        let bplane = (s.h / 2) * (s.w / 2);
        let plane = s.h * s.w;
        let c = s.c;
        let mut gx = vec![T::zero(); s.len()];
        for n in 0..s.n {
            for ch in 0..c {
                let band = |b: usize| -> &[T] {
                    let base = ((n * 4 * c) + b * c + ch) * bplane;
                    &grad_out.data()[base..base + bplane]
                };
                let g = dwt2_plane_adjoint([band(0), band(1), band(2), band(3)], s.h, s.w, fb);
                gx[(n * c + ch) * plane..(n * c + ch + 1) * plane].copy_from_slice(&g);
            }
        }
        vec![Some(Tensor::new(s, gx))]
    }
}

struct Idwt2Grad {
    family: WaveletFamily,
}

impl<T: Scalar> GradFn<T> for Idwt2Grad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let bs = ctx.input(0).shape();
        let fb = bank(self.family);
        let c = bs.c / 4;
        let (h, w) = (bs.h * 2, bs.w * 2);
        let bplane = bs.h * bs.w;
        let plane = h * w;
        let mut gb = vec![T::zero(); bs.len()];
        for n in 0..bs.n {
            for ch in 0..c {
                let src = &grad_out.data()[(n * c + ch) * plane..(n * c + ch + 1) * plane];
                let bands = idwt2_plane_adjoint(src, h, w, fb);
                for (b, band) in bands.into_iter().enumerate() {
                    let base = ((n * 4 * c) + b * c + ch) * bplane;
                    gb[base..base + bplane].copy_from_slice(&band);
                }
            }
        }
        vec![Some(Tensor::new(bs, gb))]
    }
}

struct SpectralModulateGrad;

impl<T: Scalar> GradFn<T> for SpectralModulateGrad {
    fn backward(
        &self,
        ctx: &Ctx<'_, T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = ctx.input(0);
        let lam = ctx.input(1);
        let w = x.shape().w;
        let gy_spec = fourier::dft2(grad_out);
        let gx = needs[0].then(|| {
            let filtered = fourier::modulate(&gy_spec, lam);
            fourier::idft2(&filtered, w)
        });
        let glam = needs[1].then(|| {
            let x_spec = fourier::dft2(x);
            fourier::modulate_weight_grad(&x_spec, &gy_spec, w, lam.shape())
        });
        vec![gx, glam]
    }
}

impl<T: Scalar> Graph<T> {
    /// Single-level DWT to stacked bands (n, 4c, h/2, w/2), [LL|LH|HL|HH].
    pub fn dwt2(&mut self, x: NodeId, family: WaveletFamily) -> NodeId {
        let b = crate::spectral::wavelet::dwt2(self.value(x), family);
        let s = self.shape(x);
        let bs = b.ll.shape();
        let out_shape = Shape::new(s.n, 4 * s.c, bs.h, bs.w);
        let bplane = bs.h * bs.w;
        let mut data = vec![T::zero(); out_shape.len()];
        for n in 0..s.n {
            for (bi, band) in [&b.ll, &b.lh, &b.hl, &b.hh].into_iter().enumerate() {
                for ch in 0..s.c {
                    let dst = ((n * 4 * s.c) + bi * s.c + ch) * bplane;
                    let src = (n * s.c + ch) * bplane;
                    data[dst..dst + bplane].copy_from_slice(&band.data()[src..src + bplane]);
                }
            }
        }
        self.push_op(
            Tensor::new(out_shape, data),
            vec![x],
            Box::new(Dwt2Grad { family }),
        )
    }

    /// Inverse of [`Graph::dwt2`] from the stacked band layout.
    pub fn idwt2(&mut self, bands: NodeId, family: WaveletFamily) -> NodeId {
        let bs = self.shape(bands);
        assert!(
            bs.c % 4 == 0,
            "idwt2: stacked band tensor must have 4k channels, got {}",
            bs
        );
        let c = bs.c / 4;
        let (h, w) = (bs.h * 2, bs.w * 2);
        let out_shape = Shape::new(bs.n, c, h, w);
        let fb = bank(family);
        let bplane = bs.h * bs.w;
        let plane = h * w;
        let mut out = vec![T::zero(); out_shape.len()];
        {
            let bv = self.value(bands);
            for n in 0..bs.n {
                for ch in 0..c {
                    let band = |b: usize| -> &[T] {
                        let base = ((n * 4 * c) + b * c + ch) * bplane;
                        &bv.data()[base..base + bplane]
                    };
                    let rec = idwt2_plane([band(0), band(1), band(2), band(3)], h, w, fb);
                    out[(n * c + ch) * plane..(n * c + ch + 1) * plane].copy_from_slice(&rec);
                }
            }
        }
        self.push_op(
            Tensor::new(out_shape, out),
            vec![bands],
            Box::new(Idwt2Grad { family }),
        )
    }

    /// idft2(dft2(x) ⊙ lam): per-bin real scaling in the Fourier domain.
    /// `lam` has half-spectrum shape (1 or n, c, h, w/2+1).
    pub fn spectral_modulate(&mut self, x: NodeId, lam: NodeId) -> NodeId {
        let xs = self.shape(x);
        let ls = self.shape(lam);
        assert!(
            (ls.n == xs.n || ls.n == 1)
                && ls.c == xs.c
                && ls.h == xs.h
                && ls.w == half_width(xs.w),
            "spectral_modulate: weight shape {} does not match input {}",
            ls,
            xs
        );
        let spec = fourier::dft2(self.value(x));
        let filtered = fourier::modulate(&spec, self.value(lam));
        let y = fourier::idft2(&filtered, xs.w);
        self.push_op(y, vec![x, lam], Box::new(SpectralModulateGrad))
    }
}
