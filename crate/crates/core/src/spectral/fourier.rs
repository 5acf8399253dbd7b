//! Real-input 2-D DFT storing the non-redundant half-spectrum.
//!
//! Forward is unnormalized, inverse carries the 1/(h*w) factor. The stored
//! width is w/2+1 complex bins; the remaining columns are reconstructed
//! from Hermitian symmetry on inversion, so `idft2(dft2(x), w) == x` up to
//! roundoff for any real input.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Non-redundant spectrum of a real rank-4 tensor: `re`/`im` have shape
/// (n, c, h, w/2+1) for a spatial width w.
#[derive(Clone, Debug)]
pub struct HalfSpectrum<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Scalar> HalfSpectrum<T> {
    pub fn shape(&self) -> Shape {
        self.re.shape()
    }
}

/// Stored width of the half-spectrum for a spatial width `w`.
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// How many full-spectrum bins a stored column represents (1 for the DC
/// and, at even widths, the Nyquist column; 2 elsewhere).
pub fn column_multiplicity(u: usize, w: usize) -> usize {
    if u == 0 || (w % 2 == 0 && u == w / 2) {
        1
    } else {
        2
    }
}

/// Full complex 2-D FFT of one plane, in place, rows then columns.
fn fft2_plane<T: Scalar>(
    buf: &mut [Complex<T>],
    h: usize,
    w: usize,
    planner: &mut FftPlanner<T>,
    inverse: bool,
) {
    let dir = if inverse {
        rustfft::FftDirection::Inverse
    } else {
        rustfft::FftDirection::Forward
    };
    let row_fft = planner.plan_fft(w, dir);
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(h, dir);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); h];
    for u in 0..w {
        for v in 0..h {
            scratch[v] = buf[v * w + u];
        }
        col_fft.process(&mut scratch);
        for v in 0..h {
            buf[v * w + u] = scratch[v];
        }
    }
}

/// Unnormalized forward transform of a real tensor.
pub fn dft2<T: Scalar>(x: &Tensor<T>) -> HalfSpectrum<T> {
    let s = x.shape();
    let wh = half_width(s.w);
    let out_shape = Shape::new(s.n, s.c, s.h, wh);
    let mut re = vec![T::zero(); out_shape.len()];
    let mut im = vec![T::zero(); out_shape.len()];
    let mut planner = FftPlanner::new();
    let plane = s.h * s.w;
    for pc in 0..s.n * s.c {
        let src = &x.data()[pc * plane..(pc + 1) * plane];
        let mut buf: Vec<Complex<T>> = src.iter().map(|&v| Complex::new(v, T::zero())).collect();
        fft2_plane(&mut buf, s.h, s.w, &mut planner, false);
        for v in 0..s.h {
            for u in 0..wh {
                let o = pc * s.h * wh + v * wh + u;
                re[o] = buf[v * s.w + u].re;
                im[o] = buf[v * s.w + u].im;
            }
        }
    }
    HalfSpectrum {
        re: Tensor::new(out_shape, re),
        im: Tensor::new(out_shape, im),
    }
}

/// Inverse transform back to a real tensor of spatial width `out_w`,
/// normalized by 1/(h*w). The imaginary residue is discarded (it is at
/// roundoff level for spectra with Hermitian-consistent modulation).
pub fn idft2<T: Scalar>(s: &HalfSpectrum<T>, out_w: usize) -> Tensor<T> {
    let ss = s.shape();
    assert_eq!(
        ss.w,
        half_width(out_w),
        "idft2: half-spectrum width {} does not match out_w {}",
        ss.w,
        out_w
    );
    let (h, w) = (ss.h, out_w);
    let out_shape = Shape::new(ss.n, ss.c, h, w);
    let mut out = vec![T::zero(); out_shape.len()];
    let mut planner = FftPlanner::new();
    let norm = T::one() / T::of_f64((h * w) as f64);
    for pc in 0..ss.n * ss.c {
        let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
        for v in 0..h {
            for u in 0..w {
                let (sv, su, conj) = if u < ss.w {
                    (v, u, false)
                } else {
                    ((h - v) % h, w - u, true)
                };
                let o = pc * h * ss.w + sv * ss.w + su;
                let c = Complex::new(s.re.data()[o], s.im.data()[o]);
                buf[v * w + u] = if conj { c.conj() } else { c };
            }
        }
        fft2_plane(&mut buf, h, w, &mut planner, true);
        for (i, c) in buf.iter().enumerate() {
            out[pc * h * w + i] = c.re * norm;
        }
    }
    Tensor::new(out_shape, out)
}

/// Per-bin real scaling of a half-spectrum. `lam` is (1 or n, c, h, w/2+1)
/// and broadcasts over the batch axis.
pub fn modulate<T: Scalar>(s: &HalfSpectrum<T>, lam: &Tensor<T>) -> HalfSpectrum<T> {
    let ss = s.shape();
    let ls = lam.shape();
    assert!(
        (ls.n == ss.n || ls.n == 1) && ls.c == ss.c && ls.h == ss.h && ls.w == ss.w,
        "modulate: weight shape {} does not match spectrum {}",
        ls,
        ss
    );
    let plane = ss.c * ss.h * ss.w;
    let scale_at = |i: usize| -> T {
        if ls.n == 1 {
            lam.data()[i % plane]
        } else {
            lam.data()[i]
        }
    };
    let mut re = Vec::with_capacity(ss.len());
    let mut im = Vec::with_capacity(ss.len());
    for i in 0..ss.len() {
        let k = scale_at(i);
        re.push(s.re.data()[i] * k);
        im.push(s.im.data()[i] * k);
    }
    HalfSpectrum {
        re: Tensor::new(ss, re),
        im: Tensor::new(ss, im),
    }
}

/// Gradient of sum_p gy_p * [idft2(modulate(dft2(x), lam))]_p with respect
/// to the real per-bin weight: mult(u)/(h*w) * Re(X * conj(GY)) per stored
/// bin, reduced over the batch when `lam` is batch-shared.
pub fn modulate_weight_grad<T: Scalar>(
    x_spec: &HalfSpectrum<T>,
    gy_spec: &HalfSpectrum<T>,
    spatial_w: usize,
    lam_shape: Shape,
) -> Tensor<T> {
    let ss = x_spec.shape();
    let h = ss.h;
    let norm = T::one() / T::of_f64((h * spatial_w) as f64);
    let full = Tensor::from_fn(ss, |n, c, v, u| {
        let i = ss.idx(n, c, v, u);
        let xr = x_spec.re.data()[i];
        let xi = x_spec.im.data()[i];
        let gr = gy_spec.re.data()[i];
        let gi = gy_spec.im.data()[i];
        // Re(X * conj(GY))
        let re = xr * gr + xi * gi;
        T::of_f64(column_multiplicity(u, spatial_w) as f64) * norm * re
    });
    crate::graph::reduce_grad(&full, lam_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Naive O(n^2) reference DFT of one plane.
    fn naive_dft_plane(x: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::new(0.0, 0.0); h * w];
        for v in 0..h {
            for u in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((v * y) as f64 / h as f64 + (u * xx) as f64 / w as f64);
                        acc += Complex::new(ang.cos(), ang.sin()) * x[y * w + xx];
                    }
                }
                out[v * w + u] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_image_has_only_dc() {
        let c = 0.37;
        let x = Tensor::<f64>::full(Shape::new(1, 1, 8, 8), c);
        let s = dft2(&x);
        assert_eq!(s.shape(), Shape::new(1, 1, 8, 5));
        assert!((s.re.at(0, 0, 0, 0) - 64.0 * c).abs() < 1e-10);
        for v in 0..8 {
            for u in 0..5 {
                if v == 0 && u == 0 {
                    continue;
                }
                assert!(s.re.at(0, 0, v, u).abs() < 1e-10);
                assert!(s.im.at(0, 0, v, u).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn roundtrip_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 16, 16), -1.0, 1.0, &mut rng);
        let back = idft2(&dft2(&x), 16);
        assert!(x.max_abs_diff(&back) < 1e-10);
    }

    #[test]
    fn roundtrip_odd_width() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 6, 7), -1.0, 1.0, &mut rng);
        let back = idft2(&dft2(&x), 7);
        assert!(x.max_abs_diff(&back) < 1e-10);
    }

    #[test]
    fn matches_naive_dft_on_8x8() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 8, 8), -1.0, 1.0, &mut rng);
        let s = dft2(&x);
        let naive = naive_dft_plane(x.data(), 8, 8);
        for v in 0..8 {
            for u in 0..5 {
                let nv = naive[v * 8 + u];
                assert!((s.re.at(0, 0, v, u) - nv.re).abs() < 1e-9);
                assert!((s.im.at(0, 0, v, u) - nv.im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dft_linearity_and_shift_theorem() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let (h, w) = (8, 8);
        let a = Tensor::<f64>::rand_uniform(Shape::new(1, 1, h, w), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(Shape::new(1, 1, h, w), -1.0, 1.0, &mut rng);
        // linearity
        let mix = a.zip(&b, |x, y| 2.0 * x - 3.0 * y);
        let sm = dft2(&mix);
        let (sa, sb) = (dft2(&a), dft2(&b));
        for i in 0..sm.re.len() {
            let er = 2.0 * sa.re.data()[i] - 3.0 * sb.re.data()[i];
            let ei = 2.0 * sa.im.data()[i] - 3.0 * sb.im.data()[i];
            assert!((sm.re.data()[i] - er).abs() < 1e-9);
            assert!((sm.im.data()[i] - ei).abs() < 1e-9);
        }
        // shift theorem: x shifted by (dy, dx) multiplies bin (v, u) by
        // exp(-2 pi i (v dy / h + u dx / w))
        let (dy, dx) = (3usize, 2usize);
        let shifted = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
            a.at(0, 0, (y + h - dy) % h, (x + w - dx) % w)
        });
        let ss = dft2(&shifted);
        for v in 0..h {
            for u in 0..half_width(w) {
                let ang = -2.0 * std::f64::consts::PI
                    * ((v * dy) as f64 / h as f64 + (u * dx) as f64 / w as f64);
                let ph = Complex::new(ang.cos(), ang.sin());
                let orig = Complex::new(sa.re.at(0, 0, v, u), sa.im.at(0, 0, v, u));
                let expect = orig * ph;
                assert!((ss.re.at(0, 0, v, u) - expect.re).abs() < 1e-9);
                assert!((ss.im.at(0, 0, v, u) - expect.im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn parseval_with_half_spectrum_multiplicity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let (h, w) = (16, 16);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 1, h, w), -1.0, 1.0, &mut rng);
        let s = dft2(&x);
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let mut spec = 0.0;
        for v in 0..h {
            for u in 0..half_width(w) {
                let p = s.re.at(0, 0, v, u).powi(2) + s.im.at(0, 0, v, u).powi(2);
                spec += column_multiplicity(u, w) as f64 * p;
            }
        }
        spec /= (h * w) as f64;
        assert!((spatial - spec).abs() < 1e-9, "{} vs {}", spatial, spec);
    }

    #[test]
    fn modulate_identity_and_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 8, 8), -1.0, 1.0, &mut rng);
        let s = dft2(&x);
        let ones = Tensor::<f64>::full(Shape::new(1, 2, 8, 5), 1.0);
        let y = idft2(&modulate(&s, &ones), 8);
        assert!(x.max_abs_diff(&y) < 1e-10);
        let zeros = Tensor::<f64>::zeros(Shape::new(1, 2, 8, 5));
        let z = idft2(&modulate(&s, &zeros), 8);
        assert!(z.max_abs() < 1e-12);
    }

    #[test]
    fn modulate_commutes_with_input_scaling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 8, 8), -1.0, 1.0, &mut rng);
        let lam = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 8, 5), 0.0, 2.0, &mut rng);
        let a = idft2(&modulate(&dft2(&x.scale(3.0)), &lam), 8);
        let b = idft2(&modulate(&dft2(&x), &lam), 8).scale(3.0);
        assert!(a.max_abs_diff(&b) < 1e-10);
    }
}
