//! Degradation simulator: y = downsample(blur(x)) + noise, with both
//! composition orders exposed because the theory and the dataset recipe
//! disagree. Deterministic under (input, spec) including the seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlurKind {
    None,
    Motion { length: usize, angle_deg: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationOrder {
    BlurThenDown,
    DownThenBlur,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub scale: usize,
    pub blur: BlurKind,
    /// Gaussian noise standard deviation on the [0,1] range.
    pub noise_sigma: f64,
    pub order: DegradationOrder,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn validate(&self) -> crate::Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(crate::Error::Config(format!(
                "degradation scale must be 2 or 4, got {}",
                self.scale
            )));
        }
        if let BlurKind::Motion { length, .. } = self.blur {
            if length < 1 {
                return Err(crate::Error::Config("motion blur length must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Anti-aliased line-segment kernel on a (length+2)^2 grid, sum 1.
/// Angle 0 is horizontal; length 1 degenerates to a delta.
pub fn motion_blur_kernel(length: usize, angle_deg: f64) -> Tensor<f64> {
    assert!(length >= 1, "motion blur length must be >= 1, got {}", length);
    let size = length + 2;
    let mut k = vec![0.0f64; size * size];
    let center = (size - 1) as f64 / 2.0;
    let theta = angle_deg.to_radians();
    let (dx, dy) = (theta.cos(), -theta.sin());
    let half = (length - 1) as f64 / 2.0;
    let samples = (length * 64).max(64);
    let weight = 1.0 / samples as f64;
    for i in 0..samples {
        // midpoint sampling along the segment
        let t = if length == 1 {
            0.0
        } else {
            -half + (i as f64 + 0.5) / samples as f64 * (length - 1) as f64
        };
        let x = center + t * dx;
        let y = center + t * dy;
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        // bilinear splat
        k[y0 * size + x0] += weight * (1.0 - fx) * (1.0 - fy);
        k[y0 * size + x0 + 1] += weight * fx * (1.0 - fy);
        k[(y0 + 1) * size + x0] += weight * (1.0 - fx) * fy;
        k[(y0 + 1) * size + x0 + 1] += weight * fx * fy;
    }
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    Tensor::new(Shape::new(1, 1, size, size), k)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    // symmetric (half-point) reflection: -1 -> 0, n -> n-1
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// 2-D correlation with an arbitrary kernel, reflective borders.
pub fn apply_blur<T: Scalar>(img: &Tensor<T>, kernel: &Tensor<f64>) -> Tensor<T> {
    let s = img.shape();
    let ks = kernel.shape();
    assert_eq!(ks.n * ks.c, 1, "blur kernel must be a single plane");
    let (kh, kw) = (ks.h, ks.w);
    let (ay, ax) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![T::zero(); s.len()];
    let plane = s.h * s.w;
    for pc in 0..s.n * s.c {
        let src = &img.data()[pc * plane..(pc + 1) * plane];
        let dst = &mut out[pc * plane..(pc + 1) * plane];
        for y in 0..s.h {
            for x in 0..s.w {
                let mut acc = 0.0f64;
                for ky in 0..kh {
                    let iy = reflect(y as isize + ky as isize - ay, s.h);
                    for kx in 0..kw {
                        let ix = reflect(x as isize + kx as isize - ax, s.w);
                        acc += kernel.data()[ky * kw + kx] * src[iy * s.w + ix].as_f64();
                    }
                }
                dst[y * s.w + x] = T::of_f64(acc);
            }
        }
    }
    Tensor::new(s, out)
}

/// Keys cubic convolution kernel, a = -1/2.
pub fn keys_kernel(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

fn resample_axis_taps(out_len: usize, in_len: usize) -> Vec<[(usize, f64); 4]> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor() as isize;
            let mut taps = [(0usize, 0.0f64); 4];
            for (j, tap) in taps.iter_mut().enumerate() {
                let idx = base - 1 + j as isize;
                let w = keys_kernel(src - idx as f64);
                let clamped = idx.clamp(0, in_len as isize - 1) as usize;
                *tap = (clamped, w);
            }
            taps
        })
        .collect()
}

/// Separable Keys bicubic resampling (interpolating kernel, edge clamp).
pub fn bicubic_resample<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let s = img.shape();
    let row_taps = resample_axis_taps(out_w, s.w);
    let col_taps = resample_axis_taps(out_h, s.h);
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = vec![T::zero(); out_shape.len()];
    let in_plane = s.h * s.w;
    let mid_plane = s.h * out_w;
    let out_plane = out_h * out_w;
    let mut mid = vec![0.0f64; mid_plane];
    for pc in 0..s.n * s.c {
        let src = &img.data()[pc * in_plane..(pc + 1) * in_plane];
        // rows
        for y in 0..s.h {
            for (ox, taps) in row_taps.iter().enumerate() {
                let mut acc = 0.0;
                for &(ix, w) in taps {
                    acc += w * src[y * s.w + ix].as_f64();
                }
                mid[y * out_w + ox] = acc;
            }
        }
        // columns
        let dst = &mut out[pc * out_plane..(pc + 1) * out_plane];
        for (oy, taps) in col_taps.iter().enumerate() {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for &(iy, w) in taps {
                    acc += w * mid[iy * out_w + ox];
                }
                dst[oy * out_w + ox] = T::of_f64(acc);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Scale an image by an integer or reciprocal factor.
pub fn bicubic_by_factor<T: Scalar>(img: &Tensor<T>, num: usize, den: usize) -> Tensor<T> {
    let s = img.shape();
    assert!(
        (s.h * num) % den == 0 && (s.w * num) % den == 0,
        "bicubic factor {}/{} does not divide {}x{}",
        num,
        den,
        s.h,
        s.w
    );
    bicubic_resample(img, s.h * num / den, s.w * num / den)
}

/// Additive zero-mean Gaussian noise; sigma <= 0 is a no-op. No clamp —
/// clamping happens at image export.
pub fn add_noise<T: Scalar>(img: &Tensor<T>, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let data = img
        .data()
        .iter()
        .map(|&v| T::of_f64(v.as_f64() + normal.sample(rng)))
        .collect();
    Tensor::new(img.shape(), data)
}

/// Produce (lr_blur, lr_gt) from an HQ image. lr_gt is always the plain
/// bicubic downsample; lr_blur follows the configured order.
pub fn degrade<T: Scalar>(hq: &Tensor<T>, spec: &DegradationSpec) -> (Tensor<T>, Tensor<T>) {
    let s = hq.shape();
    assert!(
        s.h % spec.scale == 0 && s.w % spec.scale == 0,
        "HQ dims {} not divisible by scale {}",
        s,
        spec.scale
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lr_gt = bicubic_by_factor(hq, 1, spec.scale);
    let kernel = match spec.blur {
        BlurKind::None => None,
        BlurKind::Motion { length, angle_deg } => Some(motion_blur_kernel(length, angle_deg)),
    };
    let lr_blur = match (spec.order, &kernel) {
        (_, None) => lr_gt.clone(),
        (DegradationOrder::BlurThenDown, Some(k)) => {
            bicubic_by_factor(&apply_blur(hq, k), 1, spec.scale)
        }
        (DegradationOrder::DownThenBlur, Some(k)) => apply_blur(&lr_gt, k),
    };
    let lr_blur = add_noise(&lr_blur, spec.noise_sigma, &mut rng);
    (lr_blur, lr_gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_one_kernel_is_delta() {
        let k = motion_blur_kernel(1, 37.0);
        assert_eq!(k.shape(), Shape::new(1, 1, 3, 3));
        assert!((k.at(0, 0, 1, 1) - 1.0).abs() < 1e-12);
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernels_sum_to_one() {
        for (len, ang) in [(3, 0.0), (5, 45.0), (9, 120.0), (15, 179.0)] {
            let k = motion_blur_kernel(len, ang);
            assert!((k.sum() - 1.0).abs() < 1e-12, "len {} angle {}", len, ang);
        }
    }

    #[test]
    fn horizontal_kernel_confined_to_center_row() {
        let k = motion_blur_kernel(5, 0.0);
        let s = k.shape();
        let center = (s.h - 1) / 2;
        for y in 0..s.h {
            for x in 0..s.w {
                if y != center {
                    assert!(k.at(0, 0, y, x).abs() < 1e-12, "mass off-row at ({},{})", y, x);
                }
            }
        }
    }

    #[test]
    fn delta_kernel_blur_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng);
        let k = motion_blur_kernel(1, 90.0);
        let out = apply_blur(&img, &k);
        assert!(img.max_abs_diff(&out) < 1e-12);
    }

    #[test]
    fn constant_invariant_under_blur_and_bicubic() {
        let img = Tensor::<f64>::full(Shape::new(1, 1, 16, 16), 0.6);
        let k = motion_blur_kernel(7, 33.0);
        assert!(apply_blur(&img, &k).map(|v| v - 0.6).max_abs() < 1e-12);
        assert!(bicubic_by_factor(&img, 1, 2).map(|v| v - 0.6).max_abs() < 1e-12);
        assert!(bicubic_resample(&img, 32, 32).map(|v| v - 0.6).max_abs() < 1e-12);
    }

    #[test]
    fn blur_never_increases_max_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 12, 12), -1.0, 1.0, &mut rng);
        let k = motion_blur_kernel(9, 70.0);
        let out = apply_blur(&img, &k);
        assert!(out.max_abs() <= img.max_abs() + 1e-12);
    }

    #[test]
    fn keys_reproduces_linear_ramps() {
        // exact on interior pixels for down and up resampling at any
        // sampling phase: cubic convolution reproduces degree-1 polynomials
        let ramp = Tensor::<f64>::from_fn(Shape::new(1, 1, 16, 16), |_, _, y, x| {
            0.3 * x as f64 + 0.2 * y as f64
        });
        for (oh, ow) in [(8, 8), (32, 32), (24, 12)] {
            let out = bicubic_resample(&ramp, oh, ow);
            let sy = 16.0 / oh as f64;
            let sx = 16.0 / ow as f64;
            for oy in 2..oh - 2 {
                for ox in 2..ow - 2 {
                    let src_y = (oy as f64 + 0.5) * sy - 0.5;
                    let src_x = (ox as f64 + 0.5) * sx - 0.5;
                    // skip outputs whose 4-tap support touches the border
                    if src_y < 2.0 || src_y > 13.0 || src_x < 2.0 || src_x > 13.0 {
                        continue;
                    }
                    let expect = 0.3 * src_x + 0.2 * src_y;
                    let got = out.at(0, 0, oy, ox);
                    assert!(
                        (got - expect).abs() < 1e-12,
                        "({},{}) at {}x{}: {} vs {}",
                        oy,
                        ox,
                        oh,
                        ow,
                        got,
                        expect
                    );
                }
            }
        }
    }

    #[test]
    fn degrade_degenerate_spec_gives_equal_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hq = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let spec = DegradationSpec {
            scale: 2,
            blur: BlurKind::None,
            noise_sigma: 0.0,
            order: DegradationOrder::DownThenBlur,
            seed: 5,
        };
        let (lr_blur, lr_gt) = degrade(&hq, &spec);
        assert!(lr_blur.bitwise_eq(&lr_gt));
        assert_eq!(lr_gt.shape(), Shape::new(1, 3, 8, 8));
    }

    #[test]
    fn degrade_is_deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hq = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let spec = DegradationSpec {
            scale: 2,
            blur: BlurKind::Motion {
                length: 5,
                angle_deg: 30.0,
            },
            noise_sigma: 0.01,
            order: DegradationOrder::DownThenBlur,
            seed: 42,
        };
        let (a1, b1) = degrade(&hq, &spec);
        let (a2, b2) = degrade(&hq, &spec);
        assert!(a1.bitwise_eq(&a2));
        assert!(b1.bitwise_eq(&b2));
    }

    #[test]
    fn both_orders_are_supported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hq = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let mk = |order| DegradationSpec {
            scale: 2,
            blur: BlurKind::Motion {
                length: 5,
                angle_deg: 10.0,
            },
            noise_sigma: 0.0,
            order,
            seed: 9,
        };
        let (btd, _) = degrade(&hq, &mk(DegradationOrder::BlurThenDown));
        let (dtb, _) = degrade(&hq, &mk(DegradationOrder::DownThenBlur));
        assert_eq!(btd.shape(), dtb.shape());
        // orders differ in general
        assert!(btd.max_abs_diff(&dtb) > 1e-6);
    }

    #[test]
    fn noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 1_000_000usize;
        let zeros = Tensor::<f64>::zeros(Shape::new(1, 1, 1000, 1000));
        let sigma = 0.05;
        let noisy = add_noise(&zeros, sigma, &mut rng);
        let mean: f64 = noisy.data().iter().sum::<f64>() / n as f64;
        let var: f64 = noisy.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * sigma / 1e3, "empirical mean {}", mean);
        assert!(
            (var - sigma * sigma).abs() < 0.01 * sigma * sigma,
            "empirical variance {} vs {}",
            var,
            sigma * sigma
        );
    }

    #[test]
    fn spec_json_roundtrip_exact() {
        let spec = DegradationSpec {
            scale: 4,
            blur: BlurKind::Motion {
                length: 11,
                angle_deg: 123.456789,
            },
            noise_sigma: 0.01,
            order: DegradationOrder::BlurThenDown,
            seed: 987654321,
        };
        let s = serde_json::to_string(&spec).unwrap();
        let back: DegradationSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
    }
}
