//! Full-reference quality metrics: PSNR (capped at 100 dB), RMSE, and mean
//! SSIM with the standard 11x11 Gaussian window, sigma 1.5, C1=(0.01)^2,
//! C2=(0.03)^2, computed per channel over valid window positions and
//! averaged.

use serde::Serialize;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ImageMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub per_image: Vec<(String, ImageMetrics)>,
    pub mean: ImageMetrics,
}

impl MetricReport {
    pub fn from_rows(per_image: Vec<(String, ImageMetrics)>) -> Self {
        assert!(!per_image.is_empty(), "metric report needs at least one image");
        let n = per_image.len() as f64;
        let mean = ImageMetrics {
            psnr_db: per_image.iter().map(|(_, m)| m.psnr_db).sum::<f64>() / n,
            ssim: per_image.iter().map(|(_, m)| m.ssim).sum::<f64>() / n,
            rmse: per_image.iter().map(|(_, m)| m.rmse).sum::<f64>() / n,
        };
        MetricReport { per_image, mean }
    }
}

fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "metric inputs must share shape");
    let n = a.len() as f64;
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

pub fn rmse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    mse(a, b).sqrt()
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB)
}

pub(crate) fn gaussian_window(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len - 1) as f64 / 2.0;
    let mut w: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Separable Gaussian filtering, valid region only.
fn gauss_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let vw = w - k + 1;
    let vh = h - k + 1;
    let mut rows = vec![0.0; h * vw];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, &wi) in win.iter().enumerate() {
                acc += wi * plane[y * w + x + i];
            }
            rows[y * vw + x] = acc;
        }
    }
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, &wi) in win.iter().enumerate() {
                acc += wi * rows[(y + i) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    (out, vh, vw)
}

/// Mean SSIM over channels and valid window positions.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let s = a.shape();
    assert_eq!(s, b.shape(), "metric inputs must share shape");
    assert!(
        s.h >= SSIM_WINDOW && s.w >= SSIM_WINDOW,
        "ssim needs at least {0}x{0} images, got {1}",
        SSIM_WINDOW,
        s
    );
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let plane = s.h * s.w;
    let mut total = 0.0;
    let mut count = 0usize;
    for pc in 0..s.n * s.c {
        let pa: Vec<f64> = a.data()[pc * plane..(pc + 1) * plane]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let pb: Vec<f64> = b.data()[pc * plane..(pc + 1) * plane]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(pb.iter()).map(|(x, y)| x * y).collect();
        let (mu_a, vh, vw) = gauss_valid(&pa, s.h, s.w, &win);
        let (mu_b, _, _) = gauss_valid(&pb, s.h, s.w, &win);
        let (m_aa, _, _) = gauss_valid(&paa, s.h, s.w, &win);
        let (m_bb, _, _) = gauss_valid(&pbb, s.h, s.w, &win);
        let (m_ab, _, _) = gauss_valid(&pab, s.h, s.w, &win);
        for i in 0..vh * vw {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

pub fn image_metrics<T: Scalar>(pred: &Tensor<T>, reference: &Tensor<T>) -> ImageMetrics {
    ImageMetrics {
        psnr_db: psnr(pred, reference, 1.0),
        ssim: ssim(pred, reference),
        rmse: rmse(pred, reference),
    }
}

/// Absolute-difference heat map scaled to [0,1] (max-normalized), averaged
/// over channels, for error-map export.
pub fn error_map<T: Scalar>(pred: &Tensor<T>, reference: &Tensor<T>) -> Tensor<f32> {
    let s = pred.shape();
    assert_eq!(s, reference.shape());
    let plane = s.h * s.w;
    let mut acc = vec![0.0f64; s.n * plane];
    for n in 0..s.n {
        for c in 0..s.c {
            for p in 0..plane {
                let i = (n * s.c + c) * plane + p;
                acc[n * plane + p] +=
                    (pred.data()[i].as_f64() - reference.data()[i].as_f64()).abs();
            }
        }
    }
    let max = acc.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    Tensor::new(
        crate::shape::Shape::new(s.n, 1, s.h, s.w),
        acc.into_iter().map(|v| (v / max) as f32).collect(),
    )
}
