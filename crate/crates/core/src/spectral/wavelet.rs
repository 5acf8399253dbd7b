//! Single-level 2-D DWT with periodic boundary handling.
//!
//! All five families produce four bands of exactly half the spatial size
//! and reconstruct the input to roundoff. Orthonormal banks (haar, db2,
//! db3) synthesize with the adjoint of the analysis operator; the
//! biorthogonal banks carry their own synthesis filters plus the alignment
//! shifts that make the circular filter bank an exact inverse.

use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    Db2,
    Db3,
    #[serde(rename = "bior2.2")]
    Bior22,
    #[serde(rename = "bior3.3")]
    Bior33,
}

impl WaveletFamily {
    pub const ALL: [WaveletFamily; 5] = [
        WaveletFamily::Haar,
        WaveletFamily::Db2,
        WaveletFamily::Db3,
        WaveletFamily::Bior22,
        WaveletFamily::Bior33,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WaveletFamily::Haar => "haar",
            WaveletFamily::Db2 => "db2",
            WaveletFamily::Db3 => "db3",
            WaveletFamily::Bior22 => "bior2.2",
            WaveletFamily::Bior33 => "bior3.3",
        }
    }

    pub fn is_orthonormal(&self) -> bool {
        matches!(
            self,
            WaveletFamily::Haar | WaveletFamily::Db2 | WaveletFamily::Db3
        )
    }
}

impl FromStr for WaveletFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "haar" => Ok(WaveletFamily::Haar),
            "db2" => Ok(WaveletFamily::Db2),
            "db3" => Ok(WaveletFamily::Db3),
            "bior2.2" => Ok(WaveletFamily::Bior22),
            "bior3.3" => Ok(WaveletFamily::Bior33),
            other => Err(format!(
                "unknown wavelet family '{}' (expected haar|db2|db3|bior2.2|bior3.3)",
                other
            )),
        }
    }
}

/// Analysis/synthesis filters plus circular alignment: the high-pass
/// analysis taps start at `sh_d`, the high-pass synthesis taps at `sh_r`,
/// and every synthesis tap lands at 2k + m + off (mod n).
pub(crate) struct FilterBank {
    pub d_lo: Vec<f64>,
    pub d_hi: Vec<f64>,
    pub r_lo: Vec<f64>,
    pub r_hi: Vec<f64>,
    pub sh_d: isize,
    pub sh_r: isize,
    pub off: isize,
}

fn alternating(f: &[f64], parity: usize) -> Vec<f64> {
    f.iter()
        .enumerate()
        .map(|(m, &c)| if (m + parity) % 2 == 0 { c } else { -c })
        .collect()
}

fn orthonormal_bank(d_lo: Vec<f64>) -> FilterBank {
    let l = d_lo.len();
    let d_hi: Vec<f64> = (0..l)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sign * d_lo[l - 1 - m]
        })
        .collect();
    FilterBank {
        r_lo: d_lo.clone(),
        r_hi: d_hi.clone(),
        d_lo,
        d_hi,
        sh_d: 0,
        sh_r: 0,
        off: 0,
    }
}

fn build_bank(family: WaveletFamily) -> FilterBank {
    let rt2 = std::f64::consts::SQRT_2;
    match family {
        WaveletFamily::Haar => orthonormal_bank(vec![1.0 / rt2, 1.0 / rt2]),
        WaveletFamily::Db2 => {
            let s3 = 3.0_f64.sqrt();
            let d = 4.0 * rt2;
            orthonormal_bank(vec![
                (1.0 + s3) / d,
                (3.0 + s3) / d,
                (3.0 - s3) / d,
                (1.0 - s3) / d,
            ])
        }
        WaveletFamily::Db3 => {
            let a = 10.0_f64.sqrt();
            let b = (5.0 + 2.0 * a).sqrt();
            let s = 16.0 * rt2;
            orthonormal_bank(vec![
                (1.0 + a + b) / s,
                (5.0 + a + 3.0 * b) / s,
                (10.0 - 2.0 * a + 2.0 * b) / s,
                (10.0 - 2.0 * a - 2.0 * b) / s,
                (5.0 + a - 3.0 * b) / s,
                (1.0 + a - b) / s,
            ])
        }
        WaveletFamily::Bior22 => {
            let d_lo: Vec<f64> = [-1.0, 2.0, 6.0, 2.0, -1.0]
                .iter()
                .map(|v| v * rt2 / 8.0)
                .collect();
            let r_lo: Vec<f64> = [1.0, 2.0, 1.0].iter().map(|v| v * rt2 / 4.0).collect();
            let d_hi = alternating(&r_lo, 0);
            let r_hi = alternating(&d_lo, 1);
            FilterBank {
                d_lo,
                d_hi,
                r_lo,
                r_hi,
                sh_d: 0,
                sh_r: -2,
                off: 1,
            }
        }
        WaveletFamily::Bior33 => {
            let d_lo: Vec<f64> = [3.0, -9.0, -7.0, 45.0, 45.0, -7.0, -9.0, 3.0]
                .iter()
                .map(|v| v * rt2 / 64.0)
                .collect();
            let r_lo: Vec<f64> = [1.0, 3.0, 3.0, 1.0].iter().map(|v| v * rt2 / 8.0).collect();
            let d_hi = alternating(&r_lo, 0);
            let r_hi = alternating(&d_lo, 0);
            FilterBank {
                d_lo,
                d_hi,
                r_lo,
                r_hi,
                sh_d: 0,
                sh_r: -4,
                off: 2,
            }
        }
    }
}

pub(crate) fn bank(family: WaveletFamily) -> &'static FilterBank {
    static BANKS: OnceLock<[FilterBank; 5]> = OnceLock::new();
    let banks = BANKS.get_or_init(|| {
        [
            build_bank(WaveletFamily::Haar),
            build_bank(WaveletFamily::Db2),
            build_bank(WaveletFamily::Db3),
            build_bank(WaveletFamily::Bior22),
            build_bank(WaveletFamily::Bior33),
        ]
    });
    let idx = WaveletFamily::ALL
        .iter()
        .position(|f| *f == family)
        .unwrap();
    &banks[idx]
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// One circular analysis pass: x (len n) -> (lo, hi) of len n/2.
pub(crate) fn analyze_1d<T: Scalar>(x: &[T], fb: &FilterBank, lo: &mut [T], hi: &mut [T]) {
    let n = x.len();
    debug_assert!(n % 2 == 0);
    for k in 0..n / 2 {
        let mut a = T::zero();
        for (m, &c) in fb.d_lo.iter().enumerate() {
            a += T::of_f64(c) * x[wrap((2 * k + m) as isize, n)];
        }
        lo[k] = a;
        let mut d = T::zero();
        for (m, &c) in fb.d_hi.iter().enumerate() {
            d += T::of_f64(c) * x[wrap(2 * k as isize + m as isize + fb.sh_d, n)];
        }
        hi[k] = d;
    }
}

/// Adjoint of [`analyze_1d`] (scatter with the analysis filters).
pub(crate) fn analyze_1d_adjoint<T: Scalar>(glo: &[T], ghi: &[T], fb: &FilterBank, gx: &mut [T]) {
    let n = gx.len();
    for v in gx.iter_mut() {
        *v = T::zero();
    }
    for k in 0..n / 2 {
        for (m, &c) in fb.d_lo.iter().enumerate() {
            gx[wrap((2 * k + m) as isize, n)] += T::of_f64(c) * glo[k];
        }
        for (m, &c) in fb.d_hi.iter().enumerate() {
            gx[wrap(2 * k as isize + m as isize + fb.sh_d, n)] += T::of_f64(c) * ghi[k];
        }
    }
}

/// One circular synthesis pass: (lo, hi) of len n/2 -> x of len n.
pub(crate) fn synthesize_1d<T: Scalar>(lo: &[T], hi: &[T], fb: &FilterBank, x: &mut [T]) {
    let n = x.len();
    for v in x.iter_mut() {
        *v = T::zero();
    }
    for k in 0..n / 2 {
        for (m, &c) in fb.r_lo.iter().enumerate() {
            x[wrap(2 * k as isize + m as isize + fb.off, n)] += T::of_f64(c) * lo[k];
        }
        for (m, &c) in fb.r_hi.iter().enumerate() {
            x[wrap(2 * k as isize + m as isize + fb.sh_r + fb.off, n)] += T::of_f64(c) * hi[k];
        }
    }
}

/// Adjoint of [`synthesize_1d`] (gather with the synthesis filters).
pub(crate) fn synthesize_1d_adjoint<T: Scalar>(gx: &[T], fb: &FilterBank, glo: &mut [T], ghi: &mut [T]) {
    let n = gx.len();
    for k in 0..n / 2 {
        let mut a = T::zero();
        for (m, &c) in fb.r_lo.iter().enumerate() {
            a += T::of_f64(c) * gx[wrap(2 * k as isize + m as isize + fb.off, n)];
        }
        glo[k] = a;
        let mut d = T::zero();
        for (m, &c) in fb.r_hi.iter().enumerate() {
            d += T::of_f64(c) * gx[wrap(2 * k as isize + m as isize + fb.sh_r + fb.off, n)];
        }
        ghi[k] = d;
    }
}

fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Four equal-shape sub-bands of a single-level 2-D DWT.
///
/// `lh` is high-pass along width (horizontal detail), `hl` high-pass along
/// height, `hh` both.
#[derive(Clone, Debug)]
pub struct WaveletBands<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    pub family: WaveletFamily,
}

/// 2-D analysis of one plane: returns [ll, lh, hl, hh] quarter planes.
pub(crate) fn dwt2_plane<T: Scalar>(
    src: &[T],
    h: usize,
    w: usize,
    fb: &FilterBank,
) -> [Vec<T>; 4] {
    let (hh2, wh2) = (h / 2, w / 2);
    // rows
    let mut rlo = vec![T::zero(); h * wh2];
    let mut rhi = vec![T::zero(); h * wh2];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        analyze_1d(row, fb, &mut rlo[y * wh2..(y + 1) * wh2], &mut rhi[y * wh2..(y + 1) * wh2]);
    }
    // columns via transpose
    let mut t = vec![T::zero(); h * wh2];
    let mut out = [
        vec![T::zero(); hh2 * wh2],
        vec![T::zero(); hh2 * wh2],
        vec![T::zero(); hh2 * wh2],
        vec![T::zero(); hh2 * wh2],
    ];
    // rlo columns -> (ll, hl)
    transpose(&rlo, h, wh2, &mut t);
    let mut clo = vec![T::zero(); hh2];
    let mut chi = vec![T::zero(); hh2];
    for u in 0..wh2 {
        analyze_1d(&t[u * h..(u + 1) * h], fb, &mut clo, &mut chi);
        for v in 0..hh2 {
            out[0][v * wh2 + u] = clo[v];
            out[2][v * wh2 + u] = chi[v];
        }
    }
    // rhi columns -> (lh, hh)
    transpose(&rhi, h, wh2, &mut t);
    for u in 0..wh2 {
        analyze_1d(&t[u * h..(u + 1) * h], fb, &mut clo, &mut chi);
        for v in 0..hh2 {
            out[1][v * wh2 + u] = clo[v];
            out[3][v * wh2 + u] = chi[v];
        }
    }
    out
}

/// 2-D synthesis of one plane from [ll, lh, hl, hh].
pub(crate) fn idwt2_plane<T: Scalar>(
    bands: [&[T]; 4],
    h: usize,
    w: usize,
    fb: &FilterBank,
) -> Vec<T> {
    let (hh2, wh2) = (h / 2, w / 2);
    // columns first (inverse of the analysis order)
    let mut rlo_t = vec![T::zero(); wh2 * h];
    let mut rhi_t = vec![T::zero(); wh2 * h];
    let mut clo = vec![T::zero(); hh2];
    let mut chi = vec![T::zero(); hh2];
    let mut col = vec![T::zero(); h];
    for u in 0..wh2 {
        for v in 0..hh2 {
            clo[v] = bands[0][v * wh2 + u];
            chi[v] = bands[2][v * wh2 + u];
        }
        synthesize_1d(&clo, &chi, fb, &mut col);
        rlo_t[u * h..(u + 1) * h].copy_from_slice(&col);
        for v in 0..hh2 {
            clo[v] = bands[1][v * wh2 + u];
            chi[v] = bands[3][v * wh2 + u];
        }
        synthesize_1d(&clo, &chi, fb, &mut col);
        rhi_t[u * h..(u + 1) * h].copy_from_slice(&col);
    }
    let mut rlo = vec![T::zero(); h * wh2];
    let mut rhi = vec![T::zero(); h * wh2];
    transpose(&rlo_t, wh2, h, &mut rlo);
    transpose(&rhi_t, wh2, h, &mut rhi);
    // rows
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        synthesize_1d(
            &rlo[y * wh2..(y + 1) * wh2],
            &rhi[y * wh2..(y + 1) * wh2],
            fb,
            &mut out[y * w..(y + 1) * w],
        );
    }
    out
}

/// Single-level 2-D DWT. Spatial dims must be even; the caller pads.
pub fn dwt2<T: Scalar>(x: &Tensor<T>, family: WaveletFamily) -> WaveletBands<T> {
    let s = x.shape();
    assert!(
        s.h % 2 == 0 && s.w % 2 == 0,
        "dwt2: spatial dims must be even, got {}",
        s
    );
    let fb = bank(family);
    let bshape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let plane = s.h * s.w;
    let bplane = bshape.h * bshape.w;
    let mut out: [Vec<T>; 4] = [
        vec![T::zero(); bshape.len()],
        vec![T::zero(); bshape.len()],
        vec![T::zero(); bshape.len()],
        vec![T::zero(); bshape.len()],
    ];
    for pc in 0..s.n * s.c {
        let planes = dwt2_plane(&x.data()[pc * plane..(pc + 1) * plane], s.h, s.w, fb);
        for (b, p) in planes.into_iter().enumerate() {
            out[b][pc * bplane..(pc + 1) * bplane].copy_from_slice(&p);
        }
    }
    let [ll, lh, hl, hh] = out;
    WaveletBands {
        ll: Tensor::new(bshape, ll),
        lh: Tensor::new(bshape, lh),
        hl: Tensor::new(bshape, hl),
        hh: Tensor::new(bshape, hh),
        family,
    }
}

/// Exact synthesis inverse of [`dwt2`] for the same family.
pub fn idwt2<T: Scalar>(bands: &WaveletBands<T>) -> Tensor<T> {
    let bs = bands.ll.shape();
    for (name, b) in [("lh", &bands.lh), ("hl", &bands.hl), ("hh", &bands.hh)] {
        assert_eq!(
            b.shape(),
            bs,
            "idwt2: band {} shape {} differs from ll {}",
            name,
            b.shape(),
            bs
        );
    }
    let fb = bank(bands.family);
    let (h, w) = (bs.h * 2, bs.w * 2);
    let out_shape = Shape::new(bs.n, bs.c, h, w);
    let mut out = vec![T::zero(); out_shape.len()];
    let bplane = bs.h * bs.w;
    let plane = h * w;
    for pc in 0..bs.n * bs.c {
        let r = bplane * pc..bplane * (pc + 1);
        let rec = idwt2_plane(
            [
                &bands.ll.data()[r.clone()],
                &bands.lh.data()[r.clone()],
                &bands.hl.data()[r.clone()],
                &bands.hh.data()[r],
            ],
            h,
            w,
            fb,
        );
        out[pc * plane..(pc + 1) * plane].copy_from_slice(&rec);
    }
    Tensor::new(out_shape, out)
}
