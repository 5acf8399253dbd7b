//! Deblurring branch: mask-map generator (MMG), select-kernel routing,
//! pixel-adjustable kernel blocks (PAKB), simplified strip self-attention,
//! and the encoder/representation/decoder assembly with skip connections.

use crate::graph::{Graph, NodeId, TokenMode};
use crate::params::{ParamBuilder, ParamStore};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

use super::attention::{MultiHeadAttention, ScoreScale};
use super::layers::{Conv2d, ConvTranspose2d, LayerNorm, Linear};

/// Three mutually exclusive one-hot maps partitioning pixels by blur
/// magnitude.
#[derive(Clone, Debug)]
pub struct MaskTriple<T> {
    pub m1: Tensor<T>,
    pub m3: Tensor<T>,
    pub m5: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct PakbThresholds {
    pub min_t: f64,
    pub max_t: f64,
}

impl PakbThresholds {
    pub fn new(min_t: f64, max_t: f64) -> Self {
        assert!(
            0.0 < min_t && min_t < max_t && max_t < 1.0,
            "thresholds must satisfy 0 < min_t < max_t < 1, got ({}, {})",
            min_t,
            max_t
        );
        PakbThresholds { min_t, max_t }
    }
}

impl Default for PakbThresholds {
    fn default() -> Self {
        PakbThresholds::new(1.0 / 3.0, 2.0 / 3.0)
    }
}

/// Threshold routing: m1 where m <= min_t, m3 strictly between, m5 where
/// m >= max_t. The lower comparison is inclusive.
pub fn select_kernel<T: Scalar>(m_hat: &Tensor<T>, t: &PakbThresholds) -> MaskTriple<T> {
    let lo = T::of_f64(t.min_t);
    let hi = T::of_f64(t.max_t);
    let one = T::one();
    let zero = T::zero();
    let m1 = m_hat.map(|v| if v <= lo { one } else { zero });
    let m5 = m_hat.map(|v| if v >= hi { one } else { zero });
    let m3 = m_hat.map(|v| if v > lo && v < hi { one } else { zero });
    MaskTriple { m1, m3, m5 }
}

/// Mask-map generator: 1x1 conv to one channel, FC bottleneck with a
/// LayerNorm between the FC layers, sigmoid back to (0,1). The FC sizes
/// are fixed at construction, so feeding a different spatial size is a
/// hard error.
#[derive(Clone, Copy, Debug)]
pub struct Mmg {
    pub squeeze: Conv2d,
    pub fc0: Linear,
    pub ln: LayerNorm,
    pub fc1: Linear,
    pub h: usize,
    pub w: usize,
    pub ratio: usize,
}

impl Mmg {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        (h, w): (usize, usize),
        ratio: usize,
    ) -> Self {
        let hw = h * w;
        assert!(hw % ratio == 0, "MMG: h*w = {} not divisible by ratio {}", hw, ratio);
        let mut s = pb.scope(name);
        Mmg {
            squeeze: Conv2d::new(&mut s, "squeeze", channels, 1, 1, 1),
            fc0: Linear::new(&mut s, "fc0", hw, hw / ratio),
            ln: LayerNorm::new(&mut s, "ln", hw / ratio),
            fc1: Linear::new(&mut s, "fc1", hw / ratio, hw),
            h,
            w,
            ratio,
        }
    }

    /// Soft blur-magnitude map in (0,1), shape (n, 1, h, w).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let s = g.shape(x);
        assert!(
            s.h == self.h && s.w == self.w,
            "MMG was built for {}x{} inputs but got {}",
            self.h,
            self.w,
            s
        );
        let squeezed = self.squeeze.forward(g, ps, x);
        let flat = g.reshape(squeezed, Shape::new(s.n, self.h * self.w, 1, 1));
        let mid = self.fc0.forward(g, ps, flat);
        let normed = self.ln.forward(g, ps, mid);
        let expanded = self.fc1.forward(g, ps, normed);
        let squashed = g.sigmoid(expanded);
        g.reshape(squashed, Shape::new(s.n, 1, self.h, self.w))
    }

    /// What-if MAC count at spatial size (h, w); the FC cost scales with
    /// (h*w)^2 / ratio.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let hw = (h * w) as u64;
        self.squeeze.macs(h, w) + 2 * hw * (hw / self.ratio as u64)
    }
}

/// Which forward semantics a PAKB uses: `Hard` routes through one-hot
/// masks with a straight-through soft path feeding the MMG gradient;
/// `Soft` uses the smooth band weights end to end (the mode the
/// finite-difference oracle can see).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PakbPath {
    Hard,
    Soft,
}

/// Smoothing temperature of the soft band weights.
const SOFT_TAU: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct Pakb {
    pub mmg: Mmg,
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
    pub conv_c: Conv2d,
    pub thresholds: PakbThresholds,
}

impl Pakb {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        spatial: (usize, usize),
        kernels: [usize; 3],
        thresholds: PakbThresholds,
        mmg_ratio: usize,
    ) -> Self {
        assert!(
            kernels.iter().all(|k| k % 2 == 1),
            "PAKB kernel sizes must be odd, got {:?}",
            kernels
        );
        assert!(
            kernels[0] < kernels[1] && kernels[1] < kernels[2],
            "PAKB kernel sizes must be strictly increasing, got {:?}",
            kernels
        );
        let mut s = pb.scope(name);
        Pakb {
            mmg: Mmg::new(&mut s, "mmg", channels, spatial, mmg_ratio),
            conv_a: Conv2d::new(&mut s, "conv_a", channels, channels, kernels[0], 1),
            conv_b: Conv2d::new(&mut s, "conv_b", channels, channels, kernels[1], 1),
            conv_c: Conv2d::new(&mut s, "conv_c", channels, channels, kernels[2], 1),
            thresholds,
        }
    }

    /// Smooth band weights (s1, s3, s5); they sum to one pointwise and
    /// collapse onto the hard masks as the temperature goes to zero.
    fn soft_weights<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        m_hat: NodeId,
    ) -> (NodeId, NodeId, NodeId) {
        let lo_shifted = g.add_scalar(m_hat, -self.thresholds.min_t);
        let lo_scaled = g.scale(lo_shifted, 1.0 / SOFT_TAU);
        let a = g.sigmoid(lo_scaled);
        let hi_shifted = g.add_scalar(m_hat, -self.thresholds.max_t);
        let hi_scaled = g.scale(hi_shifted, 1.0 / SOFT_TAU);
        let b = g.sigmoid(hi_scaled);
        let neg_a = g.neg(a);
        let s1 = g.add_scalar(neg_a, 1.0);
        let s3 = g.sub(a, b);
        (s1, s3, b)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: NodeId,
        path: PakbPath,
    ) -> NodeId {
        let m_hat = self.mmg.forward(g, ps, x);
        let (s1, s3, s5) = self.soft_weights(g, m_hat);
        let (c1, c3, c5) = match path {
            PakbPath::Soft => (s1, s3, s5),
            PakbPath::Hard => {
                // straight-through: value (hard - soft) + soft == hard,
                // gradient flows through the soft weights only
                let masks = select_kernel(g.value(m_hat), &self.thresholds);
                let d1 = g.constant(masks.m1.sub(g.value(s1)));
                let d3 = g.constant(masks.m3.sub(g.value(s3)));
                let d5 = g.constant(masks.m5.sub(g.value(s5)));
                (g.add(s1, d1), g.add(s3, d3), g.add(s5, d5))
            }
        };
        let xa = self.conv_a.forward(g, ps, x);
        let xb = self.conv_b.forward(g, ps, x);
        let xc = self.conv_c.forward(g, ps, x);
        let ya = g.mul(xa, c1);
        let yb = g.mul(xb, c3);
        let yc = g.mul(xc, c5);
        let sum = g.add(ya, yb);
        g.add(sum, yc)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.mmg.macs(h, w)
            + self.conv_a.macs(h, w)
            + self.conv_b.macs(h, w)
            + self.conv_c.macs(h, w)
    }
}

/// Simplified strip self-attention standing in for the intra/inter blocks
/// of the representation stage: strips are single rows/columns, intra
/// attends within each strip, inter attends across strip-pooled tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StripKind {
    Intra,
    Inter,
}

#[derive(Clone, Copy, Debug)]
pub struct StripAttention {
    pub kind: StripKind,
    pub ln_row: LayerNorm,
    pub ln_col: LayerNorm,
    pub row_attn: MultiHeadAttention,
    pub col_attn: MultiHeadAttention,
}

impl StripAttention {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        heads: usize,
        kind: StripKind,
    ) -> Self {
        let mut s = pb.scope(name);
        StripAttention {
            kind,
            ln_row: LayerNorm::new(&mut s, "ln_row", channels),
            ln_col: LayerNorm::new(&mut s, "ln_col", channels),
            row_attn: MultiHeadAttention::new(&mut s, "row", channels, heads, ScoreScale::InvSqrtDim),
            col_attn: MultiHeadAttention::new(&mut s, "col", channels, heads, ScoreScale::InvSqrtDim),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let s = g.shape(x);
        assert!(s.h >= 1 && s.w >= 1, "strip attention on empty map");
        match self.kind {
            StripKind::Intra => {
                let t = self.ln_row.forward(g, ps, x);
                let r = self.row_attn.forward(g, ps, t, TokenMode::Rows);
                let x1 = g.add(x, r);
                let t2 = self.ln_col.forward(g, ps, x1);
                let c = self.col_attn.forward(g, ps, t2, TokenMode::Cols);
                g.add(x1, c)
            }
            StripKind::Inter => {
                // pool each row strip to one token, attend across strips,
                // broadcast back
                let t = self.ln_row.forward(g, ps, x);
                let rows = g.mean_width(t); // (n, c, h, 1)
                let r = self.row_attn.forward(g, ps, rows, TokenMode::Cols);
                let x1 = g.add(x, r);
                let t2 = self.ln_col.forward(g, ps, x1);
                let cols = g.mean_height(t2); // (n, c, 1, w)
                let c = self.col_attn.forward(g, ps, cols, TokenMode::Rows);
                g.add(x1, c)
            }
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        match self.kind {
            StripKind::Intra => {
                self.row_attn.macs(h, w, TokenMode::Rows) + self.col_attn.macs(h, w, TokenMode::Cols)
            }
            StripKind::Inter => {
                self.row_attn.macs(h, 1, TokenMode::Cols) + self.col_attn.macs(1, w, TokenMode::Rows)
            }
        }
    }
}

/// Features plus the branch's own image prediction.
pub struct DeblurOutput {
    pub features: NodeId,
    pub image: NodeId,
}

/// Encoder output held between the encode and decode halves so the
/// cross-branch exchange can rewrite the mid features.
pub struct DeblurEncoded {
    pub mid: NodeId,
    skip0: NodeId,
    skip1: NodeId,
    input: NodeId,
}

pub struct DeblurBranch {
    pub stem: Conv2d,
    enc0: Vec<Pakb>,
    down0: Conv2d,
    enc1: Vec<Pakb>,
    down1: Conv2d,
    rstage: Vec<StripAttention>,
    up1: ConvTranspose2d,
    fuse1: Conv2d,
    dec1: Vec<Pakb>,
    up0: ConvTranspose2d,
    fuse0: Conv2d,
    dec0: Vec<Pakb>,
    pub feat_head: Conv2d,
    pub img_head: Conv2d,
    channels: usize,
}

pub struct DeblurConfig {
    pub channels: usize,
    pub feature_channels: usize,
    pub patch: (usize, usize),
    pub kernels: [usize; 3],
    pub thresholds: PakbThresholds,
    pub mmg_ratio: usize,
    pub pakbs_per_level: usize,
    pub strip_heads: usize,
}

impl DeblurBranch {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &DeblurConfig) -> Self {
        let (h, w) = cfg.patch;
        assert!(
            h % 4 == 0 && w % 4 == 0,
            "deblur branch needs spatial dims divisible by 4, got {}x{}",
            h,
            w
        );
        let c = cfg.channels;
        let mut s = pb.scope("deblur");
        let pakbs = |s: &mut ParamBuilder<'_, T>, stage: &str, ch: usize, sp: (usize, usize)| {
            (0..cfg.pakbs_per_level)
                .map(|i| {
                    Pakb::new(
                        s,
                        &format!("{}.pakb{}", stage, i),
                        ch,
                        sp,
                        cfg.kernels,
                        cfg.thresholds,
                        cfg.mmg_ratio,
                    )
                })
                .collect::<Vec<_>>()
        };
        let stem = Conv2d::new(&mut s, "stem", 3, c, 3, 1);
        let enc0 = pakbs(&mut s, "enc0", c, (h, w));
        let down0 = Conv2d::new(&mut s, "down0", c, 2 * c, 3, 2);
        let enc1 = pakbs(&mut s, "enc1", 2 * c, (h / 2, w / 2));
        let down1 = Conv2d::new(&mut s, "down1", 2 * c, 4 * c, 3, 2);
        let rstage = vec![
            StripAttention::new(&mut s, "rstage.intra", 4 * c, cfg.strip_heads, StripKind::Intra),
            StripAttention::new(&mut s, "rstage.inter", 4 * c, cfg.strip_heads, StripKind::Inter),
        ];
        let up1 = ConvTranspose2d::new(&mut s, "up1", 4 * c, 2 * c, 2, 2);
        let fuse1 = Conv2d::new(&mut s, "fuse1", 4 * c, 2 * c, 1, 1);
        let dec1 = pakbs(&mut s, "dec1", 2 * c, (h / 2, w / 2));
        let up0 = ConvTranspose2d::new(&mut s, "up0", 2 * c, c, 2, 2);
        let fuse0 = Conv2d::new(&mut s, "fuse0", 2 * c, c, 1, 1);
        let dec0 = pakbs(&mut s, "dec0", c, (h, w));
        let feat_head = Conv2d::new(&mut s, "feat_head", c, cfg.feature_channels, 3, 1);
        let img_head = Conv2d::new(&mut s, "img_head", c, 3, 3, 1);
        DeblurBranch {
            stem,
            enc0,
            down0,
            enc1,
            down1,
            rstage,
            up1,
            fuse1,
            dec1,
            up0,
            fuse0,
            dec0,
            feat_head,
            img_head,
            channels: c,
        }
    }

    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        lr_blur: NodeId,
        path: PakbPath,
    ) -> DeblurEncoded {
        let s = g.shape(lr_blur);
        assert!(
            s.h % 4 == 0 && s.w % 4 == 0,
            "deblur branch input {} must have spatial dims divisible by 4",
            s
        );
        let mut x = self.stem.forward(g, ps, lr_blur);
        for p in &self.enc0 {
            x = p.forward(g, ps, x, path);
        }
        let skip0 = x;
        let mut y = self.down0.forward(g, ps, x);
        for p in &self.enc1 {
            y = p.forward(g, ps, y, path);
        }
        let skip1 = y;
        let mut z = self.down1.forward(g, ps, y);
        for sa in &self.rstage {
            z = sa.forward(g, ps, z);
        }
        DeblurEncoded {
            mid: z,
            skip0,
            skip1,
            input: lr_blur,
        }
    }

    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        enc: &DeblurEncoded,
        mid: NodeId,
        path: PakbPath,
    ) -> DeblurOutput {
        let u1 = self.up1.forward(g, ps, mid);
        let cat1 = g.concat_c(&[u1, enc.skip1]);
        let mut y = self.fuse1.forward(g, ps, cat1);
        for p in &self.dec1 {
            y = p.forward(g, ps, y, path);
        }
        let u0 = self.up0.forward(g, ps, y);
        let cat0 = g.concat_c(&[u0, enc.skip0]);
        let mut z = self.fuse0.forward(g, ps, cat0);
        for p in &self.dec0 {
            z = p.forward(g, ps, z, path);
        }
        let features = self.feat_head.forward(g, ps, z);
        let correction = self.img_head.forward(g, ps, z);
        let image = g.add(enc.input, correction);
        DeblurOutput { features, image }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        lr_blur: NodeId,
        path: PakbPath,
    ) -> DeblurOutput {
        let enc = self.encode(g, ps, lr_blur, path);
        let mid = enc.mid;
        self.decode(g, ps, &enc, mid, path)
    }

    pub fn mid_channels(&self) -> usize {
        4 * self.channels
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let mut total = self.stem.macs(h, w);
        for p in &self.enc0 {
            total += p.macs(h, w);
        }
        total += self.down0.macs(h, w);
        for p in &self.enc1 {
            total += p.macs(h / 2, w / 2);
        }
        total += self.down1.macs(h / 2, w / 2);
        for sa in &self.rstage {
            total += sa.macs(h / 4, w / 4);
        }
        total += self.up1.macs(h / 4, w / 4) + self.fuse1.macs(h / 2, w / 2);
        for p in &self.dec1 {
            total += p.macs(h / 2, w / 2);
        }
        total += self.up0.macs(h / 2, w / 2) + self.fuse0.macs(h, w);
        for p in &self.dec0 {
            total += p.macs(h, w);
        }
        total + self.feat_head.macs(h, w) + self.img_head.macs(h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn select_kernel_examples() {
        let m = Tensor::<f64>::from_f64s(Shape::new(1, 1, 1, 3), &[0.1, 0.5, 0.9]);
        let t = PakbThresholds::default();
        let masks = select_kernel(&m, &t);
        assert_eq!(masks.m1.data(), &[1.0, 0.0, 0.0]);
        assert_eq!(masks.m3.data(), &[0.0, 1.0, 0.0]);
        assert_eq!(masks.m5.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn select_kernel_lower_bound_is_inclusive() {
        let t = PakbThresholds::new(0.25, 0.75);
        let m = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 0.25);
        let masks = select_kernel(&m, &t);
        assert!(masks.m1.data().iter().all(|&v| v == 1.0));
        assert!(masks.m3.max_abs() == 0.0);
        // upper bound inclusive on m5
        let m = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 0.75);
        let masks = select_kernel(&m, &t);
        assert!(masks.m5.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn masks_partition_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let m = Tensor::<f64>::rand_uniform(Shape::new(1, 1, 4, 4), 0.0, 1.0, &mut rng);
            use rand::Rng;
            let lo = rng.gen_range(0.05..0.5);
            let hi = rng.gen_range(lo + 0.01..0.99);
            let t = PakbThresholds::new(lo, hi);
            let masks = select_kernel(&m, &t);
            let sum = masks.m1.add(&masks.m3).add(&masks.m5);
            assert!(sum.map(|v| v - 1.0).max_abs() == 0.0);
            let pair = masks.m1.mul_elem(&masks.m3).max_abs()
                + masks.m1.mul_elem(&masks.m5).max_abs()
                + masks.m3.mul_elem(&masks.m5).max_abs();
            assert!(pair == 0.0, "bands overlap");
        }
    }

    #[test]
    #[should_panic(expected = "thresholds must satisfy")]
    fn inverted_thresholds_panic() {
        let _ = PakbThresholds::new(0.7, 0.3);
    }

    #[test]
    fn mmg_zero_input_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let mmg = Mmg::new(&mut pb, "mmg", 4, (8, 8), 4);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::new(2, 4, 8, 8)));
        let m = mmg.forward(&mut g, &ps, x);
        assert_eq!(g.shape(m), Shape::new(2, 1, 8, 8));
        // zero input, zero biases: logits are 0 -> sigmoid 0.5
        assert!(g.value(m).map(|v| v - 0.5).max_abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "was built for")]
    fn mmg_rejects_other_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let mmg = Mmg::new(&mut pb, "mmg", 4, (8, 8), 4);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 4, 16, 16)));
        let _ = mmg.forward(&mut g, &ps, x);
    }

    #[test]
    fn pakb_single_band_matches_plain_conv() {
        // thresholds that force m1 everywhere (sigmoid output < 0.999)
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let pakb = Pakb::new(
            &mut pb,
            "pakb",
            4,
            (8, 8),
            [3, 5, 7],
            PakbThresholds::new(0.999, 0.9995),
            4,
        );
        let mut g = Graph::new();
        let x = g.var(Tensor::rand_uniform(Shape::new(1, 4, 8, 8), -1.0, 1.0, &mut rng));
        let y = pakb.forward(&mut g, &ps, x, PakbPath::Hard);
        let plain = pakb.conv_a.forward(&mut g, &ps, x);
        let err = g.value(y).max_abs_diff(g.value(plain));
        assert!(err < 1e-6, "PAKB did not degenerate to conv: {}", err);
    }

    #[test]
    fn pakb_output_shape_matches_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let pakb = Pakb::new(
            &mut pb,
            "pakb",
            6,
            (8, 8),
            [3, 5, 7],
            PakbThresholds::default(),
            4,
        );
        let mut g = Graph::new();
        let x = g.var(Tensor::rand_uniform(Shape::new(2, 6, 8, 8), -1.0, 1.0, &mut rng));
        for path in [PakbPath::Hard, PakbPath::Soft] {
            let y = pakb.forward(&mut g, &ps, x, path);
            assert_eq!(g.shape(y), Shape::new(2, 6, 8, 8));
        }
    }

    #[test]
    #[should_panic(expected = "must be odd")]
    fn even_kernel_is_hard_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let _ = Pakb::new(
            &mut pb,
            "pakb",
            4,
            (8, 8),
            [3, 4, 7],
            PakbThresholds::default(),
            4,
        );
    }

    #[test]
    fn strip_attention_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let intra = StripAttention::new(&mut pb, "intra", 8, 4, StripKind::Intra);
        let inter = StripAttention::new(&mut pb, "inter", 8, 4, StripKind::Inter);
        let mut g = Graph::new();
        let x = g.var(Tensor::rand_uniform(Shape::new(1, 8, 4, 6), -1.0, 1.0, &mut rng));
        let y = intra.forward(&mut g, &ps, x);
        let z = inter.forward(&mut g, &ps, y);
        assert_eq!(g.shape(z), Shape::new(1, 8, 4, 6));
    }

    fn desk_branch(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, DeblurBranch) {
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, rng);
        let branch = DeblurBranch::new(
            &mut pb,
            &DeblurConfig {
                channels: 4,
                feature_channels: 4,
                patch: (8, 8),
                kernels: [3, 5, 7],
                thresholds: PakbThresholds::default(),
                mmg_ratio: 4,
                pakbs_per_level: 1,
                strip_heads: 2,
            },
        );
        (ps, branch)
    }

    #[test]
    fn deblur_branch_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (ps, branch) = desk_branch(&mut rng);
        let mut g = Graph::new();
        let x = g.var(Tensor::rand_uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng));
        let out = branch.forward(&mut g, &ps, x, PakbPath::Hard);
        assert_eq!(g.shape(out.image), Shape::new(1, 3, 8, 8));
        assert_eq!(g.shape(out.features), Shape::new(1, 4, 8, 8));
    }

    #[test]
    fn zeroed_image_head_returns_input_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut ps, branch) = desk_branch(&mut rng);
        let wid = branch.img_head.w;
        let bid = branch.img_head.b;
        ps.set_value(wid, Tensor::zeros(ps.value(wid).shape()));
        ps.set_value(bid, Tensor::zeros(ps.value(bid).shape()));
        let mut g = Graph::new();
        let x = g.var(Tensor::rand_uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng));
        let out = branch.forward(&mut g, &ps, x, PakbPath::Hard);
        assert!(g.value(out.image).bitwise_eq(g.value(x)));
    }

    #[test]
    #[should_panic(expected = "divisible by 4")]
    fn indivisible_input_is_hard_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (ps, branch) = desk_branch(&mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 3, 6, 8)));
        let _ = branch.forward(&mut g, &ps, x, PakbPath::Hard);
    }
}
