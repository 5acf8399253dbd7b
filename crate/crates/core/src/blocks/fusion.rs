//! Adaptive feature fusion (cross-branch exchange + final fusion) and the
//! reconstruction head.

use crate::graph::{Graph, NodeId};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::shape::Shape;

use super::layers::Conv2d;

/// Cross-branch feature fusion: a single learnable alpha (realized as
/// sigmoid of an unconstrained scalar) mixes each branch with the
/// resampled other branch. 1x1 adapters align the channel counts; the
/// spatial sizes must be related by exactly 4.
pub struct Cbff {
    pub alpha_raw: ParamId,
    pub adapt_to_deblur: Conv2d,
    pub adapt_to_sr: Conv2d,
}

impl Cbff {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        sr_channels: usize,
        deblur_channels: usize,
    ) -> Self {
        let mut s = pb.scope("cbff");
        Cbff {
            alpha_raw: s.zeros("alpha_raw", Shape::scalar()),
            adapt_to_deblur: Conv2d::new(&mut s, "adapt_to_deblur", sr_channels, deblur_channels, 1, 1),
            adapt_to_sr: Conv2d::new(&mut s, "adapt_to_sr", deblur_channels, sr_channels, 1, 1),
        }
    }

    /// Current alpha in (0,1).
    pub fn alpha<T: Scalar>(&self, ps: &ParamStore<T>) -> f64 {
        let raw = ps.value(self.alpha_raw).data()[0].as_f64();
        1.0 / (1.0 + (-raw).exp())
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        f_deblur: NodeId,
        f_sr: NodeId,
    ) -> (NodeId, NodeId) {
        let sd = g.shape(f_deblur);
        let ss = g.shape(f_sr);
        assert!(
            ss.h == 4 * sd.h && ss.w == 4 * sd.w,
            "CBFF expects a 4x scale relation, got deblur {} vs sr {}",
            sd,
            ss
        );
        let raw = g.param(ps, self.alpha_raw);
        let alpha = g.sigmoid(raw);
        let neg = g.neg(alpha);
        let one_minus = g.add_scalar(neg, 1.0);

        // deblur <- alpha * deblur + (1 - alpha) * adapt(down4(sr))
        let sr_down = g.bilinear(f_sr, sd.h, sd.w);
        let sr_adapted = self.adapt_to_deblur.forward(g, ps, sr_down);
        let d_keep = g.mul(f_deblur, alpha);
        let d_take = g.mul(sr_adapted, one_minus);
        let new_deblur = g.add(d_keep, d_take);

        // sr <- alpha * sr + (1 - alpha) * up4(adapt(deblur))
        let deblur_adapted = self.adapt_to_sr.forward(g, ps, f_deblur);
        let deblur_up = g.bilinear(deblur_adapted, ss.h, ss.w);
        let s_keep = g.mul(f_sr, alpha);
        let s_take = g.mul(deblur_up, one_minus);
        let new_sr = g.add(s_keep, s_take);

        (new_deblur, new_sr)
    }

    pub fn macs(&self, deblur_hw: (usize, usize), sr_hw: (usize, usize)) -> u64 {
        self.adapt_to_deblur.macs(deblur_hw.0, deblur_hw.1)
            + self.adapt_to_sr.macs(deblur_hw.0, deblur_hw.1)
            + (sr_hw.0 * sr_hw.1) as u64 // resampling taps, minor
    }
}

/// Final feature fusion: sigmoid-bounded pixel-wise weight map selects
/// between the SR features and the deblur features.
pub struct Fff {
    pub xi: Conv2d,
    pub delta: Conv2d,
}

impl Fff {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, feature_channels: usize) -> Self {
        let mut s = pb.scope("fff");
        Fff {
            xi: Conv2d::new(&mut s, "xi", 3 + 2 * feature_channels, feature_channels, 3, 1),
            delta: Conv2d::new(&mut s, "delta", feature_channels, feature_channels, 1, 1),
        }
    }

    /// The bounded weight map W.
    pub fn weight_map<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        lr_blur: NodeId,
        phi_sr: NodeId,
        phi_deblur: NodeId,
    ) -> NodeId {
        let (sl, ss, sd) = (g.shape(lr_blur), g.shape(phi_sr), g.shape(phi_deblur));
        assert!(
            sl.h == ss.h && sl.w == ss.w && sl.h == sd.h && sl.w == sd.w,
            "FFF inputs must share spatial size, got {} / {} / {}",
            sl,
            ss,
            sd
        );
        let cat = g.concat_c(&[lr_blur, phi_sr, phi_deblur]);
        let mid = self.xi.forward(g, ps, cat);
        let logits = self.delta.forward(g, ps, mid);
        g.sigmoid(logits)
    }

    /// phi_fusion = (W ⊙ phi_sr) ⊕ phi_deblur.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        lr_blur: NodeId,
        phi_sr: NodeId,
        phi_deblur: NodeId,
    ) -> NodeId {
        let w = self.weight_map(g, ps, lr_blur, phi_sr, phi_deblur);
        let weighted = g.mul(phi_sr, w);
        g.add(weighted, phi_deblur)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.xi.macs(h, w) + self.delta.macs(h, w)
    }
}

/// y = x + conv(relu(conv(x))).
#[derive(Clone, Copy, Debug)]
pub struct ResBlock {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
}

impl ResBlock {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Self {
        let mut s = pb.scope(name);
        ResBlock {
            conv0: Conv2d::new(&mut s, "conv0", channels, channels, 3, 1),
            conv1: Conv2d::new(&mut s, "conv1", channels, channels, 3, 1),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let a = self.conv0.forward(g, ps, x);
        let r = g.relu(a);
        let b = self.conv1.forward(g, ps, r);
        g.add(x, b)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv0.macs(h, w) + self.conv1.macs(h, w)
    }
}

/// Res-blocks, then one (conv to 4c, pixel-shuffle x2) stage per factor of
/// two, then a 3-channel conv. The result is added to the bilinearly
/// upsampled input, so an all-zero head reproduces plain upsampling; the
/// [0,1] clamp is applied on the inference path only.
pub struct Reconstruction {
    pub res_blocks: Vec<ResBlock>,
    pub up_convs: Vec<Conv2d>,
    pub final_conv: Conv2d,
    pub scale: usize,
}

impl Reconstruction {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        feature_channels: usize,
        res_blocks: usize,
        scale: usize,
    ) -> Self {
        assert!(scale == 2 || scale == 4, "unsupported scale {}", scale);
        let mut s = pb.scope("recon");
        let stages = if scale == 2 { 1 } else { 2 };
        Reconstruction {
            res_blocks: (0..res_blocks)
                .map(|i| ResBlock::new(&mut s, &format!("res{}", i), feature_channels))
                .collect(),
            up_convs: (0..stages)
                .map(|i| {
                    Conv2d::new(
                        &mut s,
                        &format!("up{}", i),
                        feature_channels,
                        4 * feature_channels,
                        3,
                        1,
                    )
                })
                .collect(),
            final_conv: Conv2d::new(&mut s, "final", feature_channels, 3, 3, 1),
            scale,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        phi_fusion: NodeId,
        lr_blur: NodeId,
        inference: bool,
    ) -> NodeId {
        let s = g.shape(lr_blur);
        let mut y = phi_fusion;
        for rb in &self.res_blocks {
            y = rb.forward(g, ps, y);
        }
        for up in &self.up_convs {
            let expanded = up.forward(g, ps, y);
            y = g.pixel_shuffle(expanded, 2);
        }
        let correction = self.final_conv.forward(g, ps, y);
        let base = g.bilinear(lr_blur, self.scale * s.h, self.scale * s.w);
        let out = g.add(base, correction);
        if inference {
            g.clamp01(out)
        } else {
            out
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let mut total: u64 = self.res_blocks.iter().map(|r| r.macs(h, w)).sum();
        let (mut ch, mut cw) = (h, w);
        for up in &self.up_convs {
            total += up.macs(ch, cw);
            ch *= 2;
            cw *= 2;
        }
        total + self.final_conv.macs(ch, cw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, Cbff) {
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, rng);
        let cbff = Cbff::new(&mut pb, 8, 16);
        (ps, cbff)
    }

    #[test]
    fn cbff_alpha_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let (mut ps, cbff) = setup(&mut rng);
        // force alpha ~ 1 via a large raw value
        ps.set_value(cbff.alpha_raw, Tensor::scalar(60.0));
        let mut g = Graph::new();
        let fd = g.var(Tensor::rand_uniform(Shape::new(1, 16, 4, 4), -1.0, 1.0, &mut rng));
        let fs = g.var(Tensor::rand_uniform(Shape::new(1, 8, 16, 16), -1.0, 1.0, &mut rng));
        let (nd, ns) = cbff.forward(&mut g, &ps, fd, fs);
        assert!(g.value(nd).max_abs_diff(g.value(fd)) < 1e-12);
        assert!(g.value(ns).max_abs_diff(g.value(fs)) < 1e-12);
    }

    #[test]
    fn cbff_alpha_zero_replaces_with_resampled_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (mut ps, cbff) = setup(&mut rng);
        ps.set_value(cbff.alpha_raw, Tensor::scalar(-60.0));
        let mut g = Graph::new();
        let fd = g.var(Tensor::rand_uniform(Shape::new(1, 16, 4, 4), -1.0, 1.0, &mut rng));
        let fs = g.var(Tensor::rand_uniform(Shape::new(1, 8, 16, 16), -1.0, 1.0, &mut rng));
        let (nd, ns) = cbff.forward(&mut g, &ps, fd, fs);
        // expected: exactly the adapted resampled other branch
        let down = g.bilinear(fs, 4, 4);
        let expect_d = cbff.adapt_to_deblur.forward(&mut g, &ps, down);
        let adapted = cbff.adapt_to_sr.forward(&mut g, &ps, fd);
        let expect_s = g.bilinear(adapted, 16, 16);
        assert!(g.value(nd).max_abs_diff(g.value(expect_d)) < 1e-12);
        assert!(g.value(ns).max_abs_diff(g.value(expect_s)) < 1e-12);
    }

    #[test]
    #[should_panic(expected = "4x scale relation")]
    fn cbff_rejects_wrong_scale_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (ps, cbff) = setup(&mut rng);
        let mut g = Graph::new();
        let fd = g.constant(Tensor::zeros(Shape::new(1, 16, 4, 4)));
        let fs = g.constant(Tensor::zeros(Shape::new(1, 8, 8, 8)));
        let _ = cbff.forward(&mut g, &ps, fd, fs);
    }

    #[test]
    fn fff_weight_zero_passes_deblur_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let fff = Fff::new(&mut pb, 8);
        // force W ~ 0: zero xi, set delta bias very negative
        ps.set_value(fff.xi.w, Tensor::zeros(ps.value(fff.xi.w).shape()));
        ps.set_value(fff.xi.b, Tensor::zeros(ps.value(fff.xi.b).shape()));
        ps.set_value(fff.delta.w, Tensor::zeros(ps.value(fff.delta.w).shape()));
        ps.set_value(fff.delta.b, Tensor::full(ps.value(fff.delta.b).shape(), -60.0));
        let mut g = Graph::new();
        let lr = g.var(Tensor::rand_uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng));
        let psr = g.var(Tensor::rand_uniform(Shape::new(1, 8, 8, 8), -1.0, 1.0, &mut rng));
        let pde = g.var(Tensor::rand_uniform(Shape::new(1, 8, 8, 8), -1.0, 1.0, &mut rng));
        let fused = fff.forward(&mut g, &ps, lr, psr, pde);
        assert!(g.value(fused).max_abs_diff(g.value(pde)) < 1e-10);
    }

    #[test]
    fn fff_weight_map_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let fff = Fff::new(&mut pb, 8);
        let mut g = Graph::new();
        let lr = g.var(Tensor::rand_uniform(Shape::new(2, 3, 8, 8), 0.0, 1.0, &mut rng));
        let psr = g.var(Tensor::rand_uniform(Shape::new(2, 8, 8, 8), -1.0, 1.0, &mut rng));
        let pde = g.var(Tensor::rand_uniform(Shape::new(2, 8, 8, 8), -1.0, 1.0, &mut rng));
        let w = fff.weight_map(&mut g, &ps, lr, psr, pde);
        assert_eq!(g.shape(w), Shape::new(2, 8, 8, 8));
        assert!(g.value(w).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn fff_monotone_in_weight_along_positive_sr() {
        // increasing any W entry where phi_sr > 0 never decreases fusion
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let phi_sr = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 4, 4), 0.1, 1.0, &mut rng);
        let phi_de = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 4, 4), -1.0, 1.0, &mut rng);
        let w1 = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 4, 4), 0.1, 0.5, &mut rng);
        let w2 = w1.map(|v| v + 0.3);
        let f1 = w1.mul_elem(&phi_sr).add(&phi_de);
        let f2 = w2.mul_elem(&phi_sr).add(&phi_de);
        for (a, b) in f1.data().iter().zip(f2.data().iter()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn reconstruction_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for (scale, expect) in [(2usize, 48usize), (4, 96)] {
            let mut ps = ParamStore::<f64>::new();
            let mut pb = ParamBuilder::new(&mut ps, &mut rng);
            let recon = Reconstruction::new(&mut pb, 8, 2, scale);
            let mut g = Graph::new();
            let phi = g.var(Tensor::rand_uniform(Shape::new(1, 8, 24, 24), -1.0, 1.0, &mut rng));
            let lr = g.var(Tensor::rand_uniform(Shape::new(1, 3, 24, 24), 0.0, 1.0, &mut rng));
            let hr = recon.forward(&mut g, &ps, phi, lr, false);
            assert_eq!(g.shape(hr), Shape::new(1, 3, expect, expect));
        }
    }

    #[test]
    fn reconstruction_zero_head_is_bilinear_upsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let recon = Reconstruction::new(&mut pb, 8, 1, 2);
        ps.set_value(recon.final_conv.w, Tensor::zeros(ps.value(recon.final_conv.w).shape()));
        ps.set_value(recon.final_conv.b, Tensor::zeros(ps.value(recon.final_conv.b).shape()));
        let mut g = Graph::new();
        let phi = g.var(Tensor::rand_uniform(Shape::new(1, 8, 8, 8), -1.0, 1.0, &mut rng));
        let lr = g.var(Tensor::rand_uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng));
        let hr = recon.forward(&mut g, &ps, phi, lr, false);
        let up = g.bilinear(lr, 16, 16);
        assert!(g.value(hr).bitwise_eq(g.value(up)));
    }

    #[test]
    #[should_panic(expected = "unsupported scale")]
    fn bad_scale_is_hard_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let mut ps = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let _ = Reconstruction::new(&mut pb, 8, 1, 3);
    }
}
