//! Super-resolution branch: residual channel attention blocks, the
//! multi-domain attention block (wavelet split, learnable Fourier
//! modulation of the low band, self-attention over the high bands), and
//! the residual attention groups chaining them.

use crate::graph::{Graph, NodeId, TokenMode};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::spectral::fourier::half_width;
use crate::spectral::WaveletFamily;

use super::attention::{MultiHeadAttention, ScoreScale};
use super::layers::{Conv2d, ConvTranspose2d, LayerNorm, Linear, Mlp};

/// Squeeze-excite channel gate: GAP -> FC(c/r) -> ReLU -> FC(c) -> sigmoid.
#[derive(Clone, Copy, Debug)]
pub struct ChannelAttention {
    pub fc0: Linear,
    pub fc1: Linear,
    pub reduction: usize,
}

impl ChannelAttention {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Self {
        assert!(
            channels % reduction == 0,
            "channel attention: {} channels not divisible by reduction {}",
            channels,
            reduction
        );
        let mut s = pb.scope(name);
        ChannelAttention {
            fc0: Linear::new(&mut s, "fc0", channels, channels / reduction),
            fc1: Linear::new(&mut s, "fc1", channels / reduction, channels),
            reduction,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let s = g.shape(x);
        let pooled = g.mean_spatial(x); // (n, c, 1, 1)
        let mid = self.fc0.forward(g, ps, pooled);
        let act = g.relu(mid);
        let logits = self.fc1.forward(g, ps, act);
        let gate = g.sigmoid(logits);
        let gate = g.reshape(gate, Shape::new(s.n, s.c, 1, 1));
        g.mul(x, gate)
    }

    pub fn macs(&self) -> u64 {
        self.fc0.macs(1) + self.fc1.macs(1)
    }
}

/// x + CA(conv(relu(conv(x)))).
#[derive(Clone, Copy, Debug)]
pub struct Rcab {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
    pub ca: ChannelAttention,
}

impl Rcab {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Self {
        let mut s = pb.scope(name);
        Rcab {
            conv0: Conv2d::new(&mut s, "conv0", channels, channels, 3, 1),
            conv1: Conv2d::new(&mut s, "conv1", channels, channels, 3, 1),
            ca: ChannelAttention::new(&mut s, "ca", channels, 4),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let a = self.conv0.forward(g, ps, x);
        let r = g.relu(a);
        let b = self.conv1.forward(g, ps, r);
        let gated = self.ca.forward(g, ps, b);
        g.add(x, gated)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv0.macs(h, w) + self.conv1.macs(h, w) + self.ca.macs()
    }
}

/// Multi-domain attention block. The input is layer-normed, wavelet-split;
/// the LL band is modulated per-bin in the Fourier domain with a learnable
/// real weight, the three high bands are merged by a 5x5 conv and run
/// through multi-head self-attention; a 2x transposed conv brings the
/// concatenated result back to full resolution for the LN+MLP residual.
pub struct Mdab {
    pub ln_in: LayerNorm,
    pub lambda_c: ParamId,
    pub reform: Conv2d,
    pub attn: MultiHeadAttention,
    pub deconv: ConvTranspose2d,
    pub ln_out: LayerNorm,
    pub mlp: Mlp,
    pub family: WaveletFamily,
    channels: usize,
    band: (usize, usize),
}

impl Mdab {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        spatial: (usize, usize),
        heads: usize,
        family: WaveletFamily,
        sqrt_scale: bool,
    ) -> Self {
        let (h, w) = spatial;
        assert!(h % 2 == 0 && w % 2 == 0, "MDAB needs even spatial dims");
        let band = (h / 2, w / 2);
        let mut s = pb.scope(name);
        let lambda_c = s.ones(
            "lambda_c",
            Shape::new(1, channels, band.0, half_width(band.1)),
        );
        let scale = if sqrt_scale {
            ScoreScale::InvSqrtDim
        } else {
            ScoreScale::InvDim
        };
        Mdab {
            ln_in: LayerNorm::new(&mut s, "ln_in", channels),
            lambda_c,
            reform: Conv2d::new(&mut s, "reform", 3 * channels, channels, 5, 1),
            attn: MultiHeadAttention::new(&mut s, "attn", channels, heads, scale),
            deconv: ConvTranspose2d::new(&mut s, "deconv", 2 * channels, channels, 2, 2),
            ln_out: LayerNorm::new(&mut s, "ln_out", channels),
            mlp: Mlp::new(&mut s, "mlp", channels),
            family,
            channels,
            band,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let s = g.shape(x);
        assert!(
            s.h % 2 == 0 && s.w % 2 == 0,
            "MDAB input must have even spatial dims, got {}",
            s
        );
        assert!(
            (s.h / 2, s.w / 2) == self.band,
            "MDAB was built for {}x{} bands but got input {}",
            self.band.0,
            self.band.1,
            s
        );
        let c = self.channels;
        let t = self.ln_in.forward(g, ps, x);
        let bands = g.dwt2(t, self.family);
        let ll = g.slice_c(bands, 0, c);
        let lh = g.slice_c(bands, c, c);
        let hl = g.slice_c(bands, 2 * c, c);
        let hh = g.slice_c(bands, 3 * c, c);
        // low band: learnable spectrum modulation
        let lam = g.param(ps, self.lambda_c);
        let g_ll = g.spectral_modulate(ll, lam);
        // high bands: 5x5 reform then attention over band-resolution tokens
        let hcat = g.concat_c(&[lh, hl, hh]);
        let xhat = self.reform.forward(g, ps, hcat);
        let l_xhat = self.attn.forward(g, ps, xhat, TokenMode::Global);
        // merge, upsample, channel-mix, residual
        let merged = g.concat_c(&[g_ll, l_xhat]);
        let up = self.deconv.forward(g, ps, merged);
        let t2 = self.ln_out.forward(g, ps, up);
        let mixed = self.mlp.forward(g, ps, t2);
        g.add(mixed, x)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (bh, bw) = (h / 2, w / 2);
        self.reform.macs(bh, bw)
            + self.attn.macs(bh, bw, TokenMode::Global)
            + self.deconv.macs(bh, bw)
            + self.mlp.macs(h, w)
    }
}

/// RAG: m RCABs, one MDAB, a closing 3x3 conv, group residual.
pub struct Rag {
    pub rcabs: Vec<Rcab>,
    pub mdab: Mdab,
    pub conv: Conv2d,
}

impl Rag {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        spatial: (usize, usize),
        rcabs: usize,
        heads: usize,
        family: WaveletFamily,
        sqrt_scale: bool,
    ) -> Self {
        let mut s = pb.scope(name);
        Rag {
            rcabs: (0..rcabs)
                .map(|i| Rcab::new(&mut s, &format!("rcab{}", i), channels))
                .collect(),
            mdab: Mdab::new(&mut s, "mdab", channels, spatial, heads, family, sqrt_scale),
            conv: Conv2d::new(&mut s, "conv", channels, channels, 3, 1),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let mut y = x;
        for r in &self.rcabs {
            y = r.forward(g, ps, y);
        }
        y = self.mdab.forward(g, ps, y);
        y = self.conv.forward(g, ps, y);
        g.add(y, x)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.rcabs.iter().map(|r| r.macs(h, w)).sum::<u64>()
            + self.mdab.macs(h, w)
            + self.conv.macs(h, w)
    }
}

pub struct SrBranch {
    pub shallow: Conv2d,
    pub rags: Vec<Rag>,
    pub final_conv: Conv2d,
}

pub struct SrConfig {
    pub channels: usize,
    pub patch: (usize, usize),
    pub rags: usize,
    pub rcabs_per_rag: usize,
    pub heads: usize,
    pub family: WaveletFamily,
    pub sqrt_scale: bool,
}

/// State between the front and back halves (the cross-branch exchange
/// rewrites the features after the first RAG).
pub struct SrFront {
    pub shallow_features: NodeId,
    pub after_first_rag: NodeId,
}

impl SrBranch {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &SrConfig) -> Self {
        assert!(cfg.rags >= 1, "SR branch needs at least one RAG");
        let mut s = pb.scope("sr");
        SrBranch {
            shallow: Conv2d::new(&mut s, "shallow", 3, cfg.channels, 3, 1),
            rags: (0..cfg.rags)
                .map(|i| {
                    Rag::new(
                        &mut s,
                        &format!("rag{}", i),
                        cfg.channels,
                        cfg.patch,
                        cfg.rcabs_per_rag,
                        cfg.heads,
                        cfg.family,
                        cfg.sqrt_scale,
                    )
                })
                .collect(),
            final_conv: Conv2d::new(&mut s, "final", cfg.channels, cfg.channels, 3, 1),
        }
    }

    pub fn front<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        lr_blur: NodeId,
    ) -> SrFront {
        let shallow = self.shallow.forward(g, ps, lr_blur);
        let y = self.rags[0].forward(g, ps, shallow);
        SrFront {
            shallow_features: shallow,
            after_first_rag: y,
        }
    }

    pub fn back<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        front: &SrFront,
        exchanged: NodeId,
    ) -> NodeId {
        let mut y = exchanged;
        for rag in &self.rags[1..] {
            y = rag.forward(g, ps, y);
        }
        let t = self.final_conv.forward(g, ps, y);
        g.add(t, front.shallow_features)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        lr_blur: NodeId,
    ) -> NodeId {
        let front = self.front(g, ps, lr_blur);
        let mid = front.after_first_rag;
        self.back(g, ps, &front, mid)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.shallow.macs(h, w)
            + self.rags.iter().map(|r| r.macs(h, w)).sum::<u64>()
            + self.final_conv.macs(h, w)
    }
}
