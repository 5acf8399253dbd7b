//! The assembled dual-branch model: deblurring branch and SR branch run in
//! parallel, one cross-branch exchange couples them at the representation
//! stage, the final feature fusion merges both feature maps with the input
//! image, and the reconstruction head upsamples to the HR prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::deblur::{DeblurBranch, DeblurConfig, PakbPath, PakbThresholds};
use crate::blocks::fusion::{Cbff, Fff, Reconstruction};
use crate::blocks::sr::{SrBranch, SrConfig};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::spectral::fourier::half_width;
use crate::spectral::WaveletFamily;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub scale: usize,
    /// Base channel width; also the fused feature width c_f.
    pub channels: usize,
    pub rags: usize,
    pub rcabs_per_rag: usize,
    pub pakb_kernels: [usize; 3],
    pub wavelet: WaveletFamily,
    /// MDAB attention heads.
    pub heads: usize,
    pub min_t: f64,
    pub max_t: f64,
    pub mmg_ratio: usize,
    /// Spatial size the model is built for (MMG FC layers, lambda_c and
    /// the Wiener map are sized from it).
    pub patch: usize,
    pub pakbs_per_level: usize,
    pub strip_heads: usize,
    /// Score scaling 1/sqrt(d) instead of the printed 1/d.
    pub sqrt_scale: bool,
    pub recon_res_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 2,
            channels: 16,
            rags: 2,
            rcabs_per_rag: 2,
            pakb_kernels: [3, 5, 7],
            wavelet: WaveletFamily::Haar,
            heads: 2,
            min_t: 1.0 / 3.0,
            max_t: 2.0 / 3.0,
            mmg_ratio: 4,
            patch: 48,
            pakbs_per_level: 2,
            strip_heads: 4,
            sqrt_scale: false,
            recon_res_blocks: 2,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration for fp64 gradient checks.
    pub fn gradcheck() -> Self {
        ModelConfig {
            channels: 4,
            rags: 2,
            rcabs_per_rag: 1,
            heads: 2,
            patch: 16,
            pakbs_per_level: 1,
            strip_heads: 2,
            recon_res_blocks: 1,
            ..ModelConfig::default()
        }
    }
}

pub struct ModelOutput {
    pub deblur_img: NodeId,
    pub hr_pred: NodeId,
    pub phi_deblur: NodeId,
    pub phi_sr: NodeId,
    pub phi_fusion: NodeId,
}

pub struct AkmdModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub deblur: DeblurBranch,
    pub sr: SrBranch,
    pub cbff: Cbff,
    pub fff: Fff,
    pub recon: Reconstruction,
    /// Learnable Wiener frequency response H, one map per color channel
    /// at HR size; the loss module combines it with K.
    pub wiener_h: ParamId,
}

impl<T: Scalar> AkmdModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        assert!(
            cfg.patch % 4 == 0,
            "model patch size {} must be divisible by 4",
            cfg.patch
        );
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let thresholds = PakbThresholds::new(cfg.min_t, cfg.max_t);
        let deblur = DeblurBranch::new(
            &mut pb,
            &DeblurConfig {
                channels: cfg.channels,
                feature_channels: cfg.channels,
                patch: (cfg.patch, cfg.patch),
                kernels: cfg.pakb_kernels,
                thresholds,
                mmg_ratio: cfg.mmg_ratio,
                pakbs_per_level: cfg.pakbs_per_level,
                strip_heads: cfg.strip_heads,
            },
        );
        let sr = SrBranch::new(
            &mut pb,
            &SrConfig {
                channels: cfg.channels,
                patch: (cfg.patch, cfg.patch),
                rags: cfg.rags,
                rcabs_per_rag: cfg.rcabs_per_rag,
                heads: cfg.heads,
                family: cfg.wavelet,
                sqrt_scale: cfg.sqrt_scale,
            },
        );
        let cbff = Cbff::new(&mut pb, cfg.channels, 4 * cfg.channels);
        let fff = Fff::new(&mut pb, cfg.channels);
        let recon = Reconstruction::new(&mut pb, cfg.channels, cfg.recon_res_blocks, cfg.scale);
        let hr = cfg.scale * cfg.patch;
        let wiener_h = pb
            .scope("loss.aw")
            .ones("h", Shape::new(1, 3, hr, half_width(hr)));
        AkmdModel {
            cfg,
            store,
            deblur,
            sr,
            cbff,
            fff,
            recon,
            wiener_h,
        }
    }

    /// Full forward pass from an lr_blur node already in the graph.
    pub fn forward_node(
        &self,
        g: &mut Graph<T>,
        lr_blur: NodeId,
        path: PakbPath,
        inference: bool,
    ) -> ModelOutput {
        let s = g.shape(lr_blur);
        assert_eq!(s.c, 3, "model expects 3-channel input, got {}", s);
        assert!(
            s.h % 4 == 0,
            "input height {} is not divisible by 4",
            s.h
        );
        assert!(s.w % 4 == 0, "input width {} is not divisible by 4", s.w);

        let enc = self.deblur.encode(g, ps_of(self), lr_blur, path);
        let front = self.sr.front(g, ps_of(self), lr_blur);
        let (new_mid, new_sr) = self
            .cbff
            .forward(g, ps_of(self), enc.mid, front.after_first_rag);
        let deblur_out = self.deblur.decode(g, ps_of(self), &enc, new_mid, path);
        let phi_sr = self.sr.back(g, ps_of(self), &front, new_sr);
        let phi_fusion = self
            .fff
            .forward(g, ps_of(self), lr_blur, phi_sr, deblur_out.features);
        let hr_pred = self
            .recon
            .forward(g, ps_of(self), phi_fusion, lr_blur, inference);
        ModelOutput {
            deblur_img: deblur_out.image,
            hr_pred,
            phi_deblur: deblur_out.features,
            phi_sr,
            phi_fusion,
        }
    }

    /// Inference on a plain tensor: returns (deblur_img, hr_pred), both
    /// clamped to [0,1].
    pub fn restore(&self, lr_blur: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let mut g = Graph::new();
        let x = g.constant(lr_blur.clone());
        let out = self.forward_node(&mut g, x, PakbPath::Hard, true);
        let deblur = g.clamp01(out.deblur_img);
        (g.value(deblur).clone(), g.value(out.hr_pred).clone())
    }

    pub fn count_parameters(&self) -> usize {
        self.store.count_scalars()
    }

    /// Analytic multiply-accumulate estimate for one forward pass on an
    /// (h, w) input (conv/linear/attention terms; transforms and
    /// resampling are a vanishing share at these sizes).
    pub fn flops_estimate(&self, h: usize, w: usize) -> u64 {
        self.deblur.macs(h, w)
            + self.sr.macs(h, w)
            + self.cbff.macs((h / 4, w / 4), (h, w))
            + self.fff.macs(h, w)
            + self.recon.macs(h, w)
    }
}

// Borrow helper so forward_node can thread the store through block calls.
fn ps_of<T: Scalar>(m: &AkmdModel<T>) -> &ParamStore<T> {
    &m.store
}
