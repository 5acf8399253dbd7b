//! Multi-head self-attention over configurable token layouts.
//!
//! Q/K/V come from 1x1 convolutions, heads split the channel axis, and a
//! 1x1 output projection merges the heads again. The score scaling is
//! selectable: 1/d (as the attention equation in the block design states
//! it) or the conventional 1/sqrt(d).

use crate::graph::{Graph, NodeId, TokenMode};
use crate::params::{ParamBuilder, ParamStore};
use crate::scalar::Scalar;

use super::layers::Conv2d;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreScale {
    /// Divide scores by the per-head query dimension d.
    InvDim,
    /// Divide scores by sqrt(d).
    InvSqrtDim,
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Conv2d,
    pub k: Conv2d,
    pub v: Conv2d,
    pub proj: Conv2d,
    pub heads: usize,
    pub scale: ScoreScale,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        heads: usize,
        scale: ScoreScale,
    ) -> Self {
        assert!(
            channels % heads == 0,
            "attention: {} heads do not divide {} channels",
            heads,
            channels
        );
        let mut s = pb.scope(name);
        MultiHeadAttention {
            q: Conv2d::new(&mut s, "q", channels, channels, 1, 1),
            k: Conv2d::new(&mut s, "k", channels, channels, 1, 1),
            v: Conv2d::new(&mut s, "v", channels, channels, 1, 1),
            proj: Conv2d::new(&mut s, "proj", channels, channels, 1, 1),
            heads,
            scale,
        }
    }

    fn score_factor(&self) -> f64 {
        let d = (self.q.cout / self.heads) as f64;
        match self.scale {
            ScoreScale::InvDim => 1.0 / d,
            ScoreScale::InvSqrtDim => 1.0 / d.sqrt(),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: NodeId,
        mode: TokenMode,
    ) -> NodeId {
        let feature_shape = g.shape(x);
        let q = self.q.forward(g, ps, x);
        let k = self.k.forward(g, ps, x);
        let v = self.v.forward(g, ps, x);
        let qt = g.to_tokens(q, self.heads, mode);
        let kt = g.to_tokens(k, self.heads, mode);
        let vt = g.to_tokens(v, self.heads, mode);
        let scores = g.bmm_nt(qt, kt);
        let scaled = g.scale(scores, self.score_factor());
        let attn = g.softmax(scaled, 2);
        let mixed = g.bmm_nn(attn, vt);
        let merged = g.from_tokens(mixed, self.heads, mode, feature_shape);
        self.proj.forward(g, ps, merged)
    }

    /// Attention weights (softmax output) for inspection in tests.
    pub fn attn_weights<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: NodeId,
        mode: TokenMode,
    ) -> NodeId {
        let q = self.q.forward(g, ps, x);
        let k = self.k.forward(g, ps, x);
        let qt = g.to_tokens(q, self.heads, mode);
        let kt = g.to_tokens(k, self.heads, mode);
        let scores = g.bmm_nt(qt, kt);
        let scaled = g.scale(scores, self.score_factor());
        g.softmax(scaled, 2)
    }

    /// MACs on an (h, w) map: projections plus the two token matmuls.
    pub fn macs(&self, h: usize, w: usize, mode: TokenMode) -> u64 {
        let c = self.q.cout;
        let proj = self.q.macs(h, w) + self.k.macs(h, w) + self.v.macs(h, w) + self.proj.macs(h, w);
        let tokens_per_group = match mode {
            TokenMode::Global => h * w,
            TokenMode::Rows => w,
            TokenMode::Cols => h,
        } as u64;
        let groups = ((h * w) as u64 / tokens_per_group) * self.heads as u64;
        let d = (c / self.heads) as u64;
        // QK^T and attn*V
        let matmuls = groups * tokens_per_group * tokens_per_group * d * 2;
        proj + matmuls
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Shape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_rows_sum_to_one_and_shape_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = crate::params::ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let attn = MultiHeadAttention::new(&mut pb, "attn", 8, 2, ScoreScale::InvDim);
        let mut g = Graph::new();
        let x = g.var(Tensor::rand_uniform(Shape::new(1, 8, 4, 4), -1.0, 1.0, &mut rng));
        let w = attn.attn_weights(&mut g, &ps, x, TokenMode::Global);
        let ws = g.shape(w);
        assert_eq!(ws, Shape::new(2, 16, 16, 1));
        for gi in 0..ws.n {
            for m in 0..ws.c {
                let mut sum = 0.0;
                for k in 0..ws.h {
                    sum += g.value(w).at(gi, m, k, 0);
                }
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
        let y = attn.forward(&mut g, &ps, x, TokenMode::Global);
        assert_eq!(g.shape(y), Shape::new(1, 8, 4, 4));
    }
}
