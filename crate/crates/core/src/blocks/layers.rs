//! Parameterized layers. Structs hold [`ParamId`]s plus geometry; forward
//! methods are generic over the scalar type. `macs` methods feed the
//! analytic FLOPs counter.

use crate::graph::{Graph, NodeId};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::shape::Shape;

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let mut s = pb.scope(name);
        let w = s.kaiming("w", Shape::new(cout, cin, k, k), cin * k * k);
        let b = s.zeros("b", Shape::new(1, cout, 1, 1));
        Conv2d {
            w,
            b,
            cin,
            cout,
            k,
            stride,
            pad: (k - 1) / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    /// MACs for an input of spatial size (h, w).
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let oh = (h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.k) / self.stride + 1;
        (oh * ow * self.cout * self.cin * self.k * self.k) as u64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let mut s = pb.scope(name);
        let w = s.kaiming("w", Shape::new(cin, cout, k, k), cin * k * k);
        let b = s.zeros("b", Shape::new(1, cout, 1, 1));
        ConvTranspose2d {
            w,
            b,
            cin,
            cout,
            k,
            stride,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.conv_transpose2d(x, w, Some(b), self.stride)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (h * w * self.cin * self.cout * self.k * self.k) as u64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        din: usize,
        dout: usize,
    ) -> Self {
        let mut s = pb.scope(name);
        let w = s.kaiming("w", Shape::new(din, dout, 1, 1), din);
        let b = s.zeros("b", Shape::new(1, dout, 1, 1));
        Linear { w, b, din, dout }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.linear(x, w, Some(b))
    }

    pub fn macs(&self, rows: usize) -> u64 {
        (rows * self.din * self.dout) as u64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub c: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        let mut s = pb.scope(name);
        let gamma = s.ones("gamma", Shape::new(1, c, 1, 1));
        let beta = s.zeros("beta", Shape::new(1, c, 1, 1));
        LayerNorm { gamma, beta, c }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Position-wise two-layer MLP (1x1 convs with a GELU between).
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub fc0: Conv2d,
    pub fc1: Conv2d,
}

impl Mlp {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        let mut s = pb.scope(name);
        Mlp {
            fc0: Conv2d::new(&mut s, "fc0", c, c, 1, 1),
            fc1: Conv2d::new(&mut s, "fc1", c, c, 1, 1),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: NodeId) -> NodeId {
        let h = self.fc0.forward(g, ps, x);
        let a = g.gelu(h);
        self.fc1.forward(g, ps, a)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.fc0.macs(h, w) + self.fc1.macs(h, w)
    }
}
