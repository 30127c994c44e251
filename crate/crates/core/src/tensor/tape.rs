//! Reverse-mode autodiff tape.
//!
//! Nodes are appended in topological order (an op only references earlier
//! nodes), so backward is a single reverse sweep. Parameter leaves are cached
//! per [`ParamId`] so one tape can hold a whole batch sharing parameters, and
//! gradients stay readable after backward (Grad-CAM reads interior nodes).

use ndarray::{ArrayD, IxDyn};

use super::ops;
use super::{Elem, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    PatchConv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        k: usize,
        s: usize,
    },
    DwConv7 {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Gelu {
        x: NodeId,
    },
    Grn {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    ScalarMul {
        s: NodeId,
        v: NodeId,
    },
    Gap {
        x: NodeId,
    },
    SumAll {
        x: NodeId,
    },
    SoftmaxCe {
        x: NodeId,
        target: usize,
    },
    SqErr {
        x: NodeId,
        target: f64,
    },
    Combine {
        terms: Vec<(NodeId, f64)>,
    },
}

#[derive(Debug)]
struct Node<E: Elem> {
    value: Tensor<E>,
    grad: Option<Tensor<E>>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape<E: Elem> {
    nodes: Vec<Node<E>>,
    param_leaves: Vec<Option<NodeId>>,
}

fn scalar<E: Elem>(v: E) -> Tensor<E> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_leaves: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a registered parameter (tests, probes).
    pub fn leaf_grad(&mut self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Differentiable leaf for a stored parameter, cached so repeated calls
    /// within one tape share a single node.
    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> NodeId {
        if self.param_leaves.len() < store.count() {
            self.param_leaves.resize(store.count(), None);
        }
        if let Some(n) = self.param_leaves[id.index()] {
            return n;
        }
        let n = self.push(store.tensor(id), Op::Leaf, true);
        self.param_leaves[id.index()] = Some(n);
        n
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> E {
        *self.nodes[id.0]
            .value
            .first()
            .expect("scalar node has one element")
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.nodes[id.0].grad.as_ref()
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn check_vec(&self, id: NodeId, what: &str, len: Option<usize>) -> Result<usize> {
        let shape = self.nodes[id.0].value.shape();
        if shape.len() != 1 {
            return Err(Error::shape(what, "rank-1 tensor", format!("rank {}", shape.len())));
        }
        if let Some(l) = len {
            if shape[0] != l {
                return Err(Error::shape(what, format!("length {l}"), format!("length {}", shape[0])));
            }
        }
        Ok(shape[0])
    }

    fn check_hwc(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize)> {
        let shape = self.nodes[id.0].value.shape();
        if shape.len() != 3 {
            return Err(Error::shape(
                what,
                "rank-3 (H, W, C) tensor",
                format!("rank {}", shape.len()),
            ));
        }
        Ok((shape[0], shape[1], shape[2]))
    }

    /// Unpadded k x k convolution with stride `s` (stem and downsample layers).
    /// Weight shape (k, k, Cin, Cout), bias (Cout).
    pub fn patch_conv(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        k: usize,
        s: usize,
    ) -> Result<NodeId> {
        let (h, wd, cin) = self.check_hwc(x, "patch_conv input")?;
        let wshape = self.nodes[w.0].value.shape().to_vec();
        if wshape.len() != 4 || wshape[0] != k || wshape[1] != k || wshape[2] != cin {
            return Err(Error::shape(
                "patch_conv weight",
                format!("({k}, {k}, {cin}, Cout)"),
                format!("{wshape:?}"),
            ));
        }
        let cout = wshape[3];
        self.check_vec(b, "patch_conv bias", Some(cout))?;
        let ho = ops::conv_out_size(h, k, s).ok_or_else(|| {
            Error::shape(
                "patch_conv input",
                format!("height tiled by {k}x{k}/{s}"),
                format!("height {h}"),
            )
        })?;
        let wo = ops::conv_out_size(wd, k, s).ok_or_else(|| {
            Error::shape(
                "patch_conv input",
                format!("width tiled by {k}x{k}/{s}"),
                format!("width {wd}"),
            )
        })?;
        let patches = ops::gather_patches(&self.nodes[x.0].value, k, s);
        let w2 = ops::as_2d(&self.nodes[w.0].value, cout);
        let mut y = patches.dot(&w2);
        let bias = &self.nodes[b.0].value;
        let bview = ndarray::ArrayView1::from_shape(cout, bias.as_slice().expect("standard layout"))
            .expect("bias length checked");
        for mut row in y.rows_mut() {
            row += &bview;
        }
        let needs = self.needs(&[x, w, b]);
        let value = y
            .into_shape_with_order(IxDyn(&[ho, wo, cout]))
            .expect("gemm output is contiguous");
        Ok(self.push(value, Op::PatchConv { x, w, b, k, s }, needs))
    }

    /// Depthwise 7x7 convolution, stride 1, padding 3.
    /// Weight shape (7, 7, C), bias (C).
    pub fn dwconv7(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, _, c) = self.check_hwc(x, "dwconv7 input")?;
        let wshape = self.nodes[w.0].value.shape();
        if wshape != [7, 7, c] {
            return Err(Error::shape(
                "dwconv7 weight",
                format!("(7, 7, {c})"),
                format!("{wshape:?}"),
            ));
        }
        self.check_vec(b, "dwconv7 bias", Some(c))?;
        let value = ops::dwconv7_fwd(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            self.nodes[b.0].value.as_slice().expect("standard layout"),
        );
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::DwConv7 { x, w, b }, needs))
    }

    /// Layer normalization over the last axis with per-channel affine.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let c = *self.nodes[x.0].value.shape().last().ok_or_else(|| {
            Error::shape("layer_norm input", "rank >= 1 tensor", "rank 0".to_string())
        })?;
        self.check_vec(gamma, "layer_norm gamma", Some(c))?;
        self.check_vec(beta, "layer_norm beta", Some(c))?;
        let value = ops::layer_norm_fwd(
            &self.nodes[x.0].value,
            self.nodes[gamma.0].value.as_slice().expect("standard layout"),
            self.nodes[beta.0].value.as_slice().expect("standard layout"),
            ops::LN_EPS,
        );
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta }, needs))
    }

    /// Affine map over the last axis: (..., Cin) x (Cin, Cout) + (Cout).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xshape = self.nodes[x.0].value.shape().to_vec();
        let cin = *xshape.last().ok_or_else(|| {
            Error::shape("linear input", "rank >= 1 tensor", "rank 0".to_string())
        })?;
        let wshape = self.nodes[w.0].value.shape().to_vec();
        if wshape.len() != 2 || wshape[0] != cin {
            return Err(Error::shape(
                "linear weight",
                format!("({cin}, Cout)"),
                format!("{wshape:?}"),
            ));
        }
        let cout = wshape[1];
        self.check_vec(b, "linear bias", Some(cout))?;
        let x2 = ops::as_2d(&self.nodes[x.0].value, cin);
        let w2 = ops::as_2d(&self.nodes[w.0].value, cout);
        let mut y = x2.dot(&w2);
        let bias = &self.nodes[b.0].value;
        let bview = ndarray::ArrayView1::from_shape(cout, bias.as_slice().expect("standard layout"))
            .expect("bias length checked");
        for mut row in y.rows_mut() {
            row += &bview;
        }
        let mut oshape = xshape;
        *oshape.last_mut().expect("non-empty") = cout;
        let needs = self.needs(&[x, w, b]);
        let value = y
            .into_shape_with_order(IxDyn(&oshape))
            .expect("gemm output is contiguous");
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let value = ops::gelu_fwd(&self.nodes[x.0].value);
        let needs = self.needs(&[x]);
        self.push(value, Op::Gelu { x }, needs)
    }

    /// Global response normalization over an (H, W, C) map.
    pub fn grn(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (_, _, c) = self.check_hwc(x, "grn input")?;
        self.check_vec(gamma, "grn gamma", Some(c))?;
        self.check_vec(beta, "grn beta", Some(c))?;
        let value = ops::grn_fwd(
            &self.nodes[x.0].value,
            self.nodes[gamma.0].value.as_slice().expect("standard layout"),
            self.nodes[beta.0].value.as_slice().expect("standard layout"),
            ops::GRN_EPS,
        );
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(value, Op::Grn { x, gamma, beta }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?}", self.nodes[a.0].value.shape()),
                format!("{:?}", self.nodes[b.0].value.shape()),
            ));
        }
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Multiply a tensor by a one-element scalar node (fusion weights).
    pub fn scalar_mul(&mut self, s: NodeId, v: NodeId) -> Result<NodeId> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(Error::shape(
                "scalar_mul scalar",
                "one element",
                format!("{} elements", self.nodes[s.0].value.len()),
            ));
        }
        let sv = *self.nodes[s.0].value.first().expect("one element");
        let value = self.nodes[v.0].value.mapv(|x| x * sv);
        let needs = self.needs(&[s, v]);
        Ok(self.push(value, Op::ScalarMul { s, v }, needs))
    }

    /// Global average pool: (H, W, C) -> (C).
    pub fn gap(&mut self, x: NodeId) -> Result<NodeId> {
        let (h, w, c) = self.check_hwc(x, "gap input")?;
        let xs = self.nodes[x.0].value.as_slice().expect("standard layout");
        let mut acc = vec![E::zero(); c];
        for px in xs.chunks_exact(c) {
            for i in 0..c {
                acc[i] += px[i];
            }
        }
        let inv = E::from_f64(1.0 / (h * w) as f64);
        for v in acc.iter_mut() {
            *v = *v * inv;
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[c]), acc).expect("length c");
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Gap { x }, needs))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut acc = E::zero();
        for &v in self.nodes[x.0].value.iter() {
            acc += v;
        }
        let needs = self.needs(&[x]);
        self.push(scalar(acc), Op::SumAll { x }, needs)
    }

    /// Softmax cross-entropy of a rank-1 logit vector against a class index.
    pub fn softmax_ce(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let k = self.check_vec(logits, "softmax_ce logits", None)?;
        if target >= k {
            return Err(Error::Domain(format!(
                "class index {target} out of range for {k} logits"
            )));
        }
        let loss = ops::softmax_ce(
            self.nodes[logits.0].value.as_slice().expect("standard layout"),
            target,
        );
        let needs = self.needs(&[logits]);
        Ok(self.push(scalar(loss), Op::SoftmaxCe { x: logits, target }, needs))
    }

    /// Squared error of a one-element prediction against a constant target.
    pub fn sq_err(&mut self, pred: NodeId, target: f64) -> Result<NodeId> {
        if self.nodes[pred.0].value.len() != 1 {
            return Err(Error::shape(
                "sq_err prediction",
                "one element",
                format!("{} elements", self.nodes[pred.0].value.len()),
            ));
        }
        let p = *self.nodes[pred.0].value.first().expect("one element");
        let d = p - E::from_f64(target);
        let needs = self.needs(&[pred]);
        Ok(self.push(scalar(d * d), Op::SqErr { x: pred, target }, needs))
    }

    /// Weighted sum of rank-0 terms. Zero-coefficient terms are dropped at
    /// build time so they contribute exactly zero gradient.
    pub fn combine(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut kept = Vec::with_capacity(terms.len());
        let mut acc = E::zero();
        for &(id, coeff) in terms {
            if self.nodes[id.0].value.len() != 1 {
                return Err(Error::shape(
                    "combine term",
                    "one element",
                    format!("{} elements", self.nodes[id.0].value.len()),
                ));
            }
            if coeff == 0.0 {
                continue;
            }
            acc += *self.nodes[id.0].value.first().expect("one element") * E::from_f64(coeff);
            kept.push((id, coeff));
        }
        let needs = kept.iter().any(|(id, _)| self.nodes[id.0].needs_grad);
        Ok(self.push(scalar(acc), Op::Combine { terms: kept }, needs))
    }

    pub fn clear_grads(&mut self) {
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
    }

    /// Backward from a rank-0 node with seed gradient 1.
    pub fn backward_scalar(&mut self, id: NodeId) -> Result<()> {
        let shape = self.nodes[id.0].value.raw_dim();
        self.backward_with_seed(id, ArrayD::from_elem(shape, E::one()))
    }

    /// Backward from any node given a seed gradient of the same shape.
    pub fn backward_with_seed(&mut self, id: NodeId, seed: Tensor<E>) -> Result<()> {
        if seed.shape() != self.nodes[id.0].value.shape() {
            return Err(Error::shape(
                "backward seed",
                format!("{:?}", self.nodes[id.0].value.shape()),
                format!("{:?}", seed.shape()),
            ));
        }
        self.clear_grads();
        if !self.nodes[id.0].needs_grad {
            return Ok(());
        }
        self.nodes[id.0].grad = Some(seed);
        for i in (0..=id.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            self.step_backward(i);
        }
        Ok(())
    }

    fn step_backward(&mut self, i: usize) {
        let (left, right) = self.nodes.split_at_mut(i);
        let node = &right[0];
        let dy = node.grad.as_ref().expect("checked by caller");
        match &node.op {
            Op::Leaf => {}
            Op::PatchConv { x, w, b, k, s } => {
                let (x, w, b, k, s) = (*x, *w, *b, *k, *s);
                let cout = *node.value.shape().last().expect("rank 3");
                let dy2 = ops::as_2d(dy, cout);
                let db = left[b.0]
                    .needs_grad
                    .then(|| dy2.sum_axis(ndarray::Axis(0)).into_dyn());
                let dw = if left[w.0].needs_grad {
                    let patches = ops::gather_patches(&left[x.0].value, k, s);
                    Some(
                        patches
                            .t()
                            .dot(&dy2)
                            .into_shape_with_order(left[w.0].value.raw_dim())
                            .expect("weight numel matches"),
                    )
                } else {
                    None
                };
                let dx = if left[x.0].needs_grad {
                    let sh = left[x.0].value.shape().to_vec();
                    let w2 = ops::as_2d(&left[w.0].value, cout);
                    let dpatches = dy2.dot(&w2.t());
                    Some(ops::scatter_patches(&dpatches, sh[0], sh[1], sh[2], k, s))
                } else {
                    None
                };
                if let Some(db) = db {
                    accum(left, b, db);
                }
                if let Some(dw) = dw {
                    accum(left, w, dw);
                }
                if let Some(dx) = dx {
                    accum(left, x, dx);
                }
            }
            Op::DwConv7 { x, w, b } => {
                let (dx, dw, db) = ops::dwconv7_bwd(&left[x.0].value, &left[w.0].value, dy);
                let c = db.len();
                accum(left, *x, dx);
                accum(left, *w, dw);
                accum(
                    left,
                    *b,
                    ArrayD::from_shape_vec(IxDyn(&[c]), db).expect("length c"),
                );
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (dx, dgamma, dbeta) = ops::layer_norm_bwd(
                    &left[x.0].value,
                    left[gamma.0].value.as_slice().expect("standard layout"),
                    dy,
                    ops::LN_EPS,
                );
                let c = dgamma.len();
                accum(left, *x, dx);
                accum(
                    left,
                    *gamma,
                    ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).expect("length c"),
                );
                accum(
                    left,
                    *beta,
                    ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).expect("length c"),
                );
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let cout = *node.value.shape().last().expect("rank >= 1");
                let cin = *left[x.0].value.shape().last().expect("rank >= 1");
                let dy2 = ops::as_2d(dy, cout);
                let db = left[b.0]
                    .needs_grad
                    .then(|| dy2.sum_axis(ndarray::Axis(0)).into_dyn());
                let dw = left[w.0]
                    .needs_grad
                    .then(|| ops::as_2d(&left[x.0].value, cin).t().dot(&dy2).into_dyn());
                let dx = left[x.0].needs_grad.then(|| {
                    let w2 = ops::as_2d(&left[w.0].value, cout);
                    dy2.dot(&w2.t())
                        .into_shape_with_order(left[x.0].value.raw_dim())
                        .expect("input numel matches")
                });
                if let Some(db) = db {
                    accum(left, b, db);
                }
                if let Some(dw) = dw {
                    accum(left, w, dw);
                }
                if let Some(dx) = dx {
                    accum(left, x, dx);
                }
            }
            Op::Gelu { x } => {
                let dx = ops::gelu_bwd(&left[x.0].value, dy);
                accum(left, *x, dx);
            }
            Op::Grn { x, gamma, beta } => {
                let (dx, dgamma, dbeta) = ops::grn_bwd(
                    &left[x.0].value,
                    left[gamma.0].value.as_slice().expect("standard layout"),
                    dy,
                    ops::GRN_EPS,
                );
                let c = dgamma.len();
                accum(left, *x, dx);
                accum(
                    left,
                    *gamma,
                    ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).expect("length c"),
                );
                accum(
                    left,
                    *beta,
                    ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).expect("length c"),
                );
            }
            Op::Add { a, b } => {
                let d = dy.clone();
                accum(left, *a, d);
                accum(left, *b, dy.clone());
            }
            Op::ScalarMul { s, v } => {
                let sv = *left[s.0].value.first().expect("one element");
                if left[v.0].needs_grad {
                    accum(left, *v, dy.mapv(|g| g * sv));
                }
                if left[s.0].needs_grad {
                    let mut acc = E::zero();
                    for (&g, &x) in dy.iter().zip(left[v.0].value.iter()) {
                        acc += g * x;
                    }
                    let ds = ArrayD::from_elem(left[s.0].value.raw_dim(), acc);
                    accum(left, *s, ds);
                }
            }
            Op::Gap { x } => {
                let sh = left[x.0].value.shape().to_vec();
                let (h, w, c) = (sh[0], sh[1], sh[2]);
                let inv = E::from_f64(1.0 / (h * w) as f64);
                let dys = dy.as_slice().expect("standard layout");
                let mut dx = vec![E::zero(); h * w * c];
                for px in dx.chunks_exact_mut(c) {
                    for i in 0..c {
                        px[i] = dys[i] * inv;
                    }
                }
                accum(
                    left,
                    *x,
                    ArrayD::from_shape_vec(IxDyn(&[h, w, c]), dx).expect("shape computed"),
                );
            }
            Op::SumAll { x } => {
                let g = *dy.first().expect("rank 0");
                let dx = ArrayD::from_elem(left[x.0].value.raw_dim(), g);
                accum(left, *x, dx);
            }
            Op::SoftmaxCe { x, target } => {
                let g = *dy.first().expect("rank 0");
                let logits = left[x.0].value.as_slice().expect("standard layout");
                let mut probs = ops::softmax(logits);
                probs[*target] -= E::one();
                for p in probs.iter_mut() {
                    *p = *p * g;
                }
                let k = logits.len();
                accum(
                    left,
                    *x,
                    ArrayD::from_shape_vec(IxDyn(&[k]), probs).expect("length k"),
                );
            }
            Op::SqErr { x, target } => {
                let g = *dy.first().expect("rank 0");
                let p = *left[x.0].value.first().expect("one element");
                let d = (p - E::from_f64(*target)) * E::from_f64(2.0) * g;
                let dx = ArrayD::from_elem(left[x.0].value.raw_dim(), d);
                accum(left, *x, dx);
            }
            Op::Combine { terms } => {
                let g = *dy.first().expect("rank 0");
                for &(id, coeff) in terms {
                    let d = ArrayD::from_elem(left[id.0].value.raw_dim(), g * E::from_f64(coeff));
                    accum(left, id, d);
                }
            }
        }
    }

    /// Accumulate parameter-leaf gradients into a flat buffer aligned with the
    /// store layout. Parameters absent from this tape contribute nothing.
    pub fn param_grads_into(&self, store: &ParamStore<E>, out: &mut [E]) {
        debug_assert_eq!(out.len(), store.len_flat());
        for (idx, leaf) in self.param_leaves.iter().enumerate() {
            let Some(nid) = leaf else { continue };
            let Some(g) = &self.nodes[nid.0].grad else {
                continue;
            };
            let entry = store.entry(ParamId(idx));
            let gs = g.as_slice().expect("standard layout");
            for (o, &v) in out[entry.offset..entry.offset + entry.len]
                .iter_mut()
                .zip(gs)
            {
                *o += v;
            }
        }
    }
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

fn accum<E: Elem>(nodes: &mut [Node<E>], id: NodeId, delta: Tensor<E>) {
    let n = &mut nodes[id.0];
    if !n.needs_grad {
        return;
    }
    match &mut n.grad {
        Some(g) => g.zip_mut_with(&delta, |a, &b| *a += b),
        None => n.grad = Some(delta),
    }
}
