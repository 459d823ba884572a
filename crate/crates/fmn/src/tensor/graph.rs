use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Epsilon added to the variance before the batch-norm rsqrt.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch statistics in the running-average update.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics owned by a batch-norm layer. Updated in
/// place by train-mode forward passes, read by eval-mode passes.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<E: Element> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

impl<E: Element> BnStats<E> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![E::zero(); channels],
            var: vec![E::one(); channels],
        }
    }
}

/// Op record with the context its backward rule needs.
#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Reshape(NodeId),
    TransposeLast2(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: NodeId,
        /// Flat index into the input buffer of the selected element, one per
        /// output element (first maximum in row-major window order).
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: Mode,
        /// Mean and 1/sqrt(var + eps) actually used for normalization.
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    GlobalAvgPool(NodeId),
    ApplyMask {
        f: NodeId,
        m: NodeId,
    },
    Gather {
        x: NodeId,
        indices: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        /// Softmax probabilities saved by the forward pass.
        probs: Vec<f64>,
    },
    HingeRank {
        p_l: NodeId,
        active: Vec<bool>,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node<E: Element> {
    op: Op,
    tensor: Tensor<E>,
}

fn make_node<E: Element>(op: Op, shape: &[usize], data: Vec<E>, requires_grad: bool) -> Node<E> {
    let mut tensor = Tensor::new(shape, data).expect("op output shape consistent with data");
    tensor.requires_grad = requires_grad;
    Node { op, tensor }
}

/// Eager computation tape. Each op executes as it is recorded, so node
/// insertion order is a topological order by construction and `backward`
/// can run a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a graph input. Its `requires_grad` flag decides
    /// whether `backward` materializes a gradient for it.
    pub fn leaf(&mut self, mut tensor: Tensor<E>) -> NodeId {
        tensor.grad = None;
        let requires = tensor.requires_grad;
        let node = Node {
            op: Op::Leaf,
            tensor,
        };
        debug_assert!(node.tensor.requires_grad == requires);
        self.push_node(node)
    }

    /// Insert a tensor that never receives gradients.
    pub fn constant(&mut self, mut tensor: Tensor<E>) -> NodeId {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].tensor
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[E]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let t = self.value(id);
        if t.numel() != 1 {
            return Err(Error::contract(format!(
                "expected a scalar node, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0].f64())
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
    }

    fn push_node(&mut self, node: Node<E>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tensor.requires_grad)
    }

    // ---- elementwise ----

    /// Elementwise sum of two same-shape tensors (residual connections).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dimension(format!(
                "add: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<E> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let node = make_node(Op::Add(a, b), ta.shape(), data, self.needs_grad(&[a, b]));
        Ok(self.push_node(node))
    }

    /// max(x, 0), with subgradient 0 at the kink.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data: Vec<E> = t
            .data()
            .iter()
            .map(|&v| if v > E::zero() { v } else { E::zero() })
            .collect();
        let node = make_node(Op::Relu(x), t.shape(), data, self.needs_grad(&[x]));
        self.push_node(node)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data: Vec<E> = t.data().iter().map(|&v| v.exp()).collect();
        let node = make_node(Op::Exp(x), t.shape(), data, self.needs_grad(&[x]));
        self.push_node(node)
    }

    /// Same buffer, new shape. Element count must match.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(Error::dimension(format!(
                "reshape: {:?} has {} elements, target {:?} wants {}",
                t.shape(),
                t.numel(),
                shape,
                numel
            )));
        }
        let data = t.data().to_vec();
        let node = make_node(Op::Reshape(x), shape, data, self.needs_grad(&[x]));
        Ok(self.push_node(node))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let rank = t.rank();
        if rank < 2 {
            return Err(Error::dimension(format!(
                "transpose: rank {} tensor has no trailing axes",
                rank
            )));
        }
        let (r, c) = (t.shape()[rank - 2], t.shape()[rank - 1]);
        let lead: usize = t.shape()[..rank - 2].iter().product();
        let mut out_shape = t.shape().to_vec();
        out_shape[rank - 2] = c;
        out_shape[rank - 1] = r;
        let src = t.data();
        let mut data = vec![E::zero(); t.numel()];
        for l in 0..lead {
            let base = l * r * c;
            for i in 0..r {
                for j in 0..c {
                    data[base + j * r + i] = src[base + i * c + j];
                }
            }
        }
        let requires = self.needs_grad(&[x]);
        let node = make_node(Op::TransposeLast2(x), &out_shape, data, requires);
        Ok(self.push_node(node))
    }

    // ---- dense / conv layers ----

    /// Affine map `out = x W + b` with `x` of shape `[m]` or `[batch, m]`,
    /// `w` of shape `[m, n]` and `b` of shape `[n]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.rank() != 2 {
            return Err(Error::dimension(format!(
                "linear: weight must be rank 2, got {:?}",
                tw.shape()
            )));
        }
        let (m, n) = (tw.shape()[0], tw.shape()[1]);
        let (batch, xm) = match tx.rank() {
            1 => (1, tx.shape()[0]),
            2 => (tx.shape()[0], tx.shape()[1]),
            r => {
                return Err(Error::dimension(format!(
                    "linear: input must be rank 1 or 2, got rank {}",
                    r
                )))
            }
        };
        if xm != m {
            return Err(Error::dimension(format!(
                "linear: input width {} does not match weight rows {}",
                xm, m
            )));
        }
        if tb.shape() != [n] {
            return Err(Error::dimension(format!(
                "linear: bias shape {:?}, expected [{}]",
                tb.shape(),
                n
            )));
        }
        let xd = tx.data();
        let wd = tw.data();
        let bd = tb.data();
        let mut data = vec![E::zero(); batch * n];
        let mut acc = vec![0.0f64; n];
        for bi in 0..batch {
            for (j, a) in acc.iter_mut().enumerate() {
                *a = bd[j].f64();
            }
            let row = &xd[bi * m..(bi + 1) * m];
            for (i, &xi) in row.iter().enumerate() {
                let xi = xi.f64();
                let wrow = &wd[i * n..(i + 1) * n];
                for (a, &wij) in acc.iter_mut().zip(wrow) {
                    *a += xi * wij.f64();
                }
            }
            for (o, &a) in data[bi * n..(bi + 1) * n].iter_mut().zip(&acc) {
                *o = E::of(a);
            }
        }
        let out_shape: Vec<usize> = if tx.rank() == 1 {
            vec![n]
        } else {
            vec![batch, n]
        };
        let requires = self.needs_grad(&[x, w, b]);
        let node = make_node(Op::Linear { x, w, b }, &out_shape, data, requires);
        Ok(self.push_node(node))
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `x`: `[c_in, h, w]` or `[batch, c_in, h, w]`; `w`: `[c_out, c_in, kh, kw]`;
    /// `b`: `[c_out]`. Each output element is the bias plus the sum over
    /// `(c_in, kh, kw)` in ascending index order, accumulated in `f64`;
    /// out-of-bounds taps contribute zero.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::contract("conv2d: stride must be at least 1"));
        }
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.rank() != 4 {
            return Err(Error::dimension(format!(
                "conv2d: kernel must be rank 4, got {:?}",
                tw.shape()
            )));
        }
        let (oc, ic, kh, kw) = (tw.shape()[0], tw.shape()[1], tw.shape()[2], tw.shape()[3]);
        let (batch, xc, h, w_in, batched) = match tx.rank() {
            3 => (1, tx.shape()[0], tx.shape()[1], tx.shape()[2], false),
            4 => (
                tx.shape()[0],
                tx.shape()[1],
                tx.shape()[2],
                tx.shape()[3],
                true,
            ),
            r => {
                return Err(Error::dimension(format!(
                    "conv2d: input must be rank 3 or 4, got rank {}",
                    r
                )))
            }
        };
        if xc != ic {
            return Err(Error::dimension(format!(
                "conv2d: input has {} channels, kernel expects {}",
                xc, ic
            )));
        }
        if tb.shape() != [oc] {
            return Err(Error::dimension(format!(
                "conv2d: bias shape {:?}, expected [{}]",
                tb.shape(),
                oc
            )));
        }
        if h + 2 * pad < kh || w_in + 2 * pad < kw {
            return Err(Error::dimension(format!(
                "conv2d: kernel {}x{} exceeds padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w_in + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w_in + 2 * pad - kw) / stride + 1;

        let xd = tx.data();
        let kd = tw.data();
        let bd = tb.data();
        let mut data = vec![E::zero(); batch * oc * oh * ow];
        let mut acc = vec![0.0f64; oh * ow];
        for n in 0..batch {
            for o in 0..oc {
                acc.fill(bd[o].f64());
                for i in 0..ic {
                    let plane = &xd[(n * ic + i) * h * w_in..(n * ic + i + 1) * h * w_in];
                    for ky in 0..kh {
                        let Some((oy_lo, oy_hi)) = tap_range(ky, h, oh, stride, pad) else {
                            continue;
                        };
                        for kx in 0..kw {
                            let Some((ox_lo, ox_hi)) = tap_range(kx, w_in, ow, stride, pad)
                            else {
                                continue;
                            };
                            let wv = kd[((o * ic + i) * kh + ky) * kw + kx].f64();
                            for oy in oy_lo..=oy_hi {
                                let iy = oy * stride + ky - pad;
                                let in_row = &plane[iy * w_in..(iy + 1) * w_in];
                                let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                                for ox in ox_lo..=ox_hi {
                                    let ix = ox * stride + kx - pad;
                                    acc_row[ox] += wv * in_row[ix].f64();
                                }
                            }
                        }
                    }
                }
                let out_plane = &mut data[(n * oc + o) * oh * ow..(n * oc + o + 1) * oh * ow];
                for (dst, &a) in out_plane.iter_mut().zip(&acc) {
                    *dst = E::of(a);
                }
            }
        }
        let out_shape: Vec<usize> = if batched {
            vec![batch, oc, oh, ow]
        } else {
            vec![oc, oh, ow]
        };
        let requires = self.needs_grad(&[x, w, b]);
        let node = make_node(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            &out_shape,
            data,
            requires,
        );
        Ok(self.push_node(node))
    }

    /// Square max pooling without padding. Ties resolve to the first maximum
    /// in row-major window order, and the gradient routes only there.
    pub fn maxpool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        if window == 0 || stride == 0 {
            return Err(Error::contract(
                "maxpool2d: window and stride must be at least 1",
            ));
        }
        let tx = self.value(x);
        let (batch, c, h, w, batched) = match tx.rank() {
            3 => (1, tx.shape()[0], tx.shape()[1], tx.shape()[2], false),
            4 => (
                tx.shape()[0],
                tx.shape()[1],
                tx.shape()[2],
                tx.shape()[3],
                true,
            ),
            r => {
                return Err(Error::dimension(format!(
                    "maxpool2d: input must be rank 3 or 4, got rank {}",
                    r
                )))
            }
        };
        if window > h || window > w {
            return Err(Error::dimension(format!(
                "maxpool2d: window {} exceeds input {}x{}",
                window, h, w
            )));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let xd = tx.data();
        let mut data = vec![E::zero(); batch * c * oh * ow];
        let mut argmax = vec![0usize; batch * c * oh * ow];
        for p in 0..batch * c {
            let plane_off = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = plane_off + oy * stride * w + ox * stride;
                    let mut best = xd[best_idx];
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = plane_off + (oy * stride + ky) * w + ox * stride + kx;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = p * oh * ow + oy * ow + ox;
                    data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let out_shape: Vec<usize> = if batched {
            vec![batch, c, oh, ow]
        } else {
            vec![c, oh, ow]
        };
        let requires = self.needs_grad(&[x]);
        let node = make_node(Op::MaxPool2d { x, argmax }, &out_shape, data, requires);
        Ok(self.push_node(node))
    }

    /// Batch normalization over `[batch, c, h, w]`.
    ///
    /// Train mode normalizes with biased batch statistics (and needs a batch
    /// of at least 2), then folds them into `stats` with weight
    /// [`BN_MOMENTUM`]. Eval mode normalizes with `stats` and leaves it
    /// untouched.
    pub fn batchnorm2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &mut BnStats<E>,
        mode: Mode,
    ) -> Result<NodeId> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.rank() != 4 {
            return Err(Error::dimension(format!(
                "batchnorm2d: input must be rank 4, got {:?}",
                tx.shape()
            )));
        }
        let (batch, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::dimension(format!(
                "batchnorm2d: gamma {:?} / beta {:?} must both be [{}]",
                tg.shape(),
                tb.shape(),
                c
            )));
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::dimension(format!(
                "batchnorm2d: running stats track {} channels, input has {}",
                stats.mean.len(),
                c
            )));
        }
        if mode == Mode::Train && batch < 2 {
            return Err(Error::InvalidBatch(format!(
                "batchnorm2d: train mode needs a batch of at least 2, got {}",
                batch
            )));
        }
        let spatial = h * w;
        let n_per_c = batch * spatial;
        let xd = tx.data();
        let mut mean = vec![0.0f64; c];
        let mut inv_std = vec![0.0f64; c];
        match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    for b in 0..batch {
                        let off = (b * c + ch) * spatial;
                        for &v in &xd[off..off + spatial] {
                            sum += v.f64();
                        }
                    }
                    let mu = sum / n_per_c as f64;
                    let mut sq = 0.0f64;
                    for b in 0..batch {
                        let off = (b * c + ch) * spatial;
                        for &v in &xd[off..off + spatial] {
                            let d = v.f64() - mu;
                            sq += d * d;
                        }
                    }
                    let var = sq / n_per_c as f64;
                    mean[ch] = mu;
                    inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
                    stats.mean[ch] =
                        E::of((1.0 - BN_MOMENTUM) * stats.mean[ch].f64() + BN_MOMENTUM * mu);
                    stats.var[ch] =
                        E::of((1.0 - BN_MOMENTUM) * stats.var[ch].f64() + BN_MOMENTUM * var);
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    mean[ch] = stats.mean[ch].f64();
                    inv_std[ch] = 1.0 / (stats.var[ch].f64() + BN_EPS).sqrt();
                }
            }
        }
        let gd = tg.data();
        let bd = tb.data();
        let mut data = vec![E::zero(); xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * spatial;
                let (mu, istd) = (mean[ch], inv_std[ch]);
                let (ga, be) = (gd[ch].f64(), bd[ch].f64());
                for (dst, &v) in data[off..off + spatial]
                    .iter_mut()
                    .zip(&xd[off..off + spatial])
                {
                    *dst = E::of((v.f64() - mu) * istd * ga + be);
                }
            }
        }
        let requires = self.needs_grad(&[x, gamma, beta]);
        let shape = tx.shape().to_vec();
        let node = make_node(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                mean,
                inv_std,
            },
            &shape,
            data,
            requires,
        );
        Ok(self.push_node(node))
    }

    // ---- reductions / heads ----

    /// Row-wise softmax over the last axis of a rank 1 or 2 tensor, with the
    /// usual max subtraction so magnitudes up to about 1e4 stay finite.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let (rows, r) = match tx.rank() {
            1 => (1, tx.shape()[0]),
            2 => (tx.shape()[0], tx.shape()[1]),
            rk => {
                return Err(Error::dimension(format!(
                    "softmax: input must be rank 1 or 2, got rank {}",
                    rk
                )))
            }
        };
        if r == 0 {
            return Err(Error::dimension("softmax: empty rows"));
        }
        let xd = tx.data();
        let mut data = vec![E::zero(); xd.len()];
        let mut exps = vec![0.0f64; r];
        for row in 0..rows {
            let src = &xd[row * r..(row + 1) * r];
            let max = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.f64()));
            let mut sum = 0.0f64;
            for (e, &v) in exps.iter_mut().zip(src) {
                *e = (v.f64() - max).exp();
                sum += *e;
            }
            for (dst, &e) in data[row * r..(row + 1) * r].iter_mut().zip(&exps) {
                *dst = E::of(e / sum);
            }
        }
        let requires = self.needs_grad(&[x]);
        let shape = tx.shape().to_vec();
        let node = make_node(Op::Softmax(x), &shape, data, requires);
        Ok(self.push_node(node))
    }

    /// Spatial mean per channel: `[c, h, w] -> [c]` or `[b, c, h, w] -> [b, c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let (planes, spatial, out_shape): (usize, usize, Vec<usize>) = match tx.rank() {
            3 => (
                tx.shape()[0],
                tx.shape()[1] * tx.shape()[2],
                vec![tx.shape()[0]],
            ),
            4 => (
                tx.shape()[0] * tx.shape()[1],
                tx.shape()[2] * tx.shape()[3],
                vec![tx.shape()[0], tx.shape()[1]],
            ),
            r => {
                return Err(Error::dimension(format!(
                    "global_avg_pool: input must be rank 3 or 4, got rank {}",
                    r
                )))
            }
        };
        if spatial == 0 {
            return Err(Error::dimension("global_avg_pool: empty spatial extent"));
        }
        let xd = tx.data();
        let mut data = vec![E::zero(); planes];
        for (p, dst) in data.iter_mut().enumerate() {
            let mut sum = 0.0f64;
            for &v in &xd[p * spatial..(p + 1) * spatial] {
                sum += v.f64();
            }
            *dst = E::of(sum / spatial as f64);
        }
        let requires = self.needs_grad(&[x]);
        let node = make_node(Op::GlobalAvgPool(x), &out_shape, data, requires);
        Ok(self.push_node(node))
    }

    /// Multiply every channel of `f` by the same spatial map `m`:
    /// `[c, h, w] * [h, w]` or `[b, c, h, w] * [b, h, w]`.
    pub fn apply_mask(&mut self, f: NodeId, m: NodeId) -> Result<NodeId> {
        let (tf, tm) = (self.value(f), self.value(m));
        let (batch, c, h, w) = match (tf.rank(), tm.rank()) {
            (3, 2) => (1, tf.shape()[0], tf.shape()[1], tf.shape()[2]),
            (4, 3) => {
                if tf.shape()[0] != tm.shape()[0] {
                    return Err(Error::dimension(format!(
                        "apply_mask: feature batch {} vs mask batch {}",
                        tf.shape()[0],
                        tm.shape()[0]
                    )));
                }
                (tf.shape()[0], tf.shape()[1], tf.shape()[2], tf.shape()[3])
            }
            (a, b) => {
                return Err(Error::dimension(format!(
                    "apply_mask: unsupported ranks {} (features) and {} (mask)",
                    a, b
                )))
            }
        };
        if tm.shape()[tm.rank() - 2..] != [h, w] {
            return Err(Error::dimension(format!(
                "apply_mask: mask {:?} does not cover feature planes {}x{}",
                tm.shape(),
                h,
                w
            )));
        }
        let fd = tf.data();
        let md = tm.data();
        let spatial = h * w;
        let mut data = vec![E::zero(); fd.len()];
        for b in 0..batch {
            let mplane = &md[b * spatial..(b + 1) * spatial];
            for ch in 0..c {
                let off = (b * c + ch) * spatial;
                for ((dst, &fv), &mv) in data[off..off + spatial]
                    .iter_mut()
                    .zip(&fd[off..off + spatial])
                    .zip(mplane)
                {
                    *dst = fv * mv;
                }
            }
        }
        let requires = self.needs_grad(&[f, m]);
        let shape = tf.shape().to_vec();
        let node = make_node(Op::ApplyMask { f, m }, &shape, data, requires);
        Ok(self.push_node(node))
    }

    /// Pick one entry per row: `[r]` with one index gives `[1]`, `[b, r]`
    /// with `b` indices gives `[b]`.
    pub fn gather(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let tx = self.value(x);
        let (rows, r) = match tx.rank() {
            1 => (1, tx.shape()[0]),
            2 => (tx.shape()[0], tx.shape()[1]),
            rk => {
                return Err(Error::dimension(format!(
                    "gather: input must be rank 1 or 2, got rank {}",
                    rk
                )))
            }
        };
        if indices.len() != rows {
            return Err(Error::dimension(format!(
                "gather: {} rows but {} indices",
                rows,
                indices.len()
            )));
        }
        for (row, &ix) in indices.iter().enumerate() {
            if ix >= r {
                return Err(Error::contract(format!(
                    "gather: index {} out of range for row {} of width {}",
                    ix, row, r
                )));
            }
        }
        let xd = tx.data();
        let data: Vec<E> = indices
            .iter()
            .enumerate()
            .map(|(row, &ix)| xd[row * r + ix])
            .collect();
        let requires = self.needs_grad(&[x]);
        let node = make_node(
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            &[rows],
            data,
            requires,
        );
        Ok(self.push_node(node))
    }

    /// Mean negative log softmax probability of the labeled class.
    ///
    /// `logits`: `[r]` with one label or `[b, r]` with `b` labels. Computed
    /// through the log-sum-exp form, so large logits do not overflow.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let tx = self.value(logits);
        let (rows, r) = match tx.rank() {
            1 => (1, tx.shape()[0]),
            2 => (tx.shape()[0], tx.shape()[1]),
            rk => {
                return Err(Error::dimension(format!(
                    "cross_entropy: logits must be rank 1 or 2, got rank {}",
                    rk
                )))
            }
        };
        if r < 2 {
            return Err(Error::dimension(format!(
                "cross_entropy: need at least 2 classes, got {}",
                r
            )));
        }
        if labels.len() != rows {
            return Err(Error::dimension(format!(
                "cross_entropy: {} rows but {} labels",
                rows,
                labels.len()
            )));
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= r {
                return Err(Error::contract(format!(
                    "cross_entropy: label {} out of range for {} classes (row {})",
                    label, r, row
                )));
            }
        }
        let xd = tx.data();
        let mut probs = vec![0.0f64; rows * r];
        let mut total = 0.0f64;
        for (row, &label) in labels.iter().enumerate() {
            let src = &xd[row * r..(row + 1) * r];
            let max = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.f64()));
            let mut sum = 0.0f64;
            for (p, &v) in probs[row * r..(row + 1) * r].iter_mut().zip(src) {
                *p = (v.f64() - max).exp();
                sum += *p;
            }
            for p in &mut probs[row * r..(row + 1) * r] {
                *p /= sum;
            }
            let lse = max + sum.ln();
            total += lse - src[label].f64();
        }
        let loss = total / rows as f64;
        let requires = self.needs_grad(&[logits]);
        let node = make_node(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[1],
            vec![E::of(loss)],
            requires,
        );
        Ok(self.push_node(node))
    }

    /// Mean hinge `max(0, p_ref - p + margin)` pushing the probabilities in
    /// `p_l` above the fixed references `p_ref`. The references are plain
    /// numbers, so no gradient flows toward whatever produced them. The
    /// subgradient at the kink is 0.
    pub fn hinge_rank(&mut self, p_l: NodeId, p_ref: &[f64], margin: f64) -> Result<NodeId> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(Error::contract(format!(
                "hinge_rank: margin must be finite and nonnegative, got {}",
                margin
            )));
        }
        let tp = self.value(p_l);
        if tp.rank() != 1 || tp.numel() == 0 {
            return Err(Error::dimension(format!(
                "hinge_rank: probabilities must be a nonempty rank 1 tensor, got {:?}",
                tp.shape()
            )));
        }
        let rows = tp.shape()[0];
        if p_ref.len() != rows {
            return Err(Error::dimension(format!(
                "hinge_rank: {} probabilities but {} references",
                rows,
                p_ref.len()
            )));
        }
        let pd = tp.data();
        let mut active = vec![false; rows];
        let mut total = 0.0f64;
        for i in 0..rows {
            let v = p_ref[i] - pd[i].f64() + margin;
            if v > 0.0 {
                active[i] = true;
                total += v;
            }
        }
        let loss = total / rows as f64;
        let requires = self.needs_grad(&[p_l]);
        let node = make_node(
            Op::HingeRank { p_l, active },
            &[1],
            vec![E::of(loss)],
            requires,
        );
        Ok(self.push_node(node))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let mut total = 0.0f64;
        for &v in tx.data() {
            total += v.f64();
        }
        let requires = self.needs_grad(&[x]);
        let node = make_node(Op::Sum(x), &[1], vec![E::of(total)], requires);
        self.push_node(node)
    }

    // ---- reverse sweep ----

    /// Reverse-mode sweep from a scalar loss node.
    ///
    /// Visits each node at most once in reverse insertion order (a valid
    /// topological order, since ops only reference earlier nodes) and adds
    /// gradients into the `grad` buffers of every node that requires them.
    /// Gradient flow accumulates in `f64` and is cast to the storage type
    /// once per node. Leaves that require gradients but sit off the loss's
    /// subgraph end up with explicit zeros. Calling `backward` again without
    /// [`Graph::reset_grads`] accumulates on top of the existing buffers.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let root = loss.0;
        if root >= self.nodes.len() {
            return Err(Error::contract("backward: unknown node"));
        }
        if self.nodes[root].tensor.numel() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[root].tensor.shape()
            )));
        }
        let mut flows: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root].tensor.requires_grad {
            flows[root] = Some(vec![1.0]);
        }
        for idx in (0..=root).rev() {
            let Some(g) = flows[idx].take() else {
                continue;
            };
            {
                let tensor = &mut self.nodes[idx].tensor;
                if tensor.requires_grad {
                    match &mut tensor.grad {
                        Some(buf) => {
                            for (b, &v) in buf.iter_mut().zip(&g) {
                                *b = *b + E::of(v);
                            }
                        }
                        None => {
                            tensor.grad = Some(g.iter().map(|&v| E::of(v)).collect());
                        }
                    }
                }
            }
            self.propagate(idx, &g, &mut flows);
        }
        for node in &mut self.nodes {
            let t = &mut node.tensor;
            if t.requires_grad && t.grad.is_none() {
                t.grad = Some(vec![E::zero(); t.numel()]);
            }
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    fn flow_buf<'a>(
        &self,
        flows: &'a mut [Option<Vec<f64>>],
        id: NodeId,
    ) -> &'a mut Vec<f64> {
        let numel = self.nodes[id.0].tensor.numel();
        flows[id.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn propagate(&self, idx: usize, g: &[f64], flows: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for input in [*a, *b] {
                    if self.wants(input) {
                        let buf = self.flow_buf(flows, input);
                        for (dst, &v) in buf.iter_mut().zip(g) {
                            *dst += v;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xd = self.nodes[x.0].tensor.data();
                    let buf = self.flow_buf(flows, *x);
                    for (i, &v) in g.iter().enumerate() {
                        if xd[i] > E::zero() {
                            buf[i] += v;
                        }
                    }
                }
            }
            Op::Exp(x) => {
                if self.wants(*x) {
                    let yd = self.nodes[idx].tensor.data();
                    let buf = self.flow_buf(flows, *x);
                    for (i, &v) in g.iter().enumerate() {
                        buf[i] += v * yd[i].f64();
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    let buf = self.flow_buf(flows, *x);
                    for (dst, &v) in buf.iter_mut().zip(g) {
                        *dst += v;
                    }
                }
            }
            Op::TransposeLast2(x) => {
                if self.wants(*x) {
                    let out_shape = self.nodes[idx].tensor.shape();
                    let rank = out_shape.len();
                    let (c, r) = (out_shape[rank - 2], out_shape[rank - 1]);
                    let lead: usize = out_shape[..rank - 2].iter().product();
                    let buf = self.flow_buf(flows, *x);
                    for l in 0..lead {
                        let base = l * r * c;
                        for j in 0..c {
                            for i in 0..r {
                                buf[base + i * c + j] += g[base + j * r + i];
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let tx = &self.nodes[x.0].tensor;
                let tw = &self.nodes[w.0].tensor;
                let (m, n) = (tw.shape()[0], tw.shape()[1]);
                let batch = tx.numel() / m;
                let xd = tx.data();
                let wd = tw.data();
                if self.wants(*x) {
                    let buf = self.flow_buf(flows, *x);
                    for bi in 0..batch {
                        for i in 0..m {
                            let mut acc = 0.0f64;
                            let wrow = &wd[i * n..(i + 1) * n];
                            let grow = &g[bi * n..(bi + 1) * n];
                            for (wij, &gj) in wrow.iter().zip(grow) {
                                acc += wij.f64() * gj;
                            }
                            buf[bi * m + i] += acc;
                        }
                    }
                }
                if self.wants(*w) {
                    let buf = self.flow_buf(flows, *w);
                    for bi in 0..batch {
                        let xrow = &xd[bi * m..(bi + 1) * m];
                        let grow = &g[bi * n..(bi + 1) * n];
                        for (i, &xi) in xrow.iter().enumerate() {
                            let xi = xi.f64();
                            for (j, &gj) in grow.iter().enumerate() {
                                buf[i * n + j] += xi * gj;
                            }
                        }
                    }
                }
                if self.wants(*b) {
                    let buf = self.flow_buf(flows, *b);
                    for bi in 0..batch {
                        for (j, &gj) in g[bi * n..(bi + 1) * n].iter().enumerate() {
                            buf[j] += gj;
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (stride, pad) = (*stride, *pad);
                let tx = &self.nodes[x.0].tensor;
                let tw = &self.nodes[w.0].tensor;
                let out_shape = self.nodes[idx].tensor.shape();
                let rank = out_shape.len();
                let (oh, ow) = (out_shape[rank - 2], out_shape[rank - 1]);
                let (oc, ic, kh, kw) = (
                    tw.shape()[0],
                    tw.shape()[1],
                    tw.shape()[2],
                    tw.shape()[3],
                );
                let (h, w_in) = {
                    let s = tx.shape();
                    (s[s.len() - 2], s[s.len() - 1])
                };
                let batch = tx.numel() / (ic * h * w_in);
                let xd = tx.data();
                let kd = tw.data();

                if self.wants(*b) {
                    let buf = self.flow_buf(flows, *b);
                    for n in 0..batch {
                        for o in 0..oc {
                            let plane = &g[(n * oc + o) * oh * ow..(n * oc + o + 1) * oh * ow];
                            let mut acc = 0.0f64;
                            for &v in plane {
                                acc += v;
                            }
                            buf[o] += acc;
                        }
                    }
                }
                if self.wants(*w) {
                    let buf = self.flow_buf(flows, *w);
                    for o in 0..oc {
                        for i in 0..ic {
                            for ky in 0..kh {
                                let Some((oy_lo, oy_hi)) = tap_range(ky, h, oh, stride, pad)
                                else {
                                    continue;
                                };
                                for kx in 0..kw {
                                    let Some((ox_lo, ox_hi)) =
                                        tap_range(kx, w_in, ow, stride, pad)
                                    else {
                                        continue;
                                    };
                                    let mut acc = 0.0f64;
                                    for n in 0..batch {
                                        let gplane = &g[(n * oc + o) * oh * ow
                                            ..(n * oc + o + 1) * oh * ow];
                                        let xplane = &xd[(n * ic + i) * h * w_in
                                            ..(n * ic + i + 1) * h * w_in];
                                        for oy in oy_lo..=oy_hi {
                                            let iy = oy * stride + ky - pad;
                                            for ox in ox_lo..=ox_hi {
                                                let ix = ox * stride + kx - pad;
                                                acc += gplane[oy * ow + ox]
                                                    * xplane[iy * w_in + ix].f64();
                                            }
                                        }
                                    }
                                    buf[((o * ic + i) * kh + ky) * kw + kx] += acc;
                                }
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    let buf = self.flow_buf(flows, *x);
                    for n in 0..batch {
                        for o in 0..oc {
                            let gplane =
                                &g[(n * oc + o) * oh * ow..(n * oc + o + 1) * oh * ow];
                            for i in 0..ic {
                                let x_off = (n * ic + i) * h * w_in;
                                for ky in 0..kh {
                                    let Some((oy_lo, oy_hi)) = tap_range(ky, h, oh, stride, pad)
                                    else {
                                        continue;
                                    };
                                    for kx in 0..kw {
                                        let Some((ox_lo, ox_hi)) =
                                            tap_range(kx, w_in, ow, stride, pad)
                                        else {
                                            continue;
                                        };
                                        let wv =
                                            kd[((o * ic + i) * kh + ky) * kw + kx].f64();
                                        for oy in oy_lo..=oy_hi {
                                            let iy = oy * stride + ky - pad;
                                            for ox in ox_lo..=ox_hi {
                                                let ix = ox * stride + kx - pad;
                                                buf[x_off + iy * w_in + ix] +=
                                                    wv * gplane[oy * ow + ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if self.wants(*x) {
                    let buf = self.flow_buf(flows, *x);
                    for (o, &src) in argmax.iter().enumerate() {
                        buf[src] += g[o];
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                mean,
                inv_std,
            } => {
                let tx = &self.nodes[x.0].tensor;
                let tg = &self.nodes[gamma.0].tensor;
                let shape = tx.shape();
                let (batch, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let spatial = h * w;
                let n_per_c = (batch * spatial) as f64;
                let xd = tx.data();
                let gd = tg.data();

                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for b in 0..batch {
                    for ch in 0..c {
                        let off = (b * c + ch) * spatial;
                        let (mu, istd) = (mean[ch], inv_std[ch]);
                        for s in 0..spatial {
                            let gi = g[off + s];
                            sum_g[ch] += gi;
                            sum_gx[ch] += gi * (xd[off + s].f64() - mu) * istd;
                        }
                    }
                }
                if self.wants(*beta) {
                    let buf = self.flow_buf(flows, *beta);
                    for ch in 0..c {
                        buf[ch] += sum_g[ch];
                    }
                }
                if self.wants(*gamma) {
                    let buf = self.flow_buf(flows, *gamma);
                    for ch in 0..c {
                        buf[ch] += sum_gx[ch];
                    }
                }
                if self.wants(*x) {
                    let buf = self.flow_buf(flows, *x);
                    match mode {
                        Mode::Train => {
                            for b in 0..batch {
                                for ch in 0..c {
                                    let off = (b * c + ch) * spatial;
                                    let (mu, istd, ga) = (mean[ch], inv_std[ch], gd[ch].f64());
                                    let (mg, mgx) = (sum_g[ch] / n_per_c, sum_gx[ch] / n_per_c);
                                    for s in 0..spatial {
                                        let xhat = (xd[off + s].f64() - mu) * istd;
                                        buf[off + s] +=
                                            ga * istd * (g[off + s] - mg - xhat * mgx);
                                    }
                                }
                            }
                        }
                        Mode::Eval => {
                            for b in 0..batch {
                                for ch in 0..c {
                                    let off = (b * c + ch) * spatial;
                                    let scale = gd[ch].f64() * inv_std[ch];
                                    for s in 0..spatial {
                                        buf[off + s] += scale * g[off + s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let ty = &self.nodes[idx].tensor;
                    let shape = ty.shape();
                    let r = shape[shape.len() - 1];
                    let rows = ty.numel() / r;
                    let yd = ty.data();
                    let buf = self.flow_buf(flows, *x);
                    for row in 0..rows {
                        let off = row * r;
                        let mut dot = 0.0f64;
                        for j in 0..r {
                            dot += g[off + j] * yd[off + j].f64();
                        }
                        for j in 0..r {
                            buf[off + j] += yd[off + j].f64() * (g[off + j] - dot);
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.wants(*x) {
                    let tx = &self.nodes[x.0].tensor;
                    let shape = tx.shape();
                    let rank = shape.len();
                    let spatial = shape[rank - 2] * shape[rank - 1];
                    let planes = tx.numel() / spatial;
                    let inv = 1.0 / spatial as f64;
                    let buf = self.flow_buf(flows, *x);
                    for p in 0..planes {
                        let share = g[p] * inv;
                        for dst in &mut buf[p * spatial..(p + 1) * spatial] {
                            *dst += share;
                        }
                    }
                }
            }
            Op::ApplyMask { f, m } => {
                let tf = &self.nodes[f.0].tensor;
                let tm = &self.nodes[m.0].tensor;
                let shape = tf.shape();
                let rank = shape.len();
                let spatial = shape[rank - 2] * shape[rank - 1];
                let c = shape[rank - 3];
                let batch = tf.numel() / (c * spatial);
                let fd = tf.data();
                let md = tm.data();
                if self.wants(*f) {
                    let buf = self.flow_buf(flows, *f);
                    for b in 0..batch {
                        let mplane = &md[b * spatial..(b + 1) * spatial];
                        for ch in 0..c {
                            let off = (b * c + ch) * spatial;
                            for s in 0..spatial {
                                buf[off + s] += g[off + s] * mplane[s].f64();
                            }
                        }
                    }
                }
                if self.wants(*m) {
                    let buf = self.flow_buf(flows, *m);
                    for b in 0..batch {
                        for ch in 0..c {
                            let off = (b * c + ch) * spatial;
                            for s in 0..spatial {
                                buf[b * spatial + s] += g[off + s] * fd[off + s].f64();
                            }
                        }
                    }
                }
            }
            Op::Gather { x, indices } => {
                if self.wants(*x) {
                    let tx = &self.nodes[x.0].tensor;
                    let shape = tx.shape();
                    let r = shape[shape.len() - 1];
                    let buf = self.flow_buf(flows, *x);
                    for (row, &ix) in indices.iter().enumerate() {
                        buf[row * r + ix] += g[row];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.wants(*logits) {
                    let r = probs.len() / labels.len();
                    let scale = g[0] / labels.len() as f64;
                    let buf = self.flow_buf(flows, *logits);
                    for (row, &label) in labels.iter().enumerate() {
                        for j in 0..r {
                            let ind = if j == label { 1.0 } else { 0.0 };
                            buf[row * r + j] += scale * (probs[row * r + j] - ind);
                        }
                    }
                }
            }
            Op::HingeRank { p_l, active } => {
                if self.wants(*p_l) {
                    let scale = g[0] / active.len() as f64;
                    let buf = self.flow_buf(flows, *p_l);
                    for (i, &on) in active.iter().enumerate() {
                        if on {
                            buf[i] -= scale;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let buf = self.flow_buf(flows, *x);
                    for dst in buf.iter_mut() {
                        *dst += g[0];
                    }
                }
            }
        }
    }
}

/// Output positions `[lo, hi]` whose tap `k` lands inside the unpadded
/// input, for one spatial axis. `None` when the tap never lands inside.
fn tap_range(
    k: usize,
    full: usize,
    out: usize,
    stride: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    if full == 0 || k >= full + pad {
        return None;
    }
    let lo = if pad > k {
        (pad - k + stride - 1) / stride
    } else {
        0
    };
    let hi = ((full - 1 + pad - k) / stride).min(out - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn t64(shape: &[usize], values: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, values).unwrap()
    }

    #[test]
    fn add_sums_and_checks_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(t64(&[2], &[1.0, 2.0]));
        let b = g.leaf(t64(&[2], &[10.0, 20.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0, 22.0]);

        let d = g.leaf(t64(&[3], &[0.0; 3]));
        assert!(matches!(g.add(a, d), Err(Error::Dimension(_))));
    }

    #[test]
    fn linear_matches_hand_fixture() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2], &[1.0, 2.0]));
        let w = g.leaf(t64(&[2, 2], &[1.0, 0.0, 0.0, 3.0]));
        let b = g.leaf(t64(&[2], &[0.0, 1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 7.0]);
    }

    #[test]
    fn linear_matches_direct_definition_bitwise() {
        let mut rng = crate::rng::Rng::seeded(11);
        let (batch, m, n) = (3, 5, 4);
        let xv: Vec<f64> = (0..batch * m).map(|_| rng.normal()).collect();
        let wv: Vec<f64> = (0..m * n).map(|_| rng.normal()).collect();
        let bv: Vec<f64> = (0..n).map(|_| rng.normal()).collect();

        let mut g = Graph::new();
        let x = g.leaf(t64(&[batch, m], &xv));
        let w = g.leaf(t64(&[m, n], &wv));
        let b = g.leaf(t64(&[n], &bv));
        let y = g.linear(x, w, b).unwrap();

        for bi in 0..batch {
            for j in 0..n {
                let mut acc = bv[j];
                for i in 0..m {
                    acc += xv[bi * m + i] * wv[i * n + j];
                }
                assert_eq!(g.value(y).data()[bi * n + j], acc);
            }
        }
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = g.leaf(t64(&[1, 1, 1, 1], &[1.0]));
        let b = g.leaf(t64(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 3]);
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv_all_ones_padded_counts_coverage() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 3, 3], &[1.0; 9]));
        let w = g.leaf(t64(&[1, 1, 3, 3], &[1.0; 9]));
        let b = g.leaf(t64(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let expect = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(g.value(y).data(), &expect);
    }

    #[test]
    fn conv_stride_two_downsamples() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 4, 4], &(1..=16).map(f64::from).collect::<Vec<_>>()));
        let w = g.leaf(t64(&[1, 1, 2, 2], &[1.0; 4]));
        let b = g.leaf(t64(&[1], &[0.5]));
        let y = g.conv2d(x, w, b, 2, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[14.5, 22.5, 46.5, 54.5]);
    }

    #[test]
    fn conv_matches_direct_definition_bitwise() {
        let mut rng = crate::rng::Rng::seeded(3);
        let (ic, h, w_in) = (2, 5, 4);
        let (oc, kh, kw) = (3, 3, 2);
        let (stride, pad) = (2, 1);
        let xv: Vec<f64> = (0..ic * h * w_in).map(|_| rng.normal()).collect();
        let kv: Vec<f64> = (0..oc * ic * kh * kw).map(|_| rng.normal()).collect();
        let bv: Vec<f64> = (0..oc).map(|_| rng.normal()).collect();

        let mut g = Graph::new();
        let x = g.leaf(t64(&[ic, h, w_in], &xv));
        let k = g.leaf(t64(&[oc, ic, kh, kw], &kv));
        let b = g.leaf(t64(&[oc], &bv));
        let y = g.conv2d(x, k, b, stride, pad).unwrap();

        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w_in + 2 * pad - kw) / stride + 1;
        assert_eq!(g.shape(y), &[oc, oh, ow]);
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv[o];
                    for i in 0..ic {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w_in as isize {
                                    continue;
                                }
                                acc += kv[((o * ic + i) * kh + ky) * kw + kx]
                                    * xv[(i * h + iy as usize) * w_in + ix as usize];
                            }
                        }
                    }
                    assert_eq!(g.value(y).data()[(o * oh + oy) * ow + ox], acc);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1, 2, 2], &[0.0; 4]));
        let w = g.leaf(t64(&[1, 1, 3, 3], &[0.0; 9]));
        let b = g.leaf(t64(&[1], &[0.0]));
        assert!(matches!(g.conv2d(x, w, b, 1, 0), Err(Error::Dimension(_))));
        assert!(matches!(g.conv2d(x, w, b, 0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn maxpool_takes_window_max_and_routes_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).with_requires_grad());
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_tie_breaks_to_first_in_row_major_order() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 2, 2], &[5.0; 4]).with_requires_grad());
        let y = g.maxpool2d(x, 2, 1).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn batchnorm_train_standardizes_and_updates_running_stats() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let gamma = g.leaf(t64(&[1], &[2.0]));
        let beta = g.leaf(t64(&[1], &[0.5]));
        let mut stats = BnStats::<f64>::new(1);
        let y = g
            .batchnorm2d(x, gamma, beta, &mut stats, Mode::Train)
            .unwrap();

        let istd = 1.0 / (1.25 + BN_EPS).sqrt();
        let out = g.value(y).data();
        for (i, &v) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let expect = (v - 2.5) * istd * 2.0 + 0.5;
            assert!((out[i] - expect).abs() < 1e-12);
        }
        assert!((stats.mean[0] - 0.25).abs() < 1e-12);
        assert!((stats.var[0] - 1.025).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_rejects_batch_of_one() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 1, 1, 2], &[1.0, 2.0]));
        let gamma = g.leaf(t64(&[1], &[1.0]));
        let beta = g.leaf(t64(&[1], &[0.0]));
        let mut stats = BnStats::<f64>::new(1);
        let err = g
            .batchnorm2d(x, gamma, beta, &mut stats, Mode::Train)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidBatch(_)));
    }

    #[test]
    fn batchnorm_eval_uses_running_stats_and_leaves_them_alone() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 1, 1, 2], &[1.0, -3.0]));
        let gamma = g.leaf(t64(&[1], &[1.0]));
        let beta = g.leaf(t64(&[1], &[0.0]));
        let mut stats = BnStats::<f64>::new(1);
        let before = stats.clone();
        let y = g
            .batchnorm2d(x, gamma, beta, &mut stats, Mode::Eval)
            .unwrap();
        let istd = 1.0 / (1.0 + BN_EPS).sqrt();
        let out = g.value(y).data();
        assert!((out[0] - istd).abs() < 1e-12);
        assert!((out[1] + 3.0 * istd).abs() < 1e-12);
        assert_eq!(stats, before);
    }

    #[test]
    fn softmax_matches_log_ratio_fixture() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[3], &[1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()]));
        let y = g.softmax(x).unwrap();
        let out = g.value(y).data();
        for (a, b) in out.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_survive_huge_logits() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2, 3], &[1e4, -1e4, 0.0, -1e4, 1e4, 1e4]));
        let y = g.softmax(x).unwrap();
        let out = g.value(y).data();
        assert!(out.iter().all(|v| v.is_finite()));
        for row in 0..2 {
            let sum: f64 = out[row * 3..(row + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn global_avg_pool_means_each_plane() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]));
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.shape(y), &[1, 2]);
        assert_eq!(g.value(y).data(), &[2.5, 25.0]);
    }

    #[test]
    fn mask_reshape_transpose_exp_matches_column_major_fixture() {
        // Flat mask params fill the spatial grid column by column: entry k
        // lands at row (k mod h), column (k div h), then exp is applied.
        let mut g = Graph::new();
        let m = g.leaf(t64(
            &[4],
            &[1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln(), 4.0f64.ln()],
        ));
        let cols = g.reshape(m, &[2, 2]).unwrap();
        let grid = g.transpose_last2(cols).unwrap();
        let mask = g.exp(grid);
        let out = g.value(mask).data();
        let expect = [1.0, 3.0, 2.0, 4.0];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_mask_scales_every_channel_by_the_same_plane() {
        let mut g = Graph::new();
        let f = g.leaf(t64(&[2, 2, 2], &[1.0; 8]).with_requires_grad());
        let m = g.leaf(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).with_requires_grad());
        let y = g.apply_mask(f, m).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]
        );
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        // d/dm sums over channels, d/df broadcasts the mask.
        assert_eq!(g.grad(m).unwrap(), &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(g.grad(f).unwrap(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn gather_picks_row_entries_and_validates_indices() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_requires_grad());
        let y = g.gather(x, &[2, 0]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);

        assert!(matches!(g.gather(x, &[3, 0]), Err(Error::Contract(_))));
        assert!(matches!(g.gather(x, &[0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_entropy_uniform_logits_give_log_of_class_count() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[4], &[0.7; 4]));
        let loss = g.cross_entropy(x, &[2]).unwrap();
        assert!((g.scalar(loss).unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_closed_form_fixture() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[3], &[2.0, 0.0, 0.0]));
        let loss = g.cross_entropy(x, &[0]).unwrap();
        let expect = (2.0f64.exp() + 2.0).ln() - 2.0;
        assert!((g.scalar(loss).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_averages_rows_and_validates_labels() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2, 4], &[0.7, 0.7, 0.7, 0.7, 2.0, 0.0, 0.0, 0.0]));
        let loss = g.cross_entropy(x, &[1, 0]).unwrap();
        let row0 = 4.0f64.ln();
        let row1 = (2.0f64.exp() + 3.0).ln() - 2.0;
        assert!((g.scalar(loss).unwrap() - 0.5 * (row0 + row1)).abs() < 1e-12);

        assert!(matches!(g.cross_entropy(x, &[4, 0]), Err(Error::Contract(_))));
        assert!(matches!(g.cross_entropy(x, &[0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_entropy_survives_extreme_logits() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2], &[1e4, -1e4]).with_requires_grad());
        let loss = g.cross_entropy(x, &[1]).unwrap();
        let v = g.scalar(loss).unwrap();
        assert!(v.is_finite());
        assert!((v - 2e4).abs() < 1e-6);
        g.backward(loss).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hinge_rank_matches_margin_fixture() {
        // Reference 0.9 vs own 0.5 with margin 0.2 leaves a gap of 0.6.
        let mut g = Graph::new();
        let p = g.leaf(t64(&[1], &[0.5]).with_requires_grad());
        let loss = g.hinge_rank(p, &[0.9], 0.2).unwrap();
        assert!((g.scalar(loss).unwrap() - 0.6).abs() < 1e-12);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[-1.0]);
    }

    #[test]
    fn hinge_rank_is_flat_once_satisfied() {
        let mut g = Graph::new();
        let p = g.leaf(t64(&[2], &[0.95, 0.2]).with_requires_grad());
        let loss = g.hinge_rank(p, &[0.5, 0.9], 0.2).unwrap();
        // Row 0 clears the margin (0.5 - 0.95 + 0.2 < 0); row 1 misses by 0.9.
        assert!((g.scalar(loss).unwrap() - 0.45).abs() < 1e-12);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[0.0, -0.5]);
    }

    #[test]
    fn hinge_rank_rejects_bad_margin() {
        let mut g = Graph::new();
        let p = g.leaf(t64(&[1], &[0.5]));
        assert!(matches!(
            g.hinge_rank(p, &[0.9], -0.1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            g.hinge_rank(p, &[0.9], f64::NAN),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2], &[1.0, 2.0]).with_requires_grad());
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_handles_shared_subexpressions() {
        // loss = sum(relu(x) + exp(x)) so dx = [x > 0] + exp(x).
        let mut g = Graph::new();
        let x = g.leaf(t64(&[3], &[-1.0, 0.5, 2.0]).with_requires_grad());
        let a = g.relu(x);
        let b = g.exp(x);
        let c = g.add(a, b).unwrap();
        let loss = g.sum(c);
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        let expect = [
            (-1.0f64).exp(),
            1.0 + 0.5f64.exp(),
            1.0 + 2.0f64.exp(),
        ];
        for (a, b) in grad.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_accumulates_until_grads_are_reset() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2], &[1.0, 2.0]).with_requires_grad());
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.reset_grads();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_zeroes_leaves_off_the_loss_path() {
        let mut g = Graph::new();
        let x = g.leaf(t64(&[2], &[1.0, 2.0]).with_requires_grad());
        let unused = g.leaf(t64(&[3], &[0.0; 3]).with_requires_grad());
        let frozen = g.constant(t64(&[2], &[5.0, 6.0]));
        let y = g.add(x, frozen).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.grad(unused).unwrap(), &[0.0, 0.0, 0.0]);
        assert!(g.grad(frozen).is_none());
    }

    // Numeric oracles: every differentiable op is checked against central
    // differences in f64, where the estimate is good to ~1e-10.

    fn check<F>(input: Tensor<f64>, build: F)
    where
        F: FnMut(&mut Graph<f64>, NodeId) -> Result<NodeId>,
    {
        let err = grad_check(&input, 1e-5, build).unwrap();
        assert!(err < 1e-7, "gradient error {} too large", err);
    }

    fn fixture(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Rng::seeded(seed);
        let numel = shape.iter().product::<usize>();
        let values: Vec<f64> = (0..numel).map(|_| rng.normal()).collect();
        Tensor::from_f64(shape, &values).unwrap()
    }

    #[test]
    fn numeric_check_linear_wrt_input_weight_and_bias() {
        let w = fixture(&[3, 2], 21);
        let x = fixture(&[2, 3], 22);
        let b = fixture(&[2], 23);

        let (wc, bc) = (w.clone(), b.clone());
        check(x.clone(), move |g, xi| {
            let wn = g.constant(wc.clone());
            let bn = g.constant(bc.clone());
            let y = g.linear(xi, wn, bn)?;
            Ok(g.sum(y))
        });
        let (xc, bc) = (x.clone(), b.clone());
        check(w.clone(), move |g, wi| {
            let xn = g.constant(xc.clone());
            let bn = g.constant(bc.clone());
            let y = g.linear(xn, wi, bn)?;
            Ok(g.sum(y))
        });
        let (xc, wc) = (x, w);
        check(b, move |g, bi| {
            let xn = g.constant(xc.clone());
            let wn = g.constant(wc.clone());
            let y = g.linear(xn, wn, bi)?;
            Ok(g.sum(y))
        });
    }

    #[test]
    fn numeric_check_conv_wrt_input_and_kernel() {
        let x = fixture(&[2, 4, 3], 31);
        let k = fixture(&[2, 2, 3, 2], 32);
        let b = fixture(&[2], 33);

        let (kc, bc) = (k.clone(), b.clone());
        check(x.clone(), move |g, xi| {
            let kn = g.constant(kc.clone());
            let bn = g.constant(bc.clone());
            let y = g.conv2d(xi, kn, bn, 2, 1)?;
            Ok(g.sum(y))
        });
        let (xc, bc) = (x.clone(), b.clone());
        check(k, move |g, ki| {
            let xn = g.constant(xc.clone());
            let bn = g.constant(bc.clone());
            let y = g.conv2d(xn, ki, bn, 2, 1)?;
            Ok(g.sum(y))
        });
        let (xc, kc2) = (x, fixture(&[2, 2, 3, 2], 32));
        check(b, move |g, bi| {
            let xn = g.constant(xc.clone());
            let kn = g.constant(kc2.clone());
            let y = g.conv2d(xn, kn, bi, 1, 0)?;
            Ok(g.sum(y))
        });
    }

    #[test]
    fn numeric_check_maxpool_and_relu_chain() {
        let x = fixture(&[2, 4, 4], 41);
        check(x, move |g, xi| {
            let r = g.relu(xi);
            let p = g.maxpool2d(r, 2, 2)?;
            Ok(g.sum(p))
        });
    }

    #[test]
    fn numeric_check_batchnorm_train_wrt_input_gamma_beta() {
        let x = fixture(&[3, 2, 2, 2], 51);
        let gamma = fixture(&[2], 52);
        let beta = fixture(&[2], 53);

        let (gc, bc) = (gamma.clone(), beta.clone());
        check(x.clone(), move |g, xi| {
            let gn = g.constant(gc.clone());
            let bn = g.constant(bc.clone());
            let mut stats = BnStats::new(2);
            let y = g.batchnorm2d(xi, gn, bn, &mut stats, Mode::Train)?;
            let e = g.exp(y);
            Ok(g.sum(e))
        });
        let (xc, bc) = (x.clone(), beta.clone());
        check(gamma.clone(), move |g, gi| {
            let xn = g.constant(xc.clone());
            let bn = g.constant(bc.clone());
            let mut stats = BnStats::new(2);
            let y = g.batchnorm2d(xn, gi, bn, &mut stats, Mode::Train)?;
            let e = g.exp(y);
            Ok(g.sum(e))
        });
        let (xc, gc) = (x, gamma);
        check(beta, move |g, bi| {
            let xn = g.constant(xc.clone());
            let gn = g.constant(gc.clone());
            let mut stats = BnStats::new(2);
            let y = g.batchnorm2d(xn, gn, bi, &mut stats, Mode::Train)?;
            let e = g.exp(y);
            Ok(g.sum(e))
        });
    }

    #[test]
    fn numeric_check_batchnorm_eval_wrt_input() {
        let x = fixture(&[2, 2, 2, 2], 61);
        let gamma = fixture(&[2], 62);
        let beta = fixture(&[2], 63);
        let mut seed_stats = BnStats::new(2);
        seed_stats.mean = vec![0.3, -0.1];
        seed_stats.var = vec![1.7, 0.4];

        check(x, move |g, xi| {
            let gn = g.constant(gamma.clone());
            let bn = g.constant(beta.clone());
            let mut stats = seed_stats.clone();
            let y = g.batchnorm2d(xi, gn, bn, &mut stats, Mode::Eval)?;
            let e = g.exp(y);
            Ok(g.sum(e))
        });
    }

    #[test]
    fn numeric_check_softmax_gather_chain() {
        let x = fixture(&[2, 5], 71);
        check(x, move |g, xi| {
            let s = g.softmax(xi)?;
            let picked = g.gather(s, &[1, 3])?;
            Ok(g.sum(picked))
        });
    }

    #[test]
    fn numeric_check_mask_path() {
        // The whole mask pipeline: linear, relu, reshape, transpose, exp,
        // broadcast multiply, pooled and summed.
        let w = fixture(&[4, 6], 81);
        let feat = fixture(&[1, 3, 2, 3], 82);
        let gvec = fixture(&[1, 4], 83);

        check(w, move |g, wi| {
            let gn = g.constant(gvec.clone());
            let zero = g.constant(Tensor::zeros(&[6]));
            let pre = g.linear(gn, wi, zero)?;
            let act = g.relu(pre);
            let cols = g.reshape(act, &[1, 3, 2])?;
            let grid = g.transpose_last2(cols)?;
            let mask = g.exp(grid);
            let feat_node = g.constant(feat.clone());
            let masked = g.apply_mask(feat_node, mask)?;
            let pooled = g.global_avg_pool(masked)?;
            Ok(g.sum(pooled))
        });
    }

    #[test]
    fn numeric_check_cross_entropy() {
        let x = fixture(&[3, 4], 91);
        check(x, move |g, xi| g.cross_entropy(xi, &[0, 2, 3]));
    }

    #[test]
    fn numeric_check_hinge_rank() {
        let p = Tensor::from_f64(&[3], &[0.2, 0.8, 0.5]).unwrap();
        check(p, move |g, pi| g.hinge_rank(pi, &[0.6, 0.1, 0.9], 0.2));
    }

    #[test]
    fn numeric_check_global_avg_pool_and_transpose() {
        let x = fixture(&[2, 3, 4], 101);
        check(x, move |g, xi| {
            let t = g.transpose_last2(xi)?;
            let e = g.exp(t);
            let p = g.global_avg_pool(e)?;
            Ok(g.sum(p))
        });
    }

    #[test]
    fn engine_runs_in_f32_with_loose_tolerance() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::from_f64(&[3], &[1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()]).unwrap());
        let y = g.softmax(x).unwrap();
        let out = g.value(y).data();
        for (a, b) in out.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((a.f64() - b).abs() < 1e-6);
        }
    }
}
