//! Minimal tape-based reverse-mode autodiff over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly and
//! pushes a node, so node order is already topological and
//! [`Graph::backward`] is a single reverse sweep. Graphs are rebuilt per
//! training step; parameters live outside the graph and enter as trainable
//! leaves.
//!
//! Only the operations the model needs are implemented, each with an exact
//! analytic backward. Nondifferentiable kinks (ReLU at 0, |x| at 0, the
//! pair distance at 0) use the standard subgradient conventions noted on
//! each op.

use crate::tensor::{
    col2im, conv_out_dim, im2col, matmul, matmul_abt, matmul_atb, maxpool, Tensor,
};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Epsilon clamp for probabilities inside the binary cross-entropy loss.
pub const BCE_EPSILON: f64 = 1e-7;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    ElemMul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Reshape(NodeId),
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
        argmax: Vec<usize>,
    },
    PairL2(NodeId, NodeId),
    AbsDiff(NodeId, NodeId),
    /// `z = s − d` with a scalar shift `s` broadcast over `d`.
    ShiftMinus {
        d: NodeId,
        s: NodeId,
    },
    BceLoss {
        z: NodeId,
        y: Vec<f64>,
        p: Vec<f64>,
    },
    CenterLoss {
        f: NodeId,
        centers: Tensor,
        labels: Vec<usize>,
    },
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target w.r.t. this node, if tracked.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Insert a tensor; `trainable` nodes receive gradients.
    pub fn leaf(&mut self, t: Tensor, trainable: bool) -> NodeId {
        self.push(t, Op::Leaf, trainable)
    }

    /// Constant (non-trainable) leaf.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.leaf(t, false)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape, self.value(b).shape, "add: shape mismatch");
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(data, &shape), Op::Add(a, b), rg)
    }

    /// Multiply by a compile-time constant scalar.
    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let data = self.value(a).data.iter().map(|x| x * k).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(data, &shape), Op::Scale(a, k), rg)
    }

    /// Elementwise product of two same-shape tensors (used for task-vector
    /// modulation of batched layer inputs).
    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).shape,
            self.value(b).shape,
            "elem_mul: shape mismatch"
        );
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(data, &shape), Op::ElemMul(a, b), rg)
    }

    /// Rectifier; subgradient 0 at the kink.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data.iter().map(|x| x.max(0.0)).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(data, &shape), Op::Relu(a), rg)
    }

    /// Logistic sigmoid.
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .data
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(data, &shape), Op::Sigmoid(a), rg)
    }

    /// Reinterpret the element buffer under a new shape.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        assert_eq!(
            self.value(a).numel(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let t = Tensor::from_vec(self.value(a).data.clone(), shape);
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Fully connected layer `y = x·wᵀ + b` for `x: [N, IN]`, `w: [OUT, IN]`,
    /// `b: [OUT]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (n, in_dim) = (self.value(x).shape[0], self.value(x).shape[1]);
        let (out_dim, w_in) = (self.value(w).shape[0], self.value(w).shape[1]);
        assert_eq!(in_dim, w_in, "linear: input dim mismatch");
        assert_eq!(self.value(b).shape, vec![out_dim], "linear: bias mismatch");
        let mut data = matmul_abt(&self.value(x).data, &self.value(w).data, n, in_dim, out_dim);
        for row in 0..n {
            for (o, bv) in data[row * out_dim..(row + 1) * out_dim]
                .iter_mut()
                .zip(&self.value(b).data)
            {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::from_vec(data, &[n, out_dim]), Op::Linear { x, w, b }, rg)
    }

    /// 2-D convolution over a batch: `x: [N, C, H, W]`, `w: [F, C, KH, KW]`,
    /// `b: [F]`, square stride/pad.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let xs = self.value(x).shape.clone();
        let ws = self.value(w).shape.clone();
        assert_eq!(xs.len(), 4, "conv2d: input must be [N,C,H,W]");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [F,C,KH,KW]");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        let (n, c, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, kh, kw) = (ws[0], ws[2], ws[3]);
        let oh = conv_out_dim(h, kh, stride, pad);
        let ow = conv_out_dim(wdt, kw, stride, pad);
        let ckk = c * kh * kw;

        let mut out = vec![0.0; n * f * oh * ow];
        for s in 0..n {
            let col = im2col(
                &self.value(x).data[s * c * h * wdt..(s + 1) * c * h * wdt],
                c,
                h,
                wdt,
                kh,
                kw,
                stride,
                pad,
            );
            let y = matmul(&self.value(w).data, &col, f, ckk, oh * ow);
            let dst = &mut out[s * f * oh * ow..(s + 1) * f * oh * ow];
            dst.copy_from_slice(&y);
            for fi in 0..f {
                let bv = self.value(b).data[fi];
                for v in &mut dst[fi * oh * ow..(fi + 1) * oh * ow] {
                    *v += bv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(
            Tensor::from_vec(out, &[n, f, oh, ow]),
            Op::Conv2d { x, w, b, stride, pad },
            rg,
        )
    }

    /// Max pooling with a square window, `kernel == stride`, floor division.
    pub fn maxpool2d(&mut self, x: NodeId, kernel: usize) -> NodeId {
        let xs = self.value(x).shape.clone();
        assert_eq!(xs.len(), 4, "maxpool2d: input must be [N,C,H,W]");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / kernel, w / kernel);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for s in 0..n {
            let (vals, args) = maxpool(
                &self.value(x).data[s * c * h * w..(s + 1) * c * h * w],
                c,
                h,
                w,
                kernel,
            );
            out[s * c * oh * ow..(s + 1) * c * oh * ow].copy_from_slice(&vals);
            for (dst, a) in argmax[s * c * oh * ow..(s + 1) * c * oh * ow]
                .iter_mut()
                .zip(&args)
            {
                *dst = s * c * h * w + a;
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_vec(out, &[n, c, oh, ow]),
            Op::MaxPool2d { x, argmax },
            rg,
        )
    }

    /// Row-wise Euclidean distance between two `[N, D]` embeddings → `[N]`.
    /// At distance 0 the (sub)gradient is 0.
    pub fn pair_l2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape, self.value(b).shape, "pair_l2: shape mismatch");
        let (n, d) = (self.value(a).shape[0], self.value(a).shape[1]);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..d {
                let diff = self.value(a).data[i * d + k] - self.value(b).data[i * d + k];
                acc += diff * diff;
            }
            out[i] = acc.sqrt();
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(out, &[n]), Op::PairL2(a, b), rg)
    }

    /// Elementwise absolute difference `|a − b|` (the distance feature of a
    /// pair); subgradient 0 at equal coordinates.
    pub fn abs_diff(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).shape,
            self.value(b).shape,
            "abs_diff: shape mismatch"
        );
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| (x - y).abs())
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(data, &shape), Op::AbsDiff(a, b), rg)
    }

    /// `z = s − d` where `s` is a `[1]` shift broadcast over `d: [N]`.
    pub fn shift_minus(&mut self, d: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).numel(), 1, "shift must be a scalar");
        let sv = self.value(s).data[0];
        let data = self.value(d).data.iter().map(|x| sv - x).collect();
        let shape = self.value(d).shape.clone();
        let rg = self.rg(d) || self.rg(s);
        self.push(Tensor::from_vec(data, &shape), Op::ShiftMinus { d, s }, rg)
    }

    /// Mean binary cross-entropy over pair logits `z: [N]` with labels
    /// `y ∈ {0,1}`: probabilities `p = σ(z)` are clamped to
    /// `[BCE_EPSILON, 1−BCE_EPSILON]` before the logs.
    pub fn bce_loss(&mut self, z: NodeId, y: &[f64]) -> NodeId {
        let n = self.value(z).numel();
        assert_eq!(n, y.len(), "bce_loss: label count mismatch");
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0), "labels must be 0/1");
        let p: Vec<f64> = self
            .value(z)
            .data
            .iter()
            .map(|x| (1.0 / (1.0 + (-x).exp())).clamp(BCE_EPSILON, 1.0 - BCE_EPSILON))
            .collect();
        let loss = -p
            .iter()
            .zip(y)
            .map(|(&pi, &yi)| yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln())
            .sum::<f64>()
            / n as f64;
        let rg = self.rg(z);
        self.push(
            Tensor::scalar(loss),
            Op::BceLoss {
                z,
                y: y.to_vec(),
                p,
            },
            rg,
        )
    }

    /// Center loss `L = (1/2N)·Σ ‖f_i − c_{y_i}‖²` over distance features
    /// `f: [N, D]` with per-class centers `[K, D]` held constant inside the
    /// graph (they are EMA-updated outside the gradient path).
    pub fn center_loss(&mut self, f: NodeId, centers: &Tensor, labels: &[usize]) -> NodeId {
        let (n, d) = (self.value(f).shape[0], self.value(f).shape[1]);
        assert_eq!(n, labels.len(), "center_loss: label count mismatch");
        assert_eq!(centers.shape.len(), 2, "centers must be [K, D]");
        assert_eq!(centers.shape[1], d, "center dimension mismatch");
        let k = centers.shape[0];
        assert!(
            labels.iter().all(|&l| l < k),
            "label outside the known classes"
        );
        let mut acc = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            for j in 0..d {
                let diff = self.value(f).data[i * d + j] - centers.data[label * d + j];
                acc += diff * diff;
            }
        }
        let loss = acc / (2.0 * n as f64);
        let rg = self.rg(f);
        self.push(
            Tensor::scalar(loss),
            Op::CenterLoss {
                f,
                centers: centers.clone(),
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// Mean softmax cross-entropy over `logits: [N, K]` with integer labels.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let (n, k) = (self.value(logits).shape[0], self.value(logits).shape[1]);
        assert_eq!(n, labels.len(), "softmax_xent: label count mismatch");
        assert!(labels.iter().all(|&l| l < k), "label outside logit range");
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &self.value(logits).data[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &v in row {
                z += (v - m).exp();
            }
            for (j, &v) in row.iter().enumerate() {
                probs[i * k + j] = (v - m).exp() / z;
            }
            loss += z.ln() - (row[labels[i]] - m);
        }
        let loss = loss / n as f64;
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    fn accumulate(&mut self, id: NodeId, g: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let node = &mut self.nodes[id.0];
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(&node.value.shape));
        for (dst, src) in grad.data.iter_mut().zip(g) {
            *dst += src;
        }
    }

    /// Reverse sweep from `target` (must be a scalar node). Gradients
    /// accumulate on every `requires_grad` node reachable from it.
    pub fn backward(&mut self, target: NodeId) {
        assert_eq!(
            self.value(target).numel(),
            1,
            "backward target must be scalar"
        );
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[target.0].grad = Some(Tensor::scalar(1.0));

        for idx in (0..=target.0).rev() {
            let Some(grad) = self.nodes[idx].grad.clone() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grad.data;
            // Borrow-friendly: pull whatever the op needs, then accumulate.
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    let ga: Vec<f64> = g.iter().map(|x| x * k).collect();
                    self.accumulate(a, &ga);
                }
                Op::ElemMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].value.data)
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(x, y)| x * y)
                        .collect();
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    self.accumulate(a, &ga);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[idx].value.data)
                        .map(|(gi, &s)| gi * s * (1.0 - s))
                        .collect();
                    self.accumulate(a, &ga);
                }
                Op::Reshape(a) => {
                    let a = *a;
                    self.accumulate(a, &g);
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (n, in_dim) = (self.nodes[x.0].value.shape[0], self.nodes[x.0].value.shape[1]);
                    let out_dim = self.nodes[w.0].value.shape[0];
                    // dX = G·W  ([N,OUT]·[OUT,IN])
                    let gx = matmul(&g, &self.nodes[w.0].value.data, n, out_dim, in_dim);
                    // dW = Gᵀ·X  ([OUT,N]·[N,IN])
                    let gw = matmul_atb(&g, &self.nodes[x.0].value.data, n, out_dim, in_dim);
                    let mut gb = vec![0.0; out_dim];
                    for row in 0..n {
                        for (dst, src) in gb.iter_mut().zip(&g[row * out_dim..(row + 1) * out_dim])
                        {
                            *dst += src;
                        }
                    }
                    self.accumulate(x, &gx);
                    self.accumulate(w, &gw);
                    self.accumulate(b, &gb);
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                    let xs = self.nodes[x.0].value.shape.clone();
                    let ws = self.nodes[w.0].value.shape.clone();
                    let (n, c, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
                    let (f, kh, kw) = (ws[0], ws[2], ws[3]);
                    let oh = conv_out_dim(h, kh, stride, pad);
                    let ow = conv_out_dim(wdt, kw, stride, pad);
                    let ckk = c * kh * kw;

                    let mut gx = vec![0.0; n * c * h * wdt];
                    let mut gw = vec![0.0; f * ckk];
                    let mut gb = vec![0.0; f];
                    for s in 0..n {
                        let gout = &g[s * f * oh * ow..(s + 1) * f * oh * ow];
                        // Recompute the patch matrix rather than caching it:
                        // the memory cost of cached columns across a batch
                        // dwarfs the extra unfold.
                        let col = im2col(
                            &self.nodes[x.0].value.data[s * c * h * wdt..(s + 1) * c * h * wdt],
                            c,
                            h,
                            wdt,
                            kh,
                            kw,
                            stride,
                            pad,
                        );
                        // dW += G·colᵀ
                        let gw_s = matmul_abt(gout, &col, f, oh * ow, ckk);
                        for (dst, src) in gw.iter_mut().zip(&gw_s) {
                            *dst += src;
                        }
                        // dcol = Wᵀ·G, folded back onto the image.
                        let gcol = matmul_atb(&self.nodes[w.0].value.data, gout, f, ckk, oh * ow);
                        col2im(
                            &gcol,
                            &mut gx[s * c * h * wdt..(s + 1) * c * h * wdt],
                            c,
                            h,
                            wdt,
                            kh,
                            kw,
                            stride,
                            pad,
                        );
                        for fi in 0..f {
                            gb[fi] += gout[fi * oh * ow..(fi + 1) * oh * ow].iter().sum::<f64>();
                        }
                    }
                    self.accumulate(x, &gx);
                    self.accumulate(w, &gw);
                    self.accumulate(b, &gb);
                }
                Op::MaxPool2d { x, argmax, .. } => {
                    let x = *x;
                    let argmax = argmax.clone();
                    let mut gx = vec![0.0; self.nodes[x.0].value.numel()];
                    for (gi, &src_idx) in g.iter().zip(&argmax) {
                        gx[src_idx] += gi;
                    }
                    self.accumulate(x, &gx);
                }
                Op::PairL2(a, b) => {
                    let (a, b) = (*a, *b);
                    let (n, d) = (
                        self.nodes[a.0].value.shape[0],
                        self.nodes[a.0].value.shape[1],
                    );
                    let mut ga = vec![0.0; n * d];
                    let mut gb = vec![0.0; n * d];
                    for i in 0..n {
                        let dist = self.nodes[idx].value.data[i];
                        if dist <= 1e-12 {
                            continue; // subgradient 0 at coincident pairs
                        }
                        for k in 0..d {
                            let diff = self.nodes[a.0].value.data[i * d + k]
                                - self.nodes[b.0].value.data[i * d + k];
                            let v = g[i] * diff / dist;
                            ga[i * d + k] = v;
                            gb[i * d + k] = -v;
                        }
                    }
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::AbsDiff(a, b) => {
                    let (a, b) = (*a, *b);
                    let mut ga = vec![0.0; g.len()];
                    let mut gb = vec![0.0; g.len()];
                    for i in 0..g.len() {
                        let diff =
                            self.nodes[a.0].value.data[i] - self.nodes[b.0].value.data[i];
                        let s = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        ga[i] = g[i] * s;
                        gb[i] = -g[i] * s;
                    }
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::ShiftMinus { d, s } => {
                    let (d, s) = (*d, *s);
                    let gd: Vec<f64> = g.iter().map(|x| -x).collect();
                    let gs = [g.iter().sum::<f64>()];
                    self.accumulate(d, &gd);
                    self.accumulate(s, &gs);
                }
                Op::BceLoss { z, y, p } => {
                    let z = *z;
                    let n = y.len() as f64;
                    let gz: Vec<f64> = p
                        .iter()
                        .zip(y)
                        .map(|(&pi, &yi)| {
                            // Zero gradient in the clamped region, where the
                            // loss is locally constant in z.
                            if pi <= BCE_EPSILON || pi >= 1.0 - BCE_EPSILON {
                                0.0
                            } else {
                                g[0] * (pi - yi) / n
                            }
                        })
                        .collect();
                    self.accumulate(z, &gz);
                }
                Op::CenterLoss { f, centers, labels } => {
                    let f = *f;
                    let d = centers.shape[1];
                    let n = labels.len() as f64;
                    let mut gf = vec![0.0; self.nodes[f.0].value.numel()];
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..d {
                            let diff = self.nodes[f.0].value.data[i * d + j]
                                - centers.data[label * d + j];
                            gf[i * d + j] = g[0] * diff / n;
                        }
                    }
                    self.accumulate(f, &gf);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let logits = *logits;
                    let k = self.nodes[logits.0].value.shape[1];
                    let n = labels.len() as f64;
                    let mut gl = vec![0.0; probs.len()];
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let indicator = if j == label { 1.0 } else { 0.0 };
                            gl[i * k + j] = g[0] * (probs[i * k + j] - indicator) / n;
                        }
                    }
                    self.accumulate(logits, &gl);
                }
            }
        }
    }
}

/// Central finite-difference gradient of `f` at `x` with step `h`, used as
/// the independent oracle for gradient checks.
pub fn finite_difference<F>(f: &F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error between an analytic and a reference gradient component.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-6, f64::max(a.abs(), b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use rand::Rng;

    const FD_STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    /// Check every component of the analytic gradient of `build` (a scalar
    /// function assembled on a fresh graph from the flat parameter vector)
    /// against central differences.
    fn gradcheck<F>(build: F, x0: &[f64])
    where
        F: Fn(&mut Graph, &[f64]) -> (NodeId, Vec<NodeId>),
    {
        let mut g = Graph::new();
        let (loss, params) = build(&mut g, x0);
        g.backward(loss);
        let mut analytic = Vec::new();
        for p in &params {
            let grad = g.grad(*p).expect("parameter should receive a gradient");
            analytic.extend_from_slice(&grad.data);
        }

        let f = |x: &[f64]| {
            let mut g = Graph::new();
            let (loss, _) = build(&mut g, x);
            g.value(loss).data[0]
        };
        let numeric = finite_difference(&f, x0, FD_STEP);
        assert_eq!(analytic.len(), numeric.len());
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(
                relative_error(a, n) < TOL,
                "component {i}: analytic {a}, numeric {n}"
            );
        }
    }

    fn rand_vec(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut rng = derive(seed, "autograd/test", 0);
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    /// Sum of squares, turning any tensor output into a scalar loss with a
    /// well-defined gradient (2x), built from existing ops.
    fn sum_squares(g: &mut Graph, x: NodeId) -> NodeId {
        let sq = g.elem_mul(x, x);
        let n = g.value(sq).numel();
        let flat = g.reshape(sq, &[1, n]);
        let w = g.constant(Tensor::from_vec(vec![1.0; n], &[1, n]));
        let b = g.constant(Tensor::zeros(&[1]));
        let dot = g.linear(flat, w, b);
        g.reshape(dot, &[1])
    }

    #[test]
    fn linear_relu_chain_matches_finite_differences() {
        // x:[2,3] → linear(4) → relu → sum of squares; params are w, b, x.
        let x0 = rand_vec(1, 2 * 3 + 4 * 3 + 4, -1.0, 1.0);
        gradcheck(
            |g, x| {
                let (xd, rest) = x.split_at(6);
                let (wd, bd) = rest.split_at(12);
                let xi = g.leaf(Tensor::from_vec(xd.to_vec(), &[2, 3]), true);
                let w = g.leaf(Tensor::from_vec(wd.to_vec(), &[4, 3]), true);
                let b = g.leaf(Tensor::from_vec(bd.to_vec(), &[4]), true);
                let y = g.linear(xi, w, b);
                let r = g.relu(y);
                let loss = sum_squares(g, r);
                (loss, vec![xi, w, b])
            },
            &x0,
        );
    }

    #[test]
    fn conv_pool_chain_matches_finite_differences() {
        // x:[1,2,6,6] → conv(3 filters, k3, s1, p1) → maxpool(2) → Σ².
        let nx = 2 * 36;
        let nw = 3 * 2 * 9;
        let x0 = rand_vec(2, nx + nw + 3, -1.0, 1.0);
        gradcheck(
            |g, x| {
                let (xd, rest) = x.split_at(nx);
                let (wd, bd) = rest.split_at(nw);
                let xi = g.leaf(Tensor::from_vec(xd.to_vec(), &[1, 2, 6, 6]), true);
                let w = g.leaf(Tensor::from_vec(wd.to_vec(), &[3, 2, 3, 3]), true);
                let b = g.leaf(Tensor::from_vec(bd.to_vec(), &[3]), true);
                let y = g.conv2d(xi, w, b, 1, 1);
                let p = g.maxpool2d(y, 2);
                let loss = sum_squares(g, p);
                (loss, vec![xi, w, b])
            },
            &x0,
        );
    }

    #[test]
    fn conv2d_known_value() {
        // Single 3x3 input, one 2x2 filter of ones, stride 1, no padding:
        // each output is the sum of a 2x2 patch.
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(
            (1..=9).map(f64::from).collect(),
            &[1, 1, 3, 3],
        ));
        let w = g.constant(Tensor::from_vec(vec![1.0; 4], &[1, 1, 2, 2]));
        let b = g.constant(Tensor::from_vec(vec![0.5], &[1]));
        let y = g.conv2d(x, w, b, 1, 0);
        assert_eq!(y.0, 3); // appended after the three leaves
        assert_eq!(g.value(y).shape, vec![1, 1, 2, 2]);
        assert_eq!(g.value(y).data, vec![12.5, 16.5, 24.5, 28.5]);
    }

    #[test]
    fn pair_l2_and_abs_diff_match_finite_differences() {
        // Keep coordinates apart so neither kink is sampled.
        let mut a = rand_vec(3, 8, 0.5, 1.5);
        let b = rand_vec(4, 8, -1.5, -0.5);
        a.extend(b);
        gradcheck(
            |g, x| {
                let (ad, bd) = x.split_at(8);
                let ai = g.leaf(Tensor::from_vec(ad.to_vec(), &[2, 4]), true);
                let bi = g.leaf(Tensor::from_vec(bd.to_vec(), &[2, 4]), true);
                let d = g.pair_l2(ai, bi);
                let f = g.abs_diff(ai, bi);
                let l1 = sum_squares(g, d);
                let l2 = sum_squares(g, f);
                let loss = g.add(l1, l2);
                (loss, vec![ai, bi])
            },
            &a,
        );
    }

    #[test]
    fn pair_l2_zero_distance_has_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0, 2.0], &[1, 2]), true);
        let b = g.leaf(Tensor::from_vec(vec![1.0, 2.0], &[1, 2]), true);
        let d = g.pair_l2(a, b);
        let loss = sum_squares(&mut g, d);
        assert_eq!(g.value(d).data, vec![0.0]);
        g.backward(loss);
        assert_eq!(g.grad(a).unwrap().data, vec![0.0, 0.0]);
    }

    #[test]
    fn bce_loss_known_values_and_gradient() {
        // p = 0.5 for every pair → loss = ln 2.
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_vec(vec![0.0, 0.0], &[2]));
        let l = g.bce_loss(z, &[1.0, 0.0]);
        assert!((g.value(l).data[0] - 2.0f64.ln()).abs() < 1e-15);

        // N=2, p=[0.9, 0.2], y=[1, 0] → −½(ln 0.9 + ln 0.8).
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_vec(vec![logit(0.9), logit(0.2)], &[2]));
        let l = g.bce_loss(z, &[1.0, 0.0]);
        let want = -0.5 * (0.9f64.ln() + 0.8f64.ln());
        assert!((g.value(l).data[0] - want).abs() < 1e-12);

        // Gradient vs finite differences through shift_minus as well.
        let x0 = rand_vec(5, 5, -2.0, 2.0);
        gradcheck(
            |g, x| {
                let (dd, sd) = x.split_at(4);
                let d = g.leaf(Tensor::from_vec(dd.to_vec(), &[4]), true);
                let s = g.leaf(Tensor::from_vec(sd.to_vec(), &[1]), true);
                let z = g.shift_minus(d, s);
                let loss = g.bce_loss(z, &[1.0, 0.0, 1.0, 0.0]);
                (loss, vec![d, s])
            },
            &x0,
        );
    }

    #[test]
    fn center_loss_known_value_and_gradient() {
        // Single sample, f=3, c=1 → ½·(3−1)² = 2.
        let mut g = Graph::new();
        let f = g.leaf(Tensor::from_vec(vec![3.0], &[1, 1]), true);
        let centers = Tensor::from_vec(vec![1.0, 5.0], &[2, 1]);
        let l = g.center_loss(f, &centers, &[0]);
        assert_eq!(g.value(l).data[0], 2.0);

        let x0 = rand_vec(6, 6, -1.0, 1.0);
        gradcheck(
            |g, x| {
                let f = g.leaf(Tensor::from_vec(x.to_vec(), &[3, 2]), true);
                let centers =
                    Tensor::from_vec(vec![0.2, -0.3, 1.0, 0.5, -0.7, 0.1], &[3, 2]);
                let loss = g.center_loss(f, &centers, &[2, 0, 1]);
                (loss, vec![f])
            },
            &x0,
        );
    }

    #[test]
    fn softmax_xent_known_values_and_gradient() {
        // Uniform logits over 5 classes → ln 5.
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[1, 5]));
        let l = g.softmax_xent(z, &[3]);
        assert!((g.value(l).data[0] - 5.0f64.ln()).abs() < 1e-15);

        // Logits [2, 0], true class 0 → −ln(e²/(e²+1)).
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_vec(vec![2.0, 0.0], &[1, 2]));
        let l = g.softmax_xent(z, &[0]);
        let want = -((2.0f64).exp() / ((2.0f64).exp() + 1.0)).ln();
        assert!((g.value(l).data[0] - want).abs() < 1e-12);

        let x0 = rand_vec(7, 8, -1.0, 1.0);
        gradcheck(
            |g, x| {
                let z = g.leaf(Tensor::from_vec(x.to_vec(), &[2, 4]), true);
                let loss = g.softmax_xent(z, &[1, 3]);
                (loss, vec![z])
            },
            &x0,
        );
    }

    #[test]
    fn non_trainable_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0, 2.0], &[1, 2]), true);
        let c = g.constant(Tensor::from_vec(vec![3.0, 4.0], &[1, 2]));
        let m = g.elem_mul(a, c);
        let loss = sum_squares(&mut g, m);
        g.backward(loss);
        assert!(g.grad(a).is_some());
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn gradients_accumulate_across_shared_use() {
        // loss = Σ (x ⊙ x) uses x twice; gradient must be 2x per appearance
        // accumulated correctly (here via elem_mul's two parents).
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![3.0], &[1, 1]), true);
        let sq = g.elem_mul(x, x);
        let loss = g.reshape(sq, &[1]);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap().data, vec![6.0]);
    }
}
