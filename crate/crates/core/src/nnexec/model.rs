//! Model skeleton around a searched cell, with forward and reverse passes.
//!
//! The skeleton is a 3×3 stem convolution with `c0` channels, then `groups`
//! groups of `cells_per_group` cells. After each cell (with `c` input
//! channels) comes a 3×3 separable convolution: stride 2 with `2c` channels
//! if the cell closes its group, stride 1 with `c` channels otherwise. The
//! last reduction feeds global average pooling and a linear classifier.
//! Every convolution is bias-free and followed by normalization and a
//! rectifier; inside a cell the channel constant `C` equals the cell's
//! input width.

use super::norm::{bn_backward, bn_forward, BnBuffers, BnCache, NormMode};
use super::ops;
use super::tensor::Tensor;
use super::ExecError;
use crate::assembly::{channel_plan, FlatArchitecture, TensorShape};
use crate::genotype::PrimitiveOp;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What to build around a cell.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub cell: FlatArchitecture,
    /// Stem output channels `c0`.
    pub stem_channels: usize,
    /// Cells per group `N`.
    pub cells_per_group: usize,
    pub groups: usize,
    pub num_classes: usize,
}

pub type ParamId = usize;
type BnId = usize;

/// A learnable tensor with its gradient and momentum buffers.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    momentum: Vec<f64>,
    /// Whether weight decay applies (convolution/linear weights only).
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub tensors: Vec<ParamTensor>,
}

impl ParamStore {
    /// Fan-in-scaled uniform init: `U(-√(3/fan_in), √(3/fan_in))`, i.e.
    /// variance `1/fan_in`.
    fn add_weights(&mut self, len: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let bound = (3.0 / fan_in as f64).sqrt();
        let values = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push(values, true)
    }

    fn add_constant(&mut self, len: usize, value: f64) -> ParamId {
        self.push(vec![value; len], false)
    }

    fn push(&mut self, values: Vec<f64>, decay: bool) -> ParamId {
        let len = values.len();
        self.tensors.push(ParamTensor {
            values,
            grad: vec![0.0; len],
            momentum: vec![0.0; len],
            decay,
        });
        self.tensors.len() - 1
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        for (g, &d) in self.tensors[id].grad.iter_mut().zip(grad) {
            *g += d;
        }
    }

    /// Momentum SGD: `v ← μ·v + g`, `w ← w − lr·v`.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        for t in &mut self.tensors {
            for ((v, m), &g) in t.values.iter_mut().zip(&mut t.momentum).zip(&t.grad) {
                *m = momentum * *m + g;
                *v -= lr * *m;
            }
        }
    }

    pub fn len_values(&self) -> u64 {
        self.tensors.iter().map(|t| t.values.len() as u64).sum()
    }

    /// `(λ/2)·Σ w²` over decayed parameters.
    fn decay_loss(&self, lambda: f64) -> f64 {
        0.5 * lambda
            * self
                .tensors
                .iter()
                .filter(|t| t.decay)
                .map(|t| t.values.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
    }

    /// Add `λ·w` to each decayed parameter's gradient.
    fn decay_grads(&mut self, lambda: f64) {
        for t in self.tensors.iter_mut().filter(|t| t.decay) {
            for (g, &v) in t.grad.iter_mut().zip(&t.values) {
                *g += lambda * v;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct CellEdge {
    src: usize,
    dst: usize,
    c_in: usize,
    c_out: usize,
    kind: EdgeKind,
}

#[derive(Debug, Clone)]
enum EdgeKind {
    Identity,
    MaxPool,
    AvgPool,
    Conv1x1 { w: ParamId, bn: BnId },
    Depthwise { k: ParamId, bn: BnId },
    Separable { kd: ParamId, pw: ParamId, bn: BnId },
}

#[derive(Debug, Clone)]
struct CellExec {
    edges: Vec<CellEdge>,
    incoming: Vec<Vec<usize>>,
    node_channels: Vec<usize>,
    sink: usize,
}

#[derive(Debug, Clone)]
enum Block {
    /// Full 3×3 convolution + norm + rectifier.
    Stem { w: ParamId, bn: BnId, c_in: usize, c_out: usize },
    Cell(CellExec),
    /// Separable 3×3 (stride 1 or 2) + norm + rectifier.
    Bridge { kd: ParamId, pw: ParamId, bn: BnId, c_in: usize, c_out: usize, stride: usize },
    GlobalPool,
    Classifier { w: ParamId, b: ParamId, c_in: usize, classes: usize },
}

/// An executable model: parameter store, normalization buffers, and the
/// block sequence. Single-owner during training; separate instances train
/// concurrently without shared state.
#[derive(Debug, Clone)]
pub struct Model {
    blocks: Vec<Block>,
    pub params: ParamStore,
    bn: Vec<(BnBuffers, ParamId, ParamId)>, // buffers, gamma, beta
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
}

fn add_bn(
    params: &mut ParamStore,
    bn: &mut Vec<(BnBuffers, ParamId, ParamId)>,
    channels: usize,
) -> BnId {
    let gamma = params.add_constant(channels, 1.0);
    let beta = params.add_constant(channels, 0.0);
    bn.push((BnBuffers::new(channels), gamma, beta));
    bn.len() - 1
}

/// Build the model skeleton for a given input geometry, with seeded weight
/// initialization. Fails with [`ExecError::SpatialUnderflow`] if a stride-2
/// reduction would have to halve a spatial dimension that is already 1.
pub fn build_model(
    spec: &ModelSpec,
    input: TensorShape,
    seed: u64,
) -> Result<Model, ExecError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::default();
    let mut bn = Vec::new();
    let mut blocks = Vec::new();

    let c0 = spec.stem_channels;
    let stem_w = params.add_weights(c0 * input.channels * 9, input.channels * 9, &mut rng);
    let stem_bn = add_bn(&mut params, &mut bn, c0);
    blocks.push(Block::Stem { w: stem_w, bn: stem_bn, c_in: input.channels, c_out: c0 });

    let (mut h, mut w) = (input.height, input.width);
    let mut c = c0;
    for group in 0..spec.groups {
        for cell_i in 0..spec.cells_per_group {
            let plan = channel_plan(&spec.cell, c, c);
            let mut edges = Vec::with_capacity(spec.cell.edges.len());
            for (ei, e) in spec.cell.edges.iter().enumerate() {
                let c_in = plan.node_channels[e.src];
                let c_out = plan.edge_channels[ei];
                let kind = match e.op {
                    PrimitiveOp::Identity => EdgeKind::Identity,
                    PrimitiveOp::MaxPool3x3 => EdgeKind::MaxPool,
                    PrimitiveOp::AvgPool3x3 => EdgeKind::AvgPool,
                    PrimitiveOp::Conv1x1 => EdgeKind::Conv1x1 {
                        w: params.add_weights(c_out * c_in, c_in, &mut rng),
                        bn: add_bn(&mut params, &mut bn, c_out),
                    },
                    PrimitiveOp::DepthwiseConv3x3 => EdgeKind::Depthwise {
                        k: params.add_weights(c_in * 9, 9, &mut rng),
                        bn: add_bn(&mut params, &mut bn, c_in),
                    },
                    PrimitiveOp::SeparableConv3x3 => EdgeKind::Separable {
                        kd: params.add_weights(c_in * 9, 9, &mut rng),
                        pw: params.add_weights(c_out * c_in, c_in, &mut rng),
                        bn: add_bn(&mut params, &mut bn, c_out),
                    },
                    PrimitiveOp::None => unreachable!("flat architectures carry no none edges"),
                };
                edges.push(CellEdge { src: e.src, dst: e.dst, c_in, c_out, kind });
            }
            let cell_out = plan.node_channels[spec.cell.sink];
            blocks.push(Block::Cell(CellExec {
                edges,
                incoming: spec.cell.incoming(),
                node_channels: plan.node_channels,
                sink: spec.cell.sink,
            }));

            let last_of_group = cell_i + 1 == spec.cells_per_group;
            let (stride, bridge_out) = if last_of_group { (2, 2 * c) } else { (1, c) };
            if stride == 2 && (h < 2 || w < 2) {
                return Err(ExecError::SpatialUnderflow {
                    height: h,
                    width: w,
                    group: group + 1,
                });
            }
            let kd = params.add_weights(cell_out * 9, 9, &mut rng);
            let pw = params.add_weights(bridge_out * cell_out, cell_out, &mut rng);
            let bbn = add_bn(&mut params, &mut bn, bridge_out);
            blocks.push(Block::Bridge { kd, pw, bn: bbn, c_in: cell_out, c_out: bridge_out, stride });
            if stride == 2 {
                h = (h + 2 - 3) / 2 + 1;
                w = (w + 2 - 3) / 2 + 1;
                c *= 2;
            }
        }
    }

    blocks.push(Block::GlobalPool);
    let cw = params.add_weights(spec.num_classes * c, c, &mut rng);
    let cb = params.add_constant(spec.num_classes, 0.0);
    blocks.push(Block::Classifier { w: cw, b: cb, c_in: c, classes: spec.num_classes });

    Ok(Model {
        blocks,
        params,
        bn,
        input_channels: input.channels,
        input_height: input.height,
        input_width: input.width,
        num_classes: spec.num_classes,
    })
}

struct ConvUnitCache {
    x: Tensor,
    conv_out: Tensor,
    bn: BnCache,
    pre_relu: Tensor,
}

struct SepUnitCache {
    x: Tensor,
    dw_out: Tensor,
    pw_out: Tensor,
    bn: BnCache,
    pre_relu: Tensor,
}

enum EdgeCache {
    Plain,
    Max(Vec<u32>),
    Conv(ConvUnitCache),
    Sep(SepUnitCache),
}

struct CellCache {
    node_values: Vec<Tensor>,
    edges: Vec<EdgeCache>,
}

enum BlockCache {
    Stem(ConvUnitCache),
    Cell(CellCache),
    Bridge(SepUnitCache),
    Pool { in_shape: TensorShape },
    Classifier { x: Tensor },
}

impl Model {
    fn gamma(&self, id: BnId) -> &[f64] {
        &self.params.tensors[self.bn[id].1].values
    }

    fn beta(&self, id: BnId) -> &[f64] {
        &self.params.tensors[self.bn[id].2].values
    }

    fn values(&self, id: ParamId) -> &[f64] {
        &self.params.tensors[id].values
    }

    fn bn_apply(&mut self, id: BnId, x: &Tensor, mode: NormMode) -> (Tensor, BnCache) {
        let gamma = self.params.tensors[self.bn[id].1].values.clone();
        let beta = self.params.tensors[self.bn[id].2].values.clone();
        bn_forward(x, &gamma, &beta, &mut self.bn[id].0, mode)
    }

    fn forward_blocks(
        &mut self,
        x: &Tensor,
        mode: NormMode,
        mut caches: Option<&mut Vec<BlockCache>>,
    ) -> Result<Tensor, ExecError> {
        assert_eq!(x.shape.channels, self.input_channels, "input channels mismatch");
        assert_eq!(
            (x.shape.height, x.shape.width),
            (self.input_height, self.input_width),
            "input spatial size mismatch"
        );
        let mut cur = x.clone();
        for bi in 0..self.blocks.len() {
            let block = self.blocks[bi].clone();
            cur = match &block {
                Block::Stem { w, bn, c_out, .. } => {
                    let conv_out = ops::conv3x3_forward(&cur, self.values(*w), *c_out);
                    let (pre_relu, bn_cache) = self.bn_apply(*bn, &conv_out, mode);
                    let y = ops::relu_forward(&pre_relu);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(BlockCache::Stem(ConvUnitCache {
                            x: cur,
                            conv_out,
                            bn: bn_cache,
                            pre_relu,
                        }));
                    }
                    y
                }
                Block::Cell(cell) => {
                    let (y, cache) = self.cell_forward(cell, &cur, mode)?;
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(BlockCache::Cell(cache));
                    }
                    y
                }
                Block::Bridge { kd, pw, bn, c_out, stride, .. } => {
                    let dw_out = ops::depthwise3x3_forward(&cur, self.values(*kd), *stride);
                    let pw_out = ops::conv1x1_forward(&dw_out, self.values(*pw), *c_out);
                    let (pre_relu, bn_cache) = self.bn_apply(*bn, &pw_out, mode);
                    let y = ops::relu_forward(&pre_relu);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(BlockCache::Bridge(SepUnitCache {
                            x: cur,
                            dw_out,
                            pw_out,
                            bn: bn_cache,
                            pre_relu,
                        }));
                    }
                    y
                }
                Block::GlobalPool => {
                    let y = ops::gap_forward(&cur);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(BlockCache::Pool { in_shape: cur.shape });
                    }
                    y
                }
                Block::Classifier { w, b, classes, .. } => {
                    let y = ops::linear_forward(&cur, self.values(*w), self.values(*b), *classes);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(BlockCache::Classifier { x: cur });
                    }
                    y
                }
            };
        }
        if !cur.is_finite() {
            return Err(ExecError::NumericFailure("non-finite logits".into()));
        }
        Ok(cur)
    }

    fn cell_forward(
        &mut self,
        cell: &CellExec,
        input: &Tensor,
        mode: NormMode,
    ) -> Result<(Tensor, CellCache), ExecError> {
        let n = cell.node_channels.len();
        let mut node_values: Vec<Option<Tensor>> = vec![None; n];
        node_values[0] = Some(input.clone());
        let mut edge_outputs: Vec<Option<Tensor>> = vec![None; cell.edges.len()];
        let mut edge_caches: Vec<Option<EdgeCache>> = Vec::new();
        edge_caches.resize_with(cell.edges.len(), || None);

        // Edges are sorted by destination, so a single sweep visits each
        // node after all of its inputs are ready.
        for node in 1..n {
            for &ei in &cell.incoming[node] {
                let edge = &cell.edges[ei];
                let src = node_values[edge.src].as_ref().expect("topological order");
                debug_assert_eq!(src.shape.channels, edge.c_in);
                let (out, cache) = match &edge.kind {
                    EdgeKind::Identity => (src.clone(), EdgeCache::Plain),
                    EdgeKind::MaxPool => {
                        let (y, am) = ops::maxpool3x3_forward(src);
                        (y, EdgeCache::Max(am))
                    }
                    EdgeKind::AvgPool => (ops::avgpool3x3_forward(src), EdgeCache::Plain),
                    EdgeKind::Conv1x1 { w, bn } => {
                        let conv_out = ops::conv1x1_forward(src, self.values(*w), edge.c_out);
                        let (pre_relu, bn_cache) = self.bn_apply(*bn, &conv_out, mode);
                        let y = ops::relu_forward(&pre_relu);
                        (
                            y,
                            EdgeCache::Conv(ConvUnitCache {
                                x: src.clone(),
                                conv_out,
                                bn: bn_cache,
                                pre_relu,
                            }),
                        )
                    }
                    EdgeKind::Depthwise { k, bn } => {
                        let conv_out = ops::depthwise3x3_forward(src, self.values(*k), 1);
                        let (pre_relu, bn_cache) = self.bn_apply(*bn, &conv_out, mode);
                        let y = ops::relu_forward(&pre_relu);
                        (
                            y,
                            EdgeCache::Conv(ConvUnitCache {
                                x: src.clone(),
                                conv_out,
                                bn: bn_cache,
                                pre_relu,
                            }),
                        )
                    }
                    EdgeKind::Separable { kd, pw, bn } => {
                        let dw_out = ops::depthwise3x3_forward(src, self.values(*kd), 1);
                        let pw_out = ops::conv1x1_forward(&dw_out, self.values(*pw), edge.c_out);
                        let (pre_relu, bn_cache) = self.bn_apply(*bn, &pw_out, mode);
                        let y = ops::relu_forward(&pre_relu);
                        (
                            y,
                            EdgeCache::Sep(SepUnitCache {
                                x: src.clone(),
                                dw_out,
                                pw_out,
                                bn: bn_cache,
                                pre_relu,
                            }),
                        )
                    }
                };
                edge_outputs[ei] = Some(out);
                edge_caches[ei] = Some(cache);
            }
            // Depthwise concatenation of the incoming edge outputs, in edge
            // order; a single input concatenates to itself.
            let parts: Vec<&Tensor> = cell.incoming[node]
                .iter()
                .map(|&ei| edge_outputs[ei].as_ref().expect("edge evaluated"))
                .collect();
            if parts.is_empty() {
                unreachable!("pruned architectures have no input-free interior nodes");
            }
            node_values[node] = Some(concat_channels(&parts));
            debug_assert_eq!(
                node_values[node].as_ref().unwrap().shape.channels,
                cell.node_channels[node]
            );
        }

        let out = node_values[cell.sink].clone().expect("sink evaluated");
        let cache = CellCache {
            node_values: node_values.into_iter().map(|v| v.expect("all nodes on paths")).collect(),
            edges: edge_caches.into_iter().map(|c| c.expect("all edges evaluated")).collect(),
        };
        Ok((out, cache))
    }

    /// Backward through `relu ∘ bn`, accumulating the gamma/beta gradients
    /// and returning the gradient at the normalization input.
    fn norm_relu_backward(
        &mut self,
        pre_relu: &Tensor,
        bn_cache: &BnCache,
        bn_id: BnId,
        gy: &Tensor,
    ) -> Tensor {
        let g_pre = ops::relu_backward(pre_relu, gy);
        let gamma = self.params.tensors[self.bn[bn_id].1].values.clone();
        let (g_in, ggamma, gbeta) = bn_backward(bn_cache, &gamma, &g_pre);
        let (gamma_id, beta_id) = (self.bn[bn_id].1, self.bn[bn_id].2);
        self.params.accumulate(gamma_id, &ggamma);
        self.params.accumulate(beta_id, &gbeta);
        g_in
    }

    fn sep_unit_backward(
        &mut self,
        cache: &SepUnitCache,
        kd: ParamId,
        pw: ParamId,
        bn_id: BnId,
        stride: usize,
        c_out: usize,
        gy: &Tensor,
    ) -> Tensor {
        let g_pw_out = self.norm_relu_backward(&cache.pre_relu, &cache.bn, bn_id, gy);
        let (g_dw_out, g_pw) =
            ops::conv1x1_backward(&cache.dw_out, self.values(pw), c_out, &g_pw_out);
        self.params.accumulate(pw, &g_pw);
        let (gx, g_kd) = ops::depthwise3x3_backward(&cache.x, self.values(kd), stride, &g_dw_out);
        self.params.accumulate(kd, &g_kd);
        gx
    }

    fn cell_backward(&mut self, cell: &CellExec, cache: &CellCache, gy: &Tensor) -> Tensor {
        let n = cell.node_channels.len();
        let mut node_grads: Vec<Tensor> = cache
            .node_values
            .iter()
            .map(|v| Tensor::zeros(v.shape))
            .collect();
        node_grads[cell.sink] = gy.clone();

        for node in (1..n).rev() {
            // Split the node gradient back into the concatenated edge slots.
            let node_grad = node_grads[node].clone();
            let mut offset = 0usize;
            for &ei in &cell.incoming[node] {
                let edge = cell.edges[ei].clone();
                let g_edge = slice_channels(&node_grad, offset, edge.c_out);
                offset += edge.c_out;
                let g_src = match (&edge.kind, &cache.edges[ei]) {
                    (EdgeKind::Identity, _) => g_edge,
                    (EdgeKind::MaxPool, EdgeCache::Max(am)) => {
                        ops::maxpool3x3_backward(cache.node_values[edge.src].shape, am, &g_edge)
                    }
                    (EdgeKind::AvgPool, _) => {
                        ops::avgpool3x3_backward(cache.node_values[edge.src].shape, &g_edge)
                    }
                    (EdgeKind::Conv1x1 { w, bn }, EdgeCache::Conv(c)) => {
                        let g_conv = self.norm_relu_backward(&c.pre_relu, &c.bn, *bn, &g_edge);
                        let (gx, gw) =
                            ops::conv1x1_backward(&c.x, self.values(*w), edge.c_out, &g_conv);
                        self.params.accumulate(*w, &gw);
                        gx
                    }
                    (EdgeKind::Depthwise { k, bn }, EdgeCache::Conv(c)) => {
                        let g_conv = self.norm_relu_backward(&c.pre_relu, &c.bn, *bn, &g_edge);
                        let (gx, gk) =
                            ops::depthwise3x3_backward(&c.x, self.values(*k), 1, &g_conv);
                        self.params.accumulate(*k, &gk);
                        gx
                    }
                    (EdgeKind::Separable { kd, pw, bn }, EdgeCache::Sep(c)) => {
                        self.sep_unit_backward(c, *kd, *pw, *bn, 1, edge.c_out, &g_edge)
                    }
                    _ => unreachable!("cache kind matches edge kind"),
                };
                add_into(&mut node_grads[edge.src], &g_src);
            }
        }
        node_grads.swap_remove(0)
    }

    /// Forward pass to logits, shape `(B, num_classes, 1, 1)`.
    pub fn forward(&mut self, x: &Tensor, mode: NormMode) -> Result<Tensor, ExecError> {
        self.forward_blocks(x, mode, None)
    }

    /// Full forward/backward pass: softmax cross-entropy plus weight decay,
    /// exact gradients accumulated into the parameter store. Returns the
    /// loss.
    pub fn gradients(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        weight_decay: f64,
        mode: NormMode,
    ) -> Result<f64, ExecError> {
        self.params.zero_grads();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let logits = self.forward_blocks(x, mode, Some(&mut caches))?;
        let (ce, mut grad) = ops::softmax_xent(&logits, labels);
        let loss = ce + self.params.decay_loss(weight_decay);
        if !loss.is_finite() {
            return Err(ExecError::NumericFailure("non-finite loss".into()));
        }

        for bi in (0..self.blocks.len()).rev() {
            let block = self.blocks[bi].clone();
            grad = match (&block, &caches[bi]) {
                (Block::Classifier { w, b, classes, .. }, BlockCache::Classifier { x }) => {
                    let (gx, gw, gb) =
                        ops::linear_backward(x, self.values(*w), *classes, &grad);
                    self.params.accumulate(*w, &gw);
                    self.params.accumulate(*b, &gb);
                    gx
                }
                (Block::GlobalPool, BlockCache::Pool { in_shape }) => {
                    ops::gap_backward(*in_shape, &grad)
                }
                (Block::Bridge { kd, pw, bn, c_out, stride, .. }, BlockCache::Bridge(c)) => {
                    self.sep_unit_backward(c, *kd, *pw, *bn, *stride, *c_out, &grad)
                }
                (Block::Cell(cell), BlockCache::Cell(c)) => self.cell_backward(cell, c, &grad),
                (Block::Stem { w, c_out, bn, .. }, BlockCache::Stem(c)) => {
                    let g_conv = self.norm_relu_backward(&c.pre_relu, &c.bn, *bn, &grad);
                    let (gx, gw) = ops::conv3x3_backward(&c.x, self.values(*w), *c_out, &g_conv);
                    self.params.accumulate(*w, &gw);
                    gx
                }
                _ => unreachable!("cache kind matches block kind"),
            };
        }
        self.params.decay_grads(weight_decay);
        Ok(loss)
    }

    /// Total learnable parameter count (weights plus normalization scales
    /// and shifts).
    pub fn parameter_count(&self) -> u64 {
        self.params.len_values()
    }
}

fn concat_channels(parts: &[&Tensor]) -> Tensor {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let base = parts[0].shape;
    let channels: usize = parts.iter().map(|p| p.shape.channels).sum();
    let mut out = Tensor::zeros(TensorShape { channels, ..base });
    let hw = base.height * base.width;
    for b in 0..base.batch {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape.channels;
            let src = &p.data[b * pc * hw..(b + 1) * pc * hw];
            let dst_start = (b * channels + c_off) * hw;
            out.data[dst_start..dst_start + pc * hw].copy_from_slice(src);
            c_off += pc;
        }
    }
    out
}

fn slice_channels(t: &Tensor, c_start: usize, c_len: usize) -> Tensor {
    let hw = t.shape.height * t.shape.width;
    let c_n = t.shape.channels;
    let mut out = Tensor::zeros(TensorShape { channels: c_len, ..t.shape });
    for b in 0..t.shape.batch {
        let src_start = (b * c_n + c_start) * hw;
        let dst_start = b * c_len * hw;
        out.data[dst_start..dst_start + c_len * hw]
            .copy_from_slice(&t.data[src_start..src_start + c_len * hw]);
    }
    out
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape, src.shape);
    for (d, &s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}
