//! The computation tape: forward operations and the reverse sweep.

use std::sync::Arc;

use rand::Rng;

use super::{Array, DiffError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Temporal pyramid pooling: level `n` splits the width axis into `n`
/// contiguous bins, each pooled over its full height and width, so the
/// output length (`channels * sum(1..=levels)`) is independent of the
/// input's spatial extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TppConfig {
    pub levels: usize,
    pub pool: TppPool,
}

/// Aggregator applied inside each pyramid bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TppPool {
    Max,
    Avg,
}

impl TppConfig {
    pub fn new(levels: usize) -> TppConfig {
        TppConfig {
            levels,
            pool: TppPool::Max,
        }
    }

    /// Total number of bins, `sum(1..=levels)`.
    pub fn bins(&self) -> usize {
        self.levels * (self.levels + 1) / 2
    }

    pub fn output_len(&self, channels: usize) -> usize {
        self.bins() * channels
    }
}

impl Default for TppConfig {
    fn default() -> Self {
        TppConfig::new(5)
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        filters: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    },
    MaxPool2d {
        input: NodeId,
        // linear input index of the max for every output element
        argmax: Vec<usize>,
    },
    AvgPool2d {
        input: NodeId,
        window: usize,
        stride: usize,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    Linear {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Dropout {
        input: NodeId,
        // per-element factor: 0.0 (dropped) or 1/(1-p); identity in eval
        mask: Vec<f64>,
    },
    Identity {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    Tpp {
        input: NodeId,
        config: TppConfig,
        // argmax per output element (max pool only)
        argmax: Vec<usize>,
    },
    BceLoss {
        prediction: NodeId,
        target: Vec<f64>,
    },
}

struct TapeNode {
    value: Arc<Array>,
    grad: Array,
    op: Op,
}

impl TapeNode {
    fn new(value: Array, op: Op) -> TapeNode {
        let grad = Array::zeros(value.shape());
        TapeNode {
            value: Arc::new(value),
            grad,
            op,
        }
    }

    fn shared(value: Arc<Array>, op: Op) -> TapeNode {
        let grad = Array::zeros(value.shape());
        TapeNode { value, grad, op }
    }
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

const BCE_CLAMP: f64 = 1e-7;

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf (input or parameter) by value.
    pub fn input(&mut self, value: Array) -> NodeId {
        self.push(TapeNode::new(value, Op::Leaf))
    }

    /// Record a leaf without copying the backing array.
    pub fn input_shared(&mut self, value: Arc<Array>) -> NodeId {
        self.push(TapeNode::shared(value, Op::Leaf))
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, node: TapeNode) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// 2-D cross-correlation with odd kernels and "same" padding, so the
    /// spatial output is `ceil(extent / stride)`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        filters: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    ) -> Result<NodeId, DiffError> {
        let x = self.value(input);
        let w = self.value(filters);
        let (c_in, h, w_in) = x.dims3("conv2d")?;
        let (f, fc, kh, kw) = w.dims4("conv2d")?;
        if fc != c_in {
            return Err(DiffError::shape(
                "conv2d",
                format!("input has {c_in} channels but filters expect {fc}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(DiffError::shape(
                "conv2d",
                format!("kernel extents must be odd, got {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(DiffError::shape("conv2d", "stride must be positive"));
        }
        if let Some(b) = bias {
            let bd = self.value(b).dim1("conv2d")?;
            if bd != f {
                return Err(DiffError::shape(
                    "conv2d",
                    format!("bias has {bd} entries for {f} filters"),
                ));
            }
        }
        let pad_h = (kh - 1) / 2;
        let pad_w = (kw - 1) / 2;
        let oh = (h - 1) / stride + 1;
        let ow = (w_in - 1) / stride + 1;

        let xd = self.value(input).data();
        let wd = self.value(filters).data();
        let bd = bias.map(|b| self.value(b).data());
        let mut out = vec![0.0; f * oh * ow];
        for fi in 0..f {
            let w_filter = fi * c_in * kh * kw;
            let init = bd.map_or(0.0, |b| b[fi]);
            for oy in 0..oh {
                let iy0 = (oy * stride) as isize - pad_h as isize;
                let ki_lo = (-iy0).max(0) as usize;
                let ki_hi = kh.min((h as isize - iy0) as usize);
                for ox in 0..ow {
                    let ix0 = (ox * stride) as isize - pad_w as isize;
                    let kj_lo = (-ix0).max(0) as usize;
                    let kj_hi = kw.min((w_in as isize - ix0) as usize);
                    let mut acc = init;
                    for c in 0..c_in {
                        let x_chan = c * h * w_in;
                        let w_chan = w_filter + c * kh * kw;
                        for ki in ki_lo..ki_hi {
                            let iy = (iy0 + ki as isize) as usize;
                            let ix = (ix0 + kj_lo as isize) as usize;
                            let xs = &xd[x_chan + iy * w_in + ix..][..kj_hi - kj_lo];
                            let ws = &wd[w_chan + ki * kw + kj_lo..][..kj_hi - kj_lo];
                            acc += xs.iter().zip(ws).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    out[(fi * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let value = Array::from_vec(&[f, oh, ow], out)?;
        Ok(self.push(TapeNode::new(
            value,
            Op::Conv2d {
                input,
                filters,
                bias,
                stride,
            },
        )))
    }

    /// Valid (unpadded) max pooling with a square window; ties go to the
    /// first element in row-major order so the backward pass is
    /// deterministic.
    pub fn max_pool2d(
        &mut self,
        input: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, DiffError> {
        let (c, h, w, oh, ow) = self.pool_dims(input, window, stride, "max_pool2d")?;
        let xd = self.value(input).data();
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..window {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..window {
                            let v = xd[row + kx];
                            if v > best {
                                best = v;
                                best_idx = row + kx;
                            }
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let value = Array::from_vec(&[c, oh, ow], out)?;
        Ok(self.push(TapeNode::new(value, Op::MaxPool2d { input, argmax })))
    }

    /// Valid (unpadded) average pooling with a square window.
    pub fn avg_pool2d(
        &mut self,
        input: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, DiffError> {
        let (c, h, w, oh, ow) = self.pool_dims(input, window, stride, "avg_pool2d")?;
        let xd = self.value(input).data();
        let norm = 1.0 / (window * window) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..window {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        acc += xd[row..row + window].iter().sum::<f64>();
                    }
                    out[(ch * oh + oy) * ow + ox] = acc * norm;
                }
            }
        }
        let value = Array::from_vec(&[c, oh, ow], out)?;
        Ok(self.push(TapeNode::new(
            value,
            Op::AvgPool2d {
                input,
                window,
                stride,
            },
        )))
    }

    fn pool_dims(
        &self,
        input: NodeId,
        window: usize,
        stride: usize,
        op: &'static str,
    ) -> Result<(usize, usize, usize, usize, usize), DiffError> {
        let (c, h, w) = self.value(input).dims3(op)?;
        if window == 0 || stride == 0 {
            return Err(DiffError::shape(op, "window and stride must be positive"));
        }
        if h < window || w < window {
            return Err(DiffError::shape(
                op,
                format!("{window}x{window} window exceeds {h}x{w} input"),
            ));
        }
        Ok((c, h, w, (h - window) / stride + 1, (w - window) / stride + 1))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let mut value = Array::zeros(x.shape());
        for (o, &v) in value.data_mut().iter_mut().zip(x.data()) {
            *o = v.max(0.0);
        }
        self.push(TapeNode::new(value, Op::Relu { input }))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let mut value = Array::zeros(x.shape());
        for (o, &v) in value.data_mut().iter_mut().zip(x.data()) {
            *o = 1.0 / (1.0 + (-v).exp());
        }
        self.push(TapeNode::new(value, Op::Sigmoid { input }))
    }

    /// Fully connected layer: `weights` is `[out, in]`, `bias` is `[out]`.
    pub fn linear(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, DiffError> {
        let d_in = self.value(input).dim1("linear")?;
        let (d_out, win) = match self.value(weights).shape()[..] {
            [o, i] => (o, i),
            ref s => {
                return Err(DiffError::shape(
                    "linear",
                    format!("expected [out, in] weights, got {s:?}"),
                ))
            }
        };
        if win != d_in {
            return Err(DiffError::shape(
                "linear",
                format!("input has {d_in} features but weights expect {win}"),
            ));
        }
        if self.value(bias).dim1("linear")? != d_out {
            return Err(DiffError::shape("linear", "bias length != output length"));
        }
        let xd = self.value(input).data();
        let wd = self.value(weights).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; d_out];
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &wd[o * d_in..(o + 1) * d_in];
            *out_v = bd[o] + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
        }
        let value = Array::from_vec(&[d_out], out)?;
        Ok(self.push(TapeNode::new(
            value,
            Op::Linear {
                input,
                weights,
                bias,
            },
        )))
    }

    /// Inverted dropout: in the train phase each unit is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`, so the
    /// expected activation matches the eval phase, which is the identity.
    pub fn dropout(
        &mut self,
        input: NodeId,
        p: f64,
        phase: Phase,
        rng: &mut impl Rng,
    ) -> Result<NodeId, DiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::InvalidProbability(p));
        }
        if phase == Phase::Eval {
            let value = self.value(input).clone();
            return Ok(self.push(TapeNode::new(value, Op::Identity { input })));
        }
        let keep_scale = 1.0 / (1.0 - p);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let mut value = Array::zeros(x.shape());
        for ((o, &v), &m) in value.data_mut().iter_mut().zip(x.data()).zip(&mask) {
            *o = v * m;
        }
        Ok(self.push(TapeNode::new(value, Op::Dropout { input, mask })))
    }

    /// Concatenate two `[C, H, W]` arrays along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (ca, ha, wa) = self.value(a).dims3("concat_channels")?;
        let (cb, hb, wb) = self.value(b).dims3("concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(DiffError::shape(
                "concat_channels",
                format!("spatial extents differ: {ha}x{wa} vs {hb}x{wb}"),
            ));
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let value = Array::from_vec(&[ca + cb, ha, wa], out)?;
        Ok(self.push(TapeNode::new(value, Op::ConcatChannels { a, b })))
    }

    /// Elementwise sum; shapes must be exactly equal (residual contract).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(DiffError::shape(
                "add",
                format!(
                    "shapes differ: {:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(TapeNode::new(value, Op::Add { a, b })))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let mut value = self.value(input).clone();
        value.scale_assign(factor);
        self.push(TapeNode::new(value, Op::Scale { input, factor }))
    }

    /// Temporal pyramid pooling over the width axis; output is a flat
    /// vector ordered level-major, then bin, then channel.
    pub fn tpp(&mut self, input: NodeId, config: &TppConfig) -> Result<NodeId, DiffError> {
        let (c, h, w) = self.value(input).dims3("tpp")?;
        if config.levels == 0 {
            return Err(DiffError::shape("tpp", "levels must be positive"));
        }
        if w < config.levels {
            return Err(DiffError::InputTooNarrow {
                width: w,
                levels: config.levels,
            });
        }
        let xd = self.value(input).data();
        let out_len = config.output_len(c);
        let mut out = vec![0.0; out_len];
        let mut argmax = match config.pool {
            TppPool::Max => vec![0usize; out_len],
            TppPool::Avg => Vec::new(),
        };
        let mut bin_offset = 0;
        for n in 1..=config.levels {
            for r in 0..n {
                let w_lo = r * w / n;
                let w_hi = (r + 1) * w / n;
                for ch in 0..c {
                    let base = ch * h * w;
                    let o = (bin_offset + r) * c + ch;
                    match config.pool {
                        TppPool::Max => {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for y in 0..h {
                                let row = base + y * w;
                                for x in w_lo..w_hi {
                                    let v = xd[row + x];
                                    if v > best {
                                        best = v;
                                        best_idx = row + x;
                                    }
                                }
                            }
                            out[o] = best;
                            argmax[o] = best_idx;
                        }
                        TppPool::Avg => {
                            let mut acc = 0.0;
                            for y in 0..h {
                                let row = base + y * w;
                                acc += xd[row + w_lo..row + w_hi].iter().sum::<f64>();
                            }
                            out[o] = acc / (h * (w_hi - w_lo)) as f64;
                        }
                    }
                }
            }
            bin_offset += n;
        }
        let value = Array::from_vec(&[out_len], out)?;
        Ok(self.push(TapeNode::new(
            value,
            Op::Tpp {
                input,
                config: *config,
                argmax,
            },
        )))
    }

    /// Mean binary cross-entropy of sigmoid outputs against a binary
    /// target; probabilities are clamped to `[1e-7, 1 - 1e-7]` before the
    /// logarithm.
    pub fn bce_loss(&mut self, prediction: NodeId, target: &[f64]) -> Result<NodeId, DiffError> {
        let d = self.value(prediction).dim1("bce_loss")?;
        if target.len() != d {
            return Err(DiffError::shape(
                "bce_loss",
                format!("{d} predictions vs {} targets", target.len()),
            ));
        }
        let pd = self.value(prediction).data();
        let mut acc = 0.0;
        for (&p, &t) in pd.iter().zip(target) {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        let value = Array::scalar(acc / d as f64);
        Ok(self.push(TapeNode::new(
            value,
            Op::BceLoss {
                prediction,
                target: target.to_vec(),
            },
        )))
    }

    /// Reverse sweep from a scalar output node. Call once per tape.
    pub fn backward(&mut self, output: NodeId) -> Result<(), DiffError> {
        if self.value(output).len() != 1 {
            return Err(DiffError::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(output).shape()),
            ));
        }
        self.backward_seeded(output, &Array::scalar(1.0))
    }

    /// Reverse sweep with an explicit upstream gradient for `output`.
    pub(crate) fn backward_seeded(
        &mut self,
        output: NodeId,
        upstream: &Array,
    ) -> Result<(), DiffError> {
        if !self.value(output).same_shape(upstream) {
            return Err(DiffError::shape(
                "backward",
                format!(
                    "upstream gradient shape {:?} vs output shape {:?}",
                    upstream.shape(),
                    self.value(output).shape()
                ),
            ));
        }
        self.nodes[output.0].grad.add_assign(upstream);
        for i in (0..=output.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    filters,
                    bias,
                    stride,
                } => {
                    let gout = node.grad.data();
                    let x = &head[input.0].value;
                    let w = &head[filters.0].value;
                    let (c_in, h, w_in) = x.dims3("conv2d")?;
                    let (f, _, kh, kw) = w.dims4("conv2d")?;
                    let (pad_h, pad_w) = ((kh - 1) / 2, (kw - 1) / 2);
                    let (oh, ow) = ((h - 1) / stride + 1, (w_in - 1) / stride + 1);
                    let mut gx = Array::zeros(x.shape());
                    let mut gw = Array::zeros(w.shape());
                    let mut gb = bias.map(|_| vec![0.0; f]);
                    {
                        let xd = x.data();
                        let wd = w.data();
                        let gxd = gx.data_mut();
                        // gw and gx are built in one fused scatter pass
                        let gwd = gw.data_mut();
                        for fi in 0..f {
                            let w_filter = fi * c_in * kh * kw;
                            for oy in 0..oh {
                                let iy0 = (oy * stride) as isize - pad_h as isize;
                                let ki_lo = (-iy0).max(0) as usize;
                                let ki_hi = kh.min((h as isize - iy0) as usize);
                                for ox in 0..ow {
                                    let g = gout[(fi * oh + oy) * ow + ox];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    if let Some(gb) = gb.as_mut() {
                                        gb[fi] += g;
                                    }
                                    let ix0 = (ox * stride) as isize - pad_w as isize;
                                    let kj_lo = (-ix0).max(0) as usize;
                                    let kj_hi = kw.min((w_in as isize - ix0) as usize);
                                    let width = kj_hi - kj_lo;
                                    for c in 0..c_in {
                                        let x_chan = c * h * w_in;
                                        let w_chan = w_filter + c * kh * kw;
                                        for ki in ki_lo..ki_hi {
                                            let iy = (iy0 + ki as isize) as usize;
                                            let ix = (ix0 + kj_lo as isize) as usize;
                                            let x_off = x_chan + iy * w_in + ix;
                                            let w_off = w_chan + ki * kw + kj_lo;
                                            for j in 0..width {
                                                gxd[x_off + j] += g * wd[w_off + j];
                                                gwd[w_off + j] += g * xd[x_off + j];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    head[input.0].grad.add_assign(&gx);
                    head[filters.0].grad.add_assign(&gw);
                    if let (Some(b), Some(gb)) = (bias, gb) {
                        for (dst, src) in head[b.0].grad.data_mut().iter_mut().zip(gb) {
                            *dst += src;
                        }
                    }
                }
                Op::MaxPool2d { input, argmax } => {
                    let gout = node.grad.data().to_vec();
                    let gin = head[input.0].grad.data_mut();
                    for (g, &idx) in gout.iter().zip(argmax) {
                        gin[idx] += g;
                    }
                }
                Op::AvgPool2d {
                    input,
                    window,
                    stride,
                } => {
                    let gout = node.grad.data().to_vec();
                    let (c, h, w) = head[input.0].value.dims3("avg_pool2d")?;
                    let (oh, ow) = ((h - *window) / stride + 1, (w - *window) / stride + 1);
                    let norm = 1.0 / (window * window) as f64;
                    let gin = head[input.0].grad.data_mut();
                    for ch in 0..c {
                        let base = ch * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = gout[(ch * oh + oy) * ow + ox] * norm;
                                for ky in 0..*window {
                                    let row = base + (oy * stride + ky) * w + ox * stride;
                                    for kx in 0..*window {
                                        gin[row + kx] += g;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Relu { input } => {
                    let gout = node.grad.data().to_vec();
                    let x = head[input.0].value.clone();
                    let gin = head[input.0].grad.data_mut();
                    for ((gi, &g), &v) in gin.iter_mut().zip(&gout).zip(x.data()) {
                        if v > 0.0 {
                            *gi += g;
                        }
                    }
                }
                Op::Sigmoid { input } => {
                    let gout = node.grad.data();
                    let y = node.value.data();
                    let mut local = vec![0.0; y.len()];
                    for ((l, &g), &y) in local.iter_mut().zip(gout).zip(y) {
                        *l = g * y * (1.0 - y);
                    }
                    let gin = head[input.0].grad.data_mut();
                    for (gi, l) in gin.iter_mut().zip(local) {
                        *gi += l;
                    }
                }
                Op::Linear {
                    input,
                    weights,
                    bias,
                } => {
                    let gout = node.grad.data().to_vec();
                    let x = head[input.0].value.clone();
                    let w = head[weights.0].value.clone();
                    let d_in = x.len();
                    let mut gx = vec![0.0; d_in];
                    let mut gw = vec![0.0; w.len()];
                    for (o, &g) in gout.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let row = &w.data()[o * d_in..(o + 1) * d_in];
                        let grow = &mut gw[o * d_in..(o + 1) * d_in];
                        for i in 0..d_in {
                            gx[i] += g * row[i];
                            grow[i] += g * x.data()[i];
                        }
                    }
                    for (dst, src) in head[input.0].grad.data_mut().iter_mut().zip(gx) {
                        *dst += src;
                    }
                    for (dst, src) in head[weights.0].grad.data_mut().iter_mut().zip(gw) {
                        *dst += src;
                    }
                    for (dst, src) in head[bias.0].grad.data_mut().iter_mut().zip(gout) {
                        *dst += src;
                    }
                }
                Op::Dropout { input, mask } => {
                    let gout = node.grad.data().to_vec();
                    let gin = head[input.0].grad.data_mut();
                    for ((gi, g), &m) in gin.iter_mut().zip(gout).zip(mask) {
                        *gi += g * m;
                    }
                }
                Op::Identity { input } => {
                    let gout = node.grad.data().to_vec();
                    for (dst, src) in head[input.0].grad.data_mut().iter_mut().zip(gout) {
                        *dst += src;
                    }
                }
                Op::ConcatChannels { a, b } => {
                    let gout = node.grad.data();
                    let a_len = head[a.0].value.len();
                    let (ga, gb) = (gout[..a_len].to_vec(), gout[a_len..].to_vec());
                    for (dst, src) in head[a.0].grad.data_mut().iter_mut().zip(ga) {
                        *dst += src;
                    }
                    for (dst, src) in head[b.0].grad.data_mut().iter_mut().zip(gb) {
                        *dst += src;
                    }
                }
                Op::Add { a, b } => {
                    let gout = node.grad.clone();
                    head[a.0].grad.add_assign(&gout);
                    head[b.0].grad.add_assign(&gout);
                }
                Op::Scale { input, factor } => {
                    let factor = *factor;
                    let gout = node.grad.data().to_vec();
                    let gin = head[input.0].grad.data_mut();
                    for (gi, g) in gin.iter_mut().zip(gout) {
                        *gi += g * factor;
                    }
                }
                Op::Tpp {
                    input,
                    config,
                    argmax,
                } => {
                    let gout = node.grad.data().to_vec();
                    match config.pool {
                        TppPool::Max => {
                            let gin = head[input.0].grad.data_mut();
                            for (g, &idx) in gout.iter().zip(argmax) {
                                gin[idx] += g;
                            }
                        }
                        TppPool::Avg => {
                            let (c, h, w) = head[input.0].value.dims3("tpp")?;
                            let gin = head[input.0].grad.data_mut();
                            let mut bin_offset = 0;
                            for n in 1..=config.levels {
                                for r in 0..n {
                                    let w_lo = r * w / n;
                                    let w_hi = (r + 1) * w / n;
                                    let norm = 1.0 / (h * (w_hi - w_lo)) as f64;
                                    for ch in 0..c {
                                        let g = gout[(bin_offset + r) * c + ch] * norm;
                                        let base = ch * h * w;
                                        for y in 0..h {
                                            let row = base + y * w;
                                            for gi in &mut gin[row + w_lo..row + w_hi] {
                                                *gi += g;
                                            }
                                        }
                                    }
                                }
                                bin_offset += n;
                            }
                        }
                    }
                }
                Op::BceLoss { prediction, target } => {
                    let g = node.grad.data()[0];
                    let p = head[prediction.0].value.clone();
                    let d = p.len() as f64;
                    let gp = head[prediction.0].grad.data_mut();
                    for ((gi, &pv), &t) in gp.iter_mut().zip(p.data()).zip(target) {
                        // clamped predictions are saturated: no gradient
                        if pv > BCE_CLAMP && pv < 1.0 - BCE_CLAMP {
                            *gi += g * (-t / pv + (1.0 - t) / (1.0 - pv)) / d;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
