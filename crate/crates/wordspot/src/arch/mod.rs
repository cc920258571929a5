//! Word-spotting CNN blueprints with shape inference and parameter
//! accounting.
//!
//! A [`LayerGraph`] is an immutable description: an ordered DAG of typed
//! layers in which every layer references earlier layers only. All four
//! architectures take a single-channel image of any size (above a small
//! per-architecture minimum), end in temporal pyramid pooling plus an MLP,
//! and emit a sigmoid attribute vector, so the output dimension is
//! independent of the input extent. [`Network`] binds a graph to concrete
//! parameters and executes it on a [`Tape`](crate::diffcore::Tape).

mod network;

use std::fmt;

use crate::diffcore::{GradCheckConfig, GradCheckReport, TppConfig};

pub use network::{ForwardMode, Network, Param};

#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("shape inference failed at layer {layer} ({name}): {reason}")]
    ShapeInferenceFailure {
        layer: usize,
        name: String,
        reason: String,
    },
    #[error("unknown architecture {0:?} (expected lenet, tppnet, resnet or densenet)")]
    UnknownArch(String),
    #[error("parameter block {name} does not fit the graph: {reason}")]
    ParameterMismatch { name: String, reason: String },
    #[error(transparent)]
    Diff(#[from] crate::diffcore::DiffError),
}

/// The four supported architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchKind {
    LeNet,
    TppNet,
    ResNet,
    DenseNet,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        ArchKind::LeNet,
        ArchKind::TppNet,
        ArchKind::ResNet,
        ArchKind::DenseNet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ArchKind::LeNet => "lenet",
            ArchKind::TppNet => "tppnet",
            ArchKind::ResNet => "resnet",
            ArchKind::DenseNet => "densenet",
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, ArchError> {
        match s {
            "lenet" => Ok(ArchKind::LeNet),
            "tppnet" => Ok(ArchKind::TppNet),
            "resnet" => Ok(ArchKind::ResNet),
            "densenet" => Ok(ArchKind::DenseNet),
            other => Err(ArchError::UnknownArch(other.to_string())),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Sigmoid,
    Dropout {
        p: f64,
    },
    Tpp(TppConfig),
    Linear {
        out_features: usize,
    },
    Add,
    ConcatChannels,
}

impl LayerKind {
    fn describe(&self) -> String {
        match self {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
            } => format!("conv {out_channels}@{}x{} /{stride}", kernel.0, kernel.1),
            LayerKind::MaxPool { window, stride } => format!("max pool {window}x{window} /{stride}"),
            LayerKind::AvgPool { window, stride } => format!("avg pool {window}x{window} /{stride}"),
            LayerKind::Relu => "relu".into(),
            LayerKind::Sigmoid => "sigmoid".into(),
            LayerKind::Dropout { p } => format!("dropout {p}"),
            LayerKind::Tpp(c) => format!("tpp {} levels", c.levels),
            LayerKind::Linear { out_features } => format!("fc {out_features}"),
            LayerKind::Add => "add".into(),
            LayerKind::ConcatChannels => "concat".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of predecessor layers; empty means the graph input.
    pub inputs: Vec<usize>,
    /// Shortcut projections carry weights but do not count towards the
    /// architecture's convolutional depth.
    pub projection: bool,
}

/// Immutable architecture blueprint.
#[derive(Clone, Debug)]
pub struct LayerGraph {
    pub name: String,
    pub kind: ArchKind,
    pub layers: Vec<Layer>,
    pub output_dim: usize,
}

impl LayerGraph {
    /// Number of convolutional layers on the main paths (shortcut
    /// projections excluded).
    pub fn conv_depth(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. }) && !l.projection)
            .count()
    }

    /// Output channel count of the last convolution-part layer feeding
    /// the pyramid pooling, derived by shape inference.
    pub fn final_conv_channels(&self) -> Result<usize, ArchError> {
        let table = infer_shapes(self, 64, 128)?;
        let tpp_row = self
            .layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Tpp(_)))
            .expect("every architecture ends in tpp");
        let feed = self.layers[tpp_row].inputs[0];
        match table.rows[feed].output {
            Shape::Map { channels, .. } => Ok(channels),
            Shape::Vector { .. } => unreachable!("tpp input is spatial"),
        }
    }

    /// Canonical text form; hashed to detect architecture mismatches when
    /// loading checkpoints.
    pub fn descriptor(&self) -> String {
        use fmt::Write;
        let mut out = String::new();
        writeln!(out, "arch {}", self.name).unwrap();
        writeln!(out, "output_dim {}", self.output_dim).unwrap();
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(
                out,
                "{i} {} [{}] inputs={:?} proj={}",
                layer.name,
                layer.kind.describe(),
                layer.inputs,
                layer.projection
            )
            .unwrap();
        }
        out
    }
}

/// One inferred row of [`infer_shapes`].
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Map {
        channels: usize,
        height: usize,
        width: usize,
    },
    Vector {
        len: usize,
    },
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Map {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
            Shape::Vector { len } => write!(f, "{len}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShapeRow {
    pub index: usize,
    pub name: String,
    pub kind: String,
    pub output: Shape,
    pub params: usize,
}

#[derive(Clone, Debug)]
pub struct ShapeTable {
    pub input_height: usize,
    pub input_width: usize,
    pub rows: Vec<ShapeRow>,
    pub total_params: usize,
}

impl fmt::Display for ShapeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>3}  {:<22} {:<24} {:>14} {:>12}",
            "#", "layer", "kind", "output", "params"
        )?;
        writeln!(
            f,
            "     input                  grayscale image {:>14}",
            format!("1x{}x{}", self.input_height, self.input_width)
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:>3}  {:<22} {:<24} {:>14} {:>12}",
                row.index,
                row.name,
                row.kind,
                row.output.to_string(),
                if row.params == 0 {
                    String::new()
                } else {
                    row.params.to_string()
                }
            )?;
        }
        write!(f, "total trainable parameters: {}", self.total_params)
    }
}

/// Walk the graph for a `1 x height x width` input, checking every layer
/// contract and accounting weights and biases.
pub fn infer_shapes(
    graph: &LayerGraph,
    height: usize,
    width: usize,
) -> Result<ShapeTable, ArchError> {
    let fail = |layer: usize, reason: String| ArchError::ShapeInferenceFailure {
        layer,
        name: graph.layers[layer].name.clone(),
        reason,
    };
    let mut shapes: Vec<Shape> = Vec::with_capacity(graph.layers.len());
    let mut rows = Vec::with_capacity(graph.layers.len());
    let mut total = 0usize;
    for (i, layer) in graph.layers.iter().enumerate() {
        let input_of = |slot: usize| -> Shape {
            match layer.inputs.get(slot) {
                Some(&j) => shapes[j].clone(),
                None => Shape::Map {
                    channels: 1,
                    height,
                    width,
                },
            }
        };
        let spatial = |slot: usize| -> Result<(usize, usize, usize), ArchError> {
            match input_of(slot) {
                Shape::Map {
                    channels,
                    height,
                    width,
                } => Ok((channels, height, width)),
                Shape::Vector { .. } => Err(fail(i, "expected a spatial input".into())),
            }
        };
        let (output, params) = match &layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                let (c, h, w) = spatial(0)?;
                let out = Shape::Map {
                    channels: *out_channels,
                    height: (h - 1) / stride + 1,
                    width: (w - 1) / stride + 1,
                };
                (out, out_channels * (c * kernel.0 * kernel.1 + 1))
            }
            LayerKind::MaxPool { window, stride } | LayerKind::AvgPool { window, stride } => {
                let (c, h, w) = spatial(0)?;
                if h < *window || w < *window {
                    return Err(fail(i, format!("{window}x{window} window exceeds {h}x{w}")));
                }
                (
                    Shape::Map {
                        channels: c,
                        height: (h - window) / stride + 1,
                        width: (w - window) / stride + 1,
                    },
                    0,
                )
            }
            LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Dropout { .. } => (input_of(0), 0),
            LayerKind::Tpp(config) => {
                let (c, _, w) = spatial(0)?;
                if w < config.levels {
                    return Err(fail(
                        i,
                        format!("width {w} below the {} pyramid levels", config.levels),
                    ));
                }
                (
                    Shape::Vector {
                        len: config.output_len(c),
                    },
                    0,
                )
            }
            LayerKind::Linear { out_features } => {
                let len = match input_of(0) {
                    Shape::Vector { len } => len,
                    Shape::Map { .. } => {
                        return Err(fail(i, "fully connected layer needs a flat input".into()))
                    }
                };
                (
                    Shape::Vector { len: *out_features },
                    out_features * (len + 1),
                )
            }
            LayerKind::Add => {
                let a = input_of(0);
                let b = input_of(1);
                if a != b {
                    return Err(fail(i, format!("add inputs differ: {a} vs {b}")));
                }
                (a, 0)
            }
            LayerKind::ConcatChannels => {
                let (ca, ha, wa) = spatial(0)?;
                let (cb, hb, wb) = spatial(1)?;
                if (ha, wa) != (hb, wb) {
                    return Err(fail(
                        i,
                        format!("concat spatial extents differ: {ha}x{wa} vs {hb}x{wb}"),
                    ));
                }
                (
                    Shape::Map {
                        channels: ca + cb,
                        height: ha,
                        width: wa,
                    },
                    0,
                )
            }
        };
        total += params;
        rows.push(ShapeRow {
            index: i,
            name: layer.name.clone(),
            kind: layer.kind.describe(),
            output: output.clone(),
            params,
        });
        shapes.push(output);
    }
    Ok(ShapeTable {
        input_height: height,
        input_width: width,
        rows,
        total_params: total,
    })
}

/// Exact trainable parameter count (weights plus biases). Channel counts
/// never depend on the input extent, so a fixed probe size is used.
pub fn count_params(graph: &LayerGraph) -> Result<usize, ArchError> {
    Ok(infer_shapes(graph, 64, 128)?.total_params)
}

struct GraphBuilder {
    layers: Vec<Layer>,
    tail: Option<usize>,
}

impl GraphBuilder {
    fn new() -> GraphBuilder {
        GraphBuilder {
            layers: Vec::new(),
            tail: None,
        }
    }

    /// Append a layer consuming the current tail.
    fn chain(&mut self, name: impl Into<String>, kind: LayerKind) -> usize {
        let inputs = self.tail.map(|t| vec![t]).unwrap_or_default();
        self.push(name, kind, inputs, false)
    }

    fn push(
        &mut self,
        name: impl Into<String>,
        kind: LayerKind,
        inputs: Vec<usize>,
        projection: bool,
    ) -> usize {
        self.layers.push(Layer {
            name: name.into(),
            kind,
            inputs,
            projection,
        });
        let idx = self.layers.len() - 1;
        self.tail = Some(idx);
        idx
    }

    fn conv(&mut self, name: impl Into<String>, out: usize, k: usize, stride: usize) -> usize {
        self.chain(
            name,
            LayerKind::Conv {
                out_channels: out,
                kernel: (k, k),
                stride,
            },
        )
    }

    /// TPP followed by the shared MLP head.
    fn head(&mut self, hidden: usize, dropout: Option<f64>, output_dim: usize) {
        self.chain("tpp", LayerKind::Tpp(TppConfig::default()));
        for (i, name) in ["fc1", "fc2"].iter().enumerate() {
            self.chain(*name, LayerKind::Linear { out_features: hidden });
            self.chain(format!("{name}.relu"), LayerKind::Relu);
            if let Some(p) = dropout {
                self.chain(format!("{name}.dropout"), LayerKind::Dropout { p });
            }
            let _ = i;
        }
        self.chain(
            "fc_out",
            LayerKind::Linear {
                out_features: output_dim,
            },
        );
        self.chain("sigmoid", LayerKind::Sigmoid);
    }

    fn finish(self, name: impl Into<String>, kind: ArchKind, output_dim: usize) -> LayerGraph {
        LayerGraph {
            name: name.into(),
            kind,
            layers: self.layers,
            output_dim,
        }
    }
}

/// Small two-convolution network: 20 then 50 feature maps with 5x5
/// kernels, pyramid pooling, and two 500-unit hidden layers.
pub fn build_phoclenet(phoc_dim: usize) -> LayerGraph {
    let mut b = GraphBuilder::new();
    b.conv("conv1", 20, 5, 1);
    b.chain("conv1.relu", LayerKind::Relu);
    b.chain("pool1", LayerKind::MaxPool { window: 2, stride: 2 });
    b.conv("conv2", 50, 5, 1);
    b.chain("conv2.relu", LayerKind::Relu);
    b.head(500, None, phoc_dim);
    b.finish("phoc-lenet", ArchKind::LeNet, phoc_dim)
}

/// VGG16-style stack: thirteen 3x3 convolutions with max pooling kept
/// only after the second and fourth, then pyramid pooling and a
/// 4096/4096 MLP with 50% dropout.
pub fn build_tpp_phocnet(phoc_dim: usize) -> LayerGraph {
    let mut b = GraphBuilder::new();
    let plan: &[(usize, usize, bool)] = &[
        (1, 64, false),
        (2, 64, true),
        (3, 128, false),
        (4, 128, true),
        (5, 256, false),
        (6, 256, false),
        (7, 256, false),
        (8, 512, false),
        (9, 512, false),
        (10, 512, false),
        (11, 512, false),
        (12, 512, false),
        (13, 512, false),
    ];
    for &(i, maps, pool_after) in plan {
        b.conv(format!("conv{i}"), maps, 3, 1);
        b.chain(format!("conv{i}.relu"), LayerKind::Relu);
        if pool_after {
            b.chain(
                format!("pool{}", if i == 2 { 1 } else { 2 }),
                LayerKind::MaxPool { window: 2, stride: 2 },
            );
        }
    }
    b.head(4096, Some(0.5), phoc_dim);
    b.finish("tpp-phocnet", ArchKind::TppNet, phoc_dim)
}

/// Residual bottleneck network: a 7x7 stem and 16 bottleneck blocks with
/// ordinals 3x256, 4x512, 6x1024, 3x2048. Downsampling happens only at
/// the stem max pooling and through a stride-2 convolution entering
/// block 4; shortcuts project through 1x1 convolutions wherever the
/// channel count or stride changes. No batch normalization anywhere.
pub fn build_phocresnet(phoc_dim: usize) -> LayerGraph {
    build_phocresnet_with(phoc_dim, 1)
}

/// Variant with a configurable stem convolution stride.
pub fn build_phocresnet_with(phoc_dim: usize, stem_stride: usize) -> LayerGraph {
    let mut b = GraphBuilder::new();
    b.conv("stem", 64, 7, stem_stride);
    b.chain("stem.relu", LayerKind::Relu);
    b.chain("stem.pool", LayerKind::MaxPool { window: 3, stride: 2 });

    let stages: &[(usize, usize)] = &[(256, 3), (512, 4), (1024, 6), (2048, 3)];
    let mut in_channels = 64usize;
    let mut block_no = 0usize;
    for &(ordinal, count) in stages {
        for _ in 0..count {
            block_no += 1;
            // the only downsampling convolution enters block 4
            let stride = if block_no == 4 { 2 } else { 1 };
            let narrow = ordinal / 4;
            let block_input = b.tail.expect("stem precedes blocks");
            let name = |part: &str| format!("block{block_no:02}.{part}");
            b.conv(name("conv1"), narrow, 1, stride);
            b.chain(name("relu1"), LayerKind::Relu);
            b.conv(name("conv2"), narrow, 3, 1);
            b.chain(name("relu2"), LayerKind::Relu);
            let main = b.conv(name("conv3"), ordinal, 1, 1);
            let shortcut = if in_channels != ordinal || stride != 1 {
                b.push(
                    name("proj"),
                    LayerKind::Conv {
                        out_channels: ordinal,
                        kernel: (1, 1),
                        stride,
                    },
                    vec![block_input],
                    true,
                )
            } else {
                block_input
            };
            b.push(name("add"), LayerKind::Add, vec![main, shortcut], false);
            b.chain(name("relu3"), LayerKind::Relu);
            in_channels = ordinal;
        }
    }
    b.head(4096, Some(0.5), phoc_dim);
    b.finish("phoc-resnet", ArchKind::ResNet, phoc_dim)
}

/// Densely connected network: a 32-map stem, a 30-layer and a 60-layer
/// dense block with growth rate 12, and a transition that compresses the
/// feature maps by 0.5 (rounding down) between them.
pub fn build_phocdensenet(phoc_dim: usize) -> LayerGraph {
    const GROWTH: usize = 12;
    let mut b = GraphBuilder::new();
    b.conv("stem", 32, 3, 1);
    b.chain("stem.relu", LayerKind::Relu);
    b.chain("stem.pool", LayerKind::AvgPool { window: 2, stride: 2 });
    let mut channels = 32usize;

    for (block_no, layers) in [(1usize, 30usize), (2, 60)] {
        for j in 1..=layers {
            let state = b.tail.unwrap();
            let name = |part: &str| format!("dense{block_no}.l{j:02}.{part}");
            b.conv(name("conv"), GROWTH, 3, 1);
            b.chain(name("relu"), LayerKind::Relu);
            let fresh = b.tail.unwrap();
            b.push(
                name("concat"),
                LayerKind::ConcatChannels,
                vec![state, fresh],
                false,
            );
            channels += GROWTH;
        }
        if block_no == 1 {
            channels /= 2;
            b.conv("transition.conv", channels, 1, 1);
            b.chain("transition.relu", LayerKind::Relu);
            b.chain(
                "transition.pool",
                LayerKind::AvgPool { window: 2, stride: 2 },
            );
        }
    }
    b.head(4096, Some(0.5), phoc_dim);
    b.finish("phoc-densenet", ArchKind::DenseNet, phoc_dim)
}

pub fn build(kind: ArchKind, phoc_dim: usize) -> LayerGraph {
    match kind {
        ArchKind::LeNet => build_phoclenet(phoc_dim),
        ArchKind::TppNet => build_tpp_phocnet(phoc_dim),
        ArchKind::ResNet => build_phocresnet(phoc_dim),
        ArchKind::DenseNet => build_phocdensenet(phoc_dim),
    }
}

/// Scale every channel count (and every hidden fully connected layer)
/// down by `divisor`, keeping the output layer and the graph structure
/// intact. Used for gradient-checking miniature variants.
pub fn miniaturize(graph: &LayerGraph, divisor: usize) -> LayerGraph {
    assert!(divisor > 0);
    let last_linear = graph
        .layers
        .iter()
        .rposition(|l| matches!(l.kind, LayerKind::Linear { .. }));
    let layers = graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let kind = match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => LayerKind::Conv {
                    out_channels: (out_channels / divisor).max(1),
                    kernel,
                    stride,
                },
                LayerKind::Linear { out_features } if Some(i) != last_linear => {
                    LayerKind::Linear {
                        out_features: (out_features / divisor).max(1),
                    }
                }
                ref kind => kind.clone(),
            };
            Layer {
                kind,
                ..layer.clone()
            }
        })
        .collect();
    LayerGraph {
        name: format!("{}-mini{divisor}", graph.name),
        kind: graph.kind,
        layers,
        output_dim: graph.output_dim,
    }
}

/// Gradient-check a miniature (channels / 8) variant of the given
/// architecture on a small random input against central finite
/// differences. Used by the `gradcheck` command and the test suite.
pub fn gradcheck_miniature(
    kind: ArchKind,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, ArchError> {
    use crate::diffcore::{grad_check_graph, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let phoc_dim = 36;
    let graph = miniaturize(&build(kind, phoc_dim), 8);
    let net = Network::init(&graph, 0xa11c + kind.name().len() as u64)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let mut input = Array::zeros(&[1, 12, 24]);
    for v in input.data_mut() {
        *v = rng.gen::<f64>();
    }
    let target: Vec<f64> = (0..phoc_dim).map(|_| f64::from(rng.gen::<bool>())).collect();

    let params: Vec<Array> = net.params().iter().map(|p| (*p.value).clone()).collect();
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
    let report = grad_check_graph(
        |tape, ids| {
            let out = net.forward_on(tape, ids, input.clone(), ForwardMode::Eval)?;
            tape.bce_loss(out, &target)
        },
        &params,
        &names,
        config,
    )?;
    Ok(report)
}
