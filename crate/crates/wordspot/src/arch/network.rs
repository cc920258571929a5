//! Execution of a [`LayerGraph`] on the diffcore tape.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{he_init, AdamState, Array, DiffError, NodeId, Phase, Tape};

use super::{infer_shapes, ArchError, LayerGraph, LayerKind, Shape};

/// A named parameter block. Values are shared into tapes without copying;
/// the optimizer takes unique ownership back via [`Network::apply_adam`].
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Arc<Array>,
}

/// Stochastic layers need a generator during training and are identity
/// passes during evaluation/extraction.
pub enum ForwardMode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

/// A blueprint bound to concrete parameters.
pub struct Network {
    graph: LayerGraph,
    params: Vec<Param>,
    /// per layer, indices of (weights, bias) in `params`
    slots: Vec<Option<(usize, usize)>>,
}

/// Expected parameter blocks of a graph, in deterministic order:
/// `(name, shape, weight_count_for_init)`.
fn param_specs(graph: &LayerGraph) -> Result<Vec<(String, Vec<usize>, usize)>, ArchError> {
    let table = infer_shapes(graph, 64, 128)?;
    let mut specs = Vec::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        let input_shape = match layer.inputs.first() {
            Some(&j) => table.rows[j].output.clone(),
            None => Shape::Map {
                channels: 1,
                height: 64,
                width: 128,
            },
        };
        match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                ..
            } => {
                let in_c = match input_shape {
                    Shape::Map { channels, .. } => channels,
                    Shape::Vector { .. } => unreachable!("checked by infer_shapes"),
                };
                let shape = vec![out_channels, in_c, kernel.0, kernel.1];
                let n_l = out_channels * in_c * kernel.0 * kernel.1;
                specs.push((format!("{}.weights", layer.name), shape, n_l));
                specs.push((format!("{}.bias", layer.name), vec![out_channels], 0));
            }
            LayerKind::Linear { out_features } => {
                let in_len = match input_shape {
                    Shape::Vector { len } => len,
                    Shape::Map { .. } => unreachable!("checked by infer_shapes"),
                };
                let n_l = out_features * in_len;
                specs.push((
                    format!("{}.weights", layer.name),
                    vec![out_features, in_len],
                    n_l,
                ));
                specs.push((format!("{}.bias", layer.name), vec![out_features], 0));
            }
            _ => {}
        }
        let _ = i;
    }
    Ok(specs)
}

impl Network {
    /// He-initialize all weights (variance `2 / weight count`, biases
    /// zero) with a deterministic generator.
    pub fn init(graph: &LayerGraph, seed: u64) -> Result<Network, ArchError> {
        let specs = param_specs(graph)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, n_l) in specs {
            let value = if n_l > 0 {
                he_init(&shape, n_l, &mut rng)
            } else {
                Array::zeros(&shape)
            };
            params.push(Param {
                name,
                value: Arc::new(value),
            });
        }
        Self::assemble(graph.clone(), params)
    }

    /// Bind previously stored parameter arrays (checkpoint loading).
    /// Names and shapes must match the graph exactly.
    pub fn from_parts(graph: LayerGraph, arrays: Vec<(String, Array)>) -> Result<Network, ArchError> {
        let specs = param_specs(&graph)?;
        if specs.len() != arrays.len() {
            return Err(ArchError::ParameterMismatch {
                name: "<count>".into(),
                reason: format!("expected {} blocks, got {}", specs.len(), arrays.len()),
            });
        }
        let mut params = Vec::with_capacity(arrays.len());
        for ((name, shape, _), (got_name, value)) in specs.into_iter().zip(arrays) {
            if got_name != name {
                return Err(ArchError::ParameterMismatch {
                    name: got_name,
                    reason: format!("expected block {name}"),
                });
            }
            if value.shape() != shape.as_slice() {
                return Err(ArchError::ParameterMismatch {
                    name,
                    reason: format!("shape {:?}, expected {shape:?}", value.shape()),
                });
            }
            params.push(Param {
                name,
                value: Arc::new(value),
            });
        }
        Self::assemble(graph, params)
    }

    fn assemble(graph: LayerGraph, params: Vec<Param>) -> Result<Network, ArchError> {
        let mut slots = Vec::with_capacity(graph.layers.len());
        let mut next = 0usize;
        for layer in &graph.layers {
            match layer.kind {
                LayerKind::Conv { .. } | LayerKind::Linear { .. } => {
                    slots.push(Some((next, next + 1)));
                    next += 2;
                }
                _ => slots.push(None),
            }
        }
        debug_assert_eq!(next, params.len());
        Ok(Network {
            graph,
            params,
            slots,
        })
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn output_dim(&self) -> usize {
        self.graph.output_dim
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Register every parameter block on a tape, in block order.
    pub fn push_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| tape.input_shared(p.value.clone()))
            .collect()
    }

    /// Run the graph forward given already-registered parameter nodes.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        param_ids: &[NodeId],
        input: Array,
        mut mode: ForwardMode<'_>,
    ) -> Result<NodeId, DiffError> {
        assert_eq!(param_ids.len(), self.params.len());
        let input_node = tape.input(input);
        let mut outputs: Vec<NodeId> = Vec::with_capacity(self.graph.layers.len());
        for (i, layer) in self.graph.layers.iter().enumerate() {
            let arg = |slot: usize| -> NodeId {
                match layer.inputs.get(slot) {
                    Some(&j) => outputs[j],
                    None => input_node,
                }
            };
            let out = match &layer.kind {
                LayerKind::Conv { stride, .. } => {
                    let (w, b) = self.slots[i].expect("conv has params");
                    tape.conv2d(arg(0), param_ids[w], Some(param_ids[b]), *stride)?
                }
                LayerKind::MaxPool { window, stride } => {
                    tape.max_pool2d(arg(0), *window, *stride)?
                }
                LayerKind::AvgPool { window, stride } => {
                    tape.avg_pool2d(arg(0), *window, *stride)?
                }
                LayerKind::Relu => tape.relu(arg(0)),
                LayerKind::Sigmoid => tape.sigmoid(arg(0)),
                LayerKind::Dropout { p } => match &mut mode {
                    ForwardMode::Train { rng } => tape.dropout(arg(0), *p, Phase::Train, *rng)?,
                    ForwardMode::Eval => {
                        let mut unused = ChaCha8Rng::seed_from_u64(0);
                        tape.dropout(arg(0), *p, Phase::Eval, &mut unused)?
                    }
                },
                LayerKind::Tpp(config) => tape.tpp(arg(0), config)?,
                LayerKind::Linear { .. } => {
                    let (w, b) = self.slots[i].expect("linear has params");
                    tape.linear(arg(0), param_ids[w], param_ids[b])?
                }
                LayerKind::Add => tape.add(arg(0), arg(1))?,
                LayerKind::ConcatChannels => tape.concat_channels(arg(0), arg(1))?,
            };
            outputs.push(out);
        }
        Ok(*outputs.last().expect("graph has layers"))
    }

    /// Push parameters and run forward in one step.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: Array,
        mode: ForwardMode<'_>,
    ) -> Result<(NodeId, Vec<NodeId>), DiffError> {
        let ids = self.push_params(tape);
        let out = self.forward_on(tape, &ids, input, mode)?;
        Ok((out, ids))
    }

    /// One optimizer step over all parameter blocks.
    pub fn apply_adam(&mut self, state: &mut AdamState, grads: &[Array]) -> Result<(), DiffError> {
        let mut refs: Vec<&mut Array> = self
            .params
            .iter_mut()
            .map(|p| Arc::make_mut(&mut p.value))
            .collect();
        state.step(&mut refs, grads)
    }
}
