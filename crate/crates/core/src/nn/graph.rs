//! Directed acyclic computation graphs over layers, with reverse-mode
//! gradients.
//!
//! Nodes are stored in topological order (every node only reads earlier
//! nodes), so the backward sweep is a reverse scan. Parameters are not owned
//! by the graph: layers reference them through [`ParamId`]s resolved against
//! a [`ParamSource`], which lets several graphs (sub-models) share one store.

use std::collections::BTreeMap;

use rand::Rng;

use super::layer::{LayerCache, LayerKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

pub trait ParamSource {
    fn param(&self, id: ParamId) -> &Tensor;
}

impl ParamSource for Vec<Tensor> {
    fn param(&self, id: ParamId) -> &Tensor {
        &self[id.0]
    }
}

impl ParamSource for BTreeMap<ParamId, Tensor> {
    fn param(&self, id: ParamId) -> &Tensor {
        &self[&id]
    }
}

/// A layer instance: its kind plus the ids of its parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Vec<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Input,
    Layer(Layer),
    /// Channel-axis concatenation of two inputs with equal spatial extents.
    Concat,
    /// Zero activations with `channels` channels and the spatial extents of
    /// the reference input.
    Zeros {
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
}

/// Gradients keyed by parameter id, in ascending id order.
pub type Gradients = BTreeMap<ParamId, Tensor>;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
}

pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new(input_shape: Vec<usize>) -> (Self, NodeId) {
        let nodes = vec![Node {
            op: Op::Input,
            inputs: Vec::new(),
            shape: input_shape,
        }];
        (Self { nodes }, NodeId(0))
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        &self.nodes[node.0].shape
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, inputs, shape });
        NodeId(self.nodes.len() - 1)
    }

    pub fn layer(&mut self, input: NodeId, layer: Layer) -> Result<NodeId> {
        let index = self.nodes.len();
        let shape = layer
            .kind
            .output_shape(self.shape(input))
            .map_err(|message| Error::Shape { layer: index, message })?;
        if layer.params.len() != layer.kind.param_shapes().len() {
            return Err(Error::Shape {
                layer: index,
                message: format!(
                    "{} needs {} parameter tensors, got {}",
                    layer.kind,
                    layer.kind.param_shapes().len(),
                    layer.params.len()
                ),
            });
        }
        Ok(self.push(Op::Layer(layer), vec![input], shape))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::Shape {
                layer: self.nodes.len(),
                message: format!("cannot concatenate {sa:?} with {sb:?}"),
            });
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        Ok(self.push(Op::Concat, vec![a, b], shape))
    }

    pub fn zeros_like(&mut self, reference: NodeId, channels: usize) -> NodeId {
        let mut shape = self.shape(reference).to_vec();
        shape[0] = channels;
        self.push(Op::Zeros { channels }, vec![reference], shape)
    }

    pub fn finish(self, outputs: Vec<NodeId>) -> Graph {
        Graph {
            nodes: self.nodes,
            outputs,
        }
    }
}

/// Cached forward state for one batch.
#[derive(Debug, Clone)]
pub struct Activations {
    values: Vec<Tensor>,
    caches: Vec<LayerCache>,
    outputs: Vec<NodeId>,
    flops: u128,
}

impl Activations {
    pub fn output(&self, i: usize) -> &Tensor {
        &self.values[self.outputs[i].0]
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Tensor> {
        self.outputs.iter().map(|n| &self.values[n.0])
    }

    /// Forward FLOPs measured on the executed batch.
    pub fn flops(&self) -> u128 {
        self.flops
    }
}

impl Graph {
    /// Builds a plain chain of layers, allocating fresh parameters for each.
    pub fn sequential<R: Rng + ?Sized>(
        input_shape: Vec<usize>,
        kinds: &[LayerKind],
        rng: &mut R,
    ) -> Result<(Graph, Vec<Tensor>)> {
        let (mut b, mut x) = GraphBuilder::new(input_shape);
        let mut params = Vec::new();
        for kind in kinds {
            let ids = kind
                .init_params(rng)
                .into_iter()
                .map(|t| {
                    params.push(t);
                    ParamId(params.len() - 1)
                })
                .collect();
            x = b.layer(
                x,
                Layer {
                    kind: *kind,
                    params: ids,
                },
            )?;
        }
        Ok((b.finish(vec![x]), params))
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].shape
    }

    pub fn output_shapes(&self) -> Vec<&[usize]> {
        self.outputs.iter().map(|n| self.nodes[n.0].shape.as_slice()).collect()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Every parameter id referenced by a layer, ascending and deduplicated.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Layer(l) => Some(l.params.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Layers in topological order.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.nodes.iter().filter_map(|n| match &n.op {
            Op::Layer(l) => Some(l),
            _ => None,
        })
    }

    /// Analytic forward FLOPs for a batch, from the static shapes.
    pub fn forward_flops(&self, batch: usize) -> u128 {
        self.nodes
            .iter()
            .map(|n| node_flops(&n.op, &self.nodes_shape(n), batch))
            .sum()
    }

    fn nodes_shape(&self, node: &Node) -> Vec<usize> {
        match &node.op {
            Op::Layer(_) => self.nodes[node.inputs[0].0].shape.clone(),
            _ => node.shape.clone(),
        }
    }

    pub fn forward<P: ParamSource + ?Sized>(&self, params: &P, batch: &Tensor) -> Result<Activations> {
        if batch.shape().len() < 2 || batch.sample_shape() != self.input_shape() {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "input expects per-sample shape {:?}, got batch {:?}",
                    self.input_shape(),
                    batch.shape()
                ),
            });
        }
        let b = batch.batch();
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut flops = 0u128;
        for (index, node) in self.nodes.iter().enumerate() {
            let (value, cache) = match &node.op {
                Op::Input => (batch.clone(), LayerCache::None),
                Op::Layer(layer) => {
                    let x = &values[node.inputs[0].0];
                    let ps = resolve(params, layer, index)?;
                    flops += layer.kind.flops(x.sample_shape(), b);
                    layer.kind.forward(x, &ps)
                }
                Op::Concat => {
                    let (a, c) = (&values[node.inputs[0].0], &values[node.inputs[1].0]);
                    flops += node_flops(&node.op, &node.shape, b);
                    (concat_channels(a, c), LayerCache::None)
                }
                Op::Zeros { .. } => {
                    let mut shape = vec![b];
                    shape.extend_from_slice(&node.shape);
                    (Tensor::zeros(shape), LayerCache::None)
                }
            };
            values.push(value);
            caches.push(cache);
        }
        Ok(Activations {
            values,
            caches,
            outputs: self.outputs.clone(),
            flops,
        })
    }

    /// Propagates output gradients back to every referenced parameter.
    pub fn backward<P: ParamSource + ?Sized>(
        &self,
        params: &P,
        acts: &Activations,
        output_grads: &[Tensor],
    ) -> Result<Gradients> {
        if output_grads.len() != self.outputs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} output gradients for {} outputs",
                output_grads.len(),
                self.outputs.len()
            )));
        }
        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (out, g) in self.outputs.iter().zip(output_grads) {
            if g.shape() != acts.values[out.0].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "output gradient {:?} for output {:?}",
                    g.shape(),
                    acts.values[out.0].shape()
                )));
            }
            accumulate(&mut node_grads[out.0], g.clone());
        }
        let mut grads = Gradients::new();
        for (index, node) in self.nodes.iter().enumerate().rev() {
            let Some(gy) = node_grads[index].take() else {
                continue;
            };
            match &node.op {
                Op::Input | Op::Zeros { .. } => {}
                Op::Layer(layer) => {
                    let x = &acts.values[node.inputs[0].0];
                    let ps = resolve(params, layer, index)?;
                    let (gx, pgrads) = layer.kind.backward(x, &acts.caches[index], &gy, &ps);
                    for (id, g) in layer.params.iter().zip(pgrads) {
                        match grads.get_mut(id) {
                            Some(acc) => add_into(acc, &g),
                            None => {
                                grads.insert(*id, g);
                            }
                        }
                    }
                    accumulate(&mut node_grads[node.inputs[0].0], gx);
                }
                Op::Concat => {
                    let a = &acts.values[node.inputs[0].0];
                    let c = &acts.values[node.inputs[1].0];
                    let (ga, gc) = split_channels(&gy, a.shape(), c.shape());
                    accumulate(&mut node_grads[node.inputs[0].0], ga);
                    accumulate(&mut node_grads[node.inputs[1].0], gc);
                }
            }
        }
        // Parameters that never received a gradient (e.g. behind a zero path)
        // still get an explicit zero entry.
        for id in self.param_ids() {
            grads
                .entry(id)
                .or_insert_with(|| Tensor::zeros(params.param(id).shape().to_vec()));
        }
        Ok(grads)
    }
}

fn node_flops(op: &Op, shape: &[usize], batch: usize) -> u128 {
    match op {
        Op::Layer(l) => l.kind.flops(shape, batch),
        Op::Concat => batch as u128 * shape.iter().map(|&d| d as u128).product::<u128>(),
        Op::Input | Op::Zeros { .. } => 0,
    }
}

fn resolve<'a, P: ParamSource + ?Sized>(params: &'a P, layer: &Layer, index: usize) -> Result<Vec<&'a Tensor>> {
    let ps: Vec<&Tensor> = layer.params.iter().map(|&id| params.param(id)).collect();
    for (p, want) in ps.iter().zip(layer.kind.param_shapes()) {
        if p.shape() != want.as_slice() {
            return Err(Error::Shape {
                layer: index,
                message: format!("parameter shape {:?}, expected {want:?}", p.shape()),
            });
        }
    }
    Ok(ps)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => add_into(acc, &g),
        None => *slot = Some(g),
    }
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn concat_channels(a: &Tensor, c: &Tensor) -> Tensor {
    let b = a.batch();
    let (sa, sc) = (a.numel() / b, c.numel() / b);
    let mut data = Vec::with_capacity(a.numel() + c.numel());
    for n in 0..b {
        data.extend_from_slice(&a.data()[n * sa..(n + 1) * sa]);
        data.extend_from_slice(&c.data()[n * sc..(n + 1) * sc]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] += c.shape()[1];
    Tensor::new(shape, data).expect("concat shape")
}

fn split_channels(g: &Tensor, sa: &[usize], sc: &[usize]) -> (Tensor, Tensor) {
    let b = sa[0];
    let na: usize = sa[1..].iter().product();
    let nc: usize = sc[1..].iter().product();
    let mut ga = Vec::with_capacity(b * na);
    let mut gc = Vec::with_capacity(b * nc);
    for n in 0..b {
        let row = &g.data()[n * (na + nc)..(n + 1) * (na + nc)];
        ga.extend_from_slice(&row[..na]);
        gc.extend_from_slice(&row[na..]);
    }
    (
        Tensor::new(sa.to_vec(), ga).expect("split shape"),
        Tensor::new(sc.to_vec(), gc).expect("split shape"),
    )
}
