//! Minimal dense-tensor network kernel with exact reverse-mode gradients.

mod gradcheck;
mod graph;
mod layer;
mod loss;
mod optim;
mod tensor;

pub use gradcheck::{central_difference, finite_difference_gradient, max_relative_error};
pub use graph::{Activations, Gradients, Graph, GraphBuilder, Layer, NodeId, ParamId, ParamSource};
pub use layer::LayerKind;
pub use loss::{accuracy, dice_score, loss_and_grad, LossKind, Target, DICE_SMOOTH};
pub use optim::{sgd_step, Prox, Sgd};
pub use tensor::Tensor;

use crate::error::Result;

/// Parameter stores that can be edited in place.
pub trait ParamSourceMut: ParamSource {
    fn param_mut(&mut self, id: ParamId) -> &mut Tensor;
}

impl ParamSourceMut for Vec<Tensor> {
    fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self[id.0]
    }
}

impl ParamSourceMut for std::collections::BTreeMap<ParamId, Tensor> {
    fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.get_mut(&id).expect("parameter present")
    }
}

/// A graph together with the parameters it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub graph: Graph,
    pub params: Vec<Tensor>,
}

impl Network {
    pub fn sequential<R: rand::Rng + ?Sized>(
        input_shape: Vec<usize>,
        kinds: &[LayerKind],
        rng: &mut R,
    ) -> Result<Self> {
        let (graph, params) = Graph::sequential(input_shape, kinds, rng)?;
        Ok(Self { graph, params })
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Activations> {
        self.graph.forward(&self.params, batch)
    }

    pub fn backward(&self, batch: &Tensor, target: &Target, loss: LossKind) -> Result<(f64, Gradients)> {
        backward(&self.graph, &self.params, batch, target, loss)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }
}

/// Summed loss over every graph output.
pub fn loss_value<P: ParamSource + ?Sized>(
    graph: &Graph,
    params: &P,
    batch: &Tensor,
    target: &Target,
    loss: LossKind,
) -> Result<f64> {
    let acts = graph.forward(params, batch)?;
    let mut total = 0.0;
    for out in acts.outputs() {
        total += loss_and_grad(loss, out, target)?.0;
    }
    Ok(total)
}

/// Loss (summed over outputs) and its gradient for every referenced parameter.
pub fn backward<P: ParamSource + ?Sized>(
    graph: &Graph,
    params: &P,
    batch: &Tensor,
    target: &Target,
    loss: LossKind,
) -> Result<(f64, Gradients)> {
    let (value, grads, _) = backward_with_flops(graph, params, batch, target, loss)?;
    Ok((value, grads))
}

pub(crate) fn backward_with_flops<P: ParamSource + ?Sized>(
    graph: &Graph,
    params: &P,
    batch: &Tensor,
    target: &Target,
    loss: LossKind,
) -> Result<(f64, Gradients, u128)> {
    let acts = graph.forward(params, batch)?;
    let mut total = 0.0;
    let mut out_grads = Vec::with_capacity(graph.num_outputs());
    for out in acts.outputs() {
        let (l, g) = loss_and_grad(loss, out, target)?;
        total += l;
        out_grads.push(g);
    }
    let grads = graph.backward(params, &acts, &out_grads)?;
    Ok((total, grads, acts.flops()))
}
