//! Central finite differences, the oracle for the reverse-mode kernel.

use super::graph::{Gradients, Graph};
use super::loss::{LossKind, Target};
use super::tensor::Tensor;
use super::{loss_value, ParamSourceMut};
use crate::error::{Error, Result};

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for every coordinate of
/// every parameter the graph references.
pub fn finite_difference_gradient<P: ParamSourceMut + Clone>(
    graph: &Graph,
    params: &P,
    batch: &Tensor,
    target: &Target,
    loss: LossKind,
    eps: f64,
) -> Result<Gradients> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut work = params.clone();
    let mut grads = Gradients::new();
    for id in graph.param_ids() {
        let n = work.param(id).numel();
        let mut g = Tensor::zeros(work.param(id).shape().to_vec());
        for i in 0..n {
            let orig = work.param(id).data()[i];
            g.data_mut()[i] = central_difference(
                |v| {
                    work.param_mut(id).data_mut()[i] = v;
                    loss_value(graph, &work, batch, target, loss)
                },
                orig,
                eps,
            )?;
            work.param_mut(id).data_mut()[i] = orig;
        }
        grads.insert(id, g);
    }
    Ok(grads)
}

/// Central difference quotient of a scalar function at `x`.
pub fn central_difference<E>(
    mut f: impl FnMut(f64) -> std::result::Result<f64, E>,
    x: f64,
    eps: f64,
) -> std::result::Result<f64, E> {
    let up = f(x + eps)?;
    let down = f(x - eps)?;
    Ok((up - down) / (2.0 * eps))
}

/// Largest coordinate-wise `|a − b| / max(|a|, |b|, floor)` across two
/// gradient sets. Keys present in only one set count as infinite error.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for (id, ga) in a {
        let Some(gb) = b.get(id) else {
            return f64::INFINITY;
        };
        if ga.shape() != gb.shape() {
            return f64::INFINITY;
        }
        for (&x, &y) in ga.data().iter().zip(gb.data()) {
            let den = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / den);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{backward, GraphBuilder, Layer, LayerKind, ParamId};

    #[test]
    fn quadratic_derivative() {
        let d = central_difference(|x| Ok::<_, Error>(x * x), 3.0, 1e-4).unwrap();
        assert!((d - 6.0).abs() < 1e-7);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        // Zero weights on the head make every logit equal to its bias (0),
        // and a balanced target batch keeps the loss constant in the biases.
        let (mut b, x) = GraphBuilder::new(vec![3]);
        let y = b
            .layer(
                x,
                Layer {
                    kind: LayerKind::dense(3, 2),
                    params: vec![ParamId(0), ParamId(1)],
                },
            )
            .unwrap();
        let g = b.finish(vec![y]);
        let params = vec![Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![2])];
        let batch = Tensor::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let target = Target::Classes(vec![0, 1]);
        let fd = finite_difference_gradient(&g, &params, &batch, &target, LossKind::CrossEntropy, 1e-6).unwrap();
        for t in fd.values() {
            assert!(t.data().iter().all(|v| v.abs() < 1e-9));
        }
        let (loss, _) = backward(&g, &params, &batch, &target, LossKind::CrossEntropy).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn agrees_with_backward_on_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = crate::nn::Network::sequential(
            vec![4],
            &[LayerKind::dense(4, 6), LayerKind::Relu, LayerKind::dense(6, 3)],
            &mut rng,
        )
        .unwrap();
        let batch = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let target = Target::Classes(vec![0, 2, 1]);
        let (_, exact) = net.backward(&batch, &target, LossKind::CrossEntropy).unwrap();
        let fd =
            finite_difference_gradient(&net.graph, &net.params, &batch, &target, LossKind::CrossEntropy, 1e-6).unwrap();
        assert!(max_relative_error(&exact, &fd, 1e-3) < 1e-5);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let g = GraphBuilder::new(vec![1]).0.finish(vec![]);
        let p: Vec<Tensor> = Vec::new();
        let b = Tensor::zeros(vec![1, 1]);
        assert!(
            finite_difference_gradient(&g, &p, &b, &Target::Classes(vec![0]), LossKind::CrossEntropy, 0.0).is_err()
        );
    }
}
