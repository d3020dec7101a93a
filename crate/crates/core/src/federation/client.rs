use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::training_step_flops;
use crate::nn::{backward, sgd_step, Graph, LossKind, ParamId, ParamSource, Prox, Sgd, Tensor};
use crate::rng::{self, domain};

/// `k` distinct client ids out of `n`, ascending, drawn from the stream of
/// round `t`. Rounds are independent, so a client can be drawn again in a
/// later round.
pub fn sample_clients(seed: u64, t: usize, n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot sample {k} of {n} clients")));
    }
    let mut rng = rng::stream(seed, domain::SAMPLING, t as u64);
    let mut ids = index::sample(&mut rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// What a client runs in one round.
#[derive(Debug, Clone)]
pub struct LocalJob<'a> {
    pub graph: &'a Graph,
    /// Parameters received from the server, ascending.
    pub shipped: &'a [ParamId],
    /// Parameters the client updates, ascending; a subset of `shipped`.
    pub trainable: &'a [ParamId],
    pub steps: usize,
    pub batch_size: usize,
    pub sgd: Sgd,
    pub mu: f64,
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    /// `x_J − x_1` over `shipped`, tensor by tensor; frozen entries are 0.
    pub delta: Vec<f64>,
    /// Mean minibatch loss over the local steps.
    pub loss: f64,
    pub flops: u128,
}

/// Row indices of the `j`-th minibatch from a shuffled shard, wrapping
/// around so every batch has exactly `batch_size` rows.
pub fn minibatch(order: &[usize], j: usize, batch_size: usize) -> Vec<usize> {
    let start = j * batch_size;
    (start..start + batch_size).map(|p| order[p % order.len()]).collect()
}

/// Runs `steps` SGD steps from the global parameters on the client's shard
/// and returns the resulting delta.
pub fn local_train<P: ParamSource + ?Sized, R: Rng>(
    job: &LocalJob<'_>,
    global: &P,
    data: &Dataset,
    shard: &[usize],
    rng: &mut R,
) -> Result<LocalUpdate> {
    if shard.is_empty() {
        return Err(Error::InvalidArgument("client shard is empty".into()));
    }
    if job.steps == 0 || job.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "local steps and batch size must be positive".into(),
        ));
    }
    let start: BTreeMap<ParamId, Tensor> = job.shipped.iter().map(|&id| (id, global.param(id).clone())).collect();
    let mut local = start.clone();
    let mut velocity: BTreeMap<ParamId, Tensor> = if job.sgd.momentum != 0.0 {
        job.trainable
            .iter()
            .map(|&id| (id, Tensor::zeros(start[&id].shape().to_vec())))
            .collect()
    } else {
        BTreeMap::new()
    };
    let mut order = shard.to_vec();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    for j in 0..job.steps {
        let rows = minibatch(&order, j, job.batch_size);
        let (x, y) = data.batch(&rows);
        let (loss, grads) = backward(job.graph, &local, &x, &y, job.loss)?;
        loss_sum += loss;
        for &id in job.trainable {
            let prox = Prox {
                mu: job.mu,
                anchor: &start[&id],
            };
            sgd_step(
                local.get_mut(&id).expect("trainable is shipped"),
                &grads[&id],
                &job.sgd,
                velocity.get_mut(&id),
                Some(prox),
            )?;
        }
    }
    let mut delta = Vec::with_capacity(start.values().map(Tensor::numel).sum());
    for &id in job.shipped {
        let (a, b) = (&local[&id], &start[&id]);
        if job.trainable.binary_search(&id).is_ok() {
            delta.extend(a.data().iter().zip(b.data()).map(|(x, y)| x - y));
        } else {
            delta.extend(std::iter::repeat_n(0.0, a.numel()));
        }
    }
    Ok(LocalUpdate {
        delta,
        loss: loss_sum / job.steps as f64,
        flops: job.steps as u128 * training_step_flops(job.graph, job.batch_size),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::Task;
    use crate::nn::{LayerKind, Network, Target};

    #[test]
    fn full_sample_and_determinism() {
        assert_eq!(sample_clients(1, 3, 5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(
            sample_clients(1, 3, 50, 7).unwrap(),
            sample_clients(1, 3, 50, 7).unwrap()
        );
        assert_ne!(
            sample_clients(1, 3, 50, 7).unwrap(),
            sample_clients(1, 4, 50, 7).unwrap()
        );
        assert!(sample_clients(1, 3, 5, 6).is_err());
        assert!(sample_clients(1, 3, 5, 0).is_err());
    }

    #[test]
    fn minibatches_wrap() {
        assert_eq!(minibatch(&[4, 5, 6], 1, 2), vec![6, 4]);
        assert_eq!(minibatch(&[4], 3, 3), vec![4, 4, 4]);
    }

    fn setup() -> (Network, Dataset) {
        let net = Network::sequential(vec![2], &[LayerKind::dense(2, 2)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ds = Dataset::new(
            Tensor::from_rows(&[vec![0.5, -1.0]]).unwrap(),
            Target::Classes(vec![1]),
            Task::Classification { classes: 2 },
        )
        .unwrap();
        (net, ds)
    }

    #[test]
    fn single_step_delta_is_negative_gradient() {
        let (net, ds) = setup();
        let ids = net.graph.param_ids();
        let job = LocalJob {
            graph: &net.graph,
            shipped: &ids,
            trainable: &ids,
            steps: 1,
            batch_size: 1,
            sgd: Sgd::new(0.1),
            mu: 0.0,
            loss: LossKind::CrossEntropy,
        };
        let up = local_train(&job, &net.params, &ds, &[0], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (x, y) = ds.batch(&[0]);
        let (_, g) = net.backward(&x, &y, LossKind::CrossEntropy).unwrap();
        let expect: Vec<f64> = ids
            .iter()
            .flat_map(|id| g[id].data().iter().map(|v| -0.1 * v).collect::<Vec<_>>())
            .collect();
        for (a, b) in up.delta.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_lr_and_frozen_give_zero_delta() {
        let (net, ds) = setup();
        let ids = net.graph.param_ids();
        let mut job = LocalJob {
            graph: &net.graph,
            shipped: &ids,
            trainable: &ids,
            steps: 3,
            batch_size: 1,
            sgd: Sgd::new(0.0),
            mu: 0.0,
            loss: LossKind::CrossEntropy,
        };
        let up = local_train(&job, &net.params, &ds, &[0], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(up.delta.iter().all(|&d| d == 0.0));
        job.sgd = Sgd::new(0.5);
        job.trainable = &ids[1..];
        let up = local_train(&job, &net.params, &ds, &[0], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(up.delta[..4].iter().all(|&d| d == 0.0));
        assert!(up.delta[4..].iter().any(|&d| d != 0.0));
    }
}
