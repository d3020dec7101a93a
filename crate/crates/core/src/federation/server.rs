use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamSource, ParamSourceMut, Tensor};
use crate::progressive::ParamStore;

/// Coordinate-wise mean of decoded client deltas, summed in the order given
/// (callers pass them in ascending client id).
pub fn aggregate(deltas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = deltas.first() else {
        return Err(Error::InvalidArgument("no deltas to aggregate".into()));
    };
    let n = first.len();
    if let Some(bad) = deltas.iter().find(|d| d.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "delta of length {} among deltas of length {n}",
            bad.len()
        )));
    }
    let mut sum = vec![0.0; n];
    for d in deltas {
        for (s, v) in sum.iter_mut().zip(d) {
            *s += v;
        }
    }
    let k = deltas.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(sum)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ServerKind {
    #[default]
    Fedavg,
    Fedadam {
        #[serde(default = "default_server_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
}

fn default_server_lr() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_tau() -> f64 {
    1e-3
}

impl ServerKind {
    pub fn fedadam() -> Self {
        ServerKind::Fedadam {
            lr: default_server_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            tau: default_tau(),
        }
    }
}

/// Adaptive server step on one coordinate; returns the new value.
#[allow(clippy::too_many_arguments)]
pub fn fedadam_step(x: f64, delta: f64, m: &mut f64, v: &mut f64, lr: f64, beta1: f64, beta2: f64, tau: f64) -> f64 {
    *m = beta1 * *m + (1.0 - beta1) * delta;
    *v = beta2 * *v + (1.0 - beta2) * delta * delta;
    x + lr * *m / (v.sqrt() + tau)
}

/// Server optimizer with per-parameter moment state for the adaptive rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerOptimizer {
    kind: ServerKind,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl ServerOptimizer {
    pub fn new(kind: ServerKind) -> Self {
        Self {
            kind,
            moments: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> ServerKind {
        self.kind
    }

    /// First and second moments of a parameter; `None` means all zeros.
    pub fn moments(&self, id: ParamId) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(&id).map(|(m, v)| (m, v))
    }

    /// Drops state of parameters that no longer exist.
    pub fn retain_live(&mut self, store: &ParamStore) {
        self.moments.retain(|id, _| store.get(*id).is_some());
    }

    /// Drops state of the given parameters (e.g. after re-initialization).
    pub fn reset(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.moments.remove(id);
        }
    }

    /// Applies the mean delta, laid out over `shipped` (ascending, tensor by
    /// tensor), to the `trainable` subset only.
    pub fn apply(
        &mut self,
        store: &mut ParamStore,
        shipped: &[ParamId],
        trainable: &[ParamId],
        mean: &[f64],
    ) -> Result<()> {
        let total = store.count(shipped);
        if total != mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "mean delta has {} values for {total} shipped scalars",
                mean.len()
            )));
        }
        let mut offset = 0;
        for &id in shipped {
            let n = store.param(id).numel();
            let delta = &mean[offset..offset + n];
            offset += n;
            if trainable.binary_search(&id).is_err() {
                continue;
            }
            match self.kind {
                ServerKind::Fedavg => {
                    for (x, d) in store.param_mut(id).data_mut().iter_mut().zip(delta) {
                        *x += d;
                    }
                }
                ServerKind::Fedadam { lr, beta1, beta2, tau } => {
                    let shape = store.param(id).shape().to_vec();
                    let (m, v) = self
                        .moments
                        .entry(id)
                        .or_insert_with(|| (Tensor::zeros(shape.clone()), Tensor::zeros(shape)));
                    let x = store.param_mut(id).data_mut();
                    for i in 0..n {
                        x[i] = fedadam_step(
                            x[i],
                            delta[i],
                            &mut m.data_mut()[i],
                            &mut v.data_mut()[i],
                            lr,
                            beta1,
                            beta2,
                            tau,
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_examples() {
        assert_eq!(aggregate(&[vec![2.0], vec![-4.0]]).unwrap(), vec![-1.0]);
        assert_eq!(aggregate(&[vec![0.5, 1.5]]).unwrap(), vec![0.5, 1.5]);
        let e = |i: usize| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>();
        assert_eq!(aggregate(&[e(0), e(1), e(2)]).unwrap(), vec![1.0 / 3.0; 3]);
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn fedadam_first_step() {
        let (mut m, mut v) = (0.0, 0.0);
        let x = fedadam_step(1.0, 0.5, &mut m, &mut v, 1.0, 0.0, 0.0, 1e-3);
        assert_eq!(x, 1.0 + 0.5 / (0.5 + 1e-3));
        let (mut m, mut v) = (0.0, 0.0);
        assert_eq!(fedadam_step(1.0, 0.0, &mut m, &mut v, 1.0, 0.9, 0.99, 1e-3), 1.0);
    }

    fn store() -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::default();
        let a = s.alloc(Tensor::full(vec![2], 1.0));
        let b = s.alloc(Tensor::full(vec![1], 5.0));
        (s, vec![a, b])
    }

    #[test]
    fn frozen_coordinates_untouched() {
        for kind in [ServerKind::Fedavg, ServerKind::fedadam()] {
            let (mut s, ids) = store();
            let mut opt = ServerOptimizer::new(kind);
            opt.apply(&mut s, &ids, &ids[1..], &[0.3, 0.3, 0.3]).unwrap();
            assert_eq!(s.param(ids[0]).data(), &[1.0, 1.0]);
            assert_ne!(s.param(ids[1]).data()[0], 5.0);
            assert!(opt.moments(ids[0]).is_none());
        }
    }

    #[test]
    fn fedavg_zero_delta_is_identity() {
        let (mut s, ids) = store();
        let before = s.clone();
        ServerOptimizer::new(ServerKind::Fedavg)
            .apply(&mut s, &ids, &ids, &[0.0; 3])
            .unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn length_mismatch_rejected() {
        let (mut s, ids) = store();
        assert!(ServerOptimizer::new(ServerKind::Fedavg)
            .apply(&mut s, &ids, &ids, &[0.0; 2])
            .is_err());
    }
}
