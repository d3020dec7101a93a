use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Client-side SGD hyperparameters. Momentum and weight decay default to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

/// Proximal pull toward an anchor: adds `mu * (p - anchor)` to the gradient.
#[derive(Debug, Clone, Copy)]
pub struct Prox<'a> {
    pub mu: f64,
    pub anchor: &'a Tensor,
}

/// One in-place SGD update of `param`.
///
/// The effective gradient is `g + weight_decay·p + mu·(p − anchor)`; with
/// momentum `m` the velocity becomes `v ← m·v + g_eff` and `p ← p − lr·v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    opt: &Sgd,
    velocity: Option<&mut Tensor>,
    prox: Option<Prox<'_>>,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::ShapeMismatch(format!(
            "parameter {:?} vs gradient {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    if opt.lr < 0.0 || !opt.lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate {}", opt.lr)));
    }
    let prox = match prox {
        Some(p) if p.mu < 0.0 => {
            return Err(Error::InvalidArgument(format!("proximal mu {}", p.mu)));
        }
        Some(p) if p.anchor.shape() != param.shape() => {
            return Err(Error::ShapeMismatch(format!(
                "anchor {:?} vs parameter {:?}",
                p.anchor.shape(),
                param.shape()
            )));
        }
        // mu = 0 leaves the gradient untouched bit for bit.
        Some(p) if p.mu == 0.0 => None,
        other => other,
    };
    let mut velocity = velocity;
    if let Some(v) = velocity.as_deref() {
        if v.shape() != param.shape() {
            return Err(Error::ShapeMismatch("velocity shape".into()));
        }
    }
    for i in 0..param.numel() {
        let p = param.data()[i];
        let mut g = grad.data()[i];
        if opt.weight_decay != 0.0 {
            g += opt.weight_decay * p;
        }
        if let Some(px) = prox {
            g += px.mu * (p - px.anchor.data()[i]);
        }
        if opt.momentum != 0.0 {
            if let Some(v) = velocity.as_deref_mut() {
                let vi = &mut v.data_mut()[i];
                *vi = opt.momentum * *vi + g;
                g = *vi;
            }
        }
        param.data_mut()[i] = p - opt.lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn plain_step() {
        let mut p = scalar(1.0);
        sgd_step(&mut p, &scalar(0.5), &Sgd::new(0.1), None, None).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_mu_matches_no_prox() {
        let anchor = scalar(123.0);
        let mut a = scalar(0.3);
        let mut b = scalar(0.3);
        sgd_step(&mut a, &scalar(-0.7), &Sgd::new(0.01), None, None).unwrap();
        sgd_step(
            &mut b,
            &scalar(-0.7),
            &Sgd::new(0.01),
            None,
            Some(Prox {
                mu: 0.0,
                anchor: &anchor,
            }),
        )
        .unwrap();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }

    #[test]
    fn prox_pulls_toward_anchor() {
        let anchor = scalar(0.0);
        let mut p = scalar(1.0);
        sgd_step(
            &mut p,
            &scalar(0.0),
            &Sgd::new(0.1),
            None,
            Some(Prox {
                mu: 2.0,
                anchor: &anchor,
            }),
        )
        .unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = Tensor::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap();
        let before = p.clone();
        let g = Tensor::new(vec![3], vec![9.0, -9.0, 3.0]).unwrap();
        sgd_step(&mut p, &g, &Sgd::new(0.0), None, None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = scalar(0.0);
        let mut v = scalar(0.0);
        let opt = Sgd {
            lr: 1.0,
            momentum: 0.5,
            weight_decay: 0.0,
        };
        sgd_step(&mut p, &scalar(1.0), &opt, Some(&mut v), None).unwrap();
        sgd_step(&mut p, &scalar(1.0), &opt, Some(&mut v), None).unwrap();
        assert_eq!(p.data()[0], -2.5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(vec![2]);
        assert!(sgd_step(&mut p, &Tensor::zeros(vec![3]), &Sgd::new(0.1), None, None).is_err());
        let anchor = Tensor::zeros(vec![3]);
        assert!(sgd_step(
            &mut p,
            &Tensor::zeros(vec![2]),
            &Sgd::new(0.1),
            None,
            Some(Prox {
                mu: 1.0,
                anchor: &anchor
            })
        )
        .is_err());
    }
}
