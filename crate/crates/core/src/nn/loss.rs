use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive smoothing in the soft-Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy on `(batch, k)` logits with class targets.
    CrossEntropy,
    /// `1 - dice(sigmoid(logits), mask)`, averaged over samples.
    SoftDice,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Classes(Vec<usize>),
    /// Binary masks shaped like the logits.
    Masks(Tensor),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Classes(c) => c.len(),
            Target::Masks(m) => m.batch(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::Classes(c) => Target::Classes(rows.iter().map(|&r| c[r]).collect()),
            Target::Masks(m) => Target::Masks(m.select_rows(rows)),
        }
    }
}

/// Mean loss over the batch and its gradient with respect to the logits.
pub fn loss_and_grad(kind: LossKind, logits: &Tensor, target: &Target) -> Result<(f64, Tensor)> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Classes(classes)) => cross_entropy(logits, classes),
        (LossKind::SoftDice, Target::Masks(masks)) => soft_dice(logits, masks),
        _ => Err(Error::InvalidTarget(format!(
            "{kind:?} does not accept this target kind"
        ))),
    }
}

fn cross_entropy(logits: &Tensor, classes: &[usize]) -> Result<(f64, Tensor)> {
    let [b, k] = *logits.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "cross-entropy expects (batch, k) logits, got {:?}",
            logits.shape()
        )));
    };
    if classes.len() != b {
        return Err(Error::InvalidTarget(format!(
            "{} targets for a batch of {b}",
            classes.len()
        )));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidTarget(format!("class index {bad} outside [0, {k})")));
    }
    let mut grad = vec![0.0; b * k];
    let mut total = 0.0;
    for (n, &c) in classes.iter().enumerate() {
        let row = &logits.data()[n * k..(n + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[c];
        let g = &mut grad[n * k..(n + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (row[j] - log_z).exp() / b as f64;
        }
        g[c] -= 1.0 / b as f64;
    }
    Ok((total / b as f64, Tensor::new(vec![b, k], grad)?))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn soft_dice(logits: &Tensor, masks: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != masks.shape() {
        return Err(Error::InvalidTarget(format!(
            "mask shape {:?} does not match logits {:?}",
            masks.shape(),
            logits.shape()
        )));
    }
    if masks.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::InvalidTarget("masks must be binary".into()));
    }
    let b = logits.batch();
    let per = logits.numel() / b;
    let mut grad = vec![0.0; logits.numel()];
    let mut total = 0.0;
    for n in 0..b {
        let z = &logits.data()[n * per..(n + 1) * per];
        let m = &masks.data()[n * per..(n + 1) * per];
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let inter: f64 = p.iter().zip(m).map(|(a, b)| a * b).sum();
        let union: f64 = p.iter().sum::<f64>() + m.iter().sum::<f64>();
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = union + DICE_SMOOTH;
        total += 1.0 - num / den;
        let g = &mut grad[n * per..(n + 1) * per];
        for i in 0..per {
            // d(1 - num/den)/dp_i, chained through the sigmoid.
            let dp = -(2.0 * m[i] * den - num) / (den * den);
            g[i] = dp * p[i] * (1.0 - p[i]) / b as f64;
        }
    }
    Ok((total / b as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Dice score `2|A∩B| / (|A| + |B|)` of thresholded predictions, averaged
/// over samples. A sample where both sets are empty scores 1.
pub fn dice_score(logits: &Tensor, masks: &Tensor) -> f64 {
    let b = logits.batch();
    let per = logits.numel() / b;
    let mut total = 0.0;
    for n in 0..b {
        let z = &logits.data()[n * per..(n + 1) * per];
        let m = &masks.data()[n * per..(n + 1) * per];
        let (mut inter, mut a, mut c) = (0usize, 0usize, 0usize);
        for (&zi, &mi) in z.iter().zip(m) {
            let pred = zi > 0.0;
            let truth = mi > 0.5;
            inter += usize::from(pred && truth);
            a += usize::from(pred);
            c += usize::from(truth);
        }
        total += if a + c == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (a + c) as f64
        };
    }
    total / b as f64
}

/// Fraction of rows whose arg-max logit equals the target class.
pub fn accuracy(logits: &Tensor, classes: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let hits = classes
        .iter()
        .enumerate()
        .filter(|&(n, &c)| {
            let row = &logits.data()[n * k..(n + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == c
        })
        .count();
    hits as f64 / classes.len() as f64
}
