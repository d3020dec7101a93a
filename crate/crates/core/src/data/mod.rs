//! Datasets, synthetic generators, client partitioners and CSV ingestion.

mod io;
mod partition;
mod synth;

pub use io::{load_csv, save_csv};
pub use partition::{partition, PartitionKind};
pub use synth::{gen_blobs, gen_seg1d};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{Target, Tensor};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification {
        classes: usize,
    },
    /// Binary masks with the same shape as the inputs.
    Segmentation1d,
}

/// Inputs `(n, ...)` aligned with one target per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    targets: Target,
    task: Task,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Target, task: Task) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "inputs need a batch axis, got {:?}",
                inputs.shape()
            )));
        }
        if targets.len() != inputs.batch() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs but {} targets",
                inputs.batch(),
                targets.len()
            )));
        }
        match (&targets, task) {
            (Target::Classes(c), Task::Classification { classes }) => {
                if let Some(bad) = c.iter().find(|&&y| y >= classes) {
                    return Err(Error::InvalidTarget(format!("label {bad} with {classes} classes")));
                }
            }
            (Target::Masks(m), Task::Segmentation1d) => {
                if m.shape() != inputs.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "masks {:?} do not match inputs {:?}",
                        m.shape(),
                        inputs.shape()
                    )));
                }
            }
            _ => return Err(Error::InvalidTarget("target kind does not match the task".into())),
        }
        Ok(Self { inputs, targets, task })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Target {
        &self.targets
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.inputs.sample_shape()
    }

    /// Class index of every sample; segmentation samples all report 0.
    pub fn labels(&self) -> Vec<usize> {
        match &self.targets {
            Target::Classes(c) => c.clone(),
            Target::Masks(_) => vec![0; self.len()],
        }
    }

    /// Rows `rows` as a batch.
    pub fn batch(&self, rows: &[usize]) -> (Tensor, Target) {
        (self.inputs.select_rows(rows), self.targets.select(rows))
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let (inputs, targets) = self.batch(rows);
        Dataset {
            inputs,
            targets,
            task: self.task,
        }
    }

    /// Seeded shuffle into `(train, test)` with `round(n·test_fraction)` test
    /// samples, at least one on each side.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction {test_fraction} outside (0, 1)"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument("need at least two samples to split".into()));
        }
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, domain::SPLIT, 0));
        let (test, train) = order.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}
