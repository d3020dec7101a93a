use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Task};
use crate::error::{Error, Result};
use crate::nn::{Target, Tensor};
use crate::rng::{self, domain};

/// Gaussian clusters: one standard-normal center per class, samples drawn
/// around it with standard deviation `spread`. Samples are grouped by class.
pub fn gen_blobs(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidArgument("blob counts must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread {spread} must be finite and non-negative"
        )));
    }
    let mut centers_rng = rng::stream(seed, domain::DATA, 0);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| centers_rng.sample(StandardNormal)).collect())
        .collect();
    let mut rng = rng::stream(seed, domain::DATA, 1);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(mu + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![classes * per_class, dim], data)?,
        Target::Classes(labels),
        Task::Classification { classes },
    )
}

const NOISE: f64 = 0.3;

/// 1-D signals of shape `(1, length)`: Gaussian noise plus one to three
/// rectangular pulses of width `2..=length/8` and height in `[1, 2)`. The
/// mask marks the union of the pulse supports, so it is never empty and
/// covers less than half of the signal.
pub fn gen_seg1d(length: usize, samples: usize, seed: u64) -> Result<Dataset> {
    if length < 16 {
        return Err(Error::InvalidArgument(format!("signal length {length} below 16")));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mut rng = rng::stream(seed, domain::DATA, 2);
    let max_width = length / 8;
    let mut inputs = Vec::with_capacity(samples * length);
    let mut masks = Vec::with_capacity(samples * length);
    for _ in 0..samples {
        let mut signal: Vec<f64> = (0..length)
            .map(|_| NOISE * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut mask = vec![0.0; length];
        for _ in 0..rng.random_range(1..=3) {
            let width = rng.random_range(2..=max_width);
            let start = rng.random_range(0..=length - width);
            let height = rng.random_range(1.0..2.0);
            for i in start..start + width {
                if mask[i] == 0.0 {
                    signal[i] += height;
                    mask[i] = 1.0;
                }
            }
        }
        inputs.extend(signal);
        masks.extend(mask);
    }
    Dataset::new(
        Tensor::new(vec![samples, 1, length], inputs)?,
        Target::Masks(Tensor::new(vec![samples, 1, length], masks)?),
        Task::Segmentation1d,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_labels() {
        let ds = gen_blobs(1, 3, 5, 1.0, 0).unwrap();
        assert_eq!(ds.labels(), vec![0; 5]);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_blobs(3, 4, 7, 0.5, 9).unwrap(), gen_blobs(3, 4, 7, 0.5, 9).unwrap());
        assert_ne!(
            gen_blobs(3, 4, 7, 0.5, 9).unwrap(),
            gen_blobs(3, 4, 7, 0.5, 10).unwrap()
        );
        assert_eq!(gen_seg1d(32, 5, 2).unwrap(), gen_seg1d(32, 5, 2).unwrap());
    }

    #[test]
    fn mask_fraction_bounds() {
        let ds = gen_seg1d(64, 200, 3).unwrap();
        let Target::Masks(m) = ds.targets() else { unreachable!() };
        for row in m.data().chunks(64) {
            let frac = row.iter().sum::<f64>() / 64.0;
            assert!(frac > 0.0 && frac < 0.5, "{frac}");
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn short_signal_rejected() {
        assert!(gen_seg1d(15, 1, 0).is_err());
    }
}
