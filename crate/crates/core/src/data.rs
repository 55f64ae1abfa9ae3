//! Labeled datasets and the synthetic generators used by the experiments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::{Error, Result, RngStream, Tensor};

/// Feature rows with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("features must be a [n, d] matrix"));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::domain(format!(
                "label {bad} >= {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Features and labels of the listed rows.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.features.select_rows(indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// Row indices split into consecutive batches of `batch_size`, shuffled
    /// first when `rng` is given. A trailing batch with fewer than two rows
    /// is dropped because batch norm cannot train on it.
    pub fn batch_indices(&self, batch_size: usize, rng: Option<&mut RngStream>) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(rng) = rng {
            rng.shuffle(&mut order);
        }
        order
            .chunks(batch_size.max(1))
            .filter(|c| c.len() >= 2)
            .map(|c| c.to_vec())
            .collect()
    }
}

/// A train split and a disjoint test split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    /// Isotropic Gaussian clusters around random unit-scale centers.
    GaussianBlobs,
    /// Rings of radius `k + 1` in the first two coordinates.
    ConcentricRings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub generator: Generator,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            generator: Generator::GaussianBlobs,
            num_classes: 4,
            samples_per_class: 250,
            input_dim: 16,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

/// Generates a balanced dataset and splits it per class, one fifth (at
/// least one sample) to test. Features are standardized with the train
/// split's per-dimension mean and population standard deviation.
pub fn make_dataset(spec: &SyntheticDatasetSpec) -> Result<LabeledSplit> {
    if spec.samples_per_class < 2 {
        return Err(Error::domain("samples_per_class must be at least 2"));
    }
    if spec.num_classes < 2 {
        return Err(Error::domain("need at least two classes"));
    }
    if spec.input_dim == 0 {
        return Err(Error::domain("input_dim must be positive"));
    }
    if spec.generator == Generator::ConcentricRings && spec.input_dim < 2 {
        return Err(Error::domain("rings need input_dim >= 2"));
    }
    if !(spec.noise_scale >= 0.0 && spec.noise_scale.is_finite()) {
        return Err(Error::domain("noise_scale must be finite and non-negative"));
    }
    let rng = RngStream::new(spec.seed, 0);
    let mut center_rng = rng.substream(0);
    let mut sample_rng = rng.substream(1);
    let d = spec.input_dim;
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..d).map(|_| center_rng.standard_normal()).collect())
        .collect();

    let n_test = (spec.samples_per_class / 5).max(1);
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut test_x = Vec::new();
    let mut test_y = Vec::new();
    let mut point = vec![0.0; d];
    for (class, center) in centers.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            match spec.generator {
                Generator::GaussianBlobs => {
                    for (p, c) in point.iter_mut().zip(center) {
                        *p = c + spec.noise_scale * sample_rng.standard_normal();
                    }
                }
                Generator::ConcentricRings => {
                    let angle = sample_rng.uniform_in(0.0, core::f64::consts::TAU);
                    let radius = (class + 1) as f64;
                    for p in point.iter_mut() {
                        *p = spec.noise_scale * sample_rng.standard_normal();
                    }
                    point[0] += radius * libm::cos(angle);
                    point[1] += radius * libm::sin(angle);
                }
            }
            if i < n_test {
                test_x.extend_from_slice(&point);
                test_y.push(class);
            } else {
                train_x.extend_from_slice(&point);
                train_y.push(class);
            }
        }
    }

    let n_train = train_y.len();
    let mut mean = vec![0.0; d];
    for row in train_x.chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n_train as f64);
    let mut var = vec![0.0; d];
    for row in train_x.chunks_exact(d) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = sqrt(v / n_train as f64);
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    for buf in [&mut train_x, &mut test_x] {
        for row in buf.chunks_exact_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&scale) {
                *x = (*x - m) * s;
            }
        }
    }

    let mut order: Vec<usize> = (0..n_train).collect();
    rng.substream(2).shuffle(&mut order);
    let train = Dataset::new(
        Tensor::new(vec![n_train, d], train_x)?,
        train_y,
        spec.num_classes,
    )?;
    let (tx, ty) = train.gather(&order);
    Ok(LabeledSplit {
        train: Dataset::new(tx, ty, spec.num_classes)?,
        test: Dataset::new(
            Tensor::new(vec![test_y.len(), d], test_x)?,
            test_y,
            spec.num_classes,
        )?,
    })
}
