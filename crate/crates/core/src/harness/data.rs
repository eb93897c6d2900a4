use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{derive_seed, random_unit_vector, rng_from_seed, Matrix};

/// Share of each class that goes to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of the noise added to a class center
    /// before projecting back to the sphere. Smaller means a larger margin.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            samples_per_class: 50,
            dim: 16,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Labeled points on the unit sphere, split per class into train and test.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train_x.cols()
    }
}

pub fn make_dataset(
    classes: usize,
    samples_per_class: usize,
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    make_dataset_with(&DatasetConfig {
        classes,
        samples_per_class,
        dim,
        seed,
        ..DatasetConfig::default()
    })
}

/// Gaussian blobs around random unit centers, normalized onto the sphere.
/// The first 80% of every class (rounded down) is training data.
pub fn make_dataset_with(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.classes < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 classes, got {}",
            cfg.classes
        )));
    }
    if cfg.dim < 2 || cfg.samples_per_class < 2 {
        return Err(Error::invalid(
            "need dim >= 2 and at least 2 samples per class",
        ));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::invalid("noise must be finite and non-negative"));
    }
    let n_train = ((cfg.samples_per_class as f64 * TRAIN_FRACTION).floor() as usize)
        .clamp(1, cfg.samples_per_class - 1);
    let mut centers_rng = rng_from_seed(derive_seed(cfg.seed, 0xDA7A, 0));
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| random_unit_vector(&mut centers_rng, cfg.dim))
        .collect();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0xDA7A, 1));
    let (mut train, mut train_y, mut test, mut test_y) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (c, center) in centers.iter().enumerate() {
        for i in 0..cfg.samples_per_class {
            let point = loop {
                let v: Vec<f64> = center
                    .iter()
                    .map(|m| m + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
                }
            };
            if i < n_train {
                train.push(point);
                train_y.push(c);
            } else {
                test.push(point);
                test_y.push(c);
            }
        }
    }
    Ok(Dataset {
        train_x: Matrix::from_rows(&train)?,
        train_y,
        test_x: Matrix::from_rows(&test)?,
        test_y,
        classes: cfg.classes,
    })
}

/// One-hot rows for `labels`.
pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    Matrix::from_fn(labels.len(), classes, |i, c| {
        if labels[i] == c {
            1.0
        } else {
            0.0
        }
    })
}

/// Index of the largest entry of each row (ties go to the lowest index).
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    scores
        .row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Fraction of mismatched labels.
pub fn error_rate(pred: &[usize], truth: &[usize]) -> f64 {
    let wrong = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    wrong as f64 / truth.len() as f64
}

/// Test error of a least-squares linear classifier (with bias) fit to one-hot
/// targets on the training split.
pub fn least_squares_test_error(data: &Dataset) -> Result<f64> {
    use nalgebra::DMatrix;
    let augment = |x: &Matrix| {
        DMatrix::from_fn(x.rows(), x.cols() + 1, |i, j| {
            if j < x.cols() {
                x.get(i, j)
            } else {
                1.0
            }
        })
    };
    let x = augment(&data.train_x);
    let y = one_hot(&data.train_y, data.classes);
    let y = DMatrix::from_row_slice(y.rows(), y.cols(), y.data());
    let w = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
    let scores = augment(&data.test_x) * w;
    let scores = Matrix::from_fn(scores.nrows(), scores.ncols(), |i, j| scores[(i, j)]);
    Ok(error_rate(&argmax_rows(&scores), &data.test_y))
}
