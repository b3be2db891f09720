//! Planted-subspace data for tests, benchmarks, and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Classes drawn from mutually orthogonal random subspaces.
///
/// Sample `x = offset + scale * B_i c` with `B_i` an orthonormal
/// `ambient x sub_dim` basis and `c` uniform in `[-1, 1]^sub_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSubspaces {
    pub classes: usize,
    pub ambient: usize,
    pub sub_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub offset: f64,
    pub scale: f64,
    pub value_max: f64,
    /// Image shape attached to both splits; must multiply to `ambient`.
    pub image_shape: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for PlantedSubspaces {
    fn default() -> Self {
        PlantedSubspaces {
            classes: 5,
            ambient: 30,
            sub_dim: 5,
            train_per_class: 10,
            test_per_class: 20,
            offset: 0.0,
            scale: 100.0,
            value_max: 255.0,
            image_shape: None,
            seed: 0,
        }
    }
}

impl PlantedSubspaces {
    /// Returns `(train, test)`.
    pub fn generate(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        if self.classes == 0 || self.sub_dim == 0 || self.classes * self.sub_dim > self.ambient {
            return Err(Error::Validation(format!(
                "need 1 <= classes * sub_dim <= ambient, got {} * {} vs {}",
                self.classes, self.sub_dim, self.ambient
            )));
        }
        if self.train_per_class == 0 {
            return Err(Error::Validation("train_per_class must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let g = Matrix::from_fn(self.ambient, self.classes * self.sub_dim, |_, _| {
            rng.random_range(-1.0..1.0)
        });
        let basis = linalg::orthonormalize(&g)?;
        let draw = |per_class: usize, rng: &mut ChaCha8Rng| {
            let mut x = Matrix::zeros(self.ambient, self.classes * per_class);
            let mut labels = Vec::with_capacity(self.classes * per_class);
            for c in 0..self.classes {
                let b = basis.columns(c * self.sub_dim, self.sub_dim);
                for s in 0..per_class {
                    let coef = Vector::from_fn(self.sub_dim, |_, _| rng.random_range(-1.0..1.0));
                    let col = (b * coef * self.scale).add_scalar(self.offset);
                    x.set_column(c * per_class + s, &col);
                    labels.push(c + 1);
                }
            }
            (x, labels)
        };
        let (x_train, l_train) = draw(self.train_per_class, &mut rng);
        let (x_test, l_test) = draw(self.test_per_class, &mut rng);
        let train = LabeledDataset::new(x_train, l_train, self.image_shape, self.value_max)?;
        let test = if self.test_per_class == 0 {
            train.clone()
        } else {
            LabeledDataset::new(x_test, l_test, self.image_shape, self.value_max)?
        };
        Ok((train, test))
    }
}
