use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which angular grid a sinogram lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinogramRole {
    /// One row per micro-projection angle (`N_theta` rows).
    Micro,
    /// One row per acquired view (`M_theta` rows).
    View,
}

/// A `(num_angles x M_d)` array with the angles its rows belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub values: Array2<f64>,
    pub angles: Vec<f64>,
    pub role: SinogramRole,
}

impl Sinogram {
    pub fn new(values: Array2<f64>, angles: Vec<f64>, role: SinogramRole) -> Result<Self> {
        if values.nrows() != angles.len() {
            return Err(Error::shape(
                format!("{} rows (one per angle)", angles.len()),
                format!("{} rows", values.nrows()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("sinogram contains non-finite values".into()));
        }
        Ok(Self {
            values,
            angles,
            role,
        })
    }

    pub fn num_angles(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_detectors(&self) -> usize {
        self.values.ncols()
    }
}
