//! Scalar reproducing kernels and Gram matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::ensure_finite;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Gaussian,
}

/// A scalar kernel `k(x, x′)`.
///
/// Gaussian: `exp(−‖x − x′‖² / (2·bandwidth²))`. The bandwidth is ignored
/// for the linear kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
}

fn default_bandwidth() -> f64 {
    1.0
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::linear()
    }
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            bandwidth: default_bandwidth(),
        }
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = Self {
            kind: KernelKind::Gaussian,
            bandwidth,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Gaussian && !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(invalid(format!(
                "gaussian bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// `K[i, j] = k(x_i, z_j)` for the rows of `x` and `z`.
pub fn kernel_matrix<T: Real>(x: &DMatrix<T>, z: &DMatrix<T>, spec: &KernelSpec) -> Result<DMatrix<T>> {
    spec.validate()?;
    if x.ncols() != z.ncols() {
        return Err(invalid(format!(
            "kernel inputs have {} and {} features",
            x.ncols(),
            z.ncols()
        )));
    }
    ensure_finite(x, "kernel input")?;
    ensure_finite(z, "kernel input")?;
    let d = x.ncols();
    // Row-major copies keep the inner loops contiguous.
    let xr: Vec<T> = x.transpose().as_slice().to_vec();
    let zr: Vec<T> = z.transpose().as_slice().to_vec();
    fn row<T>(data: &[T], d: usize, i: usize) -> &[T] {
        &data[i * d..(i + 1) * d]
    }

    let out = match spec.kind {
        KernelKind::Linear => DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| {
            let (a, b) = (row(&xr, d, i), row(&zr, d, j));
            a.iter().zip(b).fold(T::zero(), |acc, (&p, &q)| acc + p * q)
        }),
        KernelKind::Gaussian => {
            let scale = T::lit(-0.5 / (spec.bandwidth * spec.bandwidth));
            DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| {
                let (a, b) = (row(&xr, d, i), row(&zr, d, j));
                let dist = a.iter().zip(b).fold(T::zero(), |acc, (&p, &q)| {
                    let diff = p - q;
                    acc + diff * diff
                });
                (dist * scale).exp()
            })
        }
    };
    Ok(out)
}

/// Empirical kernel matrix `K = kernel_matrix(x, x)`.
pub fn gram_matrix<T: Real>(x: &DMatrix<T>, spec: &KernelSpec) -> Result<DMatrix<T>> {
    kernel_matrix(x, x, spec)
}
