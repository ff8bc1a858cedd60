//! Mercer kernels, Gram matrices and finite kernel expansions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter used by direct (Cholesky) solves against a Gram matrix.
pub const DEFAULT_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(−‖x − x'‖² / (2·bandwidth²))`
    Gaussian { bandwidth: f64 },
    /// `(⟨x, x'⟩ + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    Linear,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                if !(bandwidth.is_finite() && bandwidth > 0.0) {
                    return Err(Error::invalid("bandwidth", format!("must be > 0, got {bandwidth}")));
                }
            }
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 {
                    return Err(Error::invalid("degree", "must be >= 1"));
                }
                if !(offset.is_finite() && offset >= 0.0) {
                    return Err(Error::invalid("offset", format!("must be >= 0, got {offset}")));
                }
            }
            KernelSpec::Linear => {}
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        if x.len() != x2.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: x2.len(),
            });
        }
        Ok(self.eval_unchecked(x, x2))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), x2.len());
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => {
                let dot: f64 = x.iter().zip(x2).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
            KernelSpec::Linear => x.iter().zip(x2).map(|(a, b)| a * b).sum(),
        }
    }
}

/// Free-function form of [`KernelSpec::eval`].
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    spec.eval(x, x2)
}

pub(crate) fn check_dims(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub jitter: f64,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    /// `G·v`, with the jitter already part of the entries.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(v);
        (&self.entries * v).as_slice().to_vec()
    }

    /// Entries with the jitter removed from the diagonal.
    pub fn without_jitter(&self) -> DMatrix<f64> {
        let mut m = self.entries.clone();
        if self.jitter != 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] -= self.jitter;
            }
        }
        m
    }
}

/// `K(x_i, x_j) + jitter·1{i = j}`. Rows are filled in parallel; every entry
/// is computed once, so the result does not depend on the thread count.
pub fn gram(spec: &KernelSpec, points: &[Vec<f64>], jitter: f64) -> Result<GramMatrix> {
    spec.validate()?;
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::invalid("jitter", format!("must be >= 0, got {jitter}")));
    }
    check_dims(points)?;
    let n = points.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| spec.eval_unchecked(&points[i], &points[j]))
                .collect()
        })
        .collect();
    let mut entries = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (offset, &k) in row.iter().enumerate() {
            let j = i + offset;
            entries[(i, j)] = k;
            entries[(j, i)] = k;
        }
        entries[(i, i)] += jitter;
    }
    Ok(GramMatrix { entries, jitter })
}

/// `f = Σ_i c_i K(center_i, ·)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub centers: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
    pub kernel: KernelSpec,
}

impl KernelExpansion {
    pub fn new(centers: Vec<Vec<f64>>, coeffs: Vec<f64>, kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        if centers.len() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: centers.len(),
                found: coeffs.len(),
            });
        }
        check_dims(&centers)?;
        Ok(KernelExpansion {
            centers,
            coeffs,
            kernel,
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.centers.first().map(Vec::len)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if let Some(d) = self.dim() {
            if d != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.coeffs)
            .map(|(c, &a)| a * self.kernel.eval_unchecked(c, x))
            .sum()
    }

    /// `cᵀGc` over the jitter-free Gram of the centers, clamped at zero.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let n = self.coeffs.len();
        let mut total = 0.0;
        for i in 0..n {
            let ci = self.coeffs[i];
            if ci == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..n {
                row += self.kernel.eval_unchecked(&self.centers[i], &self.centers[j]) * self.coeffs[j];
            }
            total += ci * row;
        }
        total.max(0.0)
    }

    /// Largest `√K(x, x)` over the centers.
    pub fn kappa(&self) -> f64 {
        self.centers
            .iter()
            .map(|c| self.kernel.eval_unchecked(c, c).max(0.0).sqrt())
            .fold(0.0, f64::max)
    }
}

pub fn expansion_eval(f: &KernelExpansion, x: &[f64]) -> Result<f64> {
    f.eval(x)
}

pub fn rkhs_norm_sq(f: &KernelExpansion) -> f64 {
    f.rkhs_norm_sq()
}
