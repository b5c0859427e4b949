//! Time bases for the data-driven emulator: `Y ≈ Φ B` with `Φ` of size
//! `n_T × q` and `B` of size `q × n_D`.

mod nmf;
mod nnls;

pub use nmf::{nmf_factorize, NmfConfig};
pub use nnls::{nnls, nnls_gram};

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::check_len;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FactorMethod {
    Svd,
    Nmf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub basis: DMatrix<f64>,
    pub coeffs: DMatrix<f64>,
    pub method: FactorMethod,
    /// `(a, b)` weights on `‖Φ‖²` and `‖B‖²` (NMF only).
    pub nmf_weights: Option<(f64, f64)>,
    /// All singular values of the training matrix, nonincreasing (SVD only).
    pub singular_values: Vec<f64>,
    /// Objective after initialization and after every outer iteration (NMF only).
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    /// `‖Y − ΦB‖_F` on the training matrix.
    pub reconstruction_error: f64,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n_times(&self) -> usize {
        self.basis.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.basis * &self.coeffs
    }

    /// Rebuilds a model from persisted parts; the fit diagnostics are left empty.
    pub fn from_parts(
        basis: DMatrix<f64>,
        coeffs: DMatrix<f64>,
        method: FactorMethod,
        nmf_weights: Option<(f64, f64)>,
    ) -> Result<Self> {
        check_len("coefficient rows", basis.ncols(), coeffs.nrows())?;
        if !basis.iter().chain(coeffs.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("factor model"));
        }
        Ok(Self {
            basis,
            coeffs,
            method,
            nmf_weights,
            singular_values: Vec::new(),
            objective_history: Vec::new(),
            iterations: 0,
            reconstruction_error: f64::NAN,
        })
    }
}

fn check_rank(q: usize, y: &DMatrix<f64>) -> Result<()> {
    let max = y.nrows().min(y.ncols());
    if q == 0 || q > max {
        return Err(Error::RankOutOfRange { q, max });
    }
    Ok(())
}

/// Truncated SVD: `Φ` holds the leading `q` left singular vectors and
/// `B = Σ_q W_qᵀ`. Each basis vector is signed so that its largest-magnitude
/// entry is positive.
pub fn svd_factorize(y: &DMatrix<f64>, q: usize) -> Result<FactorModel> {
    check_rank(q, y)?;
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("training outputs"));
    }
    let svd = y.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return Vᵀ".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let mut basis = DMatrix::zeros(y.nrows(), q);
    let mut coeffs = DMatrix::zeros(q, y.ncols());
    for (k, &i) in order.iter().take(q).enumerate() {
        let col = u.column(i);
        let pivot = col.iter().cloned().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        basis.set_column(k, &(col * sign));
        coeffs.set_row(k, &(vt.row(i) * (sign * svd.singular_values[i])));
    }
    let reconstruction_error = singular_values[q..].iter().fold(0.0, |acc, s| acc + s * s).sqrt();
    Ok(FactorModel {
        basis,
        coeffs,
        method: FactorMethod::Svd,
        nmf_weights: None,
        singular_values,
        objective_history: Vec::new(),
        iterations: 0,
        reconstruction_error,
    })
}

/// Coefficients of a new column in the basis: `Φᵀy` for SVD, nonnegative
/// least squares for NMF.
pub fn project_onto_basis(model: &FactorModel, y_new: &[f64]) -> Result<Vec<f64>> {
    check_len("projected column", model.n_times(), y_new.len())?;
    crate::error::check_finite("projected column", y_new)?;
    let y = DVector::from_column_slice(y_new);
    let beta = match model.method {
        FactorMethod::Svd => model.basis.tr_mul(&y),
        FactorMethod::Nmf => nnls(&model.basis, &y),
    };
    Ok(beta.as_slice().to_vec())
}
