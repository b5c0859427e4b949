use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use super::nnls::nnls_gram;
use super::{FactorMethod, FactorModel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NmfConfig {
    /// Weight on `‖Φ‖²_F`.
    pub a: f64,
    /// Weight on `‖B‖²_F`.
    pub b: f64,
    pub max_iter: usize,
    /// Stop when the relative decrease of the objective falls below this.
    pub tol: f64,
    /// Seed for the random fallback initialization.
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self { a: 0.0, b: 0.0, max_iter: 500, tol: 1e-8, seed: 0 }
    }
}

fn objective(y: &DMatrix<f64>, phi: &DMatrix<f64>, coeffs: &DMatrix<f64>, a: f64, b: f64) -> f64 {
    (y - phi * coeffs).norm_squared() + a * phi.norm_squared() + b * coeffs.norm_squared()
}

/// Regularized NMF `min ‖Y − ΦB‖² + a‖Φ‖² + b‖B‖²` over `Φ, B ≥ 0` by
/// alternating nonnegative least squares. Every half step solves its
/// subproblem exactly; a half step that would raise the objective through
/// rounding is discarded, so the recorded objective never increases.
pub fn nmf_factorize(y: &DMatrix<f64>, q: usize, config: &NmfConfig) -> Result<FactorModel> {
    let (n_t, n_d) = y.shape();
    if q == 0 || q > n_d {
        return Err(Error::RankOutOfRange { q, max: n_d });
    }
    if !(config.a >= 0.0 && config.b >= 0.0) {
        return Err(Error::config("NMF weights must be nonnegative"));
    }
    for ((row, col), &value) in y.iter().enumerate().map(|(k, v)| ((k % n_t, k / n_t), v)) {
        if !value.is_finite() {
            return Err(Error::NonFinite("training outputs"));
        }
        if value < 0.0 {
            return Err(Error::NegativeEntry { row, col, value });
        }
    }

    let (mut phi, mut coeffs) = nndsvd(y, q, config.seed);
    let (a, b) = (config.a, config.b);
    let mut current = objective(y, &phi, &coeffs, a, b);
    let mut history = alloc::vec![current];
    let mut iterations = 0;

    while iterations < config.max_iter && current > 0.0 {
        iterations += 1;
        let previous = current;

        let gram = phi.tr_mul(&phi) + DMatrix::identity(q, q) * b;
        let mut next_b = DMatrix::zeros(q, n_d);
        for j in 0..n_d {
            let c = phi.tr_mul(&y.column(j));
            next_b.set_column(j, &nnls_gram(&gram, &c));
        }
        let candidate = objective(y, &phi, &next_b, a, b);
        if candidate <= current {
            coeffs = next_b;
            current = candidate;
        }

        let gram = &coeffs * coeffs.transpose() + DMatrix::identity(q, q) * a;
        let mut next_phi = DMatrix::zeros(n_t, q);
        for i in 0..n_t {
            let row: DVector<f64> = y.row(i).transpose();
            let c = &coeffs * row;
            next_phi.set_row(i, &nnls_gram(&gram, &c).transpose());
        }
        let candidate = objective(y, &next_phi, &coeffs, a, b);
        if candidate <= current {
            phi = next_phi;
            current = candidate;
        }

        history.push(current);
        if previous - current <= config.tol * previous {
            break;
        }
    }

    let reconstruction_error = (y - &phi * &coeffs).norm();
    Ok(FactorModel {
        basis: phi,
        coeffs,
        method: FactorMethod::Nmf,
        nmf_weights: Some((a, b)),
        singular_values: Vec::new(),
        objective_history: history,
        iterations,
        reconstruction_error,
    })
}

/// Nonnegative double SVD start. Components the SVD cannot supply (zero
/// after sign clipping, or beyond the numerical rank) are filled with
/// `|uniform|` noise from a seeded generator.
fn nndsvd(y: &DMatrix<f64>, q: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n_t, n_d) = y.shape();
    let mut phi = DMatrix::zeros(n_t, q);
    let mut coeffs = DMatrix::zeros(q, n_d);
    let svd = y.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => (DMatrix::zeros(n_t, 0), DMatrix::zeros(0, n_d)),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    for (k, &i) in order.iter().take(q).enumerate() {
        let s = svd.singular_values[i];
        let x: DVector<f64> = u.column(i).into_owned();
        let w: DVector<f64> = vt.row(i).transpose();
        let (xp, xn) = (x.map(|v| v.max(0.0)), x.map(|v| (-v).max(0.0)));
        let (wp, wn) = (w.map(|v| v.max(0.0)), w.map(|v| (-v).max(0.0)));
        let (mp, mn) = (xp.norm() * wp.norm(), xn.norm() * wn.norm());
        let (xs, ws, m) = if mp >= mn { (xp, wp, mp) } else { (xn, wn, mn) };
        if m <= 0.0 || !(s > 0.0) {
            continue;
        }
        let scale = (s * m).sqrt();
        let (x_norm, w_norm) = (xs.norm(), ws.norm());
        phi.set_column(k, &(xs / x_norm * scale));
        coeffs.set_row(k, &(ws.transpose() / w_norm * scale));
    }

    let mean = y.mean().max(0.0);
    let level = if mean > 0.0 { (mean / q as f64).sqrt() } else { 1.0 };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for k in 0..q {
        if phi.column(k).iter().all(|&v| v == 0.0) || coeffs.row(k).iter().all(|&v| v == 0.0) {
            for v in phi.column_mut(k).iter_mut() {
                *v = level * rng.random::<f64>();
            }
            for v in coeffs.row_mut(k).iter_mut() {
                *v = level * rng.random::<f64>();
            }
        }
    }
    (phi, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::{project_onto_basis, svd_factorize};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random_nonneg(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    #[test]
    fn exact_rank_one() {
        let phi = DVector::from_fn(10, |i, _| 1.0 + (i as f64).sqrt());
        let b = DVector::from_fn(6, |j, _| 0.5 + j as f64);
        let y = &phi * b.transpose();
        let m = nmf_factorize(&y, 1, &NmfConfig::default()).unwrap();
        assert!(m.reconstruction_error < 1e-8, "{}", m.reconstruction_error);
    }

    #[test]
    fn rejects_negative_entry() {
        let mut y = random_nonneg(4, 4, 0);
        y[(2, 1)] = -0.5;
        assert!(matches!(
            nmf_factorize(&y, 2, &NmfConfig::default()),
            Err(Error::NegativeEntry { row: 2, col: 1, .. })
        ));
        assert!(matches!(
            nmf_factorize(&random_nonneg(4, 3, 0), 4, &NmfConfig::default()),
            Err(Error::RankOutOfRange { .. })
        ));
    }

    #[test]
    fn projection_recovers_nonnegative_coefficients() {
        let y = random_nonneg(30, 12, 5);
        let m = nmf_factorize(&y, 4, &NmfConfig::default()).unwrap();
        let mut target = alloc::vec![0.0; 4];
        target[0] = 1.0;
        target[1] = 2.0;
        let col = &m.basis * DVector::from_vec(target.clone());
        let beta = project_onto_basis(&m, col.as_slice()).unwrap();
        for (b, t) in beta.iter().zip(&target) {
            assert!((b - t).abs() < 1e-6, "{beta:?}");
        }
    }

    #[test]
    fn regularization_shrinks_factors() {
        let y = random_nonneg(15, 10, 2);
        let plain = nmf_factorize(&y, 3, &NmfConfig::default()).unwrap();
        let reg = nmf_factorize(&y, 3, &NmfConfig { a: 5.0, b: 5.0, ..Default::default() }).unwrap();
        assert!(reg.basis.norm_squared() + reg.coeffs.norm_squared() < plain.basis.norm_squared() + plain.coeffs.norm_squared());
        assert_eq!(reg.nmf_weights, Some((5.0, 5.0)));
    }

    #[test]
    fn deterministic() {
        let y = random_nonneg(9, 7, 8);
        let c = NmfConfig { seed: 3, ..Default::default() };
        assert_eq!(nmf_factorize(&y, 3, &c).unwrap(), nmf_factorize(&y, 3, &c).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn nonnegative_and_monotone(seed in 0u64..10_000, rows in 2usize..20, cols in 2usize..15, q in 1usize..5) {
            let y = random_nonneg(rows, cols, seed);
            let q = q.min(cols);
            let m = nmf_factorize(&y, q, &NmfConfig { max_iter: 60, ..Default::default() }).unwrap();
            prop_assert!(m.basis.iter().chain(m.coeffs.iter()).all(|&v| v >= 0.0));
            prop_assert!(m.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            // SVD is the unconstrained optimum at the same rank
            let qs = q.min(rows);
            if qs == q {
                let svd = svd_factorize(&y, q).unwrap();
                prop_assert!(m.reconstruction_error >= svd.reconstruction_error - 1e-12);
            }
        }
    }
}
