use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Solves `min ½ xᵀ G x − cᵀ x` subject to `x ≥ 0` for symmetric positive
/// semidefinite `G` (Lawson–Hanson active set on the normal equations).
///
/// With `G = AᵀA + λI` and `c = Aᵀb` this is ridge-regularized nonnegative
/// least squares.
pub fn nnls_gram(g: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let n = c.len();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = g.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(c.amax()).max(f64::MIN_POSITIVE);
    let tol = 1e3 * f64::EPSILON * scale * n as f64;
    let mut passive = alloc::vec![false; n];
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = c - g * &x;
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        let mut inner = 0;
        loop {
            inner += 1;
            let z = solve_passive(g, c, &passive);
            let feasible = (0..n).all(|i| !passive[i] || z[i] > 0.0);
            if feasible || inner > 3 * n {
                x = z.map(|v| v.max(0.0));
                break;
            }
            // step towards z until the first passive variable hits zero
            let mut alpha = 1.0f64;
            let mut blocking = Vec::new();
            for i in 0..n {
                if passive[i] && z[i] <= 0.0 {
                    let ratio = x[i] / (x[i] - z[i]);
                    if ratio < alpha {
                        alpha = ratio;
                        blocking.clear();
                    }
                    if ratio <= alpha {
                        blocking.push(i);
                    }
                }
            }
            for i in 0..n {
                x[i] += alpha * (z[i] - x[i]);
            }
            for i in blocking {
                x[i] = 0.0;
                passive[i] = false;
            }
            for i in 0..n {
                if passive[i] && x[i] <= 0.0 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

fn solve_passive(g: &DMatrix<f64>, c: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let m = idx.len();
    let gp = DMatrix::from_fn(m, m, |a, b| g[(idx[a], idx[b])]);
    let cp = DVector::from_fn(m, |a, _| c[idx[a]]);
    let zp = match gp.clone().cholesky() {
        Some(ch) => ch.solve(&cp),
        None => {
            let svd = gp.svd(true, true);
            let tol = svd.singular_values.max() * f64::EPSILON * m as f64;
            svd.solve(&cp, tol).unwrap_or_else(|_| DVector::zeros(m))
        }
    };
    let mut z = DVector::zeros(passive.len());
    for (a, &i) in idx.iter().enumerate() {
        z[i] = zp[a];
    }
    z
}

/// `min ‖A x − b‖²` subject to `x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    nnls_gram(&a.tr_mul(a), &a.tr_mul(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_nonnegative_solution() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.2, 0.0, 0.3, 1.0, 0.1, 0.0, 0.4, 1.0, 0.5, 0.5, 0.5]);
        let truth = DVector::from_vec(alloc::vec![1.0, 2.0, 0.0]);
        let x = nnls(&a, &(&a * &truth));
        assert!((x - truth).amax() < 1e-12);
    }

    #[test]
    fn clamps_negative_unconstrained_solution() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DVector::from_vec(alloc::vec![-1.0, 3.0]);
        let x = nnls(&a, &b);
        assert_eq!(x.as_slice(), &[0.0, 3.0]);
    }

    proptest! {
        #[test]
        fn satisfies_kkt(vals in proptest::collection::vec(-1.0f64..1.0, 30), rhs in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let a = DMatrix::from_vec(6, 5, vals[..30].to_vec());
            let b = DVector::from_vec(rhs);
            let x = nnls(&a, &b);
            let grad = a.tr_mul(&(&a * &x - &b));
            for i in 0..5 {
                prop_assert!(x[i] >= 0.0);
                // stationarity on the passive set, dual feasibility on the active set
                if x[i] > 1e-10 {
                    prop_assert!(grad[i].abs() < 1e-8, "grad {} at passive {}", grad[i], i);
                } else {
                    prop_assert!(grad[i] > -1e-8, "grad {} at active {}", grad[i], i);
                }
            }
        }
    }
}
