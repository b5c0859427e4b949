//! Dense linear-algebra helpers that nalgebra does not provide in `no_std`:
//! the matrix exponential, Cholesky with jitter escalation, and Gaussian
//! quadrature rules.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

const PADE_THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539_398_330_063_23e-1,
    9.504178996162932e-1,
    2.097847961257068,
    5.371920351148152,
];

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant
/// (degree 3 to 13, chosen from the 1-norm of the argument).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    crate::error::check_len("expm (square matrix)", n, a.ncols())?;
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential argument"));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ident = DMatrix::<f64>::identity(n, n);
    let norm = one_norm(a);

    let low_order: [&[f64]; 4] = [&PADE3, &PADE5, &PADE7, &PADE9];
    for (theta, coeffs) in PADE_THETA.iter().zip(low_order) {
        if norm <= *theta {
            return pade_low(a, coeffs, &ident);
        }
    }

    let squarings = if norm > PADE_THETA[4] {
        (norm / PADE_THETA[4]).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-squarings);
    let mut result = pade13(&scaled, &ident)?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64], ident: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a2 = a * a;
    let mut power = ident.clone();
    let mut u_even = ident * b[1];
    let mut v = ident * b[0];
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        u_even += &power * b[2 * k + 1];
        v += &power * b[2 * k];
    }
    let u = a * u_even;
    solve_pade(&u, &v)
}

fn pade13(a: &DMatrix<f64>, ident: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = &PADE13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + ident * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + ident * b[0];
    solve_pade(&u, &v)
}

fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular Padé denominator in expm".into()))
}

/// `(e^x − 1)/x`, with a series near the removable singularity at 0.
pub fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 + x * (0.5 + x / 6.0)
    } else {
        libm::expm1(x) / x
    }
}

/// A Cholesky factor of `K + jitter·I` together with the jitter that was
/// needed to make the factorization succeed.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ b`, used for posterior variances.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = self.factor.l_dirty();
        let n = b.len();
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= l[(i, j)] * x[j];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

/// Factorizes `K + κ·I`, multiplying κ by ten on failure until it exceeds
/// `1e-4 · mean(diag K)`.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, kappa: f64) -> Result<JitteredCholesky> {
    let n = k.nrows();
    crate::error::check_len("Gram matrix (square)", n, k.ncols())?;
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("Gram matrix"));
    }
    let start = kappa.max(f64::EPSILON);
    let mean_diag = if n == 0 { 0.0 } else { k.diagonal().sum() / n as f64 };
    let cap = (1e-4 * mean_diag).max(start);
    let mut jitter = start;
    loop {
        let mut shifted = k.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(factor) = Cholesky::new(shifted) {
            if factor.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok(JitteredCholesky { factor, jitter });
            }
        }
        if jitter >= cap {
            return Err(Error::Factorization {
                jitter,
                condition: condition_estimate(k),
            });
        }
        jitter = (jitter * 10.0).min(cap);
    }
}

fn condition_estimate(k: &DMatrix<f64>) -> f64 {
    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least squares `min ‖A x − b‖` via SVD; rank-deficient directions get zero.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.iter().cloned().fold(0.0, f64::max)
        * f64::EPSILON
        * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, tol)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// A Gauss rule on a reference interval: nodes and weights.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule on `[-1, 1]` (Newton iteration on the Legendre recurrence).
pub fn gauss_legendre(n: usize) -> QuadratureRule {
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    let pi = core::f64::consts::PI;
    for i in 0..n.div_ceil(2) {
        let mut x = (pi * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    QuadratureRule { nodes, weights }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Hermite rule for the weight `exp(-x²)` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> QuadratureRule {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = off;
        jacobi[(k - 1, k)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let sqrt_pi = core::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], sqrt_pi * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Adaptive Gauss–Legendre integration of `f` over `[a, b]`: a panel is
/// accepted when the 10-point rule on it agrees with the sum over its halves
/// to `rtol` (relative to the running estimate) or `atol`.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rtol: f64,
    atol: f64,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rule = gauss_legendre(10);
    let panel = |f: &mut F, lo: f64, hi: f64| -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    };
    let whole = panel(&mut f, a, b);
    let mut stack: Vec<(f64, f64, f64, u32)> = alloc::vec![(a, b, whole, 0)];
    let mut total = 0.0;
    while let Some((lo, hi, estimate, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = panel(&mut f, lo, mid);
        let right = panel(&mut f, mid, hi);
        let refined = left + right;
        let scale = refined.abs().max(whole.abs());
        if (refined - estimate).abs() <= rtol * scale + atol || depth >= 40 {
            total += refined;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_matrix(n: usize, seed: u64, scale: f64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0))
    }

    #[test]
    fn expm_matches_nalgebra_across_norms() {
        for (seed, scale) in [(1u64, 1e-3), (2, 0.1), (3, 0.5), (4, 1.0), (5, 3.0), (6, 20.0)] {
            let a = rand_matrix(4, seed, scale);
            let ours = expm(&a).unwrap();
            let reference = a.clone().exp();
            let err = (&ours - &reference).amax() / reference.amax();
            assert!(err < 1e-12, "scale {scale}: rel err {err}");
        }
    }

    #[test]
    fn expm_of_diagonal_is_elementwise() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![-1.0, 0.5, -12.616]));
        let e = expm(&a).unwrap();
        for (i, d) in [-1.0f64, 0.5, -12.616].iter().enumerate() {
            assert!((e[(i, i)] - d.exp()).abs() < 1e-14 * d.exp().max(1.0));
        }
    }

    #[test]
    fn jitter_escalates_for_singular_gram() {
        let v = DVector::from_vec(alloc::vec![1.0, 2.0, 3.0]);
        let k = &v * v.transpose();
        let chol = cholesky_with_jitter(&k, f64::EPSILON).unwrap();
        assert!(chol.jitter >= f64::EPSILON);
        assert!(chol.jitter <= 1e-4 * 14.0 / 3.0 + 1e-18);
    }

    #[test]
    fn indefinite_matrix_is_rejected_with_condition() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match cholesky_with_jitter(&k, f64::EPSILON) {
            Err(Error::Factorization { condition, .. }) => assert!(condition.is_infinite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let rule = gauss_legendre(10);
        let integral: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(18)).sum();
        assert!((integral - 2.0 / 19.0).abs() < 1e-14);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_rule_moments() {
        let rule = gauss_hermite(41);
        let sqrt_pi = core::f64::consts::PI.sqrt();
        let m0: f64 = rule.weights.iter().sum();
        let m2: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x * x).sum();
        let m4: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - sqrt_pi).abs() < 1e-12);
        assert!((m2 - sqrt_pi / 2.0).abs() < 1e-12);
        assert!((m4 - 0.75 * sqrt_pi).abs() < 1e-12);
    }

    #[test]
    fn adaptive_quadrature_resolves_sharp_exponential() {
        let got = integrate_adaptive(|x| (-50.0 * x).exp(), 0.0, 3.0, 1e-12, 0.0);
        let want = (1.0 - (-150.0f64).exp()) / 50.0;
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn lstsq_handles_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let b = DVector::from_vec(alloc::vec![2.0, 2.0, 2.0]);
        let x = lstsq(&a, &b);
        assert!((x[0] - 2.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }
}
