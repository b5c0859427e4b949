//! Derivative-free local minimization (Nelder–Mead) used for hyperparameter
//! selection and proxy fitting.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Clone, Debug)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop when the simplex diameter falls below this (in the search coordinates).
    pub xtol: f64,
    /// Stop when the spread of objective values falls below this.
    pub ftol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_evals: 2000, xtol: 1e-10, ftol: 1e-14 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

impl NelderMead {
    /// Minimizes `f` from `x0` with an axis-aligned initial simplex of size `step`.
    /// Non-finite objective values are treated as `+∞`, which lets callers
    /// encode box constraints by returning `NaN` or `∞` outside the box.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64], step: &[f64]) -> Minimum {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        if n == 0 {
            let value = eval(x0, &mut evals);
            return Minimum { x: Vec::new(), value, evals };
        }

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut v = x0.to_vec();
            v[i] += step[i];
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

        while evals < self.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let diameter = simplex[1..]
                .iter()
                .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diameter <= self.xtol || (spread.is_finite() && spread <= self.ftol && diameter <= self.xtol.sqrt()) {
                break;
            }

            let mut centroid = alloc::vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
            };

            let reflected = along(-1.0);
            let fr = eval(&reflected, &mut evals);
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = eval(&expanded, &mut evals);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
                continue;
            }
            let best = simplex[0].clone();
            for i in 1..=n {
                let shrunk: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
                values[i] = eval(&shrunk, &mut evals);
                simplex[i] = shrunk;
            }
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        Minimum { x: simplex[best].clone(), value: values[best], evals }
    }
}
