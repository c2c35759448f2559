//! Derivative-free Nelder–Mead simplex minimization.
//!
//! Uses the dimension-adaptive coefficients of Gao and Han, which keep the
//! simplex from collapsing prematurely in the 16-dimensional likelihood fits.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when `f_worst - f_best <= f_tol * max(1, |f_best|)`.
    pub f_tol: f64,
    /// ... and every vertex lies within `x_tol` (max-norm) of the best one.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            f_tol: 1e-12,
            x_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` using an axis-aligned initial simplex with per-axis `steps`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");
    assert!(n > 0, "empty parameter vector");
    let nf = n as f64;
    let alpha = 1.0;
    let gamma = 1.0 + 2.0 / nf;
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let sigma = if n > 1 { 1.0 - 1.0 / nf } else { 0.5 };

    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    // running vertex sum; the centroid of all but the worst is (sum - worst)/n
    let mut sum = vec![0.0; n];
    let resum = |simplex: &[Vec<f64>], sum: &mut [f64]| {
        sum.iter_mut().for_each(|s| *s = 0.0);
        for v in simplex {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
    };
    resum(&simplex, &mut sum);
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while iterations < opts.max_iterations {
        let (best, second_worst, worst) = extremes(&values);
        let f_best = values[best];
        let f_worst = values[worst];

        if f_worst - f_best <= opts.f_tol * f_best.abs().max(1.0) {
            let x_spread = simplex
                .iter()
                .flat_map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if x_spread <= opts.x_tol {
                converged = true;
                break;
            }
        }
        iterations += 1;

        for j in 0..n {
            centroid[j] = (sum[j] - simplex[worst][j]) / nf;
        }
        let replace = |simplex: &mut Vec<Vec<f64>>,
                       values: &mut Vec<f64>,
                       sum: &mut Vec<f64>,
                       x: &[f64],
                       fx: f64| {
            for j in 0..n {
                sum[j] += x[j] - simplex[worst][j];
            }
            simplex[worst].copy_from_slice(x);
            values[worst] = fx;
        };

        for j in 0..n {
            trial[j] = centroid[j] + alpha * (centroid[j] - simplex[worst][j]);
        }
        let f_reflect = eval(&trial);

        if f_reflect < f_best {
            for j in 0..n {
                trial2[j] = centroid[j] + gamma * (trial[j] - centroid[j]);
            }
            let f_expand = eval(&trial2);
            if f_expand < f_reflect {
                replace(&mut simplex, &mut values, &mut sum, &trial2, f_expand);
            } else {
                replace(&mut simplex, &mut values, &mut sum, &trial, f_reflect);
            }
            continue;
        }
        if f_reflect < values[second_worst] {
            replace(&mut simplex, &mut values, &mut sum, &trial, f_reflect);
            continue;
        }

        let (f_contract, accept) = if f_reflect < f_worst {
            for j in 0..n {
                trial2[j] = centroid[j] + rho * (trial[j] - centroid[j]);
            }
            let fc = eval(&trial2);
            (fc, fc <= f_reflect)
        } else {
            for j in 0..n {
                trial2[j] = centroid[j] + rho * (simplex[worst][j] - centroid[j]);
            }
            let fc = eval(&trial2);
            (fc, fc < f_worst)
        };
        if accept {
            replace(&mut simplex, &mut values, &mut sum, &trial2, f_contract);
            continue;
        }

        let anchor = simplex[best].clone();
        for idx in (0..=n).filter(|&i| i != best) {
            for (x, a) in simplex[idx].iter_mut().zip(&anchor) {
                *x = a + sigma * (*x - a);
            }
            values[idx] = eval(&simplex[idx]);
        }
        resum(&simplex, &mut sum);
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("simplex is non-empty");
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        evaluations,
        converged,
    }
}

/// Indices of the best, second-worst and worst vertices. Ties keep the lower index.
fn extremes(values: &[f64]) -> (usize, usize, usize) {
    let mut best = 0;
    let mut worst = 0;
    for (i, v) in values.iter().enumerate() {
        if v.total_cmp(&values[best]).is_lt() {
            best = i;
        }
        if v.total_cmp(&values[worst]).is_ge() {
            worst = i;
        }
    }
    let second_worst = (0..values.len())
        .filter(|&i| i != worst)
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .expect("simplex has at least two vertices");
    (best, second_worst, worst)
}
