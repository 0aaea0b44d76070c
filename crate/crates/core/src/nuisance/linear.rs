//! Regularized linear models solved in closed form (ridge) or by damped
//! Newton iterations (logistic). Intercepts are never penalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{solve_spd, Matrix};
use crate::util::sigmoid;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefs: Vec<f64>,
    /// Whether predictions pass through the logistic link.
    pub logistic: bool,
}

impl LinearFit {
    /// Linear score `intercept + x . coefs` per row.
    pub fn decision(&self, x: &Matrix) -> Vec<f64> {
        let mut out = x.mul_vec(&self.coefs);
        for v in &mut out {
            *v += self.intercept;
        }
        out
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut out = self.decision(x);
        if self.logistic {
            for v in &mut out {
                *v = sigmoid(*v);
            }
        }
        out
    }
}

/// Ridge regression via centered normal equations:
/// `(Xc' Xc + alpha I) beta = Xc' (y - mean(y))`, `intercept = mean(y) -
/// mean(x) . beta`. With `alpha = 0` a rank-deficient system is an error;
/// any positive `alpha` makes the system positive definite.
pub fn fit_ridge(x: &Matrix, y: &[f64], alpha: f64) -> Result<LinearFit> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::BadSpec("ridge alpha must be finite and >= 0".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.rows(), found: y.len() });
    }
    let (n, d) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::BadSpec("cannot fit on zero rows".into()));
    }
    let y_bar = y.iter().sum::<f64>() / n as f64;
    if d == 0 {
        return Ok(LinearFit { intercept: y_bar, coefs: Vec::new(), logistic: false });
    }
    let x_bar: Vec<f64> = (0..d)
        .map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64)
        .collect();
    let mut xc = Matrix::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            xc.set(r, c, x.get(r, c) - x_bar[c]);
        }
    }
    let mut gram = xc.gram();
    for i in 0..d {
        gram.set(i, i, gram.get(i, i) + alpha);
    }
    let yc: Vec<f64> = y.iter().map(|v| v - y_bar).collect();
    let rhs = xc.t_mul_vec(&yc);
    let coefs = solve_spd(&gram, &rhs).ok_or(Error::SingularSystem)?;
    let intercept = y_bar - x_bar.iter().zip(&coefs).map(|(m, b)| m * b).sum::<f64>();
    Ok(LinearFit { intercept, coefs, logistic: false })
}

/// L2-penalized logistic regression fitted by damped Newton steps. The
/// penalized log-likelihood is `sum(y log p + (1-y) log(1-p)) -
/// ||beta||^2 / (2c)` with the intercept excluded from the penalty.
/// Stops when the gradient norm drops to 1e-8 or after 100 iterations.
pub fn fit_logistic(x: &Matrix, y: &[f64], c: f64) -> Result<LinearFit> {
    fit_logistic_traced(x, y, c).map(|(fit, _)| fit)
}

/// Like [`fit_logistic`] but also returns the penalized log-likelihood after
/// each accepted Newton step (non-decreasing by construction).
pub fn fit_logistic_traced(x: &Matrix, y: &[f64], c: f64) -> Result<(LinearFit, Vec<f64>)> {
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::BadSpec("logistic c must be finite and > 0".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.rows(), found: y.len() });
    }
    let (n, d) = (x.rows(), x.cols());
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::BadSpec("logistic labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|v| **v == 1.0).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }
    let lambda = 1.0 / c;

    // theta = [intercept, slopes...]
    let p_dim = d + 1;
    let mut theta = vec![0.0; p_dim];
    let mut trace = Vec::new();
    let mut ll = penalized_loglik(x, y, &theta, lambda);
    trace.push(ll);

    for _ in 0..NEWTON_MAX_ITER {
        let eta = decision_with(x, &theta);
        let probs: Vec<f64> = eta.iter().map(|z| sigmoid(*z)).collect();

        // Gradient: [1|X]'(y - p) - lambda * [0, slopes].
        let resid: Vec<f64> = y.iter().zip(&probs).map(|(yi, pi)| yi - pi).collect();
        let mut grad = vec![0.0; p_dim];
        grad[0] = resid.iter().sum();
        let gx = x.t_mul_vec(&resid);
        for j in 0..d {
            grad[j + 1] = gx[j] - lambda * theta[j + 1];
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= NEWTON_GRAD_TOL {
            break;
        }

        // Hessian of the negative objective: [1|X]' W [1|X] + lambda I
        // (intercept unpenalized), W = diag(p(1-p)) floored for stability.
        let w: Vec<f64> = probs.iter().map(|p| (p * (1.0 - p)).max(1e-10)).collect();
        let mut h = Matrix::zeros(p_dim, p_dim);
        h.set(0, 0, w.iter().sum());
        for j in 0..d {
            let s: f64 = (0..n).map(|r| w[r] * x.get(r, j)).sum();
            h.set(0, j + 1, s);
            h.set(j + 1, 0, s);
        }
        for j in 0..d {
            for k in j..d {
                let s: f64 = (0..n).map(|r| w[r] * x.get(r, j) * x.get(r, k)).sum();
                h.set(j + 1, k + 1, s);
                h.set(k + 1, j + 1, s);
            }
        }
        for j in 1..p_dim {
            h.set(j, j, h.get(j, j) + lambda);
        }
        let step = solve_spd(&h, &grad).ok_or(Error::SingularSystem)?;

        // Damping: halve the step until the penalized log-likelihood
        // improves.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand: Vec<f64> =
                theta.iter().zip(&step).map(|(th, s)| th + t * s).collect();
            let cand_ll = penalized_loglik(x, y, &cand, lambda);
            if cand_ll > ll {
                theta = cand;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break; // No ascent direction left: numerically converged.
        }
    }

    let fit = LinearFit { intercept: theta[0], coefs: theta[1..].to_vec(), logistic: true };
    Ok((fit, trace))
}

fn decision_with(x: &Matrix, theta: &[f64]) -> Vec<f64> {
    let mut out = x.mul_vec(&theta[1..]);
    for v in &mut out {
        *v += theta[0];
    }
    out
}

fn penalized_loglik(x: &Matrix, y: &[f64], theta: &[f64], lambda: f64) -> f64 {
    let eta = decision_with(x, theta);
    let mut ll = 0.0;
    for (yi, z) in y.iter().zip(&eta) {
        // log sigma(z) = -log(1 + e^{-z}); numerically stable via ln_1p.
        let log_p = if *z >= 0.0 { -(-z).exp().ln_1p() } else { z - z.exp().ln_1p() };
        let log_q = if *z >= 0.0 { -z - (-z).exp().ln_1p() } else { -z.exp().ln_1p() };
        ll += yi * log_p + (1.0 - yi) * log_q;
    }
    let penalty: f64 = theta[1..].iter().map(|b| b * b).sum::<f64>() * lambda / 2.0;
    ll - penalty
}
