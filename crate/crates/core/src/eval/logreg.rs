use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient-norm threshold for convergence.
pub const GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogReg {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean negative log-likelihood plus `l2 / 2 * |w|^2` (bias unpenalized).
pub fn objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = x.len() as f64;
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = b + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
            if yi {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    nll / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// L2-regularized logistic regression by damped Newton iterations.
///
/// Stops once the gradient norm of [`objective`] drops below
/// [`GRAD_TOL`] or after `iters` iterations.
pub fn train_logreg(x: &[Vec<f64>], y: &[bool], l2: f64, iters: usize) -> Result<LogReg> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::shape(
            "train_logreg",
            format!("{} rows, {} labels", x.len(), y.len()),
        ));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::DegenerateData("training labels are all one class".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::shape("train_logreg", "ragged feature rows"));
    }
    let n = x.len();
    // design matrix with a trailing bias column
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
    let yv = DVector::from_fn(n, |i, _| if y[i] { 1.0 } else { 0.0 });
    let mut reg = DVector::from_element(d + 1, l2);
    reg[d] = 0.0;
    let mut theta = DVector::<f64>::zeros(d + 1);
    let obj = |t: &DVector<f64>| objective(x, y, &t.as_slice()[..d], t[d], l2);
    let mut current = obj(&theta);
    let mut converged = false;
    let mut it = 0;
    while it < iters {
        let z = &a * &theta;
        let p = z.map(sigmoid);
        let mut grad = a.transpose() * (&p - &yv) / n as f64;
        grad += reg.component_mul(&theta);
        if grad.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        let s = p.map(|v| v * (1.0 - v));
        let mut scaled = a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= s[i];
        }
        let mut hess = a.transpose() * scaled / n as f64;
        for j in 0..=d {
            hess[(j, j)] += reg[j] + 1e-10;
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => grad.clone(),
        };
        let mut alpha = 1.0;
        loop {
            let cand = &theta - &step * alpha;
            let val = obj(&cand);
            if val <= current - 1e-4 * alpha * grad.dot(&step) || alpha < 1e-10 {
                theta = cand;
                current = val;
                break;
            }
            alpha *= 0.5;
        }
        it += 1;
    }
    if !converged {
        log::debug!("logistic regression stopped after {iters} iterations");
    }
    Ok(LogReg {
        weights: theta.as_slice()[..d].to_vec(),
        bias: theta[d],
        iterations: it,
        converged,
    })
}
