//! Central finite differences, used as the independent gradient oracle.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::model::AttentionModel;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Numerical gradient of `loss` with respect to every parameter in `store`.
///
/// `loss` must be a pure function of the store's values.
pub fn finite_difference(
    store: &mut ParamStore<f64>,
    eps: f64,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> Vec<(String, Tensor<f64>)> {
    let keys: Vec<_> = store.keys().collect();
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let n = store.value(key).numel();
        let mut g = Tensor::zeros(store.value(key).shape());
        for i in 0..n {
            let orig = store.value(key).data()[i];
            store.value_mut(key).data_mut()[i] = orig + eps;
            let up = loss(store);
            store.value_mut(key).data_mut()[i] = orig - eps;
            let down = loss(store);
            store.value_mut(key).data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        out.push((store.params()[key.index].name.clone(), g));
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Largest per-parameter relative error between the store's analytic
/// gradients and `numeric`; returns the offending name with it.
pub fn max_relative_error(store: &ParamStore<f64>, numeric: &[(String, Tensor<f64>)]) -> (String, f64) {
    let mut worst = (String::new(), 0.0);
    for (name, num) in numeric {
        let zero = Tensor::zeros(num.shape());
        let analytic = store.grad(name).unwrap_or(&zero);
        let e = relative_error(analytic, num);
        if e > worst.1 || worst.0.is_empty() {
            worst = (name.clone(), e);
        }
    }
    worst
}

/// Compares backpropagated gradients of `loss` against central differences
/// for every parameter of `model`. Returns the worst `(name, relative error)`.
pub fn check_model(
    model: &AttentionModel<f64>,
    eps: f64,
    loss: impl for<'a> Fn(&'a AttentionModel<f64>, &mut Tape<'a, f64>) -> Result<Var>,
) -> Result<(String, f64)> {
    let eval = |m: &AttentionModel<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = loss(m, &mut tape)?;
        Ok(tape.value(v).item())
    };
    let mut work = model.clone();
    let grads = {
        let mut tape = Tape::new();
        let v = loss(&work, &mut tape)?;
        tape.backward(v)?
    };
    work.params_mut().set_grads(&grads);
    let keys: Vec<_> = work.params().keys().collect();
    let mut numeric = Vec::with_capacity(keys.len());
    for key in keys {
        let mut g = Tensor::zeros(work.params().value(key).shape());
        for i in 0..g.numel() {
            let orig = work.params().value(key).data()[i];
            work.params_mut().value_mut(key).data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.params_mut().value_mut(key).data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.params_mut().value_mut(key).data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        numeric.push((work.params().params()[key.index].name.clone(), g));
    }
    Ok(max_relative_error(work.params(), &numeric))
}
