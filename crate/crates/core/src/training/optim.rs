use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Real, Tensor};

/// `lr0 * (1 - step / total)^power`.
pub fn poly_lr(step: usize, total: usize, lr0: f64, power: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::contract("poly schedule over zero steps"));
    }
    if step > total {
        return Err(Error::contract(format!("step {step} beyond schedule length {total}")));
    }
    Ok(lr0 * (1.0 - step as f64 / total as f64).powf(power))
}

/// Adam moments for every tensor of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Real> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape());
        OptimizerState {
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dim(format!(
            "{} gradients and {} moment tensors for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
            return Err(Error::dim(format!(
                "gradient {:?} for parameter {:?} ({})",
                g.shape(),
                p.shape(),
                params.names()[i]
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    let one = T::one();
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (j, mj) in m.iter_mut().enumerate() {
            *mj = b1 * *mj + (one - b1) * g[j];
        }
        let v = state.v[i].data_mut();
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = b2 * *vj + (one - b2) * g[j] * g[j];
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *pj = *pj - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
