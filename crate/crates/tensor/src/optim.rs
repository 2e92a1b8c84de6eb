use crate::{Parameter, Result, Scalar, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One SGD step with heavy-ball momentum and L2 weight decay:
/// `v <- momentum * v + grad + weight_decay * w`, `w <- w - lr * v`.
/// Gradients are zeroed afterwards. Nothing is updated if any parameter
/// lacks a gradient.
pub fn sgd_step<T: Scalar>(params: &mut [Parameter<T>], cfg: SgdConfig) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.tensor().grad_ref().is_none()) {
        return Err(TensorError::MissingGrad(p.name().to_string()));
    }
    let lr = T::cast(cfg.lr);
    let mu = T::cast(cfg.momentum);
    let wd = T::cast(cfg.weight_decay);
    for p in params.iter_mut() {
        let tensor = p.tensor().clone();
        {
            let grad = tensor.grad_ref();
            let grad = grad.as_ref().expect("checked above");
            let momentum = &mut p.momentum;
            tensor.update_data(|w| {
                for ((w, v), &g) in w.iter_mut().zip(momentum.iter_mut()).zip(grad) {
                    *v = mu * *v + g + wd * *w;
                    *w -= lr * *v;
                }
            });
        }
        tensor.zero_grad();
    }
    Ok(())
}
