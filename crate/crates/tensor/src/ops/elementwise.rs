use crate::{kink, GradFn, Result, Scalar, Tensor, TensorError};

/// `max(0, x)`; the gradient is masked by `x > 0`, so the kink at zero
/// passes no gradient.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let out: Vec<T> = input.data().iter().map(|&v| v.max(T::zero())).collect();
    if kink::is_active() {
        let mask: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
        kink::record(&mask[..]);
    }
    Tensor::from_op(
        input.shape().to_vec(),
        out,
        Box::new(ReluBackward {
            input: input.clone(),
        }),
    )
}

struct ReluBackward<T: Scalar> {
    input: Tensor<T>,
}

impl<T: Scalar> GradFn<T> for ReluBackward<T> {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        vec![self.input.clone()]
    }

    fn backward(&self, grad_out: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = self.input.data();
        let dx = x
            .iter()
            .zip(grad_out)
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(dx)]
    }
}

/// Weighted sum of same-shaped tensors, `sum_i coeffs[i] * terms[i]`.
pub fn linear_combination<T: Scalar>(terms: &[Tensor<T>], coeffs: &[T]) -> Result<Tensor<T>> {
    let first = terms
        .first()
        .ok_or_else(|| TensorError::shape("linear_combination", "no terms"))?;
    if terms.len() != coeffs.len() {
        return Err(TensorError::shape(
            "linear_combination",
            format!("{} terms, {} coefficients", terms.len(), coeffs.len()),
        ));
    }
    if let Some(t) = terms.iter().find(|t| t.shape() != first.shape()) {
        return Err(TensorError::shape(
            "linear_combination",
            format!("shape {:?} vs {:?}", t.shape(), first.shape()),
        ));
    }
    let mut out = vec![T::zero(); first.numel()];
    for (t, &c) in terms.iter().zip(coeffs) {
        for (o, &v) in out.iter_mut().zip(t.data().iter()) {
            *o += c * v;
        }
    }
    Ok(Tensor::from_op(
        first.shape().to_vec(),
        out,
        Box::new(LinearBackward {
            terms: terms.to_vec(),
            coeffs: coeffs.to_vec(),
        }),
    ))
}

struct LinearBackward<T: Scalar> {
    terms: Vec<Tensor<T>>,
    coeffs: Vec<T>,
}

impl<T: Scalar> GradFn<T> for LinearBackward<T> {
    fn name(&self) -> &'static str {
        "linear_combination"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        self.terms.clone()
    }

    fn backward(&self, grad_out: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        self.coeffs
            .iter()
            .zip(needs)
            .map(|(&c, &need)| need.then(|| grad_out.iter().map(|&g| c * g).collect()))
            .collect()
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    linear_combination(&[a.clone(), b.clone()], &[T::one(), T::one()])
}

pub fn scale<T: Scalar>(a: &Tensor<T>, factor: T) -> Tensor<T> {
    linear_combination(&[a.clone()], &[factor]).expect("single term")
}

/// Sum of all elements as a one-element tensor.
pub fn sum<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let w = vec![T::one(); input.numel()];
    dot(input, &w).expect("matching length")
}

/// `sum_i x_i * weights_i` against a constant weight vector.
pub fn dot<T: Scalar>(input: &Tensor<T>, weights: &[T]) -> Result<Tensor<T>> {
    if weights.len() != input.numel() {
        return Err(TensorError::shape(
            "dot",
            format!("{} weights for {} values", weights.len(), input.numel()),
        ));
    }
    let v: T = input.data().iter().zip(weights).map(|(&x, &w)| x * w).sum();
    Ok(Tensor::from_op(
        vec![],
        vec![v],
        Box::new(DotBackward {
            input: input.clone(),
            weights: weights.to_vec(),
        }),
    ))
}

struct DotBackward<T: Scalar> {
    input: Tensor<T>,
    weights: Vec<T>,
}

impl<T: Scalar> GradFn<T> for DotBackward<T> {
    fn name(&self) -> &'static str {
        "dot"
    }

    fn inputs(&self) -> Vec<Tensor<T>> {
        vec![self.input.clone()]
    }

    fn backward(&self, grad_out: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = grad_out[0];
        vec![Some(self.weights.iter().map(|&w| w * g).collect())]
    }
}
