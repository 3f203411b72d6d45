use crate::error::{Error, Result};
use crate::kernels::{Parameter, Tensor};
use crate::Real;

/// `v ← μv − lr·g; p ← p + μv − lr·g` over aligned slices.
pub fn nesterov_update(value: &mut [Real], velocity: &mut [Real], grad: &[Real], lr: Real, mu: Real) -> Result<()> {
    if value.len() != velocity.len() || value.len() != grad.len() {
        return Err(Error::dim("nesterov update", &[value.len()], &[velocity.len(), grad.len()]));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient {} at coordinate {i}", grad[i])));
    }
    for ((p, v), g) in value.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v - lr * g;
        *p += mu * *v - lr * g;
    }
    Ok(())
}

/// One Nesterov momentum step on `param`, then clears its gradient.
///
/// A non-finite gradient aborts the step with the parameter untouched.
pub fn nesterov_step(param: &mut Parameter, velocity: &mut Tensor, lr: Real, mu: Real) -> Result<()> {
    if param.value.shape() != velocity.shape() {
        return Err(Error::dim("velocity", param.value.shape(), velocity.shape()));
    }
    nesterov_update(param.value.data_mut(), velocity.data_mut(), param.grad.data(), lr, mu)?;
    param.zero_grad();
    Ok(())
}
