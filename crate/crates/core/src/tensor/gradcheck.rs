use super::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar function of one tensor, expressible at any element precision.
pub trait Differentiable {
    fn eval<T: Element>(&self, g: &mut Graph<T>, x: Var) -> Result<Var>;
}

/// Compares the taped gradient of `f` at `point` (in precision `T`) against
/// central finite differences evaluated in 64-bit precision.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn grad_check<T: Element, F: Differentiable>(f: &F, point: &Tensor<T>, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {eps}")));
    }
    let mut g = Graph::<T>::new();
    let x = g.input(point.clone().with_grad());
    let y = f.eval(&mut g, x)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .get(x)
        .map(|t| t.to_f64_vec())
        .unwrap_or_else(|| vec![0.0; point.len()]);

    let base = point.cast::<f64>();
    let eval_at = |values: Vec<f64>| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(base.shape().to_vec(), values)?);
        let y = f.eval(&mut g, x)?;
        let v = g.value(y)?;
        if !v.is_scalar() {
            return Err(Error::LossNotScalar(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.data().to_vec();
        plus[i] += eps;
        let mut minus = base.data().to_vec();
        minus[i] -= eps;
        let numeric = (eval_at(plus)? - eval_at(minus)?) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
