use super::Tensor;
use crate::error::{Error, Result};

/// Which learning rate a parameter is updated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LrGroup {
    /// Entity and relation embeddings.
    Kg,
    /// Everything in the sentence and path encoders and the classifier.
    Net,
}

/// A named trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub group: LrGroup,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, value: Tensor, group: LrGroup) -> Self {
        let grad = Tensor::zeros(value.shape());
        ParamSlot { name: name.into(), value, grad, group }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Plain SGD: `value ← value − lr·grad`, then zero the gradient.
///
/// Every gradient is validated before any value is touched, so a non-finite
/// gradient leaves all parameters unchanged.
pub fn sgd_step<'a, I>(params: I, lr_kg: f64, lr_net: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut ParamSlot>,
{
    let mut params: Vec<&mut ParamSlot> = params.into_iter().collect();
    if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGradient(bad.name.clone()));
    }
    for p in params.iter_mut() {
        let lr = match p.group {
            LrGroup::Kg => lr_kg,
            LrGroup::Net => lr_net,
        };
        let ParamSlot { value, grad, .. } = &mut **p;
        for (v, g) in value.data_mut().iter_mut().zip(grad.data_mut().iter_mut()) {
            *v -= lr * *g;
            *g = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(group: LrGroup, value: f64, grad: f64) -> ParamSlot {
        let mut p = ParamSlot::new("p", Tensor::vector(vec![value]), group);
        p.grad = Tensor::vector(vec![grad]);
        p
    }

    #[test]
    fn applies_learning_rate_and_zeroes_grad() {
        let mut p = scalar(LrGroup::Net, 1.0, 0.5);
        sgd_step([&mut p], 0.05, 0.02).unwrap();
        assert_eq!(p.value.data()[0], 1.0 - 0.02 * 0.5);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn zero_grad_leaves_value() {
        let mut p = scalar(LrGroup::Kg, 3.25, 0.0);
        sgd_step([&mut p], 0.05, 0.02).unwrap();
        assert_eq!(p.value.data()[0], 3.25);
    }

    #[test]
    fn groups_use_their_own_rate() {
        let mut kg = scalar(LrGroup::Kg, 1.0, 1.0);
        let mut net = scalar(LrGroup::Net, 1.0, 1.0);
        sgd_step([&mut kg, &mut net], 0.05, 0.02).unwrap();
        assert_eq!(kg.value.data()[0], 1.0 - 0.05);
        assert_eq!(net.value.data()[0], 1.0 - 0.02);
    }

    #[test]
    fn non_finite_grad_is_rejected_without_update() {
        let mut ok = scalar(LrGroup::Net, 1.0, 1.0);
        let mut bad = scalar(LrGroup::Net, 1.0, f64::NAN);
        bad.name = "bad".into();
        let err = sgd_step([&mut ok, &mut bad], 0.1, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "bad"));
        assert_eq!(ok.value.data()[0], 1.0);
    }
}
