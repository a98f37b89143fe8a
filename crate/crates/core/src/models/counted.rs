use super::{IclModel, InputGradient, ModelOutput};
use crate::error::Result;
use crate::metrics::FlopLedger;
use crate::scalar::Scalar;

/// Wraps a model and records every forward and backward pass in a ledger.
pub struct Counted<'a, M: ?Sized> {
    pub model: &'a M,
    pub ledger: &'a FlopLedger,
}

impl<'a, M: ?Sized> Counted<'a, M> {
    pub fn new(model: &'a M, ledger: &'a FlopLedger) -> Self {
        Self { model, ledger }
    }
}

impl<T: Scalar, M: IclModel<T> + ?Sized> IclModel<T> for Counted<'_, M> {
    fn d_emb(&self) -> usize {
        self.model.d_emb()
    }
    fn d_out(&self) -> usize {
        self.model.d_out()
    }
    fn forward(&self, emb: &[T]) -> Result<ModelOutput<T>> {
        self.ledger.add_forward(1);
        self.model.forward(emb)
    }
    fn input_gradient(&self, emb: &[T]) -> Result<InputGradient<T>> {
        self.ledger.add_backward(1);
        self.model.input_gradient(emb)
    }
    fn forward_with_gradient(&self, emb: &[T]) -> Result<(ModelOutput<T>, InputGradient<T>)> {
        self.ledger.add_forward(1);
        self.ledger.add_backward(1);
        self.model.forward_with_gradient(emb)
    }
}
