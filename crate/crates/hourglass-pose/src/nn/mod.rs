//! Hand-written layers with explicit forward and backward passes, all in f64.
//!
//! There is no tape or graph machinery: each layer caches what its own
//! backward pass needs during `forward_train`, and `backward` consumes that
//! cache while accumulating parameter gradients. `forward_eval` takes `&self`,
//! caches nothing, and is safe to call from multiple threads.
//!
//! Convolutions reduce to three primitives in [`conv`] (forward,
//! gradient-to-input, gradient-to-weight) built on im2col plus one matrix
//! multiply; transposed convolution reuses the same three primitives with the
//! input/output roles swapped.

pub mod conv;
pub mod layers;

use ndarray::ArrayD;

/// One named, trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(name: String, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.len() == 0
    }
}

/// Uniform access to a layer's trainable tensors and its non-trainable state
/// (batch-norm running statistics). Visit order is construction order and is
/// stable; the optimizer and the serializer both rely on that.
pub trait ParamVisit {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Non-trainable state that still must persist in weight files.
    fn for_each_buffer(&mut self, _f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {}
}
