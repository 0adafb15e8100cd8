use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` weights, zero bias.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (input as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((output, input), |_| rng.gen_range(-k..k)),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: Array2::zeros(self.weight.raw_dim()), bias: Array1::zeros(self.bias.len()) }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        vec![
            ("weight", self.weight.shape().to_vec(), self.weight.as_slice().expect("standard layout")),
            ("bias", self.bias.shape().to_vec(), self.bias.as_slice().expect("standard layout")),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("weight", self.weight.as_slice_mut().expect("standard layout")),
            ("bias", self.bias.as_slice_mut().expect("standard layout")),
        ]
    }
}
