//! Bidirectional GRU with an explicit backward pass.
//!
//! Tensors are time-major, `[T, B, F]`. Gates are stacked `r, z, n` along the
//! first axis of the weight matrices:
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```
//!
//! Padding positions leave the state untouched and emit zeros, so each
//! direction effectively runs only over real tokens.

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use rand::Rng;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

/// Per-step values needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct DirectionTrace {
    h_prev: Array3<f64>,
    r: Array3<f64>,
    z: Array3<f64>,
    n: Array3<f64>,
    gh_n: Array3<f64>,
}

impl GruDirection {
    /// Weights uniform in `±1/sqrt(hidden)`; biases start at zero so that a
    /// zero input applied to a zero state is a fixed point.
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Array2::from_shape_fn((3 * hidden, input), |_| rng.gen_range(-k..k)),
            w_hh: Array2::from_shape_fn((3 * hidden, hidden), |_| rng.gen_range(-k..k)),
            b_ih: Array1::zeros(3 * hidden),
            b_hh: Array1::zeros(3 * hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_ih: Array2::zeros(self.w_ih.raw_dim()),
            w_hh: Array2::zeros(self.w_hh.raw_dim()),
            b_ih: Array1::zeros(self.b_ih.len()),
            b_hh: Array1::zeros(self.b_hh.len()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.b_ih.len() + self.b_hh.len()
    }

    pub(crate) fn forward(
        &self,
        x: &Array3<f64>,
        pad: &Array2<f64>,
        reverse: bool,
        keep_trace: bool,
    ) -> (Array3<f64>, Option<DirectionTrace>) {
        let (steps, batch, input) = x.dim();
        let h = self.hidden();
        let x2 = x.view().into_shape_with_order((steps * batch, input)).expect("contiguous input");
        let gi = (x2.dot(&self.w_ih.t()) + &self.b_ih)
            .into_shape_with_order((steps, batch, 3 * h))
            .expect("reshape gates");
        let mut state = Array2::<f64>::zeros((batch, h));
        let mut out = Array3::<f64>::zeros((steps, batch, h));
        let mut trace = keep_trace.then(|| DirectionTrace {
            h_prev: Array3::zeros((steps, batch, h)),
            r: Array3::zeros((steps, batch, h)),
            z: Array3::zeros((steps, batch, h)),
            n: Array3::zeros((steps, batch, h)),
            gh_n: Array3::zeros((steps, batch, h)),
        });
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            let gh = state.dot(&self.w_hh.t()) + &self.b_hh;
            if let Some(tr) = trace.as_mut() {
                tr.h_prev.index_axis_mut(Axis(0), t).assign(&state);
            }
            for b in 0..batch {
                let m = pad[[t, b]];
                for j in 0..h {
                    let r = sigmoid(gi[[t, b, j]] + gh[[b, j]]);
                    let z = sigmoid(gi[[t, b, h + j]] + gh[[b, h + j]]);
                    let gh_n = gh[[b, 2 * h + j]];
                    let n = (gi[[t, b, 2 * h + j]] + r * gh_n).tanh();
                    let prev = state[[b, j]];
                    let cand = (1.0 - z) * n + z * prev;
                    let next = m * cand + (1.0 - m) * prev;
                    state[[b, j]] = next;
                    out[[t, b, j]] = m * next;
                    if let Some(tr) = trace.as_mut() {
                        tr.r[[t, b, j]] = r;
                        tr.z[[t, b, j]] = z;
                        tr.n[[t, b, j]] = n;
                        tr.gh_n[[t, b, j]] = gh_n;
                    }
                }
            }
        }
        (out, trace)
    }

    /// Accumulates into `grad` and returns `dL/dx`.
    pub(crate) fn backward(
        &self,
        x: &Array3<f64>,
        pad: &Array2<f64>,
        reverse: bool,
        trace: &DirectionTrace,
        d_out: ArrayView3<f64>,
        grad: &mut GruDirection,
    ) -> Array3<f64> {
        let (steps, batch, input) = x.dim();
        let h = self.hidden();
        let mut d_state = Array2::<f64>::zeros((batch, h));
        let mut d_gi = Array3::<f64>::zeros((steps, batch, 3 * h));
        let mut d_gh = Array3::<f64>::zeros((steps, batch, 3 * h));
        for step in (0..steps).rev() {
            let t = if reverse { steps - 1 - step } else { step };
            let mut d_prev = Array2::<f64>::zeros((batch, h));
            for b in 0..batch {
                let m = pad[[t, b]];
                for j in 0..h {
                    let total = d_state[[b, j]] + m * d_out[[t, b, j]];
                    let d_cand = m * total;
                    let r = trace.r[[t, b, j]];
                    let z = trace.z[[t, b, j]];
                    let n = trace.n[[t, b, j]];
                    let prev = trace.h_prev[[t, b, j]];
                    let d_n = d_cand * (1.0 - z);
                    let d_z = d_cand * (prev - n);
                    let d_an = d_n * (1.0 - n * n);
                    let d_ar = d_an * trace.gh_n[[t, b, j]] * r * (1.0 - r);
                    let d_az = d_z * z * (1.0 - z);
                    d_gi[[t, b, j]] = d_ar;
                    d_gi[[t, b, h + j]] = d_az;
                    d_gi[[t, b, 2 * h + j]] = d_an;
                    d_gh[[t, b, j]] = d_ar;
                    d_gh[[t, b, h + j]] = d_az;
                    d_gh[[t, b, 2 * h + j]] = d_an * r;
                    d_prev[[b, j]] = (1.0 - m) * total + d_cand * z;
                }
            }
            d_prev += &d_gh.index_axis(Axis(0), t).dot(&self.w_hh);
            d_state = d_prev;
        }
        let rows = steps * batch;
        let d_gh2 = d_gh.into_shape_with_order((rows, 3 * h)).expect("reshape");
        let h_prev2 = trace.h_prev.view().into_shape_with_order((rows, h)).expect("reshape");
        grad.w_hh += &d_gh2.t().dot(&h_prev2);
        grad.b_hh += &d_gh2.sum_axis(Axis(0));
        let d_gi2 = d_gi.into_shape_with_order((rows, 3 * h)).expect("reshape");
        let x2 = x.view().into_shape_with_order((rows, input)).expect("contiguous input");
        grad.w_ih += &d_gi2.t().dot(&x2);
        grad.b_ih += &d_gi2.sum_axis(Axis(0));
        d_gi2
            .dot(&self.w_ih)
            .into_shape_with_order((steps, batch, input))
            .expect("reshape")
    }

    fn tensors(&self) -> [(&'static str, Vec<usize>, &[f64]); 4] {
        [
            ("w_ih", self.w_ih.shape().to_vec(), self.w_ih.as_slice().expect("standard layout")),
            ("w_hh", self.w_hh.shape().to_vec(), self.w_hh.as_slice().expect("standard layout")),
            ("b_ih", self.b_ih.shape().to_vec(), self.b_ih.as_slice().expect("standard layout")),
            ("b_hh", self.b_hh.shape().to_vec(), self.b_hh.as_slice().expect("standard layout")),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 4] {
        [
            ("w_ih", self.w_ih.as_slice_mut().expect("standard layout")),
            ("w_hh", self.w_hh.as_slice_mut().expect("standard layout")),
            ("b_ih", self.b_ih.as_slice_mut().expect("standard layout")),
            ("b_hh", self.b_hh.as_slice_mut().expect("standard layout")),
        ]
    }
}

/// One bidirectional layer; output is `[forward | backward]` per token.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub fwd: GruDirection,
    pub bwd: GruDirection,
}

#[derive(Debug, Clone)]
pub(crate) struct BiTrace {
    fwd: DirectionTrace,
    bwd: DirectionTrace,
}

impl BiGru {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fwd = GruDirection::new(input, hidden, rng);
        let bwd = GruDirection::new(input, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn zeros_like(&self) -> Self {
        Self { fwd: self.fwd.zeros_like(), bwd: self.bwd.zeros_like() }
    }

    pub fn num_params(&self) -> usize {
        self.fwd.num_params() + self.bwd.num_params()
    }

    pub fn output_width(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }

    /// `x` is `[T, B, in]`, `pad` is `[T, B]`.
    pub fn forward(&self, x: &Array3<f64>, pad: &Array2<f64>) -> Array3<f64> {
        self.forward_traced(x, pad, false).0
    }

    pub(crate) fn forward_traced(
        &self,
        x: &Array3<f64>,
        pad: &Array2<f64>,
        keep_trace: bool,
    ) -> (Array3<f64>, Option<BiTrace>) {
        let (f_out, f_tr) = self.fwd.forward(x, pad, false, keep_trace);
        let (b_out, b_tr) = self.bwd.forward(x, pad, true, keep_trace);
        let (steps, batch, hf) = f_out.dim();
        let hb = b_out.dim().2;
        let mut out = Array3::zeros((steps, batch, hf + hb));
        out.slice_mut(s![.., .., ..hf]).assign(&f_out);
        out.slice_mut(s![.., .., hf..]).assign(&b_out);
        let trace = f_tr.zip(b_tr).map(|(fwd, bwd)| BiTrace { fwd, bwd });
        (out, trace)
    }

    pub(crate) fn backward(
        &self,
        x: &Array3<f64>,
        pad: &Array2<f64>,
        trace: &BiTrace,
        d_out: ArrayView3<f64>,
        grad: &mut BiGru,
    ) -> Array3<f64> {
        let hf = self.fwd.hidden();
        let dx_f = self.fwd.backward(x, pad, false, &trace.fwd, d_out.slice(s![.., .., ..hf]), &mut grad.fwd);
        let dx_b = self.bwd.backward(x, pad, true, &trace.bwd, d_out.slice(s![.., .., hf..]), &mut grad.bwd);
        dx_f + dx_b
    }

    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(8);
        for (dir, g) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            for (name, shape, data) in g.tensors() {
                out.push((format!("{dir}.{name}"), shape, data));
            }
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(8);
        for (dir, g) in [("fwd", &mut self.fwd), ("bwd", &mut self.bwd)] {
            for (name, data) in g.tensors_mut() {
                out.push((format!("{dir}.{name}"), data));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(steps: usize, batch: usize, dim: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((steps, batch, dim), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_token_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = BiGru::new(4, 3, &mut rng);
        let out = layer.forward(&random_input(1, 1, 4, 1), &Array2::ones((1, 1)));
        assert_eq!(out.dim(), (1, 1, 6));
    }

    #[test]
    fn zero_input_fixed_point_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = BiGru::new(4, 3, &mut rng);
        let out = layer.forward(&Array3::zeros((2, 1, 4)), &Array2::ones((2, 1)));
        for j in 0..3 {
            assert_eq!(out[[0, 0, j]], out[[1, 0, j]]);
        }
    }

    #[test]
    fn padding_emits_zero_and_batch_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = BiGru::new(3, 2, &mut rng);
        let x = random_input(4, 2, 3, 9);
        let mut pad = Array2::ones((4, 2));
        pad[[3, 0]] = 0.0;
        let out = layer.forward(&x, &pad);
        assert!(out.slice(s![3, 0, ..]).iter().all(|&v| v == 0.0));

        // row 1 alone gives the same states as inside the batch
        let x1 = x.slice(s![.., 1..2, ..]).to_owned();
        let alone = layer.forward(&x1, &Array2::ones((4, 1)));
        assert_eq!(alone.slice(s![.., 0, ..]), out.slice(s![.., 1, ..]));

        // row 0 truncated to its 3 real tokens matches the padded run
        let x0 = x.slice(s![..3, 0..1, ..]).to_owned();
        let short = layer.forward(&x0, &Array2::ones((3, 1)));
        for t in 0..3 {
            for j in 0..4 {
                assert!((short[[t, 0, j]] - out[[t, 0, j]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = BiGru::new(3, 2, &mut rng);
        // non-zero biases so their gradients are exercised away from the init
        for g in [&mut layer.fwd, &mut layer.bwd] {
            g.b_ih.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            g.b_hh.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let x = random_input(4, 2, 3, 3);
        let mut pad = Array2::ones((4, 2));
        pad[[3, 1]] = 0.0;
        pad[[1, 0]] = 0.0;
        let weights = random_input(4, 2, 4, 4);
        let loss = |l: &BiGru, x: &Array3<f64>| (l.forward(x, &pad) * &weights).sum();

        let (_, trace) = layer.forward_traced(&x, &pad, true);
        let mut grad = layer.zeros_like();
        let dx = layer.backward(&x, &pad, &trace.unwrap(), weights.view(), &mut grad);

        let eps = 1e-6;
        let names: Vec<String> = layer.tensors().into_iter().map(|(n, _, _)| n).collect();
        for (k, name) in names.iter().enumerate() {
            let n = layer.tensors()[k].2.len();
            for i in 0..n {
                let mut plus = layer.clone();
                plus.tensors_mut()[k].1[i] += eps;
                let mut minus = layer.clone();
                minus.tensors_mut()[k].1[i] -= eps;
                let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * eps);
                let an = grad.tensors()[k].2[i];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{name}[{i}]: fd {fd} analytic {an}");
            }
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "dx[{idx}]: fd {fd} analytic {an}");
        }
    }
}
