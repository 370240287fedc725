//! Dense tanh perceptron over flat parameter slices, with exact reverse mode.
//!
//! Parameters are laid out layer by layer, each as a row-major `out x in`
//! weight matrix followed by its bias.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Mlp {
    /// `[input, hidden_1, ..., hidden_n, output]`
    dims: Vec<usize>,
}

/// Activations kept from a forward pass: the input followed by every hidden
/// layer's post-tanh output.
#[derive(Debug, Clone)]
pub(crate) struct MlpTrace {
    pub acts: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(dims: Vec<usize>) -> Self {
        debug_assert!(dims.len() >= 2);
        Self { dims }
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|d| d[1] * d[0] + d[1]).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        let mut out = Vec::with_capacity(self.dims.len());
        for d in self.dims.windows(2) {
            out.push(acc);
            acc += d[1] * d[0] + d[1];
        }
        out
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let off = self.offsets()[l];
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let w = ArrayView2::from_shape((n_out, n_in), &params[off..off + n_out * n_in]).unwrap();
        let b = ArrayView1::from(&params[off + n_out * n_in..off + n_out * n_in + n_out]);
        (w, b)
    }

    fn layer_mut<'a>(
        &self,
        grads: &'a mut [f64],
        l: usize,
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let off = self.offsets()[l];
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let (w, b) = grads[off..off + n_out * n_in + n_out].split_at_mut(n_out * n_in);
        (
            ArrayViewMut2::from_shape((n_out, n_in), w).unwrap(),
            ArrayViewMut1::from(b),
        )
    }

    /// Fan-in scaled Gaussian weights, zero biases; optionally a zero last layer.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, zero_last: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        let layers = self.dims.len() - 1;
        for (l, d) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (d[0], d[1]);
            if zero_last && l == layers - 1 {
                out.extend(std::iter::repeat_n(0.0, n_out * n_in));
            } else {
                let normal = Normal::new(0.0, (1.0 / n_in as f64).sqrt()).unwrap();
                out.extend((0..n_out * n_in).map(|_| normal.sample(rng)));
            }
            out.extend(std::iter::repeat_n(0.0, n_out));
        }
        out
    }

    /// Rows of `x` are independent examples.
    pub fn forward(&self, params: &[f64], x: Array2<f64>) -> (Array2<f64>, MlpTrace) {
        let layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(layers);
        acts.push(x);
        for l in 0..layers - 1 {
            let (w, b) = self.layer(params, l);
            let mut a = acts[l].dot(&w.t());
            a += &b;
            a.mapv_inplace(f64::tanh);
            acts.push(a);
        }
        let (w, b) = self.layer(params, layers - 1);
        let mut out = acts[layers - 1].dot(&w.t());
        out += &b;
        (out, MlpTrace { acts })
    }

    /// Accumulate parameter gradients of `<d_out, forward(params, x)>` into `grads`.
    pub fn backward(&self, params: &[f64], trace: &MlpTrace, d_out: Array2<f64>, grads: &mut [f64]) {
        let layers = self.dims.len() - 1;
        let mut delta = d_out;
        for l in (0..layers).rev() {
            let input = &trace.acts[l];
            {
                let (mut gw, mut gb) = self.layer_mut(grads, l);
                gw += &delta.t().dot(input);
                gb += &delta.sum_axis(Axis(0));
            }
            if l > 0 {
                let (w, _) = self.layer(params, l);
                let mut d_in = delta.dot(&w);
                d_in.zip_mut_with(input, |d, &h| *d *= 1.0 - h * h);
                delta = d_in;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mlp = Mlp::new(vec![3, 5, 4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params: Vec<f64> = (0..mlp.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let up = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let objective = |p: &[f64]| (mlp.forward(p, x.clone()).0 * &up).sum();
        let (_, trace) = mlp.forward(&params, x.clone());
        let mut grads = vec![0.0; params.len()];
        mlp.backward(&params, &trace, up.clone(), &mut grads);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let plus = objective(&p);
            p[i] -= 2.0 * h;
            let minus = objective(&p);
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - grads[i]).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", grads[i]);
        }
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let mlp = Mlp::new(vec![4, 8, 3]);
        let params = mlp.init(&mut ChaCha8Rng::seed_from_u64(0), true);
        let (out, _) = mlp.forward(&params, Array2::from_elem((5, 4), 0.7));
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
