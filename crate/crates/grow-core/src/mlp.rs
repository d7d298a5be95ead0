//! Flat-parameter multilayer perceptron with hand-written reverse-mode
//! gradients.
//!
//! Parameters live in one `Vec<f64>` so optimizers and checkpoints can treat
//! a network as a single vector. Layout is fixed: for each layer, the weight
//! matrix in row-major `[out][in]` order followed by the bias vector. Hidden
//! layers apply `tanh`; the output layer is linear. Gradient accumulation
//! walks parameters in layout order, which keeps training bit-reproducible.

use crate::error::{GrowError, Result};
use crate::rng::SeedStream;

/// Network shape: `input_dim -> hidden_dims... -> output_dim`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.contains(&0) {
            return Err(GrowError::Config(format!(
                "layout dimensions must be positive, got {input_dim} -> {hidden_dims:?} -> {output_dim}"
            )));
        }
        Ok(Layout {
            input_dim,
            hidden_dims,
            output_dim,
        })
    }

    /// Layer widths including input and output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        let dims = self.dims();
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Per-layer activations cached by [`forward`], consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; each subsequent entry is the
    /// post-nonlinearity output of a layer (raw for the final layer).
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has output")
    }
}

/// Deterministic initialization: biases zero, weights uniform in
/// `(-1/sqrt(fan_in), +1/sqrt(fan_in))` drawn in layout order.
pub fn init_theta(layout: &Layout, stream: &mut SeedStream) -> Vec<f64> {
    let mut theta = vec![0.0; layout.param_count()];
    let dims = layout.dims();
    let mut offset = 0;
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in theta.iter_mut().skip(offset).take(fan_in * fan_out) {
            *v = stream.uniform(-scale, scale);
        }
        offset += fan_in * fan_out + fan_out; // biases stay zero
    }
    theta
}

/// Forward pass returning the cached activations.
pub fn forward(theta: &[f64], layout: &Layout, input: &[f64]) -> Result<ForwardTrace> {
    if input.len() != layout.input_dim {
        return Err(GrowError::Usage(format!(
            "feature length {} does not match input_dim {}",
            input.len(),
            layout.input_dim
        )));
    }
    debug_assert_eq!(theta.len(), layout.param_count());

    let dims = layout.dims();
    let n_layers = dims.len() - 1;
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(input.to_vec());

    let mut offset = 0;
    for (l, w) in dims.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &theta[offset..offset + n_in * n_out];
        let biases = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;

        let prev = activations.last().expect("previous activation");
        let mut out = vec![0.0; n_out];
        for (o, out_v) in out.iter_mut().enumerate() {
            let mut acc = biases[o];
            let row = &weights[o * n_in..(o + 1) * n_in];
            for (x, wv) in prev.iter().zip(row) {
                acc += x * wv;
            }
            *out_v = if l + 1 < n_layers { acc.tanh() } else { acc };
        }
        activations.push(out);
    }
    Ok(ForwardTrace { activations })
}

/// Reverse pass: accumulate `d(loss)/d(theta)` into `grad` given the
/// gradient `d_output` at the network output. `grad` must match `theta`
/// in length and is added to, not overwritten.
pub fn backward(
    theta: &[f64],
    layout: &Layout,
    trace: &ForwardTrace,
    d_output: &[f64],
    grad: &mut [f64],
) {
    debug_assert_eq!(grad.len(), theta.len());
    debug_assert_eq!(d_output.len(), layout.output_dim);

    let dims = layout.dims();
    let n_layers = dims.len() - 1;

    // Offsets of each layer's parameter block.
    let mut offsets = Vec::with_capacity(n_layers);
    let mut offset = 0;
    for w in dims.windows(2) {
        offsets.push(offset);
        offset += w[0] * w[1] + w[1];
    }

    let mut delta = d_output.to_vec();
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let base = offsets[l];
        let prev = &trace.activations[l];

        for (o, d) in delta.iter().enumerate() {
            let row = base + o * n_in;
            for (i, x) in prev.iter().enumerate() {
                grad[row + i] += d * x;
            }
            grad[base + n_in * n_out + o] += d;
        }

        if l > 0 {
            // Propagate through W^T, then the tanh of the previous layer.
            let weights = &theta[base..base + n_in * n_out];
            let mut d_prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (dp, wv) in d_prev.iter_mut().zip(row) {
                    *dp += d * wv;
                }
            }
            for (dp, a) in d_prev.iter_mut().zip(prev) {
                *dp *= 1.0 - a * a;
            }
            delta = d_prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_hand_arithmetic() {
        let layout = Layout::new(10, vec![16], 4).unwrap();
        assert_eq!(layout.param_count(), 10 * 16 + 16 + 16 * 4 + 4);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Layout::new(0, vec![4], 2).is_err());
        assert!(Layout::new(3, vec![0], 2).is_err());
        assert!(Layout::new(3, vec![4], 0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let layout = Layout::new(6, vec![8], 3).unwrap();
        for seed in 0..100 {
            let a = init_theta(&layout, &mut SeedStream::new(seed));
            let b = init_theta(&layout, &mut SeedStream::new(seed));
            assert_eq!(a, b);
            assert!(a.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let layout = Layout::new(4, vec![5], 2).unwrap();
        let theta = vec![0.0; layout.param_count()];
        assert!(forward(&theta, &layout, &[0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        let layout = Layout::new(5, vec![7], 3).unwrap();
        let mut stream = SeedStream::new(11);
        let theta = init_theta(&layout, &mut stream);
        let input: Vec<f64> = (0..5).map(|_| stream.uniform(-1.0, 1.0)).collect();
        // Scalar objective: weighted sum of outputs.
        let w = [0.7, -1.3, 0.4];
        let loss = |t: &[f64]| -> f64 {
            let tr = forward(t, &layout, &input).unwrap();
            tr.output().iter().zip(&w).map(|(o, c)| o * c).sum()
        };

        let trace = forward(&theta, &layout, &input).unwrap();
        let mut grad = vec![0.0; theta.len()];
        backward(&theta, &layout, &trace, &w, &mut grad);

        let h = 1e-5;
        for k in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[k] += h;
            minus[k] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = grad[k].abs().max(num.abs()).max(1e-6);
            assert!(
                (grad[k] - num).abs() / denom <= 1e-4,
                "coordinate {k}: analytic {} vs numeric {num}",
                grad[k]
            );
        }
    }
}
