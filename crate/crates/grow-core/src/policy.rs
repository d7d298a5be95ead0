//! Differentiable softmax policy over discrete actions.
//!
//! The policy is a small tanh MLP producing one logit per action; softmax
//! (with max subtraction, which changes nothing mathematically but avoids
//! overflow) turns logits into a distribution. `grad_log_prob` is the
//! analytic reverse-mode gradient of `log pi(a|s)` with respect to the flat
//! parameter vector, checked against central finite differences by
//! [`gradient_check`].

use crate::env::ActionId;
use crate::error::{GrowError, Result};
use crate::mlp::{self, Layout};
use crate::rng::SeedStream;

/// Shape of the policy network.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PolicyLayout {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub action_count: usize,
}

impl PolicyLayout {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, action_count: usize) -> Result<Self> {
        // Validation happens through the MLP layout.
        Layout::new(input_dim, hidden_dims.clone(), action_count)?;
        Ok(PolicyLayout {
            input_dim,
            hidden_dims,
            action_count,
        })
    }

    pub fn mlp(&self) -> Layout {
        Layout {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: self.action_count,
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp().param_count()
    }
}

/// Immutable policy snapshot: flat parameters plus a version counter that
/// increments on every optimizer update.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub layout: PolicyLayout,
    pub version: u64,
}

/// Softmax output over the action set.
#[derive(Debug, Clone)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// Gradient with the same layout as the owning parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub grad: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector {
            grad: vec![0.0; len],
        }
    }

    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grad.iter().all(|g| g.is_finite())
    }
}

/// Deterministic initialization: zero biases, fan-in-scaled uniform weights.
pub fn init_params(seed: u64, layout: &PolicyLayout) -> Result<PolicyParams> {
    let mlp_layout = Layout::new(
        layout.input_dim,
        layout.hidden_dims.clone(),
        layout.action_count,
    )?;
    let theta = mlp::init_theta(&mlp_layout, &mut SeedStream::new(seed));
    Ok(PolicyParams {
        theta,
        layout: layout.clone(),
        version: 0,
    })
}

fn softmax_from_logits(logits: &[f64]) -> Result<ActionDistribution> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GrowError::Numeric(
            "non-finite logits in policy forward".into(),
        ));
    }
    let shifted: Vec<f64> = logits.iter().map(|z| z - max).collect();
    let lse = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = shifted.iter().map(|z| z - lse).collect();
    let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(GrowError::Numeric(
            "non-finite probabilities in policy forward".into(),
        ));
    }
    Ok(ActionDistribution { probs, log_probs })
}

/// Action distribution at a state.
pub fn forward(params: &PolicyParams, features: &[f64]) -> Result<ActionDistribution> {
    let trace = mlp::forward(&params.theta, &params.layout.mlp(), features)?;
    softmax_from_logits(trace.output())
}

/// `log pi(a|s)`; always `<= 0`.
pub fn log_prob(params: &PolicyParams, features: &[f64], action: ActionId) -> Result<f64> {
    let dist = forward(params, features)?;
    dist.log_probs
        .get(action.0)
        .copied()
        .ok_or_else(|| GrowError::Usage(format!("action {} out of range", action.0)))
}

/// Inverse-CDF sample with cumulative mass accumulated in ascending action
/// index order; deterministic given the stream state.
pub fn sample_action(dist: &ActionDistribution, stream: &mut SeedStream) -> ActionId {
    let u = stream.next_f64();
    let mut cum = 0.0;
    for (i, p) in dist.probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return ActionId(i);
        }
    }
    ActionId(dist.probs.len() - 1)
}

/// Analytic gradient of `log pi(a|s)` with respect to the parameters.
///
/// At the logits the gradient is `onehot(a) - probs`; the rest is ordinary
/// backpropagation through the MLP.
pub fn grad_log_prob(
    params: &PolicyParams,
    features: &[f64],
    action: ActionId,
) -> Result<GradientVector> {
    let layout = params.layout.mlp();
    let trace = mlp::forward(&params.theta, &layout, features)?;
    let dist = softmax_from_logits(trace.output())?;
    if action.0 >= dist.probs.len() {
        return Err(GrowError::Usage(format!(
            "action {} out of range",
            action.0
        )));
    }
    let mut d_logits: Vec<f64> = dist.probs.iter().map(|p| -p).collect();
    d_logits[action.0] += 1.0;

    let mut grad = GradientVector::zeros(params.theta.len());
    mlp::backward(&params.theta, &layout, &trace, &d_logits, &mut grad.grad);
    if !grad.is_finite() {
        return Err(GrowError::Numeric("non-finite gradient of log-prob".into()));
    }
    Ok(grad)
}

/// Compare the analytic gradient against central finite differences with
/// step `h`; returns the worst per-coordinate relative error, defined as
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(
    params: &PolicyParams,
    features: &[f64],
    action: ActionId,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(GrowError::Usage(
            "finite-difference step must be positive".into(),
        ));
    }
    let analytic = grad_log_prob(params, features, action)?;
    let mut worst: f64 = 0.0;
    let mut perturbed = params.clone();
    for k in 0..params.theta.len() {
        let orig = params.theta[k];
        perturbed.theta[k] = orig + h;
        let plus = log_prob(&perturbed, features, action)?;
        perturbed.theta[k] = orig - h;
        let minus = log_prob(&perturbed, features, action)?;
        perturbed.theta[k] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic.grad[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic.grad[k] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout() -> PolicyLayout {
        PolicyLayout::new(10, vec![16], 4).unwrap()
    }

    #[test]
    fn init_param_count_and_determinism() {
        let layout = small_layout();
        assert_eq!(layout.param_count(), 244);
        let a = init_params(9, &layout).unwrap();
        let b = init_params(9, &layout).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.version, 0);
    }

    #[test]
    fn init_magnitudes_bounded_over_seeds() {
        let layout = small_layout();
        for seed in 0..100 {
            let p = init_params(seed, &layout).unwrap();
            assert!(p.theta.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let layout = small_layout();
        let params = PolicyParams {
            theta: vec![0.0; layout.param_count()],
            layout,
            version: 0,
        };
        let dist = forward(&params, &[0.3; 10]).unwrap();
        for p in &dist.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!((log_prob(&params, &[0.3; 10], ActionId(1)).unwrap() - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_bias_dominates_argmax() {
        let layout = small_layout();
        let mut params = init_params(4, &layout).unwrap();
        // Final-layer bias of action 2 sits at the very end of the layout.
        let n = params.theta.len();
        params.theta[n - 4 + 2] += 10.0;
        let dist = forward(&params, &[0.1; 10]).unwrap();
        let argmax = dist
            .probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
        // Deterministic sampling: the near-degenerate mass picks action 2.
        let mut stream = SeedStream::new(0);
        for _ in 0..50 {
            assert_eq!(sample_action(&dist, &mut stream).0, 2);
        }
    }

    #[test]
    fn distribution_normalized_over_random_inputs() {
        let layout = small_layout();
        let params = init_params(77, &layout).unwrap();
        let mut stream = SeedStream::new(123);
        for _ in 0..10_000 {
            let features: Vec<f64> = (0..10).map(|_| stream.uniform(-1.0, 1.0)).collect();
            let dist = forward(&params, &features).unwrap();
            let sum: f64 = dist.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(dist.probs.iter().all(|&p| p > 0.0));
            for (p, lp) in dist.probs.iter().zip(&dist.log_probs) {
                assert!((lp.exp() - p).abs() < 1e-12);
                assert!(*lp <= 0.0);
            }
        }
    }

    #[test]
    fn exp_log_prob_sums_to_one() {
        let layout = small_layout();
        let params = init_params(5, &layout).unwrap();
        let features = [0.2; 10];
        let total: f64 = (0..4)
            .map(|a| log_prob(&params, &features, ActionId(a)).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampling_matches_probabilities() {
        let layout = small_layout();
        let params = init_params(21, &layout).unwrap();
        let features = [0.5; 10];
        let dist = forward(&params, &features).unwrap();

        let draws = 100_000usize;
        let mut counts = [0usize; 4];
        let mut stream = SeedStream::new(900);
        for _ in 0..draws {
            counts[sample_action(&dist, &mut stream).0] += 1;
        }
        for (a, &c) in counts.iter().enumerate() {
            let p = dist.probs[a];
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - draws as f64 * p).abs() <= 3.0 * sigma,
                "action {a}: {c} draws vs expected {}",
                draws as f64 * p
            );
        }
    }

    #[test]
    fn same_stream_state_same_action() {
        let layout = small_layout();
        let params = init_params(2, &layout).unwrap();
        let dist = forward(&params, &[0.0; 10]).unwrap();
        let a = sample_action(&dist, &mut SeedStream::new(5));
        let b = sample_action(&dist, &mut SeedStream::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let layout = PolicyLayout::new(6, vec![9], 4).unwrap();
        let params = init_params(31, &layout).unwrap();
        let mut stream = SeedStream::new(8);
        let features: Vec<f64> = (0..6).map(|_| stream.uniform(-1.0, 1.0)).collect();
        let worst = gradient_check(&params, &features, ActionId(1), 1e-5).unwrap();
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn coarse_step_degrades_the_check() {
        let layout = PolicyLayout::new(6, vec![9], 4).unwrap();
        let params = init_params(31, &layout).unwrap();
        let features = [0.4, -0.2, 0.9, -0.7, 0.1, 0.5];
        let fine = gradient_check(&params, &features, ActionId(0), 1e-5).unwrap();
        let coarse = gradient_check(&params, &features, ActionId(0), 1e-1).unwrap();
        assert!(coarse > fine, "coarse {coarse} should exceed fine {fine}");
    }

    #[test]
    fn gradient_check_finite_at_zero_params() {
        let layout = small_layout();
        let params = PolicyParams {
            theta: vec![0.0; layout.param_count()],
            layout,
            version: 0,
        };
        let worst = gradient_check(&params, &[0.0; 10], ActionId(3), 1e-5).unwrap();
        assert!(worst.is_finite());
    }

    #[test]
    fn score_identity_holds_exactly_summed() {
        let layout = PolicyLayout::new(5, vec![8], 3).unwrap();
        let params = init_params(17, &layout).unwrap();
        let features = [0.3, -0.8, 0.2, 0.6, -0.1];
        let dist = forward(&params, &features).unwrap();
        let mut expectation = vec![0.0; params.theta.len()];
        for a in 0..3 {
            let g = grad_log_prob(&params, &features, ActionId(a)).unwrap();
            for (e, gv) in expectation.iter_mut().zip(&g.grad) {
                *e += dist.probs[a] * gv;
            }
        }
        for e in &expectation {
            assert!(e.abs() <= 1e-8, "score identity residual {e}");
        }
    }

    #[test]
    fn zero_hidden_activations_gate_gradients() {
        // All-zero parameters: hidden activations are tanh(0) = 0, so the
        // only nonzero gradient entries are the output-layer biases.
        let layout = PolicyLayout::new(4, vec![6], 3).unwrap();
        let params = PolicyParams {
            theta: vec![0.0; layout.param_count()],
            layout: layout.clone(),
            version: 0,
        };
        let g = grad_log_prob(&params, &[0.7, -0.3, 0.5, 0.2], ActionId(1)).unwrap();
        let out_bias_start = g.grad.len() - 3;
        let hidden_weight_end = 4 * 6 + 6;
        assert!(g.grad[..hidden_weight_end].iter().all(|&v| v == 0.0));
        assert!(g.grad[hidden_weight_end..out_bias_start]
            .iter()
            .all(|&v| v == 0.0));
        assert!(g.grad[out_bias_start..].iter().any(|&v| v != 0.0));
    }
}
