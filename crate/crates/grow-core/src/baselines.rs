//! Comparison algorithms: trajectory-level group-relative advantages and a
//! PPO critic with generalized advantage estimation.
//!
//! Both baselines produce an [`AdvantageBatch`], so they share the rollout,
//! objective, gradient, and optimizer code paths with the decomposed
//! sample-level algorithm; advantage construction is the only difference
//! between the algorithms under comparison.

use crate::error::{GrowError, Result};
use crate::grow::{AdvantageBatch, StateActionSample, SIGMA_FLOOR};
use crate::mlp::{self, Layout};
use crate::policy::GradientVector;
use crate::rng::SeedStream;
use crate::rollout::{RolloutGroup, Trajectory};

/// Scalar-output value network sharing the policy's feature input.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub theta: Vec<f64>,
    pub layout: Layout,
}

/// Discount and trace-decay for generalized advantage estimation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GAEConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl GAEConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(GrowError::Config(format!(
                "GAE gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(GrowError::Config(format!(
                "GAE lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Per-trajectory z-scored returns.
#[derive(Debug, Clone)]
pub struct TrajectoryAdvantages {
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

/// Standard group-relative advantages: z-score the episodic returns across
/// the group (population standard deviation, zero on degenerate groups).
pub fn grpo_trajectory_advantages(group: &RolloutGroup) -> Result<TrajectoryAdvantages> {
    let g = group.group_size();
    if g < 2 {
        return Err(GrowError::Usage(format!(
            "need at least 2 trajectories, got {g}"
        )));
    }
    let returns: Vec<f64> = group
        .trajectories
        .iter()
        .map(|t| t.episodic_return as f64)
        .collect();
    let mean = returns.iter().sum::<f64>() / g as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let sigma = var.sqrt();
    if sigma <= SIGMA_FLOOR {
        return Ok(TrajectoryAdvantages {
            advantages: vec![0.0; g],
            degenerate: true,
        });
    }
    Ok(TrajectoryAdvantages {
        advantages: returns.iter().map(|r| (r - mean) / sigma).collect(),
        degenerate: false,
    })
}

/// Broadcast trajectory-level advantages to every step, packaged for the
/// shared objective.
pub fn grpo_advantage_batch(group: &RolloutGroup, gamma: f64) -> Result<AdvantageBatch> {
    let traj_adv = grpo_trajectory_advantages(group)?;
    let sg = crate::grow::decompose(group, gamma)?;
    let advantages = sg
        .samples
        .iter()
        .map(|s| traj_adv.advantages[s.traj_index])
        .collect();
    Ok(AdvantageBatch {
        samples: sg.samples,
        advantages,
        degenerate: traj_adv.degenerate,
        group_size: sg.group_size,
    })
}

/// Deterministic critic initialization with the same scheme as the policy.
pub fn init_value_params(
    seed: u64,
    input_dim: usize,
    hidden_dims: Vec<usize>,
) -> Result<ValueParams> {
    let layout = Layout::new(input_dim, hidden_dims, 1)?;
    let theta = mlp::init_theta(&layout, &mut SeedStream::new(seed));
    Ok(ValueParams { theta, layout })
}

/// Scalar value prediction.
pub fn value_forward(vparams: &ValueParams, features: &[f64]) -> Result<f64> {
    let trace = mlp::forward(&vparams.theta, &vparams.layout, features)?;
    let v = trace.output()[0];
    if !v.is_finite() {
        return Err(GrowError::Numeric("non-finite value prediction".into()));
    }
    Ok(v)
}

/// Per-step generalized advantages for one trajectory.
///
/// The environment reward is zero everywhere except the terminal step,
/// which carries the binary return; the value of the terminal successor is
/// zero. Computed by the usual backward recursion
/// `A_t = delta_t + gamma * lambda * A_{t+1}`.
pub fn gae_advantages(
    traj: &Trajectory,
    vparams: &ValueParams,
    cfg: GAEConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let h = traj.len();
    if h == 0 {
        return Err(GrowError::Usage("GAE over an empty trajectory".into()));
    }
    let values: Vec<f64> = traj
        .steps
        .iter()
        .map(|s| value_forward(vparams, &s.features))
        .collect::<Result<_>>()?;

    let mut advantages = vec![0.0; h];
    let mut acc = 0.0;
    for t in (0..h).rev() {
        let reward = if t + 1 == h {
            traj.episodic_return as f64
        } else {
            0.0
        };
        let next_value = if t + 1 == h { 0.0 } else { values[t + 1] };
        let delta = reward + cfg.gamma * next_value - values[t];
        acc = delta + cfg.gamma * cfg.lambda * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}

/// GAE advantages for a whole group, z-scored across the flat sample set
/// and packaged for the shared objective. The `discounted_reward` carried
/// by each sample is the return-to-go, which doubles as the critic's
/// regression target.
pub fn ppo_advantage_batch(
    group: &RolloutGroup,
    vparams: &ValueParams,
    cfg: GAEConfig,
) -> Result<AdvantageBatch> {
    let sg = crate::grow::decompose(group, cfg.gamma)?;
    let mut raw = Vec::with_capacity(sg.samples.len());
    for traj in &group.trajectories {
        raw.extend(gae_advantages(traj, vparams, cfg)?);
    }
    debug_assert_eq!(raw.len(), sg.samples.len());

    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sigma = (raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    let degenerate = sigma <= SIGMA_FLOOR;
    let advantages = if degenerate {
        vec![0.0; raw.len()]
    } else {
        raw.iter().map(|a| (a - mean) / sigma).collect()
    };
    Ok(AdvantageBatch {
        samples: sg.samples,
        advantages,
        degenerate,
        group_size: sg.group_size,
    })
}

/// Mean squared error of the critic against target returns.
pub fn value_loss(vparams: &ValueParams, batch: &[(Vec<f64>, f64)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(GrowError::Usage("value loss over an empty batch".into()));
    }
    let mut sum = 0.0;
    for (features, target) in batch {
        let err = value_forward(vparams, features)? - target;
        sum += err * err;
    }
    Ok(sum / batch.len() as f64)
}

/// Gradient of [`value_loss`] with respect to the critic parameters.
pub fn value_loss_gradient(
    vparams: &ValueParams,
    batch: &[(Vec<f64>, f64)],
) -> Result<GradientVector> {
    if batch.is_empty() {
        return Err(GrowError::Usage("value loss over an empty batch".into()));
    }
    let mut grad = GradientVector::zeros(vparams.theta.len());
    let n = batch.len() as f64;
    for (features, target) in batch {
        let trace = mlp::forward(&vparams.theta, &vparams.layout, features)?;
        let err = trace.output()[0] - target;
        let d_output = [2.0 * err / n];
        mlp::backward(
            &vparams.theta,
            &vparams.layout,
            &trace,
            &d_output,
            &mut grad.grad,
        );
    }
    if !grad.is_finite() {
        return Err(GrowError::Numeric("non-finite value-loss gradient".into()));
    }
    Ok(grad)
}

/// Regression targets for the critic: discounted returns-to-go extracted
/// from a decomposed group.
pub fn value_targets(batch: &AdvantageBatch) -> Vec<(Vec<f64>, f64)> {
    batch
        .samples
        .iter()
        .map(|s: &StateActionSample| (s.features.clone(), s.discounted_reward))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionId;
    use crate::policy::{init_params, PolicyLayout};
    use crate::rollout::TrajectoryStep;

    fn synthetic_group(spec: &[(usize, u8)], seed: u64) -> RolloutGroup {
        let params = init_params(1, &PolicyLayout::new(5, vec![6], 3).unwrap()).unwrap();
        let mut stream = SeedStream::new(seed);
        let trajectories: Vec<Trajectory> = spec
            .iter()
            .enumerate()
            .map(|(i, &(h, ret))| {
                let steps = (0..h)
                    .map(|_| {
                        let features: Vec<f64> =
                            (0..5).map(|_| stream.uniform(-1.0, 1.0)).collect();
                        let action = stream.below(3) as usize;
                        let old_log_prob =
                            crate::policy::log_prob(&params, &features, ActionId(action)).unwrap();
                        TrajectoryStep {
                            features,
                            action,
                            old_log_prob,
                        }
                    })
                    .collect();
                Trajectory {
                    steps,
                    replay: Vec::new(),
                    episodic_return: ret,
                    task_id: "synthetic".into(),
                    env_index: i,
                }
            })
            .collect();
        RolloutGroup {
            trajectories,
            task_id: "synthetic".into(),
            old_policy_version: 0,
            group_seed: seed,
        }
    }

    #[test]
    fn z_scores_match_hand_values() {
        let group = synthetic_group(&[(3, 1), (4, 0)], 1);
        let adv = grpo_trajectory_advantages(&group).unwrap();
        assert!(!adv.degenerate);
        assert_eq!(adv.advantages, vec![1.0, -1.0]);
    }

    #[test]
    fn all_equal_returns_are_degenerate() {
        let group = synthetic_group(&[(3, 1), (4, 1), (2, 1)], 2);
        let adv = grpo_trajectory_advantages(&group).unwrap();
        assert!(adv.degenerate);
        assert!(adv.advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn advantage_order_follows_return_order() {
        let group = synthetic_group(&[(3, 0), (4, 1), (2, 0), (5, 1)], 3);
        let adv = grpo_trajectory_advantages(&group).unwrap();
        for (traj, a) in group.trajectories.iter().zip(&adv.advantages) {
            if traj.episodic_return == 1 {
                assert!(*a > 0.0);
            } else {
                assert!(*a < 0.0);
            }
        }
    }

    #[test]
    fn zero_critic_predicts_zero() {
        let v = ValueParams {
            layout: Layout::new(5, vec![6], 1).unwrap(),
            theta: vec![0.0; Layout::new(5, vec![6], 1).unwrap().param_count()],
        };
        assert_eq!(value_forward(&v, &[0.4, -0.2, 0.9, 0.0, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn critic_outputs_finite_over_fuzz() {
        let v = init_value_params(7, 5, vec![8]).unwrap();
        let mut stream = SeedStream::new(40);
        for _ in 0..5_000 {
            let features: Vec<f64> = (0..5).map(|_| stream.uniform(-1.0, 1.0)).collect();
            assert!(value_forward(&v, &features).unwrap().is_finite());
        }
    }

    #[test]
    fn gae_with_zero_critic_and_full_trace_matches_discount_propagation() {
        // V = 0, lambda = 1: the recursion reduces to the terminal return
        // propagated backward, bit-for-bit equal to decomposition rewards.
        let zero = ValueParams {
            layout: Layout::new(5, vec![6], 1).unwrap(),
            theta: vec![0.0; Layout::new(5, vec![6], 1).unwrap().param_count()],
        };
        for gamma in [0.5, 0.9, 0.995] {
            let group = synthetic_group(&[(40, 1), (25, 0)], 4);
            let sg = crate::grow::decompose(&group, gamma).unwrap();
            let cfg = GAEConfig { gamma, lambda: 1.0 };
            for (i, traj) in group.trajectories.iter().enumerate() {
                let gae = gae_advantages(traj, &zero, cfg).unwrap();
                let rewards: Vec<f64> = sg
                    .samples
                    .iter()
                    .filter(|s| s.traj_index == i)
                    .map(|s| s.discounted_reward)
                    .collect();
                assert_eq!(gae, rewards, "gamma {gamma} trajectory {i}");
            }
        }
    }

    #[test]
    fn gae_with_zero_trace_is_the_td_error() {
        let v = init_value_params(9, 5, vec![8]).unwrap();
        let group = synthetic_group(&[(10, 1)], 5);
        let traj = &group.trajectories[0];
        let cfg = GAEConfig {
            gamma: 0.95,
            lambda: 0.0,
        };
        let gae = gae_advantages(traj, &v, cfg).unwrap();
        let h = traj.len();
        for (t, got) in gae.iter().enumerate() {
            let reward = if t + 1 == h { 1.0 } else { 0.0 };
            let next_v = if t + 1 == h {
                0.0
            } else {
                value_forward(&v, &traj.steps[t + 1].features).unwrap()
            };
            let delta =
                reward + 0.95 * next_v - value_forward(&v, &traj.steps[t].features).unwrap();
            assert!((got - delta).abs() <= 1e-15);
        }
    }

    #[test]
    fn backward_recursion_equals_direct_double_sum() {
        let v = init_value_params(11, 5, vec![8]).unwrap();
        let mut picker = SeedStream::new(50);
        for round in 0..100 {
            let h = 1 + picker.below(80) as usize;
            let ret = picker.below(2) as u8;
            let group = synthetic_group(&[(h, ret)], 600 + round);
            let traj = &group.trajectories[0];
            let gamma = picker.uniform(0.5, 0.999);
            let lambda = picker.uniform(0.0, 1.0);
            let cfg = GAEConfig { gamma, lambda };
            let fast = gae_advantages(traj, &v, cfg).unwrap();

            // O(H^2) oracle: A_t = sum_k (gamma*lambda)^k delta_{t+k}.
            let values: Vec<f64> = traj
                .steps
                .iter()
                .map(|s| value_forward(&v, &s.features).unwrap())
                .collect();
            let deltas: Vec<f64> = (0..h)
                .map(|t| {
                    let reward = if t + 1 == h { ret as f64 } else { 0.0 };
                    let next_v = if t + 1 == h { 0.0 } else { values[t + 1] };
                    reward + gamma * next_v - values[t]
                })
                .collect();
            for (t, got) in fast.iter().enumerate() {
                let mut acc = 0.0;
                let mut w = 1.0;
                for d in deltas.iter().skip(t) {
                    acc += w * d;
                    w *= gamma * lambda;
                }
                assert!((got - acc).abs() <= 1e-12, "h {h} t {t}: {} vs {acc}", got);
            }
        }
    }

    #[test]
    fn value_loss_hand_values() {
        let zero = ValueParams {
            layout: Layout::new(2, vec![3], 1).unwrap(),
            theta: vec![0.0; Layout::new(2, vec![3], 1).unwrap().param_count()],
        };
        let batch = vec![(vec![0.1, 0.2], 1.0), (vec![0.3, 0.4], 0.0)];
        // Zero predictor against targets {1, 0}: ((0-1)^2 + 0^2) / 2.
        assert_eq!(value_loss(&zero, &batch).unwrap(), 0.5);

        // Perfect prediction: targets equal the (zero) outputs.
        let perfect = vec![(vec![0.1, 0.2], 0.0)];
        assert_eq!(value_loss(&zero, &perfect).unwrap(), 0.0);
    }

    #[test]
    fn value_loss_non_negative_over_fuzz() {
        let v = init_value_params(13, 4, vec![6]).unwrap();
        let mut stream = SeedStream::new(60);
        for _ in 0..200 {
            let batch: Vec<(Vec<f64>, f64)> = (0..5)
                .map(|_| {
                    let f: Vec<f64> = (0..4).map(|_| stream.uniform(-1.0, 1.0)).collect();
                    (f, stream.uniform(0.0, 1.0))
                })
                .collect();
            assert!(value_loss(&v, &batch).unwrap() >= 0.0);
        }
    }

    #[test]
    fn value_loss_gradient_matches_finite_differences() {
        let v = init_value_params(15, 4, vec![6]).unwrap();
        let mut stream = SeedStream::new(70);
        let batch: Vec<(Vec<f64>, f64)> = (0..6)
            .map(|_| {
                let f: Vec<f64> = (0..4).map(|_| stream.uniform(-1.0, 1.0)).collect();
                (f, stream.uniform(0.0, 1.0))
            })
            .collect();
        let analytic = value_loss_gradient(&v, &batch).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..v.theta.len() {
            let mut plus = v.clone();
            plus.theta[k] += h;
            let mut minus = v.clone();
            minus.theta[k] -= h;
            let num = (value_loss(&plus, &batch).unwrap() - value_loss(&minus, &batch).unwrap())
                / (2.0 * h);
            let denom = analytic.grad[k].abs().max(num.abs()).max(1e-6);
            worst = worst.max((analytic.grad[k] - num).abs() / denom);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn ppo_batch_aligns_with_group_structure() {
        let v = init_value_params(17, 5, vec![8]).unwrap();
        let group = synthetic_group(&[(6, 1), (9, 0), (4, 1)], 7);
        let cfg = GAEConfig {
            gamma: 0.995,
            lambda: 0.95,
        };
        let batch = ppo_advantage_batch(&group, &v, cfg).unwrap();
        assert_eq!(batch.samples.len(), 19);
        assert!(!batch.degenerate);
        let n = batch.advantages.len() as f64;
        let mean: f64 = batch.advantages.iter().sum::<f64>() / n;
        assert!(mean.abs() <= 1e-9);
        // Targets carried on the samples are the discounted returns-to-go.
        let targets = value_targets(&batch);
        assert_eq!(targets.len(), 19);
        assert!(targets.iter().all(|(_, t)| (0.0..=1.0).contains(t)));
    }
}
