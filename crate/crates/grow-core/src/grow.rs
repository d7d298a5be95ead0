//! Trajectory decomposition, group-relative advantages, the clipped
//! surrogate objective, and the surrogate-analysis decomposition.
//!
//! A rollout group of `G` trajectories is decomposed into state-action
//! samples; each sample at step `t` of trajectory `i` (length `H_i`,
//! binary return `R_i`) carries the discounted reward
//!
//! ```text
//! r_{i,t} = gamma^(H_i - t) * R_i
//! ```
//!
//! so samples closer to task completion carry stronger signal. Advantages
//! are the rewards z-scored across the whole sample set of the group, and
//! the training objective is the clipped surrogate
//!
//! ```text
//! J = (1/G) sum_i (1/H_i) sum_t min(rho * A, clip(rho, 1-eps, 1+eps) * A)
//! ```
//!
//! with `rho = pi(a|s) / pi_old(a|s)`. `surrogate_decomposition` splits the
//! unclipped, sigma-omitted objective into a trajectory-preference term and
//! a within-trajectory credit term weighted by the average discount
//! coefficient `C_gamma`; with uniform trajectory lengths the split is an
//! exact identity, and the report's residual measures how far a group is
//! from it.
//!
//! Discount powers are built by sequential multiplication
//! (`gamma^k = gamma * gamma^(k-1)`), which pins the float values shared
//! with the lambda-return special case of the PPO baseline.

use crate::error::{GrowError, Result};
use crate::policy::{self, GradientVector, PolicyParams};
use crate::rollout::RolloutGroup;

/// Below this standard deviation a group carries no relative signal and
/// normalization degenerates to all-zero advantages.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// One decomposed optimization unit.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionSample {
    pub features: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    /// Trajectory index `i` within the group, 0-based.
    pub traj_index: usize,
    /// Step `t` within the trajectory, 1-based.
    pub step_index: usize,
    pub discounted_reward: f64,
    /// Trajectory length `H_i`.
    pub traj_len: usize,
}

/// The flat sample set of one decomposed rollout group.
#[derive(Debug, Clone)]
pub struct SampleGroup {
    pub samples: Vec<StateActionSample>,
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Number of source trajectories `G`.
    pub group_size: usize,
    pub task_id: String,
    pub old_policy_version: u64,
}

/// Normalized advantages aligned with their samples.
#[derive(Debug, Clone)]
pub struct AdvantageBatch {
    pub samples: Vec<StateActionSample>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
    pub group_size: usize,
}

/// Split of the unclipped, sigma-omitted surrogate.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SurrogateReport {
    /// Objective with rewards centered by the group mean.
    pub j_full: f64,
    pub c_gamma: f64,
    /// Mean trajectory return in the group.
    pub s: f64,
    /// Trajectory-preference term (return relative to the group mean).
    pub j_traj: f64,
    /// Within-trajectory credit term (discount relative to its average).
    pub j_step: f64,
    /// `j_full - (c_gamma * j_traj + j_step)`.
    pub residual: f64,
    pub uniform_h: bool,
}

/// `[gamma^0, gamma^1, ..., gamma^n]` by sequential multiplication.
fn discount_powers(gamma: f64, n: usize) -> Vec<f64> {
    let mut pows = Vec::with_capacity(n + 1);
    pows.push(1.0);
    for k in 1..=n {
        pows.push(pows[k - 1] * gamma);
    }
    pows
}

fn population_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let mut sq = 0.0;
    for v in values {
        let d = v - mean;
        sq += d * d;
    }
    (mean, (sq / n as f64).sqrt())
}

/// Decompose a rollout group into state-action samples with discounted
/// rewards propagated backward from the episodic return.
pub fn decompose(group: &RolloutGroup, gamma: f64) -> Result<SampleGroup> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(GrowError::Config(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    let mut samples = Vec::with_capacity(group.total_steps());
    for (i, traj) in group.trajectories.iter().enumerate() {
        let h = traj.len();
        let pows = discount_powers(gamma, h);
        let ret = traj.episodic_return as f64;
        for (t0, step) in traj.steps.iter().enumerate() {
            let t = t0 + 1;
            samples.push(StateActionSample {
                features: step.features.clone(),
                action: step.action,
                old_log_prob: step.old_log_prob,
                traj_index: i,
                step_index: t,
                discounted_reward: pows[h - t] * ret,
                traj_len: h,
            });
        }
    }
    let (mu, sigma) = population_stats(samples.iter().map(|s| s.discounted_reward));
    Ok(SampleGroup {
        samples,
        gamma,
        mu,
        sigma,
        group_size: group.group_size(),
        task_id: group.task_id.clone(),
        old_policy_version: group.old_policy_version,
    })
}

/// Mean and population standard deviation of the flat reward set, every
/// sample weighted equally.
pub fn group_stats(sg: &SampleGroup) -> Result<(f64, f64)> {
    if sg.samples.len() < 2 {
        return Err(GrowError::Usage(format!(
            "group statistics need at least 2 samples, got {}",
            sg.samples.len()
        )));
    }
    Ok(population_stats(
        sg.samples.iter().map(|s| s.discounted_reward),
    ))
}

/// Z-score the rewards across the group. A group whose rewards have
/// (near-)zero variance carries no relative signal: the batch is flagged
/// degenerate and all advantages are zero, making the subsequent update a
/// no-op.
pub fn normalize_advantages(sg: &SampleGroup) -> AdvantageBatch {
    let degenerate = sg.sigma <= SIGMA_FLOOR;
    let advantages = if degenerate {
        vec![0.0; sg.samples.len()]
    } else {
        sg.samples
            .iter()
            .map(|s| (s.discounted_reward - sg.mu) / sg.sigma)
            .collect()
    };
    AdvantageBatch {
        samples: sg.samples.clone(),
        advantages,
        degenerate,
        group_size: sg.group_size,
    }
}

/// Probability ratio `pi(a|s) / pi_old(a|s)` for one sample.
pub fn ratio(params: &PolicyParams, sample: &StateActionSample) -> Result<f64> {
    let lp = policy::log_prob(
        params,
        &sample.features,
        crate::env::ActionId(sample.action),
    )?;
    let rho = (lp - sample.old_log_prob).exp();
    if !rho.is_finite() {
        return Err(GrowError::Numeric(format!(
            "non-finite probability ratio {rho}"
        )));
    }
    Ok(rho)
}

/// Objective value plus everything the trainer wants from the same pass.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: GradientVector,
    /// Fraction of samples where the clipped branch was strictly binding.
    pub clip_active_fraction: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(GrowError::Config(format!(
            "clip range must be in (0, 1), got {eps}"
        )));
    }
    Ok(())
}

/// Single pass computing the clipped surrogate, its gradient, and the
/// clip-activity fraction. Samples are visited in fixed order; each
/// trajectory is averaged over its own length and trajectories are averaged
/// over the group.
pub fn evaluate_objective(
    batch: &AdvantageBatch,
    params: &PolicyParams,
    eps: f64,
) -> Result<ObjectiveEval> {
    check_eps(eps)?;
    if batch.samples.is_empty() {
        return Err(GrowError::Usage("objective over an empty batch".into()));
    }
    let mut gradient = GradientVector::zeros(params.theta.len());
    if batch.degenerate {
        return Ok(ObjectiveEval {
            value: 0.0,
            gradient,
            clip_active_fraction: 0.0,
        });
    }

    let g = batch.group_size as f64;
    let layout = params.layout.mlp();
    let mut value = 0.0;
    let mut clipped = 0usize;
    for (sample, &adv) in batch.samples.iter().zip(&batch.advantages) {
        let trace = crate::mlp::forward(&params.theta, &layout, &sample.features)?;
        let dist = policy::forward(params, &sample.features)?;
        let lp = dist.log_probs[sample.action];
        let rho = (lp - sample.old_log_prob).exp();
        if !rho.is_finite() {
            return Err(GrowError::Numeric("non-finite ratio in objective".into()));
        }
        let weight = 1.0 / (g * sample.traj_len as f64);
        let unclipped = rho * adv;
        let clamped = rho.clamp(1.0 - eps, 1.0 + eps) * adv;
        if unclipped <= clamped {
            value += weight * unclipped;
            // d/dtheta of rho*A = A * rho * dlogpi; at the logits dlogpi is
            // onehot(a) - probs.
            let coef = weight * adv * rho;
            let mut d_logits: Vec<f64> = dist.probs.iter().map(|p| -coef * p).collect();
            d_logits[sample.action] += coef;
            crate::mlp::backward(
                &params.theta,
                &layout,
                &trace,
                &d_logits,
                &mut gradient.grad,
            );
        } else {
            // Clip binding: constant in theta, no gradient contribution.
            value += weight * clamped;
            clipped += 1;
        }
    }
    if !value.is_finite() || !gradient.is_finite() {
        return Err(GrowError::Numeric("non-finite objective evaluation".into()));
    }
    Ok(ObjectiveEval {
        value,
        gradient,
        clip_active_fraction: clipped as f64 / batch.samples.len() as f64,
    })
}

/// The clipped surrogate objective.
pub fn clipped_objective(batch: &AdvantageBatch, params: &PolicyParams, eps: f64) -> Result<f64> {
    Ok(evaluate_objective(batch, params, eps)?.value)
}

/// Analytic ascent gradient of [`clipped_objective`].
pub fn objective_gradient(
    batch: &AdvantageBatch,
    params: &PolicyParams,
    eps: f64,
) -> Result<GradientVector> {
    Ok(evaluate_objective(batch, params, eps)?.gradient)
}

/// Average within-trajectory discount coefficient
/// `(1 - gamma^H) / (H * (1 - gamma))`, the closed form of
/// `(1/H) sum_t gamma^(H-t)`. Equals 1 in the `gamma = 1` limit and for
/// single-step trajectories (the sum is the lone `gamma^0` term); for
/// `gamma < 1` and `H >= 2` it lies strictly inside `(0, 1)`.
pub fn avg_discount_coeff(gamma: f64, h: u32) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(GrowError::Config(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    if h == 0 {
        return Err(GrowError::Config(
            "trajectory length must be at least 1".into(),
        ));
    }
    if gamma == 1.0 {
        return Ok(1.0);
    }
    let c = (1.0 - gamma.powi(h as i32)) / (h as f64 * (1.0 - gamma));
    debug_assert!(c > 0.0 && c <= 1.0, "C_gamma out of range: {c}");
    debug_assert!(h == 1 || c < 1.0, "C_gamma must be below 1 for H >= 2: {c}");
    Ok(c)
}

fn avg_discount_coeff_real(gamma: f64, h: f64) -> f64 {
    if gamma == 1.0 {
        1.0
    } else {
        (1.0 - gamma.powf(h)) / (h * (1.0 - gamma))
    }
}

/// Mean trajectory-level return `S` of the group.
pub fn group_return_mean(group: &RolloutGroup) -> f64 {
    let sum: f64 = group
        .trajectories
        .iter()
        .map(|t| t.episodic_return as f64)
        .sum();
    sum / group.group_size() as f64
}

/// Split the unclipped, sigma-omitted surrogate into its trajectory and
/// step terms.
///
/// `j_full` centers rewards by the actual group mean; the split centers by
/// `c_gamma * s`. With uniform lengths the two centers coincide and the
/// residual vanishes up to rounding; with unequal lengths the residual
/// surfaces the gap between per-trajectory averaging and flat sample
/// weighting.
pub fn surrogate_decomposition(
    group: &RolloutGroup,
    params: &PolicyParams,
    gamma: f64,
) -> Result<SurrogateReport> {
    let sg = decompose(group, gamma)?;
    let s = group_return_mean(group);
    let g = group.group_size() as f64;

    let lens: Vec<usize> = group.trajectories.iter().map(|t| t.len()).collect();
    let uniform_h = lens.windows(2).all(|w| w[0] == w[1]);
    let c_gamma = if uniform_h {
        avg_discount_coeff(gamma, lens[0] as u32)?
    } else {
        let mean_h = lens.iter().sum::<usize>() as f64 / g;
        avg_discount_coeff_real(gamma, mean_h)
    };

    let mut j_full = 0.0;
    let mut j_traj = 0.0;
    let mut j_step = 0.0;
    for sample in &sg.samples {
        let rho = ratio(params, sample)?;
        let weight = 1.0 / (g * sample.traj_len as f64);
        let ret = group.trajectories[sample.traj_index].episodic_return as f64;
        j_full += weight * rho * (sample.discounted_reward - sg.mu);
        j_traj += weight * rho * (ret - s);
        j_step += weight * rho * (sample.discounted_reward - c_gamma * ret);
    }
    let residual = j_full - (c_gamma * j_traj + j_step);
    Ok(SurrogateReport {
        j_full,
        c_gamma,
        s,
        j_traj,
        j_step,
        residual,
        uniform_h,
    })
}

/// Dump an advantage batch as CSV for inspection.
pub fn advantages_to_csv(batch: &AdvantageBatch) -> String {
    let mut out = String::from("traj_index,step_index,traj_len,discounted_reward,advantage\n");
    for (sample, adv) in batch.samples.iter().zip(&batch.advantages) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            sample.traj_index, sample.step_index, sample.traj_len, sample.discounted_reward, adv
        ));
    }
    out
}
