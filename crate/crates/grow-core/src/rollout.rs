//! Rollout collection: groups of trajectories sampled in parallel
//! environments under a frozen policy snapshot.
//!
//! Per-environment seeds are `derive_seed(group_seed, "env", env_index)`
//! and per-environment action streams are
//! `derive_seed(group_seed, "actions", env_index)`, so a group is
//! bit-identical however collection work is scheduled; trajectories are
//! assembled in `env_index` order. Log-probabilities under the sampling
//! policy are recorded at collection time so later ratio denominators are
//! exact even after parameter updates.

use crate::env::{self, ReplayStep, TaskSpec};
use crate::error::{GrowError, Result};
use crate::policy::{self, PolicyParams};
use crate::rng::{derive_seed, SeedStream};

/// One `(state, action)` pair with the log-probability it was drawn at.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrajectoryStep {
    pub features: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
}

/// A complete episode plus its replay (the post-action states used by the
/// verifier and for debugging dumps).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub replay: Vec<ReplayStep>,
    pub episodic_return: u8,
    pub task_id: String,
    pub env_index: usize,
}

impl Trajectory {
    /// Episode length `H`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The unit the objective consumes: `group_size` trajectories for one task
/// under one policy snapshot.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RolloutGroup {
    pub trajectories: Vec<Trajectory>,
    pub task_id: String,
    pub old_policy_version: u64,
    pub group_seed: u64,
}

impl RolloutGroup {
    pub fn group_size(&self) -> usize {
        self.trajectories.len()
    }

    /// Total environment steps in the group.
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }
}

/// Collect `group_size` trajectories for `task` under `old_params`.
pub fn collect_group(
    task: &TaskSpec,
    old_params: &PolicyParams,
    group_size: usize,
    group_seed: u64,
) -> Result<RolloutGroup> {
    if group_size < 2 {
        return Err(GrowError::Config(format!(
            "group size must be at least 2 for group statistics, got {group_size}"
        )));
    }
    if old_params.layout.input_dim != task.family.feature_len()
        || old_params.layout.action_count != task.family.action_count()
    {
        return Err(GrowError::Config(format!(
            "policy layout ({} -> {}) does not fit family {} ({} -> {})",
            old_params.layout.input_dim,
            old_params.layout.action_count,
            task.family,
            task.family.feature_len(),
            task.family.action_count(),
        )));
    }

    let mut trajectories = Vec::with_capacity(group_size);
    for env_index in 0..group_size {
        let episode_seed = derive_seed(group_seed, "env", env_index as u64);
        let mut action_stream =
            SeedStream::new(derive_seed(group_seed, "actions", env_index as u64));
        let mut env = env::reset(task, episode_seed)?;

        let mut steps = Vec::new();
        let mut replay = Vec::new();
        while !env.state().done {
            let features = env.state().observation.clone();
            let dist = policy::forward(old_params, &features)?;
            let action = policy::sample_action(&dist, &mut action_stream);
            let old_log_prob = dist.log_probs[action.0];
            debug_assert_eq!(
                old_log_prob,
                policy::log_prob(old_params, &features, action)?,
                "recorded log-prob must match recomputation exactly"
            );
            let out = env.step(action)?;
            steps.push(TrajectoryStep {
                features,
                action: action.0,
                old_log_prob,
            });
            replay.push(ReplayStep {
                step_index: out.next_state.step_index,
                action: action.0 as u32,
                features: out.next_state.observation,
                done: out.done,
                success: out.success,
            });
        }

        let episodic_return = env::verify(task, &replay)?;
        debug_assert_eq!(
            episodic_return == 1,
            replay.iter().any(|s| s.success),
            "verifier disagrees with recorded success flags"
        );
        trajectories.push(Trajectory {
            steps,
            replay,
            episodic_return,
            task_id: task.task_id.clone(),
            env_index,
        });
    }

    Ok(RolloutGroup {
        trajectories,
        task_id: task.task_id.clone(),
        old_policy_version: old_params.version,
        group_seed,
    })
}

/// Binary return of a collected trajectory (cached at collection time).
pub fn trajectory_return(traj: &Trajectory) -> u8 {
    traj.episodic_return
}

/// Serialize a group as JSONL, one trajectory per line, with a schema
/// header line.
pub fn group_to_jsonl(group: &RolloutGroup) -> String {
    let mut out = String::from("{\"schema\":\"grow.rollout.v1\"}\n");
    for traj in &group.trajectories {
        out.push_str(&serde_json::to_string(traj).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}
