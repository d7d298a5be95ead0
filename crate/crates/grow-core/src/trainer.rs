//! Training orchestration: snapshot, collect, build advantages, ascend.
//!
//! Each update freezes the current policy, collects one rollout group per
//! scheduled task under it, builds advantages according to the selected
//! algorithm (sample-level group-relative, trajectory-level group-relative,
//! or PPO with a learned critic), and applies a single adaptive-moment
//! ascent step on the clipped surrogate. All three algorithms share the
//! rollout, objective, gradient, and optimizer code paths; advantage
//! construction is the only difference. Runs are bit-reproducible given
//! `(config, seed)`.

use std::collections::BTreeMap;

use crate::baselines::{self, GAEConfig, ValueParams};
use crate::env::{self, TaskSpec};
use crate::error::{GrowError, Result};
use crate::grow;
use crate::policy::{self, GradientVector, PolicyLayout, PolicyParams};
use crate::rng::derive_seed;
use crate::rollout;

/// Advantage-construction algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Decomposed state-action samples with group-relative advantages.
    Grow,
    /// Trajectory-level group-relative advantages broadcast per step.
    GrpoTraj,
    /// GAE advantages against a learned value baseline.
    Ppo,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Grow => write!(f, "grow"),
            Algorithm::GrpoTraj => write!(f, "grpo_traj"),
            Algorithm::Ppo => write!(f, "ppo"),
        }
    }
}

/// Per-iteration task scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSchedule {
    /// One task per update, cycling through the task list.
    RoundRobin,
    /// Every task every update, gradients averaged.
    AllTasks,
}

fn default_schema() -> String {
    "grow.train.v1".into()
}
fn default_name() -> String {
    "run".into()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_updates() -> u32 {
    300
}
fn default_eval_episodes() -> u32 {
    50
}
fn default_eval_interval() -> u32 {
    50
}
fn default_group_size() -> usize {
    8
}
fn default_gamma() -> f64 {
    0.995
}
fn default_eps() -> f64 {
    0.2
}
// Desk-scale default; large-model setups run orders of magnitude lower
// (1e-6 and similar), which remains available through the config.
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_hidden_dim() -> usize {
    32
}
fn default_gae_lambda() -> f64 {
    0.95
}
fn default_value_coef() -> f64 {
    0.5
}
fn default_schedule() -> TaskSchedule {
    TaskSchedule::RoundRobin
}

/// Full description of a training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_name")]
    pub name: String,
    pub algorithm: Algorithm,
    pub tasks: Vec<String>,
    #[serde(default = "default_updates")]
    pub updates: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: u32,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u32,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_gae_lambda")]
    pub gae_lambda: f64,
    #[serde(default = "default_value_coef")]
    pub value_coef: f64,
    /// Optional KL penalty toward the snapshot policy; off by default and
    /// excluded from acceptance runs.
    #[serde(default)]
    pub kl_coef: f64,
    #[serde(default = "default_schedule")]
    pub task_schedule: TaskSchedule,
    #[serde(default)]
    pub horizon_overrides: BTreeMap<String, u32>,
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| GrowError::Config(format!("invalid train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != "grow.train.v1" {
            return Err(GrowError::Config(format!(
                "unsupported config schema '{}'",
                self.schema
            )));
        }
        if self.tasks.is_empty() {
            return Err(GrowError::Config("task list must not be empty".into()));
        }
        if self.updates == 0 {
            return Err(GrowError::Config("updates must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(GrowError::Config("seed list must not be empty".into()));
        }
        if self.group_size < 2 {
            return Err(GrowError::Config("group_size must be at least 2".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(GrowError::Config(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.algorithm == Algorithm::Ppo && self.gamma >= 1.0 {
            return Err(GrowError::Config(
                "ppo requires gamma strictly below 1 for advantage estimation".into(),
            ));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(GrowError::Config(format!(
                "eps must be in (0, 1), got {}",
                self.eps
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(GrowError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(GrowError::Config("adam betas must be in [0, 1)".into()));
        }
        if self.adam_eps <= 0.0 {
            return Err(GrowError::Config("adam_eps must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(GrowError::Config(
                "weight_decay must be non-negative".into(),
            ));
        }
        if self.hidden_dim == 0 || self.hidden_dim > 256 {
            return Err(GrowError::Config("hidden_dim must be in 1..=256".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(GrowError::Config("gae_lambda must be in [0, 1]".into()));
        }
        if self.value_coef < 0.0 || self.kl_coef < 0.0 {
            return Err(GrowError::Config(
                "value_coef and kl_coef must be non-negative".into(),
            ));
        }
        if self.eval_episodes < 3 {
            return Err(GrowError::Config("eval_episodes must be at least 3".into()));
        }
        if self.eval_interval == 0 {
            return Err(GrowError::Config("eval_interval must be at least 1".into()));
        }
        for (task_id, cap) in &self.horizon_overrides {
            if *cap == 0 {
                return Err(GrowError::Config(format!(
                    "horizon override for {task_id} must be >= 1"
                )));
            }
        }
        // Task ids must exist; one family per run so a single policy head
        // fits every task.
        let mut family = None;
        for id in &self.tasks {
            let task = env::find_task(id)?;
            match family {
                None => family = Some(task.family),
                Some(f) if f == task.family => {}
                Some(f) => {
                    return Err(GrowError::Config(format!(
                        "tasks must share one family per run: {id} is {} but the run is {f}",
                        task.family
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolve task ids against the registry, applying horizon overrides.
    pub fn resolved_tasks(&self) -> Result<Vec<TaskSpec>> {
        self.tasks
            .iter()
            .map(|id| {
                let mut task = env::find_task(id)?;
                if let Some(cap) = self.horizon_overrides.get(id) {
                    task.horizon_cap = *cap;
                }
                Ok(task)
            })
            .collect()
    }
}

/// Stable fingerprint of a config: FNV-1a over its canonical JSON
/// serialization, so reordering keys in the TOML source does not change
/// the hash.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = FNV_OFFSET;
    for b in canonical.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    format!("{h:016x}")
}

/// First and second moment accumulators for the adaptive update.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(param_count: usize) -> Self {
        OptimizerState {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
        }
    }
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != theta.len() || state.first_moment.len() != theta.len() {
        return Err(GrowError::Usage("optimizer layout mismatch".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(GrowError::Numeric(
            "non-finite gradient in optimizer step".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..theta.len() {
        let m = cfg.beta1 * state.first_moment[k] + (1.0 - cfg.beta1) * grad[k];
        let v = cfg.beta2 * state.second_moment[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
        state.first_moment[k] = m;
        state.second_moment[k] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        // Ascent step plus decoupled weight decay.
        theta[k] += lr * m_hat / (v_hat.sqrt() + cfg.eps);
        theta[k] -= lr * cfg.weight_decay * theta[k];
    }
    Ok(())
}

/// One ascent step of bias-corrected adaptive moment estimation. Returns a
/// fresh parameter snapshot with an incremented version counter and the
/// advanced optimizer state.
pub fn adaptive_update(
    params: &PolicyParams,
    grad: &GradientVector,
    state: &OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(PolicyParams, OptimizerState)> {
    let mut next = params.clone();
    let mut next_state = state.clone();
    adam_step(&mut next.theta, &grad.grad, &mut next_state, lr, cfg)?;
    next.version = params.version + 1;
    Ok((next, next_state))
}

/// Frozen copy of the parameters; rollouts sample from it and all ratios in
/// the following update are computed against its log-probs.
pub fn snapshot_old_policy(params: &PolicyParams) -> PolicyParams {
    params.clone()
}

/// Per-update training record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UpdateRecord {
    pub update: u32,
    pub task_id: String,
    /// Mean trajectory return of the rollout group.
    pub success_rate: f64,
    pub mean_traj_len: f64,
    pub env_steps: u64,
    pub objective: f64,
    pub grad_norm: f64,
    pub clip_active_fraction: f64,
    pub degenerate: bool,
}

/// Per-evaluation record (greedy policy).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRecord {
    pub update: u32,
    pub task_id: String,
    pub asr_mean: f64,
    pub asr_std: f64,
    pub avg_steps: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Update(UpdateRecord),
    Eval(EvalRecord),
}

/// Chronological metric stream of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub records: Vec<MetricRecord>,
}

impl Metrics {
    pub fn updates(&self) -> impl Iterator<Item = &UpdateRecord> {
        self.records.iter().filter_map(|r| match r {
            MetricRecord::Update(u) => Some(u),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter_map(|r| match r {
            MetricRecord::Eval(e) => Some(e),
            _ => None,
        })
    }

    /// Final evaluation per task (the last eval record of each task).
    pub fn final_evals(&self) -> BTreeMap<String, EvalRecord> {
        let mut out = BTreeMap::new();
        for e in self.evals() {
            out.insert(e.task_id.clone(), e.clone());
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::from("{\"schema\":\"grow.metrics.v1\"}\n");
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("metric serializes"));
            out.push('\n');
        }
        out
    }

    /// Learning-curve CSV: one row per evaluation, with the most recent
    /// training success rate for the same task alongside.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("update,task_id,asr,success_rate,steps\n");
        let mut last_s: BTreeMap<String, f64> = BTreeMap::new();
        for record in &self.records {
            match record {
                MetricRecord::Update(u) => {
                    last_s.insert(u.task_id.clone(), u.success_rate);
                }
                MetricRecord::Eval(e) => {
                    let s = last_s.get(&e.task_id).copied().unwrap_or(0.0);
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        e.update, e.task_id, e.asr_mean, s, e.avg_steps
                    ));
                }
            }
        }
        out
    }
}

/// Everything a finished run hands back; writing files is the caller's job.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub metrics: Metrics,
    pub final_params: PolicyParams,
    pub final_value: Option<ValueParams>,
    /// Parameter snapshots taken at every evaluation point, ending with the
    /// final parameters.
    pub checkpoints: Vec<(u32, PolicyParams)>,
}

/// Greedy evaluation: argmax action (lowest index on ties), `episodes`
/// seeded episodes per task. Failed episodes count the full horizon cap.
pub fn evaluate(
    params: &PolicyParams,
    tasks: &[TaskSpec],
    episodes: u32,
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    if episodes < 3 {
        return Err(GrowError::Config(format!(
            "evaluation needs at least 3 episodes, got {episodes}"
        )));
    }
    let mut records = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut outcomes = Vec::with_capacity(episodes as usize);
        let mut steps_total = 0.0;
        for episode in 0..episodes {
            let mut env = env::reset(task, derive_seed(seed, &task.task_id, episode as u64))?;
            while !env.state().done {
                let dist = policy::forward(params, &env.state().observation)?;
                let mut best = 0;
                for (i, p) in dist.probs.iter().enumerate() {
                    if *p > dist.probs[best] {
                        best = i;
                    }
                }
                env.step(env::ActionId(best))?;
            }
            let success = env.state().success;
            outcomes.push(if success { 1.0 } else { 0.0 });
            steps_total += if success {
                env.state().step_index as f64
            } else {
                task.horizon_cap as f64
            };
        }
        let n = outcomes.len() as f64;
        let mean: f64 = outcomes.iter().sum::<f64>() / n;
        let var: f64 = outcomes
            .iter()
            .map(|o| (o - mean) * (o - mean))
            .sum::<f64>()
            / n;
        records.push(EvalRecord {
            update: 0,
            task_id: task.task_id.clone(),
            asr_mean: mean,
            asr_std: var.sqrt(),
            avg_steps: steps_total / n,
        });
    }
    Ok(records)
}

fn advantage_batch_for(
    algorithm: Algorithm,
    group: &rollout::RolloutGroup,
    cfg: &TrainConfig,
    value: Option<&ValueParams>,
) -> Result<grow::AdvantageBatch> {
    match algorithm {
        Algorithm::Grow => Ok(grow::normalize_advantages(&grow::decompose(
            group, cfg.gamma,
        )?)),
        Algorithm::GrpoTraj => baselines::grpo_advantage_batch(group, cfg.gamma),
        Algorithm::Ppo => {
            let vp = value.expect("ppo runs carry value params");
            baselines::ppo_advantage_batch(
                group,
                vp,
                GAEConfig {
                    gamma: cfg.gamma,
                    lambda: cfg.gae_lambda,
                },
            )
        }
    }
}

/// Optional penalty toward the snapshot policy, sharing the objective's
/// per-sample weighting: `kl_coef * sum w * (log pi - log pi_old)`. Over
/// snapshot-sampled actions its expectation is `-kl_coef * KL(old || pi)`,
/// zero exactly at the snapshot, so adding it to the ascent objective
/// penalizes movement away from the sampling policy.
fn kl_penalty_gradient(
    batch: &grow::AdvantageBatch,
    params: &PolicyParams,
    kl_coef: f64,
) -> Result<(f64, GradientVector)> {
    let mut grad = GradientVector::zeros(params.theta.len());
    let mut value = 0.0;
    let g = batch.group_size as f64;
    for sample in &batch.samples {
        let lp = policy::log_prob(params, &sample.features, env::ActionId(sample.action))?;
        let weight = 1.0 / (g * sample.traj_len as f64);
        value += kl_coef * weight * (lp - sample.old_log_prob);
        let glp = policy::grad_log_prob(params, &sample.features, env::ActionId(sample.action))?;
        for (out, gv) in grad.grad.iter_mut().zip(&glp.grad) {
            *out += kl_coef * weight * gv;
        }
    }
    Ok((value, grad))
}

/// Run one seeded training job.
pub fn train(config: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    config.validate()?;
    let tasks = config.resolved_tasks()?;
    let family = tasks[0].family;
    let layout = PolicyLayout::new(
        family.feature_len(),
        vec![config.hidden_dim],
        family.action_count(),
    )?;

    let mut params = policy::init_params(derive_seed(seed, "policy-init", 0), &layout)?;
    let mut opt = OptimizerState::new(params.theta.len());
    let adam = config.adam();

    let mut value = if config.algorithm == Algorithm::Ppo {
        Some(baselines::init_value_params(
            derive_seed(seed, "value-init", 0),
            family.feature_len(),
            vec![config.hidden_dim],
        )?)
    } else {
        None
    };
    let mut value_opt = value.as_ref().map(|v| OptimizerState::new(v.theta.len()));

    let mut metrics = Metrics::default();
    let mut checkpoints = Vec::new();

    for update in 1..=config.updates {
        let scheduled: Vec<&TaskSpec> = match config.task_schedule {
            TaskSchedule::RoundRobin => {
                vec![&tasks[(update as usize - 1) % tasks.len()]]
            }
            TaskSchedule::AllTasks => tasks.iter().collect(),
        };

        let old = snapshot_old_policy(&params);
        let mut grad_sum = GradientVector::zeros(params.theta.len());
        let n_scheduled = scheduled.len() as f64;

        for task in scheduled {
            let group_seed = derive_seed(seed, &format!("rollout/{}", task.task_id), update as u64);
            let group = rollout::collect_group(task, &old, config.group_size, group_seed)
                .map_err(|e| annotate_update(e, update))?;
            let batch = advantage_batch_for(config.algorithm, &group, config, value.as_ref())
                .map_err(|e| annotate_update(e, update))?;
            let eval = grow::evaluate_objective(&batch, &params, config.eps)
                .map_err(|e| annotate_update(e, update))?;

            let mut objective = eval.value;
            for (out, g) in grad_sum.grad.iter_mut().zip(&eval.gradient.grad) {
                *out += g / n_scheduled;
            }
            if config.kl_coef > 0.0 {
                let (kl_value, kl_grad) = kl_penalty_gradient(&batch, &params, config.kl_coef)
                    .map_err(|e| annotate_update(e, update))?;
                objective += kl_value;
                for (out, g) in grad_sum.grad.iter_mut().zip(&kl_grad.grad) {
                    *out += g / n_scheduled;
                }
            }

            // Critic regression toward the discounted returns-to-go.
            if let (Some(vp), Some(vo)) = (value.as_mut(), value_opt.as_mut()) {
                let targets = baselines::value_targets(&batch);
                let vgrad = baselines::value_loss_gradient(vp, &targets)
                    .map_err(|e| annotate_update(e, update))?;
                let descent: Vec<f64> = vgrad.grad.iter().map(|g| -config.value_coef * g).collect();
                adam_step(&mut vp.theta, &descent, vo, config.learning_rate, &adam)
                    .map_err(|e| annotate_update(e, update))?;
            }

            metrics.records.push(MetricRecord::Update(UpdateRecord {
                update,
                task_id: task.task_id.clone(),
                success_rate: grow::group_return_mean(&group),
                mean_traj_len: group.total_steps() as f64 / group.group_size() as f64,
                env_steps: group.total_steps() as u64,
                objective,
                grad_norm: eval.gradient.norm(),
                clip_active_fraction: eval.clip_active_fraction,
                degenerate: batch.degenerate,
            }));
        }

        let stepped = adaptive_update(&params, &grad_sum, &opt, config.learning_rate, &adam)
            .map_err(|e| annotate_update(e, update))?;
        params = stepped.0;
        opt = stepped.1;

        if update % config.eval_interval == 0 || update == config.updates {
            let mut evals = evaluate(
                &params,
                &tasks,
                config.eval_episodes,
                derive_seed(seed, "eval", update as u64),
            )?;
            for e in evals.iter_mut() {
                e.update = update;
            }
            metrics
                .records
                .extend(evals.into_iter().map(MetricRecord::Eval));
            checkpoints.push((update, params.clone()));
        }
    }

    if checkpoints.last().map(|(u, _)| *u) != Some(config.updates) {
        checkpoints.push((config.updates, params.clone()));
    }

    Ok(TrainOutput {
        metrics,
        final_params: params,
        final_value: value,
        checkpoints,
    })
}

fn annotate_update(e: GrowError, update: u32) -> GrowError {
    match e {
        GrowError::Numeric(msg) => GrowError::Numeric(format!("update {update}: {msg}")),
        other => other,
    }
}
