//! Randomized numerical verification of the core invariants.
//!
//! Each check runs on freshly synthesized rollout groups and random policy
//! pairs, all derived from one seed so a report is reproducible down to the
//! byte. The suite covers: the exact split of the surrogate on uniform-
//! length groups, the reduction of sample-level advantages to trajectory-
//! level z-scores at `gamma = 1`, advantage normalization, reward
//! monotonicity, the closed form of the average discount coefficient,
//! gradient fidelity against central differences, and the step-length
//! clustering of scripted near-optimal policies across the task registry.

use crate::baselines;
use crate::env::{self, ActionId};
use crate::grow::{self, SurrogateReport};
use crate::policy::{self, PolicyLayout, PolicyParams};
use crate::rng::{derive_seed, SeedStream};
use crate::rollout::{RolloutGroup, Trajectory, TrajectoryStep};

/// Instance counts for the randomized checks.
#[derive(Debug, Clone, Copy)]
pub struct VerifySizes {
    /// Synthetic groups per group-based check.
    pub groups: usize,
    /// Random instances for the gradient checks.
    pub grad_checks: usize,
}

impl Default for VerifySizes {
    fn default() -> Self {
        VerifySizes {
            groups: 200,
            grad_checks: 25,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Serialized instance descriptor for replaying a failure.
    pub failing_instance: Option<String>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub schema: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
    /// One concrete surrogate split, for inspection.
    pub example_surrogate: SurrogateReport,
}

impl VerifyReport {
    /// Deterministic plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = format!("verification report (seed {})\n", self.seed);
        for check in &self.checks {
            let mark = if check.passed { "pass" } else { "FAIL" };
            out.push_str(&format!("  [{mark}] {}: {}\n", check.name, check.detail));
            if let Some(instance) = &check.failing_instance {
                out.push_str(&format!("         failing instance: {instance}\n"));
            }
        }
        out.push_str(if self.all_passed {
            "all checks passed\n"
        } else {
            "VERIFICATION FAILED\n"
        });
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Build a synthetic rollout group with the given per-trajectory lengths
/// and returns; features are uniform in `[-1, 1]` and log-probs are
/// recorded under `params`.
pub fn synthetic_group(
    params: &PolicyParams,
    spec: &[(usize, u8)],
    stream: &mut SeedStream,
) -> RolloutGroup {
    let dim = params.layout.input_dim;
    let actions = params.layout.action_count;
    let trajectories: Vec<Trajectory> = spec
        .iter()
        .enumerate()
        .map(|(i, &(h, ret))| {
            let steps: Vec<TrajectoryStep> = (0..h)
                .map(|_| {
                    let features: Vec<f64> = (0..dim).map(|_| stream.uniform(-1.0, 1.0)).collect();
                    let action = stream.below(actions as u64) as usize;
                    let old_log_prob =
                        policy::log_prob(params, &features, ActionId(action)).expect("finite");
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
        old_policy_version: params.version,
        group_seed: 0,
    }
}

fn small_layout() -> PolicyLayout {
    PolicyLayout::new(6, vec![8], 4).unwrap()
}

/// Random returns that are not all equal (so groups are non-degenerate).
fn mixed_returns(g: usize, stream: &mut SeedStream) -> Vec<u8> {
    loop {
        let returns: Vec<u8> = (0..g).map(|_| stream.below(2) as u8).collect();
        if returns.iter().any(|&r| r != returns[0]) {
            return returns;
        }
    }
}

const GAMMAS: [f64; 3] = [0.9, 0.95, 0.995];

/// Surrogate split residual on uniform-length groups:
/// `|J - (C * J_traj + J_step)| <= 1e-9 * max(1, |J|)`.
pub fn check_decomposition_identity(seed: u64, rounds: usize) -> CheckResult {
    let mut stream = SeedStream::new(derive_seed(seed, "verify/identity", 0));
    let layout = small_layout();
    let mut worst = 0.0f64;
    let mut failing = None;
    for round in 0..rounds {
        let h = 5 + stream.below(36) as usize; // 5..=40
        let gamma = GAMMAS[stream.below(3) as usize];
        let old = policy::init_params(stream.next_u64(), &layout).unwrap();
        let fresh = policy::init_params(stream.next_u64(), &layout).unwrap();
        let spec: Vec<(usize, u8)> = mixed_returns(8, &mut stream)
            .into_iter()
            .map(|r| (h, r))
            .collect();
        let group = synthetic_group(&old, &spec, &mut stream);
        let report = grow::surrogate_decomposition(&group, &fresh, gamma).unwrap();
        let bound = 1e-9 * report.j_full.abs().max(1.0);
        let scaled = report.residual.abs() / bound.max(f64::MIN_POSITIVE);
        if report.residual.abs() > bound && failing.is_none() {
            failing = Some(format!(
                "{{\"round\":{round},\"h\":{h},\"gamma\":{gamma},\"residual\":{}}}",
                report.residual
            ));
        }
        worst = worst.max(scaled * 1e-9);
    }
    CheckResult {
        name: "decomposition_identity".into(),
        passed: failing.is_none(),
        detail: format!("worst relative residual {worst:.3e} over {rounds} uniform-length groups"),
        failing_instance: failing,
    }
}

/// At `gamma = 1` with uniform lengths, sample advantages equal the
/// trajectory-level z-scores broadcast per step, within 1e-12.
pub fn check_grpo_reduction(seed: u64, rounds: usize) -> CheckResult {
    let mut stream = SeedStream::new(derive_seed(seed, "verify/reduction", 0));
    let layout = small_layout();
    let mut worst = 0.0f64;
    let mut failing = None;
    for round in 0..rounds {
        let h = 1 + stream.below(20) as usize;
        let g = 2 + stream.below(7) as usize;
        let old = policy::init_params(stream.next_u64(), &layout).unwrap();
        let spec: Vec<(usize, u8)> = (0..g).map(|_| (h, stream.below(2) as u8)).collect();
        let group = synthetic_group(&old, &spec, &mut stream);
        let batch = grow::normalize_advantages(&grow::decompose(&group, 1.0).unwrap());
        let traj = baselines::grpo_trajectory_advantages(&group).unwrap();
        for (sample, adv) in batch.samples.iter().zip(&batch.advantages) {
            let gap = (adv - traj.advantages[sample.traj_index]).abs();
            worst = worst.max(gap);
            if gap > 1e-12 && failing.is_none() {
                failing = Some(format!(
                    "{{\"round\":{round},\"h\":{h},\"g\":{g},\"gap\":{gap}}}"
                ));
            }
        }
    }
    CheckResult {
        name: "grpo_reduction".into(),
        passed: failing.is_none(),
        detail: format!("worst broadcast gap {worst:.3e} over {rounds} gamma=1 groups"),
        failing_instance: failing,
    }
}

/// Non-degenerate batches have mean 0 and standard deviation 1 within
/// 1e-9; all-equal-reward groups degenerate to all-zero advantages.
pub fn check_normalization(seed: u64, rounds: usize) -> CheckResult {
    let mut stream = SeedStream::new(derive_seed(seed, "verify/normalization", 0));
    let layout = small_layout();
    let mut worst = 0.0f64;
    let mut failing = None;
    for round in 0..rounds {
        let g = 2 + stream.below(7) as usize;
        let gamma = GAMMAS[stream.below(3) as usize];
        let old = policy::init_params(stream.next_u64(), &layout).unwrap();
        let returns = mixed_returns(g, &mut stream);
        let spec: Vec<(usize, u8)> = returns
            .into_iter()
            .map(|r| (1 + stream.below(30) as usize, r))
            .collect();
        let group = synthetic_group(&old, &spec, &mut stream);
        let batch = grow::normalize_advantages(&grow::decompose(&group, gamma).unwrap());
        let n = batch.advantages.len() as f64;
        let mean = batch.advantages.iter().sum::<f64>() / n;
        let std = (batch
            .advantages
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n)
            .sqrt();
        let err = mean.abs().max((std - 1.0).abs());
        worst = worst.max(err);
        if err > 1e-9 && failing.is_none() {
            failing = Some(format!(
                "{{\"round\":{round},\"mean\":{mean},\"std\":{std}}}"
            ));
        }

        // Degenerate path: all returns zero.
        let zero_spec: Vec<(usize, u8)> =
            (0..g).map(|_| (1 + stream.below(10) as usize, 0)).collect();
        let zero_group = synthetic_group(&old, &zero_spec, &mut stream);
        let zero_batch = grow::normalize_advantages(&grow::decompose(&zero_group, gamma).unwrap());
        if !(zero_batch.degenerate && zero_batch.advantages.iter().all(|&a| a == 0.0)) {
            failing.get_or_insert(format!("{{\"round\":{round},\"degenerate\":false}}"));
        }
    }
    CheckResult {
        name: "advantage_normalization".into(),
        passed: failing.is_none(),
        detail: format!("worst moment error {worst:.3e} over {rounds} groups"),
        failing_instance: failing,
    }
}

/// Discounted rewards of successful trajectories increase strictly toward
/// the terminal step (gamma < 1), stay in `[0, 1]`, and end at exactly 1.
pub fn check_monotonicity(seed: u64, rounds: usize) -> CheckResult {
    let mut stream = SeedStream::new(derive_seed(seed, "verify/monotonicity", 0));
    let layout = small_layout();
    let mut failing = None;
    for round in 0..rounds {
        let gamma = GAMMAS[stream.below(3) as usize];
        let old = policy::init_params(stream.next_u64(), &layout).unwrap();
        let spec: Vec<(usize, u8)> = (0..4)
            .map(|_| (1 + stream.below(80) as usize, stream.below(2) as u8))
            .collect();
        let group = synthetic_group(&old, &spec, &mut stream);
        let sg = grow::decompose(&group, gamma).unwrap();
        for (i, traj) in group.trajectories.iter().enumerate() {
            let rewards: Vec<f64> = sg
                .samples
                .iter()
                .filter(|s| s.traj_index == i)
                .map(|s| s.discounted_reward)
                .collect();
            let bounded = rewards.iter().all(|&r| (0.0..=1.0).contains(&r));
            let shape_ok = if traj.episodic_return == 1 {
                rewards.windows(2).all(|w| w[0] < w[1]) && *rewards.last().unwrap() == 1.0
            } else {
                rewards.iter().all(|&r| r == 0.0)
            };
            if !(bounded && shape_ok) && failing.is_none() {
                failing = Some(format!(
                    "{{\"round\":{round},\"traj\":{i},\"gamma\":{gamma},\"return\":{}}}",
                    traj.episodic_return
                ));
            }
        }
    }
    CheckResult {
        name: "reward_monotonicity".into(),
        passed: failing.is_none(),
        detail: format!("monotone, bounded, terminal-1 over {rounds} groups"),
        failing_instance: failing,
    }
}

/// Closed-form average discount coefficient vs direct summation (1e-12)
/// and its bounds: 1 exactly for single-step trajectories, strictly inside
/// `(0, 1)` for longer ones.
pub fn check_discount_coefficient(seed: u64, rounds: usize) -> CheckResult {
    let mut stream = SeedStream::new(derive_seed(seed, "verify/coefficient", 0));
    let mut worst = 0.0f64;
    let mut failing = None;
    for round in 0..rounds {
        let gamma = stream.uniform(0.05, 0.9995);
        let h = 1 + stream.below(80) as u32;
        let c = grow::avg_discount_coeff(gamma, h).unwrap();
        let direct = (1..=h).map(|t| gamma.powi((h - t) as i32)).sum::<f64>() / h as f64;
        let gap = (c - direct).abs();
        worst = worst.max(gap);
        let bounds_ok = if h == 1 { c == 1.0 } else { c > 0.0 && c < 1.0 };
        if (gap > 1e-12 || !bounds_ok) && failing.is_none() {
            failing = Some(format!(
                "{{\"round\":{round},\"gamma\":{gamma},\"h\":{h},\"gap\":{gap}}}"
            ));
        }
    }
    CheckResult {
        name: "discount_coefficient".into(),
        passed: failing.is_none(),
        detail: format!("worst closed-form gap {worst:.3e} over {rounds} draws"),
        failing_instance: failing,
    }
}

/// Analytic gradients (policy log-prob, clipped objective, value loss)
/// against central finite differences, worst relative error 1e-4.
pub fn check_gradient_fidelity(seed: u64, rounds: usize) -> CheckResult {
    let mut stream = SeedStream::new(derive_seed(seed, "verify/gradients", 0));
    let mut worst = 0.0f64;
    let mut failing = None;
    let mut saw_clipped = false;
    let mut saw_unclipped = false;
    for round in 0..rounds {
        // Alternate between a 92- and a 244-parameter policy.
        let layout = if round % 2 == 0 {
            small_layout()
        } else {
            PolicyLayout::new(10, vec![16], 4).unwrap()
        };
        let old = policy::init_params(stream.next_u64(), &layout).unwrap();
        let mut fresh = policy::init_params(stream.next_u64(), &layout).unwrap();
        for v in fresh.theta.iter_mut() {
            *v *= 1.5; // move away from the snapshot so both branches occur
        }

        // Policy log-prob gradient.
        let features: Vec<f64> = (0..layout.input_dim)
            .map(|_| stream.uniform(-1.0, 1.0))
            .collect();
        let action = ActionId(stream.below(layout.action_count as u64) as usize);
        let err = policy::gradient_check(&fresh, &features, action, 1e-5).unwrap();
        worst = worst.max(err);
        if err > 1e-4 && failing.is_none() {
            failing = Some(format!(
                "{{\"round\":{round},\"check\":\"log_prob\",\"err\":{err}}}"
            ));
        }

        // Objective gradient.
        let spec: Vec<(usize, u8)> = mixed_returns(4, &mut stream)
            .into_iter()
            .map(|r| (1 + stream.below(8) as usize, r))
            .collect();
        let group = synthetic_group(&old, &spec, &mut stream);
        let batch = grow::normalize_advantages(&grow::decompose(&group, 0.9).unwrap());
        let eval = grow::evaluate_objective(&batch, &fresh, 0.2).unwrap();
        saw_clipped |= eval.clip_active_fraction > 0.0;
        saw_unclipped |= eval.clip_active_fraction < 1.0;
        let h = 1e-5;
        for k in 0..fresh.theta.len() {
            let mut plus = fresh.clone();
            plus.theta[k] += h;
            let mut minus = fresh.clone();
            minus.theta[k] -= h;
            let num = (grow::clipped_objective(&batch, &plus, 0.2).unwrap()
                - grow::clipped_objective(&batch, &minus, 0.2).unwrap())
                / (2.0 * h);
            let denom = eval.gradient.grad[k].abs().max(num.abs()).max(1e-6);
            let err = (eval.gradient.grad[k] - num).abs() / denom;
            worst = worst.max(err);
            if err > 1e-4 && failing.is_none() {
                failing = Some(format!(
                    "{{\"round\":{round},\"check\":\"objective\",\"coord\":{k},\"err\":{err}}}"
                ));
            }
        }

        // Value loss gradient.
        let vp = baselines::init_value_params(stream.next_u64(), 6, vec![8]).unwrap();
        let vbatch: Vec<(Vec<f64>, f64)> = (0..6)
            .map(|_| {
                let f: Vec<f64> = (0..6).map(|_| stream.uniform(-1.0, 1.0)).collect();
                (f, stream.uniform(0.0, 1.0))
            })
            .collect();
        let vgrad = baselines::value_loss_gradient(&vp, &vbatch).unwrap();
        for k in 0..vp.theta.len() {
            let mut plus = vp.clone();
            plus.theta[k] += h;
            let mut minus = vp.clone();
            minus.theta[k] -= h;
            let num = (baselines::value_loss(&plus, &vbatch).unwrap()
                - baselines::value_loss(&minus, &vbatch).unwrap())
                / (2.0 * h);
            let denom = vgrad.grad[k].abs().max(num.abs()).max(1e-6);
            let err = (vgrad.grad[k] - num).abs() / denom;
            worst = worst.max(err);
            if err > 1e-4 && failing.is_none() {
                failing = Some(format!(
                    "{{\"round\":{round},\"check\":\"value\",\"coord\":{k},\"err\":{err}}}"
                ));
            }
        }
    }
    if !(saw_clipped && saw_unclipped) && failing.is_none() {
        failing = Some("{\"check\":\"clip branches not both exercised\"}".into());
    }
    CheckResult {
        name: "gradient_fidelity".into(),
        passed: failing.is_none(),
        detail: format!("worst relative error {worst:.3e} over {rounds} instances, both clip branches exercised"),
        failing_instance: failing,
    }
}

/// Scripted near-optimal step counts cluster per task: coefficient of
/// variation at most 0.3 over 30 seeds.
pub fn check_step_clustering(seed: u64) -> CheckResult {
    let mut details = Vec::new();
    let mut failing = None;
    for task in env::list_tasks() {
        let mut lengths = Vec::with_capacity(30);
        for episode in 0..30 {
            let mut e = env::reset(&task, derive_seed(seed, &task.task_id, episode)).unwrap();
            while !e.state().done {
                let a = e.reference_action();
                e.step(a).unwrap();
            }
            if !e.state().success {
                failing.get_or_insert(format!(
                    "{{\"task\":\"{}\",\"episode\":{episode},\"failed\":true}}",
                    task.task_id
                ));
            }
            lengths.push(e.state().step_index as f64);
        }
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let var =
            lengths.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / lengths.len() as f64;
        let cv = var.sqrt() / mean;
        details.push(format!("{} cv={cv:.3}", task.task_id));
        if cv > 0.3 && failing.is_none() {
            failing = Some(format!("{{\"task\":\"{}\",\"cv\":{cv}}}", task.task_id));
        }
    }
    CheckResult {
        name: "step_length_clustering".into(),
        passed: failing.is_none(),
        detail: details.join(", "),
        failing_instance: failing,
    }
}

/// Run the whole suite. `inject_fault` corrupts the first check's verdict
/// and exists only to exercise failure handling end to end.
pub fn run_verification(seed: u64, sizes: &VerifySizes, inject_fault: bool) -> VerifyReport {
    let mut checks = vec![
        check_decomposition_identity(seed, sizes.groups),
        check_grpo_reduction(seed, sizes.groups),
        check_normalization(seed, sizes.groups),
        check_monotonicity(seed, sizes.groups),
        check_discount_coefficient(seed, sizes.groups.max(100)),
        check_gradient_fidelity(seed, sizes.grad_checks),
        check_step_clustering(seed),
    ];
    if inject_fault {
        checks[0].passed = false;
        checks[0].detail = format!("{} [injected fault]", checks[0].detail);
        checks[0]
            .failing_instance
            .get_or_insert("{\"injected\":true}".into());
    }

    // One concrete surrogate split for the JSON report.
    let mut stream = SeedStream::new(derive_seed(seed, "verify/example", 0));
    let layout = small_layout();
    let old = policy::init_params(stream.next_u64(), &layout).unwrap();
    let fresh = policy::init_params(stream.next_u64(), &layout).unwrap();
    let spec: Vec<(usize, u8)> = mixed_returns(8, &mut stream)
        .into_iter()
        .map(|r| (12, r))
        .collect();
    let group = synthetic_group(&old, &spec, &mut stream);
    let example_surrogate = grow::surrogate_decomposition(&group, &fresh, 0.995).unwrap();

    let all_passed = checks.iter().all(|c| c.passed);
    VerifyReport {
        schema: "grow.verify.v1".into(),
        seed,
        checks,
        all_passed,
        example_surrogate,
    }
}

/// Round-trip helper for tests and the CLI: identical seeds and sizes give
/// identical rendered reports.
pub fn report_bytes(seed: u64, sizes: &VerifySizes, inject_fault: bool) -> String {
    run_verification(seed, sizes, inject_fault).render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let sizes = VerifySizes {
            groups: 40,
            grad_checks: 4,
        };
        let report = run_verification(7, &sizes, false);
        for check in &report.checks {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
        assert!(report.all_passed);
    }

    #[test]
    fn injected_fault_fails_the_suite() {
        let sizes = VerifySizes {
            groups: 5,
            grad_checks: 1,
        };
        let report = run_verification(7, &sizes, true);
        assert!(!report.all_passed);
        assert!(!report.checks[0].passed);
        assert!(report.checks[0].failing_instance.is_some());
    }

    #[test]
    fn reports_are_byte_identical_for_a_seed() {
        let sizes = VerifySizes {
            groups: 10,
            grad_checks: 2,
        };
        let a = report_bytes(42, &sizes, false);
        let b = report_bytes(42, &sizes, false);
        assert_eq!(a, b);
        let c = report_bytes(43, &sizes, false);
        assert_ne!(a, c);
    }

    #[test]
    fn report_json_parses_and_carries_schema() {
        let sizes = VerifySizes {
            groups: 5,
            grad_checks: 1,
        };
        let report = run_verification(1, &sizes, false);
        let json = report.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["schema"], "grow.verify.v1");
        assert!(value["example_surrogate"]["residual"].is_number());
    }
}
