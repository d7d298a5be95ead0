//! Ordered recipe execution with distractor actions.
//!
//! A task fixes a hidden recipe: `chain_len` distinct actions out of the
//! family's six, each of which must be pressed `reps` times (cumulatively,
//! in stage order) to advance. Off-recipe presses do nothing. The recipe is
//! derived from the task id, so it is a stable property of the task that a
//! policy can learn; the episode seed only drives the observation clutter,
//! four pseudo-random channels redrawn every step that the policy must
//! learn to ignore.
//!
//! Observation layout (length 15): one-hot completed-stage count over
//! stages 0..=8, rep progress within the current stage in `[0, 1]`, step
//! fraction in `[0, 1]`, then the four clutter channels in `[-1, 1]`.

use super::{ActionId, Difficulty, EnvState, Environment, StepOutcome, TaskSpec};
use crate::error::{GrowError, Result};
use crate::rng::{derive_seed, SeedStream};

pub(crate) const ACTION_COUNT: usize = 6;
const MAX_STAGES: usize = 8;
const CLUTTER_LEN: usize = 4;
pub(crate) const FEATURE_LEN: usize = MAX_STAGES + 1 + 2 + CLUTTER_LEN;

/// Recipe salt: fixed so `(salt, task_id)` pins each task's action order.
const RECIPE_SALT: u64 = 0x4348_4149_4e43_5246;

/// The stage-ordered action sequence for a task.
pub fn task_recipe(task: &TaskSpec) -> Result<Vec<usize>> {
    let chain_len = match task.difficulty {
        Difficulty::Chaincraft { chain_len, .. } => chain_len as usize,
        _ => {
            return Err(GrowError::Config(
                "chaincraft recipe for non-chaincraft task".into(),
            ))
        }
    };
    let mut stream = SeedStream::new(derive_seed(RECIPE_SALT, &task.task_id, 0));
    let mut actions: Vec<usize> = (0..ACTION_COUNT).collect();
    // Partial Fisher-Yates: the first chain_len entries form the recipe.
    for i in 0..chain_len.min(ACTION_COUNT - 1) {
        let j = i + stream.below((ACTION_COUNT - i) as u64) as usize;
        actions.swap(i, j);
    }
    Ok(actions[..chain_len].to_vec())
}

pub struct ChaincraftEnv {
    task: TaskSpec,
    recipe: Vec<usize>,
    reps_required: u32,
    completed: u32,
    reps_done: u32,
    step_index: u32,
    clutter: [f64; CLUTTER_LEN],
    clutter_stream: SeedStream,
    state: EnvState,
}

impl ChaincraftEnv {
    pub fn new(task: TaskSpec, mut stream: SeedStream) -> Result<Self> {
        let reps_required = match task.difficulty {
            Difficulty::Chaincraft { reps, .. } => reps,
            _ => {
                return Err(GrowError::Config(
                    "chaincraft task with non-chaincraft difficulty".into(),
                ))
            }
        };
        let recipe = task_recipe(&task)?;
        let mut clutter = [0.0; CLUTTER_LEN];
        for c in clutter.iter_mut() {
            *c = stream.uniform(-1.0, 1.0);
        }
        let mut env = ChaincraftEnv {
            task,
            recipe,
            reps_required,
            completed: 0,
            reps_done: 0,
            step_index: 0,
            clutter,
            clutter_stream: stream,
            state: EnvState {
                observation: Vec::new(),
                step_index: 0,
                done: false,
                success: false,
            },
        };
        env.state.observation = env.featurize();
        Ok(env)
    }

    fn chain_len(&self) -> u32 {
        self.recipe.len() as u32
    }
}

/// Terminal-observation success predicate: the completed-stage one-hot
/// points at the task's full chain length.
pub(crate) fn decode_success(task: &TaskSpec, features: &[f64]) -> Result<bool> {
    let chain_len = match task.difficulty {
        Difficulty::Chaincraft { chain_len, .. } => chain_len as usize,
        _ => {
            return Err(GrowError::Usage(
                "chaincraft decode on non-chaincraft task".into(),
            ))
        }
    };
    Ok(super::feature_argmax(&features[..MAX_STAGES + 1]) == chain_len)
}

impl Environment for ChaincraftEnv {
    fn task(&self) -> &TaskSpec {
        &self.task
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn step(&mut self, action: ActionId) -> Result<StepOutcome> {
        if self.state.done {
            return Err(GrowError::Usage("step on a finished episode".into()));
        }
        if action.0 >= ACTION_COUNT {
            return Err(GrowError::Usage(format!(
                "chaincraft action {} out of range",
                action.0
            )));
        }

        if self.completed < self.chain_len() && action.0 == self.recipe[self.completed as usize] {
            self.reps_done += 1;
            if self.reps_done == self.reps_required {
                self.completed += 1;
                self.reps_done = 0;
            }
        }
        for c in self.clutter.iter_mut() {
            *c = self.clutter_stream.uniform(-1.0, 1.0);
        }

        let success = self.completed == self.chain_len();
        self.step_index += 1;
        let done = success || self.step_index >= self.task.horizon_cap;
        self.state = EnvState {
            observation: self.featurize(),
            step_index: self.step_index,
            done,
            success,
        };
        Ok(StepOutcome {
            next_state: self.state.clone(),
            done,
            success,
        })
    }

    fn featurize(&self) -> Vec<f64> {
        let mut f = vec![0.0; FEATURE_LEN];
        f[self.completed as usize] = 1.0;
        f[MAX_STAGES + 1] = self.reps_done as f64 / self.reps_required as f64;
        f[MAX_STAGES + 2] = self.step_index as f64 / self.task.horizon_cap as f64;
        f[MAX_STAGES + 3..].copy_from_slice(&self.clutter);
        f
    }

    fn reference_action(&self) -> ActionId {
        let stage = (self.completed as usize).min(self.recipe.len() - 1);
        ActionId(self.recipe[stage])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{find_task, reset, ReplayStep};

    #[test]
    fn recipe_is_a_stable_task_property() {
        let task = find_task("chain/long-5x4").unwrap();
        let a = task_recipe(&task).unwrap();
        let b = task_recipe(&task).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        // Distinct stage actions.
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), a.len());
        assert!(a.iter().all(|&x| x < ACTION_COUNT));
    }

    #[test]
    fn fresh_episode_has_empty_inventory_and_recipe_set() {
        let task = find_task("chain/craft-4x3").unwrap();
        let env = reset(&task, 0).unwrap();
        let obs = &env.state().observation;
        // No stage completed, no rep progress, step fraction zero.
        assert_eq!(obs[0], 1.0);
        assert!(obs[1..=MAX_STAGES].iter().all(|&v| v == 0.0));
        assert_eq!(obs[MAX_STAGES + 1], 0.0);
        assert_eq!(obs[MAX_STAGES + 2], 0.0);
        // Recipe derived and non-empty for the task.
        assert_eq!(task_recipe(&task).unwrap().len(), 4);
    }

    #[test]
    fn scripted_recipe_completes_in_exactly_chain_times_reps() {
        let task = find_task("chain/long-5x4").unwrap();
        for seed in 0..5 {
            let mut env = reset(&task, seed).unwrap();
            let mut replay = Vec::new();
            while !env.state().done {
                let a = env.reference_action();
                let out = env.step(a).unwrap();
                replay.push(ReplayStep {
                    step_index: out.next_state.step_index,
                    action: a.0 as u32,
                    features: out.next_state.observation.clone(),
                    done: out.done,
                    success: out.success,
                });
            }
            assert_eq!(env.state().step_index, 5 * 4);
            assert!(env.state().success);
            assert_eq!(crate::env::verify(&task, &replay).unwrap(), 1);
        }
    }

    #[test]
    fn distractor_actions_do_not_advance_stages() {
        let task = find_task("chain/craft-4x3").unwrap();
        let recipe = task_recipe(&task).unwrap();
        let distractor = (0..ACTION_COUNT).find(|a| !recipe.contains(a)).unwrap();
        let mut env = reset(&task, 1).unwrap();
        for _ in 0..10 {
            env.step(ActionId(distractor)).unwrap();
        }
        let obs = &env.state().observation;
        assert_eq!(obs[0], 1.0, "still at stage zero");
        assert_eq!(obs[MAX_STAGES + 1], 0.0, "no rep progress");
    }

    #[test]
    fn out_of_order_presses_are_ignored() {
        // Pressing stage 2's action while stage 1 is open must not count.
        let task = find_task("chain/craft-4x3").unwrap();
        let recipe = task_recipe(&task).unwrap();
        let mut env = reset(&task, 2).unwrap();
        for _ in 0..6 {
            env.step(ActionId(recipe[1])).unwrap();
        }
        assert_eq!(env.state().observation[0], 1.0);
        // Now complete in order and confirm it still works.
        while !env.state().done {
            env.step(env.reference_action()).unwrap();
        }
        assert!(env.state().success);
    }

    #[test]
    fn clutter_varies_with_seed_but_progress_does_not() {
        let task = find_task("chain/craft-4x3").unwrap();
        let a = reset(&task, 1).unwrap();
        let b = reset(&task, 2).unwrap();
        let (oa, ob) = (&a.state().observation, &b.state().observation);
        assert_eq!(oa[..MAX_STAGES + 3], ob[..MAX_STAGES + 3]);
        assert_ne!(oa[MAX_STAGES + 3..], ob[MAX_STAGES + 3..]);
    }
}
