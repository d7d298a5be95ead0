//! Evasive-target pursuit on a torus grid.
//!
//! The target spawns at a fixed wrap distance from the agent and moves one
//! cell every `move_period` steps, always in the direction that maximizes
//! its wrap distance from the agent (ties broken in fixed order), so the
//! chase keeps reorienting as the agent closes in. The agent moves one cell
//! per step or stays; contact in either movement phase is a catch and ends
//! the episode. Motion is a pure function of the state, so the episode seed
//! only drives the spawn geometry.
//!
//! Observation layout (length 15): one-hot signed wrap offset `dx` over
//! -3..=3, one-hot `dy` over the same range, then a flag set when the
//! target is scheduled to move on the coming step.

use super::{ActionId, Difficulty, EnvState, Environment, StepOutcome, TaskSpec};
use crate::error::{GrowError, Result};
use crate::rng::SeedStream;

const OFFSET_SLOTS: usize = 7;
pub(crate) const FEATURE_LEN: usize = 2 * OFFSET_SLOTS + 1;

const DIRS: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
const STAY: usize = 4;

pub struct PursuitEnv {
    task: TaskSpec,
    grid: i64,
    move_period: u32,
    agent: (i64, i64),
    target: (i64, i64),
    step_index: u32,
    state: EnvState,
}

fn wrap(v: i64, grid: i64) -> i64 {
    v.rem_euclid(grid)
}

fn wrap_signed(d: i64, grid: i64) -> i64 {
    let m = d.rem_euclid(grid);
    if m > grid / 2 {
        m - grid
    } else {
        m
    }
}

fn wrap_dist(a: (i64, i64), b: (i64, i64), grid: i64) -> i64 {
    wrap_signed(b.0 - a.0, grid).abs() + wrap_signed(b.1 - a.1, grid).abs()
}

/// Evasive move: the neighbor cell farthest (wrap distance) from the agent,
/// first match in `DIRS` order on ties.
fn flee_step(target: (i64, i64), agent: (i64, i64), grid: i64) -> (i64, i64) {
    let mut best = target;
    let mut best_dist = -1;
    for (dx, dy) in DIRS {
        let cand = (wrap(target.0 + dx, grid), wrap(target.1 + dy, grid));
        let dist = wrap_dist(agent, cand, grid);
        if dist > best_dist {
            best = cand;
            best_dist = dist;
        }
    }
    best
}

impl PursuitEnv {
    pub fn new(task: TaskSpec, mut stream: SeedStream) -> Result<Self> {
        let (grid, move_period, spawn_dist) = match task.difficulty {
            Difficulty::Pursuit {
                grid,
                move_period,
                spawn_dist,
            } => (grid as i64, move_period, spawn_dist as i64),
            _ => {
                return Err(GrowError::Config(
                    "pursuit task with non-pursuit difficulty".into(),
                ))
            }
        };

        let agent = (
            stream.below(grid as u64) as i64,
            stream.below(grid as u64) as i64,
        );

        // All offsets at exactly the spawn wrap distance, in a fixed order.
        let half = grid / 2;
        let mut offsets = Vec::new();
        for dx in -half..=half {
            for dy in -half..=half {
                if dx.abs() + dy.abs() == spawn_dist {
                    offsets.push((dx, dy));
                }
            }
        }
        let (dx, dy) = offsets[stream.below(offsets.len() as u64) as usize];
        let target = (wrap(agent.0 + dx, grid), wrap(agent.1 + dy, grid));

        let mut env = PursuitEnv {
            task,
            grid,
            move_period,
            agent,
            target,
            step_index: 0,
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

    /// The target moves on steps whose pre-step index ends a period.
    fn target_moves_now(&self) -> bool {
        self.step_index % self.move_period == self.move_period - 1
    }
}

/// Terminal-observation success predicate: both wrap offsets are zero.
pub(crate) fn decode_success(features: &[f64]) -> bool {
    let center = OFFSET_SLOTS / 2;
    super::feature_argmax(&features[..OFFSET_SLOTS]) == center
        && super::feature_argmax(&features[OFFSET_SLOTS..2 * OFFSET_SLOTS]) == center
}

impl Environment for PursuitEnv {
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
        if action.0 > STAY {
            return Err(GrowError::Usage(format!(
                "pursuit action {} out of range",
                action.0
            )));
        }

        let move_scheduled = self.target_moves_now();
        if action.0 != STAY {
            let (dx, dy) = DIRS[action.0];
            self.agent = (
                wrap(self.agent.0 + dx, self.grid),
                wrap(self.agent.1 + dy, self.grid),
            );
        }
        let mut success = self.agent == self.target;
        if !success && move_scheduled {
            self.target = flee_step(self.target, self.agent, self.grid);
            success = self.agent == self.target;
        }

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
        let dx = wrap_signed(self.target.0 - self.agent.0, self.grid);
        let dy = wrap_signed(self.target.1 - self.agent.1, self.grid);
        let center = (OFFSET_SLOTS / 2) as i64;
        f[(dx + center) as usize] = 1.0;
        f[OFFSET_SLOTS + (dy + center) as usize] = 1.0;
        f[2 * OFFSET_SLOTS] = if self.target_moves_now() { 1.0 } else { 0.0 };
        f
    }

    fn reference_action(&self) -> ActionId {
        // Chase the target's position after its scheduled evasive move.
        let predicted = if self.target_moves_now() {
            flee_step(self.target, self.agent, self.grid)
        } else {
            self.target
        };
        let dx = wrap_signed(predicted.0 - self.agent.0, self.grid);
        let dy = wrap_signed(predicted.1 - self.agent.1, self.grid);
        if dx == 0 && dy == 0 {
            return ActionId(STAY);
        }
        let action = if dx.abs() >= dy.abs() {
            if dx > 0 {
                3
            } else {
                2
            }
        } else if dy > 0 {
            1
        } else {
            0
        };
        ActionId(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{find_task, reset};

    fn decode_offsets(obs: &[f64]) -> (i64, i64) {
        let center = (OFFSET_SLOTS / 2) as i64;
        let dx = crate::env::feature_argmax(&obs[..OFFSET_SLOTS]) as i64 - center;
        let dy = crate::env::feature_argmax(&obs[OFFSET_SLOTS..2 * OFFSET_SLOTS]) as i64 - center;
        (dx, dy)
    }

    #[test]
    fn spawn_distance_is_fixed() {
        let task = find_task("pursuit/drift-7").unwrap();
        for seed in 0..40 {
            let env = reset(&task, seed).unwrap();
            let (dx, dy) = decode_offsets(&env.state().observation);
            assert_eq!(dx.abs() + dy.abs(), 5, "seed {seed}");
        }
    }

    #[test]
    fn target_advances_on_its_schedule_under_no_ops() {
        let task = find_task("pursuit/drift-7").unwrap();
        let mut env = reset(&task, 6).unwrap();
        let mut offsets = vec![decode_offsets(&env.state().observation)];
        for _ in 0..12 {
            env.step(ActionId(STAY)).unwrap();
            offsets.push(decode_offsets(&env.state().observation));
        }
        // move_period = 2: the offset changes exactly on every second step.
        for (i, pair) in offsets.windows(2).enumerate() {
            let moved = pair[0] != pair[1];
            let scheduled = (i as u32) % 2 == 1;
            assert_eq!(moved, scheduled, "step {}", i + 1);
        }
    }

    #[test]
    fn evasion_never_reduces_distance_when_far() {
        // While the target is short of the wrap-distance ceiling, fleeing
        // strictly increases its distance from a stationary agent.
        let task = find_task("pursuit/drift-7").unwrap();
        let mut env = reset(&task, 9).unwrap();
        let mut prev = {
            let (dx, dy) = decode_offsets(&env.state().observation);
            dx.abs() + dy.abs()
        };
        for _ in 0..8 {
            env.step(ActionId(STAY)).unwrap();
            let (dx, dy) = decode_offsets(&env.state().observation);
            let dist = dx.abs() + dy.abs();
            assert!(
                dist >= prev,
                "fleeing target must not approach: {dist} < {prev}"
            );
            prev = dist;
        }
    }

    #[test]
    fn no_op_replay_is_deterministic() {
        let task = find_task("pursuit/drift-7").unwrap();
        let mut a = reset(&task, 21).unwrap();
        let mut b = reset(&task, 21).unwrap();
        for _ in 0..30 {
            if a.state().done {
                break;
            }
            let oa = a.step(ActionId(STAY)).unwrap();
            let ob = b.step(ActionId(STAY)).unwrap();
            assert_eq!(oa.next_state.observation, ob.next_state.observation);
        }
    }

    #[test]
    fn scripted_chase_catches_quickly() {
        let task = find_task("pursuit/drift-7").unwrap();
        for seed in 0..30 {
            let mut env = reset(&task, seed).unwrap();
            while !env.state().done {
                env.step(env.reference_action()).unwrap();
            }
            assert!(env.state().success, "seed {seed}");
            assert!(
                env.state().step_index <= 25,
                "seed {seed}: {}",
                env.state().step_index
            );
        }
    }

    #[test]
    fn catch_sets_success_and_done_with_zero_offset() {
        let task = find_task("pursuit/drift-5").unwrap();
        let mut env = reset(&task, 3).unwrap();
        while !env.state().done {
            env.step(env.reference_action()).unwrap();
        }
        assert!(env.state().success);
        assert_eq!(decode_offsets(&env.state().observation), (0, 0));
        assert!(decode_success(&env.state().observation));
    }
}
