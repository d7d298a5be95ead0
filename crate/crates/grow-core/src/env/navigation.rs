//! Key-door gridworld.
//!
//! An `N x N` grid is split by a wall at column `N/2` with a single door at
//! the wall's center row. The key sits two columns left of the door. The
//! agent spawns in the left region, the goal in the right region, both at
//! seed-determined cells. Entering the key cell picks the key up; the door
//! is passable only while holding it (or always, for unlocked variants).
//! Success is reaching the goal cell.
//!
//! Observation layout (length 125): one-hot agent cell over the family
//! maximum 7x7 grid (index `y * 7 + x`), one-hot goal cell over the same
//! grid, a key-held flag, then one-hot signed goal offsets `gx - ax` and
//! `gy - ay` over -6..=6. Smaller grids embed into the 7x7 indexing. The
//! offset channels carry the same information as the two cell one-hots;
//! they exist so relative position is directly readable, as it would be
//! from a rendered view.

use super::{ActionId, Difficulty, EnvState, Environment, StepOutcome, TaskSpec};
use crate::error::{GrowError, Result};
use crate::rng::SeedStream;

pub(crate) const MAX_GRID: usize = 7;
const OFFSET_SLOTS: usize = 2 * MAX_GRID - 1;
pub(crate) const FEATURE_LEN: usize = MAX_GRID * MAX_GRID * 2 + 1 + 2 * OFFSET_SLOTS;

const UP: usize = 0;
const DOWN: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    x: u32,
    y: u32,
}

pub struct NavigationEnv {
    task: TaskSpec,
    grid: u32,
    wall_x: u32,
    door: Cell,
    key: Cell,
    agent: Cell,
    goal: Cell,
    key_held: bool,
    state: EnvState,
}

impl NavigationEnv {
    pub fn new(task: TaskSpec, mut stream: SeedStream) -> Result<Self> {
        let (grid, locked) = match task.difficulty {
            Difficulty::Navigation { grid, locked } => (grid, locked),
            _ => {
                return Err(GrowError::Config(
                    "navigation task with non-navigation difficulty".into(),
                ))
            }
        };
        let wall_x = grid / 2;
        let door = Cell {
            x: wall_x,
            y: grid / 2,
        };
        let key = Cell {
            x: wall_x - 2,
            y: grid / 2,
        };
        let agent = Cell {
            x: stream.below(wall_x as u64) as u32,
            y: stream.below(grid as u64) as u32,
        };
        let goal = Cell {
            x: wall_x + 1 + stream.below((grid - wall_x - 1) as u64) as u32,
            y: stream.below(grid as u64) as u32,
        };
        let key_held = !locked || agent == key;

        let mut env = NavigationEnv {
            task,
            grid,
            wall_x,
            door,
            key,
            agent,
            goal,
            key_held,
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

    fn is_wall(&self, c: Cell) -> bool {
        c.x == self.wall_x && c != self.door
    }

    fn blocked(&self, c: Cell) -> bool {
        self.is_wall(c) || (c == self.door && !self.key_held)
    }
}

/// Terminal-observation success predicate: the agent one-hot coincides with
/// the goal one-hot.
pub(crate) fn decode_success(features: &[f64]) -> bool {
    let n = MAX_GRID * MAX_GRID;
    super::feature_argmax(&features[..n]) == super::feature_argmax(&features[n..2 * n])
}

impl Environment for NavigationEnv {
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
        if action.0 >= 4 {
            return Err(GrowError::Usage(format!(
                "navigation action {} out of range",
                action.0
            )));
        }

        let mut next = self.agent;
        match action.0 {
            UP => next.y = next.y.saturating_sub(1),
            DOWN => next.y = (next.y + 1).min(self.grid - 1),
            LEFT => next.x = next.x.saturating_sub(1),
            RIGHT => next.x = (next.x + 1).min(self.grid - 1),
            _ => unreachable!(),
        }
        if !self.blocked(next) {
            self.agent = next;
        }
        if self.agent == self.key {
            self.key_held = true;
        }

        let success = self.agent == self.goal;
        let step_index = self.state.step_index + 1;
        let done = success || step_index >= self.task.horizon_cap;
        self.state = EnvState {
            observation: self.featurize(),
            step_index,
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
        let n = MAX_GRID * MAX_GRID;
        f[(self.agent.y as usize) * MAX_GRID + self.agent.x as usize] = 1.0;
        f[n + (self.goal.y as usize) * MAX_GRID + self.goal.x as usize] = 1.0;
        f[2 * n] = if self.key_held { 1.0 } else { 0.0 };
        let dx = self.goal.x as i64 - self.agent.x as i64 + (MAX_GRID as i64 - 1);
        let dy = self.goal.y as i64 - self.agent.y as i64 + (MAX_GRID as i64 - 1);
        f[2 * n + 1 + dx as usize] = 1.0;
        f[2 * n + 1 + OFFSET_SLOTS + dy as usize] = 1.0;
        f
    }

    fn reference_action(&self) -> ActionId {
        let a = self.agent;
        let step_toward_x = |target: u32| if target < a.x { LEFT } else { RIGHT };
        let step_toward_y = |target: u32| if target < a.y { UP } else { DOWN };

        let action = if !self.key_held {
            if a.x != self.key.x {
                step_toward_x(self.key.x)
            } else {
                step_toward_y(self.key.y)
            }
        } else if a.x <= self.wall_x {
            // Through the door: align to the door row first, then cross.
            if a.y != self.door.y {
                step_toward_y(self.door.y)
            } else {
                RIGHT
            }
        } else if a.x != self.goal.x {
            step_toward_x(self.goal.x)
        } else {
            step_toward_y(self.goal.y)
        };
        ActionId(action)
    }
}
