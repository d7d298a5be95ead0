//! Seeded sparse-reward multi-turn environments.
//!
//! Three families stand in for embodied navigation, GUI procedure
//! execution, and dynamic pursuit:
//!
//! - `navigation`: key-door gridworld. The agent fetches a key, passes a
//!   door in a dividing wall, and reaches a goal cell.
//! - `chaincraft`: an ordered multi-stage recipe with distractor actions
//!   and observation clutter.
//! - `pursuit`: a drifting target on a torus grid that must be chased down
//!   and reacquired after direction changes.
//!
//! Rewards are episodic and binary: no per-step scalar is ever exposed;
//! [`verify`] decodes success from the terminal observation of a replay.
//! Every environment is deterministic given `(task, episode_seed)` and the
//! action sequence; all randomness flows through [`SeedStream`]s derived
//! from the episode seed.

use crate::error::{GrowError, Result};
use crate::rng::SeedStream;

mod chaincraft;
mod navigation;
mod pursuit;

pub use chaincraft::ChaincraftEnv;
pub use navigation::NavigationEnv;
pub use pursuit::PursuitEnv;

/// Discrete action index within a family's action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionId(pub usize);

/// Environment family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Navigation,
    Chaincraft,
    Pursuit,
}

impl Family {
    /// Number of primitive actions. Constant per family so one policy head
    /// serves every task of the family.
    pub fn action_count(self) -> usize {
        match self {
            Family::Navigation => 4, // up, down, left, right
            Family::Chaincraft => chaincraft::ACTION_COUNT,
            Family::Pursuit => 5, // up, down, left, right, stay
        }
    }

    /// Observation vector length, constant per family.
    pub fn feature_len(self) -> usize {
        match self {
            Family::Navigation => navigation::FEATURE_LEN,
            Family::Chaincraft => chaincraft::FEATURE_LEN,
            Family::Pursuit => pursuit::FEATURE_LEN,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Navigation => write!(f, "navigation"),
            Family::Chaincraft => write!(f, "chaincraft"),
            Family::Pursuit => write!(f, "pursuit"),
        }
    }
}

/// Family-specific difficulty knobs, validated against documented bounds.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum Difficulty {
    /// `grid` in 5..=7 (odd); `locked` gates the door behind the key.
    Navigation { grid: u32, locked: bool },
    /// `chain_len` distinct stage actions (1..=6, one per family action at
    /// most) of `reps` presses each (1..=8).
    Chaincraft { chain_len: u32, reps: u32 },
    /// Torus side `grid` in {5, 7}; target moves every `move_period` steps
    /// (1..=4) and spawns at wrap distance `spawn_dist`.
    Pursuit {
        grid: u32,
        move_period: u32,
        spawn_dist: u32,
    },
}

/// One entry of the task registry.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub family: Family,
    pub horizon_cap: u32,
    pub difficulty: Difficulty,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_cap == 0 {
            return Err(GrowError::Config(format!(
                "{}: horizon_cap must be >= 1",
                self.task_id
            )));
        }
        match (&self.family, &self.difficulty) {
            (Family::Navigation, Difficulty::Navigation { grid, .. }) => {
                if !(5..=7).contains(grid) || grid % 2 == 0 {
                    return Err(GrowError::Config(format!(
                        "{}: navigation grid must be odd in 5..=7, got {grid}",
                        self.task_id
                    )));
                }
            }
            (Family::Chaincraft, Difficulty::Chaincraft { chain_len, reps }) => {
                if !(1..=6).contains(chain_len) {
                    return Err(GrowError::Config(format!(
                        "{}: chaincraft chain_len must be in 1..=6 (stage actions are distinct)",
                        self.task_id
                    )));
                }
                if !(1..=8).contains(reps) {
                    return Err(GrowError::Config(format!(
                        "{}: chaincraft reps must be in 1..=8",
                        self.task_id
                    )));
                }
            }
            (
                Family::Pursuit,
                Difficulty::Pursuit {
                    grid,
                    move_period,
                    spawn_dist,
                },
            ) => {
                if !(*grid == 5 || *grid == 7) {
                    return Err(GrowError::Config(format!(
                        "{}: pursuit grid must be 5 or 7, got {grid}",
                        self.task_id
                    )));
                }
                if !(1..=4).contains(move_period) {
                    return Err(GrowError::Config(format!(
                        "{}: pursuit move_period must be in 1..=4",
                        self.task_id
                    )));
                }
                let max_dist = 2 * (grid / 2);
                if *spawn_dist == 0 || *spawn_dist > max_dist {
                    return Err(GrowError::Config(format!(
                        "{}: pursuit spawn_dist must be in 1..={max_dist}",
                        self.task_id
                    )));
                }
            }
            _ => {
                return Err(GrowError::Config(format!(
                    "{}: difficulty does not match family",
                    self.task_id
                )));
            }
        }
        Ok(())
    }
}

/// Public snapshot of an episode's state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub step_index: u32,
    pub done: bool,
    pub success: bool,
}

/// Result of one transition. Rewards are episodic only, so there is no
/// per-step reward field by design.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub done: bool,
    pub success: bool,
}

/// A live episode. Each instance is owned by exactly one rollout worker;
/// the registry itself is immutable.
pub trait Environment: Send {
    fn task(&self) -> &TaskSpec;

    fn state(&self) -> &EnvState;

    /// Advance one step. Errors on a finished episode or an out-of-range
    /// action; `done` is forced at `horizon_cap` when not reached earlier.
    fn step(&mut self, action: ActionId) -> Result<StepOutcome>;

    /// Recompute the observation from internal state. Pure: calling it any
    /// number of times yields the same vector, equal to
    /// `state().observation`.
    fn featurize(&self) -> Vec<f64>;

    /// Near-optimal scripted action, used for calibration fixtures and
    /// step-length statistics.
    fn reference_action(&self) -> ActionId;
}

/// Fixed task registry. Order is stable and part of the contract.
pub fn list_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec {
            task_id: "nav/key-7".into(),
            family: Family::Navigation,
            horizon_cap: 60,
            difficulty: Difficulty::Navigation {
                grid: 7,
                locked: true,
            },
        },
        TaskSpec {
            task_id: "nav/key-5".into(),
            family: Family::Navigation,
            horizon_cap: 60,
            difficulty: Difficulty::Navigation {
                grid: 5,
                locked: true,
            },
        },
        TaskSpec {
            task_id: "chain/craft-4x3".into(),
            family: Family::Chaincraft,
            horizon_cap: 80,
            difficulty: Difficulty::Chaincraft {
                chain_len: 4,
                reps: 3,
            },
        },
        TaskSpec {
            task_id: "chain/long-5x4".into(),
            family: Family::Chaincraft,
            horizon_cap: 80,
            difficulty: Difficulty::Chaincraft {
                chain_len: 5,
                reps: 4,
            },
        },
        TaskSpec {
            task_id: "pursuit/drift-7".into(),
            family: Family::Pursuit,
            horizon_cap: 80,
            difficulty: Difficulty::Pursuit {
                grid: 7,
                move_period: 2,
                spawn_dist: 5,
            },
        },
        TaskSpec {
            task_id: "pursuit/drift-5".into(),
            family: Family::Pursuit,
            horizon_cap: 80,
            difficulty: Difficulty::Pursuit {
                grid: 5,
                move_period: 2,
                spawn_dist: 4,
            },
        },
    ]
}

/// Look up a task by id.
pub fn find_task(task_id: &str) -> Result<TaskSpec> {
    list_tasks()
        .into_iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| GrowError::Config(format!("unknown task id '{task_id}'")))
}

/// Start an episode. Identical `(task, episode_seed)` always produce the
/// same initial state.
pub fn reset(task: &TaskSpec, episode_seed: u64) -> Result<Box<dyn Environment>> {
    task.validate()?;
    // Anchor the episode stream to the task so equal raw seeds on different
    // tasks do not alias.
    let stream = SeedStream::new(crate::rng::derive_seed(episode_seed, &task.task_id, 0));
    Ok(match task.family {
        Family::Navigation => Box::new(NavigationEnv::new(task.clone(), stream)?),
        Family::Chaincraft => Box::new(ChaincraftEnv::new(task.clone(), stream)?),
        Family::Pursuit => Box::new(PursuitEnv::new(task.clone(), stream)?),
    })
}

/// One line of a replay dump: the state *after* the recorded action.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReplayStep {
    pub step_index: u32,
    pub action: u32,
    pub features: Vec<f64>,
    pub done: bool,
    pub success: bool,
}

/// Binary return of a terminated episode, decoded from the terminal
/// observation rather than trusted from the recorded flags.
pub fn verify(task: &TaskSpec, replay: &[ReplayStep]) -> Result<u8> {
    let last = replay
        .last()
        .ok_or_else(|| GrowError::Usage("cannot verify an empty trajectory".into()))?;
    if !last.done {
        return Err(GrowError::Usage(
            "cannot verify a non-terminated trajectory".into(),
        ));
    }
    let ok = match task.family {
        Family::Navigation => navigation::decode_success(&last.features),
        Family::Chaincraft => chaincraft::decode_success(task, &last.features)?,
        Family::Pursuit => pursuit::decode_success(&last.features),
    };
    Ok(u8::from(ok))
}

/// Serialize a replay as JSONL with a leading schema line.
pub fn replay_to_jsonl(replay: &[ReplayStep]) -> String {
    let mut out = String::from("{\"schema\":\"grow.replay.v1\"}\n");
    for step in replay {
        out.push_str(&serde_json::to_string(step).expect("replay step serializes"));
        out.push('\n');
    }
    out
}

/// Render the registry as a TOML fragment for embedding in run configs.
pub fn registry_toml() -> String {
    #[derive(serde::Serialize)]
    struct Registry {
        tasks: Vec<TaskSpec>,
    }
    toml::to_string_pretty(&Registry {
        tasks: list_tasks(),
    })
    .expect("registry serializes")
}

pub(crate) fn feature_argmax(slice: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in slice.iter().enumerate() {
        if *v > slice[best] {
            best = i;
        }
    }
    best
}
