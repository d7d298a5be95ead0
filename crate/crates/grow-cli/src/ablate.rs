//! Ablation grids: run every (algorithm, gamma) cell over the configured
//! seeds and aggregate final evaluations into one summary table.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use grow_core::error::GrowError;
use grow_core::trainer::{self, Algorithm, TrainConfig};

use crate::{exit_code_for, run_train, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};

#[derive(Debug, Clone, serde::Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub gamma: f64,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub schema: String,
    #[serde(default = "default_name")]
    pub name: String,
    pub cells: Vec<Cell>,
    pub base: TrainConfig,
}

fn default_name() -> String {
    "ablation".into()
}

impl AblateConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, GrowError> {
        let cfg: AblateConfig = toml::from_str(text)
            .map_err(|e| GrowError::Config(format!("invalid ablation config: {e}")))?;
        if cfg.schema != "grow.ablate.v1" {
            return Err(GrowError::Config(format!(
                "unsupported ablation schema '{}'",
                cfg.schema
            )));
        }
        if cfg.cells.is_empty() {
            return Err(GrowError::Config(
                "ablation grid must list at least one cell".into(),
            ));
        }
        cfg.base.validate()?;
        Ok(cfg)
    }

    fn cell_config(&self, cell: &Cell) -> TrainConfig {
        TrainConfig {
            name: format!("{}-{}-g{}", self.name, cell.algorithm, cell.gamma),
            algorithm: cell.algorithm,
            gamma: cell.gamma,
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone)]
struct CellOutcome {
    gamma: f64,
    config: TrainConfig,
    /// One metrics set per successful seed.
    runs: Vec<(u64, trainer::Metrics)>,
    failure: Option<String>,
}

fn run_cell(config: &TrainConfig, root: &Path) -> CellOutcome {
    let mut runs = Vec::new();
    let mut failure = None;
    for &seed in &config.seeds {
        match run_train(config, seed, root) {
            Ok(run_dir) => {
                // The summary quotes exactly what the per-cell metrics file
                // records.
                let text =
                    std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap_or_default();
                runs.push((seed, parse_metrics(&text)));
            }
            Err(e) => {
                failure.get_or_insert(format!("seed {seed}: {e}"));
            }
        }
    }
    CellOutcome {
        gamma: config.gamma,
        config: config.clone(),
        runs,
        failure,
    }
}

/// Re-parse a metrics JSONL stream.
fn parse_metrics(text: &str) -> trainer::Metrics {
    let mut metrics = trainer::Metrics::default();
    for line in text.lines().skip(1) {
        if let Ok(record) = serde_json::from_str::<trainer::MetricRecord>(line) {
            metrics.records.push(record);
        }
    }
    metrics
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary rows shaped like an algorithm/gamma results table: per cell and
/// task, the across-seed mean and standard deviation of final ASR plus the
/// mean evaluation steps.
fn summary_csv(outcomes: &[CellOutcome]) -> String {
    let mut out =
        String::from("algorithm,gamma,task_id,asr_mean,asr_std,steps_mean,seeds,status\n");
    for outcome in outcomes {
        let algorithm = outcome.config.algorithm;
        if outcome.runs.is_empty() {
            out.push_str(&format!("{algorithm},{},,,,,0,failed\n", outcome.gamma));
            continue;
        }
        let status = if outcome.failure.is_some() {
            "partial"
        } else {
            "ok"
        };
        for task_id in &outcome.config.tasks {
            let mut asr = Vec::new();
            let mut steps = Vec::new();
            for (_, metrics) in &outcome.runs {
                if let Some(e) = metrics.final_evals().get(task_id) {
                    asr.push(e.asr_mean);
                    steps.push(e.avg_steps);
                }
            }
            if asr.is_empty() {
                continue;
            }
            let (asr_mean, asr_std) = mean_std(&asr);
            let (steps_mean, _) = mean_std(&steps);
            out.push_str(&format!(
                "{algorithm},{},{task_id},{asr_mean},{asr_std},{steps_mean},{},{status}\n",
                outcome.gamma,
                outcome.runs.len(),
            ));
        }
    }
    out
}

pub fn cmd_ablate(config_path: PathBuf, root: PathBuf, parallel_cells: bool) -> i32 {
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", config_path.display());
            return EXIT_CONFIG;
        }
    };
    let config = match AblateConfig::from_toml_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };

    let cell_configs: Vec<TrainConfig> =
        config.cells.iter().map(|c| config.cell_config(c)).collect();
    let grid_root = root.join(&config.name);
    if let Err(e) = std::fs::create_dir_all(&grid_root) {
        eprintln!("error: {e}");
        return EXIT_NUMERIC;
    }

    let outcomes: Vec<CellOutcome> = if parallel_cells {
        let slots: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cell_configs.len()]);
        std::thread::scope(|scope| {
            for (i, cfg) in cell_configs.iter().enumerate() {
                let slots = &slots;
                let grid_root = &grid_root;
                scope.spawn(move || {
                    let outcome = run_cell(cfg, grid_root);
                    slots.lock().expect("slots lock")[i] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .expect("slots lock")
            .into_iter()
            .map(|o| o.expect("cell ran"))
            .collect()
    } else {
        cell_configs
            .iter()
            .map(|cfg| run_cell(cfg, &grid_root))
            .collect()
    };

    let csv = summary_csv(&outcomes);
    if let Err(e) = std::fs::write(grid_root.join("summary.csv"), &csv) {
        eprintln!("error: {e}");
        return EXIT_NUMERIC;
    }
    print!("{csv}");

    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.failure.as_ref())
        .map(|f| f.to_string())
        .collect();
    if failures.is_empty() {
        EXIT_OK
    } else {
        for f in &failures {
            eprintln!("cell failure: {f}");
        }
        EXIT_NUMERIC
    }
}
