//! `grow` command-line tool.
//!
//! Subcommands: `train` (one seeded run from a TOML config), `eval`
//! (greedy checkpoint evaluation), `verify` (the numerical invariant
//! suite), and `ablate` (an algorithm-by-gamma grid with a summary table).
//!
//! Exit codes are a stable contract: 0 success, 1 verification failure,
//! 2 usage or configuration error, 3 runtime numeric failure.

mod ablate;
mod manifest;
mod overrides;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use grow_core::error::GrowError;
use grow_core::trainer::{self, TrainConfig};
use grow_core::verify::{self, VerifySizes};
use grow_core::{checkpoint, env};

const EXIT_OK: i32 = 0;
const EXIT_VERIFY_FAILED: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(
    name = "grow",
    version,
    about = "Group-relative policy optimization lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded training job from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the first config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override a top-level config key, e.g. --set gamma=0.9 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output root; defaults to $GROW_OUT_DIR, then ./runs.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint greedily on a task list.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated task ids.
        #[arg(long)]
        tasks: String,
        #[arg(long, default_value_t = 50)]
        episodes: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the numerical invariant suite and print its report.
    Verify {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Synthetic groups per randomized check.
        #[arg(long, default_value_t = 200)]
        groups: usize,
        /// Instances for the finite-difference gradient checks.
        #[arg(long, default_value_t = 25)]
        grad_checks: usize,
        /// Print the JSON report instead of text.
        #[arg(long, default_value_t = false)]
        json: bool,
        /// Corrupt one check to exercise failure handling (test only).
        #[arg(long, hide = true, default_value_t = false)]
        inject_fault: bool,
    },
    /// Run an algorithm-by-gamma grid and write a summary table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Run grid cells on worker threads (outputs are per-cell either way).
        #[arg(long, default_value_t = false)]
        parallel_cells: bool,
    },
}

fn out_root(cli_dir: Option<PathBuf>) -> PathBuf {
    cli_dir
        .or_else(|| std::env::var_os("GROW_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn exit_code_for(err: &GrowError) -> i32 {
    match err {
        GrowError::Config(_) | GrowError::Usage(_) => EXIT_CONFIG,
        GrowError::Numeric(_) | GrowError::Io(_) => EXIT_NUMERIC,
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train {
            config,
            seed,
            set,
            out_dir,
        } => cmd_train(config, seed, set, out_dir),
        Command::Eval {
            checkpoint,
            tasks,
            episodes,
            seed,
            out_dir,
        } => cmd_eval(checkpoint, tasks, episodes, seed, out_dir),
        Command::Verify {
            seed,
            groups,
            grad_checks,
            json,
            inject_fault,
        } => cmd_verify(seed, groups, grad_checks, json, inject_fault),
        Command::Ablate {
            config,
            out_dir,
            parallel_cells,
        } => ablate::cmd_ablate(config, out_root(out_dir), parallel_cells),
    };
    std::process::exit(code);
}

fn load_train_config(path: &PathBuf, set: &[String]) -> Result<TrainConfig, GrowError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GrowError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let text = overrides::apply(&text, set)?;
    TrainConfig::from_toml_str(&text)
}

fn cmd_train(
    config_path: PathBuf,
    seed: Option<u64>,
    set: Vec<String>,
    out_dir: Option<PathBuf>,
) -> i32 {
    let config = match load_train_config(&config_path, &set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    let seed = seed.unwrap_or(config.seeds[0]);
    let root = out_root(out_dir);
    match run_train(&config, seed, &root) {
        Ok(run_dir) => {
            println!("run complete: {}", run_dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Execute one training run and write its self-describing run directory.
pub(crate) fn run_train(
    config: &TrainConfig,
    seed: u64,
    root: &std::path::Path,
) -> Result<PathBuf, GrowError> {
    let started = manifest::unix_now();
    let output = trainer::train(config, seed)?;

    let run_dir = root.join(format!("{}-seed{seed}", config.name));
    std::fs::create_dir_all(&run_dir)?;
    let mut outputs = Vec::new();

    let write = |name: &str, bytes: &[u8]| -> Result<PathBuf, GrowError> {
        let path = run_dir.join(name);
        std::fs::write(&path, bytes)?;
        Ok(path)
    };

    outputs.push(write("config.toml", config.to_toml().as_bytes())?);
    outputs.push(write("tasks.toml", env::registry_toml().as_bytes())?);
    outputs.push(write(
        "metrics.jsonl",
        output.metrics.to_jsonl().as_bytes(),
    )?);
    outputs.push(write("curve.csv", output.metrics.curve_csv().as_bytes())?);

    for (update, params) in &output.checkpoints {
        let path = run_dir.join(format!("ckpt_{update}.growckpt"));
        checkpoint::save(params, *update as u64, &path)?;
        outputs.push(path);
    }
    let final_path = run_dir.join("final.growckpt");
    checkpoint::save(&output.final_params, config.updates as u64, &final_path)?;
    outputs.push(final_path);

    let manifest = manifest::RunManifest::new(config, seed, started, &outputs);
    std::fs::write(run_dir.join("manifest.json"), manifest.to_json())?;
    Ok(run_dir)
}

fn cmd_eval(
    checkpoint_path: PathBuf,
    tasks: String,
    episodes: u32,
    seed: u64,
    out_dir: Option<PathBuf>,
) -> i32 {
    match run_eval(&checkpoint_path, &tasks, episodes, seed, &out_root(out_dir)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn run_eval(
    checkpoint_path: &std::path::Path,
    tasks: &str,
    episodes: u32,
    seed: u64,
    root: &std::path::Path,
) -> Result<(), GrowError> {
    let (params, train_step) = checkpoint::load(checkpoint_path)?;
    let task_specs: Vec<env::TaskSpec> = tasks
        .split(',')
        .map(|id| env::find_task(id.trim()))
        .collect::<Result<_, _>>()?;
    for task in &task_specs {
        if task.family.feature_len() != params.layout.input_dim {
            return Err(GrowError::Config(format!(
                "checkpoint input dim {} does not fit task {} ({})",
                params.layout.input_dim,
                task.task_id,
                task.family.feature_len()
            )));
        }
    }

    let records = trainer::evaluate(&params, &task_specs, episodes, seed)?;
    println!(
        "checkpoint: {} (train step {train_step})",
        checkpoint_path.display()
    );
    let mut csv = String::from("task_id,asr_mean,asr_std,avg_steps,episodes\n");
    for r in &records {
        println!(
            "  {:<18} asr {:.3} +/- {:.3}   steps {:.1}",
            r.task_id, r.asr_mean, r.asr_std, r.avg_steps
        );
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.task_id, r.asr_mean, r.asr_std, r.avg_steps, episodes
        ));
    }
    std::fs::create_dir_all(root)?;
    std::fs::write(root.join("eval.csv"), csv)?;
    Ok(())
}

fn cmd_verify(seed: u64, groups: usize, grad_checks: usize, json: bool, inject_fault: bool) -> i32 {
    let sizes = VerifySizes {
        groups,
        grad_checks,
    };
    let report = verify::run_verification(seed, &sizes, inject_fault);
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render());
    }
    if report.all_passed {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    }
}
