use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sacx::env::BallInCup;
use sacx::gated::TaskSpec;
use sacx::orchestrator::{build_model, evaluate_from, parse_config, run_experiment, Checkpoint};
use sacx::{oracle, Error};

#[derive(Parser)]
#[command(
    name = "sacx",
    version,
    about = "Multi-task learning with per-task state spaces on a ball-in-cup simulation"
)]
struct Cli {
    /// Seed; overrides the config's seed list for `train`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, env = "SACX_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Train { config: PathBuf },
    /// Evaluate a checkpoint's policy for one task with noise-free actions.
    Eval {
        checkpoint: PathBuf,
        /// Task id or label, e.g. `4` or `5F`.
        task: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Run the gradient, retrace, gating, reward, filter and physics checks.
    OracleTests,
    /// Write the camera frames of one evaluation episode as PGM files.
    RenderDump {
        checkpoint: PathBuf,
        /// Task id or label; defaults to the first catch task.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config } => train(&cli, config),
        Command::Eval {
            checkpoint,
            task,
            episodes,
        } => eval(&cli, checkpoint, task, *episodes),
        Command::OracleTests => oracle_tests(&cli),
        Command::RenderDump {
            checkpoint,
            task,
            steps,
        } => render_dump(&cli, checkpoint, task.as_deref(), *steps),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn train(cli: &Cli, path: &Path) -> Result<ExitCode, Error> {
    let mut cfg = match parse_config(path) {
        Ok(c) => c,
        Err(Error::Config {
            line,
            column,
            message,
        }) => {
            eprintln!("{}:{line}:{column}: {message}", path.display());
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    for run in run_experiment(&cfg)? {
        let catches = run.curve.iter().filter(|p| p.catch).count();
        println!(
            "seed {}: {} learner steps, {catches}/{} evaluations caught; {}",
            run.seed,
            run.learner_steps,
            run.curve.len(),
            run.paths.curve.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn find_task(tasks: &[TaskSpec], key: &str) -> Result<TaskSpec, Error> {
    let found = match key.parse::<usize>() {
        Ok(id) => tasks.get(id),
        Err(_) => tasks.iter().find(|t| t.label().eq_ignore_ascii_case(key)),
    };
    found.cloned().ok_or_else(|| {
        let known: Vec<_> = tasks
            .iter()
            .map(|t| format!("{}={}", t.task_id, t.label()))
            .collect();
        Error::InvalidConfig(format!(
            "no task `{key}` in this checkpoint (tasks: {})",
            known.join(", ")
        ))
    })
}

fn eval(cli: &Cli, path: &Path, task: &str, episodes: usize) -> Result<ExitCode, Error> {
    let ck = Checkpoint::load(path)?;
    let (model, tasks) = build_model(&ck.config)?;
    let task = find_task(&tasks, task)?;
    let mut env = BallInCup::new(ck.config.env.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(ck.seed));
    let scaling = &ck.config.env.scaling;
    println!("episode,task,eval_return,catch,first_catch_step");
    let mut caught = 0;
    for ep in 0..episodes {
        let obs = env.reset(&mut rng);
        let e = evaluate_from(
            &mut env,
            obs,
            ck.config.episode_length,
            |o| {
                let p = model.actor.policy(&ck.store.actor, o, &task, scaling)?;
                Ok([p.mean[0], p.mean[1]])
            },
            task.reward_id,
        )?;
        caught += usize::from(e.catch);
        println!(
            "{ep},{},{},{},{}",
            task.task_id,
            e.eval_return,
            u8::from(e.catch),
            e.first_catch_step.map_or(-1, |s| s as i64)
        );
    }
    eprintln!(
        "task {}: caught in {caught}/{episodes} episodes",
        task.label()
    );
    Ok(ExitCode::SUCCESS)
}

fn oracle_tests(cli: &Cli) -> Result<ExitCode, Error> {
    let checks = oracle::run_all(cli.seed.unwrap_or(0))?;
    for c in &checks {
        println!("{c}");
    }
    Ok(if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn render_dump(
    cli: &Cli,
    path: &Path,
    task: Option<&str>,
    steps: usize,
) -> Result<ExitCode, Error> {
    let ck = Checkpoint::load(path)?;
    let (model, tasks) = build_model(&ck.config)?;
    let task = match task {
        Some(t) => find_task(&tasks, t)?,
        None => tasks
            .iter()
            .find(|t| t.reward_id == 5)
            .unwrap_or(&tasks[0])
            .clone(),
    };
    let dir = cli
        .output_dir
        .clone()
        .unwrap_or_else(|| ck.config.output_dir.clone())
        .join(format!("frames_{}", task.label()));
    std::fs::create_dir_all(&dir)?;
    let mut env = BallInCup::new(ck.config.env.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(ck.seed));
    let obs = env.reset(&mut rng);
    obs.frames[2].save_pgm(&dir.join("frame_0000.pgm"))?;
    let mut written = 1;
    let scaling = &ck.config.env.scaling;
    let mut o = obs;
    for step in 1..=steps {
        let p = model.actor.policy(&ck.store.actor, &o, &task, scaling)?;
        o = match env.step([p.mean[0], p.mean[1]]) {
            Ok(out) => out.observation,
            Err(e) => {
                log::warn!("stopped at step {step}: {e}");
                break;
            }
        };
        o.frames[2].save_pgm(&dir.join(format!("frame_{step:04}.pgm")))?;
        written += 1;
    }
    println!(
        "{written} frames of task {} in {}",
        task.label(),
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}
