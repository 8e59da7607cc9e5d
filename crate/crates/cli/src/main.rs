//! `ccrl`: train skills along the graph, run baselines, evaluate, and export
//! comparison tables, weight heatmaps, effort series and trajectories.
//!
//! Exit codes: 0 success, 2 config error, 3 run failure, 4 invariant breach.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use ccrl_core::env::{GridSpec, TaskKind};
use ccrl_core::experiment::{
    ablate, compare, effort_csv, effort_series, paired_eval_seed, trajectories, weight_heatmap, Ablation, ArtifactMeta, Experiment,
    ExperimentConfig, RunOptions, RunSummary,
};
use ccrl_core::ppo::{evaluate, MeanController, Method};
use ccrl_core::skills::{validate_graph, SkillGraph};
use ccrl_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccrl", version, about = "Compose, train and analyse residual skill policies")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Skill library directory, overriding the config.
    #[arg(long, global = true, env = "CCRL_LIBRARY")]
    library: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SeedArgs {
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; the config's seeds when neither flag is given.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

impl SeedArgs {
    fn resolve(&self, exp: &Experiment) -> Vec<u64> {
        match (self.seed, self.seeds.is_empty()) {
            (Some(s), _) => vec![s],
            (None, false) => self.seeds.clone(),
            (None, true) => exp.config.seeds.clone(),
        }
    }

    fn first(&self, exp: &Experiment) -> u64 {
        self.resolve(exp)[0]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one skill, or every skill in topological order.
    Train {
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        skill: Option<String>,
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        seeds: SeedArgs,
        /// Method to train with.
        #[arg(long, default_value = "ccrl")]
        baseline: Method,
        /// Continue unfinished runs from their checkpoints.
        #[arg(long)]
        resume: bool,
        /// Seeds trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a finished run and print its report as JSON.
    Eval {
        #[arg(long)]
        skill: String,
        /// Task to evaluate on; the skill's own task by default.
        #[arg(long)]
        task: Option<TaskKind>,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, default_value = "ccrl")]
        baseline: Method,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Success table of methods × tasks over the config's seeds.
    Compare {
        /// Tasks to compare; every composite skill's task by default.
        #[arg(long, value_delimiter = ',')]
        task: Vec<TaskKind>,
        /// Methods to compare; the config's methods by default.
        #[arg(long, value_delimiter = ',')]
        baseline: Vec<Method>,
    },
    /// Weight of one source of a composite skill over a grid of positions.
    Heatmap {
        #[arg(long)]
        skill: String,
        /// Weight index: parents in graph order, then the residual.
        #[arg(long)]
        index: usize,
        /// x_min,x_max,nx,y_min,y_max,ny
        #[arg(long, allow_hyphen_values = true, default_value = "-3.5,-0.5,13,-2.5,2.5,21")]
        grid: String,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, default_value = "ccrl")]
        baseline: Method,
    },
    /// Per-step effort series of each method on a task.
    Effort {
        #[arg(long)]
        task: TaskKind,
        #[arg(long, value_delimiter = ',')]
        baseline: Vec<Method>,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// JSON-lines dump of evaluation episodes.
    Trajectories {
        #[arg(long)]
        skill: String,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long, default_value_t = 12)]
        n: usize,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, default_value = "ccrl")]
        baseline: Method,
    },
    /// Run an ablation: no-penalty, clumsy-parent or redundant-parent.
    Ablate {
        name: Ablation,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Check a skill graph and print its training order.
    ValidateGraph {
        /// Graph file; the config's graph or the bundled one by default.
        graph: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::UnknownSkill { .. }
            | Error::InvalidGraph(_)
            | Error::NotFound(_)
            | Error::MissingAncestors { .. }
            | Error::Duplicate(_),
        ) => 2,
        Some(Error::Invariant(_) | Error::Corruption { .. } | Error::Contract(_) | Error::Dimension { .. }) => 4,
        _ => 3,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::Config(format!("config file {} does not exist", p.display())).into());
            }
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(l) = &cli.library {
        cfg.library = l.clone();
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn write_output(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn parse_grid(text: &str) -> anyhow::Result<GridSpec> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 6 {
        return Err(Error::Config(format!("grid `{text}` must be x_min,x_max,nx,y_min,y_max,ny")).into());
    }
    let f = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("grid value `{s}` is not a number")));
    let n = |s: &str| match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Config(format!("grid count `{s}` must be a positive integer"))),
    };
    Ok(GridSpec {
        x_min: f(parts[0])?,
        x_max: f(parts[1])?,
        nx: n(parts[2])?,
        y_min: f(parts[3])?,
        y_max: f(parts[4])?,
        ny: n(parts[5])?,
    })
}

fn print_summary(s: &RunSummary) {
    println!(
        "{}: {} iterations, {} env steps, final success {:.3}",
        s.run_id, s.iterations, s.env_steps, s.final_success
    );
}

fn train(exp: &Experiment, skill: Option<&str>, seeds: &[u64], method: Method, resume: bool, jobs: usize) -> anyhow::Result<()> {
    let Some(skill) = skill else {
        for &seed in seeds {
            exp.train_all(method, seed, resume, print_summary)?;
        }
        return Ok(());
    };
    exp.graph.get(skill)?;
    // The first seed's CCRL result becomes the library record.
    let run = |seed: u64| {
        let promote = seed == seeds[0];
        exp.train(skill, method, seed, RunOptions { resume, promote })
    };
    for chunk in seeds.chunks(jobs.max(1)) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| s.spawn(move || run(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        for r in results {
            print_summary(&r?);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::ValidateGraph { graph } = &cli.command {
        let path = match graph {
            Some(p) => Some(p.clone()),
            None => load_config(&cli)?.graph,
        };
        let g = match &path {
            Some(p) => SkillGraph::load(p)?,
            None => SkillGraph::default_graph(),
        };
        let violations = validate_graph(&g);
        if !violations.is_empty() {
            for v in &violations {
                eprintln!("{v}");
            }
            return Err(Error::InvalidGraph(violations.iter().map(ToString::to_string).collect()).into());
        }
        println!("{}", g.topological_order()?.join("\n"));
        return Ok(());
    }
    let exp = Experiment::open(load_config(&cli)?)?;
    let out = exp.config.out.clone();
    match cli.command {
        Command::ValidateGraph { .. } => unreachable!("handled above"),
        Command::Train {
            skill,
            all,
            seeds,
            baseline,
            resume,
            jobs,
        } => {
            let skill = if all { None } else { skill };
            train(&exp, skill.as_deref(), &seeds.resolve(&exp), baseline, resume, jobs)?;
        }
        Command::Eval {
            skill,
            task,
            seeds,
            baseline,
            episodes,
        } => {
            let task = task.unwrap_or(exp.graph.get(&skill)?.task);
            for seed in seeds.resolve(&exp) {
                let (summary, tree) = exp.load_policy(baseline, &skill, seed)?;
                let mut report = evaluate(&tree, task, &exp.scene, episodes.unwrap_or(exp.config.eval_episodes), paired_eval_seed(seed))?;
                report.records.clear();
                let line = serde_json::json!({
                    "run_id": summary.run_id,
                    "config_hash": summary.config_hash,
                    "seed": seed,
                    "report": report,
                });
                println!("{line}");
            }
        }
        Command::Compare { task, baseline } => {
            let tasks = if task.is_empty() {
                let mut t: Vec<TaskKind> = exp.graph.skills.iter().filter(|s| !s.is_root()).map(|s| s.task).collect();
                t.sort_unstable();
                t.dedup();
                t
            } else {
                task
            };
            let methods = if baseline.is_empty() { exp.config.methods.clone() } else { baseline };
            let table = compare(&exp, &tasks, &methods)?;
            for m in &table.missing {
                eprintln!("missing run: {m}");
            }
            for c in table.cells.iter().filter(|c| c.n() > 0 && c.n() < 3) {
                eprintln!("warning: {} on {} has only {} seed run(s)", c.method, c.task, c.n());
            }
            write_output(&out.join("compare/comparison.csv"), &table.to_csv())?;
            write_output(&out.join("compare/comparison.json"), &table.to_json()?)?;
        }
        Command::Heatmap {
            skill,
            index,
            grid,
            seeds,
            baseline,
        } => {
            let grid = parse_grid(&grid)?;
            let seed = seeds.first(&exp);
            let (summary, tree) = exp.load_policy(baseline, &skill, seed)?;
            let meta = ArtifactMeta {
                skill: skill.clone(),
                method: baseline.to_string(),
                seed,
                config_hash: summary.config_hash,
            };
            let h = weight_heatmap(&tree, summary.task, &exp.scene, index, grid, meta)?;
            write_output(&out.join(format!("heatmap/{baseline}-{skill}-w{index}-seed-{seed}.csv")), &h.to_csv())?;
        }
        Command::Effort { task, baseline, seeds } => {
            let methods = if baseline.is_empty() { exp.config.methods.clone() } else { baseline };
            let skill = exp.skill_for(task)?;
            let mut series = Vec::new();
            for method in methods {
                for seed in seeds.resolve(&exp) {
                    if !exp.run_exists(method, &skill, seed) {
                        eprintln!("missing run: {}", Experiment::run_id(method, &skill, seed));
                        continue;
                    }
                    let (summary, tree) = exp.load_policy(method, &skill, seed)?;
                    let meta = ArtifactMeta {
                        skill: skill.clone(),
                        method: method.to_string(),
                        seed,
                        config_hash: summary.config_hash,
                    };
                    let mut ctrl = MeanController::new(&tree);
                    series.push(effort_series(&mut ctrl, task, &exp.scene, exp.config.eval_episodes, paired_eval_seed(seed), meta)?);
                }
            }
            if series.is_empty() {
                bail!(Error::NotFound(format!("no finished runs of `{skill}`")));
            }
            write_output(&out.join(format!("effort/{task}.csv")), &effort_csv(&series))?;
        }
        Command::Trajectories {
            skill,
            task,
            n,
            seeds,
            baseline,
        } => {
            let seed = seeds.first(&exp);
            let (summary, tree) = exp.load_policy(baseline, &skill, seed)?;
            let task = task.unwrap_or(summary.task);
            let meta = ArtifactMeta {
                skill: skill.clone(),
                method: baseline.to_string(),
                seed,
                config_hash: summary.config_hash,
            };
            let mut buf = Vec::new();
            let ok = trajectories(&tree, task, &exp.scene, n, meta, &mut buf)?;
            eprintln!("{ok}/{n} episodes succeeded");
            write_output(
                &out.join(format!("trajectories/{baseline}-{skill}-{task}-seed-{seed}.jsonl")),
                &String::from_utf8(buf).expect("JSON is UTF-8"),
            )?;
        }
        Command::Ablate { name, seeds } => {
            let report = ablate(&exp, name, &seeds.resolve(&exp))?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            println!("{}", out.join("ablate").join(name.name()).join("report.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
