use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rollsim::commands;
use rollsim::config::RunConfig;

#[derive(Parser)]
#[command(name = "rollsim", version, about = "Rolling-window diffusion traffic simulator")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct PlannerArgs {
    /// rolling, autoregressive, one-shot or mpc-<X>.
    #[arg(long)]
    planner: Option<String>,
    /// Rolling window length.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenarios and a manifest.
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the denoiser a planner runs on.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        planner: PlannerArgs,
    },
    /// Closed-loop rollouts of one planner over a scenario directory.
    Simulate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        planner: PlannerArgs,
        #[arg(long, value_enum)]
        adversary: Option<Switch>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Score rollout reports against their scenarios.
    Eval {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Analytic vs measured denoiser calls for every planner.
    BenchNfe,
}

fn data_dir(arg: Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    arg.or_else(|| cfg.world.data_dir.clone()).context("no scenario directory: pass --data or set world.data_dir")
}

fn apply_planner(cfg: &mut RunConfig, args: &PlannerArgs) {
    if let Some(p) = &args.planner {
        cfg.planner.kind = p.clone();
    }
    if let Some(w) = args.window {
        cfg.planner.window = w;
    }
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    let out = cfg.out.clone();
    let value = match cli.command {
        Command::Synth { count } => {
            if let Some(c) = count {
                cfg.world.scenarios = c;
            }
            cfg.validate()?;
            let m = commands::cmd_synth(&cfg, &out)?;
            serde_json::json!({ "command": "synth", "seed": cfg.seed, "scenarios": m.scenarios.len(), "out": out })
        }
        Command::Train { data, planner } => {
            apply_planner(&mut cfg, &planner);
            cfg.validate()?;
            let data = data_dir(data, &cfg)?;
            let steps = cfg.training.optimizer.steps;
            let every = (steps / 20).max(1);
            let ck = commands::cmd_train(&cfg, cfg.planner()?, &data, &out, |step, loss| {
                if (step + 1) % every == 0 {
                    eprintln!("step {}/{steps} loss {loss:.4}", step + 1);
                }
            })?;
            serde_json::json!({ "command": "train", "seed": cfg.seed, "planner": ck.planner.name(), "parameters": ck.model.parameter_count(), "out": out })
        }
        Command::Simulate { checkpoint, data, planner, adversary, samples } => {
            apply_planner(&mut cfg, &planner);
            if let Some(a) = adversary {
                cfg.planner.adversary = matches!(a, Switch::On);
            }
            if let Some(k) = samples {
                cfg.planner.samples = k;
            }
            cfg.validate()?;
            let data = data_dir(data, &cfg)?;
            let checkpoint = checkpoint.or_else(|| cfg.world.checkpoint.clone()).context("no checkpoint: pass --checkpoint or set world.checkpoint")?;
            let s = commands::cmd_simulate(&cfg, &checkpoint, &data, cfg.planner()?, cfg.planner.adversary, &out)?;
            serde_json::json!({ "command": "simulate", "seed": cfg.seed, "planner": s.planner.name(), "scenes": s.scenes, "skipped": s.skipped.len(), "total_nfe": s.total_nfe, "out": out })
        }
        Command::Eval { reports, data } => {
            cfg.validate()?;
            let data = data_dir(data, &cfg)?;
            let r = commands::cmd_eval(&cfg, &reports, &data, &out)?;
            serde_json::json!({ "command": "eval", "seed": cfg.seed, "planners": r.planners, "out": out })
        }
        Command::BenchNfe => {
            cfg.validate()?;
            let t = commands::cmd_bench_nfe(&cfg, &out)?;
            for r in &t.rows {
                eprintln!("{:>16} T={:<3} W={:<3} analytic {:>5} measured {:>5}", r.planner, r.horizon, r.window, r.analytic, r.measured);
            }
            serde_json::json!({ "command": "bench-nfe", "seed": cfg.seed, "rows": t.rows.len(), "out": out })
        }
    };
    Ok(value)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.downcast_ref::<rollsim::Error>().map_or("error", |e| e.kind());
            let doc = serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}

