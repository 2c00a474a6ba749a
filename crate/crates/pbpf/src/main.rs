use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pbpf::harness::{self, errors_csv, parse_methods, ExperimentConfig};
use pbpf::parallel::Rayon;
use pbpf::replay::replay;
use pbpf::runlog::RunLog;

#[derive(Parser)]
#[command(name = "pbpf", version, about = "Physics-based particle filter pose tracking experiments")]
struct Cli {
    /// Print the default experiment configuration and exit.
    #[arg(long)]
    dump_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate run logs for a scenario.
    Generate(Common),
    /// Replay recorded run logs through the trackers.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Run log files to replay.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Generate, replay and aggregate a full experiment.
    Compare(Common),
    /// Print the default experiment configuration.
    DumpDefaults,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario preset (scene1, scene2, scene3) or scenario file.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of pbpf,cvpf,snapshot.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// PBPF particle count.
    #[arg(long)]
    particles: Option<usize>,
    /// PBPF update interval in seconds.
    #[arg(long)]
    dt: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scene {
            cfg.scene = s.clone();
        }
        if let Some(n) = self.runs {
            cfg.runs = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.methods {
            cfg.methods = parse_methods(m)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(p) = self.particles {
            cfg.replay.pbpf.particles = p;
        }
        if let Some(dt) = self.dt {
            cfg.replay.pbpf.dt = dt;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.dump_defaults {
        print!("{}", ExperimentConfig::default().to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!("no command given; see --help");
    };
    match command {
        Command::DumpDefaults => print!("{}", ExperimentConfig::default().to_toml()),
        Command::Generate(common) => {
            let cfg = common.resolve()?;
            for p in harness::generate_logs(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Replay { common, logs } => {
            let cfg = common.resolve()?;
            std::fs::create_dir_all(&cfg.out).with_context(|| format!("output directory {}", cfg.out.display()))?;
            for path in logs {
                let log = RunLog::load(&path).with_context(|| format!("{}", path.display()))?;
                let mut replays = Vec::new();
                for m in &cfg.methods {
                    replays.push(replay(&log, *m, &cfg.replay, &Rayon).with_context(|| format!("{}", path.display()))?);
                }
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
                let dest = cfg.out.join(format!("{stem}_errors.csv"));
                std::fs::write(&dest, errors_csv(&replays)).with_context(|| format!("writing {}", dest.display()))?;
                println!("{}", dest.display());
            }
        }
        Command::Compare(common) => {
            let cfg = common.resolve()?;
            let report = harness::run_experiment(&cfg)?;
            println!("{:<10} {:>10} {:>10} {:>10} {:>10}", "method", "pos_mean", "pos_std", "rot_mean", "rot_std");
            for m in &cfg.methods {
                let a = &report.methods[m];
                println!("{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", m.name(), a.pos_mean, a.pos_std, a.rot_mean, a.rot_std);
            }
            println!("artifacts in {}", cfg.out.display());
        }
    }
    Ok(())
}
