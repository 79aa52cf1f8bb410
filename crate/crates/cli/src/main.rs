use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sqlab::harness::{
    evaluate_oracle_file, load_config, run_distillation, run_experiment, ExperimentConfig,
    ExperimentKind, RunOutput,
};
use sqlab::Error;

#[derive(Parser)]
#[command(
    name = "sqlab",
    version,
    about = "Train and evaluate status-quo learners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Distil cooperation and defection oracles for both Coin Game agents.
    Distill(RunArgs),
    /// Measure epochs to cooperation for every configured z.
    SweepZ(RunArgs),
    /// Evaluate a stored oracle alone on the grid.
    EvalOracle {
        model: PathBuf,
        episodes: usize,
        /// Seed of the evaluation stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Seeds to run: `a..b`, `a..=b`, or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(text: &str) -> Result<SeedList, String> {
    let bad = |_| format!("cannot read seeds from {text:?}");
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (a.parse().map_err(bad)?..=b.parse().map_err(bad)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (a.parse().map_err(bad)?..b.parse().map_err(bad)?).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(bad))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("{text:?} selects no seeds"));
    }
    Ok(SeedList(seeds))
}

impl RunArgs {
    fn resolve(&self) -> sqlab::Result<ExperimentConfig> {
        let mut config = load_config(&self.config)?;
        if let Some(seeds) = &self.seeds {
            config.seeds = seeds.0.clone();
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if self.threads.is_some() {
            config.threads = self.threads;
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_run(output: &RunOutput) {
    let s = &output.summary;
    println!(
        "final epoch {} over {} seeds",
        s.epochs.saturating_sub(1),
        s.seeds.len()
    );
    for m in &s.final_epoch {
        println!(
            "  {:<28} agent {}  mean {:>10.4}  std {:>8.4}",
            m.metric, m.agent, m.value.mean, m.value.std
        );
    }
    for p in &s.z_sweep {
        println!("  z = {:<3} median epochs to cooperation {}", p.z, p.median);
    }
    for d in &s.distill {
        println!(
            "  seed {} {:?}: purity {:.3}, agreement {:.3}",
            d.seed, d.agent, d.purity, d.method_agreement
        );
    }
}

fn execute(command: Command) -> sqlab::Result<()> {
    match command {
        Command::Run(args) => {
            let config = args.resolve()?;
            print_run(&run_experiment(&config)?);
            println!("wrote {}", config.output_dir.display());
        }
        Command::SweepZ(args) => {
            let mut config = args.resolve()?;
            config.experiment = ExperimentKind::ZSweep;
            print_run(&run_experiment(&config)?);
            println!("wrote {}", config.output_dir.display());
        }
        Command::Distill(args) => {
            let config = args.resolve()?;
            for d in run_distillation(&config)? {
                println!(
                    "seed {} {:?}: purity {:.3}, agreement {:.3}, cooperation other-colour rate {}, defection other-colour rate {}",
                    d.seed,
                    d.agent,
                    d.purity,
                    d.method_agreement,
                    rate(d.cooperation_solo.other_color_pick_rate()),
                    rate(d.defection_solo.other_color_pick_rate()),
                );
            }
            println!("wrote {}", config.output_dir.display());
        }
        Command::EvalOracle {
            model,
            episodes,
            seed,
        } => {
            let r = evaluate_oracle_file(&model, episodes, seed)?;
            println!(
                "other-colour coins: {} picked of {} ({})",
                r.other_picked,
                r.other_appeared,
                rate(r.other_color_pick_rate())
            );
            println!(
                "own-colour coins:   {} picked of {} ({})",
                r.own_picked,
                r.own_appeared,
                rate(r.own_color_pick_rate())
            );
            println!(
                "other-colour share of picks: {}",
                rate(r.other_color_pick_share())
            );
        }
    }
    Ok(())
}

fn rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
