use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use super::metrics::{write_metrics, MeanStd, PlotManifest, RunMetrics};
use crate::coin_game::Color;
use crate::error::{Error, Result};
use crate::gamedistill::{
    distill_both, evaluate_oracle_solo, principal_projection, read_oracle, write_dataset,
    write_oracle, ClusterMethod, CoinMetaEnv, DistillConfig, DistillOutcome, Role, SoloProtocol,
    SoloReport,
};
use crate::learners::{
    train_pair, Agent, CoinPairEnv, EpochMetrics, Learner, LearnerKind, MatrixPairEnv,
    PolicyParameters, SQConfig,
};
use crate::rng::{stream, Stream};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PARTIAL_METRICS_FILE: &str = "metrics.partial.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOTS_FILE: &str = "plots.json";
pub const CONFIG_FILE: &str = "config.toml";

/// One agent's distillation results as recorded in the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub seed: u64,
    pub agent: Color,
    pub purity: f64,
    pub method_agreement: f64,
    pub cooperation_solo: SoloReport,
    pub defection_solo: SoloReport,
}

impl DistillSummary {
    fn new(seed: u64, outcome: &DistillOutcome) -> Self {
        DistillSummary {
            seed,
            agent: outcome.agent,
            purity: outcome.purity,
            method_agreement: outcome.method_agreement,
            cooperation_solo: outcome.cooperation_solo,
            defection_solo: outcome.defection_solo,
        }
    }
}

/// Fixed-opponent parameter fingerprint before and after training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintCheck {
    pub seed: u64,
    pub before: u64,
    pub after: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZSweepPoint {
    pub z: u32,
    /// First epoch whose mean NDR over both agents exceeds the threshold, per seed; `None`
    /// when no epoch does.
    pub epochs_to_cooperation: Vec<Option<usize>>,
    /// Median over seeds, counting a seed that never cooperates as the epoch budget.
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Aggregate of every metric at the last epoch, per agent.
    pub final_epoch: Vec<FinalMetric>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub z_sweep: Vec<ZSweepPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub distill: Vec<DistillSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub fixed_policy: Vec<FingerprintCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetric {
    pub metric: String,
    pub agent: usize,
    #[serde(flatten)]
    pub value: MeanStd,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub summary: Summary,
}

struct Job {
    seed: u64,
    z: Option<u32>,
}

struct JobResult {
    seed: u64,
    z: Option<u32>,
    epochs: Vec<EpochMetrics>,
    distill: Vec<DistillSummary>,
    fixed: Option<FingerprintCheck>,
}

/// Runs every seed of `config` (and every `z` of a sweep) in parallel, then writes
/// `metrics.csv`, `summary.json`, `plots.json` and the resolved `config.toml` to the output
/// directory.
///
/// When a worker fails the completed runs are written to `metrics.partial.csv` and the first
/// error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), config.to_toml()?)?;
    let jobs: Vec<Job> = match config.experiment {
        ExperimentKind::ZSweep => config
            .z_values
            .iter()
            .flat_map(|&z| {
                config
                    .seeds
                    .iter()
                    .map(move |&seed| Job { seed, z: Some(z) })
            })
            .collect(),
        _ => config
            .seeds
            .iter()
            .map(|&seed| Job { seed, z: None })
            .collect(),
    };
    let results: Vec<Result<JobResult>> = with_pool(config.threads, || {
        jobs.par_iter().map(|job| run_job(config, job)).collect()
    })?;
    let (done, failed): (Vec<_>, Vec<_>) = results.into_iter().partition(Result::is_ok);
    let done: Vec<JobResult> = done.into_iter().map(Result::unwrap).collect();
    let metrics = collect_metrics(&config.seeds, &done);
    if let Some(Err(first)) = failed.into_iter().next() {
        write_metrics(&metrics, &out.join(PARTIAL_METRICS_FILE))?;
        return Err(first);
    }
    let summary = summarize(config, &metrics, &done);
    write_metrics(&metrics, &out.join(METRICS_FILE))?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_json(
        &out.join(PLOTS_FILE),
        &PlotManifest::for_metrics(&metrics, METRICS_FILE),
    )?;
    Ok(RunOutput { metrics, summary })
}

/// Distils both agents for every seed, persisting the artifacts, without any game-play.
pub fn run_distillation(config: &ExperimentConfig) -> Result<Vec<DistillSummary>> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let results: Vec<Result<Vec<DistillSummary>>> = with_pool(config.threads, || {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let outcomes = distill_both(&config.distill, seed)?;
                persist_distillation(&config.output_dir, seed, &config.distill, &outcomes)?;
                Ok(outcomes
                    .iter()
                    .map(|o| DistillSummary::new(seed, o))
                    .collect())
            })
            .collect()
    })?;
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    write_json(&config.output_dir.join(SUMMARY_FILE), &all)?;
    Ok(all)
}

/// Solo evaluation of a stored oracle over `episodes` episodes.
pub fn evaluate_oracle_file(path: &Path, episodes: usize, seed: u64) -> Result<SoloReport> {
    if episodes == 0 {
        return Err(Error::validation("episodes", "must be at least 1"));
    }
    let oracle = read_oracle(std::io::BufReader::new(fs::File::open(path)?))?;
    let protocol = SoloProtocol {
        episodes,
        ..SoloProtocol::default()
    };
    evaluate_oracle_solo(&oracle, &protocol, &mut stream(seed, Stream::Evaluation))
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::validation("threads", e.to_string()))?;
    Ok(pool.install(f))
}

fn learner(kind: LearnerKind, sq: SQConfig, policy: PolicyParameters) -> Agent {
    Agent::Learner(Learner::new(kind, policy, sq))
}

fn run_job(config: &ExperimentConfig, job: &Job) -> Result<JobResult> {
    let seed = job.seed;
    let mut sq = config.sq;
    if let Some(z) = job.z {
        sq.z = z;
    }
    let init = |i: usize| stream(seed, Stream::Init(i));
    let mut distill = Vec::new();
    let mut fixed = None;
    let run = match config.experiment {
        ExperimentKind::Ipd
        | ExperimentKind::Imp
        | ExperimentKind::Ish
        | ExperimentKind::ZSweep => {
            let game = config
                .experiment
                .matrix_game(config.game)
                .expect("matrix game");
            let agents = [0, 1].map(|i| {
                learner(
                    config.learners[i],
                    sq,
                    PolicyParameters::matrix_table(&mut init(i)),
                )
            });
            train_pair(
                &mut MatrixPairEnv::new(game, sq.gamma),
                agents,
                config.epochs,
                sq.batch_size,
                seed,
            )?
        }
        ExperimentKind::Exploitability => {
            let game = config
                .experiment
                .matrix_game(config.game)
                .expect("matrix game");
            let opponent = Agent::Fixed(config.opponent);
            let before = opponent.parameter_fingerprint();
            let agents = [
                learner(
                    config.learners[0],
                    sq,
                    PolicyParameters::matrix_table(&mut init(0)),
                ),
                opponent,
            ];
            let run = train_pair(
                &mut MatrixPairEnv::new(game, sq.gamma),
                agents,
                config.epochs,
                sq.batch_size,
                seed,
            )?;
            let after = run.agents[1].parameter_fingerprint();
            if before != after {
                return Err(Error::Invariant(format!(
                    "fixed opponent changed during seed {seed}"
                )));
            }
            fixed = Some(FingerprintCheck {
                seed,
                before,
                after,
            });
            run
        }
        ExperimentKind::CoinSq => {
            let mut env = CoinPairEnv::new(config.coin, stream(seed, Stream::Env))?;
            let agents = [0, 1].map(|i| {
                learner(
                    config.learners[i],
                    sq,
                    PolicyParameters::coin_moves(&mut init(i)),
                )
            });
            train_pair(&mut env, agents, config.epochs, sq.batch_size, seed)?
        }
        ExperimentKind::CoinGamedistill => {
            let outcomes = distill_both(&config.distill, seed)?;
            persist_distillation(&config.output_dir, seed, &config.distill, &outcomes)?;
            distill.extend(outcomes.iter().map(|o| DistillSummary::new(seed, o)));
            let oracles = [outcomes[0].oracles(), outcomes[1].oracles()];
            drop(outcomes);
            let mut env = CoinMetaEnv::new(config.coin, oracles, stream(seed, Stream::Env))?;
            let agents = [0, 1].map(|i| {
                learner(
                    config.learners[i],
                    sq,
                    PolicyParameters::coin_meta(&mut init(i)),
                )
            });
            train_pair(&mut env, agents, config.epochs, sq.batch_size, seed)?
        }
    };
    Ok(JobResult {
        seed,
        z: job.z,
        epochs: run.epochs,
        distill,
        fixed,
    })
}

fn collect_metrics(seeds: &[u64], done: &[JobResult]) -> RunMetrics {
    let mut zs: Vec<Option<u32>> = done.iter().map(|r| r.z).collect();
    zs.sort_unstable();
    zs.dedup();
    let parts = zs
        .into_iter()
        .map(|z| {
            let prefix = z.map(|z| format!("z{z}/")).unwrap_or_default();
            let runs = done
                .iter()
                .filter(|r| r.z == z)
                .map(|r| (r.seed, &r.epochs[..]));
            RunMetrics::from_epochs(seeds, runs, &prefix)
        })
        .collect();
    RunMetrics::merge(seeds, parts)
}

/// First epoch at which the mean NDR of the two agents exceeds `threshold`.
pub fn epochs_to_cooperation(epochs: &[EpochMetrics], threshold: f64) -> Option<usize> {
    epochs.iter().find_map(|e| {
        let (a, b) = (e.get("ndr", 0)?, e.get("ndr", 1)?);
        ((a + b) / 2.0 > threshold).then_some(e.epoch)
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn summarize(config: &ExperimentConfig, metrics: &RunMetrics, done: &[JobResult]) -> Summary {
    let mut final_epoch = Vec::new();
    for metric in metrics.metric_names() {
        for agent in 0..2 {
            if let Some(value) = metrics.final_aggregate(&metric, agent) {
                final_epoch.push(FinalMetric {
                    metric: metric.clone(),
                    agent,
                    value,
                });
            }
        }
    }
    let z_sweep = if config.experiment == ExperimentKind::ZSweep {
        config
            .z_values
            .iter()
            .map(|&z| {
                let epochs_to_cooperation: Vec<Option<usize>> = config
                    .seeds
                    .iter()
                    .map(|&seed| {
                        done.iter()
                            .find(|r| r.seed == seed && r.z == Some(z))
                            .and_then(|r| {
                                epochs_to_cooperation(&r.epochs, config.cooperation_threshold)
                            })
                    })
                    .collect();
                let mut censored: Vec<f64> = epochs_to_cooperation
                    .iter()
                    .map(|e| e.unwrap_or(config.epochs) as f64)
                    .collect();
                ZSweepPoint {
                    z,
                    median: median(&mut censored),
                    epochs_to_cooperation,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut distill: Vec<DistillSummary> = done.iter().flat_map(|r| r.distill.clone()).collect();
    distill.sort_by_key(|d| (d.seed, d.agent.index()));
    let mut fixed_policy: Vec<FingerprintCheck> = done.iter().filter_map(|r| r.fixed).collect();
    fixed_policy.sort_by_key(|f| f.seed);
    Summary {
        experiment: config.experiment,
        seeds: config.seeds.clone(),
        epochs: config.epochs,
        final_epoch,
        z_sweep,
        distill,
        fixed_policy,
    }
}

/// Per-agent clustering record written beside the oracles.
#[derive(Serialize)]
struct ClusterReport<'a> {
    agent: Color,
    method: ClusterMethod,
    assignments: &'a [usize],
    /// Role of cluster 0 and cluster 1.
    cluster_labels: Option<[Role; 2]>,
    /// Ground-truth pick type per window.
    picked_other: Vec<bool>,
    purity: f64,
    method_agreement: f64,
    encoder_losses: &'a [f64],
    /// First two principal components of the embeddings.
    projection: Vec<[f64; 2]>,
    cooperation_solo: SoloReport,
    defection_solo: SoloReport,
}

fn color_name(c: Color) -> &'static str {
    match c {
        Color::Red => "red",
        Color::Blue => "blue",
    }
}

/// Directory that holds one seed's distillation artifacts.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Path of a stored oracle: `seed_<n>/<colour>_<role>.oracle`.
pub fn oracle_path(out: &Path, seed: u64, agent: Color, role: Role) -> PathBuf {
    let role = match role {
        Role::Cooperation => "cooperation",
        Role::Defection => "defection",
    };
    seed_dir(out, seed).join(format!("{}_{role}.oracle", color_name(agent)))
}

fn persist_distillation(
    out: &Path,
    seed: u64,
    config: &DistillConfig,
    outcomes: &[DistillOutcome; 2],
) -> Result<()> {
    let dir = seed_dir(out, seed);
    fs::create_dir_all(&dir)?;
    for o in outcomes {
        let name = color_name(o.agent);
        for (role, oracle) in [
            (Role::Cooperation, &o.cooperation),
            (Role::Defection, &o.defection),
        ] {
            let mut w = BufWriter::new(fs::File::create(oracle_path(out, seed, o.agent, role))?);
            write_oracle(&mut w, oracle)?;
            w.flush()?;
        }
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("{name}_dataset.bin")))?);
        write_dataset(&mut w, &o.dataset)?;
        w.flush()?;
        let report = ClusterReport {
            agent: o.agent,
            method: config.method,
            assignments: &o.clusters.assignments,
            cluster_labels: o.clusters.cluster_labels,
            picked_other: o.dataset.iter().map(|s| s.picked_other()).collect(),
            purity: o.purity,
            method_agreement: o.method_agreement,
            encoder_losses: &o.encoder_losses,
            projection: principal_projection(&o.embeddings)?,
            cooperation_solo: o.cooperation_solo,
            defection_solo: o.defection_solo,
        };
        write_json(&dir.join(format!("{name}_clusters.json")), &report)?;
    }
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}
