use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::EpochMetrics;

pub const CSV_COLUMNS: [&str; 5] = ["epoch", "seed", "agent", "metric_name", "value"];
const STD_NOTE: &str =
    "# std columns use the population convention (divide by the number of seeds)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeedLabel {
    Seed(u64),
    /// Rows aggregated over all configured seeds. Sorts after every seed.
    Aggregate,
}

impl fmt::Display for SeedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedLabel::Seed(s) => write!(f, "{s}"),
            SeedLabel::Aggregate => f.write_str("agg"),
        }
    }
}

impl FromStr for SeedLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "agg" {
            return Ok(SeedLabel::Aggregate);
        }
        s.parse()
            .map(SeedLabel::Seed)
            .map_err(|_| Error::Format(format!("seed column holds {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub seed: SeedLabel,
    pub agent: usize,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn key(&self) -> (usize, SeedLabel, usize, &str) {
        (self.epoch, self.seed, self.agent, &self.metric)
    }
}

/// Mean and population standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Per-seed metric series and their aggregate over the seeds.
///
/// An (epoch, agent, metric) cell is aggregated only when every seed reports it, so each
/// aggregate row covers exactly the configured seeds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub seeds: Vec<u64>,
    /// Per-seed rows in canonical order.
    pub series: Vec<MetricRow>,
    /// `<metric>_mean` and `<metric>_std` rows with seed [`SeedLabel::Aggregate`].
    pub aggregate: Vec<MetricRow>,
}

impl RunMetrics {
    /// Builds the series from each seed's epoch metrics; `prefix` is prepended to every
    /// metric name.
    pub fn from_epochs<'a>(
        seeds: &[u64],
        runs: impl IntoIterator<Item = (u64, &'a [EpochMetrics])>,
        prefix: &str,
    ) -> Self {
        let mut series = Vec::new();
        for (seed, epochs) in runs {
            for e in epochs {
                for (name, values) in &e.values {
                    for (agent, v) in values.iter().enumerate() {
                        if let Some(value) = v {
                            series.push(MetricRow {
                                epoch: e.epoch,
                                seed: SeedLabel::Seed(seed),
                                agent,
                                metric: format!("{prefix}{name}"),
                                value: *value,
                            });
                        }
                    }
                }
            }
        }
        Self::from_rows(seeds, series)
    }

    pub fn from_rows(seeds: &[u64], mut series: Vec<MetricRow>) -> Self {
        series.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut cells: BTreeMap<(usize, usize, &str), Vec<f64>> = BTreeMap::new();
        for row in &series {
            cells
                .entry((row.epoch, row.agent, &row.metric))
                .or_default()
                .push(row.value);
        }
        let mut aggregate = Vec::new();
        for ((epoch, agent, metric), values) in cells {
            if values.len() != seeds.len() {
                continue;
            }
            if let Some(s) = MeanStd::of(&values) {
                for (suffix, value) in [("mean", s.mean), ("std", s.std)] {
                    aggregate.push(MetricRow {
                        epoch,
                        seed: SeedLabel::Aggregate,
                        agent,
                        metric: format!("{metric}_{suffix}"),
                        value,
                    });
                }
            }
        }
        aggregate.sort_by(|a, b| a.key().cmp(&b.key()));
        RunMetrics {
            seeds: seeds.to_vec(),
            series,
            aggregate,
        }
    }

    /// Merges runs over the same seeds whose metric names do not overlap.
    pub fn merge(seeds: &[u64], parts: Vec<RunMetrics>) -> Self {
        Self::from_rows(seeds, parts.into_iter().flat_map(|p| p.series).collect())
    }

    /// All rows in file order: by epoch, then seed (aggregate last), agent and metric name.
    pub fn rows(&self) -> Vec<&MetricRow> {
        let mut rows: Vec<&MetricRow> = self.series.iter().chain(&self.aggregate).collect();
        rows.sort_by(|a, b| a.key().cmp(&b.key()));
        rows
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.series.iter().map(|r| r.epoch).max()
    }

    /// Each seed's value of `metric` for `agent` at the last epoch, in seed order.
    pub fn final_values(&self, metric: &str, agent: usize) -> Vec<f64> {
        let Some(last) = self.last_epoch() else {
            return Vec::new();
        };
        self.series
            .iter()
            .filter(|r| r.epoch == last && r.agent == agent && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Aggregate of `metric` for `agent` at the last epoch.
    pub fn final_aggregate(&self, metric: &str, agent: usize) -> Option<MeanStd> {
        let last = self.last_epoch()?;
        let find = |suffix: &str| {
            let name = format!("{metric}_{suffix}");
            self.aggregate
                .iter()
                .find(|r| r.epoch == last && r.agent == agent && r.metric == name)
                .map(|r| r.value)
        };
        Some(MeanStd {
            mean: find("mean")?,
            std: find("std")?,
        })
    }

    /// Names of the per-seed metrics.
    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.series.iter().map(|r| r.metric.clone()).collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Formats with 17 significant digits so parsing restores the exact bits.
fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics_to<W: Write>(mut w: W, metrics: &RunMetrics) -> Result<()> {
    writeln!(w, "{STD_NOTE}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(CSV_COLUMNS)?;
    for row in metrics.rows() {
        csv.write_record([
            row.epoch.to_string(),
            row.seed.to_string(),
            row.agent.to_string(),
            row.metric.clone(),
            format_value(row.value),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_metrics(metrics: &RunMetrics, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_metrics_to(&mut w, metrics)?;
    w.flush()?;
    Ok(())
}

pub fn read_metrics_from<R: Read>(r: R) -> Result<Vec<MetricRow>> {
    let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    if csv.headers()?.iter().ne(CSV_COLUMNS) {
        return Err(Error::Format(format!(
            "expected columns {}",
            CSV_COLUMNS.join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let line = rows.len() + 1;
        let parse_err = |what: &str| Error::Format(format!("bad {what} in data row {line}"));
        rows.push(MetricRow {
            epoch: field(0).parse().map_err(|_| parse_err("epoch"))?,
            seed: field(1).parse()?,
            agent: field(2).parse().map_err(|_| parse_err("agent"))?,
            metric: field(3).to_string(),
            value: field(4).parse().map_err(|_| parse_err("value"))?,
        });
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    read_metrics_from(std::fs::File::open(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    /// Per-seed metric name in the CSV.
    pub metric: String,
    pub mean: String,
    pub std: String,
    pub agents: Vec<usize>,
    pub y_label: String,
}

/// Describes how to draw the CSV: one mean line with a one-std band per series and agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub csv: String,
    pub x: String,
    pub x_label: String,
    pub series: Vec<PlotSeries>,
}

impl PlotManifest {
    pub fn for_metrics(metrics: &RunMetrics, csv_name: &str) -> Self {
        let series = metrics
            .metric_names()
            .into_iter()
            .map(|metric| {
                let mut agents: Vec<usize> = metrics
                    .series
                    .iter()
                    .filter(|r| r.metric == metric)
                    .map(|r| r.agent)
                    .collect();
                agents.sort_unstable();
                agents.dedup();
                PlotSeries {
                    mean: format!("{metric}_mean"),
                    std: format!("{metric}_std"),
                    agents,
                    y_label: y_label(&metric),
                    metric,
                }
            })
            .collect();
        PlotManifest {
            csv: csv_name.to_string(),
            x: "epoch".into(),
            x_label: "epoch (one update batch)".into(),
            series,
        }
    }
}

fn y_label(metric: &str) -> String {
    let base = metric.rsplit('/').next().unwrap_or(metric);
    match base {
        "ndr" => "normalized discounted reward".into(),
        "defection" => "defection rate".into(),
        "defection_other_coin" => "defection rate with an other-colour coin in view".into(),
        "own_coin" => "own-colour coin pick probability".into(),
        "reward" => "episode reward".into(),
        other => other.replace('_', " "),
    }
}
