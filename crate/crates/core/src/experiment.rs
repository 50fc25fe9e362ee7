//! Experiment driver: replays a source through every configured method and
//! records metrics at checkpoints.
//!
//! Offline methods are rerun from scratch on the stream prefix at each
//! checkpoint; the prefix is held in memory (one `Record` per element seen).
//! Every `(seed, method)` pair runs independently on the rayon pool, and the
//! results are merged in config order, so the output does not depend on
//! scheduling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::allocation::{cosine_distance, Policy};
use crate::datagen::{
    adversarial_stream, replay_csv, synthetic_stream, BatchPlan, CsvSchema, StreamSource, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_mean, exact_mean, relative_error, sample_variance, variance_of_estimate};
use crate::model::{Allocation, StratumId};
use crate::offline::{allocate_integer, materialize, voila_allocate_integer, Dataset};
use crate::stream::{Reservoir, SVoila, SsUnif, StreamSampler};

/// Minibatch size of a streaming method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Fixed(usize),
    /// The source's own batches (e.g. one day of a CSV file).
    Source,
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Fixed(b) => write!(f, "{b}"),
            BatchSize::Source => f.write_str("source"),
        }
    }
}

impl FromStr for BatchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "source" {
            return Ok(BatchSize::Source);
        }
        match s.parse::<usize>() {
            Ok(b) if b >= 1 => Ok(BatchSize::Fixed(b)),
            _ => Err(Error::Config(format!(
                "batch size `{s}` must be a positive integer or `source`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Offline(Policy),
    SVoila(BatchSize),
    SsUnif(BatchSize),
    Reservoir,
}

impl Method {
    pub fn is_streaming(&self) -> bool {
        !matches!(self, Method::Offline(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Offline(p) => write!(f, "{p}"),
            Method::SVoila(b) => write!(f, "svoila:{b}"),
            Method::SsUnif(BatchSize::Fixed(1)) => f.write_str("ssunif"),
            Method::SsUnif(b) => write!(f, "ssunif:{b}"),
            Method::Reservoir => f.write_str("reservoir"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// An offline policy name (`voila`, `neyman`, `neyman_plus`, ...), `reservoir`,
    /// `svoila:<b>`, `ssunif` or `ssunif:<b>`; `<b>` may be `source`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("svoila", Some(b)) => Ok(Method::SVoila(b.parse()?)),
            ("svoila", None) => Ok(Method::SVoila(BatchSize::Fixed(1))),
            ("ssunif", Some(b)) => Ok(Method::SsUnif(b.parse()?)),
            ("ssunif", None) => Ok(Method::SsUnif(BatchSize::Fixed(1))),
            ("reservoir", None) => Ok(Method::Reservoir),
            (_, None) => name
                .parse()
                .map(Method::Offline)
                .map_err(|_| Error::Config(format!("unknown method `{s}`"))),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// When metrics are taken. Every run also records one at the end of the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointSpec {
    /// After every `k` records.
    Every(u64),
    /// At each of the source's own batch boundaries.
    Batch,
    End,
}

impl Serialize for CheckpointSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CheckpointSpec::Every(k) => s.serialize_u64(*k),
            CheckpointSpec::Batch => s.serialize_str("batch"),
            CheckpointSpec::End => s.serialize_str("end"),
        }
    }
}

impl<'de> Deserialize<'de> for CheckpointSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Every(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Every(0) => Err(serde::de::Error::custom("checkpoint interval must be positive")),
            Raw::Every(k) => Ok(CheckpointSpec::Every(k)),
            Raw::Name(n) if n == "batch" => Ok(CheckpointSpec::Batch),
            Raw::Name(n) if n == "end" => Ok(CheckpointSpec::End),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "checkpoint must be a record count, `batch` or `end`, got `{n}`"
            ))),
        }
    }
}

/// Where the stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Csv {
        path: PathBuf,
        #[serde(default = "default_stratum_columns")]
        stratum_columns: Vec<String>,
        #[serde(default = "default_value_column")]
        value_column: String,
        #[serde(default)]
        separator: Option<String>,
        /// Column whose changes mark batch boundaries.
        #[serde(default)]
        batch_column: Option<String>,
        #[serde(default)]
        batch_prefix: Option<usize>,
    },
    Synthetic {
        #[serde(default)]
        config: SyntheticConfig,
        /// Generator seed; defaults to each run's seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Adversarial {
        r: u32,
        alpha: u32,
    },
}

fn default_stratum_columns() -> Vec<String> {
    vec!["stratum".into()]
}

fn default_value_column() -> String {
    "value".into()
}

impl SourceSpec {
    /// The stream seen by run `seed`.
    pub fn load(&self, seed: u64) -> Result<StreamSource> {
        match self {
            SourceSpec::Csv {
                path,
                stratum_columns,
                value_column,
                separator,
                batch_column,
                batch_prefix,
            } => {
                let schema = CsvSchema {
                    stratum_columns: stratum_columns.clone(),
                    value_column: value_column.clone(),
                    separator: separator.clone().unwrap_or_else(|| "|".into()),
                };
                let plan = match batch_column {
                    Some(c) => BatchPlan::Column {
                        column: c.clone(),
                        prefix: *batch_prefix,
                    },
                    None => BatchPlan::Fixed(1),
                };
                replay_csv(path, &schema, &plan)
            }
            SourceSpec::Synthetic { config, seed: s } => synthetic_stream(config, s.unwrap_or(seed)),
            SourceSpec::Adversarial { r, alpha } => adversarial_stream(*r, *alpha),
        }
    }

    fn depends_on_seed(&self) -> bool {
        matches!(self, SourceSpec::Synthetic { seed: None, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceSpec,
    pub methods: Vec<Method>,
    pub budget: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: CheckpointSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub csv_mirror: Option<PathBuf>,
    /// Strata of the mean query used for `relative_error`; all when absent.
    #[serde(default)]
    pub query_strata: Option<Vec<StratumId>>,
    /// Also emit one line per seed.
    #[serde(default)]
    pub per_seed: bool,
    /// Measure per-batch wall-clock time (makes the output nondeterministic).
    #[serde(default)]
    pub timing: bool,
}

fn default_checkpoint() -> CheckpointSpec {
    CheckpointSpec::End
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let SourceSpec::Synthetic { config, .. } = &self.source {
            config.validate()?;
        }
        Ok(())
    }
}

/// Metrics of one method at one checkpoint, averaged over seeds unless `seed` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub checkpoint: u64,
    pub elements_seen: u64,
    pub method: String,
    pub seed: Option<u64>,
    pub allocation: BTreeMap<StratumId, f64>,
    /// `None` when undefined for some seed (a stratum with spread but no sample).
    pub variance: Option<f64>,
    pub cosine_distance: Option<f64>,
    pub relative_error: Option<f64>,
    pub batch_time_us: Option<f64>,
}

/// One method's metrics for one seed at each checkpoint.
fn run_one(
    cfg: &ExperimentConfig,
    src: &StreamSource,
    cuts: &[usize],
    method: Method,
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    let scope: Option<HashSet<StratumId>> = cfg.query_strata.as_ref().map(|v| v.iter().cloned().collect());
    let budget = cfg.budget as usize;
    let mut sampler: Option<Box<dyn StreamSampler>> = match method {
        Method::Offline(_) => None,
        Method::SVoila(_) => Some(Box::new(SVoila::new(budget, seed)?)),
        Method::SsUnif(_) => Some(Box::new(SsUnif::new(budget, seed)?)),
        Method::Reservoir => Some(Box::new(Reservoir::new(budget, seed)?)),
    };
    let batch = match method {
        Method::SVoila(b) | Method::SsUnif(b) => b,
        _ => BatchSize::Fixed(1),
    };
    let batches = batches_between_cuts(src, cuts, batch)?;

    let mut out = Vec::with_capacity(cuts.len());
    let mut done = 0;
    for (c, &end) in cuts.iter().enumerate() {
        let prefix = Dataset::new(src.records()[..end].to_vec());
        let stats = prefix.summaries();
        let reference = voila_allocate_integer(&stats, cfg.budget)?;
        let exact = exact_mean(&prefix, scope.as_ref()).ok();

        let (alloc, variance, estimate, time) = match (&mut sampler, method) {
            (Some(s), _) => {
                let mut elapsed = 0.0;
                let mut count = 0usize;
                while done < batches.len() && batches[done].1 <= end {
                    let (start, stop) = batches[done];
                    let t = Instant::now();
                    s.feed(&src.records()[start..stop])?;
                    elapsed += t.elapsed().as_secs_f64();
                    count += 1;
                    done += 1;
                }
                let variance = sample_variance(s.sample()).ok().map(|r| r.total_variance);
                let time = (cfg.timing && count > 0).then(|| elapsed * 1e6 / count as f64);
                (
                    s.sample().sizes(),
                    variance,
                    estimate_mean(s.sample(), scope.as_ref()).ok(),
                    time,
                )
            }
            (None, Method::Offline(policy)) => {
                let alloc = allocate_integer(&stats, policy, cfg.budget)?;
                let variance = variance_of_estimate(&stats, &alloc).ok().map(|r| r.total_variance);
                let sample = materialize(&prefix, &alloc, seed)?;
                (alloc, variance, estimate_mean(&sample, scope.as_ref()).ok(), None)
            }
            (None, _) => unreachable!("streaming methods always have a sampler"),
        };
        let rel = match (estimate, exact) {
            (Some(e), Some(x)) => relative_error(e, x).ok(),
            _ => None,
        };
        out.push(MetricsRecord {
            checkpoint: c as u64,
            elements_seen: end as u64,
            method: method.to_string(),
            seed: Some(seed),
            allocation: allocation_map(&alloc),
            variance: variance.filter(|v| v.is_finite()),
            cosine_distance: cosine_distance(&alloc, &reference).ok(),
            relative_error: rel,
            batch_time_us: time,
        });
    }
    Ok(out)
}

fn allocation_map(alloc: &Allocation) -> BTreeMap<StratumId, f64> {
    alloc.shares().iter().map(|s| (s.stratum.clone(), s.size)).collect()
}

/// Batch `[start, end)` ranges. No batch straddles a checkpoint: a batch that
/// would is cut short there.
fn batches_between_cuts(src: &StreamSource, cuts: &[usize], batch: BatchSize) -> Result<Vec<(usize, usize)>> {
    let mut bounds: Vec<usize> = match batch {
        BatchSize::Fixed(b) => {
            let mut v = Vec::new();
            let mut start = 0;
            for &cut in cuts {
                let mut at = start;
                while at < cut {
                    at = (at + b).min(cut);
                    v.push(at);
                }
                start = cut;
            }
            v
        }
        BatchSize::Source => {
            if !src.has_own_batches() {
                return Err(Error::Config(
                    "batch size `source` needs a source with batch_column".into(),
                ));
            }
            let mut at = 0;
            src.batches(1)
                .iter()
                .map(|b| {
                    at += b.len();
                    at
                })
                .collect()
        }
    };
    bounds.extend_from_slice(cuts);
    bounds.sort_unstable();
    bounds.dedup();
    let mut start = 0;
    Ok(bounds
        .into_iter()
        .filter(|&e| e > 0)
        .map(|e| {
            let r = (start, e);
            start = e;
            r
        })
        .collect())
}

fn checkpoints(spec: CheckpointSpec, src: &StreamSource) -> Result<Vec<usize>> {
    let n = src.len();
    let mut cuts = match spec {
        CheckpointSpec::Every(k) => (1..).map(|i| i * k as usize).take_while(|&c| c < n).collect(),
        CheckpointSpec::Batch => {
            if !src.has_own_batches() {
                return Err(Error::Config(
                    "checkpoint = \"batch\" needs a source with batch_column".into(),
                ));
            }
            let mut at = 0;
            src.batches(1)
                .iter()
                .map(|b| {
                    at += b.len();
                    at
                })
                .collect()
        }
        CheckpointSpec::End => Vec::new(),
    };
    if cuts.last() != Some(&n) {
        cuts.push(n);
    }
    Ok(cuts)
}

/// Runs every `(seed, method)` pair and returns the metrics in
/// `(checkpoint, method)` order, seed-averaged lines first and per-seed
/// lines after when requested.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let shared = if cfg.source.depends_on_seed() {
        None
    } else {
        Some(cfg.source.load(0)?)
    };
    let sources: Vec<StreamSource> = match &shared {
        Some(_) => Vec::new(),
        None => cfg
            .seeds
            .par_iter()
            .map(|&s| cfg.source.load(s))
            .collect::<Result<_>>()?,
    };
    let source_of = |k: usize| shared.as_ref().unwrap_or_else(|| &sources[k]);
    if source_of(0).is_empty() {
        return Err(Error::EmptyPopulation);
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|k| (0..cfg.methods.len()).map(move |m| (k, m)))
        .collect();
    let results: Vec<Vec<MetricsRecord>> = jobs
        .par_iter()
        .map(|&(k, m)| {
            let src = source_of(k);
            let cuts = checkpoints(cfg.checkpoint, src)?;
            run_one(cfg, src, &cuts, cfg.methods[m], cfg.seeds[k])
        })
        .collect::<Result<_>>()?;

    // results[k * methods + m][checkpoint]
    let methods = cfg.methods.len();
    let n_cuts = results.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::new();
    for c in 0..n_cuts {
        for m in 0..methods {
            let runs: Vec<&MetricsRecord> = results.iter().skip(m).step_by(methods).map(|r| &r[c]).collect();
            out.push(average(&runs));
        }
    }
    if cfg.per_seed {
        for c in 0..n_cuts {
            for m in 0..methods {
                out.extend(results.iter().skip(m).step_by(methods).map(|r| r[c].clone()));
            }
        }
    }
    Ok(out)
}

fn average(runs: &[&MetricsRecord]) -> MetricsRecord {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| -> Option<f64> {
        runs.iter().map(|r| f(r)).sum::<Option<f64>>().map(|s| s / n)
    };
    let mut allocation: BTreeMap<StratumId, f64> = BTreeMap::new();
    for r in runs {
        for (id, size) in &r.allocation {
            *allocation.entry(id.clone()).or_insert(0.0) += size / n;
        }
    }
    let first = runs[0];
    MetricsRecord {
        checkpoint: first.checkpoint,
        elements_seen: (runs.iter().map(|r| r.elements_seen as f64).sum::<f64>() / n).round() as u64,
        method: first.method.clone(),
        seed: None,
        allocation,
        variance: mean(&|r| r.variance),
        cosine_distance: mean(&|r| r.cosine_distance),
        relative_error: mean(&|r| r.relative_error),
        batch_time_us: mean(&|r| r.batch_time_us),
    }
}

/// One JSON object per line.
pub fn write_jsonl(out: &mut impl Write, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<metrics>", e))?;
    }
    Ok(())
}

/// The same records as CSV; the allocation column holds its JSON object.
pub fn write_csv_mirror(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record([
        "checkpoint",
        "elements_seen",
        "method",
        "seed",
        "allocation",
        "variance",
        "cosine_distance",
        "relative_error",
        "batch_time_us",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.checkpoint.to_string(),
            r.elements_seen.to_string(),
            r.method.clone(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            serde_json::to_string(&r.allocation)?,
            opt(r.variance),
            opt(r.cosine_distance),
            opt(r.relative_error),
            opt(r.batch_time_us),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Runs `cfg` and writes its metrics to `cfg.output` (stdout when unset) and
/// the CSV mirror if configured.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let records = run_experiment(cfg)?;
    match &cfg.output {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write_jsonl(&mut w, &records)?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_jsonl(&mut lock, &records)?;
        }
    }
    if let Some(path) = &cfg.csv_mirror {
        write_csv_mirror(path, &records)?;
    }
    Ok(records)
}
