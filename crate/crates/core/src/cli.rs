//! Command-line front end. The `voila` binary is a thin wrapper around [`main`].

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::allocation::{self, AllocationInput, Policy};
use crate::datagen::{
    adversarial_stream, replay_csv, synthetic_stream, write_csv, AdversarialConfig, BatchPlan, CsvSchema,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_mean, exact_mean, relative_error, sample_variance};
use crate::experiment::{run_and_write, BatchSize, ExperimentConfig, Method};
use crate::model::{Allocation, StratifiedSample, StratumId, StratumSummary, WeightedRecord};
use crate::offline::{allocate_integer, offline_pipeline, voila_allocate};
use crate::reduction::{brute_force_reduction, fast_ssr, kkt_check, single_ssr, ssr, ReductionInstance, ReductionRow};
use crate::stream::{Reservoir, SVoila, SsUnif, StreamSampler};

#[derive(Debug, Parser)]
#[command(name = "voila", version, about = "Variance-optimal stratified random sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Stratum column; repeat to join several with `|`.
    #[arg(long = "stratum-column", default_value = "stratum")]
    stratum_columns: Vec<String>,
    #[arg(long, default_value = "value")]
    value_column: String,
}

impl DataArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            stratum_columns: self.stratum_columns.clone(),
            value_column: self.value_column.clone(),
            ..CsvSchema::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample sizes from a stats file (`stratum,count,sigma`).
    Allocate {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        budget: u64,
        #[arg(long, default_value = "voila")]
        policy: Policy,
        /// Print the real-valued allocation instead of whole records.
        #[arg(long)]
        real: bool,
    },
    /// Reduce a sample described by an instance file (`stratum,weight,size`).
    Reduce {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        target: f64,
        /// `fast`, `ssr` or `single` (the stratum to lose one element).
        #[arg(long, default_value = "fast")]
        algorithm: String,
        /// Cross-check the two exact algorithms, optimality conditions and,
        /// for tiny integer instances, exhaustive search.
        #[arg(long)]
        oracle: bool,
    },
    /// Two-pass stratified sample of a CSV file.
    SampleOffline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "voila")]
        policy: Policy,
        #[arg(long)]
        budget: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample file (`stratum,value,key`); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-pass stratified sample of a CSV file replayed as a stream.
    Stream {
        #[command(flatten)]
        data: DataArgs,
        /// `svoila:<b>`, `ssunif[:<b>]` or `reservoir`; `<b>` may be `source`.
        #[arg(long, default_value = "svoila:1")]
        method: Method,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Column whose changes end a batch, for `<b>` = `source`.
        #[arg(long)]
        batch_column: Option<String>,
        /// Compare only this many leading characters of the batch column.
        #[arg(long)]
        batch_prefix: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON lines of sizes, stats and variance after every batch.
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Write the drifting Gaussian scenario as CSV.
    GenSynthetic {
        /// TOML file with any `SyntheticConfig` fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        total_records: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the adversarial stream as CSV.
    GenAdversarial {
        /// TOML file with `r` and `alpha`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        r: Option<u32>,
        #[arg(long)]
        alpha: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean estimate of a sample file against the full data.
    Evaluate {
        /// Sample file (`stratum,value[,key]`).
        #[arg(long)]
        sample: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Restrict the query to these strata (comma separated).
        #[arg(long, value_delimiter = ',')]
        strata: Option<Vec<String>>,
    },
    /// Run an experiment config; flags override the file's fields.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated methods; an empty list is rejected.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        csv_mirror: Option<PathBuf>,
        #[arg(long)]
        per_seed: bool,
        #[arg(long)]
        timing: bool,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 for usage and config errors, 1 otherwise.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidInput(_) => 2,
                _ => 1,
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Allocate {
            stats,
            budget,
            policy,
            real,
        } => {
            let strata = read_stats(&stats)?;
            let alloc = if real {
                real_allocation(&strata, policy, budget)?
            } else if policy == Policy::Neyman {
                // Plain Neyman is reported as computed, over-allocation included.
                allocation::neyman(&AllocationInput::new(strata, budget)?)?.floored()
            } else {
                allocate_integer(&strata, policy, budget)?
            };
            print_allocation(&alloc)
        }
        Command::Reduce {
            instance,
            target,
            algorithm,
            oracle,
        } => {
            let inst = ReductionInstance::new(read_instance(&instance)?, target)?;
            if algorithm == "single" {
                println!("{}", single_ssr(&inst)?);
                return Ok(());
            }
            let alloc = match algorithm.as_str() {
                "fast" => fast_ssr(&inst)?,
                "ssr" => ssr(&inst)?,
                other => return Err(Error::InvalidInput(format!("unknown algorithm `{other}`"))),
            };
            if oracle {
                cross_check(&inst, &alloc)?;
            }
            print_allocation(&alloc)
        }
        Command::SampleOffline {
            data,
            policy,
            budget,
            seed,
            out,
        } => {
            let src = replay_csv(&data.data, &data.schema(), &BatchPlan::Fixed(1))?;
            let (_, sample) = offline_pipeline(&src.to_dataset(), policy, budget, seed)?;
            write_sample(out.as_deref(), &sample.records())
        }
        Command::Stream {
            data,
            method,
            budget,
            seed,
            batch_column,
            batch_prefix,
            out,
            snapshots,
        } => {
            let plan = match &batch_column {
                Some(c) => BatchPlan::Column {
                    column: c.clone(),
                    prefix: batch_prefix,
                },
                None => BatchPlan::Fixed(1),
            };
            let src = replay_csv(&data.data, &data.schema(), &plan)?;
            let (mut sampler, batch): (Box<dyn StreamSampler>, BatchSize) = match method {
                Method::SVoila(b) => (Box::new(SVoila::new(budget, seed)?), b),
                Method::SsUnif(b) => (Box::new(SsUnif::new(budget, seed)?), b),
                Method::Reservoir => (Box::new(Reservoir::new(budget, seed)?), BatchSize::Fixed(usize::MAX)),
                Method::Offline(p) => {
                    return Err(Error::InvalidInput(format!(
                        "`{p}` is not a streaming method; use sample-offline"
                    )))
                }
            };
            let batches = match batch {
                BatchSize::Fixed(b) => src.records().chunks(b).collect::<Vec<_>>(),
                BatchSize::Source if src.has_own_batches() => src.batches(1),
                BatchSize::Source => {
                    return Err(Error::InvalidInput("batch size `source` needs --batch-column".into()))
                }
            };
            let mut snap = match &snapshots {
                Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
                None => None,
            };
            for b in batches {
                sampler.feed(b)?;
                if let Some(w) = snap.as_mut() {
                    serde_json::to_writer(&mut *w, &sampler.snapshot())?;
                    w.write_all(b"\n").map_err(|e| Error::io("<snapshots>", e))?;
                }
            }
            if let (Some(w), Some(p)) = (snap.as_mut(), &snapshots) {
                w.flush().map_err(|e| Error::io(p, e))?;
            }
            write_sample(out.as_deref(), &sampler.sample().records())
        }
        Command::GenSynthetic {
            config,
            seed,
            total_records,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => SyntheticConfig::from_toml(&read_text(&p)?)?,
                None => SyntheticConfig::default(),
            };
            if let Some(n) = total_records {
                cfg.total_records = n;
            }
            write_csv(&out, synthetic_stream(&cfg, seed)?.records())
        }
        Command::GenAdversarial { config, r, alpha, out } => {
            let file = match config {
                Some(p) => Some(AdversarialConfig::from_toml(&read_text(&p)?)?),
                None => None,
            };
            let r = r
                .or(file.map(|c| c.r))
                .ok_or_else(|| Error::InvalidInput("--r is required".into()))?;
            let alpha = alpha
                .or(file.map(|c| c.alpha))
                .ok_or_else(|| Error::InvalidInput("--alpha is required".into()))?;
            write_csv(&out, adversarial_stream(r, alpha)?.records())
        }
        Command::Evaluate { sample, data, strata } => {
            let src = replay_csv(&data.data, &data.schema(), &BatchPlan::Fixed(1))?;
            let dataset = src.to_dataset();
            let sample = load_sample(&sample, &dataset)?;
            let scope: Option<HashSet<StratumId>> = strata.map(|v| v.iter().map(|s| StratumId::parse(s)).collect());
            let estimate = estimate_mean(&sample, scope.as_ref())?;
            let exact = exact_mean(&dataset, scope.as_ref())?;
            let report = serde_json::json!({
                "estimate": estimate,
                "exact": exact,
                "relative_error": relative_error(estimate, exact).ok(),
                "variance": sample_variance(&sample).ok().map(|r| r.total_variance),
                "sample_size": sample.total_size(),
            });
            println!("{report}");
            Ok(())
        }
        Command::Run {
            config,
            budget,
            seeds,
            methods,
            output,
            csv_mirror,
            per_seed,
            timing,
        } => {
            let mut cfg: ExperimentConfig =
                toml::from_str(&read_text(&config)?).map_err(|e| Error::Config(e.to_string()))?;
            if let Some(b) = budget {
                cfg.budget = b;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(m) = methods {
                cfg.methods = m
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?;
            }
            cfg.output = output.or(cfg.output);
            cfg.csv_mirror = csv_mirror.or(cfg.csv_mirror);
            cfg.per_seed |= per_seed;
            cfg.timing |= timing;
            run_and_write(&cfg).map(|_| ())
        }
    }
}

fn real_allocation(strata: &[StratumSummary], policy: Policy, budget: u64) -> Result<Allocation> {
    let input = AllocationInput::new(strata.to_vec(), budget)?;
    match policy {
        Policy::Voila => voila_allocate(strata, budget),
        Policy::Neyman => allocation::neyman(&input),
        Policy::NeymanPlus => allocation::neyman_plus(&input),
        Policy::Proportional => allocation::proportional(&input),
        Policy::Uniform => Ok(allocation::uniform_redistribute(&input)),
    }
}

fn cross_check(inst: &ReductionInstance, alloc: &Allocation) -> Result<()> {
    let a = ssr(inst)?.sizes();
    let b = fast_ssr(inst)?.sizes();
    if let Some((i, (x, y))) = a.iter().zip(&b).enumerate().find(|(_, (x, y))| (*x - *y).abs() > 1e-9) {
        return Err(Error::InvalidInput(format!(
            "oracle mismatch at stratum {}: ssr {x} vs fast_ssr {y}",
            inst.rows[i].stratum
        )));
    }
    if !kkt_check(inst, alloc, 1e-6) {
        return Err(Error::InvalidInput("allocation fails the optimality conditions".into()));
    }
    let integral = inst.rows.iter().all(|r| r.size.fract() == 0.0) && inst.target.fract() == 0.0;
    if integral {
        if let Ok(best) = brute_force_reduction(inst) {
            let weights: Vec<f64> = inst.rows.iter().map(|r| r.weight).collect();
            let (cont, int) = (
                crate::reduction::objective(&weights, &alloc.sizes()),
                crate::reduction::objective(&weights, &best.sizes()),
            );
            if cont > int * (1.0 + 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "continuous objective {cont} exceeds the integer optimum {int}"
                )));
            }
        }
    }
    eprintln!("oracle: ssr, fast_ssr and optimality conditions agree");
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for (k, row) in reader.deserialize().enumerate() {
        rows.push(row.map_err(|e| Error::Parse {
            line: k as u64 + 2,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct StatsRow {
    stratum: String,
    count: u64,
    sigma: f64,
}

fn read_stats(path: &Path) -> Result<Vec<StratumSummary>> {
    Ok(read_rows::<StatsRow>(path)?
        .into_iter()
        .map(|r| StratumSummary::new(StratumId::parse(&r.stratum), r.count, r.sigma))
        .collect())
}

#[derive(Deserialize)]
struct InstanceRow {
    stratum: String,
    weight: f64,
    size: f64,
}

fn read_instance(path: &Path) -> Result<Vec<ReductionRow>> {
    Ok(read_rows::<InstanceRow>(path)?
        .into_iter()
        .map(|r| ReductionRow::new(StratumId::parse(&r.stratum), r.weight, r.size))
        .collect())
}

#[derive(Deserialize)]
struct SampleRow {
    stratum: String,
    value: f64,
    #[serde(default)]
    key: Option<f64>,
}

/// A sample file joined with statistics of the full data.
fn load_sample(path: &Path, dataset: &crate::offline::Dataset) -> Result<StratifiedSample> {
    let rows = read_rows::<SampleRow>(path)?;
    let mut sample = StratifiedSample::new(rows.len());
    for (id, stats) in dataset.stats() {
        let i = sample.slot_index(&id);
        sample.slot_mut(i).stats = stats;
    }
    for row in rows {
        let id = StratumId::parse(&row.stratum);
        let i = sample
            .position(&id)
            .ok_or_else(|| Error::InvalidInput(format!("sampled stratum {id} does not occur in the data")))?;
        sample.slot_mut(i).sample.offer(row.value, row.key.unwrap_or(0.5));
    }
    Ok(sample)
}

fn print_allocation(alloc: &Allocation) -> Result<()> {
    let stdout = io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    w.write_record(["stratum", "size"])?;
    for s in alloc.shares() {
        w.write_record([s.stratum.to_string(), s.size.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<stdout>", e))
}

fn write_sample(out: Option<&Path>, records: &[WeightedRecord]) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(BufWriter::new(sink));
    w.write_record(["stratum", "value", "key"])?;
    for r in records {
        w.write_record([r.stratum.to_string(), r.value.to_string(), r.key.to_string()])?;
    }
    w.flush()
        .map_err(|e| Error::io(out.unwrap_or(Path::new("<stdout>")), e))
}
