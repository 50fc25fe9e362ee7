//! Stream sources: CSV replay, a drifting Gaussian scenario and the
//! adversarial stream that defeats any streaming sampler by a factor of `r`.
//!
//! Sources are materialized in memory, so replaying one is free and always
//! yields the same sequence.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Record, StratumId};
use crate::offline::Dataset;

/// How a source is cut into minibatches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchPlan {
    /// `b` records per batch; the last one may be shorter.
    Fixed(usize),
    /// A new batch whenever the column's value changes. With `prefix`, only
    /// the first `prefix` characters count, so `YYYY-MM-DD` timestamps give
    /// one batch per day.
    Column { column: String, prefix: Option<usize> },
}

/// Records in stream order plus, for column-bucketed sources, batch ends.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamSource {
    records: Vec<Record>,
    ends: Option<Vec<usize>>,
}

impl StreamSource {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records, ends: None }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_own_batches(&self) -> bool {
        self.ends.is_some()
    }

    /// Minibatches: the source's own boundaries if it has them, otherwise
    /// `fallback` records at a time.
    pub fn batches(&self, fallback: usize) -> Vec<&[Record]> {
        match &self.ends {
            Some(ends) => {
                let mut start = 0;
                ends.iter()
                    .map(|&end| {
                        let b = &self.records[start..end];
                        start = end;
                        b
                    })
                    .collect()
            }
            None => self.records.chunks(fallback.max(1)).collect(),
        }
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset::new(self.records.clone())
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }
}

/// Which CSV columns hold the stratum and the value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub stratum_columns: Vec<String>,
    pub value_column: String,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    "|".into()
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            stratum_columns: vec!["stratum".into()],
            value_column: "value".into(),
            separator: default_separator(),
        }
    }
}

/// Reads a headed CSV file in file order. The stratum id joins the stratum
/// columns with the schema separator; a single all-digit column gives a
/// numeric id.
pub fn replay_csv(path: impl AsRef<Path>, schema: &CsvSchema, plan: &BatchPlan) -> Result<StreamSource> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let strata: Vec<usize> = schema
        .stratum_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<_>>()?;
    if strata.is_empty() {
        return Err(Error::InvalidInput("no stratum column configured".into()));
    }
    let value = column(&schema.value_column)?;
    let bucket = match plan {
        BatchPlan::Fixed(0) => return Err(Error::InvalidInput("batch size must be at least 1".into())),
        BatchPlan::Fixed(_) => None,
        BatchPlan::Column { column: c, prefix } => Some((column(c)?, *prefix)),
    };

    let mut records = Vec::new();
    let mut ends = Vec::new();
    let mut current: Option<String> = None;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let raw = field(value);
        let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("value `{raw}` in column `{}` is not a number", schema.value_column),
        })?;
        let parts: Vec<&str> = strata.iter().map(|&i| field(i)).collect();
        let id = StratumId::parse(&parts.join(&schema.separator));

        if let Some((col, prefix)) = bucket {
            let key = field(col);
            let key: String = match prefix {
                Some(p) => key.chars().take(p).collect(),
                None => key.to_string(),
            };
            if current.as_ref().is_some_and(|c| *c != key) {
                ends.push(records.len());
            }
            current = Some(key);
        }
        records.push(Record { stratum: id, value: v });
    }
    let ends = bucket.map(|_| {
        if !records.is_empty() {
            ends.push(records.len());
        }
        ends
    });
    Ok(StreamSource { records, ends })
}

/// Writes records as `stratum,value` with a header row.
pub fn write_csv(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["stratum", "value"])?;
    for r in records {
        w.write_record([r.stratum.to_string(), r.value.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

const DATA_STREAM: u64 = 1;

/// Equal-frequency Gaussian strata, one of which changes its spread mid-stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_strata: u32,
    pub base_sigma: f64,
    pub changed_stratum: u32,
    pub changed_sigma: f64,
    /// Records before the change; a change past the end never happens.
    pub change_at: u64,
    pub total_records: u64,
    pub mean: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_strata: 20,
            base_sigma: 1.0,
            changed_stratum: 12,
            changed_sigma: 20.0,
            change_at: 10_000,
            total_records: 50_000,
            mean: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_strata == 0 {
            return bad("num_strata must be at least 1".into());
        }
        if !(1..=self.num_strata).contains(&self.changed_stratum) {
            return bad(format!(
                "changed_stratum {} outside 1..={}",
                self.changed_stratum, self.num_strata
            ));
        }
        for (name, s) in [("base_sigma", self.base_sigma), ("changed_sigma", self.changed_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !self.mean.is_finite() {
            return bad("mean must be finite".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sigma(&self, stratum: u32, index: u64) -> f64 {
        if stratum == self.changed_stratum && index >= self.change_at {
            self.changed_sigma
        } else {
            self.base_sigma
        }
    }
}

/// Record `k` belongs to stratum `k mod r + 1` and is drawn from
/// `Normal(mean, sigma)`. Values come from ChaCha8 seeded with `seed` through
/// `rand_distr`'s ziggurat normal sampler.
///
/// The generator runs on ChaCha stream 1; samplers draw keys from stream 0,
/// so a sampler and a source may share a seed without their randomness
/// overlapping.
pub fn synthetic_stream(config: &SyntheticConfig, seed: u64) -> Result<StreamSource> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let r = config.num_strata as u64;
    let records = (0..config.total_records)
        .map(|k| {
            let stratum = (k % r) as u32 + 1;
            let z: f64 = standard.sample(&mut rng);
            Record::new(stratum, config.mean + config.sigma(stratum, k) * z)
        })
        .collect();
    Ok(StreamSource::new(records))
}

/// Parameters of [`adversarial_stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    pub r: u32,
    pub alpha: u32,
}

impl AdversarialConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Stratum `i` covers `[i, i + 1)` and receives `alpha - 1` copies of `i` and
/// one `i + eps` (`eps = 1 / (r - 1)`), then stratum 1 gets a last element
/// `2 - eps`.
///
/// Elements are emitted round by round over the strata so every stratum fills
/// up at the same pace: `alpha - 1` rounds of the plain values, one round of
/// the shifted ones, then the final element.
pub fn adversarial_stream(r: u32, alpha: u32) -> Result<StreamSource> {
    if r < 2 || alpha < 3 {
        return Err(Error::InvalidInput(format!(
            "adversarial stream needs r >= 2 and alpha >= 3, got r={r}, alpha={alpha}"
        )));
    }
    let eps = 1.0 / (r - 1) as f64;
    let mut records = Vec::with_capacity((r * alpha + 1) as usize);
    for _ in 0..alpha - 1 {
        records.extend((1..=r).map(|i| Record::new(i, i as f64)));
    }
    records.extend((1..=r).map(|i| Record::new(i, i as f64 + eps)));
    records.push(Record::new(1u32, 2.0 - eps));
    Ok(StreamSource::new(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StratumStats;
    use std::collections::BTreeMap;
    use std::io::Write;

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn fixed_batches_of_one() {
        let f = csv_file("stratum,value\n1,0.5\n2,1.5\n1,2\n");
        let src = replay_csv(f.path(), &CsvSchema::default(), &BatchPlan::Fixed(1)).unwrap();
        let batches = src.batches(1);
        assert_eq!(batches.len(), 3);
        assert!(batches.iter().all(|b| b.len() == 1));
        assert_eq!(src.records()[2], Record::new(1u32, 2.0));
    }

    #[test]
    fn joined_stratum_columns_and_day_buckets() {
        let f = csv_file(
            "country,parameter,date,value\n\
             US,co,2017-01-01T10:00,1\n\
             US,o3,2017-01-01T11:00,2\n\
             \"IN\",co,2017-01-02T00:00,3\n",
        );
        let schema = CsvSchema {
            stratum_columns: vec!["country".into(), "parameter".into()],
            value_column: "value".into(),
            separator: "|".into(),
        };
        let plan = BatchPlan::Column {
            column: "date".into(),
            prefix: Some(10),
        };
        let src = replay_csv(f.path(), &schema, &plan).unwrap();
        assert_eq!(src.records()[0].stratum, StratumId::Name("US|co".into()));
        assert_eq!(src.records()[2].stratum, StratumId::Name("IN|co".into()));
        let sizes: Vec<usize> = src.batches(100).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 1]);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let f = csv_file("stratum,value\n1,2\n1,oops\n");
        let err = replay_csv(f.path(), &CsvSchema::default(), &BatchPlan::Fixed(1)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let g = csv_file("group,value\n1,2\n");
        let err = replay_csv(g.path(), &CsvSchema::default(), &BatchPlan::Fixed(1)).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "stratum"));
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SyntheticConfig {
            total_records: 500,
            change_at: 100,
            ..Default::default()
        };
        let src = synthetic_stream(&cfg, 4).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), src.records()).unwrap();
        let back = replay_csv(f.path(), &CsvSchema::default(), &BatchPlan::Fixed(7)).unwrap();
        assert_eq!(back.records(), src.records());
    }

    #[test]
    fn synthetic_spreads() {
        let cfg = SyntheticConfig::default();
        let src = synthetic_stream(&cfg, 42).unwrap();
        assert_eq!(src, synthetic_stream(&cfg, 42).unwrap());
        let mut before: BTreeMap<StratumId, StratumStats> = BTreeMap::new();
        let mut after = StratumStats::new();
        for (k, r) in src.records().iter().enumerate() {
            if (k as u64) < cfg.change_at {
                before.entry(r.stratum.clone()).or_default().push(r.value);
            } else if r.stratum == StratumId::Index(12) {
                after.push(r.value);
            }
        }
        assert_eq!(before.len(), 20);
        for s in before.values() {
            assert_eq!(s.count(), 500);
            assert!((s.std_dev() - 1.0).abs() < 0.1, "{}", s.std_dev());
        }
        assert!((after.std_dev() - 20.0).abs() < 2.0);
        let single = SyntheticConfig {
            num_strata: 1,
            changed_stratum: 1,
            total_records: 10,
            change_at: 10,
            ..cfg
        };
        assert!(synthetic_stream(&single, 1)
            .unwrap()
            .records()
            .iter()
            .all(|r| r.stratum == StratumId::Index(1)));
    }

    #[test]
    fn synthetic_config_from_toml() {
        let cfg =
            SyntheticConfig::from_toml("num_strata = 4\nchanged_stratum = 2\ntotal_records = 40\nchange_at = 8\n")
                .unwrap();
        assert_eq!(cfg.base_sigma, 1.0);
        assert_eq!(cfg.num_strata, 4);
        assert!(SyntheticConfig::from_toml("num_strata = 4\n").is_err());
        assert!(SyntheticConfig::from_toml("strata = 4\n").is_err());
    }

    #[test]
    fn equal_frequencies() {
        let cfg = SyntheticConfig {
            num_strata: 7,
            changed_stratum: 3,
            total_records: 7 * 13,
            change_at: 5,
            ..Default::default()
        };
        let src = synthetic_stream(&cfg, 0).unwrap();
        for k in 1..=13 {
            let mut counts = BTreeMap::new();
            for r in &src.records()[..7 * k] {
                *counts.entry(r.stratum.clone()).or_insert(0) += 1;
            }
            assert!(counts.values().all(|&c| c == k));
        }
    }

    #[test]
    fn adversarial_shape() {
        let src = adversarial_stream(3, 3).unwrap();
        assert_eq!(src.len(), 10);
        assert_eq!(src.records()[9], Record::new(1u32, 1.5));
        assert!(adversarial_stream(1, 3).is_err() && adversarial_stream(3, 2).is_err());
    }

    #[test]
    fn adversarial_closed_forms() {
        for (r, alpha) in [(3u32, 3u32), (4, 10), (16, 100)] {
            let src = adversarial_stream(r, alpha).unwrap();
            let (body, last) = src.records().split_at(src.len() - 1);
            let eps = 1.0 / (r - 1) as f64;
            let a = alpha as f64;
            let mut stats: BTreeMap<StratumId, StratumStats> = BTreeMap::new();
            for rec in body {
                stats.entry(rec.stratum.clone()).or_default().push(rec.value);
            }
            for (i, s) in stats.values().enumerate() {
                let i = (i + 1) as f64;
                assert!((s.mean() - (i + eps / a)).abs() < 1e-12);
                assert!((s.std_dev() - (a - 1.0).sqrt() / a * eps).abs() < 1e-12);
            }
            let one = stats[&StratumId::Index(1)].updated(last[0].value);
            let w = one.weight();
            assert!(a.sqrt() / 2.0 <= w && w <= a.sqrt(), "{w}");
        }
    }
}
