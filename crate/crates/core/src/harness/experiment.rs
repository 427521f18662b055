//! Batch experiments over an instance suite.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::pipeline::{is_correct, run_variant, KChoice, Providers, VariantKind};
use crate::error::{Error, Result};
use crate::par;
use crate::providers::{ProviderConfig, QuestionKind, SyntheticInstance};
use crate::retrieval::ScoreOptions;
use crate::search::{SearchParams, TraceEntry};

/// Runs whose share of failures may not exceed this.
pub const FAILURE_LIMIT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[default]
    Oracle,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub variants: Vec<VariantKind>,
    /// K values swept by the fixed-K variants.
    pub k_values: Vec<KChoice>,
    pub search: SearchParams,
    pub provider: ProviderKind,
    pub http: ProviderConfig,
    /// Instances processed concurrently; 0 uses every core.
    pub workers: usize,
    /// Concurrent crop embeddings inside one instance; only used when
    /// `workers == 1` or for single-image commands.
    pub max_in_flight: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: None,
            output_dir: PathBuf::from("results"),
            variants: vec![
                VariantKind::BaselineFullImage,
                VariantKind::FixedKStrategy1,
                VariantKind::FixedKStrategy2,
                VariantKind::FixedKStrategy3,
                VariantKind::RapFull,
            ],
            k_values: vec![KChoice::Count(4), KChoice::Count(8), KChoice::Count(16)],
            search: SearchParams::default(),
            provider: ProviderKind::Oracle,
            http: ProviderConfig::default(),
            workers: 0,
            max_in_flight: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.provider == ProviderKind::Http {
            self.http.validate()?;
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("no variants selected".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        if self.variants.iter().any(|v| v.uses_fixed_k()) && self.k_values.is_empty() {
            return Err(Error::InvalidConfig(
                "fixed-k variants need k_values".into(),
            ));
        }
        Ok(())
    }

    /// Every (variant, k) pair to run, in output order.
    pub fn jobs(&self) -> Vec<(VariantKind, Option<KChoice>)> {
        let mut jobs = Vec::new();
        for &v in &self.variants {
            if v.uses_fixed_k() {
                jobs.extend(self.k_values.iter().map(|&k| (v, Some(k))));
            } else {
                jobs.push((v, None));
            }
        }
        jobs
    }
}

/// Where providers come from: a per-instance oracle or one shared backend.
#[derive(Clone)]
pub enum ProviderSource {
    Oracle,
    Shared(Providers),
}

impl ProviderSource {
    pub fn for_instance(&self, instance: &SyntheticInstance, threshold: f64) -> Result<Providers> {
        match self {
            ProviderSource::Oracle => Providers::oracle(instance, threshold),
            ProviderSource::Shared(p) => Ok(p.clone()),
        }
    }
}

/// One line of `results.csv`. Timing lives in a separate file so this one
/// is byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub instance_id: String,
    pub variant: VariantKind,
    pub k: Option<KChoice>,
    pub question_kind: QuestionKind,
    pub k_selected: Option<usize>,
    pub confidence: Option<f64>,
    pub answer: String,
    pub correct: bool,
    pub expansions: usize,
    pub evaluations: usize,
    pub error: String,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
struct TimingRow<'a> {
    instance_id: &'a str,
    variant: VariantKind,
    k: Option<KChoice>,
    wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
struct TraceLine<'a> {
    instance_id: &'a str,
    variant: VariantKind,
    #[serde(flatten)]
    entry: &'a TraceEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: VariantKind,
    pub k: Option<KChoice>,
    pub runs: usize,
    pub failures: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub accuracy_by_kind: BTreeMap<String, f64>,
    pub mean_k_selected: f64,
    pub median_k_by_kind: BTreeMap<String, f64>,
    pub k_histogram: BTreeMap<usize, usize>,
    pub mean_expansions: f64,
    pub mean_evaluations: f64,
    pub wall_time_s: f64,
    pub throughput_per_minute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub instances: usize,
    pub runs: usize,
    pub failures: usize,
    pub variants: Vec<VariantSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    /// `(instance_id, variant, trace)` for every searched run.
    pub traces: Vec<(String, VariantKind, Vec<TraceEntry>)>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }

    pub fn over_failure_limit(&self) -> bool {
        !self.rows.is_empty() && self.failures() as f64 > FAILURE_LIMIT * self.rows.len() as f64
    }

    pub fn summary_for(&self, variant: VariantKind, k: Option<KChoice>) -> Option<&VariantSummary> {
        self.summary
            .variants
            .iter()
            .find(|s| s.variant == variant && s.k == k)
    }

    pub fn results_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn timings_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(TimingRow {
                instance_id: &row.instance_id,
                variant: row.variant,
                k: row.k,
                wall_time_ms: row.wall_time_ms,
            })?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn traces_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (id, variant, trace) in &self.traces {
            for entry in trace {
                serde_json::to_writer(
                    &mut out,
                    &TraceLine {
                        instance_id: id,
                        variant: *variant,
                        entry,
                    },
                )?;
                out.push(b'\n');
            }
        }
        Ok(out)
    }

    /// Writes `results.csv`, `timings.csv`, `traces.jsonl` and
    /// `summary.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), self.results_csv()?)?;
        std::fs::write(dir.join("timings.csv"), self.timings_csv()?)?;
        std::fs::write(dir.join("traces.jsonl"), self.traces_jsonl()?)?;
        let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut f, &self.summary)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

fn summarise(
    variant: VariantKind,
    k: Option<KChoice>,
    rows: &[ResultRow],
    wall_s: f64,
) -> VariantSummary {
    let runs = rows.len();
    let correct = rows.iter().filter(|r| r.correct).count();
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| !r.failed()).collect();
    let mut accuracy_by_kind = BTreeMap::new();
    let mut median_k_by_kind = BTreeMap::new();
    for kind in [
        QuestionKind::SingleInstance,
        QuestionKind::CrossInstanceSpatial,
    ] {
        let of_kind: Vec<&ResultRow> = rows.iter().filter(|r| r.question_kind == kind).collect();
        if of_kind.is_empty() {
            continue;
        }
        let hits = of_kind.iter().filter(|r| r.correct).count();
        accuracy_by_kind.insert(kind.label().to_string(), ratio(hits as f64, of_kind.len()));
        let ks = of_kind
            .iter()
            .filter_map(|r| r.k_selected)
            .map(|k| k as f64)
            .collect();
        median_k_by_kind.insert(kind.label().to_string(), median(ks));
    }
    let mut k_histogram = BTreeMap::new();
    for k in ok.iter().filter_map(|r| r.k_selected) {
        *k_histogram.entry(k).or_insert(0) += 1;
    }
    VariantSummary {
        variant,
        k,
        runs,
        failures: runs - ok.len(),
        correct,
        accuracy: ratio(correct as f64, runs),
        accuracy_by_kind,
        mean_k_selected: ratio(
            ok.iter().filter_map(|r| r.k_selected).sum::<usize>() as f64,
            ok.len(),
        ),
        median_k_by_kind,
        k_histogram,
        mean_expansions: ratio(
            ok.iter().map(|r| r.expansions).sum::<usize>() as f64,
            ok.len(),
        ),
        mean_evaluations: ratio(
            ok.iter().map(|r| r.evaluations).sum::<usize>() as f64,
            ok.len(),
        ),
        wall_time_s: wall_s,
        throughput_per_minute: if wall_s > 0.0 {
            runs as f64 * 60.0 / wall_s
        } else {
            0.0
        },
    }
}

/// Runs every configured (variant, k) job over the suite.
///
/// Instances of one job run concurrently on `cfg.workers` threads; jobs run
/// one after another so each gets its own wall-clock throughput. Failed
/// runs are recorded in the report rather than aborting the batch. The
/// caller decides what to do when [`ExperimentReport::over_failure_limit`]
/// holds; [`run_and_write`] turns it into [`Error::FailureThreshold`].
pub fn run_experiment(
    suite: &[SyntheticInstance],
    cfg: &ExperimentConfig,
    source: &ProviderSource,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    for inst in suite {
        let n = inst.grid_rows * inst.grid_cols;
        for &(v, k) in &cfg.jobs() {
            if let Some(KChoice::Count(k)) = k {
                if k > n {
                    return Err(Error::InvalidConfig(format!(
                        "{v}: k = {k} exceeds the {n} crops of instance {}",
                        inst.id
                    )));
                }
            }
        }
    }
    // instances already run in parallel; each pipeline stays sequential
    // unless the batch itself is single-threaded
    let opts = ScoreOptions {
        max_in_flight: if cfg.workers == 1 {
            cfg.max_in_flight
        } else {
            1
        },
    };

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    for (variant, k) in cfg.jobs() {
        let start = Instant::now();
        let results = par::map(suite, cfg.workers, |inst| {
            let started = Instant::now();
            let out = source
                .for_instance(inst, cfg.search.threshold)
                .and_then(|p| run_variant(inst, variant, k, &p, &cfg.search, opts));
            (out, started.elapsed().as_secs_f64() * 1e3)
        });
        let wall_s = start.elapsed().as_secs_f64();

        let mut job_rows = Vec::with_capacity(suite.len());
        for (inst, (out, fallback_ms)) in suite.iter().zip(results) {
            let mut row = ResultRow {
                instance_id: inst.id.clone(),
                variant,
                k,
                question_kind: inst.question_kind,
                k_selected: None,
                confidence: None,
                answer: String::new(),
                correct: false,
                expansions: 0,
                evaluations: 0,
                error: String::new(),
                wall_time_ms: fallback_ms,
            };
            match out {
                Ok(rec) => {
                    row.k_selected = Some(rec.k_selected);
                    row.confidence = rec.confidence;
                    row.correct = is_correct(&rec.answer, &inst.answer_key);
                    row.answer = rec.answer;
                    row.expansions = rec.expansions;
                    row.evaluations = rec.evaluations;
                    row.wall_time_ms = rec.wall_ms;
                    if !rec.trace.is_empty() {
                        traces.push((inst.id.clone(), variant, rec.trace));
                    }
                }
                Err(err) => {
                    log::warn!("{} / {variant}: {err}", inst.id);
                    row.error = err.to_string();
                    if let Error::SearchAborted { trace, .. } = err {
                        traces.push((inst.id.clone(), variant, trace));
                    }
                }
            }
            job_rows.push(row);
        }
        job_rows.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        summaries.push(summarise(variant, k, &job_rows, wall_s));
        rows.extend(job_rows);
    }

    let failures = rows.iter().filter(|r| r.failed()).count();
    Ok(ExperimentReport {
        summary: Summary {
            instances: suite.len(),
            runs: rows.len(),
            failures,
            variants: summaries,
        },
        rows,
        traces,
    })
}

/// Runs the experiment, writes every output file, then fails with
/// [`Error::FailureThreshold`] if more than 20% of runs failed.
pub fn run_and_write(
    suite: &[SyntheticInstance],
    cfg: &ExperimentConfig,
    source: &ProviderSource,
    out_dir: impl AsRef<Path>,
) -> Result<ExperimentReport> {
    let report = run_experiment(suite, cfg, source)?;
    report.write_to(out_dir)?;
    if report.over_failure_limit() {
        return Err(Error::FailureThreshold {
            failed: report.failures(),
            total: report.rows.len(),
        });
    }
    Ok(report)
}

/// Best-first search against exhaustive enumeration on the same suite.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub search: VariantSummary,
    pub exhaustive: VariantSummary,
    /// Mean expansions of the search over those of exhaustive enumeration.
    pub expansion_ratio: f64,
    pub evaluation_ratio: f64,
    /// Search throughput over exhaustive throughput.
    pub speedup: f64,
}

pub fn run_bench(
    suite: &[SyntheticInstance],
    cfg: &ExperimentConfig,
    source: &ProviderSource,
) -> Result<BenchReport> {
    let cfg = ExperimentConfig {
        variants: vec![VariantKind::RapFull, VariantKind::ExhaustiveSearch],
        ..cfg.clone()
    };
    let report = run_experiment(suite, &cfg, source)?;
    if report.over_failure_limit() {
        return Err(Error::FailureThreshold {
            failed: report.failures(),
            total: report.rows.len(),
        });
    }
    let search = report.summary.variants[0].clone();
    let exhaustive = report.summary.variants[1].clone();
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(BenchReport {
        expansion_ratio: div(search.mean_expansions, exhaustive.mean_expansions),
        evaluation_ratio: div(search.mean_evaluations, exhaustive.mean_evaluations),
        speedup: div(
            search.throughput_per_minute,
            exhaustive.throughput_per_minute,
        ),
        search,
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::suite::{gen_suite, SuiteSpec};

    fn small_suite(n: usize) -> Vec<SyntheticInstance> {
        gen_suite(&SuiteSpec {
            count: n,
            ..SuiteSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn toml_overrides_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            variants = ["rap-full"]
            k_values = [2, "all"]
            workers = 1
            [search]
            threshold = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.variants, vec![VariantKind::RapFull]);
        assert_eq!(cfg.k_values, vec![KChoice::Count(2), KChoice::All]);
        assert_eq!(cfg.search.threshold, 0.5);
        assert_eq!(cfg.search.max_depth, 8);
        assert_eq!(cfg.max_in_flight, 8);
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[search]\nthreshold = 1.5").is_err());
    }

    #[test]
    fn empty_suite_gives_empty_report() {
        let r = run_experiment(&[], &ExperimentConfig::default(), &ProviderSource::Oracle).unwrap();
        assert!(r.rows.is_empty());
        assert!(!r.over_failure_limit());
        assert_eq!(
            r.summary.variants.len(),
            ExperimentConfig::default().jobs().len()
        );
        assert!(r
            .summary
            .variants
            .iter()
            .all(|s| s.runs == 0 && s.accuracy == 0.0));
    }

    #[test]
    fn oversized_k_is_a_config_error() {
        let cfg = ExperimentConfig {
            k_values: vec![KChoice::Count(65)],
            ..ExperimentConfig::default()
        };
        let err = run_experiment(&small_suite(2), &cfg, &ProviderSource::Oracle).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn rows_cover_every_job_and_instance() {
        let suite = small_suite(6);
        let cfg = ExperimentConfig {
            workers: 2,
            ..ExperimentConfig::default()
        };
        let r = run_experiment(&suite, &cfg, &ProviderSource::Oracle).unwrap();
        assert_eq!(r.rows.len(), suite.len() * cfg.jobs().len());
        assert_eq!(r.failures(), 0);
        let csv = String::from_utf8(r.results_csv().unwrap()).unwrap();
        assert!(csv.starts_with(
            "instance_id,variant,k,question_kind,k_selected,confidence,answer,correct,expansions,evaluations,error\n"
        ));
        assert_eq!(csv.lines().count(), r.rows.len() + 1);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(vec![]), 0.0);
    }
}
