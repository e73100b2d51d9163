use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use refeed::eval::{Metric, Qrels, Run};
use refeed::feedback::{
    batch_feedback, BatchOptions, DistillTimings, FeedbackConfig, RunKind, TimingRow,
};
use refeed::index::{read_jsonl, DenseIndex, EmbeddingRecord};
use refeed::scorer::{FileScorer, MissingPolicy, OracleScorer, RerankerScorer, ScoreTable};
use refeed::synth::SynthSpec;

use crate::output::{fmt_f32, OutputSet};
use crate::{EvalArgs, ExportArgs, FeedbackArgs, SynthArgs};

const TOOL_VERSION: &str = concat!("refeed ", env!("CARGO_PKG_VERSION"));

/// Bad flags or a missing required option.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Some queries failed; outputs for the rest were written.
#[derive(Debug)]
struct PartialFailure(usize);

impl std::fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} queries failed", self.0)
    }
}

impl std::error::Error for PartialFailure {}

/// 2 for malformed input or usage, 3 for partial batch failure, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if cause.is::<PartialFailure>() {
            return 3;
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<refeed::Error>() {
            use refeed::Error::*;
            return match e {
                Parse { .. } | Format { .. } | Truncated { .. } | Json(_) | DuplicateId(_)
                | DimensionMismatch { .. } | InvalidConfig(_) | NonFiniteVector { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Loads a binary index, or builds one from JSONL.
fn load_index(path: &Path) -> Result<DenseIndex> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"RFDX") {
        return DenseIndex::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()));
    }
    let records = read_jsonl(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))?;
    DenseIndex::build(records.into_iter().map(|r| (r.id, r.vector)))
        .with_context(|| format!("indexing {}", path.display()))
}

fn load_queries(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    read_jsonl(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn build_index(embeddings: &Path, out: &Path) -> Result<()> {
    let index = load_index(embeddings)?;
    crate::output::write_atomic(out, &index.to_bytes())?;
    eprintln!(
        "indexed {} vectors of dimension {} into {}",
        index.len(),
        index.dim(),
        out.display()
    );
    Ok(())
}

/// Feedback options as they appear in a `--config` file and in the run
/// manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackFile {
    index: Option<PathBuf>,
    queries: Option<PathBuf>,
    scorer: Option<String>,
    missing_policy: Option<MissingPolicy>,
    k: Option<usize>,
    n: Option<usize>,
    alpha: Option<f64>,
    t_ce: Option<f64>,
    t_ret: Option<f64>,
    rounds: Option<usize>,
    normalize: Option<bool>,
    renormalize_each_step: Option<bool>,
    depth: Option<usize>,
    tag: Option<String>,
    out_dir: Option<PathBuf>,
}

impl FeedbackFile {
    fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(open(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        // A run manifest nests the resolved options under "config".
        let value = match value.get("config") {
            Some(inner) if value.get("tool_version").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).with_context(|| format!("reading options from {}", path.display()))
    }

    fn overlay(mut self, args: &FeedbackArgs) -> Result<Self> {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { self.$f = Some(v); } )* };
        }
        take!(index, queries, scorer, k, n, alpha, t_ce, t_ret, rounds, normalize, renormalize_each_step, depth, tag, out_dir);
        if let Some(p) = &args.missing_policy {
            self.missing_policy = Some(p.parse()?);
        }
        Ok(self)
    }

    fn feedback_config(&self) -> FeedbackConfig {
        let d = FeedbackConfig::default();
        FeedbackConfig {
            k: self.k.unwrap_or(d.k),
            n: self.n.unwrap_or(d.n),
            alpha: self.alpha.unwrap_or(d.alpha),
            t_ce: self.t_ce.unwrap_or(d.t_ce),
            t_ret: self.t_ret.unwrap_or(d.t_ret),
            normalize: self.normalize.unwrap_or(d.normalize),
            rounds: self.rounds.unwrap_or(d.rounds),
            renormalize_each_step: self.renormalize_each_step.unwrap_or(d.renormalize_each_step),
            record_losses: false,
            depth: self.depth,
        }
    }

    /// Fills every defaulted field so the manifest records the full setting.
    fn resolved(&self) -> Self {
        let cfg = self.feedback_config();
        Self {
            missing_policy: Some(self.missing_policy.unwrap_or_default()),
            k: Some(cfg.k),
            n: Some(cfg.n),
            alpha: Some(cfg.alpha),
            t_ce: Some(cfg.t_ce),
            t_ret: Some(cfg.t_ret),
            rounds: Some(cfg.rounds),
            normalize: Some(cfg.normalize),
            renormalize_each_step: Some(cfg.renormalize_each_step),
            depth: Some(cfg.depth()),
            tag: Some(self.tag.clone().unwrap_or_else(|| DEFAULT_TAG.into())),
            ..self.clone()
        }
    }
}

const DEFAULT_TAG: &str = "refeed";

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| UsageError(format!("missing required option --{flag}")).into())
}

fn build_scorer(spec: &str, policy: MissingPolicy) -> Result<Arc<dyn RerankerScorer>> {
    if let Some(path) = spec.strip_prefix("file:") {
        let table = ScoreTable::from_tsv(open(Path::new(path))?)
            .with_context(|| format!("parsing score file {path}"))?;
        return Ok(Arc::new(FileScorer::new(table, policy)));
    }
    if let Some(rest) = spec.strip_prefix("oracle:") {
        let (qrels, margin) = rest
            .rsplit_once(',')
            .ok_or_else(|| UsageError(format!("expected oracle:QRELS,MARGIN, got {spec:?}")))?;
        let margin: f64 = margin
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("invalid oracle margin {margin:?}")))?;
        let qrels = Qrels::parse(open(Path::new(qrels))?).with_context(|| format!("parsing {qrels}"))?;
        return Ok(Arc::new(OracleScorer::new(qrels, margin)?));
    }
    Err(UsageError(format!("scorer must be file:PATH or oracle:QRELS,MARGIN, got {spec:?}")).into())
}

#[derive(Serialize)]
struct QueryError {
    query_id: String,
    error: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    command: &'static str,
    config: FeedbackFile,
    threads: usize,
    n_queries: usize,
    failures: Vec<QueryError>,
    /// Mean per-query stage timings.
    timings: DistillTimings,
    timing_table: Vec<TimingRow>,
    outputs: BTreeMap<String, String>,
}

pub fn feedback(args: FeedbackArgs, threads: usize) -> Result<()> {
    let file = match &args.config {
        Some(p) => FeedbackFile::load(p)?,
        None => FeedbackFile::default(),
    };
    let opts = file.overlay(&args)?.resolved();
    let cfg = opts.feedback_config();
    cfg.validate()?;
    let index = load_index(required(&opts.index, "index")?)?;
    let queries: Vec<(String, Vec<f32>)> = load_queries(required(&opts.queries, "queries")?)?
        .into_iter()
        .map(|r| (r.id, r.vector))
        .collect();
    let scorer = build_scorer(
        required(&opts.scorer, "scorer")?,
        opts.missing_policy.unwrap_or_default(),
    )?;
    let out_dir = required(&opts.out_dir, "out-dir")?.clone();
    let tag = opts.tag.clone().unwrap_or_else(|| DEFAULT_TAG.into());

    let batch = batch_feedback(
        &queries,
        &index,
        scorer.as_ref(),
        &cfg,
        BatchOptions {
            threads,
            fail_fast: args.fail_fast,
        },
    )?;
    for f in &batch.failures {
        eprintln!("query {}: {}", f.query_id, f.error);
    }

    let mut outputs = OutputSet::default();
    for (name, kind) in [
        ("baseline.run", RunKind::Baseline),
        ("feedback.run", RunKind::Feedback),
        ("merged.run", RunKind::Merged),
    ] {
        let mut buf = Vec::new();
        batch.write_run(&mut buf, kind, &tag)?;
        outputs.write(&out_dir, name, &buf)?;
    }
    let mut timing_csv = Vec::new();
    batch.write_timing_csv(&mut timing_csv)?;
    outputs.write(&out_dir, "timings.csv", &timing_csv)?;
    let updated: Vec<EmbeddingRecord> = batch
        .outcomes
        .iter()
        .map(|(id, o)| EmbeddingRecord {
            id: id.clone(),
            vector: o.final_query.clone(),
        })
        .collect();
    let mut buf = Vec::new();
    refeed::index::write_jsonl(&mut buf, &updated)?;
    outputs.write(&out_dir, "updated_queries.jsonl", &buf)?;

    let mut mean = DistillTimings::default();
    if !batch.outcomes.is_empty() {
        let n = batch.outcomes.len() as f64;
        for (_, o) in &batch.outcomes {
            let t = o.total_timings();
            mean.first_retrieval_ms += t.first_retrieval_ms / n;
            mean.rerank_ms += t.rerank_ms / n;
            mean.distill_ms += t.distill_ms / n;
            mean.second_retrieval_ms += t.second_retrieval_ms / n;
        }
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION,
        command: "feedback",
        config: opts,
        threads,
        n_queries: batch.outcomes.len(),
        failures: batch
            .failures
            .iter()
            .map(|f| QueryError {
                query_id: f.query_id.clone(),
                error: f.error.to_string(),
            })
            .collect(),
        timings: mean,
        timing_table: batch.timing_table(),
        outputs: outputs.digests,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    crate::output::write_atomic(&out_dir.join("manifest.json"), &json)?;
    eprintln!(
        "{} queries processed, {} failed; outputs in {}",
        batch.outcomes.len(),
        batch.failures.len(),
        out_dir.display()
    );
    if !batch.failures.is_empty() {
        return Err(PartialFailure(batch.failures.len()).into());
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let metrics: Vec<Metric> = args
        .metrics
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<refeed::Result<_>>()?;
    if metrics.is_empty() {
        return Err(UsageError("no metrics requested".into()).into());
    }
    let run = Run::parse(open(&args.run)?).with_context(|| format!("parsing {}", args.run.display()))?;
    let qrels = Qrels::parse(open(&args.qrels)?).with_context(|| format!("parsing {}", args.qrels.display()))?;
    let compare = match &args.compare {
        Some(p) => Some((
            p.display().to_string(),
            Run::parse(open(p)?).with_context(|| format!("parsing {}", p.display()))?,
        )),
        None => None,
    };
    let report = refeed::evaluate(
        &run,
        &qrels,
        &metrics,
        compare.as_ref().map(|(name, r)| (name.as_str(), r)),
    )?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let mut out = String::new();
    if args.csv {
        let names: Vec<String> = metrics.iter().map(ToString::to_string).collect();
        writeln!(out, "query_id,{}", names.join(","))?;
        for (q, values) in &report.per_query {
            let cells: Vec<String> = names
                .iter()
                .map(|m| values.get(m).map_or(String::new(), |v| format!("{v:.6}")))
                .collect();
            writeln!(out, "{q},{}", cells.join(","))?;
        }
        print!("{out}");
        return Ok(());
    }
    writeln!(out, "{:<14} {:>8}", "metric", "value")?;
    for m in &metrics {
        let v = report.metric(*m).unwrap_or(0.0);
        writeln!(out, "{:<14} {:>8.2}", m.to_string(), 100.0 * v)?;
    }
    writeln!(
        out,
        "queries: {} evaluated, {} without relevant documents, {} not in qrels",
        report.n_queries,
        report.excluded_no_relevant.len(),
        report.missing_from_qrels
    )?;
    match (&report.significance, &args.compare) {
        (Some(s), _) => {
            let p = if s.p_below_1e12 {
                "p < 1e-12".to_string()
            } else {
                format!("p = {:.6}", s.p)
            };
            writeln!(
                out,
                "paired t-test on {} vs {}: t = {:.6}, {p}",
                s.metric, s.compared_with, s.t
            )?;
        }
        (None, Some(_)) => writeln!(out, "paired t-test skipped: fewer than 2 queries")?,
        (None, None) => {}
    }
    print!("{out}");
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SynthManifest {
    tool_version: String,
    spec: SynthSpec,
    baseline_recall_at_100: f64,
    baseline_recall_at_500: f64,
    outputs: BTreeMap<String, String>,
}

fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let value: serde_json::Value = serde_json::from_reader(open(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let value = match value.get("spec") {
        Some(inner) if value.get("tool_version").is_some() => inner.clone(),
        _ => value,
    };
    serde_json::from_value(value).with_context(|| format!("reading spec from {}", path.display()))
}

pub fn synth(args: SynthArgs, threads: usize) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => load_synth_spec(p)?,
        None => SynthSpec::default(),
    };
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { spec.$f = v; } )* };
    }
    take!(seed, dim, n_passages, n_queries, positives_per_query, clusters, cluster_spread, query_offset, positive_spread);
    if args.no_band {
        spec.recall_band = None;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let data = pool.install(|| spec.generate())?;

    let mut outputs = OutputSet::default();
    outputs.write(&args.out_dir, "embeddings.jsonl", &data.embeddings_jsonl())?;
    outputs.write(&args.out_dir, "queries.jsonl", &data.queries_jsonl())?;
    outputs.write(&args.out_dir, "qrels.txt", &data.qrels_text())?;
    let manifest = SynthManifest {
        tool_version: TOOL_VERSION.into(),
        spec,
        baseline_recall_at_100: data.baseline_recall_at_100,
        baseline_recall_at_500: data.baseline_recall_at_500,
        outputs: outputs.digests,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    crate::output::write_atomic(&args.out_dir.join("spec.json"), &json)?;
    eprintln!(
        "{} passages, {} queries; baseline recall@100 = {:.4}, recall@500 = {:.4}",
        data.passages.len(),
        data.queries.len(),
        data.baseline_recall_at_100,
        data.baseline_recall_at_500
    );
    Ok(())
}

pub fn export_vectors(args: ExportArgs) -> Result<()> {
    if args.k == 0 {
        bail!(UsageError("--k must be positive".into()));
    }
    let index = load_index(&args.index)?;
    let mut queries = load_queries(&args.queries)?;
    queries.sort_by(|a, b| a.id.cmp(&b.id));
    let updated: HashMap<String, Vec<f32>> = match &args.updated_queries {
        Some(p) => load_queries(p)?.into_iter().map(|r| (r.id, r.vector)).collect(),
        None => HashMap::new(),
    };

    let mut out = String::from("role,query_id,id");
    for i in 0..index.dim() {
        write!(out, ",v{i}")?;
    }
    out.push('\n');
    let row = |out: &mut String, role: &str, query_id: &str, id: &str, v: &[f32]| {
        out.push_str(role);
        out.push(',');
        out.push_str(query_id);
        out.push(',');
        out.push_str(id);
        for x in v {
            out.push(',');
            out.push_str(&fmt_f32(*x));
        }
        out.push('\n');
    };
    for q in &queries {
        row(&mut out, "query_initial", &q.id, &q.id, &q.vector);
        let mut passages: Vec<usize> = index
            .search(&q.id, &q.vector, args.k)?
            .entries
            .iter()
            .map(|c| c.row)
            .collect();
        if let Some(u) = updated.get(&q.id) {
            row(&mut out, "query_updated", &q.id, &q.id, u);
            for c in index.search(&q.id, u, args.k)?.entries {
                if !passages.contains(&c.row) {
                    passages.push(c.row);
                }
            }
        }
        for r in passages {
            row(&mut out, "passage", &q.id, &index.ids()[r], index.row(r));
        }
    }
    crate::output::write_atomic(&args.out, out.as_bytes())?;
    Ok(())
}
