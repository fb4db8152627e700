//! Ranking, P@k / MRR@k and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Rng, Tape};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ProcessedSession};
use crate::intent::BetaMode;
use crate::model::Model;

/// How many ranked items a result keeps for reporting.
pub const TOP_N: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub session_id: String,
    pub ground_truth: usize,
    /// Best-scoring candidates, at most [`TOP_N`].
    pub top: Vec<usize>,
    pub candidates: usize,
    /// 1-based rank of the ground truth; `None` marks a miss.
    pub gt_rank: Option<usize>,
}

/// Orders candidates by descending score, ties by ascending item index,
/// and records the ground truth's rank.
pub fn rank(session_id: &str, scores: &[(usize, f64)], ground_truth: usize) -> Result<RankedResult> {
    if scores.iter().any(|(_, s)| s.is_nan()) {
        return Err(Error::Eval(format!("session {session_id}: NaN score")));
    }
    let mut order: Vec<(usize, f64)> = scores.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let pos = order
        .iter()
        .position(|&(i, _)| i == ground_truth)
        .ok_or_else(|| Error::Protocol(format!("session {session_id}: ground truth is not among the candidates")))?;
    Ok(RankedResult {
        session_id: session_id.to_string(),
        ground_truth,
        top: order.iter().take(TOP_N).map(|&(i, _)| i).collect(),
        candidates: order.len(),
        gt_rank: Some(pos + 1),
    })
}

fn hits(results: &[RankedResult], k: usize) -> impl Iterator<Item = usize> + '_ {
    results.iter().filter_map(move |r| r.gt_rank.filter(|&rank| rank <= k))
}

fn check(results: &[RankedResult], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::domain("metrics", "k must be at least 1"));
    }
    if results.is_empty() {
        return Err(Error::domain("metrics", "no sessions to score"));
    }
    Ok(())
}

/// Percent of sessions whose ground truth is in the top k (hit rate).
pub fn precision_at_k(results: &[RankedResult], k: usize) -> Result<f64> {
    check(results, k)?;
    Ok(100.0 * hits(results, k).count() as f64 / results.len() as f64)
}

/// Hits divided by k per session, as a percent.
pub fn strict_precision_at_k(results: &[RankedResult], k: usize) -> Result<f64> {
    Ok(precision_at_k(results, k)? / k as f64)
}

/// Percent mean reciprocal rank, counting ranks beyond k as zero.
pub fn mrr_at_k(results: &[RankedResult], k: usize) -> Result<f64> {
    check(results, k)?;
    Ok(100.0 * hits(results, k).map(|r| 1.0 / r as f64).sum::<f64>() / results.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaEval {
    /// Beta points fixed at the distribution mean.
    Mean,
    /// Beta points sampled; metrics are averaged over this many seeds.
    Sampled { repeats: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub strict_precision: bool,
    pub beta: BetaEval,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![10, 20],
            strict_precision: false,
            beta: BetaEval::Mean,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// P@k in percent, keyed by k.
    pub p: BTreeMap<String, f64>,
    pub mrr: BTreeMap<String, f64>,
    /// Population std over repeats (sampled mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_std: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrr_std: Option<BTreeMap<String, f64>>,
    /// `hit_rate` or `strict`.
    pub precision: String,
    pub beta: BetaEval,
    pub sessions: usize,
    pub skipped: usize,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// Plain-text table, one column per metric.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for (name, map, std) in [("P", &self.p, &self.p_std), ("MRR", &self.mrr, &self.mrr_std)] {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_by_key(|k| k.parse::<usize>().unwrap_or(usize::MAX));
            for k in keys {
                let col = format!("{name}@{k}");
                let cell = match std.as_ref().and_then(|s| s.get(k)) {
                    Some(sd) => format!("{:.3}±{:.3}", map[k], sd),
                    None => format!("{:.3}", map[k]),
                };
                let w = col.chars().count().max(cell.chars().count()) + 2;
                let _ = write!(head, "{col:>w$}");
                let _ = write!(row, "{cell:>w$}");
            }
        }
        format!("{head}\n{row}\nsessions: {}  skipped: {}\n", self.sessions, self.skipped)
    }
}

fn score_session(model: &Model, ds: &Dataset, s: &ProcessedSession, mode: BetaMode<'_>) -> Result<Option<RankedResult>> {
    let history: BTreeSet<usize> = s.history.iter().copied().collect();
    let cands: Vec<usize> = ds.catalog.all_items().filter(|i| !history.contains(i)).collect();
    if cands.is_empty() || !cands.contains(&s.ground_truth) {
        return Ok(None);
    }
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let fwd = model.forward(&p, ds, s, mode)?;
    let logits = model.candidate_logits(&p, ds, fwd.intent, &cands)?.value();
    let scores: Vec<(usize, f64)> = cands.iter().copied().zip(logits.data().iter().copied()).collect();
    rank(&s.session_id, &scores, s.ground_truth).map(Some)
}

/// Ranks every session; `None` marks a skipped session. Results keep the
/// input order whatever the thread count.
pub fn rank_sessions(
    model: &Model,
    ds: &Dataset,
    sessions: &[ProcessedSession],
    sample_seed: Option<u64>,
) -> Result<Vec<Option<RankedResult>>> {
    sessions
        .par_iter()
        .map(|s| match sample_seed {
            None => score_session(model, ds, s, BetaMode::Mean),
            Some(seed) => {
                let mut rng = Rng::derive(seed, "eval-beta", &s.session_id);
                score_session(model, ds, s, BetaMode::Sample(&mut rng))
            }
        })
        .collect()
}

fn metric_maps(results: &[RankedResult], opts: &EvalOptions) -> Result<(BTreeMap<String, f64>, BTreeMap<String, f64>)> {
    let mut p = BTreeMap::new();
    let mut mrr = BTreeMap::new();
    for &k in &opts.ks {
        let prec = if opts.strict_precision {
            strict_precision_at_k(results, k)?
        } else {
            precision_at_k(results, k)?
        };
        p.insert(k.to_string(), prec);
        mrr.insert(k.to_string(), mrr_at_k(results, k)?);
    }
    Ok((p, mrr))
}

fn mean_std(runs: &[BTreeMap<String, f64>]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let n = runs.len() as f64;
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    for k in runs[0].keys() {
        let vals: Vec<f64> = runs.iter().map(|r| r[k]).collect();
        let mu = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.insert(k.clone(), mu);
        std.insert(k.clone(), var.sqrt());
    }
    (mean, std)
}

/// Evaluates on the test split. Returns the report and the per-session
/// rankings (from the first repeat in sampled mode).
pub fn evaluate(model: &Model, ds: &Dataset, opts: &EvalOptions) -> Result<(MetricsReport, Vec<RankedResult>)> {
    if ds.test.is_empty() {
        return Err(Error::Eval("test split is empty".into()));
    }
    if opts.ks.is_empty() {
        return Err(Error::Config("no cutoffs requested".into()));
    }
    let seeds: Vec<Option<u64>> = match opts.beta {
        BetaEval::Mean => vec![None],
        BetaEval::Sampled { repeats } if repeats > 0 => {
            (0..repeats).map(|r| Some(crate::autodiff::rng::derive_seed(opts.seed, "eval-repeat", &r.to_string()))).collect()
        }
        BetaEval::Sampled { .. } => return Err(Error::Config("sampled evaluation needs at least one repeat".into())),
    };
    let mut first = None;
    let mut p_runs = Vec::new();
    let mut mrr_runs = Vec::new();
    let mut skipped = 0;
    for seed in seeds {
        let ranked = rank_sessions(model, ds, &ds.test, seed)?;
        skipped = ranked.iter().filter(|r| r.is_none()).count();
        let results: Vec<RankedResult> = ranked.into_iter().flatten().collect();
        if results.is_empty() {
            return Err(Error::Eval("every test session was skipped".into()));
        }
        let (p, mrr) = metric_maps(&results, opts)?;
        p_runs.push(p);
        mrr_runs.push(mrr);
        first.get_or_insert(results);
    }
    let results = first.expect("at least one run");
    let sampled = p_runs.len() > 1 || matches!(opts.beta, BetaEval::Sampled { .. });
    let (p, p_std) = mean_std(&p_runs);
    let (mrr, mrr_std) = mean_std(&mrr_runs);
    let report = MetricsReport {
        p,
        mrr,
        p_std: sampled.then_some(p_std),
        mrr_std: sampled.then_some(mrr_std),
        precision: if opts.strict_precision { "strict" } else { "hit_rate" }.into(),
        beta: opts.beta,
        sessions: results.len(),
        skipped,
        seed: opts.seed,
        config: serde_json::to_value(&model.config)?,
    };
    Ok((report, results))
}

/// `session_id,gt_item,gt_rank,top20` with the top list pipe-separated.
pub fn rankings_csv(ds: &Dataset, results: &[RankedResult]) -> String {
    let mut out = String::from("session_id,gt_item,gt_rank,top20\n");
    for r in results {
        let top: Vec<&str> = r.top.iter().map(|&i| ds.catalog.id_of(i)).collect();
        let rank = r.gt_rank.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.session_id,
            ds.catalog.id_of(r.ground_truth),
            rank,
            top.join("|")
        );
    }
    out
}

pub fn write_report(dir: &Path, report: &MetricsReport, rankings: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    let path = dir.join("metrics.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("rankings.csv");
    std::fs::write(&path, rankings).map_err(|e| Error::io(&path, e))
}
