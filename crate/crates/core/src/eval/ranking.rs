//! Cross-seed aggregation, per-experiment ordering and top-k frequency tables.
//!
//! Aggregation: median steps to threshold (never reached counts as +∞),
//! mean variance after threshold over the seeds that reached it, and mean
//! final margin. Algorithms are ordered lexicographically on (steps
//! ascending, variance ascending, margin descending), with the algorithm
//! order as the final tie-break.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::experiment::ThresholdSpec;
use super::metrics::metric_triple;
use super::record::RunRecord;
use crate::algos::Algorithm;
use crate::error::{Error, Result};

/// Aggregate score of one algorithm in one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmScore {
    pub algorithm: Algorithm,
    pub seeds: usize,
    /// Seeds whose run reached the threshold.
    pub reached: usize,
    /// Median steps to threshold; `None` when the median is +∞.
    pub median_n_to_threshold: Option<f64>,
    pub mean_var_after_threshold: Option<f64>,
    pub mean_delta_from_final: f64,
}

fn median_with_infinity(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Scores one algorithm's runs (all seeds of one experiment).
pub fn aggregate(algorithm: Algorithm, records: &[&RunRecord], spec: &ThresholdSpec) -> Result<AlgorithmScore> {
    let triples = records
        .iter()
        .map(|r| metric_triple(&r.episodes, spec).ok_or_else(|| Error::Empty(format!("record {} has no episodes", r.file_name()))))
        .collect::<Result<Vec<_>>>()?;
    if triples.is_empty() {
        return Err(Error::Empty(format!("no runs for {algorithm}")));
    }
    let median = median_with_infinity(triples.iter().map(|t| t.n_to_threshold.map_or(f64::INFINITY, |n| n as f64)).collect());
    let vars: Vec<f64> = triples.iter().filter_map(|t| t.var_after_threshold).collect();
    Ok(AlgorithmScore {
        algorithm,
        seeds: triples.len(),
        reached: vars.len(),
        median_n_to_threshold: median.is_finite().then_some(median),
        mean_var_after_threshold: (!vars.is_empty()).then(|| vars.iter().sum::<f64>() / vars.len() as f64),
        mean_delta_from_final: triples.iter().map(|t| t.delta_from_final).sum::<f64>() / triples.len() as f64,
    })
}

/// Lexicographic order: fewer steps, then lower variance, then larger margin.
pub fn compare_scores(a: &AlgorithmScore, b: &AlgorithmScore) -> Ordering {
    let inf = |x: Option<f64>| x.unwrap_or(f64::INFINITY);
    inf(a.median_n_to_threshold)
        .total_cmp(&inf(b.median_n_to_threshold))
        .then(inf(a.mean_var_after_threshold).total_cmp(&inf(b.mean_var_after_threshold)))
        .then(b.mean_delta_from_final.total_cmp(&a.mean_delta_from_final))
        .then(a.algorithm.cmp(&b.algorithm))
}

/// Ranked algorithms of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRanking {
    pub experiment_id: String,
    pub scores: Vec<AlgorithmScore>,
}

impl ExperimentRanking {
    pub fn top(&self, k: usize) -> TopList {
        TopList { experiment_id: self.experiment_id.clone(), algorithms: self.scores.iter().take(k).map(|s| s.algorithm).collect() }
    }
}

/// Groups records by experiment and ranks the algorithms of each.
/// `spec_for` maps an experiment id to its threshold.
pub fn rank_algorithms(
    records: &[RunRecord],
    spec_for: impl Fn(&str) -> Result<ThresholdSpec>,
) -> Result<Vec<ExperimentRanking>> {
    if records.is_empty() {
        return Err(Error::Empty("no records to rank".into()));
    }
    let mut groups: BTreeMap<&str, BTreeMap<Algorithm, Vec<&RunRecord>>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.experiment_id).or_default().entry(r.algorithm).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(exp, by_alg)| {
            let spec = spec_for(exp)?;
            let mut scores = by_alg
                .into_iter()
                .map(|(alg, mut runs)| {
                    runs.sort_by_key(|r| r.seed);
                    aggregate(alg, &runs, &spec)
                })
                .collect::<Result<Vec<_>>>()?;
            scores.sort_by(compare_scores);
            Ok(ExperimentRanking { experiment_id: exp.to_string(), scores })
        })
        .collect()
}

/// The best algorithms of one experiment, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopList {
    pub experiment_id: String,
    pub algorithms: Vec<Algorithm>,
}

impl TopList {
    pub fn new(experiment_id: impl Into<String>, algorithms: &[Algorithm]) -> Self {
        Self { experiment_id: experiment_id.into(), algorithms: algorithms.to_vec() }
    }

    /// Parses `id,ALG,ALG,...` (algorithm names in either case).
    pub fn parse_line(line: &str) -> Result<Self> {
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| Error::parse("top list", "empty line"))?;
        let algorithms = fields.map(str::parse).collect::<Result<Vec<Algorithm>>>()?;
        Ok(Self::new(id, &algorithms))
    }
}

/// One row of a frequency table, with competition ranking (1, 2, 2, 4, …).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyRow {
    pub rank: usize,
    pub algorithm: Algorithm,
    pub count: usize,
}

/// Counts how often each algorithm appears in the first `k` places.
///
/// An algorithm may appear at most once per list; a list with a repeat is
/// rejected. Lists shorter than `k` are rejected too, so that row counts
/// always sum to `k` times the number of experiments.
pub fn frequency_table(lists: &[TopList], k: usize) -> Result<Vec<FrequencyRow>> {
    if lists.is_empty() {
        return Err(Error::Empty("no top lists".into()));
    }
    let mut counts: BTreeMap<Algorithm, usize> = BTreeMap::new();
    for list in lists {
        if list.algorithms.len() < k {
            return Err(Error::invalid(format!("{}: {} algorithms listed, need {k}", list.experiment_id, list.algorithms.len())));
        }
        let mut seen = BTreeSet::new();
        for &alg in &list.algorithms[..k] {
            if !seen.insert(alg) {
                return Err(Error::invalid(format!("{}: {alg} listed twice in the top {k}", list.experiment_id)));
            }
            *counts.entry(alg).or_default() += 1;
        }
    }
    let mut rows: Vec<(Algorithm, usize)> = counts.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<FrequencyRow> = Vec::with_capacity(rows.len());
    for (i, (algorithm, count)) in rows.into_iter().enumerate() {
        let rank = match out.last() {
            Some(prev) if prev.count == count => prev.rank,
            _ => i + 1,
        };
        out.push(FrequencyRow { rank, algorithm, count });
    }
    Ok(out)
}

/// `Experiment ID,#1,#2,...` table.
pub fn format_top_lists_csv(lists: &[TopList]) -> String {
    let k = lists.iter().map(|l| l.algorithms.len()).max().unwrap_or(0);
    let mut s = String::from("experiment_id");
    for i in 1..=k {
        write!(s, ",#{i}").expect("write to string");
    }
    s.push('\n');
    for l in lists {
        s.push_str(&l.experiment_id);
        for a in &l.algorithms {
            write!(s, ",{a}").expect("write to string");
        }
        s.push('\n');
    }
    s
}

pub fn format_frequency_csv(rows: &[FrequencyRow]) -> String {
    let mut s = String::from("rank,algorithm,frequency\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.rank, r.algorithm, r.count).expect("write to string");
    }
    s
}

/// Aligned plain-text rendering of a frequency table.
pub fn format_frequency_text(title: &str, rows: &[FrequencyRow]) -> String {
    let mut s = format!("{title}\n{:<6}{:<12}{}\n", "Rank", "Algorithm", "Frequency");
    for r in rows {
        writeln!(s, "{:<6}{:<12}{}", r.rank, r.algorithm.to_string(), r.count).expect("write to string");
    }
    s
}

/// Aligned plain-text rendering of per-experiment top lists.
pub fn format_top_lists_text(lists: &[TopList]) -> String {
    let width = lists.iter().map(|l| l.experiment_id.len()).max().unwrap_or(0).max(13) + 2;
    let k = lists.iter().map(|l| l.algorithms.len()).max().unwrap_or(0);
    let mut s = format!("{:<width$}", "Experiment ID");
    for i in 1..=k {
        write!(s, "{:<11}", format!("#{i}")).expect("write to string");
    }
    s.push('\n');
    for l in lists {
        write!(s, "{:<width$}", l.experiment_id).expect("write to string");
        for a in &l.algorithms {
            write!(s, "{:<11}", a.to_string()).expect("write to string");
        }
        s.push('\n');
    }
    s
}

/// Per-algorithm scores of each experiment as CSV.
pub fn format_scores_csv(rankings: &[ExperimentRanking]) -> String {
    let opt = |x: Option<f64>| x.map_or_else(|| "inf".to_string(), |v| v.to_string());
    let mut s = String::from("experiment_id,rank,algorithm,seeds,reached,median_n_to_threshold,mean_var_after_threshold,mean_delta_from_final\n");
    for r in rankings {
        for (i, sc) in r.scores.iter().enumerate() {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.experiment_id,
                i + 1,
                sc.algorithm,
                sc.seeds,
                sc.reached,
                opt(sc.median_n_to_threshold),
                opt(sc.mean_var_after_threshold),
                sc.mean_delta_from_final
            )
            .expect("write to string");
        }
    }
    s
}
