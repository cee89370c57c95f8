//! Mean learning curves with 95% confidence bands, bucketed by global step.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::record::RunRecord;
use crate::algos::Algorithm;
use crate::error::{Error, Result};

/// One bucket of a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// Last global step covered by the bucket.
    pub step: u64,
    pub mean: f64,
    /// `1.96 · sd / √n` with the sample standard deviation across seeds.
    pub half_width: f64,
    /// Seeds with at least one episode in the bucket.
    pub n: usize,
}

/// Bucket `b` covers steps `((b-1)·width, b·width]`. Each seed contributes
/// the mean of its returns within the bucket.
pub fn ci_curve(records: &[&RunRecord], width: u64) -> Result<Vec<CurvePoint>> {
    if width == 0 {
        return Err(Error::invalid("bucket width must be positive"));
    }
    if records.is_empty() {
        return Err(Error::Empty("no records for the curve".into()));
    }
    let mut buckets: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        let mut per_seed: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for e in &r.episodes {
            let slot = per_seed.entry(e.global_step.div_ceil(width)).or_default();
            slot.0 += e.episodic_return;
            slot.1 += 1;
        }
        for (b, (sum, n)) in per_seed {
            buckets.entry(b).or_default().push(sum / n as f64);
        }
    }
    Ok(buckets
        .into_iter()
        .map(|(b, xs)| {
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
            CurvePoint { step: b * width, mean, half_width: 1.96 * sd / (n as f64).sqrt(), n }
        })
        .collect())
}

/// `experiment_id,algorithm,step,mean,lower,upper,n` for every (experiment, algorithm) group.
pub fn curves_csv(records: &[RunRecord], width: u64) -> Result<String> {
    let mut groups: BTreeMap<(&str, Algorithm), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.experiment_id, r.algorithm)).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::Empty("no records for the curves".into()));
    }
    let mut s = String::from("experiment_id,algorithm,step,mean,lower,upper,n\n");
    for ((exp, alg), runs) in groups {
        for p in ci_curve(&runs, width)? {
            writeln!(s, "{exp},{},{},{},{},{},{}", alg.tag(), p.step, p.mean, p.mean - p.half_width, p.mean + p.half_width, p.n)
                .expect("write to string");
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::EpisodeLog;

    fn rec(seed: u64, points: &[(u64, f64)]) -> RunRecord {
        RunRecord {
            experiment_id: "v1-homo-64L".into(),
            algorithm: Algorithm::Ppo,
            seed,
            episodes: points.iter().map(|&(s, r)| EpisodeLog { global_step: s, episodic_return: r }).collect(),
            config_digest: String::new(),
            status: "completed".into(),
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn half_width_formula() {
        let a = rec(1, &[(200, -1.0), (400, -3.0), (600, 2.0)]);
        let b = rec(2, &[(200, -3.0), (600, 4.0)]);
        let c = ci_curve(&[&a, &b], 400).unwrap();
        assert_eq!(c.len(), 2);
        // bucket 1: seed means -2 and -3
        assert_eq!((c[0].step, c[0].n), (400, 2));
        assert!((c[0].mean + 2.5).abs() < 1e-15);
        let sd = (0.5f64).sqrt();
        assert!((c[0].half_width - 1.96 * sd / 2f64.sqrt()).abs() < 1e-15);
        // bucket 2: 2 and 4
        assert!((c[1].mean - 3.0).abs() < 1e-15 && (c[1].half_width - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_seed_has_zero_width() {
        let a = rec(1, &[(200, -1.0)]);
        let c = ci_curve(&[&a], 200).unwrap();
        assert_eq!(c[0].half_width, 0.0);
        assert!(ci_curve(&[&a], 0).is_err());
        let csv = curves_csv(&[a], 200).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "v1-homo-64L,ppo,200,-1,-1,-1,1");
    }
}
