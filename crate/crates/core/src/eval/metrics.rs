//! Threshold-based run metrics: steps to threshold, spread after it, and final margin.

use super::experiment::ThresholdSpec;
use crate::algos::EpisodeLog;

/// The three scores of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    /// Global step of the first episode at or above the threshold.
    pub n_to_threshold: Option<u64>,
    /// Population variance of the returns from the first crossing on.
    pub var_after_threshold: Option<f64>,
    /// Final return minus threshold.
    pub delta_from_final: f64,
}

fn first_crossing(episodes: &[EpisodeLog], threshold: f64) -> Option<usize> {
    episodes.iter().position(|e| e.episodic_return >= threshold)
}

pub fn n_to_threshold(episodes: &[EpisodeLog], spec: &ThresholdSpec) -> Option<u64> {
    first_crossing(episodes, spec.threshold).map(|i| episodes[i].global_step)
}

/// `None` when the threshold is never reached.
pub fn variance_after_threshold(episodes: &[EpisodeLog], spec: &ThresholdSpec) -> Option<f64> {
    let tail = &episodes[first_crossing(episodes, spec.threshold)?..];
    let n = tail.len() as f64;
    let mean = tail.iter().map(|e| e.episodic_return).sum::<f64>() / n;
    Some(tail.iter().map(|e| (e.episodic_return - mean).powi(2)).sum::<f64>() / n)
}

/// `None` for an empty log.
pub fn delta_from_final(episodes: &[EpisodeLog], spec: &ThresholdSpec) -> Option<f64> {
    episodes.last().map(|e| e.episodic_return - spec.threshold)
}

/// `None` for an empty log.
pub fn metric_triple(episodes: &[EpisodeLog], spec: &ThresholdSpec) -> Option<MetricTriple> {
    Some(MetricTriple {
        delta_from_final: delta_from_final(episodes, spec)?,
        n_to_threshold: n_to_threshold(episodes, spec),
        var_after_threshold: variance_after_threshold(episodes, spec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BiasCorrVersion, EnvKind};

    fn log(returns: &[f64]) -> Vec<EpisodeLog> {
        returns
            .iter()
            .enumerate()
            .map(|(i, &r)| EpisodeLog { global_step: 200 * (i as u64 + 1), episodic_return: r })
            .collect()
    }

    fn v0() -> ThresholdSpec {
        ThresholdSpec::for_env(EnvKind::BiasCorrection(BiasCorrVersion::V0))
    }

    #[test]
    fn first_crossing_step() {
        assert_eq!(n_to_threshold(&log(&[-1.0, -0.3, -0.2, -0.1]), &v0()), Some(600));
        assert_eq!(n_to_threshold(&log(&[-1.0, -0.3]), &v0()), None);
        assert_eq!(n_to_threshold(&log(&[-0.1, -3.0]), &v0()), Some(200));
        assert_eq!(n_to_threshold(&log(&[-0.25]), &v0()), Some(200));
    }

    #[test]
    fn variance_from_crossing_on() {
        let v = variance_after_threshold(&log(&[-1.0, -0.2, -0.2, -0.4]), &v0()).unwrap();
        // mean -0.8/3; deviations 1/15, 1/15, -2/15
        assert!((v - 6.0 / 675.0).abs() < 1e-15);
        assert_eq!(variance_after_threshold(&log(&[-1.0, -0.1, -0.1]), &v0()), Some(0.0));
        assert_eq!(variance_after_threshold(&log(&[-1.0, -0.1]), &v0()), Some(0.0));
        assert_eq!(variance_after_threshold(&log(&[-1.0, -0.9]), &v0()), None);
    }

    #[test]
    fn final_margin() {
        assert_eq!(delta_from_final(&log(&[-3.0, -0.25]), &v0()), Some(0.0));
        assert!((delta_from_final(&log(&[-0.1]), &v0()).unwrap() - 0.15).abs() < 1e-15);
        let rce = ThresholdSpec::for_env(EnvKind::Rce);
        assert_eq!(delta_from_final(&log(&[-43_000.0]), &rce), Some(900.0));
        assert_eq!(delta_from_final(&[], &rce), None);
    }

    #[test]
    fn prepending_worse_episodes_never_lowers_steps() {
        let base = [-0.5, -0.2, -0.1];
        let n0 = n_to_threshold(&log(&base), &v0()).unwrap();
        let mut longer = vec![-2.0, -1.0];
        longer.extend(base);
        assert!(n_to_threshold(&log(&longer), &v0()).unwrap() >= n0);
    }
}
