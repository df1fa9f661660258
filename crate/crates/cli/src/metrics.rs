//! Metrics reported by runs.

use std::collections::{BTreeMap, HashSet};

use nsd_core::constraints_domain::{path_lengths, AgentTrajectoryBundle};
use nsd_core::{ConstraintSet, SequenceConstraintSet};

/// Names made unique by suffixing repeats with `#2`, `#3`, ...
pub fn unique_names(names: &[String]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    names
        .iter()
        .map(|n| {
            let k = seen.entry(n).or_insert(0);
            *k += 1;
            if *k == 1 {
                n.clone()
            } else {
                format!("{n}#{k}")
            }
        })
        .collect()
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Percentage of samples violating each constraint.
pub fn violation_rate(samples: &[Vec<f64>], cs: &ConstraintSet) -> BTreeMap<String, f64> {
    assert!(!samples.is_empty(), "violation rate of an empty sample set");
    unique_names(&cs.names())
        .into_iter()
        .zip(cs.members())
        .map(|(name, c)| {
            let bad = samples.iter().filter(|x| !c.is_satisfied(x)).count();
            (name, percent(bad, samples.len()))
        })
        .collect()
}

/// Percentage of sequences violating each constraint. For constraints that
/// require batch uniqueness, a repeat of an earlier sample also counts.
pub fn sequence_violation_rate(samples: &[Vec<usize>], cs: &SequenceConstraintSet) -> BTreeMap<String, f64> {
    assert!(!samples.is_empty(), "violation rate of an empty sample set");
    unique_names(&cs.names())
        .into_iter()
        .zip(cs.members())
        .map(|(name, c)| {
            let mut seen = HashSet::new();
            let bad = samples
                .iter()
                .filter(|s| {
                    let fresh = seen.insert(s.as_slice());
                    !c.holds(s) || (c.requires_unique() && !fresh)
                })
                .count();
            (name, percent(bad, samples.len()))
        })
        .collect()
}

/// Per-agent path lengths and their mean.
pub fn path_length(bundle: &AgentTrajectoryBundle) -> (Vec<f64>, f64) {
    let per = path_lengths(bundle);
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    (per, mean)
}

/// Percentage of successful instances.
pub fn success_rate(outcomes: &[bool]) -> f64 {
    assert!(!outcomes.is_empty(), "success rate over no instances");
    percent(outcomes.iter().filter(|s| **s).count(), outcomes.len())
}

/// Total-variation distance between two empirical distributions.
pub fn total_variation<K: Ord + Clone>(a: &[K], b: &[K]) -> f64 {
    let mut mass: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for k in a {
        mass.entry(k.clone()).or_default().0 += 1.0 / a.len() as f64;
    }
    for k in b {
        mass.entry(k.clone()).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * mass.values().map(|(p, q)| (p - q).abs()).sum::<f64>()
}

/// Total-variation distance between token frequencies of two corpora.
pub fn unigram_tv(a: &[Vec<usize>], b: &[Vec<usize>]) -> f64 {
    let flat = |s: &[Vec<usize>]| s.iter().flatten().copied().collect::<Vec<_>>();
    total_variation(&flat(a), &flat(b))
}
