use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler_discrete::SequenceConstraint;

/// A forbidden token n-gram with ordered replacement candidates. When no
/// candidate fits, the matched span is deleted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub pattern: Vec<usize>,
    #[serde(default)]
    pub replacements: Vec<Vec<usize>>,
}

impl PatternRule {
    pub fn new(pattern: Vec<usize>, replacements: Vec<Vec<usize>>) -> Result<Self> {
        let r = Self { pattern, replacements };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pattern.is_empty() {
            return Err(Error::InvalidArgument("empty forbidden pattern".into()));
        }
        for c in &self.replacements {
            if c.len() > self.pattern.len() {
                return Err(Error::InvalidArgument(format!(
                    "replacement {c:?} is longer than pattern {:?}",
                    self.pattern
                )));
            }
            if *c == self.pattern {
                return Err(Error::InvalidArgument(format!("replacement {c:?} reproduces its pattern")));
            }
        }
        Ok(())
    }

    pub fn matches_at(&self, tokens: &[usize], i: usize) -> bool {
        tokens.get(i..i + self.pattern.len()) == Some(&self.pattern[..])
    }
}

pub fn parse_rules(text: &str) -> Result<Vec<PatternRule>> {
    let rules: Vec<PatternRule> = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("rule file: {e}")))?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

pub fn load_rules(path: &Path) -> Result<Vec<PatternRule>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_rules(&text)
}

/// Leftmost match of any rule at or after `from`, earlier rules first at
/// equal positions.
fn leftmost_match(tokens: &[usize], rules: &[PatternRule], from: usize) -> Option<(usize, usize)> {
    (from..tokens.len()).find_map(|i| rules.iter().position(|r| r.matches_at(tokens, i)).map(|k| (i, k)))
}

/// Whether any rule matches a window overlapping `lo..hi` (or spanning
/// position `lo` when the range is empty).
fn site_clean(tokens: &[usize], rules: &[PatternRule], lo: usize, hi: usize) -> bool {
    rules.iter().all(|r| {
        let n = r.pattern.len();
        let first = (lo + 1).saturating_sub(n);
        let last = if hi > lo { hi - 1 } else { lo.saturating_sub(1) };
        (first..=last).all(|i| !r.matches_at(tokens, i))
    })
}

pub fn contains_forbidden(tokens: &[usize], rules: &[PatternRule]) -> bool {
    leftmost_match(tokens, rules, 0).is_some()
}

/// Rewrites matches left to right until no rule matches.
///
/// At each match the first replacement that leaves no forbidden pattern
/// touching the rewritten span is used; if none does, the span is deleted.
pub fn pattern_repair(tokens: &[usize], rules: &[PatternRule]) -> Vec<usize> {
    let mut out = tokens.to_vec();
    let longest = rules.iter().map(|r| r.pattern.len()).max().unwrap_or(1);
    let mut from = 0;
    while let Some((i, k)) = leftmost_match(&out, rules, from) {
        let n = rules[k].pattern.len();
        let rewritten = rules[k].replacements.iter().find_map(|c| {
            let mut cand = out[..i].to_vec();
            cand.extend_from_slice(c);
            cand.extend_from_slice(&out[i + n..]);
            site_clean(&cand, rules, i, i + c.len()).then_some(cand)
        });
        out = rewritten.unwrap_or_else(|| {
            let mut cand = out[..i].to_vec();
            cand.extend_from_slice(&out[i + n..]);
            cand
        });
        from = (i + 1).saturating_sub(longest);
    }
    out
}

/// Sum over rules and windows of `prod_k rows[i + k][pattern_k]`, the
/// expected match count under independent rows.
fn soft_matches(pattern: &[usize], rows: &[f64], vocab: usize) -> f64 {
    let len = rows.len() / vocab;
    if pattern.len() > len || pattern.iter().any(|&t| t >= vocab) {
        return 0.0;
    }
    (0..=len - pattern.len())
        .map(|i| pattern.iter().enumerate().map(|(k, &t)| rows[(i + k) * vocab + t]).product::<f64>())
        .sum()
}

fn soft_matches_grad(pattern: &[usize], weight: f64, rows: &[f64], vocab: usize, g: &mut [f64]) {
    let len = rows.len() / vocab;
    if pattern.len() > len || pattern.iter().any(|&t| t >= vocab) {
        return;
    }
    for i in 0..=len - pattern.len() {
        for k in 0..pattern.len() {
            let others: f64 = pattern
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != k)
                .map(|(m, &t)| rows[(i + m) * vocab + t])
                .product();
            g[(i + k) * vocab + pattern[k]] += weight * others;
        }
    }
}

/// No forbidden pattern occurs in the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternConstraint {
    rules: Vec<PatternRule>,
}

impl PatternConstraint {
    pub fn new(rules: Vec<PatternRule>) -> Result<Self> {
        for r in &rules {
            r.validate()?;
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[PatternRule] {
        &self.rules
    }
}

impl SequenceConstraint for PatternConstraint {
    fn name(&self) -> &str {
        "pattern"
    }

    fn holds(&self, tokens: &[usize]) -> bool {
        !contains_forbidden(tokens, &self.rules)
    }

    fn relaxed_residual(&self, rows: &[f64], vocab: usize) -> f64 {
        self.rules.iter().map(|r| soft_matches(&r.pattern, rows, vocab)).sum()
    }

    fn relaxed_gradient(&self, rows: &[f64], vocab: usize) -> Vec<f64> {
        let mut g = vec![0.0; rows.len()];
        for r in &self.rules {
            soft_matches_grad(&r.pattern, 1.0, rows, vocab, &mut g);
        }
        g
    }

    fn repair(&self, tokens: &[usize]) -> Option<Vec<usize>> {
        Some(pattern_repair(tokens, &self.rules))
    }
}

/// Fixed linear n-gram scorer: each occurrence of a listed n-gram adds its
/// weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateScorer {
    pub weights: Vec<(Vec<usize>, f64)>,
    pub threshold: f64,
}

impl SurrogateScorer {
    pub fn new(weights: Vec<(Vec<usize>, f64)>, threshold: f64) -> Result<Self> {
        if weights.iter().any(|(g, w)| g.is_empty() || !w.is_finite()) || !threshold.is_finite() {
            return Err(Error::InvalidArgument(
                "surrogate weights need nonempty n-grams and finite values".into(),
            ));
        }
        Ok(Self { weights, threshold })
    }

    pub fn score(&self, tokens: &[usize]) -> f64 {
        self.weights
            .iter()
            .map(|(g, w)| {
                let hits = tokens.windows(g.len()).filter(|win| win == &g.as_slice()).count();
                w * hits as f64
            })
            .sum()
    }

    /// Score under independent relaxed rows; equals [`score`](Self::score)
    /// on one-hot rows.
    pub fn soft_score(&self, rows: &[f64], vocab: usize) -> f64 {
        self.weights.iter().map(|(g, w)| w * soft_matches(g, rows, vocab)).sum()
    }

    pub fn soft_score_gradient(&self, rows: &[f64], vocab: usize) -> Vec<f64> {
        let mut g = vec![0.0; rows.len()];
        for (gram, w) in &self.weights {
            soft_matches_grad(gram, *w, rows, vocab, &mut g);
        }
        g
    }
}

/// Score at most the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConstraint {
    scorer: SurrogateScorer,
}

pub fn surrogate_constraint(scorer: SurrogateScorer) -> SurrogateConstraint {
    SurrogateConstraint { scorer }
}

impl SurrogateConstraint {
    pub fn scorer(&self) -> &SurrogateScorer {
        &self.scorer
    }
}

impl SequenceConstraint for SurrogateConstraint {
    fn name(&self) -> &str {
        "surrogate"
    }

    fn holds(&self, tokens: &[usize]) -> bool {
        self.scorer.score(tokens) <= self.scorer.threshold
    }

    fn relaxed_residual(&self, rows: &[f64], vocab: usize) -> f64 {
        (self.scorer.soft_score(rows, vocab) - self.scorer.threshold).max(0.0)
    }

    fn relaxed_gradient(&self, rows: &[f64], vocab: usize) -> Vec<f64> {
        if self.scorer.soft_score(rows, vocab) <= self.scorer.threshold {
            return vec![0.0; rows.len()];
        }
        self.scorer.soft_score_gradient(rows, vocab)
    }
}
