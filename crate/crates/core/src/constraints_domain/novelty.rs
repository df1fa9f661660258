use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{SimplexRow, PROB_FLOOR};
use crate::sampler_discrete::{CategoricalSequence, SequenceConstraint};

/// Set of known sequences that outputs must avoid. Iteration is in sorted
/// order, so residual sums do not depend on insertion history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NoveltySet {
    seen: BTreeSet<Vec<usize>>,
}

impl NoveltySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sequences(seqs: impl IntoIterator<Item = Vec<usize>>) -> Self {
        Self {
            seen: seqs.into_iter().collect(),
        }
    }

    pub fn contains(&self, seq: &[usize]) -> bool {
        self.seen.contains(seq)
    }

    /// Returns whether the sequence was new.
    pub fn insert(&mut self, seq: Vec<usize>) -> bool {
        self.seen.insert(seq)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.seen.iter()
    }

    /// Whether every length-`len` sequence over `vocab` tokens is present.
    pub fn saturates(&self, len: usize, vocab: usize) -> bool {
        let space = u32::try_from(len).ok().and_then(|l| vocab.checked_pow(l));
        let inside = self.seen.iter().filter(|s| s.len() == len && s.iter().all(|&t| t < vocab)).count();
        space.is_some_and(|n| inside >= n)
    }
}

/// Cost of replacing the row's top token by `token`: the log-probability
/// gap, with probabilities floored at [`PROB_FLOOR`].
pub fn flip_cost(row: &[f64], top: usize, token: usize) -> f64 {
    row[top].max(PROB_FLOOR).ln() - row[token].max(PROB_FLOOR).ln()
}

#[derive(Debug)]
struct Node {
    cost: f64,
    tokens: Vec<usize>,
    ranks: Vec<usize>,
    /// Lowest position this node's successors may advance.
    floor: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // reversed: BinaryHeap pops the cheapest, then lexicographically smallest
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.tokens.cmp(&self.tokens))
    }
}

/// Best-first search over token flips of the rows' top tokens.
///
/// Each position may take any `allowed` token; a candidate's cost is the sum
/// (in position order) of its [`flip_cost`]s. Candidates are visited in
/// increasing cost, and the cheapest accepted one is returned, ties going to
/// the lexicographically smallest sequence. Returns `None` when nothing is
/// accepted within `budget` expansions.
pub fn best_first_flips(
    rows: &[Vec<f64>],
    allowed: &[bool],
    mut accept: impl FnMut(&[usize]) -> bool,
    budget: usize,
) -> Option<Vec<usize>> {
    let tops: Vec<usize> = rows
        .iter()
        .map(|r| {
            (0..r.len())
                .filter(|&v| allowed[v])
                .fold(None, |best: Option<usize>, v| match best {
                    Some(b) if r[b] >= r[v] => Some(b),
                    _ => Some(v),
                })
                .expect("no allowed tokens")
        })
        .collect();
    // alternatives per position, cheapest first, the top token leading
    let alts: Vec<Vec<(f64, usize)>> = rows
        .iter()
        .zip(&tops)
        .map(|(r, &top)| {
            let mut a: Vec<(f64, usize)> = (0..r.len()).filter(|&v| allowed[v]).map(|v| (flip_cost(r, top, v), v)).collect();
            a.sort_by(|x, y| (x.1 != top).cmp(&(y.1 != top)).then(x.0.total_cmp(&y.0)).then(x.1.cmp(&y.1)));
            a
        })
        .collect();
    let cost_of = |ranks: &[usize]| ranks.iter().zip(&alts).map(|(&r, a)| a[r].0).sum::<f64>();
    let tokens_of = |ranks: &[usize]| ranks.iter().zip(&alts).map(|(&r, a)| a[r].1).collect::<Vec<_>>();

    let start = vec![0; rows.len()];
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        cost: cost_of(&start),
        tokens: tokens_of(&start),
        ranks: start,
        floor: 0,
    });
    let mut found: Option<(f64, Vec<usize>)> = None;
    let mut expanded = 0;
    while let Some(node) = heap.pop() {
        if let Some((c, _)) = &found {
            // every candidate as cheap as the first hit has been seen
            if node.cost > *c {
                break;
            }
        }
        if accept(&node.tokens) {
            match &found {
                Some((_, best)) if *best <= node.tokens => {}
                _ => found = Some((node.cost, node.tokens.clone())),
            }
        }
        expanded += 1;
        if expanded >= budget && found.is_none() {
            return None;
        }
        for j in node.floor..rows.len() {
            if node.ranks[j] + 1 < alts[j].len() {
                let mut ranks = node.ranks.clone();
                ranks[j] += 1;
                heap.push(Node {
                    cost: cost_of(&ranks),
                    tokens: tokens_of(&ranks),
                    ranks,
                    floor: j,
                });
            }
        }
    }
    found.map(|(_, t)| t)
}

/// Reshapes `row` so that `token` becomes its strict argmax: the token
/// trades probability with the current maximum, and any remaining tie is
/// broken in its favour.
pub fn promote_token(row: &[f64], token: usize) -> Result<SimplexRow> {
    let mut r = row.to_vec();
    let top = crate::numerics::argmax(&r);
    r.swap(top, token);
    let max = r[token];
    if max <= 0.0 {
        return Ok(SimplexRow::one_hot(r.len(), token));
    }
    for (v, p) in r.iter_mut().enumerate() {
        if v != token && *p >= max {
            *p = max * (1.0 - 1e-9);
        }
    }
    SimplexRow::from_weights(r)
}

/// Moves `x` to the cheapest sequence (by cumulative flip cost) outside
/// `dataset`, returning a distribution whose argmax is that sequence. The
/// sequence is added to `dataset`, so repeated calls never return the same
/// sequence twice.
pub fn novelty_project(x: &CategoricalSequence, dataset: &mut NoveltySet) -> Result<CategoricalSequence> {
    let (len, vocab) = (x.len(), x.vocab());
    if dataset.saturates(len, vocab) {
        return Err(Error::Infeasible(format!("dataset covers all {vocab}^{len} sequences")));
    }
    let base = x.decode();
    if !dataset.contains(&base) {
        dataset.insert(base);
        return Ok(x.clone());
    }
    let rows: Vec<Vec<f64>> = x.rows().iter().map(|r| r.as_slice().to_vec()).collect();
    let found = best_first_flips(&rows, &vec![true; vocab], |s| !dataset.contains(s), usize::MAX)
        .ok_or_else(|| Error::Infeasible("no novel sequence reachable".into()))?;
    let adjusted = rows
        .iter()
        .zip(base.iter().zip(&found))
        .map(|(r, (&b, &f))| if b == f { SimplexRow::new(r.clone()) } else { promote_token(r, f) })
        .collect::<Result<Vec<_>>>()?;
    dataset.insert(found);
    CategoricalSequence::new(adjusted)
}

/// The decoded sequence is not in the dataset, and differs from every other
/// sequence of the same batch.
#[derive(Debug, Clone)]
pub struct NoveltyConstraint {
    dataset: Arc<NoveltySet>,
}

impl NoveltyConstraint {
    pub fn new(dataset: Arc<NoveltySet>) -> Self {
        Self { dataset }
    }

    pub fn dataset(&self) -> &NoveltySet {
        &self.dataset
    }
}

/// Products `prod_{k != i} rows[k][d_k]` for every `i`.
fn leave_one_out(rows: &[f64], vocab: usize, d: &[usize]) -> Vec<f64> {
    let n = d.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * rows[i * vocab + d[i]];
    }
    let mut out = vec![0.0; n];
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        out[i] = prefix[i] * suffix;
        suffix *= rows[i * vocab + d[i]];
    }
    out
}

impl SequenceConstraint for NoveltyConstraint {
    fn name(&self) -> &str {
        "novelty"
    }

    fn holds(&self, tokens: &[usize]) -> bool {
        !self.dataset.contains(tokens)
    }

    /// Probability mass the relaxed rows put on dataset sequences.
    fn relaxed_residual(&self, rows: &[f64], vocab: usize) -> f64 {
        let len = rows.len() / vocab;
        self.dataset
            .iter()
            .filter(|d| d.len() == len && d.iter().all(|&t| t < vocab))
            .map(|d| d.iter().enumerate().map(|(i, &t)| rows[i * vocab + t]).product::<f64>())
            .sum()
    }

    fn relaxed_gradient(&self, rows: &[f64], vocab: usize) -> Vec<f64> {
        let len = rows.len() / vocab;
        let mut g = vec![0.0; rows.len()];
        for d in self.dataset.iter().filter(|d| d.len() == len && d.iter().all(|&t| t < vocab)) {
            for (i, w) in leave_one_out(rows, vocab, d).into_iter().enumerate() {
                g[i * vocab + d[i]] += w;
            }
        }
        g
    }

    fn requires_unique(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peaked(rows: &[[f64; 2]]) -> CategoricalSequence {
        CategoricalSequence::new(rows.iter().map(|r| SimplexRow::new(r.to_vec()).unwrap()).collect()).unwrap()
    }

    #[test]
    fn novel_argmax_unchanged() {
        let x = peaked(&[[0.9, 0.1], [0.8, 0.2]]);
        let mut d = NoveltySet::from_sequences([vec![1, 1]]);
        assert_eq!(novelty_project(&x, &mut d).unwrap(), x);
        assert!(d.contains(&[0, 0]));
    }

    #[test]
    fn cheapest_novel_flip() {
        // aa and ab are taken; ba costs ln(0.9/0.1), bb costs that plus ln(0.6/0.4)
        let x = peaked(&[[0.9, 0.1], [0.6, 0.4]]);
        let mut d = NoveltySet::from_sequences([vec![0, 0], vec![0, 1]]);
        let out = novelty_project(&x, &mut d).unwrap();
        assert_eq!(out.decode(), vec![1, 0]);
        assert!(d.contains(&[1, 0]));
    }

    #[test]
    fn saturated_space_is_infeasible() {
        let x = peaked(&[[0.9, 0.1]]);
        let mut d = NoveltySet::from_sequences([vec![0], vec![1]]);
        assert!(matches!(novelty_project(&x, &mut d), Err(Error::Infeasible(_))));
    }

    #[test]
    fn repeated_calls_never_duplicate() {
        let mut d = NoveltySet::new();
        let x = CategoricalSequence::new(vec![
            SimplexRow::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
            SimplexRow::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            SimplexRow::new(vec![0.25, 0.25, 0.3, 0.2]).unwrap(),
        ])
        .unwrap();
        let mut out = std::collections::HashSet::new();
        for _ in 0..64 {
            assert!(out.insert(novelty_project(&x, &mut d).unwrap().decode()));
        }
        assert!(novelty_project(&x, &mut d).is_err());
    }

    #[test]
    fn promote_handles_ties() {
        let r = promote_token(&[0.4, 0.4, 0.2], 2).unwrap();
        assert_eq!(r.argmax(), 2);
    }

    #[test]
    fn relaxed_residual_is_dataset_mass() {
        let c = NoveltyConstraint::new(Arc::new(NoveltySet::from_sequences([vec![0, 1], vec![1, 1]])));
        let rows = [0.7, 0.3, 0.4, 0.6];
        let r = c.relaxed_residual(&rows, 2);
        assert!((r - (0.7 * 0.6 + 0.3 * 0.6)).abs() < 1e-15);
        let g = c.relaxed_gradient(&rows, 2);
        assert_eq!(g, vec![0.6, 0.6, 0.0, 1.0]);
        assert!(c.requires_unique());
    }
}
