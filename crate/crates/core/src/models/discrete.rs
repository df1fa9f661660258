//! Denoisers for categorical sequences: an exact posterior over a small
//! table of sequences, and a trainable neighbour-context model.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::{NoiseSchedule, TrainConfig};
use crate::numerics::{logsumexp, SeededRng, SimplexRow};
use crate::sampler_discrete::{CategoricalSequence, DiscreteNoiseSpec, NoiseKind};

/// Weight multiplier per disagreeing position when no table entry is
/// consistent with the observation.
const MISMATCH_WEIGHT: f64 = 1e-6;

/// An explicit distribution over equal-length token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDistribution {
    len: usize,
    entries: Vec<(Vec<usize>, f64)>,
}

impl ToyDistribution {
    /// Empirical distribution of `sequences`; repeated sequences add weight.
    pub fn from_sequences(sequences: &[Vec<usize>]) -> Result<Self> {
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for s in sequences {
            *counts.entry(s.clone()).or_default() += 1;
        }
        let n = sequences.len() as f64;
        Self::new(counts.into_iter().map(|(s, c)| (s, c as f64 / n)).collect())
    }

    pub fn uniform(sequences: &[Vec<usize>]) -> Result<Self> {
        let p = 1.0 / sequences.len().max(1) as f64;
        Self::new(sequences.iter().map(|s| (s.clone(), p)).collect())
    }

    pub fn new(entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let Some((first, _)) = entries.first() else {
            return Err(Error::InvalidArgument("empty sequence table".into()));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::InvalidArgument("table sequences must be nonempty".into()));
        }
        if let Some((s, _)) = entries.iter().find(|(s, _)| s.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: s.len(),
            });
        }
        let probs: Vec<f64> = entries.iter().map(|(_, p)| *p).collect();
        crate::numerics::check_simplex(&probs)?;
        Ok(Self { len, entries })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn probability(&self, seq: &[usize]) -> f64 {
        self.entries.iter().filter(|(s, _)| s == seq).map(|(_, p)| p).sum()
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vec<usize> {
        let w: Vec<f64> = self.entries.iter().map(|(_, p)| *p).collect();
        self.entries[rng.categorical(&w)].0.clone()
    }

    /// Posterior marginals of the clean sequence given a corrupted one.
    fn posterior(&self, observed: &[usize], noise: &DiscreteNoiseSpec, beta: f64) -> Vec<SimplexRow> {
        let log_lik = |seq: &[usize], eta: f64| -> f64 {
            match noise.kind {
                NoiseKind::Mask => seq
                    .iter()
                    .zip(observed)
                    .filter(|(_, o)| Some(**o) != noise.mask_token)
                    .map(|(s, o)| if s == o { 0.0 } else { eta.ln() })
                    .sum(),
                NoiseKind::Uniform => {
                    let base = beta / noise.vocab as f64;
                    seq.iter()
                        .zip(observed)
                        .map(|(s, o)| {
                            let p = if s == o { 1.0 - beta + base } else { base };
                            if p > 0.0 {
                                p.ln()
                            } else {
                                eta.ln()
                            }
                        })
                        .sum()
                }
            }
        };
        let mut logw: Vec<f64> = self
            .entries
            .iter()
            .map(|(s, p)| if *p > 0.0 { p.ln() + log_lik(s, 0.0) } else { f64::NEG_INFINITY })
            .collect();
        if logw.iter().all(|w| *w == f64::NEG_INFINITY) {
            logw = self
                .entries
                .iter()
                .map(|(s, p)| {
                    if *p > 0.0 {
                        p.ln() + log_lik(s, MISMATCH_WEIGHT)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
        }
        let norm = logsumexp(&logw);
        let mut rows = vec![vec![0.0; noise.vocab]; self.len];
        for ((s, _), lw) in self.entries.iter().zip(&logw) {
            let w = (lw - norm).exp();
            if w == 0.0 {
                continue;
            }
            for (row, &tok) in rows.iter_mut().zip(s) {
                row[tok] += w;
            }
        }
        rows.into_iter()
            .map(|r| SimplexRow::from_weights(r).expect("posterior has positive mass"))
            .collect()
    }
}

/// Neighbour-context denoiser. For position `i` the logits over data tokens
/// are `bias + pos[i] + left[c_l] + right[c_r] (+ self[x_i])`, where the
/// contexts are the neighbouring observed tokens, an "unknown" slot for
/// masked neighbours, or a boundary slot past either end. The `self` block is
/// used under uniform noise only.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramDenoiser {
    len: usize,
    noise: DiscreteNoiseSpec,
    schedule: NoiseSchedule,
    params: Vec<f64>,
}

impl BigramDenoiser {
    pub fn new(len: usize, noise: DiscreteNoiseSpec, schedule: NoiseSchedule) -> Result<Self> {
        noise.validate()?;
        schedule.validate()?;
        let vd = noise.data_vocab();
        let blocks = 1 + len + 2 * (vd + 2) + vd;
        Ok(Self {
            len,
            noise,
            schedule,
            params: vec![0.0; blocks * vd],
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn vd(&self) -> usize {
        self.noise.data_vocab()
    }

    /// Data-token index of a full-vocabulary token, if it is a data token.
    fn data_index(&self, token: usize) -> Option<usize> {
        match self.noise.mask_token {
            Some(m) if token == m => None,
            Some(m) if token > m => Some(token - 1),
            _ => Some(token),
        }
    }

    fn full_token(&self, data_index: usize) -> usize {
        match self.noise.mask_token {
            Some(m) if data_index >= m => data_index + 1,
            _ => data_index,
        }
    }

    /// Starting parameter-block indices of the features active at `i`.
    fn features(&self, tokens: &[usize], i: usize) -> Vec<usize> {
        let vd = self.vd();
        let unknown = vd;
        let boundary = vd + 1;
        let ctx = |j: Option<usize>| match j {
            None => boundary,
            Some(j) => self.data_index(tokens[j]).unwrap_or(unknown),
        };
        let left = ctx(i.checked_sub(1));
        let right = ctx(if i + 1 < tokens.len() { Some(i + 1) } else { None });
        let left_base = 1 + self.len;
        let right_base = left_base + vd + 2;
        let self_base = right_base + vd + 2;
        let mut f = vec![0, 1 + i, left_base + left, right_base + right];
        if self.noise.kind == NoiseKind::Uniform {
            if let Some(s) = self.data_index(tokens[i]) {
                f.push(self_base + s);
            }
        }
        f
    }

    fn logits(&self, tokens: &[usize], i: usize) -> Vec<f64> {
        let vd = self.vd();
        let mut z = vec![0.0; vd];
        for b in self.features(tokens, i) {
            for (zv, w) in z.iter_mut().zip(&self.params[b * vd..(b + 1) * vd]) {
                *zv += w;
            }
        }
        z
    }

    fn data_row_to_full(&self, probs: &[f64]) -> SimplexRow {
        let mut full = vec![0.0; self.noise.vocab];
        for (d, p) in probs.iter().enumerate() {
            full[self.full_token(d)] = *p;
        }
        SimplexRow::from_weights(full).expect("softmax output has mass")
    }

    fn predict_tokens(&self, tokens: &[usize]) -> Vec<SimplexRow> {
        (0..tokens.len())
            .map(|i| {
                let is_mask = Some(tokens[i]) == self.noise.mask_token;
                if self.noise.kind == NoiseKind::Mask && !is_mask {
                    return SimplexRow::one_hot(self.noise.vocab, tokens[i]);
                }
                let z = self.logits(tokens, i);
                self.data_row_to_full(crate::numerics::softmax(&z).as_slice())
            })
            .collect()
    }

    /// Mean cross-entropy on corrupted positions and its gradient.
    fn loss_and_gradient(&self, batch: &[(Vec<usize>, Vec<usize>)]) -> (f64, Vec<f64>) {
        let vd = self.vd();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut count = 0usize;
        for (clean, noisy) in batch {
            for i in 0..clean.len() {
                if self.noise.kind == NoiseKind::Mask && Some(noisy[i]) != self.noise.mask_token {
                    continue;
                }
                let target = self.data_index(clean[i]).expect("clean data uses data tokens");
                let z = self.logits(noisy, i);
                let lse = logsumexp(&z);
                loss += lse - z[target];
                count += 1;
                for b in self.features(noisy, i) {
                    for v in 0..vd {
                        let p = (z[v] - lse).exp();
                        grad[b * vd + v] += p - if v == target { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        if count > 0 {
            let c = count as f64;
            loss /= c;
            grad.iter_mut().for_each(|g| *g /= c);
        }
        (loss, grad)
    }

    fn corrupt(&self, clean: &[usize], rng: &mut SeededRng) -> Vec<usize> {
        let t = 1 + rng.below(self.schedule.steps);
        let beta = self.schedule.beta(t);
        clean
            .iter()
            .map(|&tok| {
                if rng.uniform() < beta {
                    match self.noise.kind {
                        NoiseKind::Mask => self.noise.mask_token.unwrap(),
                        NoiseKind::Uniform => rng.below(self.noise.vocab),
                    }
                } else {
                    tok
                }
            })
            .collect()
    }

    /// Adam on the cross-entropy of forward-corrupted training sequences.
    /// Returns the mean loss per epoch.
    pub fn fit(&mut self, data: &[Vec<usize>], cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        for s in data {
            if s.len() != self.len {
                return Err(Error::DimensionMismatch {
                    expected: self.len,
                    actual: s.len(),
                });
            }
            if let Some(&t) = s.iter().find(|&&t| !self.noise.is_data_token(t)) {
                return Err(Error::InvalidArgument(format!("training token {t} is not a data token")));
            }
        }
        let mut rng = SeededRng::new(cfg.seed);
        let n = self.params.len();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let (b1, b2) = (0.9f64, 0.999f64);
        let mut step = 0;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let (mut total, mut batches) = (0.0, 0);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(Vec<usize>, Vec<usize>)> =
                    chunk.iter().map(|&i| (data[i].clone(), self.corrupt(&data[i], &mut rng))).collect();
                let (loss, grad) = self.loss_and_gradient(&batch);
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, loss });
                }
                step += 1;
                let c1 = 1.0 - b1.powi(step);
                let c2 = 1.0 - b2.powi(step);
                for i in 0..n {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                    self.params[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
                total += loss;
                batches += 1;
            }
            history.push(total / batches as f64);
        }
        Ok(history)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiscreteDenoiser {
    /// Exact posterior under a known sequence table.
    AnalyticToy {
        table: ToyDistribution,
        noise: DiscreteNoiseSpec,
        schedule: NoiseSchedule,
    },
    TrainableBigram(BigramDenoiser),
}

impl DiscreteDenoiser {
    pub fn analytic(table: ToyDistribution, noise: DiscreteNoiseSpec, schedule: NoiseSchedule) -> Result<Self> {
        noise.validate()?;
        schedule.validate()?;
        for (s, _) in table.entries() {
            if let Some(&t) = s.iter().find(|&&t| !noise.is_data_token(t)) {
                return Err(Error::InvalidArgument(format!("table token {t} is not a data token")));
            }
        }
        Ok(Self::AnalyticToy { table, noise, schedule })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::AnalyticToy { table, .. } => table.len(),
            Self::TrainableBigram(b) => b.len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn noise(&self) -> &DiscreteNoiseSpec {
        match self {
            Self::AnalyticToy { noise, .. } => noise,
            Self::TrainableBigram(b) => &b.noise,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        match self {
            Self::AnalyticToy { schedule, .. } => schedule,
            Self::TrainableBigram(b) => &b.schedule,
        }
    }

    pub fn predict(&self, xt: &CategoricalSequence, t: usize) -> Result<Vec<SimplexRow>> {
        let noise = self.noise();
        if xt.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: xt.len(),
            });
        }
        if xt.vocab() != noise.vocab {
            return Err(Error::DimensionMismatch {
                expected: noise.vocab,
                actual: xt.vocab(),
            });
        }
        let (beta, _) = self.schedule().eval(t)?;
        let tokens = xt.decode();
        Ok(match self {
            Self::AnalyticToy { table, .. } => table.posterior(&tokens, noise, beta),
            Self::TrainableBigram(b) => b.predict_tokens(&tokens),
        })
    }
}

/// One probability row per position for the clean sequence given `xt`.
pub fn discrete_predict(d: &DiscreteDenoiser, xt: &CategoricalSequence, t: usize) -> Result<Vec<SimplexRow>> {
    d.predict(xt, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_sequences(v: usize, l: usize) -> Vec<Vec<usize>> {
        (0..v.pow(l as u32))
            .map(|mut code| {
                (0..l)
                    .map(|_| {
                        let t = code % v;
                        code /= v;
                        t
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn fully_unmasked_returns_input() {
        let table = ToyDistribution::uniform(&[vec![0, 1], vec![1, 0]]).unwrap();
        let d = DiscreteDenoiser::analytic(table, DiscreteNoiseSpec::mask(2), NoiseSchedule::linear(10)).unwrap();
        let xt = CategoricalSequence::from_tokens(&[1, 0], 3).unwrap();
        let rows = discrete_predict(&d, &xt, 5).unwrap();
        assert_eq!(rows, xt.rows().to_vec());
    }

    #[test]
    fn two_sequence_posterior() {
        // table uniform over {AB, BA}; observing A first forces B second
        let table = ToyDistribution::uniform(&[vec![0, 1], vec![1, 0]]).unwrap();
        let d = DiscreteDenoiser::analytic(table, DiscreteNoiseSpec::mask(2), NoiseSchedule::linear(10)).unwrap();
        let xt = CategoricalSequence::from_tokens(&[0, 2], 3).unwrap();
        let rows = discrete_predict(&d, &xt, 5).unwrap();
        assert_eq!(rows[1].as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_table_all_masked_gives_uniform_rows() {
        let table = ToyDistribution::uniform(&all_sequences(3, 3)).unwrap();
        let d = DiscreteDenoiser::analytic(table, DiscreteNoiseSpec::mask(3), NoiseSchedule::linear(10)).unwrap();
        let xt = CategoricalSequence::from_tokens(&[3, 3, 3], 4).unwrap();
        for row in discrete_predict(&d, &xt, 10).unwrap() {
            for p in &row.as_slice()[..3] {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
            assert_eq!(row[3], 0.0);
        }
    }

    #[test]
    fn analytic_matches_brute_force_bayes() {
        let mut rng = SeededRng::new(12);
        let seqs = all_sequences(2, 4);
        for _ in 0..20 {
            let weights: Vec<f64> = (0..seqs.len()).map(|_| rng.uniform()).collect();
            let total: f64 = weights.iter().sum();
            let table = ToyDistribution::new(seqs.iter().cloned().zip(weights.iter().map(|w| w / total)).collect()).unwrap();
            for noise in [DiscreteNoiseSpec::mask(2), DiscreteNoiseSpec::uniform(2)] {
                let sched = NoiseSchedule::linear(8);
                let d = DiscreteDenoiser::analytic(table.clone(), noise.clone(), sched.clone()).unwrap();
                let obs: Vec<usize> = (0..4).map(|_| rng.below(noise.vocab)).collect();
                let t = 1 + rng.below(8);
                let beta = sched.beta(t);
                let xt = CategoricalSequence::from_tokens(&obs, noise.vocab).unwrap();
                let rows = d.predict(&xt, t).unwrap();
                // independent Bayes: joint p(x0) q(xt | x0), marginalize
                let mut marg = vec![vec![0.0; noise.vocab]; 4];
                let mut z = 0.0;
                for (s, w) in seqs.iter().zip(&weights) {
                    let mut lik = 1.0;
                    for i in 0..4 {
                        lik *= match noise.kind {
                            NoiseKind::Mask if obs[i] == 2 => 1.0,
                            NoiseKind::Mask => (s[i] == obs[i]) as u8 as f64,
                            NoiseKind::Uniform => (1.0 - beta) * ((s[i] == obs[i]) as u8 as f64) + beta / 2.0,
                        };
                    }
                    let joint = w / total * lik;
                    z += joint;
                    for i in 0..4 {
                        marg[i][s[i]] += joint;
                    }
                }
                for i in 0..4 {
                    for v in 0..noise.vocab {
                        assert!((rows[i][v] - marg[i][v] / z).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let table = ToyDistribution::uniform(&[vec![0, 1]]).unwrap();
        let d = DiscreteDenoiser::analytic(table, DiscreteNoiseSpec::mask(2), NoiseSchedule::linear(10)).unwrap();
        let xt = CategoricalSequence::from_tokens(&[0, 1, 2], 3).unwrap();
        assert!(matches!(d.predict(&xt, 1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bigram_learns_deterministic_successor() {
        // data: token 0 always followed by 1, 1 by 2, 2 by 0
        let mut rng = SeededRng::new(1);
        let data: Vec<Vec<usize>> = (0..200)
            .map(|_| {
                let s = rng.below(3);
                (0..4).map(|i| (s + i) % 3).collect()
            })
            .collect();
        let sched = NoiseSchedule::linear(20);
        let mut b = BigramDenoiser::new(4, DiscreteNoiseSpec::mask(3), sched).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 16,
            seed: 2,
            hidden: vec![],
        };
        let hist = b.fit(&data, &cfg).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        let d = DiscreteDenoiser::TrainableBigram(b);
        let xt = CategoricalSequence::from_tokens(&[1, 3, 3, 3], 4).unwrap();
        let rows = d.predict(&xt, 10).unwrap();
        assert_eq!(rows[0].argmax(), 1);
        assert_eq!(rows[1].argmax(), 2);
        assert_eq!(rows[1][3], 0.0);
    }
}
