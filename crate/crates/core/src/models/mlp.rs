//! Noise-prediction MLP trained by denoising score matching.
//!
//! The network maps `(x_t, tau)` with `tau = 2 t / T - 1` to a noise
//! estimate `eps_hat`; the score is `-eps_hat / sqrt(beta(t))`. Hidden layers
//! use tanh, the output layer is linear. Parameters are flattened in layer
//! order as `weights (out x in, row-major)` then `bias`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::checkpoint::{Checkpoint, Tensor};
use crate::models::NoiseSchedule;
use crate::numerics::{all_finite, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            hidden: default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layers must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// One minibatch of noised inputs and their noise targets.
#[derive(Debug, Clone)]
pub struct NoiseBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserMlp {
    dim: usize,
    layers: Vec<Dense>,
    schedule: NoiseSchedule,
}

impl DenoiserMlp {
    /// Xavier-uniform initialization.
    pub fn new(dim: usize, hidden: &[usize], schedule: NoiseSchedule, rng: &mut SeededRng) -> Self {
        let mut sizes = vec![dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                Dense {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.uniform_range(-limit, limit)).collect(),
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Self { dim, layers, schedule }
    }

    /// A network whose noise estimate is identically zero.
    pub fn zeros(dim: usize, hidden: &[usize], schedule: NoiseSchedule) -> Self {
        let mut net = Self::new(dim, hidden, schedule, &mut SeededRng::new(0));
        let n = net.param_count();
        net.set_params(&vec![0.0; n]);
        net
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
    }

    fn time_feature(&self, t: usize) -> f64 {
        2.0 * t as f64 / self.schedule.steps as f64 - 1.0
    }

    fn network_input(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut input = x.to_vec();
        input.push(self.time_feature(t));
        input
    }

    /// Activations of every layer, input first.
    fn forward_all(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(acts.last().unwrap());
            if i < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_noise(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        self.schedule.eval(t)?;
        let out = self.forward_all(&self.network_input(x, t)).pop().unwrap();
        if !all_finite(&out) {
            return Err(Error::NonFinite("denoiser output"));
        }
        Ok(out)
    }

    pub fn score(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let (beta, _) = self.schedule.eval(t)?;
        let scale = -1.0 / beta.sqrt();
        Ok(self.predict_noise(x, t)?.into_iter().map(|e| e * scale).collect())
    }

    /// Mean squared noise-prediction error over the batch and its gradient
    /// with respect to [`params`](Self::params).
    pub fn loss_and_gradient(&self, batch: &NoiseBatch) -> (f64, Vec<f64>) {
        let n = batch.inputs.len();
        let scale = 1.0 / (n * self.dim) as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for (input, target) in batch.inputs.iter().zip(&batch.targets) {
            let acts = self.forward_all(input);
            let out = acts.last().unwrap();
            let mut delta: Vec<f64> = out
                .iter()
                .zip(target)
                .map(|(o, e)| {
                    loss += (o - e) * (o - e) * scale;
                    2.0 * (o - e) * scale
                })
                .collect();
            for li in (0..=last).rev() {
                let layer = &self.layers[li];
                let a_in = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..layer.outputs {
                    gb[o] += delta[o];
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, a) in row.iter_mut().zip(a_in) {
                        *g += delta[o] * a;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (row, d) in layer.weights.chunks(layer.inputs).zip(&delta) {
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    // tanh'(z) = 1 - tanh(z)^2
                    for (p, a) in prev.iter_mut().zip(a_in) {
                        *p *= 1.0 - a * a;
                    }
                    delta = prev;
                }
            }
        }
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        (loss, flat)
    }

    /// Draws a training batch: random steps, forward-noised inputs and the
    /// noise that produced them.
    pub fn make_batch(&self, clean: &[&[f64]], rng: &mut SeededRng) -> NoiseBatch {
        let mut inputs = Vec::with_capacity(clean.len());
        let mut targets = Vec::with_capacity(clean.len());
        for x0 in clean {
            let t = 1 + rng.below(self.schedule.steps);
            let beta = self.schedule.beta(t);
            let eps = rng.normal_vec(self.dim);
            let xt: Vec<f64> = x0
                .iter()
                .zip(&eps)
                .map(|(x, e)| (1.0 - beta).sqrt() * x + beta.sqrt() * e)
                .collect();
            inputs.push(self.network_input(&xt, t));
            targets.push(eps);
        }
        NoiseBatch { inputs, targets }
    }

    /// Adam on the denoising loss. Returns the trained network and the mean
    /// loss of every epoch.
    pub fn fit(data: &[Vec<f64>], schedule: &NoiseSchedule, cfg: &TrainConfig) -> Result<(Self, Vec<f64>)> {
        cfg.validate()?;
        schedule.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let dim = data[0].len();
        if let Some(bad) = data.iter().find(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        let mut rng = SeededRng::new(cfg.seed);
        let mut net = Self::new(dim, &cfg.hidden, schedule.clone(), &mut rng);
        let mut params = net.params();
        let mut m = vec![0.0; params.len()];
        let mut v = vec![0.0; params.len()];
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut step = 0i32;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let clean: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
                let batch = net.make_batch(&clean, &mut rng);
                let (loss, grad) = net.loss_and_gradient(&batch);
                if !loss.is_finite() || !all_finite(&grad) {
                    return Err(Error::TrainingDiverged { epoch, loss });
                }
                step += 1;
                let c1 = 1.0 - b1.powi(step);
                let c2 = 1.0 - b2.powi(step);
                for i in 0..params.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                    params[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
                net.set_params(&params);
                epoch_loss += loss;
                batches += 1;
            }
            history.push(epoch_loss / batches as f64);
        }
        Ok((net, history))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let sched = &self.schedule;
        let kind = match sched.kind {
            crate::models::ScheduleKind::Linear => 0.0,
            crate::models::ScheduleKind::Cosine => 1.0,
        };
        ck.insert(
            "schedule",
            Tensor::vector(vec![kind, sched.steps as f64, sched.beta_max, sched.gamma_min, sched.gamma_max]),
        );
        for (i, layer) in self.layers.iter().enumerate() {
            ck.insert(
                &format!("layer{i}.weight"),
                Tensor::new(vec![layer.outputs, layer.inputs], layer.weights.clone()).expect("shape matches"),
            );
            ck.insert(&format!("layer{i}.bias"), Tensor::vector(layer.bias.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint {
            line: 0,
            message: m.to_string(),
        };
        let sched = ck.get("schedule").ok_or_else(|| bad("missing schedule entry"))?;
        if sched.data.len() != 5 {
            return Err(bad("schedule entry must hold 5 values"));
        }
        let kind = match sched.data[0] as i64 {
            0 => crate::models::ScheduleKind::Linear,
            1 => crate::models::ScheduleKind::Cosine,
            _ => return Err(bad("unknown schedule kind")),
        };
        let schedule = NoiseSchedule {
            kind,
            steps: sched.data[1] as usize,
            beta_max: sched.data[2],
            gamma_min: sched.data[3],
            gamma_max: sched.data[4],
        };
        schedule.validate()?;
        let mut layers = Vec::new();
        while let Some(w) = ck.get(&format!("layer{}.weight", layers.len())) {
            let b = ck
                .get(&format!("layer{}.bias", layers.len()))
                .ok_or_else(|| bad("weight without bias"))?;
            if w.shape.len() != 2 || b.data.len() != w.shape[0] {
                return Err(bad("layer shapes disagree"));
            }
            layers.push(Dense {
                inputs: w.shape[1],
                outputs: w.shape[0],
                weights: w.data.clone(),
                bias: b.data.clone(),
            });
        }
        if layers.is_empty() {
            return Err(bad("no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(bad("consecutive layers do not chain"));
            }
        }
        let dim = layers.last().unwrap().outputs;
        if layers[0].inputs != dim + 1 {
            return Err(bad("input layer must take dim + 1 features"));
        }
        Ok(Self { dim, layers, schedule })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net() -> (DenoiserMlp, NoiseBatch) {
        let mut rng = SeededRng::new(21);
        let net = DenoiserMlp::new(2, &[5, 4], NoiseSchedule::linear(20), &mut rng);
        let data: Vec<Vec<f64>> = (0..6).map(|_| rng.normal_vec(2)).collect();
        let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let batch = net.make_batch(&refs, &mut rng);
        (net, batch)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let (mut net, batch) = tiny_net();
        let (_, grad) = net.loss_and_gradient(&batch);
        let base = net.params();
        let mut rng = SeededRng::new(2);
        for _ in 0..10 {
            let i = rng.below(base.len());
            let h = 1e-6;
            let mut p = base.clone();
            p[i] += h;
            net.set_params(&p);
            let lp = net.loss_and_gradient(&batch).0;
            p[i] -= 2.0 * h;
            net.set_params(&p);
            let lm = net.loss_and_gradient(&batch).0;
            net.set_params(&base);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let err = DenoiserMlp::fit(&[vec![0.0]], &NoiseSchedule::linear(10), &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 50,
            batch_size: 4,
            seed: 1,
            hidden: vec![8],
        };
        let data: Vec<Vec<f64>> = (0..16).map(|i| vec![1e200 * i as f64]).collect();
        let err = DenoiserMlp::fit(&data, &NoiseSchedule::linear(10), &cfg).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }));
    }

    #[test]
    fn zero_network_has_zero_score() {
        let net = DenoiserMlp::zeros(3, &[4], NoiseSchedule::linear(5));
        assert_eq!(net.score(&[1.0, 2.0, 3.0], 3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (net, _) = tiny_net();
        let text = net.to_checkpoint().to_text();
        let back = DenoiserMlp::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
