use std::io::Write;

use serde::{Deserialize, Serialize};

use super::data::SequenceSource;
use super::interleave::{batch_kind, BatchKind};
use super::optim::AdamState;
use super::schedule::{lr_schedule, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::numeric::{GradTape, Real, Tensor};
use crate::par;
use crate::seed::derive_seed;

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub tokens_seen: u64,
}

/// Training phase: its own schedule and data lengths, optionally with a new
/// RoPE base applied before the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub config: TrainConfig,
    pub theta: Option<f64>,
}

/// Mean cross-entropy of `logits` `[L, V]` against `targets`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    let v = logits.last_dim();
    if v == 0 || logits.len() / v != targets.len() || targets.is_empty() {
        return Err(invalid(format!("{} logit rows vs {} targets", logits.len() / v.max(1), targets.len())));
    }
    let mut total = 0.0;
    for (row, &t) in logits.data().chunks(v).zip(targets) {
        if t >= v {
            return Err(invalid(format!("target {t} outside vocabulary of {v}")));
        }
        let max = row.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x.f64() - max).exp()).sum();
        total += z.ln() - (row[t].f64() - max);
    }
    Ok(total / targets.len() as f64)
}

fn decay_mask<T: Real>(model: &Model<T>) -> Vec<bool> {
    model.params().names().iter().map(|n| !n.ends_with("norm")).collect()
}

/// Loss and parameter gradients of one sequence (next-token prediction,
/// optionally weighted per target).
fn item_gradients<T: Real>(model: &Model<T>, seq: &[usize], weights: Option<&[f64]>) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = GradTape::new().with_parallelism(model.parallelism());
    let params = model.push_params(&mut tape);
    let graph = model.graph(&mut tape, &params, &seq[..seq.len() - 1], false, false)?;
    let weights: Option<Vec<T>> = weights.map(|w| w.iter().map(|&x| T::of(x)).collect());
    let loss = tape.cross_entropy(graph.logits, &seq[1..], weights.as_deref())?;
    let value = tape.value(loss).data()[0].f64();
    let mut grads = tape.backward(loss)?;
    Ok((value, params.iter().map(|&p| grads.take(p)).collect()))
}

/// Runs `cfg.total_steps` AdamW steps. Step `s` (1-based) uses
/// `lr_schedule(s)`; `first_step` and `tokens_before` only offset the log.
pub fn train_stage<T: Real>(
    model: &mut Model<T>,
    data: &dyn SequenceSource,
    cfg: &TrainConfig,
    first_step: usize,
    tokens_before: u64,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    let decay = decay_mask(model);
    let mut adam = AdamState::new(model.params());
    let mut tokens_seen = tokens_before;
    let mut log = Vec::with_capacity(cfg.total_steps);
    for s in 0..cfg.total_steps {
        let global = first_step + s;
        let len = match batch_kind(cfg.interleave_ratio, s)? {
            BatchKind::Short => cfg.short_len,
            BatchKind::Long => cfg.long_len,
        };
        let n_seq = (cfg.batch_tokens / len).max(1);
        let seqs: Vec<Vec<usize>> = (0..n_seq)
            .map(|i| data.sequence(len + 1, derive_seed(cfg.seed, &[global as u64, i as u64])))
            .collect::<Result<_>>()?;
        let items = par::map_slice(model.parallelism(), &seqs, |seq| {
            item_gradients(model, seq, data.loss_weights(seq).as_deref())
        });

        // Fixed-order reduction keeps the sum independent of scheduling.
        let mut loss = 0.0;
        let mut grads: Vec<Tensor<T>> = Vec::new();
        for item in items {
            let (l, g) = item?;
            loss += l;
            if grads.is_empty() {
                grads = g;
            } else {
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, &b)| *a += b);
                }
            }
        }
        let inv = T::of(1.0 / n_seq as f64);
        loss /= n_seq as f64;
        let mut sq = 0.0;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= inv;
                sq += x.f64() * x.f64();
            }
        }
        if !loss.is_finite() || !sq.is_finite() {
            return Err(Error::NonFiniteLoss { step: global + 1, loss });
        }
        if let Some(clip) = cfg.grad_clip {
            let norm = sq.sqrt();
            if norm > clip {
                let f = T::of(clip / norm);
                grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= f));
            }
        }
        let lr = lr_schedule(s + 1, cfg)?;
        adam.update(model.params_mut(), &grads, lr, &cfg.optimizer, &decay);
        tokens_seen += (n_seq * len) as u64;
        let m = StepMetrics { step: global + 1, lr, loss, tokens_seen };
        on_step(&m);
        log.push(m);
    }
    Ok(log)
}

/// Single-stage training from step 1.
pub fn train<T: Real>(model: &mut Model<T>, data: &dyn SequenceSource, cfg: &TrainConfig) -> Result<Vec<StepMetrics>> {
    train_stage(model, data, cfg, 0, 0, &mut |_| {})
}

/// Runs the stages in order with one continuous step/token count. Optimizer
/// moments restart at each stage.
pub fn run_stages<T: Real>(
    model: &mut Model<T>,
    data: &dyn SequenceSource,
    stages: &[Stage],
    on_step: &mut dyn FnMut(&Stage, &StepMetrics),
) -> Result<Vec<StepMetrics>> {
    let mut log: Vec<StepMetrics> = Vec::new();
    for stage in stages {
        if let Some(theta) = stage.theta {
            model.set_theta(theta)?;
        }
        let (step, tokens) = log.last().map_or((0, 0), |m| (m.step, m.tokens_seen));
        let part = train_stage(model, data, &stage.config, step, tokens, &mut |m| on_step(stage, m))?;
        log.extend(part);
    }
    Ok(log)
}

pub fn write_metrics_csv<W: Write>(metrics: &[StepMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "lr", "loss", "tokens_seen"])?;
    for m in metrics {
        w.write_record([m.step.to_string(), m.lr.to_string(), m.loss.to_string(), m.tokens_seen.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::new(vec![3, 512], vec![0.25f64; 3 * 512]).unwrap();
        assert!((cross_entropy(&uniform, &[0, 5, 511]).unwrap() - 512f64.ln()).abs() < 1e-12);
        let mut hot = vec![0.0f64; 8];
        hot[3] = 1000.0;
        assert!(cross_entropy(&Tensor::new(vec![1, 8], hot).unwrap(), &[3]).unwrap() < 1e-12);
        let two = Tensor::new(vec![1, 2], vec![3f64.ln(), 0.0]).unwrap();
        assert!((cross_entropy(&two, &[0]).unwrap() + (0.75f64).ln()).abs() < 1e-12);
        assert!(cross_entropy(&two, &[2]).is_err());
        assert!(cross_entropy(&two, &[0, 1]).is_err());
    }
}
