//! Multi-task training: losses, gradients, optimizer and the epoch loop.

mod grad;
mod loss;
mod optim;

pub use grad::{backward, mean_loss};
pub use loss::{
    loss_behavior, loss_drone, loss_intent, loss_traj, smooth_l1, total_loss, LossComponents,
    LossWeights, PROB_CLAMP,
};
pub use optim::{clip_gradients, AdamW};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluate_refs;
use crate::kinematics::IsrSettings;
use crate::predictors::ModelPredictor;
use crate::tokenizer::{Example, TOKEN_DIM};
use crate::transformer::{ModelConfig, Normalizer, Parameters};

/// Seed offsets keep the split, init and shuffle streams independent.
const SPLIT_STREAM: u64 = 0x5EED_0001;
const SHUFFLE_STREAM: u64 = 0x5EED_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Off: optimize the trajectory loss alone.
    pub multitask: bool,
    /// Split by source track instead of by window.
    pub split_by_sequence: bool,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 50,
            clip_norm: 1.0,
            seed: 0,
            val_fraction: 0.2,
            multitask: true,
            split_by_sequence: false,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("train: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        self.loss_weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ade: f64,
    pub val_isr: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Parameters,
    pub best_epoch: Option<usize>,
    /// Parameters after the last epoch.
    pub last: Parameters,
    pub history: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Seeded train/validation split. Returns `(train, val)` index lists.
pub fn split_indices(examples: &[Example], cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let n = examples.len();
    if n < 2 {
        return ((0..n).collect(), (0..n).collect());
    }
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SPLIT_STREAM);
    let (mut train, mut val) = if cfg.split_by_sequence {
        let mut ids: Vec<&str> = examples
            .iter()
            .map(|e| e.source_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        ids.shuffle(&mut rng);
        let mut val_ids = BTreeSet::new();
        let mut taken = 0;
        for id in &ids[..ids.len().saturating_sub(1)] {
            if taken >= n_val {
                break;
            }
            taken += examples.iter().filter(|e| e.source_id == *id).count();
            val_ids.insert(*id);
        }
        (0..n).partition(|&i| !val_ids.contains(examples[i].source_id.as_str()))
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let val = order.split_off(n - n_val);
        (order, val)
    };
    if val.is_empty() {
        val = train.clone();
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Per-dimension token mean/std and the RMS target offset over `examples`.
pub fn fit_normalizer(examples: &[&Example]) -> Normalizer {
    let mut sum = [0.0; TOKEN_DIM];
    let mut sum_sq = [0.0; TOKEN_DIM];
    let mut count = 0usize;
    let mut offset_sq = 0.0;
    let mut offset_count = 0usize;
    for ex in examples {
        for token in &ex.tokens {
            for (j, v) in token.to_array().into_iter().enumerate() {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
            count += 1;
        }
        for p in &ex.future {
            let o = *p - ex.anchor;
            offset_sq += o.x * o.x + o.y * o.y;
            offset_count += 2;
        }
    }
    let mut normalizer = Normalizer::default();
    if count > 0 {
        for j in 0..TOKEN_DIM {
            let mean = sum[j] / count as f64;
            let var = (sum_sq[j] / count as f64 - mean * mean).max(0.0);
            normalizer.mean[j] = mean;
            normalizer.std[j] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
    }
    if offset_count > 0 {
        normalizer.offset_scale = (offset_sq / offset_count as f64).sqrt().max(1.0);
    }
    normalizer
}

fn validation_metrics(
    examples: &[&Example],
    params: &Parameters,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    isr: &IsrSettings,
) -> Result<(f64, f64, f64, f64)> {
    let loss = mean_loss(
        examples,
        params,
        model_cfg,
        &train_cfg.loss_weights,
        train_cfg.multitask,
    )?;
    let predictor = ModelPredictor::new(model_cfg.clone(), params.clone());
    let row = evaluate_refs(&predictor, examples, isr)?;
    Ok((loss, row.ade, row.isr, row.acc))
}

/// Seeded split, then minibatch AdamW with gradient clipping. The returned
/// `best` parameters come from the epoch with the lowest validation loss.
pub fn train(
    examples: &[Example],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    isr: &IsrSettings,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model_cfg.validate()?;
    train_cfg.validate()?;
    isr.validate()?;
    if let Some(bad) = examples
        .iter()
        .find(|e| e.tokens.len() != model_cfg.window || e.future.len() != model_cfg.horizon)
    {
        return Err(Error::ShapeMismatch(format!(
            "example from `{}` has {} tokens / {} targets, model expects {} / {}",
            bad.source_id,
            bad.tokens.len(),
            bad.future.len(),
            model_cfg.window,
            model_cfg.horizon
        )));
    }

    let (train_idx, val_idx) = split_indices(examples, train_cfg);
    let train_set: Vec<&Example> = train_idx.iter().map(|&i| &examples[i]).collect();
    let val_set: Vec<&Example> = val_idx.iter().map(|&i| &examples[i]).collect();

    let mut params = Parameters::init(model_cfg, train_cfg.seed);
    params.normalizer = fit_normalizer(&train_set);

    let mut optimizer = AdamW::new(
        &params.weights,
        train_cfg.learning_rate,
        train_cfg.weight_decay,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_loss = f64::INFINITY;

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(train_cfg.batch_size) {
            let batch: Vec<&Example> = batch_idx.iter().map(|&i| train_set[i]).collect();
            let (loss, mut grads) = backward(
                &batch,
                &params,
                model_cfg,
                &train_cfg.loss_weights,
                train_cfg.multitask,
            )?;
            clip_gradients(&mut grads, train_cfg.clip_norm);
            optimizer.step(&mut params.weights, &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_ade, val_isr, val_acc) =
            validation_metrics(&val_set, &params, model_cfg, train_cfg, isr)?;
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters after update"));
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            best_epoch = Some(epoch);
        }
        history.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_ade,
            val_isr,
            val_acc,
        });
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_ade,val_isr,val_acc\n");
    for m in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.4},{:.4},{:.4}",
            m.epoch, m.train_loss, m.val_loss, m.val_ade, m.val_isr, m.val_acc
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::MotionToken;
    use crate::track::{BehaviorClass, LabelSet, Point};
    use rand::Rng;

    fn example(rng: &mut ChaCha8Rng, window: usize, horizon: usize, id: usize) -> Example {
        let start = Point::new(rng.random_range(100.0..500.0), rng.random_range(100.0..400.0));
        let v = Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let history: Vec<Point> = (0..window).map(|i| start + v * i as f64).collect();
        let anchor = history[window - 1];
        let tokens = history
            .iter()
            .map(|p| MotionToken::from_array([p.x, p.y, v.x, v.y, 0.0, 0.0, 20.0, rng.random_range(0.0..0.5)]))
            .collect();
        let class = BehaviorClass::from_index(id % BehaviorClass::COUNT).unwrap();
        Example {
            tokens,
            future: (1..=horizon).map(|t| anchor + v * t as f64).collect(),
            history,
            labels: Some(LabelSet {
                is_drone: id.is_multiple_of(2),
                behavior: class,
                intent: rng.random_range(0.0..1.0),
            }),
            anchor,
            source_id: format!("track{}", id / 3),
            t_index: window as u64 - 1,
        }
    }

    fn dataset(n: usize, window: usize, horizon: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| example(&mut rng, window, horizon, i)).collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 3,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn split_is_seeded_disjoint_and_complete() {
        let data = dataset(50, 4, 3, 1);
        let cfg = small_cfg();
        let (train, val) = split_indices(&data, &cfg);
        assert_eq!(val.len(), 10);
        assert_eq!(train.len(), 40);
        let mut all: Vec<_> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(&data, &cfg), (train.clone(), val.clone()));
        let other = split_indices(&data, &TrainConfig { seed: 6, ..cfg.clone() });
        assert_ne!(other.1, val);
    }

    #[test]
    fn sequence_split_keeps_tracks_together() {
        let data = dataset(30, 4, 3, 1);
        let cfg = TrainConfig {
            split_by_sequence: true,
            ..small_cfg()
        };
        let (train, val) = split_indices(&data, &cfg);
        assert!(!val.is_empty() && !train.is_empty());
        let val_ids: BTreeSet<_> = val.iter().map(|&i| &data[i].source_id).collect();
        assert!(train.iter().all(|&i| !val_ids.contains(&data[i].source_id)));
    }

    #[test]
    fn normalizer_standardizes_tokens() {
        let data = dataset(20, 4, 3, 2);
        let refs: Vec<&Example> = data.iter().collect();
        let n = fit_normalizer(&refs);
        // constant dimensions fall back to unit std
        assert_eq!(n.std[4], 1.0);
        assert_eq!(n.std[6], 1.0);
        let count = (data.len() * 4) as f64;
        let mean_x: f64 = data.iter().flat_map(|e| &e.tokens).map(|t| t.x).sum::<f64>() / count;
        assert!((n.mean[0] - mean_x).abs() < 1e-9);
        assert!(n.offset_scale >= 1.0);
        assert_eq!(fit_normalizer(&[]), Normalizer::default());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = ModelConfig::small(8, 2, 4, 3);
        let data = dataset(3, 4, 3, 9);
        let batch: Vec<&Example> = data.iter().collect();
        let mut params = Parameters::init(&model, 3);
        params.normalizer = fit_normalizer(&batch);
        let lw = LossWeights::default();
        let (_, grads) = backward(&batch, &params, &model, &lw, true).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let n_tensors = params.weights.tensors().len();
        for ti in 0..n_tensors {
            let len = params.weights.tensors()[ti].len();
            for i in (0..len).step_by(3) {
                let mut p = params.clone();
                p.weights.tensors_mut()[ti].data[i] += h;
                let up = mean_loss(&batch, &p, &model, &lw, true).unwrap();
                p.weights.tensors_mut()[ti].data[i] -= 2.0 * h;
                let down = mean_loss(&batch, &p, &model, &lw, true).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.tensors()[ti].data[i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let model = ModelConfig::small(8, 1, 4, 3);
        let data = dataset(5, 4, 3, 4);
        let batch: Vec<&Example> = data.iter().collect();
        let params = Parameters::init(&model, 1);
        let (loss, grads) = backward(&batch, &params, &model, &LossWeights::zero(), true).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn single_task_ignores_semantic_heads() {
        let model = ModelConfig::small(8, 1, 4, 3);
        let data = dataset(5, 4, 3, 4);
        let batch: Vec<&Example> = data.iter().collect();
        let params = Parameters::init(&model, 1);
        let (_, grads) = backward(&batch, &params, &model, &LossWeights::default(), false).unwrap();
        assert_eq!(grads.heads.drone_w.sum_sq(), 0.0);
        assert_eq!(grads.heads.behavior_b.sum_sq(), 0.0);
        assert!(grads.heads.traj_w.sum_sq() > 0.0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let model = ModelConfig::small(16, 1, 4, 3);
        let data = dataset(32, 4, 3, 7);
        let cfg = TrainConfig {
            epochs: 50,
            ..small_cfg()
        };
        let isr = IsrSettings::default();
        let out = train(&data, &model, &cfg, &isr).unwrap();
        assert_eq!(out.history.len(), 50);
        assert!(out.history[49].train_loss < out.history[0].train_loss);
        let again = train(&data, &model, &cfg, &isr).unwrap();
        assert_eq!(out.best, again.best);
        assert_eq!(history_csv(&out.history), history_csv(&again.history));
        assert_eq!(history_csv(&out.history).lines().count(), 51);
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let model = ModelConfig::small(8, 1, 4, 3);
        let data = dataset(10, 4, 3, 7);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let out = train(&data, &model, &cfg, &IsrSettings::default()).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
        assert_eq!(out.best.weights, Parameters::init(&model, cfg.seed).weights);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let model = ModelConfig::small(8, 1, 4, 3);
        let isr = IsrSettings::default();
        assert!(matches!(train(&[], &model, &small_cfg(), &isr), Err(Error::EmptyDataset)));
        let wrong = dataset(4, 5, 3, 1);
        assert!(matches!(train(&wrong, &model, &small_cfg(), &isr), Err(Error::ShapeMismatch(_))));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        assert!(matches!(train(&dataset(4, 4, 3, 1), &model, &bad, &isr), Err(Error::InvalidSpec(_))));
    }
}
