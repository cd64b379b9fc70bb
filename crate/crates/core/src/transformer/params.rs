use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::ModelConfig;
use crate::tokenizer::TOKEN_DIM;
use crate::track::BehaviorClass;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub drone_w: Tensor,
    pub drone_b: Tensor,
    pub behavior_w: Tensor,
    pub behavior_b: Tensor,
    pub intent_w: Tensor,
    pub intent_b: Tensor,
    /// `d_model x 2H`, columns interleaved `x0, y0, x1, y1, ...`.
    pub traj_w: Tensor,
    pub traj_b: Tensor,
}

/// The trainable tensors. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embed: Tensor,
    pub layers: Vec<LayerWeights>,
    pub heads: HeadWeights,
}

/// Fixed input standardization and output scale, fitted to training data
/// once and never touched by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; TOKEN_DIM],
    pub std: [f64; TOKEN_DIM],
    /// Pixels per unit of trajectory-head output.
    pub offset_scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            mean: [0.0; TOKEN_DIM],
            std: [1.0; TOKEN_DIM],
            offset_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub normalizer: Normalizer,
    pub weights: Weights,
}

impl LayerWeights {
    fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }

    const NAMES: [&'static str; 12] = [
        "wq", "wk", "wv", "wo", "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2", "ln2_gain",
        "ln2_bias",
    ];
}

impl HeadWeights {
    fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.drone_w,
            &self.drone_b,
            &self.behavior_w,
            &self.behavior_b,
            &self.intent_w,
            &self.intent_b,
            &self.traj_w,
            &self.traj_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.drone_w,
            &mut self.drone_b,
            &mut self.behavior_w,
            &mut self.behavior_b,
            &mut self.intent_w,
            &mut self.intent_b,
            &mut self.traj_w,
            &mut self.traj_b,
        ]
    }

    const NAMES: [&'static str; 8] = [
        "drone_w",
        "drone_b",
        "behavior_w",
        "behavior_b",
        "intent_w",
        "intent_b",
        "traj_w",
        "traj_b",
    ];
}

impl Weights {
    /// Seeded init: weights uniform in `±1/sqrt(fan_in)`, biases zero,
    /// layer-norm gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let f = cfg.ffn_hidden();
        let mut dense = |fan_in: usize, fan_out: usize| {
            Tensor::uniform(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), &mut rng)
        };
        let embed = dense(cfg.input_dim(), d);
        let layers = (0..cfg.layers)
            .map(|_| LayerWeights {
                wq: dense(d, d),
                wk: dense(d, d),
                wv: dense(d, d),
                wo: dense(d, d),
                ln1_gain: Tensor::filled(&[d], 1.0),
                ln1_bias: Tensor::zeros(&[d]),
                w1: dense(d, f),
                b1: Tensor::zeros(&[f]),
                w2: dense(f, d),
                b2: Tensor::zeros(&[d]),
                ln2_gain: Tensor::filled(&[d], 1.0),
                ln2_bias: Tensor::zeros(&[d]),
            })
            .collect();
        let heads = HeadWeights {
            drone_w: dense(d, 1),
            drone_b: Tensor::zeros(&[1]),
            behavior_w: dense(d, BehaviorClass::COUNT),
            behavior_b: Tensor::zeros(&[BehaviorClass::COUNT]),
            intent_w: dense(d, 1),
            intent_b: Tensor::zeros(&[1]),
            traj_w: dense(d, 2 * cfg.horizon),
            traj_b: Tensor::zeros(&[2 * cfg.horizon]),
        };
        Self {
            embed,
            layers,
            heads,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Declaration order: embedding, each layer, then the heads.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend(self.heads.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.heads.tensors_mut());
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["embed".to_string()];
        for (i, _) in self.layers.iter().enumerate() {
            out.extend(LayerWeights::NAMES.iter().map(|n| format!("layer{i}.{n}")));
        }
        out.extend(HeadWeights::NAMES.iter().map(|n| format!("heads.{n}")));
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

impl Parameters {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        Self {
            normalizer: Normalizer::default(),
            weights: Weights::init(cfg, seed),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.tensors().iter().all(|t| t.is_finite())
            && self.normalizer.mean.iter().all(|v| v.is_finite())
            && self.normalizer.std.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.normalizer.offset_scale.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::small(16, 2, 8, 5);
        let a = Weights::init(&cfg, 3);
        assert_eq!(a, Weights::init(&cfg, 3));
        assert_ne!(a, Weights::init(&cfg, 4));
        let bound = 1.0 / (cfg.input_dim() as f64).sqrt();
        assert!(a.embed.data.iter().all(|v| v.abs() <= bound));
        assert!(a.layers[0].b1.data.iter().all(|&v| v == 0.0));
        assert!(a.layers[1].ln2_gain.data.iter().all(|&v| v == 1.0));
        assert_eq!(a.tensors().len(), a.names().len());
        assert_eq!(a.heads.traj_w.shape, vec![16, 10]);
    }
}
