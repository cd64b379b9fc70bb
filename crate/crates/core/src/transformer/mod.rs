//! Causal transformer over motion-token windows.
//!
//! Tokens are standardized, linearly embedded and summed with sinusoidal
//! position codes, then pass through post-norm blocks:
//!
//! ```text
//! h = LayerNorm(h + CausalMHA(h))
//! h = LayerNorm(h + FFN(h))
//! ```
//!
//! The last position's final hidden state feeds four heads: drone
//! probability (sigmoid), behavior distribution (softmax over 5), intent
//! (sigmoid) and `H` trajectory offsets from the anchor (linear).

mod checkpoint;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use params::{HeadWeights, LayerWeights, Normalizer, Parameters, Weights};
pub use tensor::Tensor;

pub(crate) use tensor::{add_matmul_a_bt, add_matmul_at_b, matmul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{MotionToken, TOKEN_DIM};
use crate::track::{BehaviorClass, Point};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub window: usize,
    pub horizon: usize,
    pub ffn_mult: usize,
    /// When false the two acceleration dims never reach the embedding.
    pub use_acceleration: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 4,
            heads: 4,
            window: 12,
            horizon: 20,
            ffn_mult: 4,
            use_acceleration: true,
        }
    }
}

impl ModelConfig {
    pub fn small(d_model: usize, layers: usize, window: usize, horizon: usize) -> Self {
        Self {
            d_model,
            layers,
            window,
            horizon,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("model: {msg}")));
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return bad("sizes must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.window == 0 || self.horizon == 0 {
            return bad("window and horizon must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    /// Embedding input width: 8, or 6 without acceleration.
    pub fn input_dim(&self) -> usize {
        if self.use_acceleration {
            TOKEN_DIM
        } else {
            TOKEN_DIM - 2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub drone_prob: f64,
    pub behavior_probs: [f64; BehaviorClass::COUNT],
    pub intent: f64,
    /// Pixel offsets from the anchor for steps `1..=H`.
    pub trajectory: Vec<Point>,
    /// Final-layer states, `W x d_model`.
    pub hidden_states: Tensor,
}

pub fn sinusoidal_pe(t: usize, d_model: usize) -> Vec<f64> {
    (0..d_model)
        .map(|j| {
            let pair = (j / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Standardized features of one token as fed to the embedding.
pub(crate) fn features(token: &MotionToken, params: &Parameters, cfg: &ModelConfig) -> Vec<f64> {
    let raw = token.to_array();
    let n = &params.normalizer;
    (0..TOKEN_DIM)
        .filter(|&j| cfg.use_acceleration || !(j == 4 || j == 5))
        .map(|j| (raw[j] - n.mean[j]) / n.std[j])
        .collect()
}

pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

fn layer_norm(
    x: &[f64],
    rows: usize,
    d: usize,
    gain: &Tensor,
    bias: &Tensor,
) -> (Vec<f64>, LayerNormCache) {
    let mut out = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let z = (row[j] - mean) * inv;
            xhat[r * d + j] = z;
            out[r * d + j] = z * gain.data[j] + bias.data[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

pub(crate) struct LayerCache {
    pub input: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `heads x W x W`, zero above the diagonal.
    pub probs: Vec<f64>,
    pub context: Vec<f64>,
    pub ln1: LayerNormCache,
    pub y1: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub ln2: LayerNormCache,
}

pub(crate) struct ForwardCache {
    pub features: Vec<f64>,
    pub layers: Vec<LayerCache>,
    /// Final hidden states, `W x d`.
    pub hidden: Vec<f64>,
    pub drone_prob: f64,
    pub behavior_probs: [f64; BehaviorClass::COUNT],
    pub intent: f64,
    /// Raw trajectory-head outputs (before the offset scale), length `2H`.
    pub traj_raw: Vec<f64>,
}

pub fn embed(tokens: &[MotionToken], params: &Parameters, cfg: &ModelConfig) -> Result<Tensor> {
    check_tokens(tokens, cfg)?;
    let (h, _) = embed_inner(tokens, params, cfg);
    Ok(Tensor::from_vec(&[tokens.len(), cfg.d_model], h))
}

fn embed_inner(tokens: &[MotionToken], params: &Parameters, cfg: &ModelConfig) -> (Vec<f64>, Vec<f64>) {
    let d = cfg.d_model;
    let w = tokens.len();
    let inp = cfg.input_dim();
    let feats: Vec<f64> = tokens
        .iter()
        .flat_map(|t| features(t, params, cfg))
        .collect();
    let mut h = vec![0.0; w * d];
    matmul(&feats, &params.weights.embed.data, w, inp, d, &mut h);
    for t in 0..w {
        for (x, p) in h[t * d..(t + 1) * d].iter_mut().zip(sinusoidal_pe(t, d)) {
            *x += p;
        }
    }
    (h, feats)
}

fn block_inner(x: &[f64], layer: &LayerWeights, cfg: &ModelConfig) -> (Vec<f64>, LayerCache) {
    let d = cfg.d_model;
    let w = x.len() / d;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();

    let mut q = vec![0.0; w * d];
    let mut k = vec![0.0; w * d];
    let mut v = vec![0.0; w * d];
    matmul(x, &layer.wq.data, w, d, d, &mut q);
    matmul(x, &layer.wk.data, w, d, d, &mut k);
    matmul(x, &layer.wv.data, w, d, d, &mut v);

    let mut probs = vec![0.0; cfg.heads * w * w];
    let mut context = vec![0.0; w * d];
    for head in 0..cfg.heads {
        let off = head * dk;
        for i in 0..w {
            let qi = &q[i * d + off..i * d + off + dk];
            // keys after position i are masked out entirely
            let mut logits: Vec<f64> = (0..=i)
                .map(|j| tensor::dot(qi, &k[j * d + off..j * d + off + dk]) * scale)
                .collect();
            softmax_in_place(&mut logits);
            let row = &mut probs[(head * w + i) * w..(head * w + i + 1) * w];
            row[..=i].copy_from_slice(&logits);
            let ctx = &mut context[i * d + off..i * d + off + dk];
            for (j, &p) in logits.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + dk];
                for (c, &vv) in ctx.iter_mut().zip(vj) {
                    *c += p * vv;
                }
            }
        }
    }

    let mut attn = vec![0.0; w * d];
    matmul(&context, &layer.wo.data, w, d, d, &mut attn);
    let r1: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
    let (y1, ln1) = layer_norm(&r1, w, d, &layer.ln1_gain, &layer.ln1_bias);

    let f = cfg.ffn_hidden();
    let mut pre = vec![0.0; w * f];
    matmul(&y1, &layer.w1.data, w, d, f, &mut pre);
    for r in 0..w {
        for (p, b) in pre[r * f..(r + 1) * f].iter_mut().zip(&layer.b1.data) {
            *p += b;
        }
    }
    let act: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
    let mut ffn = vec![0.0; w * d];
    matmul(&act, &layer.w2.data, w, f, d, &mut ffn);
    let mut r2 = y1.clone();
    for r in 0..w {
        for j in 0..d {
            r2[r * d + j] += ffn[r * d + j] + layer.b2.data[j];
        }
    }
    let (y2, ln2) = layer_norm(&r2, w, d, &layer.ln2_gain, &layer.ln2_bias);

    let cache = LayerCache {
        input: x.to_vec(),
        q,
        k,
        v,
        probs,
        context,
        ln1,
        y1,
        pre,
        act,
        ln2,
    };
    (y2, cache)
}

fn check_tokens(tokens: &[MotionToken], cfg: &ModelConfig) -> Result<()> {
    if tokens.len() != cfg.window {
        return Err(Error::ShapeMismatch(format!(
            "expected {} tokens, got {}",
            cfg.window,
            tokens.len()
        )));
    }
    if tokens.iter().any(|t| !t.to_array().iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("input tokens"));
    }
    Ok(())
}

fn check_hidden(h: &Tensor, cfg: &ModelConfig) -> Result<()> {
    if h.shape.len() != 2 || h.cols() != cfg.d_model || h.rows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "hidden states must be W x {}, got {:?}",
            cfg.d_model, h.shape
        )));
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("hidden states"));
    }
    Ok(())
}

/// One post-norm attention + feed-forward block.
pub fn block_forward(h: &Tensor, layer: &LayerWeights, cfg: &ModelConfig) -> Result<Tensor> {
    check_hidden(h, cfg)?;
    let (out, _) = block_inner(&h.data, layer, cfg);
    Ok(Tensor::from_vec(&h.shape, out))
}

/// Per-head attention weights of one block, indexed `[head][query][key]`.
pub fn attention_weights(
    h: &Tensor,
    layer: &LayerWeights,
    cfg: &ModelConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_hidden(h, cfg)?;
    let w = h.rows();
    let (_, cache) = block_inner(&h.data, layer, cfg);
    Ok((0..cfg.heads)
        .map(|head| {
            (0..w)
                .map(|i| cache.probs[(head * w + i) * w..(head * w + i + 1) * w].to_vec())
                .collect()
        })
        .collect())
}

pub(crate) fn forward_cached(
    tokens: &[MotionToken],
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<ForwardCache> {
    cfg.validate()?;
    check_tokens(tokens, cfg)?;
    let d = cfg.d_model;
    let w = tokens.len();
    let (mut h, features) = embed_inner(tokens, params, cfg);
    let mut layers = Vec::with_capacity(cfg.layers);
    for layer in &params.weights.layers {
        let (next, cache) = block_inner(&h, layer, cfg);
        layers.push(cache);
        h = next;
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("hidden states"));
    }

    let last = &h[(w - 1) * d..w * d];
    let heads = &params.weights.heads;
    let linear = |wt: &Tensor, b: &Tensor| -> Vec<f64> {
        let n = wt.cols();
        let mut out = vec![0.0; n];
        matmul(last, &wt.data, 1, d, n, &mut out);
        out.iter_mut().zip(&b.data).for_each(|(o, b)| *o += b);
        out
    };
    let drone_prob = sigmoid(linear(&heads.drone_w, &heads.drone_b)[0]);
    let mut behavior = linear(&heads.behavior_w, &heads.behavior_b);
    softmax_in_place(&mut behavior);
    let intent = sigmoid(linear(&heads.intent_w, &heads.intent_b)[0]);
    let traj_raw = linear(&heads.traj_w, &heads.traj_b);

    let mut behavior_probs = [0.0; BehaviorClass::COUNT];
    behavior_probs.copy_from_slice(&behavior);
    Ok(ForwardCache {
        features,
        layers,
        hidden: h,
        drone_prob,
        behavior_probs,
        intent,
        traj_raw,
    })
}

impl ForwardCache {
    pub(crate) fn trajectory(&self, offset_scale: f64) -> Vec<Point> {
        self.traj_raw
            .chunks_exact(2)
            .map(|c| Point::new(c[0] * offset_scale, c[1] * offset_scale))
            .collect()
    }
}

pub fn forward(tokens: &[MotionToken], params: &Parameters, cfg: &ModelConfig) -> Result<ForwardOutput> {
    let cache = forward_cached(tokens, params, cfg)?;
    let trajectory = cache.trajectory(params.normalizer.offset_scale);
    if trajectory.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::NonFinite("trajectory head"));
    }
    Ok(ForwardOutput {
        drone_prob: cache.drone_prob,
        behavior_probs: cache.behavior_probs,
        intent: cache.intent,
        trajectory,
        hidden_states: Tensor::from_vec(&[tokens.len(), cfg.d_model], cache.hidden),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tokens(n: usize, rng: &mut impl Rng) -> Vec<MotionToken> {
        (0..n)
            .map(|_| {
                let mut a = [0.0f64; TOKEN_DIM];
                a.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
                a[6] = a[6].abs() + 0.1;
                a[7] = a[7].abs();
                MotionToken::from_array(a)
            })
            .collect()
    }

    #[test]
    fn positional_encoding() {
        let pe0 = sinusoidal_pe(0, 16);
        for (j, v) in pe0.iter().enumerate() {
            assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        for t in 0..12 {
            assert!(sinusoidal_pe(t, 16).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_ne!(sinusoidal_pe(1, 16), sinusoidal_pe(2, 16));
    }

    #[test]
    fn embedding_is_linear_plus_pe() {
        let cfg = ModelConfig::small(16, 1, 4, 3);
        let mut params = Parameters::init(&cfg, 1);
        params.weights.embed.fill(0.0);
        let zeros = vec![MotionToken::default(); 4];
        let h = embed(&zeros, &params, &cfg).unwrap();
        assert_eq!(h.shape, vec![4, 16]);
        for t in 0..4 {
            assert_eq!(h.row(t), sinusoidal_pe(t, 16).as_slice());
        }

        let params = Parameters::init(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tokens = random_tokens(4, &mut rng);
        let doubled: Vec<_> = tokens
            .iter()
            .map(|t| MotionToken::from_array(t.to_array().map(|v| 2.0 * v)))
            .collect();
        let a = embed(&tokens, &params, &cfg).unwrap();
        let b = embed(&doubled, &params, &cfg).unwrap();
        for t in 0..4 {
            let pe = sinusoidal_pe(t, 16);
            for (j, p) in pe.iter().enumerate() {
                let ra = a.row(t)[j] - p;
                let rb = b.row(t)[j] - p;
                assert!((rb - 2.0 * ra).abs() < 1e-12);
            }
        }
        assert!(matches!(
            embed(&tokens[..3], &params, &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn attention_rows_are_causal_distributions() {
        let cfg = ModelConfig::small(16, 1, 6, 3);
        let params = Parameters::init(&cfg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = embed(&random_tokens(6, &mut rng), &params, &cfg).unwrap();
        let weights = attention_weights(&h, &params.weights.layers[0], &cfg).unwrap();
        for head in &weights {
            assert_eq!(head[0][0], 1.0);
            for (i, row) in head.iter().enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row[i + 1..].iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn block_is_causal() {
        let cfg = ModelConfig::small(16, 1, 6, 3);
        let params = Parameters::init(&cfg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = embed(&random_tokens(6, &mut rng), &params, &cfg).unwrap();
        let base = block_forward(&h, &params.weights.layers[0], &cfg).unwrap();
        for t in 0..6 {
            let mut perturbed = h.clone();
            for j in 0..16 {
                perturbed.data[t * 16 + j] += rng.random_range(-1.0..1.0);
            }
            let out = block_forward(&perturbed, &params.weights.layers[0], &cfg).unwrap();
            for i in 0..t {
                for j in 0..16 {
                    assert!((out.row(i)[j] - base.row(i)[j]).abs() <= 1e-12);
                }
            }
        }
        let mut bad = h.clone();
        bad.data[3] = f64::NAN;
        assert!(matches!(
            block_forward(&bad, &params.weights.layers[0], &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn forward_output_contract() {
        let cfg = ModelConfig::small(32, 2, 12, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let params = Parameters::init(&cfg, seed);
            let tokens = random_tokens(12, &mut rng);
            let out = forward(&tokens, &params, &cfg).unwrap();
            assert!((out.behavior_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(out.drone_prob > 0.0 && out.drone_prob < 1.0);
            assert!(out.intent > 0.0 && out.intent < 1.0);
            assert_eq!(out.trajectory.len(), 20);
            assert_eq!(out.hidden_states.shape, vec![12, 32]);
            assert_eq!(out, forward(&tokens, &params, &cfg).unwrap());
        }
    }

    #[test]
    fn changing_the_last_token_keeps_earlier_states() {
        let cfg = ModelConfig::small(32, 2, 12, 5);
        let params = Parameters::init(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let tokens = random_tokens(12, &mut rng);
        let mut other = tokens[..11].to_vec();
        other.extend(random_tokens(1, &mut rng));
        let a = forward(&tokens, &params, &cfg).unwrap();
        let b = forward(&other, &params, &cfg).unwrap();
        for i in 0..11 {
            assert_eq!(a.hidden_states.row(i), b.hidden_states.row(i));
        }
        assert_ne!(a.hidden_states.row(11), b.hidden_states.row(11));
    }

    #[test]
    fn acceleration_ablation_ignores_acceleration() {
        let cfg = ModelConfig {
            use_acceleration: false,
            ..ModelConfig::small(16, 1, 4, 2)
        };
        let params = Parameters::init(&cfg, 8);
        assert_eq!(params.weights.embed.shape, vec![6, 16]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let tokens = random_tokens(4, &mut rng);
        let mut changed = tokens.clone();
        changed[2].ax += 5.0;
        changed[3].ay -= 3.0;
        assert_eq!(
            forward(&tokens, &params, &cfg).unwrap(),
            forward(&changed, &params, &cfg).unwrap()
        );
    }

    #[test]
    fn config_validation() {
        let cfg = ModelConfig {
            d_model: 30,
            heads: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
