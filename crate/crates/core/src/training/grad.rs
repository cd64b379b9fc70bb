//! Reverse pass through the transformer, derived by hand layer by layer.

use rayon::prelude::*;

use super::loss::{smooth_l1_grad, total_loss, LossComponents, LossWeights, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::tokenizer::Example;
use crate::track::Point;
use crate::transformer::{
    add_matmul_a_bt, add_matmul_at_b, forward_cached, ForwardCache, LayerCache, LayerWeights,
    ModelConfig, Parameters, Tensor, Weights,
};

/// Examples per parallel work unit. Fixed so the reduction order, and hence
/// every bit of the result, does not depend on the thread count.
const CHUNK: usize = 8;

/// Loss terms of one forward pass against an example's targets.
pub(crate) fn components(cache: &ForwardCache, example: &Example, offset_scale: f64) -> Result<LossComponents> {
    let truth = truth_offsets(example);
    LossComponents::compute(
        example.labels.as_ref(),
        cache.drone_prob,
        &cache.behavior_probs,
        cache.intent,
        &truth,
        &cache.trajectory(offset_scale),
    )
}

fn truth_offsets(example: &Example) -> Vec<Point> {
    example.future.iter().map(|&p| p - example.anchor).collect()
}

/// Mean loss and its gradient over `batch`.
pub fn backward(
    batch: &[&Example],
    params: &Parameters,
    cfg: &ModelConfig,
    weights: &LossWeights,
    multitask: bool,
) -> Result<(f64, Weights)> {
    if batch.is_empty() {
        return Err(Error::EmptySet);
    }
    let partials: Vec<Result<(f64, Weights)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = params.weights.zeros_like();
            let mut loss = 0.0;
            for example in chunk {
                loss += example_backward(example, params, cfg, weights, multitask, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<Weights> = None;
    for part in partials {
        let (loss, g) = part?;
        total += loss;
        match &mut grads {
            Some(acc) => acc.add_assign(&g),
            None => grads = Some(g),
        }
    }
    let mut grads = grads.expect("non-empty batch");
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    if !grads.tensors().iter().all(|t| t.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    Ok((total / n, grads))
}

/// Mean loss over `examples` without gradients.
pub fn mean_loss(
    examples: &[&Example],
    params: &Parameters,
    cfg: &ModelConfig,
    weights: &LossWeights,
    multitask: bool,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptySet);
    }
    let losses: Vec<Result<f64>> = examples
        .par_iter()
        .map(|ex| {
            let cache = forward_cached(&ex.tokens, params, cfg)?;
            let c = components(&cache, ex, params.normalizer.offset_scale)?;
            Ok(total_loss(&c, weights, multitask))
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len() as f64)
}

/// `out += x^T dy` for a row vector `x` and a row vector `dy`, and
/// `dx += dy W^T`.
fn head_backward(w: &Tensor, gw: &mut Tensor, gb: &mut Tensor, x: &[f64], dy: &[f64], dx: &mut [f64]) {
    let n = dy.len();
    add_matmul_at_b(x, dy, 1, x.len(), n, &mut gw.data);
    gb.data.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
    add_matmul_a_bt(dy, &w.data, 1, n, x.len(), dx);
}

fn example_backward(
    example: &Example,
    params: &Parameters,
    cfg: &ModelConfig,
    weights: &LossWeights,
    multitask: bool,
    grads: &mut Weights,
) -> Result<f64> {
    let cache = forward_cached(&example.tokens, params, cfg)?;
    let offset_scale = params.normalizer.offset_scale;
    let comps = components(&cache, example, offset_scale)?;
    let loss = total_loss(&comps, weights, multitask);
    let w = weights.effective(multitask);

    let d = cfg.d_model;
    let win = example.tokens.len();
    let last = &cache.hidden[(win - 1) * d..win * d];
    let heads = &params.weights.heads;
    let g_heads = &mut grads.heads;
    let mut d_last = vec![0.0; d];

    if let Some(labels) = &example.labels {
        let p = cache.drone_prob;
        let y = if labels.is_drone { 1.0 } else { 0.0 };
        let in_range = (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
        let d_logit = if in_range { w.w_d * (p - y) } else { 0.0 };
        head_backward(&heads.drone_w, &mut g_heads.drone_w, &mut g_heads.drone_b, last, &[d_logit], &mut d_last);

        let probs = &cache.behavior_probs;
        let target = labels.behavior.index();
        let d_logits: Vec<f64> = if probs[target] >= PROB_CLAMP {
            probs
                .iter()
                .enumerate()
                .map(|(c, &pc)| w.w_b * (pc - if c == target { 1.0 } else { 0.0 }))
                .collect()
        } else {
            vec![0.0; probs.len()]
        };
        head_backward(&heads.behavior_w, &mut g_heads.behavior_w, &mut g_heads.behavior_b, last, &d_logits, &mut d_last);

        let q = cache.intent;
        let d_logit = w.w_i * 2.0 * (q - labels.intent) * q * (1.0 - q);
        head_backward(&heads.intent_w, &mut g_heads.intent_w, &mut g_heads.intent_b, last, &[d_logit], &mut d_last);
    }

    let truth = truth_offsets(example);
    let h = truth.len() as f64;
    let d_traj: Vec<f64> = cache
        .traj_raw
        .chunks_exact(2)
        .zip(&truth)
        .flat_map(|(raw, t)| {
            let ex = t.x - raw[0] * offset_scale;
            let ey = t.y - raw[1] * offset_scale;
            let k = -w.w_t * offset_scale / h;
            [k * smooth_l1_grad(ex), k * smooth_l1_grad(ey)]
        })
        .collect();
    head_backward(&heads.traj_w, &mut g_heads.traj_w, &mut g_heads.traj_b, last, &d_traj, &mut d_last);

    let mut dh = vec![0.0; win * d];
    dh[(win - 1) * d..].copy_from_slice(&d_last);
    for (layer, (lc, g)) in params
        .weights
        .layers
        .iter()
        .zip(cache.layers.iter().zip(grads.layers.iter_mut()))
        .rev()
    {
        dh = layer_backward(lc, layer, g, &dh, cfg);
    }
    add_matmul_at_b(&cache.features, &dh, win, cfg.input_dim(), d, &mut grads.embed.data);
    Ok(loss)
}

fn layer_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    gain: &Tensor,
    g_gain: &mut Tensor,
    g_bias: &mut Tensor,
    dy: &[f64],
    d: usize,
) -> Vec<f64> {
    let rows = inv_std.len();
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xr = &xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        for j in 0..d {
            g_gain.data[j] += dyr[j] * xr[j];
            g_bias.data[j] += dyr[j];
            dxhat[j] = dyr[j] * gain.data[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[r * d + j] = inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
        }
    }
    dx
}

fn add_column_sums(m: &[f64], cols: usize, out: &mut Tensor) {
    for row in m.chunks_exact(cols) {
        out.data.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

fn layer_backward(
    c: &LayerCache,
    layer: &LayerWeights,
    g: &mut LayerWeights,
    dy: &[f64],
    cfg: &ModelConfig,
) -> Vec<f64> {
    let d = cfg.d_model;
    let w = dy.len() / d;
    let f = cfg.ffn_hidden();
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();

    // y2 = LN(y1 + relu(y1 W1 + b1) W2 + b2)
    let dr2 = layer_norm_backward(&c.ln2.xhat, &c.ln2.inv_std, &layer.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias, dy, d);
    let mut dy1 = dr2.clone();
    add_matmul_at_b(&c.act, &dr2, w, f, d, &mut g.w2.data);
    add_column_sums(&dr2, d, &mut g.b2);
    let mut dpre = vec![0.0; w * f];
    add_matmul_a_bt(&dr2, &layer.w2.data, w, d, f, &mut dpre);
    for (dp, &p) in dpre.iter_mut().zip(&c.pre) {
        if p <= 0.0 {
            *dp = 0.0;
        }
    }
    add_matmul_at_b(&c.y1, &dpre, w, d, f, &mut g.w1.data);
    add_column_sums(&dpre, f, &mut g.b1);
    add_matmul_a_bt(&dpre, &layer.w1.data, w, f, d, &mut dy1);

    // y1 = LN(x + context Wo)
    let dr1 = layer_norm_backward(&c.ln1.xhat, &c.ln1.inv_std, &layer.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias, &dy1, d);
    let mut dx = dr1.clone();
    add_matmul_at_b(&c.context, &dr1, w, d, d, &mut g.wo.data);
    let mut dctx = vec![0.0; w * d];
    add_matmul_a_bt(&dr1, &layer.wo.data, w, d, d, &mut dctx);

    let mut dq = vec![0.0; w * d];
    let mut dkey = vec![0.0; w * d];
    let mut dv = vec![0.0; w * d];
    let mut d_probs = vec![0.0; w];
    for head in 0..cfg.heads {
        let off = head * dk;
        for i in 0..w {
            let probs = &c.probs[(head * w + i) * w..(head * w + i) * w + i + 1];
            let dci = &dctx[i * d + off..i * d + off + dk];
            for j in 0..=i {
                let vj = &c.v[j * d + off..j * d + off + dk];
                d_probs[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                let dvj = &mut dv[j * d + off..j * d + off + dk];
                for (dvv, &dc) in dvj.iter_mut().zip(dci) {
                    *dvv += probs[j] * dc;
                }
            }
            let weighted: f64 = (0..=i).map(|j| probs[j] * d_probs[j]).sum();
            for j in 0..=i {
                let ds = probs[j] * (d_probs[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..dk {
                    dq[i * d + off + t] += ds * c.k[j * d + off + t];
                    dkey[j * d + off + t] += ds * c.q[i * d + off + t];
                }
            }
        }
    }
    add_matmul_at_b(&c.input, &dq, w, d, d, &mut g.wq.data);
    add_matmul_at_b(&c.input, &dkey, w, d, d, &mut g.wk.data);
    add_matmul_at_b(&c.input, &dv, w, d, d, &mut g.wv.data);
    add_matmul_a_bt(&dq, &layer.wq.data, w, d, d, &mut dx);
    add_matmul_a_bt(&dkey, &layer.wk.data, w, d, d, &mut dx);
    add_matmul_a_bt(&dv, &layer.wv.data, w, d, d, &mut dx);
    dx
}
