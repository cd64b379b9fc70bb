//! Compares backpropagated gradients with central finite differences on a
//! tiny model.

use p2p_core::synth::{generate_dataset, SynthSpec};
use p2p_core::tokenizer::{make_dataset, Example, TokenizerConfig};
use p2p_core::training::{backward, fit_normalizer, mean_loss, LossWeights};
use p2p_core::transformer::{ModelConfig, Parameters};

fn main() -> p2p_core::Result<()> {
    let tok = TokenizerConfig::default();
    let tracks = generate_dataset(&SynthSpec {
        n_tracks: 5,
        ..Default::default()
    })?;
    let examples = make_dataset(&tracks, &tok)?;
    let batch: Vec<&Example> = examples.iter().step_by(7).take(3).collect();
    let cfg = ModelConfig::small(8, 1, tok.window, tok.horizon);
    let mut params = Parameters::init(&cfg, 2);
    params.normalizer = fit_normalizer(&batch);
    let weights = LossWeights::default();
    let (loss, grads) = backward(&batch, &params, &cfg, &weights, true)?;
    println!("loss {loss:.6}");

    let h = 1e-5;
    for (ti, name) in params.weights.names().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..params.weights.tensors()[ti].len() {
            let mut p = params.clone();
            p.weights.tensors_mut()[ti].data[i] += h;
            let up = mean_loss(&batch, &p, &cfg, &weights, true)?;
            p.weights.tensors_mut()[ti].data[i] -= 2.0 * h;
            let down = mean_loss(&batch, &p, &cfg, &weights, true)?;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors()[ti].data[i];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
        }
        println!("{name:<16} max relative error {worst:.2e}");
    }
    Ok(())
}
