//! Saves a model to a checkpoint, loads it back and predicts the next
//! positions of a track.

use p2p_core::predictors::{ModelPredictor, Predictor};
use p2p_core::synth::{generate_track, SynthSpec};
use p2p_core::tokenizer::{final_window, TokenizerConfig};
use p2p_core::track::BehaviorClass;
use p2p_core::transformer::{load_checkpoint, save_checkpoint, ModelConfig, Parameters};

fn main() -> p2p_core::Result<()> {
    let tok = TokenizerConfig::default();
    let cfg = ModelConfig::small(32, 1, tok.window, tok.horizon);
    let params = Parameters::init(&cfg, 1);
    let path = std::env::temp_dir().join("p2p_example.p2pm");
    save_checkpoint(&path, &cfg, &params)?;
    let (cfg, params) = load_checkpoint(&path)?;
    println!("loaded {} parameters from {}", params.weights.param_count(), path.display());

    let track = generate_track(BehaviorClass::Approach, &SynthSpec::default(), 3)?;
    let example = final_window(&track, &tok)?;
    let prediction = ModelPredictor::new(cfg, params).predict(&example)?;
    println!(
        "drone {:.3}, behavior {}, intent {:.3}",
        prediction.drone_prob,
        prediction.behavior().name(),
        prediction.intent
    );
    for (tau, p) in prediction.positions.iter().enumerate().step_by(5) {
        println!("t+{:<2} ({:.1}, {:.1})", tau + 1, p.x, p.y);
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}
