//! Trains a small model on synthetic tracks and compares it to the naive
//! baseline on the validation split.

use p2p_core::eval::{evaluate, ReportRow};
use p2p_core::kinematics::IsrSettings;
use p2p_core::predictors::{ModelPredictor, NaiveVelocity};
use p2p_core::synth::{generate_dataset, SynthSpec};
use p2p_core::tokenizer::{make_dataset, TokenizerConfig};
use p2p_core::training::{train, TrainConfig};
use p2p_core::transformer::ModelConfig;

fn main() -> p2p_core::Result<()> {
    let tok = TokenizerConfig::default();
    let tracks = generate_dataset(&SynthSpec {
        n_tracks: 80,
        ..Default::default()
    })?;
    let examples = make_dataset(&tracks, &tok)?;
    let model_cfg = ModelConfig::small(32, 2, tok.window, tok.horizon);
    let train_cfg = TrainConfig {
        epochs: 8,
        batch_size: 64,
        ..Default::default()
    };
    let isr = IsrSettings::default();
    let outcome = train(&examples, &model_cfg, &train_cfg, &isr)?;
    for m in &outcome.history {
        println!(
            "epoch {:>2} train {:.4} val {:.4} ade {:.2} isr {:.3} acc {:.3}",
            m.epoch, m.train_loss, m.val_loss, m.val_ade, m.val_isr, m.val_acc
        );
    }

    let val: Vec<_> = outcome.val_indices.iter().map(|&i| examples[i].clone()).collect();
    let model = ModelPredictor::new(model_cfg, outcome.best);
    let show = |r: ReportRow| {
        println!("{:<6} ADE {:>6.2} FDE {:>6.2} ISR {:.3} Acc {:.3}", r.method, r.ade, r.fde, r.isr, r.acc)
    };
    show(evaluate(&NaiveVelocity::default(), &val, &isr)?);
    show(evaluate(&model, &val, &isr)?);
    Ok(())
}
