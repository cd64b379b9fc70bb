//! Scores the three extrapolation baselines on a synthetic dataset.

use p2p_core::eval::{evaluate_all, render_report, Fingerprint, ReportFormat};
use p2p_core::kinematics::IsrSettings;
use p2p_core::predictors::{FrameBased, NaiveVelocity, Predictor, TrackingOnly};
use p2p_core::synth::{generate_dataset, SynthSpec};
use p2p_core::tokenizer::{make_dataset, TokenizerConfig};

fn main() -> p2p_core::Result<()> {
    let spec = SynthSpec {
        n_tracks: 60,
        ..Default::default()
    };
    let tracks = generate_dataset(&spec)?;
    let examples = make_dataset(&tracks, &TokenizerConfig::default())?;
    let isr = IsrSettings::default();
    let predictors: [&dyn Predictor; 3] = [&FrameBased, &TrackingOnly, &NaiveVelocity::default()];
    let report = evaluate_all(&predictors, &examples, &isr, Fingerprint::from_settings(&isr))?;
    print!("{}", render_report(&report, ReportFormat::Markdown));
    Ok(())
}
