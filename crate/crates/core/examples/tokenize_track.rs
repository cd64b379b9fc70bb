//! Turns one synthetic track into motion tokens and sliding-window examples.

use p2p_core::synth::{generate_track, SynthSpec};
use p2p_core::tokenizer::{example_count, make_examples, tokenize, TokenizerConfig};
use p2p_core::track::BehaviorClass;

fn main() -> p2p_core::Result<()> {
    let spec = SynthSpec::default();
    let track = generate_track(BehaviorClass::Evade, &spec, 7)?;
    let cfg = TokenizerConfig::default();
    let tokens = tokenize(&track, &cfg)?;
    println!("{} frames -> {} tokens", track.len(), tokens.len());
    println!("{:>8} {:>8} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6}", "x", "y", "vx", "vy", "ax", "ay", "s", "sigma");
    for t in tokens.iter().skip(10).take(5) {
        println!(
            "{:>8.2} {:>8.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>6.2} {:>6.2}",
            t.x, t.y, t.vx, t.vy, t.ax, t.ay, t.s, t.sigma
        );
    }

    let examples = make_examples(&track, &cfg)?;
    println!(
        "{} examples (expected {}), window {}, horizon {}, step {}",
        examples.len(),
        example_count(track.len(), cfg.window, cfg.horizon, cfg.step),
        cfg.window,
        cfg.horizon,
        cfg.step
    );
    let first = &examples[0];
    println!("first anchor ({:.1}, {:.1}) at frame {}", first.anchor.x, first.anchor.y, first.t_index);
    Ok(())
}
