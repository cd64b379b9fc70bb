//! Converts an external annotation file into a canonical track and labels
//! it with the heuristic labeler.

use p2p_core::ingest::{adapt_value, heuristic_label, write_track, ExternalMapping, LabelerConfig};

fn main() -> p2p_core::Result<()> {
    // top-left boxes with a visibility flag, one dropped frame
    let rects: Vec<[f64; 4]> = (0..60)
        .map(|i| {
            let a = f64::from(i) * 0.12;
            [300.0 + 60.0 * a.cos(), 240.0 + 60.0 * a.sin(), 12.0, 9.0]
        })
        .collect();
    let exist: Vec<u8> = (0..60).map(|i| u8::from(i != 30)).collect();
    let raw = serde_json::json!({ "exist": exist, "gt_rect": rects });

    let track = adapt_value(&raw, "circling", &ExternalMapping::default(), 5)?;
    let labels = heuristic_label(&track, &LabelerConfig::default());
    println!(
        "{} frames, behavior {}, intent {:.3}",
        track.len(),
        labels.behavior.name(),
        labels.intent
    );
    let text = write_track(&track);
    for line in text.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
