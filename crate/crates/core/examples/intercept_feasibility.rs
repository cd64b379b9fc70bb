//! Reach times under bang-bang kinematics and the resulting feasibility of
//! a few predicted positions.

use p2p_core::kinematics::{
    critical_distance, intercept_success_rate, reach_time, FeasibilityQuery, InterceptorSpec, ScaleModel,
};
use p2p_core::track::Point;

fn main() -> p2p_core::Result<()> {
    let spec = InterceptorSpec::default();
    let scale = ScaleModel::default();
    println!("v_max {} m/s, a_max {} m/s^2, d_c {:.1} m", spec.v_max, spec.a_max, critical_distance(&spec));
    for d in [0.0, 5.0, 22.5, 50.0, 100.0] {
        println!("reach {d:>6.1} m in {:.3} s", reach_time(&spec, d)?);
    }

    let origin = Point { x: 320.0, y: 256.0 };
    let queries: Vec<FeasibilityQuery> = [10.0, 60.0, 120.0, 240.0]
        .iter()
        .map(|&dx| FeasibilityQuery {
            predicted: Point { x: origin.x + dx, y: origin.y },
            origin,
            horizon_frames: 20,
        })
        .collect();
    for q in &queries {
        let meters = q.predicted.distance(q.origin) * scale.meters_per_pixel;
        let budget = f64::from(q.horizon_frames) / scale.fps;
        println!(
            "{meters:>5.1} m with {budget:.2} s budget: {}",
            if reach_time(&spec, meters)? <= budget { "feasible" } else { "too far" }
        );
    }
    println!("ISR {:.3}", intercept_success_rate(&spec, &scale, &queries)?);
    Ok(())
}
