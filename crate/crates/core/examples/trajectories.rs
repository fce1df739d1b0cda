//! Single-target and spin trajectories.
//!
//! ```bash
//! cargo run --example trajectories
//! ```

use viewfusion::conditioning::{plan_single_target, plan_spin, PoseOffset, DEFAULT_MAX_STEP};

fn main() -> viewfusion::error::Result<()> {
    let target = PoseOffset::new(95f64.to_radians(), 30f64.to_radians(), 0.0);
    let single = plan_single_target(target, DEFAULT_MAX_STEP)?;
    println!("single target (95, 30) with 10 deg steps: {} stages", single.len());
    for w in &single.waypoints {
        println!("  az {:>7.2}  el {:>6.2}", w.d_azimuth.to_degrees(), w.d_elevation.to_degrees());
    }

    let spin = plan_spin(22.5f64.to_radians(), 16)?;
    let order: Vec<String> = spin.waypoints.iter().map(|w| format!("{}", w.d_azimuth.to_degrees())).collect();
    println!("16-view spin generation order: {}", order.join(", "));
    let playback: Vec<String> = spin
        .playback_order()
        .into_iter()
        .map(|i| format!("{}", spin.waypoints[i].d_azimuth.to_degrees().rem_euclid(360.0)))
        .collect();
    println!("playback order: {}", playback.join(", "));

    let degenerate = plan_single_target(PoseOffset::identity(), DEFAULT_MAX_STEP)?;
    println!("identity target: {} stages, degenerate = {}", degenerate.len(), degenerate.degenerate);
    Ok(())
}
