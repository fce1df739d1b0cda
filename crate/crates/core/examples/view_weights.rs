//! Weights assigned to a view set as generation proceeds around an object.
//!
//! ```bash
//! cargo run --example view_weights
//! ```

use viewfusion::conditioning::{compute_weights, Pose, WeightParams};

fn main() -> viewfusion::error::Result<()> {
    let params = WeightParams::default();
    let given = [Pose::from_degrees(0.0, 0.0, 0.0)];
    let generated: Vec<Pose> = [30.0, -30.0, 60.0, -60.0].iter().map(|&a| Pose::from_degrees(a, 0.0, 0.0)).collect();
    let target = Pose::from_degrees(90.0, 0.0, 0.0);

    let dg: Vec<f64> = given.iter().map(|p| p.offset_from(&target).delta()).collect();
    let dn: Vec<f64> = generated.iter().map(|p| p.offset_from(&target).delta()).collect();
    let w = compute_weights(&dg, &dn, &params)?;

    println!("target azimuth 90 deg, tau_c = {}, tau_g = {}", params.tau_c, params.tau_g);
    println!("{:>10} {:>9} {:>8} {:>8}", "view", "azimuth", "delta", "weight");
    for (i, (pose, d)) in given.iter().chain(&generated).zip(dg.iter().chain(&dn)).enumerate() {
        let kind = if i < given.len() { "given" } else { "generated" };
        println!("{kind:>10} {:>9.1} {d:>8.4} {:>8.4}", pose.azimuth.to_degrees(), w[i]);
    }
    println!("sum = {:.15}", w.iter().sum::<f64>());

    // Colder generated-view temperature concentrates mass on the nearest view.
    let cold = compute_weights(&dg, &dn, &WeightParams::new(0.5, 0.05)?)?;
    println!("tau_g = 0.05: {:?}", cold.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
    Ok(())
}
