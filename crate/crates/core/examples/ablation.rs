//! All auto-regressive variants on a 24-view spin.
//!
//! Uses a world whose eight modes are told apart by three markings, each
//! visible only from part of the circle. Conditioning on the last view
//! alone forgets markings that have rotated out of sight.
//!
//! ```bash
//! cargo run --release --example ablation -- 20
//! ```

use std::f64::consts::TAU;

use viewfusion::cli::compare_variants;
use viewfusion::conditioning::{plan_spin, Pose};
use viewfusion::config::Experiment;
use viewfusion::samplers::{GivenView, Sampler, SamplerConfig, Variant};
use viewfusion::schedule::NoiseSchedule;
use viewfusion::toyworld::{RendererKind, ToyWorld, ToyWorldParams};

fn main() -> viewfusion::error::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let world = ToyWorld::new(ToyWorldParams {
        modes: 8,
        renderer: RendererKind::Sectors { count: 3 },
        ..Default::default()
    })?;
    let front = Pose::default();
    let experiment = Experiment {
        given: vec![GivenView {
            image: world.render(6, &front)?,
            pose: front,
        }],
        sampler: Sampler::new(NoiseSchedule::linear(1000, 1e-4, 0.02)?, SamplerConfig::default())?,
        trajectory: plan_spin(TAU / 24.0, 24)?,
        truth_mode: None,
        world,
    };
    let seeds: Vec<u64> = (0..seeds).collect();
    let table = compare_variants(&experiment, &Variant::ALL, &seeds)?;
    print!("{}", table.to_table());
    Ok(())
}
