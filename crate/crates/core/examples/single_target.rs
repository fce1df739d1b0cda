//! Novel-view synthesis for one target pose.
//!
//! Generates the view at azimuth 150 deg from a single front view, stepping
//! 10 deg at a time, and writes every intermediate view plus the
//! ground-truth renderings as PGM files.
//!
//! ```bash
//! cargo run --example single_target -- out/single
//! ```

use std::path::PathBuf;

use viewfusion::conditioning::{plan_single_target, Pose, PoseOffset, DEFAULT_MAX_STEP};
use viewfusion::metrics::decode_mode;
use viewfusion::numerics::{psnr, UNIT_RANGE_PEAK};
use viewfusion::pnm::write_pnm;
use viewfusion::samplers::{GivenView, Sampler, SamplerConfig};
use viewfusion::schedule::NoiseSchedule;
use viewfusion::toyworld::ToyWorld;

fn main() -> viewfusion::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "viewfusion-examples/single".into()));
    std::fs::create_dir_all(&out)?;

    let world = ToyWorld::default_world();
    let sampler = Sampler::new(NoiseSchedule::linear(1000, 1e-4, 0.02)?, SamplerConfig::default())?;
    let front = Pose::default();
    let given = [GivenView {
        image: world.render(2, &front)?,
        pose: front,
    }];
    let target = PoseOffset::azimuth_degrees(150.0);
    let trajectory = plan_single_target(target, DEFAULT_MAX_STEP)?;

    for seed in 0..4 {
        let trace = sampler.run_autoregressive(&world, &given, &trajectory, seed)?;
        let last = trace.stages.last().expect("non-empty trajectory");
        let pose = front.apply(&target);
        let mode = decode_mode(&world, &last.frame, &pose)?;
        println!(
            "seed {seed}: {} stages, final view decodes to mode {mode}, PSNR vs that mode {:.2} dB",
            trace.stages.len(),
            psnr(&last.frame, &world.render(mode, &pose)?, UNIT_RANGE_PEAK)?
        );
        write_pnm(&out.join(format!("seed{seed}_final.pgm")), &last.frame)?;
    }
    for m in 1..=world.modes() {
        write_pnm(&out.join(format!("truth_mode{m}.pgm")), &world.render(m, &front.apply(&target))?)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
