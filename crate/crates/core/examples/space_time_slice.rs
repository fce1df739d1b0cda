//! Space-time slices of a generated spin.
//!
//! Stacks one scanline from each frame in azimuth order. Consistent views
//! give a continuous band; independent views break it wherever the object
//! changes between frames.
//!
//! ```bash
//! cargo run --release --example space_time_slice -- out/slices
//! ```

use std::f64::consts::TAU;
use std::path::PathBuf;

use viewfusion::conditioning::{plan_spin, Pose};
use viewfusion::metrics::spacetime_slice;
use viewfusion::pnm::write_pnm;
use viewfusion::samplers::{GivenView, Sampler, SamplerConfig, Variant};
use viewfusion::schedule::NoiseSchedule;
use viewfusion::toyworld::{ToyWorld, ToyWorldParams};

fn main() -> viewfusion::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "viewfusion-examples/slices".into()));
    std::fs::create_dir_all(&out)?;
    let world = ToyWorld::new(ToyWorldParams {
        height: 32,
        width: 32,
        ..Default::default()
    })?;
    let front = Pose::default();
    let given = [GivenView {
        image: world.render(1, &front)?,
        pose: front,
    }];
    let trajectory = plan_spin(TAU / 36.0, 36)?;

    for variant in [Variant::Direct, Variant::InterpolatedDenoising] {
        let sampler = Sampler::new(
            NoiseSchedule::linear(1000, 1e-4, 0.02)?,
            SamplerConfig {
                variant,
                ..Default::default()
            },
        )?;
        let trace = sampler.run_variant(&world, &given, &trajectory, 3)?;
        let frames: Vec<_> = trace.playback().into_iter().map(|(_, f)| f).collect();
        for row in [12, 16] {
            let slice = spacetime_slice(&frames, row)?;
            let path = out.join(format!("{variant}_row{row}.pgm"));
            write_pnm(&path, &slice)?;
            println!("{}: {}x{} slice", path.display(), slice.dims().height, slice.dims().width);
        }
    }
    Ok(())
}
