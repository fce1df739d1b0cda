//! The toy world's exact noise predictor against a numerical score.
//!
//! For a Gaussian-mixture data distribution the Bayes-optimal noise
//! prediction is `-sqrt(1 - abar_t) * grad log q_t(x_t)`. This example
//! checks that identity with central differences at a few timesteps.
//!
//! ```bash
//! cargo run --example score_oracle
//! ```

use viewfusion::conditioning::Pose;
use viewfusion::numerics::{log_sum_exp, sample_standard_normal, ImageGrid, SeededRng};
use viewfusion::schedule::NoiseSchedule;
use viewfusion::toyworld::ToyWorld;

fn main() -> viewfusion::error::Result<()> {
    let world = ToyWorld::default_world();
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let target = Pose::from_degrees(160.0, 5.0, 0.1);
    let mut rng = SeededRng::new(0, 0);

    for t in [1, 50, 250, 600, 1000] {
        let ab = sched.alpha_bar(t);
        let (mode, x0) = world.oracle_sample_view(&[], &target, &mut rng)?;
        let x_t = sched.forward_diffuse(&x0, t, &sample_standard_normal(&mut rng, x0.dims()))?;

        let s2 = ab * world.sigma_data().powi(2) + 1.0 - ab;
        let means: Vec<ImageGrid> = (1..=world.modes())
            .map(|m| world.render(m, &target).map(|r| r.scaled(ab.sqrt())))
            .collect::<Result<_, _>>()?;
        let log_q = |x: &ImageGrid| {
            let terms: Vec<f64> = means
                .iter()
                .zip(world.prior())
                .map(|(mu, r)| r.ln() - x.squared_distance(mu) / (2.0 * s2))
                .collect();
            log_sum_exp(&terms)
        };
        let h = 1e-4 * s2.sqrt();
        let mut x = x_t.clone();
        let mut grad = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let v = x.as_slice()[i];
            x.as_mut_slice()[i] = v + h;
            let up = log_q(&x);
            x.as_mut_slice()[i] = v - h;
            let down = log_q(&x);
            x.as_mut_slice()[i] = v;
            grad.push((up - down) / (2.0 * h));
        }
        let numeric = ImageGrid::from_vec(x_t.dims(), grad)?.scaled(-(1.0 - ab).sqrt());
        let exact = world.optimal_eps(&x_t, t, &sched, None, &target)?;
        println!(
            "t = {t:>4} (drawn from mode {mode}): |eps| = {:>7.3}, relative error = {:.2e}",
            exact.l2_norm(),
            exact.l2_distance(&numeric) / numeric.l2_norm()
        );
    }
    Ok(())
}
