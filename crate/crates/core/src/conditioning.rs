//! Pose arithmetic, view-distance weights and generation trajectories.
//!
//! Every view that conditions a generation stage gets a weight derived from
//! its pose offset to the target. Given (user-supplied) views decay with
//! temperature `tau_c` and keep a floor of influence even for opposite
//! targets; generated views share the remaining mass through a normalized
//! exponential with temperature `tau_g`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default temperature for given condition views.
pub const DEFAULT_TAU_C: f64 = 0.5;
/// Default temperature for generated views.
pub const DEFAULT_TAU_G: f64 = 1.0;
/// Default maximum azimuth/elevation offset per generation step (10 degrees).
pub const DEFAULT_MAX_STEP: f64 = 10.0 * PI / 180.0;

const ANGLE_EPS: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let x = angle.rem_euclid(TAU);
    if x > PI {
        x - TAU
    } else {
        x
    }
}

/// Absolute camera pose: azimuth and elevation in radians, distance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl Pose {
    pub fn new(azimuth: f64, elevation: f64, distance: f64) -> Self {
        Self {
            azimuth,
            elevation,
            distance,
        }
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64, distance: f64) -> Self {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians(), distance)
    }

    /// Offset of `self` as seen from `target`: `self - target`, azimuth wrapped.
    pub fn offset_from(&self, target: &Pose) -> PoseOffset {
        PoseOffset::new(
            self.azimuth - target.azimuth,
            self.elevation - target.elevation,
            self.distance - target.distance,
        )
    }

    pub fn apply(&self, offset: &PoseOffset) -> Pose {
        Pose::new(
            wrap_angle(self.azimuth + offset.d_azimuth),
            self.elevation + offset.d_elevation,
            self.distance + offset.d_distance,
        )
    }
}

/// Relative camera offset between a view and a target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseOffset {
    pub d_azimuth: f64,
    pub d_elevation: f64,
    pub d_distance: f64,
}

impl PoseOffset {
    pub fn new(d_azimuth: f64, d_elevation: f64, d_distance: f64) -> Self {
        Self {
            d_azimuth: wrap_angle(d_azimuth),
            d_elevation,
            d_distance,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn azimuth_degrees(degrees: f64) -> Self {
        Self::new(degrees.to_radians(), 0.0, 0.0)
    }

    /// `|da|/pi + |de|/pi + |dd|`.
    pub fn delta(&self) -> f64 {
        self.d_azimuth.abs() / PI + self.d_elevation.abs() / PI + self.d_distance.abs()
    }

    pub fn is_identity(&self) -> bool {
        self.delta() == 0.0
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.d_azimuth, -self.d_elevation, -self.d_distance)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.d_azimuth * factor,
            self.d_elevation * factor,
            self.d_distance * factor,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightParams {
    pub tau_c: f64,
    pub tau_g: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            tau_c: DEFAULT_TAU_C,
            tau_g: DEFAULT_TAU_G,
        }
    }
}

impl WeightParams {
    pub fn new(tau_c: f64, tau_g: f64) -> Result<Self> {
        let params = Self { tau_c, tau_g };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0 && self.tau_c.is_finite()) {
            return Err(invalid("tau_c", format!("must be positive, got {}", self.tau_c)));
        }
        if !(self.tau_g > 0.0 && self.tau_g.is_finite()) {
            return Err(invalid("tau_g", format!("must be positive, got {}", self.tau_g)));
        }
        Ok(())
    }
}

/// Normalized exponential `e^{-d_n / tau} / sum_m e^{-d_m / tau}`, shifted by the
/// smallest distance so tiny temperatures do not underflow.
fn decay_shares(deltas: &[f64], tau: f64) -> Vec<f64> {
    let min = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = deltas.iter().map(|d| (-(d - min) / tau).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

fn check_deltas(name: &'static str, deltas: &[f64]) -> Result<()> {
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(invalid(name, format!("view distances must be finite and >= 0, got {d}")));
    }
    Ok(())
}

/// Weights for `k` given views followed by the generated views, summing to 1.
///
/// Given view `n` receives `e^{-d_n/tau_c} * p_n` with `p` the normalized
/// exponential over the given views; generated views split the remaining
/// mass by a normalized exponential with temperature `tau_g`. Without
/// generated views the given weights are renormalized.
pub fn compute_weights(given: &[f64], generated: &[f64], params: &WeightParams) -> Result<Vec<f64>> {
    if given.is_empty() {
        return Err(invalid("given", "at least one given view is required"));
    }
    params.validate()?;
    check_deltas("given", given)?;
    check_deltas("generated", generated)?;

    let shares = decay_shares(given, params.tau_c);
    let mut weights: Vec<f64> = given
        .iter()
        .zip(&shares)
        .map(|(d, p)| (-d / params.tau_c).exp() * p)
        .collect();
    let given_mass: f64 = weights.iter().sum();

    if generated.is_empty() {
        weights.iter_mut().for_each(|w| *w /= given_mass);
        return Ok(weights);
    }
    let rest = 1.0 - given_mass;
    weights.extend(decay_shares(generated, params.tau_g).into_iter().map(|q| rest * q));
    Ok(weights)
}

/// Weights for exactly one given view: `e^{-d_1/tau_c}` for the given view and
/// `(1 - w_1)`-scaled normalized exponentials for the generated views.
pub fn single_view_weights(given: f64, generated: &[f64], params: &WeightParams) -> Result<Vec<f64>> {
    params.validate()?;
    check_deltas("given", &[given])?;
    check_deltas("generated", generated)?;
    if generated.is_empty() {
        return Ok(vec![1.0]);
    }
    let first = (-given / params.tau_c).exp();
    let mut weights = vec![first];
    let denom: f64 = generated.iter().map(|d| (-d / params.tau_g).exp()).sum();
    weights.extend(
        generated
            .iter()
            .map(|d| (1.0 - first) * (-d / params.tau_g).exp() / denom),
    );
    Ok(weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryMode {
    SingleTarget,
    Spin,
}

/// Ordered generation targets, as offsets from the reference (first given) view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: TrajectoryMode,
    pub waypoints: Vec<PoseOffset>,
    /// Set when the requested target coincides with the reference view.
    #[serde(default)]
    pub degenerate: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Waypoint indices sorted by azimuth in `(-pi, pi]`, the order in which a
    /// spin video is played back.
    pub fn playback_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.waypoints.len()).collect();
        if self.mode == TrajectoryMode::Spin {
            let key = |i: usize| self.waypoints[i].d_azimuth.rem_euclid(TAU);
            idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
        }
        idx
    }
}

fn ceil_steps(offset: f64, step: f64) -> usize {
    let ratio = offset.abs() / step;
    (ratio - ANGLE_EPS).ceil().max(0.0) as usize
}

/// Equally spaced waypoints from the reference view to `target`, with the step
/// count `S = max(ceil(|da|/delta), ceil(|de|/delta))`.
pub fn plan_single_target(target: PoseOffset, max_step: f64) -> Result<Trajectory> {
    if !(max_step > 0.0 && max_step.is_finite()) {
        return Err(invalid("delta", format!("must be positive, got {max_step}")));
    }
    if target.is_identity() {
        return Ok(Trajectory {
            mode: TrajectoryMode::SingleTarget,
            waypoints: Vec::new(),
            degenerate: true,
        });
    }
    // A pure distance change still needs one stage.
    let steps = ceil_steps(target.d_azimuth, max_step)
        .max(ceil_steps(target.d_elevation, max_step))
        .max(1);
    let waypoints = (1..=steps)
        .map(|n| target.scaled(n as f64 / steps as f64))
        .collect();
    Ok(Trajectory {
        mode: TrajectoryMode::SingleTarget,
        waypoints,
        degenerate: false,
    })
}

/// Azimuth-only skip trajectory `delta, -delta, 2 delta, -2 delta, ...` ending
/// opposite the reference view when `n_views` is even.
pub fn plan_spin(delta: f64, n_views: usize) -> Result<Trajectory> {
    if n_views < 2 {
        return Err(invalid("n_views", format!("need at least 2 views, got {n_views}")));
    }
    if !(delta > 0.0) || (delta * n_views as f64 - TAU).abs() > 1e-6 {
        return Err(invalid(
            "delta",
            format!(
                "{n_views} views require delta = 360/{n_views} degrees, got {} degrees",
                delta.to_degrees()
            ),
        ));
    }
    let mut waypoints = Vec::with_capacity(n_views - 1);
    for m in 1..n_views {
        let a = m as f64 * delta;
        if (a - PI).abs() < 1e-6 {
            waypoints.push(PoseOffset::new(PI, 0.0, 0.0));
            break;
        }
        if a > PI {
            break;
        }
        waypoints.push(PoseOffset::new(a, 0.0, 0.0));
        waypoints.push(PoseOffset::new(-a, 0.0, 0.0));
    }
    debug_assert_eq!(waypoints.len(), n_views - 1);
    Ok(Trajectory {
        mode: TrajectoryMode::Spin,
        waypoints,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(deg(270.0)) - deg(-90.0)).abs() < 1e-12);
        assert!((wrap_angle(deg(-190.0)) - deg(170.0)).abs() < 1e-12);
    }

    #[test]
    fn delta_metric() {
        let p = PoseOffset::new(deg(90.0), deg(-45.0), 0.25);
        assert!((p.delta() - (0.5 + 0.25 + 0.25)).abs() < 1e-12);
        assert_eq!(PoseOffset::identity().delta(), 0.0);
        assert!(PoseOffset::identity().is_identity());
        let opposite = PoseOffset::azimuth_degrees(180.0);
        assert!((opposite.delta() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_given_view_gets_all_mass() {
        let w = compute_weights(&[0.0], &[], &WeightParams::default()).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn one_given_one_generated() {
        let w = compute_weights(&[0.25], &[0.4], &WeightParams::default()).unwrap();
        assert!((w[0] - (-0.5f64).exp()).abs() < 1e-12);
        assert!((w[0] - 0.60653).abs() < 1e-5);
        assert!((w[1] - 0.39347).abs() < 1e-5);
    }

    #[test]
    fn generated_ratio_and_mass() {
        let w = compute_weights(&[0.25], &[0.1, 0.3], &WeightParams::default()).unwrap();
        assert!((w[1] / w[2] - 0.2f64.exp()).abs() < 1e-12);
        assert!((w[1] / w[2] - 1.2214).abs() < 1e-4);
        assert!((w[1] + w[2] - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn general_form_reduces_to_single_view_form() {
        let params = WeightParams::new(0.33, 0.5).unwrap();
        for (given, generated) in [
            (0.0, vec![0.1]),
            (0.7, vec![0.2, 0.9, 0.3]),
            (1.0, vec![0.0, 1.0]),
        ] {
            let a = compute_weights(&[given], &generated, &params).unwrap();
            let b = single_view_weights(given, &generated, &params).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn weight_errors() {
        let p = WeightParams::default();
        assert!(compute_weights(&[], &[0.1], &p).is_err());
        assert!(compute_weights(&[-0.1], &[], &p).is_err());
        assert!(compute_weights(&[0.1], &[f64::NAN], &p).is_err());
        assert!(WeightParams::new(0.0, 1.0).is_err());
        assert!(WeightParams::new(0.5, -1.0).is_err());
    }

    #[test]
    fn step_count_formula() {
        let t = plan_single_target(PoseOffset::new(deg(95.0), deg(30.0), 0.0), deg(10.0)).unwrap();
        assert_eq!(t.len(), 10);
        let last = t.waypoints.last().unwrap();
        assert!((last.d_azimuth - deg(95.0)).abs() < 1e-12);
        assert!((last.d_elevation - deg(30.0)).abs() < 1e-12);
    }

    #[test]
    fn exact_multiples_do_not_round_up() {
        let t = plan_single_target(PoseOffset::azimuth_degrees(20.0), deg(10.0)).unwrap();
        let az: Vec<f64> = t.waypoints.iter().map(|w| w.d_azimuth.to_degrees()).collect();
        assert_eq!(az.len(), 2);
        assert!((az[0] - 10.0).abs() < 1e-9 && (az[1] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn negative_offsets_keep_sign() {
        let t = plan_single_target(PoseOffset::azimuth_degrees(-30.0), deg(10.0)).unwrap();
        let az: Vec<f64> = t.waypoints.iter().map(|w| w.d_azimuth.to_degrees()).collect();
        assert_eq!(az.len(), 3);
        for (got, want) in az.iter().zip([-10.0, -20.0, -30.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_target_is_degenerate() {
        let t = plan_single_target(PoseOffset::identity(), deg(10.0)).unwrap();
        assert!(t.is_empty() && t.degenerate);
        assert!(plan_single_target(PoseOffset::azimuth_degrees(30.0), 0.0).is_err());
        let d = plan_single_target(PoseOffset::new(0.0, 0.0, 0.3), deg(10.0)).unwrap();
        assert_eq!(d.len(), 1);
    }

    fn spin_degrees(delta: f64, n: usize) -> Vec<f64> {
        plan_spin(delta.to_radians(), n)
            .unwrap()
            .waypoints
            .iter()
            .map(|w| w.d_azimuth.to_degrees())
            .collect()
    }

    #[test]
    fn spin_sixteen_views() {
        let got = spin_degrees(22.5, 16);
        let mut want = Vec::new();
        for m in 1..8 {
            want.push(22.5 * m as f64);
            want.push(-22.5 * m as f64);
        }
        want.push(180.0);
        assert_eq!(got.len(), 15);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{got:?}");
        }
    }

    #[test]
    fn spin_small_cases() {
        let got = spin_degrees(90.0, 4);
        for (g, w) in got.iter().zip([90.0, -90.0, 180.0]) {
            assert!((g - w).abs() < 1e-9);
        }
        assert_eq!(spin_degrees(10.0, 36).len(), 35);
        assert_eq!(spin_degrees(120.0, 3).len(), 2);
        assert!(plan_spin(deg(20.0), 16).is_err());
        assert!(plan_spin(deg(360.0), 1).is_err());
    }

    #[test]
    fn spin_playback_is_sorted_by_azimuth() {
        let t = plan_spin(deg(90.0), 4).unwrap();
        let order = t.playback_order();
        let az: Vec<f64> = order
            .iter()
            .map(|&i| t.waypoints[i].d_azimuth.to_degrees())
            .collect();
        assert_eq!(order, vec![0, 2, 1]);
        assert!((az[1] - 180.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn weights_normalize(
            given in prop::collection::vec(0.0f64..3.0, 1..6),
            generated in prop::collection::vec(0.0f64..3.0, 0..20),
            tau_c in 0.01f64..5.0,
            tau_g in 0.01f64..5.0,
        ) {
            let w = compute_weights(&given, &generated, &WeightParams::new(tau_c, tau_g).unwrap()).unwrap();
            prop_assert_eq!(w.len(), given.len() + generated.len());
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn nearer_generated_views_weigh_more(
            generated in prop::collection::vec(0.0f64..3.0, 2..20),
            tau_g in 0.05f64..5.0,
        ) {
            let w = compute_weights(&[0.5], &generated, &WeightParams::new(0.5, tau_g).unwrap()).unwrap();
            for i in 0..generated.len() {
                for j in 0..generated.len() {
                    if generated[i] < generated[j] {
                        prop_assert!(w[1 + i] > w[1 + j]);
                    }
                }
            }
        }

        #[test]
        fn delta_is_symmetric(a in -10.0f64..10.0, e in -1.5f64..1.5, d in -1.0f64..1.0) {
            let p = PoseOffset::new(a, e, d);
            prop_assert!((p.delta() - p.neg().delta()).abs() < 1e-12);
        }

        #[test]
        fn spin_covers_each_multiple_once(n in 2usize..73) {
            let delta = TAU / n as f64;
            let t = plan_spin(delta, n).unwrap();
            prop_assert_eq!(t.len(), n - 1);
            let mut multiples: Vec<i64> = t
                .waypoints
                .iter()
                .map(|w| (w.d_azimuth / delta).round() as i64)
                .collect();
            multiples.sort();
            let before = multiples.len();
            multiples.dedup();
            prop_assert_eq!(before, multiples.len());
            for w in &t.waypoints {
                let m = w.d_azimuth / delta;
                prop_assert!((m - m.round()).abs() < 1e-6);
                prop_assert!(m.round() != 0.0);
            }
        }
    }

    #[test]
    fn cold_generated_temperature_concentrates_on_nearest() {
        let params = WeightParams::new(0.5, 1e-4).unwrap();
        let w = compute_weights(&[0.6], &[0.3, 0.1, 0.5], &params).unwrap();
        let given = w[0];
        assert!((w[2] - (1.0 - given)).abs() < 1e-12);
    }
}
