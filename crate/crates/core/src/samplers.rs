//! Reverse-process samplers and the auto-regressive multi-view orchestrator.
//!
//! A generation run walks a [`Trajectory`] of target poses. Each stage runs
//! one full reverse chain for its target. At every step the model predicts
//! the noise once per member of the stage's condition set (with
//! classifier-free guidance against the unconditional prediction), the
//! per-condition predictions are fused with the view-distance weights, and a
//! single DDIM (or DDPM) step is taken. The finished view joins the view set
//! and conditions every later stage.
//!
//! The ablation variants differ only in how a stage picks and combines its
//! conditions; see [`Variant`].

use std::f64::consts::TAU;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conditioning::{compute_weights, Pose, PoseOffset, Trajectory, WeightParams};
use crate::error::{invalid, Error, Result};
use crate::numerics::{sample_standard_normal, GridDims, ImageGrid, SeededRng};
use crate::schedule::{ddim_sigma, DdimSubSchedule, NoiseSchedule};
use crate::toyworld::{ConditionView, NoisePredictor, Origin, ViewModel};

/// Guidance scale used when none is configured.
pub const DEFAULT_GUIDANCE_SCALE: f64 = 3.0;
pub const DEFAULT_DDIM_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

/// How a generation stage selects and combines its conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Every stage conditions only on the given views (independent generation).
    Direct,
    /// Per-step weighted fusion of the noise predicted for every view-set member.
    InterpolatedDenoising,
    /// Condition on the most recently generated view only.
    StandardAutoregression,
    /// Fuse condition images and poses by weight, then run one single-condition chain.
    InterpolatedConditions,
    /// Run one chain per view-set member and weight-average the final images.
    InterpolatedOutputs,
    /// Draw one view-set member uniformly at every diffusion step.
    StochasticConditioning,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Direct,
        Variant::InterpolatedDenoising,
        Variant::StandardAutoregression,
        Variant::InterpolatedConditions,
        Variant::InterpolatedOutputs,
        Variant::StochasticConditioning,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Direct => "direct",
            Variant::InterpolatedDenoising => "interpolated-denoising",
            Variant::StandardAutoregression => "standard-autoregression",
            Variant::InterpolatedConditions => "interpolated-conditions",
            Variant::InterpolatedOutputs => "interpolated-outputs",
            Variant::StochasticConditioning => "stochastic-conditioning",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Order in which per-condition predictions are combined within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionOrder {
    /// Fuse the noise predictions, then take one step.
    #[default]
    Noise,
    /// Step each condition branch from the shared state and noise, then fuse
    /// the next states.
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub variant: Variant,
    pub guidance_scale: f64,
    /// Cap on conditions used per stage; the highest-weight members are kept.
    pub max_conditions_per_step: Option<usize>,
    pub weights: WeightParams,
    pub ddim_steps: usize,
    pub eta: f64,
    /// Use `sqrt(1 - abar_{t-1})` in the clean-image estimate instead of
    /// `sqrt(1 - abar_t)`.
    pub literal_alg1_x0: bool,
    pub fusion: FusionOrder,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddim,
            variant: Variant::InterpolatedDenoising,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            max_conditions_per_step: None,
            weights: WeightParams::default(),
            ddim_steps: DEFAULT_DDIM_STEPS,
            eta: 0.0,
            literal_alg1_x0: false,
            fusion: FusionOrder::Noise,
        }
    }
}

impl SamplerConfig {
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(invalid(
                "guidance_scale",
                format!("must be finite and >= 0, got {}", self.guidance_scale),
            ));
        }
        if self.max_conditions_per_step == Some(0) {
            return Err(invalid("max_conditions_per_step", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid("eta", format!("must be in [0, 1], got {}", self.eta)));
        }
        self.weights.validate()
    }
}

/// `eps(x, ∅) + u (eps(x, y) - eps(x, ∅))`.
pub fn guided_eps(unconditional: &ImageGrid, conditional: &ImageGrid, scale: f64) -> ImageGrid {
    let mut out = unconditional.clone();
    for ((o, u), c) in out
        .as_mut_slice()
        .iter_mut()
        .zip(unconditional.as_slice())
        .zip(conditional.as_slice())
    {
        *o = u + scale * (c - u);
    }
    out
}

/// DDPM ancestral step with explicit noise `z` (ignored at `t = 1`).
pub fn ddpm_step_with_noise(
    x_t: &ImageGrid,
    t: usize,
    eps_hat: &ImageGrid,
    schedule: &NoiseSchedule,
    z: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    x_t.check_same_shape(eps_hat, 1)?;
    let alpha = schedule.alpha(t);
    let coeff = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let mut out = x_t.clone();
    out.add_scaled(-coeff, eps_hat);
    let mut out = out.scaled(1.0 / alpha.sqrt());
    if t > 1 {
        if let Some(z) = z {
            out.add_scaled(schedule.sigma(t), z);
        }
    }
    Ok(out)
}

/// One DDPM reverse step: mean `(x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t)`
/// plus `sigma_t z` for `t > 1`.
pub fn ddpm_reverse_step(
    x_t: &ImageGrid,
    t: usize,
    eps_hat: &ImageGrid,
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<ImageGrid> {
    let z = (t > 1).then(|| sample_standard_normal(rng, x_t.dims()));
    ddpm_step_with_noise(x_t, t, eps_hat, schedule, z.as_ref())
}

/// One DDIM update from `t` to `t_prev` with noise scale `sigma` and shared noise `eps_prime`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    x_t: &ImageGrid,
    t: usize,
    t_prev: usize,
    eps: &ImageGrid,
    schedule: &NoiseSchedule,
    sigma: f64,
    eps_prime: Option<&ImageGrid>,
    literal_x0: bool,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return Err(invalid("t_prev", format!("must be below t = {t}, got {t_prev}")));
    }
    x_t.check_same_shape(eps, 1)?;
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let radicand = 1.0 - ab_prev - sigma * sigma;
    if radicand < -1e-12 {
        return Err(Error::InfeasibleStep {
            t,
            sigma_sq: sigma * sigma,
            limit: 1.0 - ab_prev,
        });
    }
    let noise_coeff = if literal_x0 { (1.0 - ab_prev).sqrt() } else { (1.0 - ab).sqrt() };
    // x0_hat = (x_t - noise_coeff * eps) / sqrt(ab)
    let mut out = x_t.scaled(ab_prev.sqrt() / ab.sqrt());
    out.add_scaled(radicand.max(0.0).sqrt() - ab_prev.sqrt() * noise_coeff / ab.sqrt(), eps);
    if sigma > 0.0 {
        if let Some(z) = eps_prime {
            x_t.check_same_shape(z, 2)?;
            out.add_scaled(sigma, z);
        }
    }
    Ok(out)
}

/// Guided DDIM step for one condition; returns the next state and the guided noise.
#[allow(clippy::too_many_arguments)]
pub fn ddim_guided_step<P: NoisePredictor>(
    x_t: &ImageGrid,
    t: usize,
    t_prev: usize,
    conditional: &P,
    unconditional: &P,
    schedule: &NoiseSchedule,
    guidance_scale: f64,
    eta: f64,
    eps_prime: Option<&ImageGrid>,
    literal_x0: bool,
) -> Result<(ImageGrid, ImageGrid)> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let eps = guided_eps(
        &unconditional.predict(x_t, ab),
        &conditional.predict(x_t, ab),
        guidance_scale,
    );
    let sigma = ddim_sigma(eta, ab, schedule.alpha_bar(t_prev));
    let next = ddim_step(x_t, t, t_prev, &eps, schedule, sigma, eps_prime, literal_x0)?;
    Ok((next, eps))
}

/// A clean view supplied by the user, at an absolute pose.
#[derive(Debug, Clone, PartialEq)]
pub struct GivenView {
    pub image: ImageGrid,
    pub pose: Pose,
}

/// Condition-set entry as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    /// Index into the run's view set (given views first, then generated in order).
    pub member: usize,
    pub offset: PoseOffset,
    pub origin: Origin,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    /// Target relative to the reference view.
    pub target: PoseOffset,
    pub conditions: Vec<ConditionRecord>,
    /// L2 norm of the fused noise prediction at each step.
    pub eps_norms: Vec<f64>,
    pub frame: ImageGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub config: SamplerConfig,
    pub seed: u64,
    pub reference: Pose,
    pub trajectory: Trajectory,
    pub stages: Vec<StageRecord>,
    /// Per-stage wall time in seconds; kept out of the serialized trace so
    /// that traces of identical runs are byte-identical.
    #[serde(skip)]
    pub stage_seconds: Vec<f64>,
}

impl GenerationTrace {
    pub fn frames(&self) -> Vec<&ImageGrid> {
        self.stages.iter().map(|s| &s.frame).collect()
    }

    pub fn target_poses(&self) -> Vec<Pose> {
        self.stages
            .iter()
            .map(|s| self.reference.apply(&s.target))
            .collect()
    }

    /// Frames in playback order (azimuth order for spins) with their absolute poses.
    pub fn playback(&self) -> Vec<(Pose, &ImageGrid)> {
        let poses = self.target_poses();
        self.trajectory
            .playback_order()
            .into_iter()
            .filter(|&i| i < self.stages.len())
            .map(|i| (poses[i], &self.stages[i].frame))
            .collect()
    }
}

/// RNG stream for a stage's starting noise and per-step noise.
pub fn stage_stream(stage: usize) -> u64 {
    2 * stage as u64
}

/// RNG stream for a stage's condition draws (stochastic conditioning).
pub fn selection_stream(stage: usize) -> u64 {
    2 * stage as u64 + 1
}

struct Member {
    image: ImageGrid,
    pose: Pose,
    origin: Origin,
}

/// Per-step noise branches: `(weight, guided eps)` pairs.
type Branches = Vec<(f64, ImageGrid)>;

/// The reverse-process engine: schedule, DDIM sub-schedule and sampler settings.
#[derive(Debug, Clone)]
pub struct Sampler {
    schedule: NoiseSchedule,
    ddim: DdimSubSchedule,
    config: SamplerConfig,
}

impl Sampler {
    pub fn new(schedule: NoiseSchedule, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let ddim = DdimSubSchedule::uniform(&schedule, config.ddim_steps, config.eta)?;
        Ok(Self {
            schedule,
            ddim,
            config,
        })
    }

    pub fn with_sub_schedule(schedule: NoiseSchedule, ddim: DdimSubSchedule, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            schedule,
            ddim,
            config,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn sub_schedule(&self) -> &DdimSubSchedule {
        &self.ddim
    }

    fn transitions(&self) -> Vec<(usize, usize)> {
        match self.config.kind {
            SamplerKind::Ddim => self.ddim.transitions().collect(),
            SamplerKind::Ddpm => (1..=self.schedule.steps()).rev().map(|t| (t, t - 1)).collect(),
        }
    }

    fn step_noise_scale(&self, t: usize, t_prev: usize) -> f64 {
        match self.config.kind {
            SamplerKind::Ddim => self.ddim.sigma(&self.schedule, t, t_prev),
            SamplerKind::Ddpm if t > 1 => self.schedule.sigma(t),
            SamplerKind::Ddpm => 0.0,
        }
    }

    fn step(&self, x: &ImageGrid, t: usize, t_prev: usize, eps: &ImageGrid, noise: Option<&ImageGrid>) -> Result<ImageGrid> {
        match self.config.kind {
            SamplerKind::Ddim => ddim_step(
                x,
                t,
                t_prev,
                eps,
                &self.schedule,
                self.ddim.sigma(&self.schedule, t, t_prev),
                noise,
                self.config.literal_alg1_x0,
            ),
            SamplerKind::Ddpm => ddpm_step_with_noise(x, t, eps, &self.schedule, noise),
        }
    }

    /// Runs one reverse chain. `branches` yields the weighted guided noise
    /// predictions for the current state; they are fused according to the
    /// configured [`FusionOrder`]. The starting noise and one shared per-step
    /// noise draw come from `rng`.
    fn run_chain(
        &self,
        dims: GridDims,
        rng: &mut SeededRng,
        fusion: FusionOrder,
        mut branches: impl FnMut(&ImageGrid, usize, f64) -> Result<Branches>,
    ) -> Result<(ImageGrid, Vec<f64>)> {
        let mut x = sample_standard_normal(rng, dims);
        let mut norms = Vec::new();
        for (t, t_prev) in self.transitions() {
            let ab = self.schedule.alpha_bar(t);
            let preds = branches(&x, t, ab)?;
            let noise = (self.step_noise_scale(t, t_prev) > 0.0).then(|| sample_standard_normal(rng, dims));
            let mut fused = ImageGrid::zeros(dims);
            for (w, eps) in &preds {
                fused.add_scaled(*w, eps);
            }
            norms.push(fused.l2_norm());
            x = match fusion {
                FusionOrder::Noise => self.step(&x, t, t_prev, &fused, noise.as_ref())?,
                FusionOrder::State => {
                    let mut next = ImageGrid::zeros(dims);
                    for (w, eps) in &preds {
                        next.add_scaled(*w, &self.step(&x, t, t_prev, eps, noise.as_ref())?);
                    }
                    next
                }
            };
        }
        Ok((x, norms))
    }

    /// Samples a view for `target` from a single condition (or unconditionally).
    pub fn sample_direct<M: ViewModel>(
        &self,
        model: &M,
        target: &Pose,
        condition: Option<&ConditionView>,
        rng: &mut SeededRng,
    ) -> Result<ImageGrid> {
        let conds: Vec<ConditionView> = condition.into_iter().cloned().collect();
        if conds.is_empty() {
            let uncond = model.predictor(target, None)?;
            return Ok(self
                .run_chain(model.dims(), rng, FusionOrder::Noise, |x, _, ab| Ok(vec![(1.0, uncond.predict(x, ab))]))?
                .0);
        }
        Ok(self.interpolated_denoise_stage(model, target, &conds, &[1.0], rng)?.0)
    }

    /// One full reverse chain whose per-step noise is the weighted fusion of the
    /// guided predictions for every condition. Returns the clean view and the
    /// per-step norms of the fused noise.
    pub fn interpolated_denoise_stage<M: ViewModel>(
        &self,
        model: &M,
        target: &Pose,
        conditions: &[ConditionView],
        weights: &[f64],
        rng: &mut SeededRng,
    ) -> Result<(ImageGrid, Vec<f64>)> {
        if conditions.is_empty() {
            return Err(invalid("conditions", "a stage needs at least one condition"));
        }
        if conditions.len() != weights.len() {
            return Err(invalid(
                "weights",
                format!("{} weights for {} conditions", weights.len(), conditions.len()),
            ));
        }
        let uncond = model.predictor(target, None)?;
        let preds = conditions
            .iter()
            .map(|c| model.predictor(target, Some(std::slice::from_ref(c))))
            .collect::<Result<Vec<_>>>()?;
        let u = self.config.guidance_scale;
        self.run_chain(model.dims(), rng, self.config.fusion, |x, _, ab| {
            let e_u = uncond.predict(x, ab);
            Ok(preds
                .iter()
                .zip(weights)
                .map(|(p, &w)| (w, guided_eps(&e_u, &p.predict(x, ab), u)))
                .collect())
        })
    }

    /// Reverse chain that conditions each step on one condition drawn uniformly
    /// (with replacement) from `conditions` using `selection`.
    pub fn stochastic_stage<M: ViewModel>(
        &self,
        model: &M,
        target: &Pose,
        conditions: &[ConditionView],
        rng: &mut SeededRng,
        selection: &mut SeededRng,
    ) -> Result<(ImageGrid, Vec<f64>)> {
        if conditions.is_empty() {
            return Err(invalid("conditions", "a stage needs at least one condition"));
        }
        let uncond = model.predictor(target, None)?;
        let preds = conditions
            .iter()
            .map(|c| model.predictor(target, Some(std::slice::from_ref(c))))
            .collect::<Result<Vec<_>>>()?;
        let u = self.config.guidance_scale;
        self.run_chain(model.dims(), rng, FusionOrder::Noise, |x, _, ab| {
            let pick = &preds[selection.index(preds.len())];
            let e_u = uncond.predict(x, ab);
            Ok(vec![(1.0, guided_eps(&e_u, &pick.predict(x, ab), u))])
        })
    }

    /// Independent single-condition chains sharing the starting and per-step
    /// noise, averaged by weight at the end.
    pub fn interpolated_outputs_stage<M: ViewModel>(
        &self,
        model: &M,
        target: &Pose,
        conditions: &[ConditionView],
        weights: &[f64],
        rng: &SeededRng,
    ) -> Result<(ImageGrid, Vec<ImageGrid>)> {
        if conditions.is_empty() || conditions.len() != weights.len() {
            return Err(invalid("weights", "need one weight per condition and at least one condition"));
        }
        let outputs = conditions
            .iter()
            .map(|c| {
                let mut branch_rng = rng.clone();
                self.interpolated_denoise_stage(model, target, std::slice::from_ref(c), &[1.0], &mut branch_rng)
                    .map(|(x, _)| x)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = ImageGrid::zeros(model.dims());
        for (w, x) in weights.iter().zip(&outputs) {
            out.add_scaled(*w, x);
        }
        Ok((out, outputs))
    }

    /// Auto-regressive generation with interpolated denoising, regardless of the
    /// configured variant.
    pub fn run_autoregressive<M: ViewModel>(
        &self,
        model: &M,
        given: &[GivenView],
        trajectory: &Trajectory,
        seed: u64,
    ) -> Result<GenerationTrace> {
        self.run_with(model, given, trajectory, seed, Variant::InterpolatedDenoising)
    }

    /// Auto-regressive generation using the configured variant.
    pub fn run_variant<M: ViewModel>(
        &self,
        model: &M,
        given: &[GivenView],
        trajectory: &Trajectory,
        seed: u64,
    ) -> Result<GenerationTrace> {
        self.run_with(model, given, trajectory, seed, self.config.variant)
    }

    fn run_with<M: ViewModel>(
        &self,
        model: &M,
        given: &[GivenView],
        trajectory: &Trajectory,
        seed: u64,
        variant: Variant,
    ) -> Result<GenerationTrace> {
        let first = given
            .first()
            .ok_or_else(|| invalid("conditions", "at least one given view is required"))?;
        let reference = first.pose;
        let mut members: Vec<Member> = given
            .iter()
            .map(|g| Member {
                image: g.image.clone(),
                pose: g.pose,
                origin: Origin::Given,
            })
            .collect();
        let k = members.len();
        let mut stages = Vec::with_capacity(trajectory.len());
        let mut stage_seconds = Vec::with_capacity(trajectory.len());

        for (index, waypoint) in trajectory.waypoints.iter().enumerate() {
            let started = Instant::now();
            let target = reference.apply(waypoint);
            let (selected, weights) = self.select_conditions(&members, k, &target, variant)?;
            let conditions: Vec<ConditionView> = selected
                .iter()
                .map(|&i| {
                    let m = &members[i];
                    ConditionView::new(m.image.clone(), m.pose.offset_from(&target), m.origin)
                })
                .collect();

            let mut rng = SeededRng::new(seed, stage_stream(index));
            let (frame, eps_norms) = match variant {
                Variant::StochasticConditioning => {
                    let mut selection = SeededRng::new(seed, selection_stream(index));
                    self.stochastic_stage(model, &target, &conditions, &mut rng, &mut selection)?
                }
                Variant::InterpolatedOutputs => {
                    let (x, _) = self.interpolated_outputs_stage(model, &target, &conditions, &weights, &rng)?;
                    (x, Vec::new())
                }
                Variant::InterpolatedConditions => {
                    let fused = fuse_conditions(&conditions, &weights, model.dims());
                    self.interpolated_denoise_stage(model, &target, std::slice::from_ref(&fused), &[1.0], &mut rng)?
                }
                Variant::Direct | Variant::InterpolatedDenoising | Variant::StandardAutoregression => {
                    self.interpolated_denoise_stage(model, &target, &conditions, &weights, &mut rng)?
                }
            };

            let records = selected
                .iter()
                .zip(&conditions)
                .zip(&weights)
                .map(|((&member, c), &weight)| ConditionRecord {
                    member,
                    offset: c.offset,
                    origin: c.origin,
                    weight,
                })
                .collect();
            members.push(Member {
                image: frame.clone(),
                pose: target,
                origin: Origin::Generated,
            });
            stages.push(StageRecord {
                index,
                target: *waypoint,
                conditions: records,
                eps_norms,
                frame,
            });
            stage_seconds.push(started.elapsed().as_secs_f64());
            log::debug!("stage {index} done ({variant})");
        }

        Ok(GenerationTrace {
            config: SamplerConfig {
                variant,
                ..self.config.clone()
            },
            seed,
            reference,
            trajectory: trajectory.clone(),
            stages,
            stage_seconds,
        })
    }

    /// Members conditioning a stage and their weights.
    fn select_conditions(
        &self,
        members: &[Member],
        given: usize,
        target: &Pose,
        variant: Variant,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let delta = |i: usize| members[i].pose.offset_from(target).delta();
        let given_deltas: Vec<f64> = (0..given).map(delta).collect();
        let generated = members.len() - given;

        let (selected, weights) = match variant {
            Variant::Direct => ((0..given).collect(), compute_weights(&given_deltas, &[], &self.config.weights)?),
            Variant::StandardAutoregression if generated > 0 => (vec![members.len() - 1], vec![1.0]),
            Variant::StandardAutoregression => {
                ((0..given).collect(), compute_weights(&given_deltas, &[], &self.config.weights)?)
            }
            Variant::StochasticConditioning => {
                let n = members.len();
                return Ok(((0..n).collect(), vec![1.0 / n as f64; n]));
            }
            Variant::InterpolatedDenoising | Variant::InterpolatedConditions | Variant::InterpolatedOutputs => {
                let gen_deltas: Vec<f64> = (given..members.len()).map(delta).collect();
                (
                    (0..members.len()).collect(),
                    compute_weights(&given_deltas, &gen_deltas, &self.config.weights)?,
                )
            }
        };
        Ok(cap_conditions(selected, weights, self.config.max_conditions_per_step))
    }
}

/// Keeps the `cap` highest-weight members (ties to the earlier member) and renormalizes.
fn cap_conditions(selected: Vec<usize>, weights: Vec<f64>, cap: Option<usize>) -> (Vec<usize>, Vec<f64>) {
    let Some(cap) = cap.filter(|&c| c < selected.len()) else {
        return (selected, weights);
    };
    let mut order: Vec<usize> = (0..selected.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order[..cap].to_vec();
    keep.sort_unstable();
    let total: f64 = keep.iter().map(|&i| weights[i]).sum();
    (
        keep.iter().map(|&i| selected[i]).collect(),
        keep.iter().map(|&i| weights[i] / total).collect(),
    )
}

/// Weighted blend of condition images and poses (circular mean for azimuth).
fn fuse_conditions(conditions: &[ConditionView], weights: &[f64], dims: GridDims) -> ConditionView {
    if conditions.len() == 1 {
        return conditions[0].clone();
    }
    let mut image = ImageGrid::zeros(dims);
    let (mut sin, mut cos, mut elev, mut dist) = (0.0, 0.0, 0.0, 0.0);
    for (c, &w) in conditions.iter().zip(weights) {
        image.add_scaled(w, &c.image);
        sin += w * c.offset.d_azimuth.sin();
        cos += w * c.offset.d_azimuth.cos();
        elev += w * c.offset.d_elevation;
        dist += w * c.offset.d_distance;
    }
    let azimuth = if sin == 0.0 && cos == 0.0 { 0.0 } else { sin.atan2(cos) };
    let origin = if conditions.iter().all(|c| c.origin == Origin::Given) {
        Origin::Given
    } else {
        Origin::Generated
    };
    ConditionView::new(image, PoseOffset::new(azimuth.rem_euclid(TAU), elev, dist), origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{plan_spin, TrajectoryMode};
    use crate::toyworld::{ToyWorld, ToyWorldParams};

    fn az(deg: f64) -> Pose {
        Pose::from_degrees(deg, 0.0, 0.0)
    }

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    fn sampler(config: SamplerConfig) -> Sampler {
        Sampler::new(schedule(), config).unwrap()
    }

    fn given(world: &ToyWorld, mode: usize, deg: f64) -> GivenView {
        GivenView {
            image: world.render(mode, &az(deg)).unwrap(),
            pose: az(deg),
        }
    }

    #[test]
    fn ddpm_step_without_noise_or_eps_rescales() {
        let s = schedule();
        let d = GridDims::new(3, 3, 1).unwrap();
        let x = ImageGrid::filled(d, 0.7);
        let out = ddpm_step_with_noise(&x, 1, &ImageGrid::zeros(d), &s, None).unwrap();
        let want = 0.7 / s.alpha(1).sqrt();
        assert!(out.as_slice().iter().all(|v| (v - want).abs() < 1e-15));
        // t = 1 ignores the noise.
        let z = ImageGrid::filled(d, 5.0);
        assert_eq!(ddpm_step_with_noise(&x, 1, &ImageGrid::zeros(d), &s, Some(&z)).unwrap(), out);
    }

    #[test]
    fn ddpm_step_is_replayable() {
        let s = schedule();
        let d = GridDims::new(4, 4, 1).unwrap();
        let x = sample_standard_normal(&mut SeededRng::new(1, 0), d);
        let e = sample_standard_normal(&mut SeededRng::new(2, 0), d);
        let a = ddpm_reverse_step(&x, 500, &e, &s, &mut SeededRng::new(3, 0)).unwrap();
        let b = ddpm_reverse_step(&x, 500, &e, &s, &mut SeededRng::new(3, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn guidance_reduces_to_conditional_at_unit_scale() {
        let d = GridDims::new(4, 4, 1).unwrap();
        let u = sample_standard_normal(&mut SeededRng::new(1, 0), d);
        let c = sample_standard_normal(&mut SeededRng::new(2, 0), d);
        assert!(guided_eps(&u, &c, 1.0).linf_distance(&c) < 1e-15);
        assert_eq!(guided_eps(&c, &c, 7.5), c);
    }

    #[test]
    fn ddim_final_step_returns_clean_estimate() {
        let s = schedule();
        let d = GridDims::new(2, 2, 1).unwrap();
        let x = ImageGrid::filled(d, 0.5);
        let eps = ImageGrid::filled(d, 0.1);
        let out = ddim_step(&x, 1, 0, &eps, &s, 0.0, None, false).unwrap();
        let want = (0.5 - (1.0 - s.alpha_bar(1)).sqrt() * 0.1) / s.alpha_bar(1).sqrt();
        assert!(out.as_slice().iter().all(|v| (v - want).abs() < 1e-12));
        assert!(ddim_step(&x, 1, 1, &eps, &s, 0.0, None, false).is_err());
    }

    #[test]
    fn ddim_rejects_infeasible_noise() {
        let s = schedule();
        let d = GridDims::new(2, 2, 1).unwrap();
        let x = ImageGrid::zeros(d);
        let err = ddim_step(&x, 500, 400, &x, &s, 1.5, None, false).unwrap_err();
        assert!(matches!(err, Error::InfeasibleStep { .. }));
    }

    #[test]
    fn single_mode_ddim_lands_on_the_rendering() {
        let world = ToyWorld::new(ToyWorldParams {
            modes: 1,
            sigma_data: 0.002,
            ..Default::default()
        })
        .unwrap();
        let smp = sampler(SamplerConfig {
            guidance_scale: 1.0,
            ..Default::default()
        });
        let target = az(60.0);
        let x0 = smp.sample_direct(&world, &target, None, &mut SeededRng::new(1, 0)).unwrap();
        assert!(x0.linf_distance(&world.render(1, &target).unwrap()) < 0.02);
    }

    #[test]
    fn fusion_orders_agree() {
        let world = ToyWorld::default_world();
        let base = SamplerConfig {
            eta: 0.7,
            ddim_steps: 20,
            ..Default::default()
        };
        let target = az(120.0);
        let conds: Vec<ConditionView> = [(1, 40.0), (2, 200.0), (1, 90.0)]
            .iter()
            .map(|&(m, deg)| {
                ConditionView::new(
                    world.render(m, &az(deg)).unwrap(),
                    az(deg).offset_from(&target),
                    Origin::Generated,
                )
            })
            .collect();
        let w = [0.5, 0.2, 0.3];
        let a = sampler(base.clone())
            .interpolated_denoise_stage(&world, &target, &conds, &w, &mut SeededRng::new(4, 0))
            .unwrap()
            .0;
        let b = sampler(SamplerConfig {
            fusion: FusionOrder::State,
            ..base
        })
        .interpolated_denoise_stage(&world, &target, &conds, &w, &mut SeededRng::new(4, 0))
        .unwrap()
        .0;
        assert!(a.linf_distance(&b) <= 1e-9, "{}", a.linf_distance(&b));
    }

    #[test]
    fn stage_rejects_misaligned_weights() {
        let world = ToyWorld::default_world();
        let smp = sampler(SamplerConfig::default());
        let target = az(30.0);
        let c = ConditionView::new(world.render(1, &az(0.0)).unwrap(), az(0.0).offset_from(&target), Origin::Given);
        let mut rng = SeededRng::new(0, 0);
        assert!(smp
            .interpolated_denoise_stage(&world, &target, std::slice::from_ref(&c), &[0.5, 0.5], &mut rng)
            .is_err());
        assert!(smp.interpolated_denoise_stage(&world, &target, &[], &[], &mut rng).is_err());
    }

    #[test]
    fn every_variant_collapses_with_one_condition() {
        let world = ToyWorld::default_world();
        let cfg = SamplerConfig {
            eta: 0.5,
            ddim_steps: 25,
            ..Default::default()
        };
        let traj = Trajectory {
            mode: TrajectoryMode::SingleTarget,
            waypoints: vec![PoseOffset::azimuth_degrees(40.0)],
            degenerate: false,
        };
        let g = vec![given(&world, 1, 0.0)];
        let direct = sampler(cfg.with_variant(Variant::Direct))
            .run_variant(&world, &g, &traj, 9)
            .unwrap();
        for v in Variant::ALL {
            let trace = sampler(cfg.with_variant(v)).run_variant(&world, &g, &traj, 9).unwrap();
            assert_eq!(trace.stages[0].frame, direct.stages[0].frame, "{v}");
        }
    }

    #[test]
    fn traces_are_deterministic_and_well_formed() {
        let world = ToyWorld::default_world();
        let smp = sampler(SamplerConfig {
            ddim_steps: 10,
            ..Default::default()
        });
        let traj = plan_spin(90f64.to_radians(), 4).unwrap();
        let g = vec![given(&world, 1, 0.0)];
        let a = smp.run_autoregressive(&world, &g, &traj, 3).unwrap();
        let b = smp.run_autoregressive(&world, &g, &traj, 3).unwrap();
        assert_eq!(a, GenerationTrace { stage_seconds: a.stage_seconds.clone(), ..b });
        assert_eq!(a.stages.len(), 3);
        for (i, st) in a.stages.iter().enumerate() {
            assert_eq!(st.conditions.len(), 1 + i);
            assert!((st.conditions.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(st.frame.is_finite());
        }
        let empty = Trajectory {
            mode: TrajectoryMode::SingleTarget,
            waypoints: vec![],
            degenerate: true,
        };
        assert!(smp.run_autoregressive(&world, &g, &empty, 3).unwrap().stages.is_empty());
        assert!(smp.run_autoregressive(&world, &[], &traj, 3).is_err());
    }

    #[test]
    fn interpolated_outputs_average_branch_outputs() {
        let world = ToyWorld::default_world();
        let smp = sampler(SamplerConfig {
            ddim_steps: 15,
            eta: 0.3,
            ..Default::default()
        });
        let target = az(100.0);
        let conds: Vec<ConditionView> = [(1, 0.0), (2, 60.0)]
            .iter()
            .map(|&(m, deg)| ConditionView::new(world.render(m, &az(deg)).unwrap(), az(deg).offset_from(&target), Origin::Given))
            .collect();
        let w = [0.3, 0.7];
        let rng = SeededRng::new(8, 0);
        let (avg, outs) = smp.interpolated_outputs_stage(&world, &target, &conds, &w, &rng).unwrap();
        let mut want = outs[0].scaled(0.3);
        want.add_scaled(0.7, &outs[1]);
        assert_eq!(avg, want);
    }

    #[test]
    fn standard_autoregression_uses_last_view() {
        let world = ToyWorld::default_world();
        let smp = sampler(SamplerConfig {
            ddim_steps: 5,
            variant: Variant::StandardAutoregression,
            ..Default::default()
        });
        let traj = plan_spin(90f64.to_radians(), 4).unwrap();
        let trace = smp.run_variant(&world, &[given(&world, 1, 0.0)], &traj, 1).unwrap();
        assert_eq!(trace.stages[0].conditions[0].member, 0);
        assert_eq!(trace.stages[1].conditions.len(), 1);
        assert_eq!(trace.stages[1].conditions[0].member, 1);
        assert_eq!(trace.stages[2].conditions[0].member, 2);
    }

    #[test]
    fn capping_keeps_heaviest_members() {
        let (sel, w) = cap_conditions(vec![0, 1, 2, 3], vec![0.1, 0.4, 0.2, 0.3], Some(2));
        assert_eq!(sel, vec![1, 3]);
        assert!((w[0] - 4.0 / 7.0).abs() < 1e-12 && (w[1] - 3.0 / 7.0).abs() < 1e-12);
        let (sel, _) = cap_conditions(vec![0, 1], vec![0.5, 0.5], Some(5));
        assert_eq!(sel, vec![0, 1]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SamplerConfig {
            guidance_scale: -1.0,
            ..Default::default()
        };
        assert!(Sampler::new(schedule(), bad).is_err());
        let bad = SamplerConfig {
            max_conditions_per_step: Some(0),
            ..Default::default()
        };
        assert!(Sampler::new(schedule(), bad).is_err());
    }
}
