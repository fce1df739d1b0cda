//! An analytically tractable multi-view scene family.
//!
//! A [`ToyWorld`] holds `M` latent object modes. Each mode renders
//! deterministically at any camera pose; a clean view at pose `p` is drawn as
//! `render(m, p) + sigma_data * z` with `m` from the prior. Because every
//! per-mode distribution is an isotropic Gaussian, everything a pretrained
//! pose-conditioned denoiser would approximate is available in closed form:
//! posterior responsibilities over modes given condition views, the
//! Bayes-optimal conditional and unconditional noise predictors, and a
//! brute-force sampler for the true conditional distribution.
//!
//! The renderer draws a soft box (the object body) whose vertical position
//! follows elevation and whose size follows distance, a bright stripe that
//! sweeps across the body with azimuth, and one or more markings. Markings
//! carry the mode identity: their intensity depends on the mode. All markings
//! fade out as the camera approaches azimuth zero, so the reference view is
//! identical under every mode and a single reference view cannot tell the
//! modes apart.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::conditioning::{wrap_angle, Pose, PoseOffset};
use crate::error::{invalid, Error, Result};
use crate::numerics::{normalize_log_weights, sample_standard_normal, GridDims, ImageGrid, SeededRng};
use crate::schedule::NoiseSchedule;

/// Azimuth span over which markings fade in when leaving the reference view.
const FRONT_FADE: f64 = 30.0 * PI / 180.0;
/// Edge softness of marking visibility windows.
const WINDOW_RAMP: f64 = 30.0 * PI / 180.0;

const BACKGROUND: f64 = -1.0;
const BODY: f64 = -0.2;
const STRIPE: f64 = 0.45;
const MARK_BRIGHT: f64 = 0.9;
const MARK_DARK: f64 = -0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RendererKind {
    /// One marking on the back of the object; its intensity takes one of `M`
    /// levels, one per mode.
    BackMarking,
    /// `count` markings around the object, each visible from its own azimuth
    /// sector; mode `m` switches marking `k` bright when bit `k` of `m - 1` is set.
    Sectors { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Marking {
    /// Azimuth at which the marking faces the camera.
    facing: f64,
    /// Visibility window center and half width (azimuth).
    window_center: f64,
    window_half_width: f64,
    /// Vertical placement relative to the body half height.
    row: f64,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Marking {
    fn visibility(&self, azimuth: f64) -> f64 {
        let from_window = wrap_angle(azimuth - self.window_center).abs();
        let window = smoothstep((self.window_half_width - from_window) / WINDOW_RAMP);
        let front = smoothstep(wrap_angle(azimuth).abs() / FRONT_FADE);
        window * front
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Renderer {
    markings: Vec<Marking>,
    /// `levels[m][k]`: intensity of marking `k` under mode `m`.
    levels: Vec<Vec<f64>>,
}

impl Renderer {
    fn new(kind: RendererKind, modes: usize) -> Result<Self> {
        match kind {
            RendererKind::BackMarking => {
                let markings = vec![Marking {
                    facing: PI,
                    window_center: PI,
                    window_half_width: PI + WINDOW_RAMP,
                    row: 0.0,
                }];
                let levels = (0..modes)
                    .map(|m| {
                        let level = if modes == 1 {
                            MARK_BRIGHT
                        } else {
                            MARK_BRIGHT + (MARK_DARK - MARK_BRIGHT) * m as f64 / (modes - 1) as f64
                        };
                        vec![level]
                    })
                    .collect();
                Ok(Self { markings, levels })
            }
            RendererKind::Sectors { count } => {
                if count == 0 || count > 16 {
                    return Err(invalid("sectors", format!("need 1..=16 markings, got {count}")));
                }
                if modes > 1 << count {
                    return Err(invalid(
                        "modes",
                        format!("{count} markings support at most {} modes, got {modes}", 1 << count),
                    ));
                }
                let half_width = (PI / count as f64 + WINDOW_RAMP).min(PI);
                let markings = (0..count)
                    .map(|k| {
                        let center = wrap_angle(PI * (2 * k + 1) as f64 / count as f64);
                        Marking {
                            facing: center,
                            window_center: center,
                            window_half_width: half_width,
                            row: if k % 2 == 0 { -0.35 } else { 0.35 },
                        }
                    })
                    .collect();
                let levels = (0..modes)
                    .map(|m| {
                        (0..count)
                            .map(|k| if (m >> k) & 1 == 1 { MARK_DARK } else { MARK_BRIGHT })
                            .collect()
                    })
                    .collect();
                Ok(Self { markings, levels })
            }
        }
    }

    fn render(&self, dims: GridDims, mode: usize, pose: &Pose) -> ImageGrid {
        let (h, w) = (dims.height as f64, dims.width as f64);
        let scale = (1.0 - 0.35 * pose.distance).clamp(0.3, 1.5);
        let cx = w / 2.0;
        let cy = h / 2.0 - (pose.elevation / (PI / 2.0)) * h / 4.0;
        let half_w = 0.34 * w * scale;
        let half_h = 0.26 * h * scale;
        let reach = 0.8 * half_w;
        let (sin_az, cos_az) = pose.azimuth.sin_cos();
        let stripe_x = cx + reach * sin_az;
        let stripe_amp = STRIPE * 0.5 * (1.0 + cos_az);
        let blob_r = 1.1 * scale;

        let marks: Vec<(f64, f64, f64)> = self
            .markings
            .iter()
            .zip(&self.levels[mode])
            .map(|(mk, &level)| {
                let x = cx + reach * (pose.azimuth - mk.facing).sin();
                let y = cy + mk.row * half_h;
                (x, y, level * mk.visibility(pose.azimuth))
            })
            .collect();

        ImageGrid::from_fn(dims, |row, col, ch| {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let body = logistic((half_w - (x - cx).abs()) / 0.35) * logistic((half_h - (y - cy).abs()) / 0.35);
            let mut v = BACKGROUND + (BODY - BACKGROUND) * body;
            let dx = x - stripe_x;
            v += stripe_amp * body * (-(dx * dx) / (2.0 * 0.7 * 0.7)).exp();
            for &(mx, my, amp) in &marks {
                let d2 = (x - mx).powi(2) + (y - my).powi(2);
                v += amp * body * (-d2 / (2.0 * blob_r * blob_r)).exp();
            }
            // Slight per-channel tint for color grids.
            let tint = 1.0 - 0.1 * ch as f64;
            (v * tint).clamp(-1.0, 1.0)
        })
    }
}

/// Where a condition view came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Given,
    Generated,
}

/// A view conditioning a generation stage, posed relative to that stage's target.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionView {
    pub image: ImageGrid,
    /// Condition pose minus target pose.
    pub offset: PoseOffset,
    pub origin: Origin,
}

impl ConditionView {
    pub fn new(image: ImageGrid, offset: PoseOffset, origin: Origin) -> Self {
        Self {
            image,
            offset,
            origin,
        }
    }
}

/// Posterior probabilities over modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub weights: Vec<f64>,
    /// Every likelihood vanished and the prior was returned instead.
    pub degenerate: bool,
}

/// Estimates the noise in `x_t` at noise level `alpha_bar`.
pub trait NoisePredictor {
    fn predict(&self, x_t: &ImageGrid, alpha_bar: f64) -> ImageGrid;
}

/// A pose-conditioned view model: builds the noise predictor for a target pose
/// given a set of condition views, or the unconditional one (`None`).
pub trait ViewModel: Sync {
    type Predictor: NoisePredictor + Send + Sync;

    fn dims(&self) -> GridDims;

    fn predictor(&self, target: &Pose, conditions: Option<&[ConditionView]>) -> Result<Self::Predictor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyWorldParams {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub modes: usize,
    pub sigma_data: f64,
    pub renderer: RendererKind,
}

impl Default for ToyWorldParams {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 1,
            modes: 2,
            sigma_data: 0.05,
            renderer: RendererKind::BackMarking,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    dims: GridDims,
    renderer: Renderer,
    prior: Vec<f64>,
    log_prior: Vec<f64>,
    sigma_data: f64,
}

impl ToyWorld {
    /// World with a uniform prior over modes.
    pub fn new(params: ToyWorldParams) -> Result<Self> {
        let prior = vec![1.0 / params.modes.max(1) as f64; params.modes.max(1)];
        Self::with_prior(params, prior)
    }

    pub fn with_prior(params: ToyWorldParams, prior: Vec<f64>) -> Result<Self> {
        let dims = GridDims::new(params.height, params.width, params.channels)?;
        if params.modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        if prior.len() != params.modes {
            return Err(invalid(
                "prior",
                format!("{} entries for {} modes", prior.len(), params.modes),
            ));
        }
        if prior.iter().any(|p| !(*p >= 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid("prior", "entries must be nonnegative and sum to 1"));
        }
        if !(params.sigma_data > 0.0 && params.sigma_data.is_finite()) {
            return Err(invalid(
                "sigma_data",
                format!("must be positive, got {}", params.sigma_data),
            ));
        }
        let renderer = Renderer::new(params.renderer, params.modes)?;
        let log_prior = prior.iter().map(|p| p.ln()).collect();
        Ok(Self {
            dims,
            renderer,
            prior,
            log_prior,
            sigma_data: params.sigma_data,
        })
    }

    pub fn default_world() -> Self {
        Self::new(ToyWorldParams::default()).expect("default parameters are valid")
    }

    pub fn modes(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn grid_dims(&self) -> GridDims {
        self.dims
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode == 0 || mode > self.modes() {
            return Err(Error::ModeOutOfRange {
                mode,
                max: self.modes(),
            });
        }
        Ok(())
    }

    /// Noise-free rendering of `mode` (1-based) at an absolute pose.
    pub fn render(&self, mode: usize, pose: &Pose) -> Result<ImageGrid> {
        self.check_mode(mode)?;
        Ok(self.renderer.render(self.dims, mode - 1, pose))
    }

    fn render_all(&self, pose: &Pose) -> Vec<ImageGrid> {
        (0..self.modes())
            .map(|m| self.renderer.render(self.dims, m, pose))
            .collect()
    }

    /// Smallest L2 distance between renderings of two distinct modes at `pose`.
    pub fn min_mode_separation(&self, pose: &Pose) -> f64 {
        let renders = self.render_all(pose);
        let mut best = f64::INFINITY;
        for i in 0..renders.len() {
            for j in i + 1..renders.len() {
                best = best.min(renders[i].l2_distance(&renders[j]));
            }
        }
        best
    }

    fn log_posterior(&self, conditions: &[ConditionView], target: &Pose) -> Result<Vec<f64>> {
        let inv_two_var = 1.0 / (2.0 * self.sigma_data * self.sigma_data);
        let mut log_r = self.log_prior.clone();
        for (i, cond) in conditions.iter().enumerate() {
            let pose = target.apply(&cond.offset);
            for (m, lr) in log_r.iter_mut().enumerate() {
                let mean = self.renderer.render(self.dims, m, &pose);
                mean.check_same_shape(&cond.image, i)?;
                *lr -= cond.image.squared_distance(&mean) * inv_two_var;
            }
        }
        Ok(log_r)
    }

    /// `r_m ∝ prior_m * prod_c N(y_c; render(m, pose_c), sigma_data^2 I)`.
    pub fn posterior_responsibilities(
        &self,
        conditions: &[ConditionView],
        target: &Pose,
    ) -> Result<Responsibilities> {
        let log_r = self.log_posterior(conditions, target)?;
        let mut weights = Vec::new();
        if normalize_log_weights(&log_r, &mut weights) {
            Ok(Responsibilities {
                weights,
                degenerate: false,
            })
        } else {
            Ok(Responsibilities {
                weights: self.prior.clone(),
                degenerate: true,
            })
        }
    }

    /// Exact mixture predictor for a target pose; `None` marginalizes the
    /// conditions (prior responsibilities) while keeping the target geometry.
    pub fn mixture_predictor(
        &self,
        target: &Pose,
        conditions: Option<&[ConditionView]>,
    ) -> Result<MixturePredictor> {
        let log_weights = match conditions {
            None => self.log_prior.clone(),
            Some(conds) => {
                let r = self.posterior_responsibilities(conds, target)?;
                r.weights.iter().map(|w| w.ln()).collect()
            }
        };
        Ok(MixturePredictor {
            means: self.render_all(target),
            log_weights,
            sigma_data: self.sigma_data,
        })
    }

    /// Bayes-optimal noise prediction `(x_t - sqrt(abar_t) E[x_0 | x_t, cond]) / sqrt(1 - abar_t)`.
    pub fn optimal_eps(
        &self,
        x_t: &ImageGrid,
        t: usize,
        schedule: &NoiseSchedule,
        conditions: Option<&[ConditionView]>,
        target: &Pose,
    ) -> Result<ImageGrid> {
        schedule.check_t(t)?;
        let predictor = self.mixture_predictor(target, conditions)?;
        x_t.check_same_shape(&predictor.means[0], 0)?;
        Ok(predictor.predict(x_t, schedule.alpha_bar(t)))
    }

    /// Draws a view from the true conditional distribution: a mode from the
    /// posterior responsibilities, then its rendering plus Gaussian noise.
    pub fn oracle_sample_view(
        &self,
        conditions: &[ConditionView],
        target: &Pose,
        rng: &mut SeededRng,
    ) -> Result<(usize, ImageGrid)> {
        let r = self.posterior_responsibilities(conditions, target)?;
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut mode = r.weights.len();
        for (m, w) in r.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                mode = m + 1;
                break;
            }
        }
        let mut image = self.renderer.render(self.dims, mode - 1, target);
        let noise = sample_standard_normal(rng, self.dims);
        image.add_scaled(self.sigma_data, &noise);
        Ok((mode, image))
    }
}

impl ViewModel for ToyWorld {
    type Predictor = MixturePredictor;

    fn dims(&self) -> GridDims {
        self.dims
    }

    fn predictor(&self, target: &Pose, conditions: Option<&[ConditionView]>) -> Result<MixturePredictor> {
        self.mixture_predictor(target, conditions)
    }
}

/// Closed-form optimal noise predictor for an isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePredictor {
    means: Vec<ImageGrid>,
    /// Log mixture weights; `-inf` for modes ruled out by the conditions.
    log_weights: Vec<f64>,
    sigma_data: f64,
}

impl MixturePredictor {
    pub fn new(means: Vec<ImageGrid>, weights: &[f64], sigma_data: f64) -> Result<Self> {
        if means.is_empty() || means.len() != weights.len() {
            return Err(invalid("means", "need one weight per mean and at least one mean"));
        }
        for (i, m) in means.iter().enumerate() {
            means[0].check_same_shape(m, i)?;
        }
        Ok(Self {
            means,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            sigma_data,
        })
    }

    pub fn means(&self) -> &[ImageGrid] {
        &self.means
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Responsibilities of each component for `x_t` at noise level `alpha_bar`.
    pub fn component_posterior(&self, x_t: &ImageGrid, alpha_bar: f64) -> Vec<f64> {
        let sqrt_ab = alpha_bar.sqrt();
        let var = alpha_bar * self.sigma_data * self.sigma_data + (1.0 - alpha_bar);
        let log_g: Vec<f64> = self
            .means
            .iter()
            .zip(&self.log_weights)
            .map(|(mu, lw)| {
                if *lw == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let d2: f64 = x_t
                    .as_slice()
                    .iter()
                    .zip(mu.as_slice())
                    .map(|(x, m)| (x - sqrt_ab * m).powi(2))
                    .sum();
                lw - d2 / (2.0 * var)
            })
            .collect();
        let mut gamma = Vec::new();
        if !normalize_log_weights(&log_g, &mut gamma) {
            gamma = self.weights();
        }
        gamma
    }

    /// Posterior mean `E[x_0 | x_t]`.
    pub fn posterior_mean(&self, x_t: &ImageGrid, alpha_bar: f64) -> ImageGrid {
        let sqrt_ab = alpha_bar.sqrt();
        let var = alpha_bar * self.sigma_data * self.sigma_data + (1.0 - alpha_bar);
        let shrink = sqrt_ab * self.sigma_data * self.sigma_data / var;
        let gamma = self.component_posterior(x_t, alpha_bar);
        let mut mean_mu = ImageGrid::zeros(x_t.dims());
        for (g, mu) in gamma.iter().zip(&self.means) {
            if *g > 0.0 {
                mean_mu.add_scaled(*g, mu);
            }
        }
        // E = sum_m g_m (mu_m + shrink (x - sqrt_ab mu_m))
        let mut out = mean_mu.scaled(1.0 - shrink * sqrt_ab);
        out.add_scaled(shrink, x_t);
        out
    }
}

impl NoisePredictor for MixturePredictor {
    fn predict(&self, x_t: &ImageGrid, alpha_bar: f64) -> ImageGrid {
        let sqrt_ab = alpha_bar.sqrt();
        let var = alpha_bar * self.sigma_data * self.sigma_data + (1.0 - alpha_bar);
        let gamma = self.component_posterior(x_t, alpha_bar);
        // eps = sqrt(1 - abar) / var * (x - sqrt(abar) sum_m g_m mu_m)
        let coeff = (1.0 - alpha_bar).sqrt() / var;
        let mut out = x_t.scaled(coeff);
        for (g, mu) in gamma.iter().zip(&self.means) {
            if *g > 0.0 {
                out.add_scaled(-coeff * sqrt_ab * g, mu);
            }
        }
        out
    }
}
