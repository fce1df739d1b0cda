//! Image-quality and multi-view consistency metrics.
//!
//! Frames live in `[-1, 1]`, so PSNR and SSIM use a dynamic range of 2.
//! Mode agreement needs a world to decode frames against; see [`decode_mode`].

use serde::{Deserialize, Serialize};

use crate::conditioning::Pose;
use crate::error::{invalid, Result};
use crate::numerics::{psnr, GridDims, ImageGrid, UNIT_RANGE_PEAK};
use crate::toyworld::ToyWorld;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean local SSIM over every valid `window x window` patch of every channel,
/// using a uniform window and dynamic range 2.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, window: usize, k1: f64, k2: f64) -> Result<f64> {
    a.check_same_shape(b, 1)?;
    let d = a.dims();
    if window == 0 || window.is_multiple_of(2) || window > d.height.min(d.width) {
        return Err(invalid(
            "window",
            format!("must be odd and at most {}, got {window}", d.height.min(d.width)),
        ));
    }
    let c1 = (k1 * UNIT_RANGE_PEAK).powi(2);
    let c2 = (k2 * UNIT_RANGE_PEAK).powi(2);
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..d.channels {
        for r0 in 0..=d.height - window {
            for c0 in 0..=d.width - window {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for r in r0..r0 + window {
                    for c in c0..c0 + window {
                        let x = a.get(r, c, ch);
                        let y = b.get(r, c, ch);
                        sa += x;
                        sb += y;
                        saa += x * x;
                        sbb += y * y;
                        sab += x * y;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let mab = ma * mb;
                // Sample (n - 1) covariances, as in the reference implementation.
                let va = (saa - n * (ma * ma)) / (n - 1.0);
                let vb = (sbb - n * (mb * mb)) / (n - 1.0);
                let cov = (sab - n * mab) / (n - 1.0);
                total += ((2.0 * mab + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// SSIM with the default window and constants.
pub fn ssim_default(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    let d = a.dims();
    ssim(a, b, SSIM_WINDOW.min(largest_odd(d.height.min(d.width))), SSIM_K1, SSIM_K2)
}

fn largest_odd(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n.saturating_sub(1).max(1)
    }
}

pub fn mean_abs_diff(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.check_same_shape(b, 1)?;
    let sum: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// Nearest rendering at `pose` by L2 distance; ties go to the lower mode. Modes are 1-based.
pub fn decode_mode(world: &ToyWorld, frame: &ImageGrid, pose: &Pose) -> Result<usize> {
    let mut best = (1, f64::INFINITY);
    for m in 1..=world.modes() {
        let r = world.render(m, pose)?;
        frame.check_same_shape(&r, 1)?;
        let d = frame.squared_distance(&r);
        if d < best.1 {
            best = (m, d);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub first: usize,
    pub second: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub same_mode: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub cyclic: bool,
    pub pairs: Vec<PairMetrics>,
    pub mean_psnr: f64,
    pub min_psnr: f64,
    pub mean_ssim: f64,
    pub min_ssim: f64,
    pub mean_l1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_agreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoded_modes: Option<Vec<usize>>,
    /// Frames whose decoded mode is indistinguishable from another mode at
    /// that pose.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ambiguous_frames: Vec<usize>,
}

/// Pairwise metrics over consecutive frames, wrapping around when `cyclic`.
/// With `decoded_modes`, the report also carries the fraction of adjacent
/// pairs that decode to the same mode.
pub fn adjacent_consistency(
    frames: &[&ImageGrid],
    cyclic: bool,
    decoded_modes: Option<&[usize]>,
) -> Result<ConsistencyReport> {
    if frames.len() < 2 {
        return Err(invalid("frames", format!("need at least 2 frames, got {}", frames.len())));
    }
    if let Some(modes) = decoded_modes {
        if modes.len() != frames.len() {
            return Err(invalid(
                "decoded_modes",
                format!("{} modes for {} frames", modes.len(), frames.len()),
            ));
        }
    }
    let n = frames.len();
    let pair_count = if cyclic { n } else { n - 1 };
    let pairs = (0..pair_count)
        .map(|i| {
            let j = (i + 1) % n;
            let (a, b) = (frames[i], frames[j]);
            Ok(PairMetrics {
                first: i,
                second: j,
                psnr: psnr(a, b, UNIT_RANGE_PEAK)?,
                ssim: ssim_default(a, b)?,
                l1: mean_abs_diff(a, b)?,
                same_mode: decoded_modes.map(|m| m[i] == m[j]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&PairMetrics) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
    let min = |f: fn(&PairMetrics) -> f64| pairs.iter().map(f).fold(f64::INFINITY, f64::min);
    let mode_agreement = decoded_modes.and_then(|_| agreement_rate(&pairs));
    Ok(ConsistencyReport {
        cyclic,
        mean_psnr: mean(|p| p.psnr),
        min_psnr: min(|p| p.psnr),
        mean_ssim: mean(|p| p.ssim),
        min_ssim: min(|p| p.ssim),
        mean_l1: mean(|p| p.l1),
        mode_agreement,
        decoded_modes: decoded_modes.map(<[usize]>::to_vec),
        ambiguous_frames: Vec::new(),
        pairs,
    })
}

fn agreement_rate(pairs: &[PairMetrics]) -> Option<f64> {
    let decided = pairs.iter().filter(|p| p.same_mode.is_some()).count();
    (decided > 0).then(|| pairs.iter().filter(|p| p.same_mode == Some(true)).count() as f64 / decided as f64)
}

/// Consistency of posed frames against a world.
///
/// Each frame is decoded at its pose. Modes whose renderings at that pose lie
/// within `sigma_data` (L2) of the decoded one cannot be told apart there,
/// so a pair counts as agreeing when the two frames' sets of
/// indistinguishable modes overlap. With unambiguous decodes this is plain
/// equality of decoded modes.
pub fn world_consistency(world: &ToyWorld, frames: &[(Pose, &ImageGrid)], cyclic: bool) -> Result<ConsistencyReport> {
    let mut modes = Vec::with_capacity(frames.len());
    let mut classes = Vec::with_capacity(frames.len());
    for (pose, frame) in frames {
        let mode = decode_mode(world, frame, pose)?;
        let decoded = world.render(mode, pose)?;
        let class: Vec<usize> = (1..=world.modes())
            .filter(|&m| m == mode || world.render(m, pose).is_ok_and(|r| r.l2_distance(&decoded) < world.sigma_data()))
            .collect();
        modes.push(mode);
        classes.push(class);
    }
    let images: Vec<&ImageGrid> = frames.iter().map(|(_, f)| *f).collect();
    let mut report = adjacent_consistency(&images, cyclic, Some(&modes))?;
    report.ambiguous_frames = (0..frames.len()).filter(|&i| classes[i].len() > 1).collect();
    if !report.ambiguous_frames.is_empty() {
        for p in &mut report.pairs {
            p.same_mode = Some(classes[p.first].iter().any(|m| classes[p.second].contains(m)));
        }
        report.mode_agreement = agreement_rate(&report.pairs);
    }
    Ok(report)
}

/// Stacks row `scanline` of each frame: the result has one row per frame.
pub fn spacetime_slice(frames: &[&ImageGrid], scanline: usize) -> Result<ImageGrid> {
    let first = frames.first().ok_or_else(|| invalid("frames", "no frames to slice"))?;
    let d = first.dims();
    if scanline >= d.height {
        return Err(invalid(
            "scanline",
            format!("must be below the frame height {}, got {scanline}", d.height),
        ));
    }
    for (i, f) in frames.iter().enumerate() {
        first.check_same_shape(f, i)?;
    }
    let dims = GridDims::new(frames.len(), d.width, d.channels)?;
    Ok(ImageGrid::from_fn(dims, |row, col, ch| frames[row].get(scanline, col, ch)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_standard_normal, SeededRng, PSNR_CAP_DB};
    use crate::toyworld::{ToyWorldParams, RendererKind};
    use proptest::prelude::*;

    fn az(deg: f64) -> Pose {
        Pose::from_degrees(deg, 0.0, 0.0)
    }

    fn world() -> ToyWorld {
        ToyWorld::default_world()
    }

    fn noisy(base: &ImageGrid, sigma: f64, seed: u64) -> ImageGrid {
        let mut out = base.clone();
        out.add_scaled(sigma, &sample_standard_normal(&mut SeededRng::new(seed, 0), base.dims()));
        out
    }

    #[test]
    fn ssim_identity_and_negation() {
        let a = world().render(1, &az(150.0)).unwrap();
        assert!((ssim_default(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let checker = ImageGrid::from_fn(a.dims(), |r, c, _| if (r + c) % 2 == 0 { 0.5 } else { -0.5 });
        assert!(ssim_default(&checker, &checker.scaled(-1.0)).unwrap() < 0.0);
    }

    #[test]
    fn ssim_tolerates_small_noise() {
        let a = world().render(2, &az(200.0)).unwrap();
        let b = noisy(&a, 0.01, 5);
        assert!(ssim_default(&a, &b).unwrap() > 0.95);
    }

    #[test]
    fn ssim_rejects_bad_windows() {
        let a = world().render(1, &az(0.0)).unwrap();
        assert!(ssim(&a, &a, 4, SSIM_K1, SSIM_K2).is_err());
        assert!(ssim(&a, &a, 17, SSIM_K1, SSIM_K2).is_err());
        let small = ImageGrid::zeros(GridDims::new(2, 3, 1).unwrap());
        assert!(ssim(&a, &small, 7, SSIM_K1, SSIM_K2).is_err());
    }

    #[test]
    fn identical_frames_are_fully_consistent() {
        let a = world().render(1, &az(90.0)).unwrap();
        let frames = vec![&a; 5];
        let r = adjacent_consistency(&frames, true, Some(&[1; 5])).unwrap();
        assert_eq!(r.pairs.len(), 5);
        assert_eq!(r.mean_psnr, PSNR_CAP_DB);
        assert!((r.mean_ssim - 1.0).abs() < 1e-12);
        assert_eq!(r.mode_agreement, Some(1.0));
        let r = adjacent_consistency(&frames, false, None).unwrap();
        assert_eq!(r.pairs.len(), 4);
        assert!(r.mode_agreement.is_none());
    }

    #[test]
    fn alternating_modes_never_agree() {
        let w = world();
        let frames: Vec<(Pose, ImageGrid)> = (0..6)
            .map(|i| {
                let p = az(120.0 + 10.0 * i as f64);
                (p, w.render(1 + i % 2, &p).unwrap())
            })
            .collect();
        let posed: Vec<(Pose, &ImageGrid)> = frames.iter().map(|(p, f)| (*p, f)).collect();
        let r = world_consistency(&w, &posed, true).unwrap();
        assert_eq!(r.mode_agreement, Some(0.0));
        assert_eq!(r.decoded_modes.unwrap(), vec![1, 2, 1, 2, 1, 2]);
    }

    #[test]
    fn independent_oracle_views_agree_half_the_time() {
        let w = world();
        let mut rng = SeededRng::new(77, 0);
        let mut agree = 0;
        let mut pairs = 0;
        for _ in 0..200 {
            let poses: Vec<Pose> = (1..12).map(|i| az(30.0 * i as f64)).collect();
            let modes: Vec<usize> = poses.iter().map(|p| w.oracle_sample_view(&[], p, &mut rng).unwrap().0).collect();
            let frames: Vec<ImageGrid> = modes.iter().zip(&poses).map(|(&m, p)| w.render(m, p).unwrap()).collect();
            let refs: Vec<&ImageGrid> = frames.iter().collect();
            let r = adjacent_consistency(&refs, true, Some(&modes)).unwrap();
            agree += r.pairs.iter().filter(|p| p.same_mode == Some(true)).count();
            pairs += r.pairs.len();
        }
        let rate = agree as f64 / pairs as f64;
        assert!((rate - 0.5).abs() < 0.05, "{rate}");
    }

    #[test]
    fn front_view_is_compatible_with_any_mode() {
        let w = world();
        let poses = [az(-30.0), az(0.0), az(30.0), az(60.0)];
        let frames: Vec<ImageGrid> = [2, 2, 2, 1].iter().zip(&poses).map(|(&m, p)| w.render(m, p).unwrap()).collect();
        let posed: Vec<(Pose, &ImageGrid)> = poses.iter().copied().zip(&frames).collect();
        let r = world_consistency(&w, &posed, false).unwrap();
        assert_eq!(r.decoded_modes.as_deref(), Some(&[2, 1, 2, 1][..]));
        assert_eq!(r.ambiguous_frames, vec![1]);
        let same: Vec<Option<bool>> = r.pairs.iter().map(|p| p.same_mode).collect();
        assert_eq!(same, vec![Some(true), Some(true), Some(false)]);
        assert!((r.mode_agreement.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hidden_markings_do_not_count_as_disagreement() {
        let w = ToyWorld::new(ToyWorldParams {
            modes: 4,
            renderer: RendererKind::Sectors { count: 2 },
            ..Default::default()
        })
        .unwrap();
        // Two markings, one per half of the circle: a view that only sees
        // the first one cannot tell modes differing in the second.
        let poses = [az(80.0), az(100.0), az(260.0), az(280.0)];
        let frames: Vec<ImageGrid> = poses.iter().map(|p| w.render(4, p).unwrap()).collect();
        let posed: Vec<(Pose, &ImageGrid)> = poses.iter().copied().zip(&frames).collect();
        let r = world_consistency(&w, &posed, true).unwrap();
        assert_eq!(r.mode_agreement, Some(1.0), "{:?} {:?}", r.decoded_modes, r.ambiguous_frames);
        assert_eq!(r.ambiguous_frames.len(), 4);
        let decoded = r.decoded_modes.unwrap();
        assert!(decoded.iter().any(|&m| m != decoded[0]), "{decoded:?}");
    }

    #[test]
    fn too_few_frames_rejected() {
        let a = world().render(1, &az(0.0)).unwrap();
        assert!(adjacent_consistency(&[&a], true, None).is_err());
        assert!(adjacent_consistency(&[&a, &a], true, Some(&[1])).is_err());
    }

    #[test]
    fn decode_mode_cases() {
        let w = world();
        let p = az(170.0);
        let r1 = w.render(1, &p).unwrap();
        let r2 = w.render(2, &p).unwrap();
        assert_eq!(decode_mode(&w, &r2, &p).unwrap(), 2);
        let mut mid = r1.scaled(0.5);
        mid.add_scaled(0.5, &r2);
        assert_eq!(decode_mode(&w, &mid, &p).unwrap(), 1);
        // Condition-view pose: renderings coincide, so the tie rule applies.
        assert_eq!(decode_mode(&w, &w.render(2, &az(0.0)).unwrap(), &az(0.0)).unwrap(), 1);
    }

    #[test]
    fn decode_mode_survives_data_noise() {
        let w = world();
        let mut wrong = 0;
        for seed in 0..2000 {
            let p = az(30.0 + (seed % 300) as f64);
            let f = noisy(&w.render(1, &p).unwrap(), w.sigma_data(), seed);
            if decode_mode(&w, &f, &p).unwrap() != 1 {
                wrong += 1;
            }
        }
        assert!(wrong <= 2, "{wrong} misdecoded");
    }

    #[test]
    fn agreement_ignores_mode_labels() {
        let a = world().render(1, &az(90.0)).unwrap();
        let frames = vec![&a; 6];
        let modes = [1, 1, 2, 2, 2, 1];
        let swapped: Vec<usize> = modes.iter().map(|m| 3 - m).collect();
        let r1 = adjacent_consistency(&frames, true, Some(&modes)).unwrap();
        let r2 = adjacent_consistency(&frames, true, Some(&swapped)).unwrap();
        assert_eq!(r1.mode_agreement, r2.mode_agreement);
    }

    #[test]
    fn slice_cases() {
        let w = world();
        let f = w.render(1, &az(120.0)).unwrap();
        let s = spacetime_slice(&[&f], 8).unwrap();
        assert_eq!(s.dims(), GridDims::new(1, 16, 1).unwrap());
        for c in 0..16 {
            assert_eq!(s.get(0, c, 0), f.get(8, c, 0));
        }
        let k = ImageGrid::filled(f.dims(), 0.25);
        let s = spacetime_slice(&[&k, &k, &k], 3).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.25));
        assert!(spacetime_slice(&[&f], 16).is_err());
        assert!(spacetime_slice(&[], 0).is_err());
    }

    #[test]
    fn rotating_stripe_traces_a_continuous_band() {
        let w = ToyWorld::new(ToyWorldParams {
            height: 24,
            width: 24,
            renderer: RendererKind::BackMarking,
            ..Default::default()
        })
        .unwrap();
        let frames: Vec<ImageGrid> = (0..9).map(|i| w.render(2, &az(-60.0 + 15.0 * i as f64)).unwrap()).collect();
        let refs: Vec<&ImageGrid> = frames.iter().collect();
        let row = 12;
        let s = spacetime_slice(&refs, row).unwrap();
        // The brightest column in each slice row moves monotonically by at most a few pixels.
        let peaks: Vec<usize> = (0..9)
            .map(|r| (0..24).max_by(|&a, &b| s.get(r, a, 0).total_cmp(&s.get(r, b, 0))).unwrap())
            .collect();
        for pair in peaks.windows(2) {
            assert!(pair[1] >= pair[0] && pair[1] - pair[0] <= 3, "{peaks:?}");
        }
        assert!(peaks[8] > peaks[0], "{peaks:?}");
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(seed_a in 0u64..1000, seed_b in 0u64..1000, scale in 0.01f64..1.0) {
            let d = GridDims::new(9, 11, 2).unwrap();
            let a = sample_standard_normal(&mut SeededRng::new(seed_a, 1), d).scaled(scale);
            let b = sample_standard_normal(&mut SeededRng::new(seed_b, 2), d).scaled(scale);
            let ab = ssim_default(&a, &b).unwrap();
            prop_assert_eq!(ab, ssim_default(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ssim_default(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
