//! Synthetic ground truth: textured test scenes, warped/re-mapped image
//! pairs with known transforms, and scoring of registration results.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, GrayImage};
use crate::pipeline::{register, PipelineConfig, RegistrationResult};
use crate::transform::{ModelKind, TransformModel};

/// Dead-leaves scene: overlapping rectangles, ellipses and triangles with
/// power-law sizes and uniform gray levels, 2x2 supersampled.
pub fn textured_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sw, sh) = (2 * width, 2 * height);
    let mut canvas = vec![rng.random::<f64>(); sw * sh];
    let n_shapes = (width * height) / 20;
    let (rmin, rmax) = (8.0f64, 0.04 * width.min(height) as f64 * 2.0);
    for _ in 0..n_shapes {
        let cx = rng.random_range(-0.1..1.1) * sw as f64;
        let cy = rng.random_range(-0.1..1.1) * sh as f64;
        let r = rmin * (rmax / rmin).powf(rng.random::<f64>().powi(2));
        let aspect = rng.random_range(0.4..1.0);
        let angle = rng.random_range(0.0..PI);
        let value = rng.random::<f64>();
        let kind = rng.random_range(0..5);
        let tri: [(f64, f64); 3] = std::array::from_fn(|_| {
            let a = rng.random_range(0.0..2.0 * PI);
            let d = r * rng.random_range(0.5..1.0);
            (d * a.cos(), d * a.sin())
        });
        let (c, s) = (angle.cos(), angle.sin());
        let x0 = ((cx - r).floor().max(0.0)) as usize;
        let x1 = ((cx + r).ceil().min(sw as f64 - 1.0)).max(0.0) as usize;
        let y0 = ((cy - r).floor().max(0.0)) as usize;
        let y1 = ((cy + r).ceil().min(sh as f64 - 1.0)).max(0.0) as usize;
        if x0 > x1 || y0 > y1 || cx + r < 0.0 || cy + r < 0.0 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                let inside = match kind {
                    0 | 3 => u.abs() <= r && v.abs() <= r * aspect,
                    1 => (u / r).powi(2) + (v / (r * aspect)).powi(2) <= 1.0,
                    _ => in_triangle((dx, dy), &tri),
                };
                if inside {
                    canvas[y * sw + x] = value;
                }
            }
        }
    }
    GrayImage::from_fn(width, height, |x, y| {
        let i = 2 * y * sw + 2 * x;
        (canvas[i] + canvas[i + 1] + canvas[i + sw] + canvas[i + sw + 1]) / 4.0
    })
}

fn in_triangle(p: (f64, f64), t: &[(f64, f64); 3]) -> bool {
    let sign = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| (a.0 - c.0) * (b.1 - c.1) - (b.0 - c.0) * (a.1 - c.1);
    let d1 = sign(p, t[0], t[1]);
    let d2 = sign(p, t[1], t[2]);
    let d3 = sign(p, t[2], t[0]);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Radiometric change applied to the moving image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IntensityMode {
    Identity,
    Invert,
    Gamma(f64),
    Affine(f64, f64),
}

impl IntensityMode {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            IntensityMode::Identity => v,
            IntensityMode::Invert => 1.0 - v,
            IntensityMode::Gamma(g) => v.max(0.0).powf(g),
            IntensityMode::Affine(a, b) => a * v + b,
        }
    }
}

impl fmt::Display for IntensityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntensityMode::Identity => f.write_str("identity"),
            IntensityMode::Invert => f.write_str("invert"),
            IntensityMode::Gamma(g) => write!(f, "gamma({g})"),
            IntensityMode::Affine(a, b) => write!(f, "affine({a},{b})"),
        }
    }
}

impl FromStr for IntensityMode {
    type Err = String;
    /// `identity`, `invert`, `gamma` (0.5), `gamma:G`, `affine` (-0.8, 0.9) or `affine:A,B`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
        match s.split_once(':') {
            None => match s {
                "identity" | "none" => Ok(IntensityMode::Identity),
                "invert" => Ok(IntensityMode::Invert),
                "gamma" => Ok(IntensityMode::Gamma(0.5)),
                "affine" => Ok(IntensityMode::Affine(-0.8, 0.9)),
                other => Err(format!("unknown intensity mode {other:?}")),
            },
            Some(("gamma", g)) => Ok(IntensityMode::Gamma(num(g)?)),
            Some(("affine", ab)) => {
                let (a, b) = ab.split_once(',').ok_or("affine needs A,B")?;
                Ok(IntensityMode::Affine(num(a)?, num(b)?))
            }
            Some((other, _)) => Err(format!("unknown intensity mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub fixed: GrayImage,
    pub moving: GrayImage,
    /// Ground truth moving -> fixed.
    pub gt: TransformModel,
    /// Fraction of moving pixels that see the source.
    pub valid_fraction: f64,
}

/// `fixed = source`; `moving(p) = intensity(source(gt(p))) + noise` on an
/// `out_dims` canvas, 0 where `gt(p)` falls outside the source. When `gt`
/// shrinks the source, it is low-pass filtered first to avoid aliasing.
pub fn synthetic_pair(
    source: &GrayImage,
    gt: &TransformModel,
    intensity: IntensityMode,
    noise_sigma: f64,
    out_dims: (usize, usize),
    seed: u64,
) -> Result<SyntheticPair> {
    gt.inverse()?;
    let m = &gt.matrix;
    let zoom = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).abs().sqrt();
    let filtered = if zoom > 1.0 + 1e-9 {
        gaussian_blur(source, 0.5 * (zoom * zoom - 1.0).sqrt())?
    } else {
        source.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (w, h) = out_dims;
    let mut valid = 0usize;
    let moving = GrayImage::from_fn(w, h, |x, y| {
        let v = gt.apply((x as f64, y as f64)).ok().and_then(|(sx, sy)| filtered.sample_bilinear(sx, sy));
        let n = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        match v {
            Some(v) => {
                valid += 1;
                intensity.apply(v) + n
            }
            None => n,
        }
    });
    Ok(SyntheticPair { fixed: source.clone(), moving, gt: gt.clone(), valid_fraction: valid as f64 / (w * h) as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub n_filtered: usize,
    /// Filtered matches whose moving point lands within `eps` of its fixed
    /// point under the ground truth.
    pub n_correct: usize,
    /// RMS distance between estimated and true images of the moving-image corners.
    pub corner_rmse: f64,
    pub success: bool,
}

pub const DEFAULT_EPS: f64 = 2.0;

pub fn evaluate(result: &RegistrationResult, gt: &TransformModel, image_dims: (usize, usize), eps: f64) -> EvaluationReport {
    let pairs = result.filtered_pairs();
    let n_correct = pairs
        .iter()
        .filter(|&&(f, m)| gt.apply(m).is_ok_and(|p| (p.0 - f.0).hypot(p.1 - f.1) <= eps))
        .count();
    let corner_rmse = corner_rmse(&result.transform, gt, image_dims);
    EvaluationReport { n_filtered: pairs.len(), n_correct, corner_rmse, success: n_correct >= 3 }
}

pub fn corner_rmse(estimated: &TransformModel, gt: &TransformModel, dims: (usize, usize)) -> f64 {
    let (w, h) = ((dims.0 - 1) as f64, (dims.1 - 1) as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
    let mut acc = 0.0;
    for c in corners {
        match (estimated.apply(c), gt.apply(c)) {
            (Ok(a), Ok(b)) => acc += (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2),
            _ => return f64::INFINITY,
        }
    }
    (acc / 4.0).sqrt()
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub trials: usize,
    /// Rotation drawn from `[-range, range]`, degrees.
    pub rotation_range_deg: f64,
    pub scale_range: (f64, f64),
    /// Translation components drawn from `[-range, range]`, pixels.
    pub translation_range: f64,
    pub intensity: IntensityMode,
    pub noise: f64,
    /// Moving image resolution divisor on top of the sampled similarity.
    pub downsample: usize,
    pub seed: u64,
    pub eps: f64,
    pub pipeline: PipelineConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            trials: 20,
            rotation_range_deg: 30.0,
            scale_range: (0.7, 1.4),
            translation_range: 20.0,
            intensity: IntensityMode::Identity,
            noise: 0.0,
            downsample: 1,
            seed: 0,
            eps: DEFAULT_EPS,
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: (f64, f64),
    pub gt: TransformModel,
    /// `None` when registration failed outright.
    pub report: Option<EvaluationReport>,
    pub failure: Option<String>,
}

impl TrialOutcome {
    pub fn success(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.success)
    }
}

#[derive(Clone, Debug)]
pub struct BenchSummary {
    pub trials: Vec<TrialOutcome>,
    pub success_rate: f64,
    /// Mean corner rmse over successful trials.
    pub mean_corner_rmse: f64,
}

/// Ground-truth moving -> fixed map for one trial: the moving grid is
/// scaled up by `downsample`, then rotated/scaled about the fixed-image
/// center and translated.
pub fn trial_transform(dims: (usize, usize), rotation: f64, scale: f64, translation: (f64, f64), downsample: usize) -> TransformModel {
    let center = ((dims.0 as f64 - 1.0) / 2.0, (dims.1 as f64 - 1.0) / 2.0);
    let sim = TransformModel::similarity(rotation, scale, center, translation);
    let d = downsample as f64;
    let up = TransformModel::from_matrix(ModelKind::Similarity, [[d, 0.0, 0.0], [0.0, d, 0.0], [0.0, 0.0, 1.0]]);
    sim.compose(&up).expect("similarities compose")
}

pub fn run_bench(source: &GrayImage, cfg: &BenchConfig) -> Result<BenchSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.downsample.max(1);
    let out_dims = (source.width().div_ceil(d), source.height().div_ceil(d));
    let mut trials = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let rot = rng.random_range(-cfg.rotation_range_deg..=cfg.rotation_range_deg);
        let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
        let t = cfg.translation_range;
        let translation = (rng.random_range(-t..=t), rng.random_range(-t..=t));
        let noise_seed = rng.random::<u64>();
        let gt = trial_transform(source.dims(), rot.to_radians(), scale, translation, d);
        let pair = synthetic_pair(source, &gt, cfg.intensity, cfg.noise, out_dims, noise_seed)?;
        let (report, failure) = match register(&pair.fixed, &pair.moving, &cfg.pipeline) {
            Ok(res) => (Some(evaluate(&res, &gt, out_dims, cfg.eps)), None),
            Err(e) => (None, Some(e.to_string())),
        };
        trials.push(TrialOutcome { rotation_deg: rot, scale, translation, gt, report, failure });
    }
    let ok: Vec<&TrialOutcome> = trials.iter().filter(|t| t.success()).collect();
    let success_rate = ok.len() as f64 / trials.len().max(1) as f64;
    let mean_corner_rmse = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().map(|t| t.report.as_ref().unwrap().corner_rmse).sum::<f64>() / ok.len() as f64
    };
    Ok(BenchSummary { trials, success_rate, mean_corner_rmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harris::Keypoint;
    use crate::matching::{Match, MatchSet, Stage};
    use crate::pipeline::StageTimings;
    use crate::transform::PointPair;

    fn result_with(transform: TransformModel, pairs: &[PointPair]) -> RegistrationResult {
        let kp = |p: (f64, f64)| Keypoint { x: p.0, y: p.1, response: 1.0 };
        let matches: Vec<Match> = (0..pairs.len())
            .map(|i| Match {
                fixed_kp: i,
                moving_kp: i,
                similarity: 0.9,
                fixed_level: (0, 0),
                moving_level: (0, 0),
                fixed_orientation: 0.0,
                moving_orientation: 0.0,
            })
            .collect();
        let ms = MatchSet { matches, stage: Stage::Filtered };
        RegistrationResult {
            transform,
            initial_matches: MatchSet { stage: Stage::Initial, ..ms.clone() },
            filtered_matches: ms,
            fixed_keypoints: pairs.iter().map(|p| kp(p.0)).collect(),
            moving_keypoints: pairs.iter().map(|p| kp(p.1)).collect(),
            fixed_descriptors: 0,
            moving_descriptors: 0,
            timings: StageTimings::default(),
        }
    }

    #[test]
    fn texture_is_deterministic_and_varied() {
        let a = textured_image(64, 48, 3);
        assert_eq!(a, textured_image(64, 48, 3));
        assert_ne!(a, textured_image(64, 48, 4));
        assert_eq!(a.dims(), (64, 48));
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.0 && hi <= 1.0 && hi - lo > 0.5);
    }

    #[test]
    fn identity_pair_reproduces_source() {
        let src = textured_image(64, 64, 1);
        let p = synthetic_pair(&src, &TransformModel::identity(), IntensityMode::Identity, 0.0, (64, 64), 0).unwrap();
        assert_eq!(p.fixed, src);
        assert!((p.valid_fraction - 1.0).abs() < 1e-12);
        for (a, b) in p.moving.data().iter().zip(src.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn intensity_modes() {
        let src = textured_image(32, 32, 2);
        let inv = synthetic_pair(&src, &TransformModel::identity(), IntensityMode::Invert, 0.0, (32, 32), 0).unwrap();
        for (a, b) in inv.moving.data().iter().zip(src.data()) {
            assert!((a - (1.0 - b)).abs() < 1e-12);
        }
        assert!((IntensityMode::Gamma(0.5).apply(0.25) - 0.5).abs() < 1e-15);
        assert_eq!(IntensityMode::Affine(-0.8, 0.9).apply(0.5), 0.5);
        assert_eq!("gamma".parse::<IntensityMode>().unwrap(), IntensityMode::Gamma(0.5));
        assert_eq!("gamma:2".parse::<IntensityMode>().unwrap(), IntensityMode::Gamma(2.0));
        assert_eq!("affine:0.5,0.1".parse::<IntensityMode>().unwrap(), IntensityMode::Affine(0.5, 0.1));
        assert_eq!("invert".parse::<IntensityMode>().unwrap(), IntensityMode::Invert);
        assert!("sepia".parse::<IntensityMode>().is_err());
    }

    #[test]
    fn invalid_area_is_zero_and_counted() {
        let src = GrayImage::filled(40, 40, 0.7);
        let p = synthetic_pair(&src, &TransformModel::translation(20.0, 0.0), IntensityMode::Identity, 0.0, (40, 40), 0).unwrap();
        assert!((p.valid_fraction - 0.5).abs() < 0.03);
        assert_eq!(p.moving.get(39, 10), 0.0);
        assert!((p.moving.get(5, 10) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn noise_is_seeded() {
        let src = GrayImage::filled(16, 16, 0.5);
        let id = TransformModel::identity();
        let a = synthetic_pair(&src, &id, IntensityMode::Identity, 0.1, (16, 16), 5).unwrap();
        let b = synthetic_pair(&src, &id, IntensityMode::Identity, 0.1, (16, 16), 5).unwrap();
        let c = synthetic_pair(&src, &id, IntensityMode::Identity, 0.1, (16, 16), 6).unwrap();
        assert_eq!(a.moving, b.moving);
        assert_ne!(a.moving, c.moving);
        let sd = a.moving.variance().sqrt();
        assert!((sd - 0.1).abs() < 0.03, "{sd}");
    }

    #[test]
    fn singular_ground_truth_is_rejected() {
        let src = GrayImage::filled(16, 16, 0.5);
        let gt = TransformModel::from_matrix(ModelKind::Affine, [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(synthetic_pair(&src, &gt, IntensityMode::Identity, 0.0, (16, 16), 0), Err(Error::SingularTransform)));
    }

    #[test]
    fn trial_transform_keeps_center_and_composes_downsample() {
        let gt = trial_transform((101, 101), 0.4, 1.2, (3.0, -2.0), 1);
        let c = gt.apply((50.0, 50.0)).unwrap();
        assert!((c.0 - 53.0).abs() < 1e-9 && (c.1 - 48.0).abs() < 1e-9);
        let g2 = trial_transform((101, 101), 0.4, 1.2, (3.0, -2.0), 2);
        let a = g2.apply((10.0, 7.0)).unwrap();
        let b = gt.apply((20.0, 14.0)).unwrap();
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    }

    #[test]
    fn evaluate_exact_and_offset() {
        let gt = trial_transform((64, 64), 0.3, 1.1, (2.0, 1.0), 1);
        let moving = [(10.0, 12.0), (40.0, 5.0), (30.0, 50.0), (3.0, 3.0)];
        let mut pairs: Vec<_> = moving.iter().map(|&m| (gt.apply(m).unwrap(), m)).collect();
        pairs[3].0 .0 += 5.0;
        let r = evaluate(&result_with(gt.clone(), &pairs), &gt, (64, 64), 2.0);
        assert_eq!(r.n_correct, 3);
        assert_eq!(r.n_filtered, 4);
        assert!(r.corner_rmse.abs() < 1e-9);
        assert!(r.success);

        let shifted = TransformModel::translation(1.0, 0.0).compose(&gt).unwrap();
        let r = evaluate(&result_with(shifted, &pairs[..2]), &gt, (64, 64), 2.0);
        assert!((r.corner_rmse - 1.0).abs() < 1e-9);
        assert!(!r.success);
    }

    #[test]
    fn evaluate_counts_like_a_plain_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gt = trial_transform((128, 128), -0.2, 0.9, (5.0, 5.0), 1);
        for _ in 0..20 {
            let pairs: Vec<_> = (0..30)
                .map(|_| {
                    let m = (rng.random_range(0.0..128.0), rng.random_range(0.0..128.0));
                    let f = gt.apply(m).unwrap();
                    let jitter = rng.random_range(0.0..4.0);
                    ((f.0 + jitter, f.1), m)
                })
                .collect();
            let mut expect = 0;
            for &(f, m) in &pairs {
                let p = gt.apply(m).unwrap();
                if ((p.0 - f.0).powi(2) + (p.1 - f.1).powi(2)).sqrt() <= 2.0 {
                    expect += 1;
                }
            }
            let r = evaluate(&result_with(gt.clone(), &pairs), &gt, (128, 128), 2.0);
            assert_eq!(r.n_correct, expect);
        }
    }
}
