//! End-to-end registration: preprocessing, detection, multi-scale
//! description, matching, mismatch removal and model fitting.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::harris::{detect, paired_lnms_radii, DetectorConfig, Keypoint};
use crate::image::{denoise, normalize, GrayImage};
use crate::matching::{bbf_match, remove_mismatches, FilterConfig, MatchConfig, MatchSet};
use crate::piifd::{describe_multiscale, DescriptorBundle, DEFAULT_WINDOW};
use crate::scale_space::{build_pyramid, PyramidConfig};
use crate::transform::{estimate, ModelKind, PointPair, TransformModel};

/// Which transform model to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Fixed(ModelKind),
    /// Starts from the similarity fit and switches to a richer model only
    /// when it lowers rmse by more than 10%.
    Auto,
}

impl Default for ModelChoice {
    fn default() -> Self {
        ModelChoice::Fixed(ModelKind::Affine)
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::Fixed(k) => write!(f, "{k}"),
            ModelChoice::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for ModelChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(ModelChoice::Auto)
        } else {
            s.parse().map(ModelChoice::Fixed)
        }
    }
}

const AUTO_HYSTERESIS: f64 = 0.9;
/// Residual differences below this are numerical noise, px.
const AUTO_RMSE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub pyramid: PyramidConfig,
    /// Descriptor window side in each level's pixels.
    pub window: usize,
    pub matching: MatchConfig,
    pub filter: FilterConfig,
    pub model: ModelChoice,
    pub denoise_sigma: f64,
    pub fixed_band: usize,
    pub moving_band: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: DetectorConfig::default(),
            pyramid: PyramidConfig::default(),
            window: DEFAULT_WINDOW,
            matching: MatchConfig::default(),
            filter: FilterConfig::default(),
            model: ModelChoice::default(),
            denoise_sigma: 0.5,
            fixed_band: 0,
            moving_band: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.pyramid.validate()?;
        if self.window < 8 || !self.window.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!("window must be a multiple of 4 and >= 8, got {}", self.window)));
        }
        if !(-1.0..=1.0).contains(&self.matching.threshold) || self.matching.max_checks == 0 {
            return Err(Error::InvalidConfig("match threshold must be in [-1, 1] and max_checks > 0".into()));
        }
        if !(self.filter.angle_tol > 0.0) || !(self.filter.ratio_tol > 0.0) {
            return Err(Error::InvalidConfig("angle_tol and ratio_tol must be positive".into()));
        }
        if self.denoise_sigma < 0.0 {
            return Err(Error::NonPositiveSigma(self.denoise_sigma));
        }
        Ok(())
    }
}

/// Wall-clock time per stage, milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub features_ms: f64,
    pub matching_ms: f64,
    pub filtering_ms: f64,
    pub estimation_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub transform: TransformModel,
    pub initial_matches: MatchSet,
    pub filtered_matches: MatchSet,
    pub fixed_keypoints: Vec<Keypoint>,
    pub moving_keypoints: Vec<Keypoint>,
    pub fixed_descriptors: usize,
    pub moving_descriptors: usize,
    pub timings: StageTimings,
}

impl RegistrationResult {
    /// `(fixed, moving)` coordinates of the filtered matches.
    pub fn filtered_pairs(&self) -> Vec<PointPair> {
        match_pairs(&self.filtered_matches, &self.fixed_keypoints, &self.moving_keypoints)
    }
}

pub fn match_pairs(ms: &MatchSet, fixed: &[Keypoint], moving: &[Keypoint]) -> Vec<PointPair> {
    ms.matches
        .iter()
        .map(|m| {
            let (f, mv) = (fixed[m.fixed_kp], moving[m.moving_kp]);
            ((f.x, f.y), (mv.x, mv.y))
        })
        .collect()
}

/// Keypoints and descriptors of one preprocessed image.
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: DescriptorBundle,
}

pub fn extract_features(img: &GrayImage, lnms_radius: usize, cfg: &PipelineConfig) -> Result<Features> {
    let prepared = denoise(&normalize(img), cfg.denoise_sigma)?;
    let detector = DetectorConfig { lnms_radius, ..cfg.detector.clone() };
    let keypoints = detect(&prepared, &detector)?;
    let pyramid = build_pyramid(&prepared, &cfg.pyramid)?;
    let descriptors = describe_multiscale(&pyramid, &keypoints, cfg.window);
    Ok(Features { keypoints, descriptors })
}

/// Fits the configured model to the filtered pairs.
pub fn fit_model(pairs: &[PointPair], choice: ModelChoice) -> Result<TransformModel> {
    match choice {
        ModelChoice::Fixed(kind) => estimate(pairs, kind),
        ModelChoice::Auto => {
            let mut best = estimate(pairs, ModelKind::Similarity)?;
            for kind in [ModelKind::Affine, ModelKind::Projective] {
                if pairs.len() < kind.min_points() {
                    break;
                }
                if let Ok(t) = estimate(pairs, kind) {
                    if t.rmse < AUTO_HYSTERESIS * best.rmse - AUTO_RMSE_FLOOR {
                        best = t;
                    }
                }
            }
            Ok(best)
        }
    }
}

/// Registers `moving` onto `fixed`. The returned transform maps moving-image
/// coordinates to fixed-image coordinates.
pub fn register(fixed: &GrayImage, moving: &GrayImage, cfg: &PipelineConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let (radius_fixed, radius_moving) = paired_lnms_radii(cfg.detector.lnms_radius, fixed.dims(), moving.dims());
    let (fixed_features, moving_features) = rayon::join(
        || extract_features(fixed, radius_fixed, cfg),
        || extract_features(moving, radius_moving, cfg),
    );
    let (fixed_features, moving_features) = (fixed_features?, moving_features?);
    let t1 = Instant::now();

    let initial = match bbf_match(&fixed_features.descriptors, &moving_features.descriptors, &cfg.matching) {
        Ok(ms) => ms,
        Err(Error::EmptyBundle) => return Err(Error::InsufficientMatches(0)),
        Err(e) => return Err(e),
    };
    let t2 = Instant::now();
    let filtered = remove_mismatches(&initial, &fixed_features.keypoints, &moving_features.keypoints, &cfg.filter)?;
    let t3 = Instant::now();
    let pairs = match_pairs(&filtered, &fixed_features.keypoints, &moving_features.keypoints);
    let transform = fit_model(&pairs, cfg.model)?;
    let t4 = Instant::now();

    let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
    Ok(RegistrationResult {
        transform,
        initial_matches: initial,
        filtered_matches: filtered,
        fixed_descriptors: fixed_features.descriptors.len(),
        moving_descriptors: moving_features.descriptors.len(),
        fixed_keypoints: fixed_features.keypoints,
        moving_keypoints: moving_features.keypoints,
        timings: StageTimings {
            features_ms: ms(t0, t1),
            matching_ms: ms(t1, t2),
            filtering_ms: ms(t2, t3),
            estimation_ms: ms(t3, t4),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::textured_image;
    use crate::transform::TransformModel;

    #[test]
    fn model_choice_parsing() {
        assert_eq!("auto".parse::<ModelChoice>().unwrap(), ModelChoice::Auto);
        assert_eq!("projective".parse::<ModelChoice>().unwrap(), ModelChoice::Fixed(ModelKind::Projective));
        assert!("spline".parse::<ModelChoice>().is_err());
        assert_eq!(ModelChoice::default().to_string(), "affine");
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = [
            PipelineConfig { window: 42, ..Default::default() },
            PipelineConfig { denoise_sigma: -1.0, ..Default::default() },
            PipelineConfig { matching: MatchConfig { max_checks: 0, threshold: 0.85 }, ..Default::default() },
            PipelineConfig { pyramid: PyramidConfig::new(0, 4), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn auto_model_prefers_simpler_fits() {
        let sim = TransformModel::similarity(0.3, 1.1, (50.0, 50.0), (4.0, -3.0));
        let aff = TransformModel::from_matrix(ModelKind::Affine, [[1.1, 0.2, 3.0], [-0.1, 0.9, 1.0], [0.0, 0.0, 1.0]]);
        let pts: Vec<(f64, f64)> = (0..12).map(|i| ((i * 37 % 100) as f64, (i * 53 % 90) as f64)).collect();
        let pairs = |t: &TransformModel| pts.iter().map(|&p| (t.apply(p).unwrap(), p)).collect::<Vec<_>>();
        assert_eq!(fit_model(&pairs(&sim), ModelChoice::Auto).unwrap().kind, ModelKind::Similarity);
        assert_eq!(fit_model(&pairs(&aff), ModelChoice::Auto).unwrap().kind, ModelKind::Affine);
        let few = &pairs(&aff)[..3];
        assert_eq!(fit_model(few, ModelChoice::Auto).unwrap().kind, ModelKind::Affine);
        assert_eq!(fit_model(&pairs(&aff)[..2], ModelChoice::Auto).unwrap().kind, ModelKind::Similarity);
        assert!(matches!(fit_model(&pairs(&aff)[..1], ModelChoice::Auto), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn self_registration_is_identity() {
        let img = textured_image(512, 512, 21);
        let res = register(&img, &img, &PipelineConfig::default()).unwrap();
        let id = TransformModel::identity();
        for r in 0..3 {
            for c in 0..3 {
                assert!((res.transform.matrix[r][c] - id.matrix[r][c]).abs() < 1e-3);
            }
        }
        assert!(res.transform.rmse < 0.5);
        assert!(res.fixed_keypoints.len() >= res.initial_matches.len());
        assert!(res.initial_matches.len() >= res.filtered_matches.len());
        assert!(res.filtered_matches.len() >= 3);
    }

    #[test]
    fn constant_moving_image_fails_at_detection() {
        let img = textured_image(256, 256, 22);
        let flat = GrayImage::filled(256, 256, 0.4);
        assert!(matches!(register(&img, &flat, &PipelineConfig::default()), Err(Error::TooFewKeypoints { .. })));
    }
}
