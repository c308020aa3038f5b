//! Harris cornerness (det/trace of the windowed structure tensor) and
//! local non-maximum suppression.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{convolve, gaussian_kernel, gradient, GrayImage};

const TRACE_EPS: f64 = 1e-12;
/// A 10x10 suppression window is the smallest allowed.
pub const MIN_LNMS_RADIUS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Sigma of the Gaussian window that sums the structure tensor.
    pub tensor_sigma: f64,
    pub lnms_radius: usize,
    pub max_points: usize,
    /// Fewer survivors than this is reported as a detection failure.
    pub min_points: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { tensor_sigma: 1.5, lnms_radius: 5, max_points: 1000, min_points: 500 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lnms_radius < MIN_LNMS_RADIUS {
            return Err(Error::InvalidConfig(format!(
                "lnms_radius must be >= {MIN_LNMS_RADIUS}, got {}",
                self.lnms_radius
            )));
        }
        if self.min_points > self.max_points {
            return Err(Error::InvalidConfig("min_points exceeds max_points".into()));
        }
        if !(self.tensor_sigma > 0.0) {
            return Err(Error::NonPositiveSigma(self.tensor_sigma));
        }
        Ok(())
    }
}

/// Per-pixel `det(M) / tr(M)`; zero where the trace vanishes.
pub fn corner_response(img: &GrayImage, tensor_sigma: f64) -> Result<GrayImage> {
    let g = gradient(img)?;
    let k = gaussian_kernel(tensor_sigma)?;
    let (w, h) = img.dims();
    let products = |f: fn(f64, f64) -> f64| {
        let data = g.gx.data().iter().zip(g.gy.data()).map(|(&a, &b)| f(a, b)).collect();
        GrayImage::new(w, h, data).expect("same dimensions")
    };
    let (sxx, sxy, syy) = {
        let xx = products(|a, _| a * a);
        let xy = products(|a, b| a * b);
        let yy = products(|_, b| b * b);
        (convolve(&xx, &k), convolve(&xy, &k), convolve(&yy, &k))
    };
    let data = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (a, b, c) = (sxx.data()[i], sxy.data()[i], syy.data()[i]);
            let tr = a + c;
            if tr < TRACE_EPS {
                0.0
            } else {
                ((a * c - b * b) / tr).max(0.0)
            }
        })
        .collect();
    GrayImage::new(w, h, data)
}

/// Ratio of the square roots of two pixel counts.
pub fn lnms_ratio(fixed_dims: (usize, usize), moving_dims: (usize, usize)) -> f64 {
    let big = (fixed_dims.0 * fixed_dims.1) as f64;
    let small = (moving_dims.0 * moving_dims.1) as f64;
    (big / small).sqrt()
}

/// Suppression radii for a pair: the larger image gets the radius scaled
/// by the area ratio so both end up with comparable point density.
pub fn paired_lnms_radii(
    base_radius: usize,
    fixed_dims: (usize, usize),
    moving_dims: (usize, usize),
) -> (usize, usize) {
    let ratio = lnms_ratio(fixed_dims, moving_dims);
    let scaled = |r: f64| ((base_radius as f64 * r).round() as usize).max(MIN_LNMS_RADIUS);
    let base = base_radius.max(MIN_LNMS_RADIUS);
    if ratio >= 1.0 {
        (scaled(ratio), base)
    } else {
        (base, scaled(1.0 / ratio))
    }
}

/// Pixels whose response is the strict window maximum. Equal responses
/// resolve in row-major order: the earlier pixel wins.
pub fn lnms(response: &GrayImage, radius: usize) -> Vec<Keypoint> {
    let (w, h) = response.dims();
    let r = response.data();
    let rows: Vec<Vec<Keypoint>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius).min(h - 1);
            'px: for x in 0..w {
                let idx = y * w + x;
                let v = r[idx];
                if !(v > 0.0) {
                    continue;
                }
                let x0 = x.saturating_sub(radius);
                let x1 = (x + radius).min(w - 1);
                for qy in y0..=y1 {
                    for qx in x0..=x1 {
                        let q = qy * w + qx;
                        let rq = r[q];
                        if rq > v || (rq == v && q < idx) {
                            continue 'px;
                        }
                    }
                }
                out.push(Keypoint { x: x as f64, y: y as f64, response: v });
            }
            out
        })
        .collect();
    rows.into_iter().flatten().collect()
}

/// Harris detection with LNMS, strongest `max_points` survivors first.
pub fn detect(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<Keypoint>> {
    cfg.validate()?;
    let response = corner_response(img, cfg.tensor_sigma)?;
    let mut kps = lnms(&response, cfg.lnms_radius);
    // stable: equal responses stay in row-major order
    kps.sort_by(|a, b| b.response.total_cmp(&a.response));
    kps.truncate(cfg.max_points);
    if kps.len() < cfg.min_points {
        return Err(Error::TooFewKeypoints { found: kps.len(), min_points: cfg.min_points });
    }
    Ok(kps)
}

/// CSV `x,y,response`, one keypoint per line, in the given order.
pub fn write_keypoints_csv(kps: &[Keypoint], mut out: impl Write) -> std::io::Result<()> {
    for k in kps {
        writeln!(out, "{},{},{}", k.x, k.y, k.response)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(radius: usize, max_points: usize, min_points: usize) -> DetectorConfig {
        DetectorConfig { lnms_radius: radius, max_points, min_points, ..Default::default() }
    }

    fn random_texture(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random_range(0..256) as f64)
    }

    /// Oracle: full-window scan without early exit, explicit tie rule.
    fn exhaustive_lnms(resp: &GrayImage, radius: usize) -> Vec<(usize, usize, f64)> {
        let (w, h) = resp.dims();
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                let v = resp.get(x, y);
                if v <= 0.0 {
                    continue;
                }
                let mut beaten = false;
                for qy in 0..h {
                    for qx in 0..w {
                        if (qx as isize - x as isize).abs() > radius as isize
                            || (qy as isize - y as isize).abs() > radius as isize
                            || (qx, qy) == (x, y)
                        {
                            continue;
                        }
                        let q = resp.get(qx, qy);
                        let earlier = (qy, qx) < (y, x);
                        if q > v || (q == v && earlier) {
                            beaten = true;
                        }
                    }
                }
                if !beaten {
                    out.push((x, y, v));
                }
            }
        }
        out
    }

    #[test]
    fn constant_image_has_no_response() {
        let img = GrayImage::filled(32, 32, 0.4);
        let r = corner_response(&img, 1.5).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            detect(&img, &cfg(5, 1000, 1)),
            Err(Error::TooFewKeypoints { found: 0, min_points: 1 })
        ));
    }

    #[test]
    fn step_edge_has_near_zero_response() {
        let img = GrayImage::from_fn(40, 40, |x, _| if x < 20 { 0.0 } else { 1.0 });
        let r = corner_response(&img, 1.5).unwrap();
        for y in 8..32 {
            for x in 5..35 {
                assert!(r.get(x, y).abs() < 1e-12, "{x},{y}: {}", r.get(x, y));
            }
        }
    }

    #[test]
    fn square_corners_are_the_strongest_maxima() {
        let img = GrayImage::from_fn(64, 64, |x, y| {
            if (22..42).contains(&x) && (22..42).contains(&y) { 1.0 } else { 0.0 }
        });
        let r = corner_response(&img, 1.5).unwrap();
        // exhaustive 3x3 local-max scan
        let mut maxima = vec![];
        for y in 1..63 {
            for x in 1..63 {
                let v = r.get(x, y);
                let is_max = (0..3).all(|j| {
                    (0..3).all(|i| (i, j) == (1, 1) || r.get(x + i - 1, y + j - 1) <= v)
                });
                if is_max && v > 0.0 {
                    maxima.push((v, x as f64, y as f64));
                }
            }
        }
        maxima.sort_by(|a, b| b.0.total_cmp(&a.0));
        let corners = [(21.5, 21.5), (41.5, 21.5), (21.5, 41.5), (41.5, 41.5)];
        for &(cx, cy) in &corners {
            let hit = maxima[..4].iter().any(|m| (m.1 - cx).abs() <= 2.0 && (m.2 - cy).abs() <= 2.0);
            assert!(hit, "no top-4 maximum near ({cx}, {cy}): {:?}", &maxima[..4]);
        }
    }

    #[test]
    fn lnms_ratio_examples() {
        assert_eq!(lnms_ratio((512, 512), (512, 512)), 1.0);
        assert_eq!(lnms_ratio((1000, 1000), (500, 500)), 2.0);
        assert_eq!(lnms_ratio((800, 600), (400, 300)), 2.0);
    }

    #[test]
    fn paired_radii_examples() {
        assert_eq!(paired_lnms_radii(5, (512, 512), (512, 512)), (5, 5));
        assert_eq!(paired_lnms_radii(5, (1000, 1000), (500, 500)), (10, 5));
        assert_eq!(paired_lnms_radii(5, (500, 500), (1000, 1000)), (5, 10));
    }

    #[test]
    fn checkerboard_keypoints_are_separated() {
        let img = GrayImage::from_fn(256, 256, |x, y| ((x / 32 + y / 32) % 2) as f64);
        let kps = detect(&img, &cfg(5, 1000, 1)).unwrap();
        assert!(!kps.is_empty());
        for (i, a) in kps.iter().enumerate() {
            for b in &kps[i + 1..] {
                assert!((a.x - b.x).abs().max((a.y - b.y).abs()) > 5.0);
            }
        }
    }

    #[test]
    fn lnms_matches_exhaustive_scan() {
        for seed in 0..3 {
            let img = random_texture(48, 40, seed);
            let resp = corner_response(&img, 1.5).unwrap();
            let got: Vec<_> = lnms(&resp, 5).iter().map(|k| (k.x as usize, k.y as usize, k.response)).collect();
            assert_eq!(got, exhaustive_lnms(&resp, 5));
        }
        // plateaus exercise the tie rule
        let flat = GrayImage::from_fn(30, 30, |x, y| if (x / 10 + y / 10) % 2 == 0 { 1.0 } else { 0.5 });
        let got: Vec<_> = lnms(&flat, 5).iter().map(|k| (k.x as usize, k.y as usize, k.response)).collect();
        assert_eq!(got, exhaustive_lnms(&flat, 5));
    }

    #[test]
    fn top_k_equals_brute_force_survivors() {
        let img = random_texture(256, 256, 7);
        let kps = detect(&img, &cfg(5, 100, 1)).unwrap();
        assert_eq!(kps.len(), 100);
        let resp = corner_response(&img, 1.5).unwrap();
        let mut all = exhaustive_lnms_fast_enough(&resp, 5);
        all.sort_by(|a, b| b.total_cmp(a));
        let got: Vec<f64> = kps.iter().map(|k| k.response).collect();
        assert_eq!(got, all[..100].to_vec());
    }

    // The O(N^2) oracle is too slow at 256x256; this one is a plain windowed
    // scan without early exit, still independent of `lnms`.
    fn exhaustive_lnms_fast_enough(resp: &GrayImage, radius: isize) -> Vec<f64> {
        let (w, h) = (resp.width() as isize, resp.height() as isize);
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                let v = resp.get(x as usize, y as usize);
                let mut ok = v > 0.0;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let (qx, qy) = (x + dx, y + dy);
                        if (dx, dy) == (0, 0) || qx < 0 || qy < 0 || qx >= w || qy >= h {
                            continue;
                        }
                        let q = resp.get(qx as usize, qy as usize);
                        if q > v || (q == v && (qy, qx) < (y, x)) {
                            ok = false;
                        }
                    }
                }
                if ok {
                    out.push(v);
                }
            }
        }
        out
    }

    #[test]
    fn emitted_keypoints_dominate_their_window() {
        let img = random_texture(96, 96, 3);
        let resp = corner_response(&img, 1.5).unwrap();
        let kps = detect(&img, &cfg(6, 1000, 1)).unwrap();
        for k in &kps {
            let (x, y) = (k.x as isize, k.y as isize);
            for dy in -6..=6isize {
                for dx in -6..=6isize {
                    let (qx, qy) = (x + dx, y + dy);
                    if qx >= 0 && qy >= 0 && qx < 96 && qy < 96 {
                        assert!(resp.get(qx as usize, qy as usize) <= k.response);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_and_additively_invariant() {
        let img = random_texture(128, 128, 5);
        let a = detect(&img, &cfg(5, 300, 1)).unwrap();
        let b = detect(&img, &cfg(5, 300, 1)).unwrap();
        assert_eq!(a, b);
        // integer-valued samples keep the shifted differences exact
        let shifted = img.map(|v| v + 37.0);
        assert_eq!(detect(&shifted, &cfg(5, 300, 1)).unwrap(), a);
    }

    #[test]
    fn rotation_covariance() {
        let img = random_texture(128, 128, 9);
        let smooth = crate::image::gaussian_blur(&img, 1.0).unwrap();
        let rot = GrayImage::from_fn(128, 128, |x, y| smooth.get(y, 127 - x));
        let c = cfg(5, 200, 1);
        let a = detect(&smooth, &c).unwrap();
        let b = detect(&rot, &c).unwrap();
        // rot(x, y) = smooth(y, 127 - x)  =>  original (u, v) sits at (127 - v, u)
        let hits = a
            .iter()
            .filter(|k| {
                let (rx, ry) = (127.0 - k.y, k.x);
                b.iter().any(|q| (q.x - rx).abs() <= 1.0 && (q.y - ry).abs() <= 1.0)
            })
            .count();
        assert!(hits as f64 >= 0.8 * a.len() as f64, "{hits}/{}", a.len());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(4, 10, 1).validate().is_err());
        assert!(cfg(5, 10, 11).validate().is_err());
        assert!(cfg(5, 10, 10).validate().is_ok());
    }

    #[test]
    fn csv_dump() {
        let kps = [Keypoint { x: 1.0, y: 2.0, response: 0.5 }, Keypoint { x: 3.0, y: 4.0, response: 0.25 }];
        let mut buf = vec![];
        write_keypoints_csv(&kps, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,2,0.5\n3,4,0.25\n");
    }
}
