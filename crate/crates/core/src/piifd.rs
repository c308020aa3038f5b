//! Partial-intensity-invariant gradient descriptors computed at every level
//! of a Gaussian pyramid.
//!
//! Each keypoint gets a main orientation in `[0, pi)` from the averaged
//! squared gradient around it. The descriptor window is sampled in that
//! rotated frame, gradient orientations are histogrammed per cell over the
//! full circle and then folded modulo pi, which makes the histograms
//! identical under intensity inversion. Because the main orientation is
//! only defined modulo pi, the 4x4 cell grid is symmetrized against its
//! 180-degree rotation: the output holds the sum and the absolute difference
//! of the grid and its rotated copy (first eight cells of each, 128 values).

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harris::Keypoint;
use crate::image::{bilinear, gradient, GradientField, GrayImage};
use crate::scale_space::Pyramid;

pub const DESCRIPTOR_LEN: usize = 128;
pub const DEFAULT_WINDOW: usize = 40;
/// Radius of the neighborhood used for the main orientation.
pub const ORIENTATION_RADIUS: usize = 12;

const GRID: usize = 4;
const FULL_BINS: usize = 16;
const HALF_BINS: usize = FULL_BINS / 2;
const CLAMP: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MainOrientation {
    /// Radians in `[0, pi)`.
    pub angle: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub values: [f64; DESCRIPTOR_LEN],
    pub octave: usize,
    pub layer: usize,
    pub keypoint_id: usize,
    pub orientation: MainOrientation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    WindowOutOfBounds,
    InvalidOrientation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkippedLevel {
    pub keypoint_id: usize,
    pub octave: usize,
    pub layer: usize,
    pub reason: SkipReason,
}

/// All descriptors of one image, ordered by keypoint, then octave, then layer.
#[derive(Clone, Debug, Default)]
pub struct DescriptorBundle {
    pub descriptors: Vec<Descriptor>,
    pub skipped: Vec<SkippedLevel>,
    pub num_keypoints: usize,
}

impl DescriptorBundle {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn for_keypoint(&self, id: usize) -> impl Iterator<Item = &Descriptor> {
        self.descriptors.iter().filter(move |d| d.keypoint_id == id)
    }
}

fn normalize_angle_pi(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI { 0.0 } else { r }
}

/// Main orientation from an image; see [`main_orientation_from`].
pub fn main_orientation(level_img: &GrayImage, pt: (f64, f64), radius: usize) -> Result<MainOrientation> {
    main_orientation_from(&gradient(level_img)?, pt, radius)
}

/// Dominant gradient axis from Gaussian-weighted squared gradients:
/// `angle = atan2(sum w 2 gx gy, sum w (gx^2 - gy^2)) / 2`, folded into `[0, pi)`.
pub fn main_orientation_from(grad: &GradientField, pt: (f64, f64), radius: usize) -> Result<MainOrientation> {
    let (w, h) = grad.dims();
    let r = radius as isize;
    let (cx, cy) = (pt.0.round() as isize, pt.1.round() as isize);
    let sigma = (radius as f64 / 2.0).max(0.5);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let r2 = (radius * radius) as f64;
    let (mut a, mut b, mut wsum) = (0.0, 0.0, 0.0);
    let (mut inside, mut total) = (0usize, 0usize);
    for dy in -r..=r {
        for dx in -r..=r {
            total += 1;
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                continue;
            }
            inside += 1;
            let (ox, oy) = (x as f64 - pt.0, y as f64 - pt.1);
            let d2 = ox * ox + oy * oy;
            if d2 > r2 {
                continue;
            }
            let wt = (-d2 * inv).exp();
            let (gx, gy) = (grad.gx.get(x as usize, y as usize), grad.gy.get(x as usize, y as usize));
            a += wt * (gx * gx - gy * gy);
            b += wt * 2.0 * gx * gy;
            wsum += wt;
        }
    }
    if (inside as f64) < 0.75 * total as f64 {
        return Err(Error::WindowOutOfBounds);
    }
    let valid = wsum > 0.0 && (a * a + b * b).sqrt() >= 1e-9 * wsum;
    let angle = if valid { normalize_angle_pi(0.5 * b.atan2(a)) } else { 0.0 };
    Ok(MainOrientation { angle, valid })
}

/// Precomputed per-sample geometry for an `S x S` window: offsets from the
/// center, Gaussian weight and trilinear cell assignment.
struct WindowLayout {
    samples: Vec<SampleSlot>,
    half: f64,
}

struct SampleSlot {
    u: f64,
    v: f64,
    weight: f64,
    cells: [(usize, f64); 4],
    n_cells: usize,
}

impl WindowLayout {
    fn new(side: usize) -> Self {
        let s = side as f64;
        let half = s / 2.0;
        let cell = s / GRID as f64;
        let sigma = s / 2.0;
        let mut samples = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                let u = -half + 0.5 + i as f64;
                let v = -half + 0.5 + j as f64;
                let weight = (-(u * u + v * v) / (2.0 * sigma * sigma)).exp();
                // cell centers sit at integer positions of (cu, cv)
                let cu = (u + half) / cell - 0.5;
                let cv = (v + half) / cell - 0.5;
                let (c0, r0) = (cu.floor(), cv.floor());
                let (fc, fr) = (cu - c0, cv - r0);
                let mut cells = [(0usize, 0.0); 4];
                let mut n_cells = 0;
                for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
                    for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                        let (rr, cc) = (r0 + dr, c0 + dc);
                        if wr * wc > 0.0 && (0.0..GRID as f64).contains(&rr) && (0.0..GRID as f64).contains(&cc) {
                            cells[n_cells] = ((rr as usize) * GRID + cc as usize, wr * wc);
                            n_cells += 1;
                        }
                    }
                }
                samples.push(SampleSlot { u, v, weight, cells, n_cells });
            }
        }
        WindowLayout { samples, half }
    }
}

fn window_fits(dims: (usize, usize), pt: (f64, f64), angle: f64, half: f64) -> bool {
    let (c, s) = (angle.cos(), angle.sin());
    let (w, h) = ((dims.0 - 1) as f64, (dims.1 - 1) as f64);
    [(-half, -half), (half, -half), (-half, half), (half, half)].iter().all(|&(u, v)| {
        let x = pt.0 + u * c - v * s;
        let y = pt.1 + u * s + v * c;
        x >= 0.0 && y >= 0.0 && x <= w && y <= h
    })
}

/// Descriptor from an image; see [`describe_from`].
pub fn describe(level_img: &GrayImage, pt: (f64, f64), ori: MainOrientation, window: usize) -> Result<[f64; DESCRIPTOR_LEN]> {
    describe_from(&gradient(level_img)?, pt, ori, window)
}

/// 128-component descriptor of the `window x window` patch around `pt`
/// rotated so that `ori.angle` points along the patch x axis.
pub fn describe_from(
    grad: &GradientField,
    pt: (f64, f64),
    ori: MainOrientation,
    window: usize,
) -> Result<[f64; DESCRIPTOR_LEN]> {
    describe_with_layout(grad, pt, ori, &WindowLayout::new(window))
}

fn describe_with_layout(
    grad: &GradientField,
    pt: (f64, f64),
    ori: MainOrientation,
    layout: &WindowLayout,
) -> Result<[f64; DESCRIPTOR_LEN]> {
    if !ori.valid {
        return Err(Error::InvalidOrientation);
    }
    let dims = grad.dims();
    if !window_fits(dims, pt, ori.angle, layout.half) {
        return Err(Error::WindowOutOfBounds);
    }
    let (c, s) = (ori.angle.cos(), ori.angle.sin());
    let (gxd, gyd) = (grad.gx.data(), grad.gy.data());
    let mut hist = [[0.0f64; FULL_BINS]; GRID * GRID];
    let bin_width = 2.0 * PI / FULL_BINS as f64;
    for slot in &layout.samples {
        let x = pt.0 + slot.u * c - slot.v * s;
        let y = pt.1 + slot.u * s + slot.v * c;
        let (Some(gx), Some(gy)) = (bilinear(gxd, dims.0, dims.1, x, y), bilinear(gyd, dims.0, dims.1, x, y)) else {
            continue;
        };
        let gu = gx * c + gy * s;
        let gv = -gx * s + gy * c;
        let mag = (gu * gu + gv * gv).sqrt();
        if mag == 0.0 {
            continue;
        }
        let fb = gv.atan2(gu).rem_euclid(2.0 * PI) / bin_width;
        let b0 = fb.floor();
        let fr = fb - b0;
        let b0 = (b0 as usize) % FULL_BINS;
        let b1 = (b0 + 1) % FULL_BINS;
        let m = mag * slot.weight;
        for &(cell, wc) in &slot.cells[..slot.n_cells] {
            hist[cell][b0] += m * wc * (1.0 - fr);
            hist[cell][b1] += m * wc * fr;
        }
    }

    // fold opposite directions together
    let mut folded = [[0.0f64; HALF_BINS]; GRID * GRID];
    for (f, h) in folded.iter_mut().zip(&hist) {
        for i in 0..HALF_BINS {
            f[i] = h[i] + h[i + HALF_BINS];
        }
    }

    let mut out = [0.0f64; DESCRIPTOR_LEN];
    let half_cells = GRID * GRID / 2;
    for cell in 0..half_cells {
        let opposite = GRID * GRID - 1 - cell;
        for i in 0..HALF_BINS {
            let (p, q) = (folded[cell][i], folded[opposite][i]);
            out[cell * HALF_BINS + i] = p + q;
            out[DESCRIPTOR_LEN / 2 + cell * HALF_BINS + i] = (p - q).abs();
        }
    }
    if !clamp_normalize(&mut out) {
        return Err(Error::InvalidOrientation);
    }
    Ok(out)
}

/// L2-normalize, clamp components at `CLAMP`, renormalize. False for a zero vector.
fn clamp_normalize(v: &mut [f64]) -> bool {
    if !normalize_l2(v) {
        return false;
    }
    for x in v.iter_mut() {
        *x = x.min(CLAMP);
    }
    normalize_l2(v)
}

fn normalize_l2(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Describes every keypoint at every pyramid level whose window fits.
pub fn describe_multiscale(pyr: &Pyramid, keypoints: &[Keypoint], window: usize) -> DescriptorBundle {
    let layout = WindowLayout::new(window);
    let levels: Vec<(usize, usize)> = pyr
        .octaves
        .iter()
        .enumerate()
        .flat_map(|(o, oct)| (0..oct.layers.len()).map(move |l| (o, l)))
        .collect();
    let grads: Vec<GradientField> = levels
        .par_iter()
        .map(|&(o, l)| gradient(&pyr.level(o, l).image).expect("pyramid levels are at least 16 px"))
        .collect();

    let results: Vec<std::result::Result<Descriptor, SkippedLevel>> = (0..keypoints.len())
        .into_par_iter()
        .flat_map_iter(|id| {
            let kp = keypoints[id];
            let layout = &layout;
            levels.iter().zip(&grads).map(move |(&(octave, layer), grad)| {
                let skip = |reason| SkippedLevel { keypoint_id: id, octave, layer, reason };
                let pt = pyr.map_to_level((kp.x, kp.y), octave).expect("octave in range");
                let ori = match main_orientation_from(grad, pt, ORIENTATION_RADIUS) {
                    Ok(o) if o.valid => o,
                    Ok(_) => return Err(skip(SkipReason::InvalidOrientation)),
                    Err(_) => return Err(skip(SkipReason::WindowOutOfBounds)),
                };
                match describe_with_layout(grad, pt, ori, layout) {
                    Ok(values) => Ok(Descriptor { values, octave, layer, keypoint_id: id, orientation: ori }),
                    Err(Error::InvalidOrientation) => Err(skip(SkipReason::InvalidOrientation)),
                    Err(_) => Err(skip(SkipReason::WindowOutOfBounds)),
                }
            })
        })
        .collect();

    let mut bundle = DescriptorBundle { num_keypoints: keypoints.len(), ..Default::default() };
    for r in results {
        match r {
            Ok(d) => bundle.descriptors.push(d),
            Err(s) => bundle.skipped.push(s),
        }
    }
    bundle
}

/// Binary dump: per descriptor `keypoint_id u32, octave u8, layer u8,
/// orientation f32, 128 x f32`, little-endian.
pub fn write_descriptors(bundle: &DescriptorBundle, mut out: impl Write) -> std::io::Result<()> {
    for d in &bundle.descriptors {
        out.write_all(&(d.keypoint_id as u32).to_le_bytes())?;
        out.write_all(&[d.octave as u8, d.layer as u8])?;
        out.write_all(&(d.orientation.angle as f32).to_le_bytes())?;
        for v in &d.values {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// One record of the binary dump.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRecord {
    pub keypoint_id: u32,
    pub octave: u8,
    pub layer: u8,
    pub orientation: f32,
    pub values: Vec<f32>,
}

pub fn read_descriptors(mut input: impl Read) -> std::io::Result<Vec<DescriptorRecord>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    const REC: usize = 4 + 2 + 4 + 4 * DESCRIPTOR_LEN;
    if buf.len() % REC != 0 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "truncated descriptor record"));
    }
    let f32_at = |b: &[u8], i: usize| f32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    Ok(buf
        .chunks_exact(REC)
        .map(|r| DescriptorRecord {
            keypoint_id: u32::from_le_bytes(r[0..4].try_into().unwrap()),
            octave: r[4],
            layer: r[5],
            orientation: f32_at(r, 6),
            values: (0..DESCRIPTOR_LEN).map(|k| f32_at(r, 10 + 4 * k)).collect(),
        })
        .collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harris::{detect, DetectorConfig};
    use crate::image::{gaussian_blur, normalize};
    use crate::scale_space::{build_pyramid, PyramidConfig};
    use crate::synthetic::{synthetic_pair, textured_image, trial_transform, IntensityMode};

    fn scene(size: usize, seed: u64) -> GrayImage {
        gaussian_blur(&normalize(&textured_image(size, size, seed)), 1.0).unwrap()
    }

    fn interior_keypoints(img: &GrayImage, margin: f64, n: usize) -> Vec<Keypoint> {
        let cfg = DetectorConfig { max_points: 4 * n, min_points: 1, ..Default::default() };
        let (w, h) = (img.width() as f64, img.height() as f64);
        detect(img, &cfg)
            .unwrap()
            .into_iter()
            .filter(|k| k.x >= margin && k.y >= margin && k.x < w - margin && k.y < h - margin)
            .take(n)
            .collect()
    }

    fn fraction(ok: usize, total: usize) -> f64 {
        ok as f64 / total as f64
    }

    #[test]
    fn flat_patch_is_invalid() {
        let img = GrayImage::filled(64, 64, 0.3);
        assert!(!main_orientation(&img, (32.0, 32.0), ORIENTATION_RADIUS).unwrap().valid);
    }

    #[test]
    fn vertical_edge_gives_zero_angle() {
        let img = GrayImage::from_fn(64, 64, |x, _| ((x as f64 - 31.5) / 2.0).tanh());
        let o = main_orientation(&img, (32.0, 32.0), ORIENTATION_RADIUS).unwrap();
        assert!(o.valid);
        assert!(o.angle.abs() < 1e-12, "{}", o.angle);
    }

    #[test]
    fn rotated_edge_angle() {
        for deg in [30.0f64, 75.0, 120.0, 165.0] {
            let t = deg.to_radians();
            let img = GrayImage::from_fn(96, 96, |x, y| {
                (((x as f64 - 48.0) * t.cos() + (y as f64 - 48.0) * t.sin()) / 2.0).tanh()
            });
            let o = main_orientation(&img, (48.0, 48.0), ORIENTATION_RADIUS).unwrap();
            assert!(angle_err(o.angle, t) < 3f64.to_radians(), "{deg}: {}", o.angle.to_degrees());
        }
    }

    fn angle_err(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(PI);
        d.min(PI - d)
    }

    #[test]
    fn orientation_near_border_is_out_of_bounds() {
        let img = scene(64, 3);
        assert!(matches!(main_orientation(&img, (1.0, 1.0), ORIENTATION_RADIUS), Err(Error::WindowOutOfBounds)));
    }

    #[test]
    fn descriptor_shape_and_norm() {
        let img = scene(128, 1);
        let grad = gradient(&img).unwrap();
        for kp in interior_keypoints(&img, 30.0, 40) {
            let ori = main_orientation_from(&grad, (kp.x, kp.y), ORIENTATION_RADIUS).unwrap();
            let d = describe_from(&grad, (kp.x, kp.y), ori, DEFAULT_WINDOW).unwrap();
            assert_eq!(d.len(), DESCRIPTOR_LEN);
            assert!(d.iter().all(|&v| v >= 0.0));
            let n: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_orientation_and_bounds_are_rejected() {
        let img = scene(64, 2);
        let bad = MainOrientation { angle: 0.0, valid: false };
        assert!(matches!(describe(&img, (32.0, 32.0), bad, 40), Err(Error::InvalidOrientation)));
        let ok = MainOrientation { angle: 0.3, valid: true };
        assert!(matches!(describe(&img, (15.0, 32.0), ok, 40), Err(Error::WindowOutOfBounds)));
        // the rotated corners reach further than the axis-aligned ones
        assert!(describe(&img, (21.0, 32.0), MainOrientation { angle: 0.0, valid: true }, 40).is_ok());
        assert!(describe(&img, (21.0, 32.0), MainOrientation { angle: PI / 4.0, valid: true }, 40).is_err());
    }

    #[test]
    fn clamp_contract() {
        let mut v = [0.01f64; DESCRIPTOR_LEN];
        v[5] = 1.0;
        v[77] = 0.6;
        let mut expect = v;
        let n: f64 = expect.iter().map(|x| x * x).sum::<f64>().sqrt();
        expect.iter_mut().for_each(|x| *x = (*x / n).min(0.2));
        assert!(expect.iter().all(|&x| x <= 0.2 + 1e-12));
        let m: f64 = expect.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(clamp_normalize(&mut v));
        for (a, b) in v.iter().zip(&expect) {
            assert!((a - b / m).abs() < 1e-12);
        }
        assert!(!clamp_normalize(&mut [0.0; 8]));
    }

    #[test]
    fn inversion_invariance() {
        let img = scene(160, 4);
        let inv = img.map(|v| 1.0 - v);
        let (g, gi) = (gradient(&img).unwrap(), gradient(&inv).unwrap());
        let kps = interior_keypoints(&img, 30.0, 60);
        let mut ok = 0;
        for kp in &kps {
            let pt = (kp.x, kp.y);
            let ori = main_orientation_from(&g, pt, ORIENTATION_RADIUS).unwrap();
            let ori_inv = main_orientation_from(&gi, pt, ORIENTATION_RADIUS).unwrap();
            assert!(angle_err(ori.angle, ori_inv.angle) < 1e-9);
            let c = cosine(&describe_from(&g, pt, ori, 40).unwrap(), &describe_from(&gi, pt, ori, 40).unwrap());
            ok += (c >= 0.99) as usize;
        }
        assert!(fraction(ok, kps.len()) >= 0.95, "{ok}/{}", kps.len());
    }

    #[test]
    fn half_turn_symmetry() {
        let img = scene(160, 5);
        let (w, h) = img.dims();
        let rot = GrayImage::from_fn(w, h, |x, y| img.get(w - 1 - x, h - 1 - y));
        let (g, gr) = (gradient(&img).unwrap(), gradient(&rot).unwrap());
        let kps = interior_keypoints(&img, 30.0, 60);
        let mut ok = 0;
        for kp in &kps {
            let pt = (kp.x, kp.y);
            let pr = ((w - 1) as f64 - kp.x, (h - 1) as f64 - kp.y);
            let ori = main_orientation_from(&g, pt, ORIENTATION_RADIUS).unwrap();
            let ori_r = main_orientation_from(&gr, pr, ORIENTATION_RADIUS).unwrap();
            assert!(angle_err(ori.angle, ori_r.angle) < 1e-9);
            let c = cosine(&describe_from(&g, pt, ori, 40).unwrap(), &describe_from(&gr, pr, ori_r, 40).unwrap());
            ok += (c >= 0.99) as usize;
        }
        assert!(fraction(ok, kps.len()) >= 0.95, "{ok}/{}", kps.len());
    }

    #[test]
    fn gamma_robustness() {
        let img = scene(160, 6);
        let gam = img.map(|v| v.max(0.0).sqrt());
        let (g, gg) = (gradient(&img).unwrap(), gradient(&gam).unwrap());
        let kps = interior_keypoints(&img, 30.0, 60);
        let mut ok = 0;
        for kp in &kps {
            let pt = (kp.x, kp.y);
            let (Ok(o1), Ok(o2)) = (main_orientation_from(&g, pt, 12), main_orientation_from(&gg, pt, 12)) else { continue };
            let (Ok(d1), Ok(d2)) = (describe_from(&g, pt, o1, 40), describe_from(&gg, pt, o2, 40)) else { continue };
            ok += (cosine(&d1, &d2) >= 0.90) as usize;
        }
        assert!(fraction(ok, kps.len()) >= 0.90, "{ok}/{}", kps.len());
    }

    #[test]
    fn rotation_invariance() {
        let src = scene(256, 7);
        let kps = interior_keypoints(&src, 60.0, 60);
        let g = gradient(&src).unwrap();
        for deg in [15.0f64, 45.0, 75.0] {
            let gt = trial_transform(src.dims(), deg.to_radians(), 1.0, (0.0, 0.0), 1);
            let pair = synthetic_pair(&src, &gt, IntensityMode::Identity, 0.0, src.dims(), 0).unwrap();
            let gm = gradient(&pair.moving).unwrap();
            let inv = gt.inverse().unwrap();
            let (mut ok, mut total) = (0, 0);
            for kp in &kps {
                let pt = (kp.x, kp.y);
                let pm = inv.apply(pt).unwrap();
                let (Ok(o1), Ok(o2)) = (main_orientation_from(&g, pt, 12), main_orientation_from(&gm, pm, 12)) else { continue };
                let (Ok(d1), Ok(d2)) = (describe_from(&g, pt, o1, 40), describe_from(&gm, pm, o2, 40)) else { continue };
                total += 1;
                ok += (cosine(&d1, &d2) >= 0.90) as usize;
            }
            assert!(total >= 40);
            assert!(fraction(ok, total) >= 0.80, "{deg}: {ok}/{total}");
        }
    }

    fn pyramid_of(img: &GrayImage) -> Pyramid {
        build_pyramid(img, &PyramidConfig::default()).unwrap()
    }

    #[test]
    fn centered_keypoint_is_described_at_every_level() {
        let img = scene(256, 8);
        let pyr = pyramid_of(&img);
        let kp = Keypoint { x: 128.0, y: 128.0, response: 1.0 };
        let b = describe_multiscale(&pyr, &[kp], 40);
        assert_eq!(b.len(), 12);
        assert!(b.skipped.is_empty());
        let levels: Vec<(usize, usize)> = b.descriptors.iter().map(|d| (d.octave, d.layer)).collect();
        let expect: Vec<(usize, usize)> = (0..3).flat_map(|o| (0..4).map(move |l| (o, l))).collect();
        assert_eq!(levels, expect);
    }

    #[test]
    fn border_keypoint_skips_fine_levels() {
        let img = scene(256, 9);
        let pyr = pyramid_of(&img);
        let kp = Keypoint { x: 10.0, y: 128.0, response: 1.0 };
        let b = describe_multiscale(&pyr, &[kp], 40);
        assert!(b.descriptors.iter().all(|d| d.octave > 0));
        assert!(b.skipped.iter().filter(|s| s.octave == 0).count() == 4);
        assert_eq!(b.len() + b.skipped.len(), 12);
        assert!(b.skipped.iter().all(|s| s.reason == SkipReason::WindowOutOfBounds));
    }

    #[test]
    fn constant_image_gives_empty_bundle() {
        let img = GrayImage::filled(128, 128, 0.5);
        let pyr = pyramid_of(&img);
        let kps: Vec<Keypoint> = (0..5).map(|i| Keypoint { x: 40.0 + 10.0 * i as f64, y: 64.0, response: 0.0 }).collect();
        let b = describe_multiscale(&pyr, &kps, 40);
        assert!(b.is_empty());
        assert_eq!(b.num_keypoints, 5);
        assert!(b.skipped.iter().any(|s| s.reason == SkipReason::InvalidOrientation));
    }

    #[test]
    fn multiscale_matches_single_level_calls() {
        let img = scene(128, 10);
        let pyr = pyramid_of(&img);
        let kps = interior_keypoints(&img, 20.0, 5);
        let b = describe_multiscale(&pyr, &kps, 40);
        assert!(b.len() <= kps.len() * 12);
        for d in &b.descriptors {
            let kp = kps[d.keypoint_id];
            let level = &pyr.level(d.octave, d.layer).image;
            let pt = pyr.map_to_level((kp.x, kp.y), d.octave).unwrap();
            let ori = main_orientation(level, pt, ORIENTATION_RADIUS).unwrap();
            assert_eq!(ori, d.orientation);
            assert_eq!(describe(level, pt, ori, 40).unwrap(), d.values);
        }
        let mut buf = Vec::new();
        write_descriptors(&b, &mut buf).unwrap();
        let recs = read_descriptors(buf.as_slice()).unwrap();
        assert_eq!(recs.len(), b.len());
        for (r, d) in recs.iter().zip(&b.descriptors) {
            assert_eq!((r.keypoint_id as usize, r.octave as usize, r.layer as usize), (d.keypoint_id, d.octave, d.layer));
            assert!(r.values.iter().zip(&d.values).all(|(a, b)| (*a as f64 - b).abs() < 1e-6));
        }
        assert!(read_descriptors(&buf[..buf.len() - 1]).is_err());
    }
}
