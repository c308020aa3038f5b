//! Least-squares similarity, affine and projective transforms (moving to
//! fixed), point mapping and inverse-mapped warping.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub type Point = (f64, f64);
/// A correspondence: `(fixed, moving)`.
pub type PointPair = (Point, Point);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Similarity,
    Affine,
    Projective,
}

impl ModelKind {
    pub fn min_points(self) -> usize {
        match self {
            ModelKind::Similarity => 2,
            ModelKind::Affine => 3,
            ModelKind::Projective => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Similarity => "similarity",
            ModelKind::Affine => "affine",
            ModelKind::Projective => "projective",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "similarity" => Ok(ModelKind::Similarity),
            "affine" => Ok(ModelKind::Affine),
            "projective" => Ok(ModelKind::Projective),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// 3x3 homogeneous transform mapping moving-image points onto the fixed image.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformModel {
    pub kind: ModelKind,
    /// Row-major, scaled so that `matrix[2][2] == 1`.
    pub matrix: [[f64; 3]; 3],
    pub rmse: f64,
    pub n_points: usize,
}

impl TransformModel {
    pub fn identity() -> Self {
        Self::from_matrix(ModelKind::Similarity, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_matrix(kind: ModelKind, matrix: [[f64; 3]; 3]) -> Self {
        TransformModel { kind, matrix, rmse: 0.0, n_points: 0 }
    }

    /// Rotation by `angle` radians and isotropic `scale` about `center`,
    /// followed by a translation.
    pub fn similarity(angle: f64, scale: f64, center: Point, translation: Point) -> Self {
        let (c, s) = (scale * angle.cos(), scale * angle.sin());
        let tx = center.0 - c * center.0 + s * center.1 + translation.0;
        let ty = center.1 - s * center.0 - c * center.1 + translation.1;
        Self::from_matrix(ModelKind::Similarity, [[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]])
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::from_matrix(ModelKind::Similarity, [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
    }

    fn to_na(&self) -> Matrix3<f64> {
        let m = &self.matrix;
        Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2])
    }

    fn from_na(kind: ModelKind, m: &Matrix3<f64>) -> Result<Self> {
        let s = m[(2, 2)];
        if !(s.abs() > 1e-12) || !m.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularTransform);
        }
        let matrix = std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)] / s));
        Ok(TransformModel::from_matrix(kind, matrix))
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = self.to_na();
        let inv = m.try_inverse().ok_or(Error::SingularTransform)?;
        let cond = m.norm() * inv.norm();
        if !cond.is_finite() || cond > 1e14 {
            return Err(Error::SingularTransform);
        }
        Self::from_na(self.kind, &inv)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &TransformModel) -> Result<Self> {
        let kind = self.kind.max_kind(first.kind);
        Self::from_na(kind, &(self.to_na() * first.to_na()))
    }

    pub fn apply(&self, pt: Point) -> Result<Point> {
        let m = &self.matrix;
        let w = m[2][0] * pt.0 + m[2][1] * pt.1 + m[2][2];
        if w.abs() <= 1e-12 {
            return Err(Error::PointAtInfinity);
        }
        Ok((
            (m[0][0] * pt.0 + m[0][1] * pt.1 + m[0][2]) / w,
            (m[1][0] * pt.0 + m[1][1] * pt.1 + m[1][2]) / w,
        ))
    }

    /// Writes the transform file: comment lines with kind, rmse and point
    /// count, then the three matrix rows.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# kind: {}", self.kind)?;
        writeln!(out, "# rmse: {:.15e}", self.rmse)?;
        writeln!(out, "# n_points: {}", self.n_points)?;
        for row in &self.matrix {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", row[0], row[1], row[2])?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> std::io::Result<Self> {
        let bad = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
        let mut kind = ModelKind::Projective;
        let (mut rmse, mut n_points) = (0.0, 0);
        let mut values = Vec::with_capacity(9);
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, val)) = comment.split_once(':') {
                    let val = val.trim();
                    match key.trim() {
                        "kind" => kind = val.parse().map_err(bad)?,
                        "rmse" => rmse = val.parse().map_err(|e| bad(format!("{e}")))?,
                        "n_points" => n_points = val.parse().map_err(|e| bad(format!("{e}")))?,
                        _ => {}
                    }
                }
                continue;
            }
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|e| bad(format!("{e}")))?);
            }
        }
        if values.len() != 9 {
            return Err(bad(format!("expected 9 matrix entries, found {}", values.len())));
        }
        let matrix = std::array::from_fn(|r| std::array::from_fn(|c| values[3 * r + c]));
        Ok(TransformModel { kind, matrix, rmse, n_points })
    }
}

impl ModelKind {
    fn max_kind(self, other: ModelKind) -> ModelKind {
        let rank = |k: ModelKind| k.min_points();
        if rank(self) >= rank(other) { self } else { other }
    }
}

/// `sqrt(mean |fixed - T(moving)|^2)`; infinite if a point maps to infinity.
pub fn residual_rmse(t: &TransformModel, pairs: &[PointPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for &(f, m) in pairs {
        match t.apply(m) {
            Ok(p) => acc += (f.0 - p.0).powi(2) + (f.1 - p.1).powi(2),
            Err(_) => return f64::INFINITY,
        }
    }
    (acc / pairs.len() as f64).sqrt()
}

/// Least-squares fit of a `kind` transform to `(fixed, moving)` pairs.
pub fn estimate(pairs: &[PointPair], kind: ModelKind) -> Result<TransformModel> {
    let needed = kind.min_points();
    if pairs.len() < needed {
        return Err(Error::InsufficientPoints { kind, needed, got: pairs.len() });
    }
    let matrix = match kind {
        ModelKind::Similarity => fit_similarity(pairs)?,
        ModelKind::Affine => fit_affine(pairs)?,
        ModelKind::Projective => fit_projective(pairs)?,
    };
    let mut t = TransformModel::from_na(kind, &matrix).map_err(|_| Error::DegenerateConfiguration(kind))?;
    t.rmse = residual_rmse(&t, pairs);
    t.n_points = pairs.len();
    Ok(t)
}

fn centroid(pts: impl Iterator<Item = Point> + Clone) -> Point {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    (sx / n, sy / n)
}

fn fit_similarity(pairs: &[PointPair]) -> Result<Matrix3<f64>> {
    let cf = centroid(pairs.iter().map(|p| p.0));
    let cm = centroid(pairs.iter().map(|p| p.1));
    let (mut sxx, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for &(f, m) in pairs {
        let (x, y) = (m.0 - cm.0, m.1 - cm.1);
        let (u, v) = (f.0 - cf.0, f.1 - cf.1);
        sxx += x * x + y * y;
        sa += x * u + y * v;
        sb += x * v - y * u;
    }
    let spread = pairs.iter().map(|p| p.1 .0.abs() + p.1 .1.abs()).fold(1.0, f64::max);
    if sxx <= 1e-18 * spread * spread * pairs.len() as f64 {
        return Err(Error::DegenerateConfiguration(ModelKind::Similarity));
    }
    let (a, b) = (sa / sxx, sb / sxx);
    let tx = cf.0 - (a * cm.0 - b * cm.1);
    let ty = cf.1 - (b * cm.0 + a * cm.1);
    Ok(Matrix3::new(a, -b, tx, b, a, ty, 0.0, 0.0, 1.0))
}

fn fit_affine(pairs: &[PointPair]) -> Result<Matrix3<f64>> {
    let cf = centroid(pairs.iter().map(|p| p.0));
    let cm = centroid(pairs.iter().map(|p| p.1));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut sux, mut suy, mut svx, mut svy) = (0.0, 0.0, 0.0, 0.0);
    for &(f, m) in pairs {
        let (x, y) = (m.0 - cm.0, m.1 - cm.1);
        let (u, v) = (f.0 - cf.0, f.1 - cf.1);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sux += u * x;
        suy += u * y;
        svx += v * x;
        svy += v * y;
    }
    let det = sxx * syy - sxy * sxy;
    let tr = sxx + syy;
    if !(tr > 0.0) || det <= 1e-12 * tr * tr {
        return Err(Error::DegenerateConfiguration(ModelKind::Affine));
    }
    // [a b] = [sux suy] * S^-1, same for [c d]
    let (i00, i01, i11) = (syy / det, -sxy / det, sxx / det);
    let (a, b) = (sux * i00 + suy * i01, sux * i01 + suy * i11);
    let (c, d) = (svx * i00 + svy * i01, svx * i01 + svy * i11);
    let tx = cf.0 - (a * cm.0 + b * cm.1);
    let ty = cf.1 - (c * cm.0 + d * cm.1);
    Ok(Matrix3::new(a, b, tx, c, d, ty, 0.0, 0.0, 1.0))
}

/// Similarity that moves the centroid to the origin and scales the RMS
/// radius to sqrt(2).
fn conditioning(pts: impl Iterator<Item = Point> + Clone) -> Matrix3<f64> {
    let c = centroid(pts.clone());
    let n = pts.clone().count() as f64;
    let ms = pts.map(|p| (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sum::<f64>() / n;
    let s = if ms > 0.0 { (2.0 / ms).sqrt() } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.0, 0.0, s, -s * c.1, 0.0, 0.0, 1.0)
}

fn transform_pt(m: &Matrix3<f64>, p: Point) -> Point {
    let v = m * Vector3::new(p.0, p.1, 1.0);
    (v[0] / v[2], v[1] / v[2])
}

fn collinear(p: Point, q: Point, r: Point) -> bool {
    let cross = (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let scale = ((q.0 - p.0).hypot(q.1 - p.1)) * ((r.0 - p.0).hypot(r.1 - p.1));
    cross.abs() <= 1e-9 * scale.max(1e-300)
}

/// Normalized direct linear transform: smallest right singular vector of
/// the 2n x 9 design matrix in conditioned coordinates. Returns the
/// homography in conditioned coordinates together with the two
/// conditioning matrices.
pub(crate) fn dlt_conditioned(pairs: &[PointPair]) -> Result<(Matrix3<f64>, Matrix3<f64>, Matrix3<f64>)> {
    let degenerate = Error::DegenerateConfiguration(ModelKind::Projective);
    let tf = conditioning(pairs.iter().map(|p| p.0));
    let tm = conditioning(pairs.iter().map(|p| p.1));
    let n = pairs.len();
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, &(f, m)) in pairs.iter().enumerate() {
        let (x, y) = transform_pt(&tm, m);
        let (u, v) = transform_pt(&tf, f);
        let r = 2 * k;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(degenerate.clone())?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (s_min, s_next, s_max) = (
        svd.singular_values[order[0]],
        svd.singular_values[order[1]],
        svd.singular_values[order[order.len() - 1]],
    );
    // a one-dimensional null space is required for a unique solution
    if !(s_next > 1e-10 * s_max) || !s_min.is_finite() {
        return Err(degenerate);
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    Ok((hn, tf, tm))
}

/// Projective fit: normalized DLT, then Levenberg-Marquardt on the
/// geometric reprojection error, also started from the affine fit so the
/// result never fits worse than the affine model.
fn fit_projective(pairs: &[PointPair]) -> Result<Matrix3<f64>> {
    let degenerate = Error::DegenerateConfiguration(ModelKind::Projective);
    if pairs.len() == 4 {
        let m: Vec<Point> = pairs.iter().map(|p| p.1).collect();
        let f: Vec<Point> = pairs.iter().map(|p| p.0).collect();
        for pts in [&m, &f] {
            for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
                if collinear(pts[i], pts[j], pts[k]) {
                    return Err(degenerate);
                }
            }
        }
    }
    let (hn, tf, tm) = dlt_conditioned(pairs)?;
    let tf_inv = tf.try_inverse().ok_or(degenerate.clone())?;
    let cond: Vec<PointPair> = pairs.iter().map(|&(f, m)| (transform_pt(&tf, f), transform_pt(&tm, m))).collect();

    let mut starts = vec![hn];
    if let Ok(aff) = fit_affine(&cond) {
        starts.push(aff);
    }
    let best = starts
        .into_iter()
        .filter_map(|h0| {
            let s = h0[(2, 2)];
            if s.abs() < 1e-12 {
                return None;
            }
            let h = refine_homography(&cond, &(h0 / s));
            let cost = geometric_cost(&cond, &h);
            cost.is_finite().then_some((h, cost))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(degenerate)?;
    Ok(tf_inv * best.0 * tm)
}

fn geometric_cost(pairs: &[PointPair], h: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for &(f, m) in pairs {
        let w = h[(2, 0)] * m.0 + h[(2, 1)] * m.1 + h[(2, 2)];
        if w.abs() <= 1e-12 {
            return f64::INFINITY;
        }
        let u = (h[(0, 0)] * m.0 + h[(0, 1)] * m.1 + h[(0, 2)]) / w;
        let v = (h[(1, 0)] * m.0 + h[(1, 1)] * m.1 + h[(1, 2)]) / w;
        acc += (f.0 - u).powi(2) + (f.1 - v).powi(2);
    }
    acc
}

/// Levenberg-Marquardt over the eight free entries (`h22 = 1`). Only
/// cost-decreasing steps are accepted.
fn refine_homography(pairs: &[PointPair], h0: &Matrix3<f64>) -> Matrix3<f64> {
    let to_h = |p: &SVector<f64, 8>| Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0);
    let mut p = SVector::<f64, 8>::from_fn(|i, _| h0[(i / 3, i % 3)]);
    let mut cost = geometric_cost(pairs, &to_h(&p));
    if !cost.is_finite() {
        return *h0;
    }
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let mut jtj = SMatrix::<f64, 8, 8>::zeros();
        let mut jtr = SVector::<f64, 8>::zeros();
        for &(f, m) in pairs {
            let (x, y) = m;
            let w = p[6] * x + p[7] * y + 1.0;
            let u = (p[0] * x + p[1] * y + p[2]) / w;
            let v = (p[3] * x + p[4] * y + p[5]) / w;
            let ju = SVector::<f64, 8>::from_column_slice(&[x / w, y / w, 1.0 / w, 0.0, 0.0, 0.0, -u * x / w, -u * y / w]);
            let jv = SVector::<f64, 8>::from_column_slice(&[0.0, 0.0, 0.0, x / w, y / w, 1.0 / w, -v * x / w, -v * y / w]);
            // residual = model - observation
            let (ru, rv) = (u - f.0, v - f.1);
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        if jtr.norm() < 1e-15 {
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..8 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = p + step;
            let c = geometric_cost(pairs, &to_h(&cand));
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    to_h(&p)
}

/// Inverse-mapped bilinear warp of `moving` into an `out_dims` canvas in
/// fixed-image coordinates; samples outside the source are 0.
pub fn warp(moving: &GrayImage, t: &TransformModel, out_dims: (usize, usize)) -> Result<GrayImage> {
    let inv = t.inverse()?;
    let (w, h) = out_dims;
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| match inv.apply((x as f64, y as f64)) {
                    Ok((sx, sy)) => moving.sample_bilinear(sx, sy).unwrap_or(0.0),
                    Err(_) => 0.0,
                })
                .collect()
        })
        .collect();
    GrayImage::new(w, h, rows.concat())
}
