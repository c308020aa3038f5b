//! Descriptor matching and mismatch removal.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harris::Keypoint;
use crate::kdtree::KdTree;
use crate::piifd::{DescriptorBundle, DESCRIPTOR_LEN};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub fixed_kp: usize,
    pub moving_kp: usize,
    /// Cosine similarity of the winning descriptor pair.
    pub similarity: f64,
    pub fixed_level: (usize, usize),
    pub moving_level: (usize, usize),
    pub fixed_orientation: f64,
    pub moving_orientation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Initial,
    Filtered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub matches: Vec<Match>,
    pub stage: Stage,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchConfig {
    pub max_checks: usize,
    /// Minimum cosine similarity of an accepted match.
    pub threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { max_checks: 200, threshold: 0.85 }
    }
}

/// Best-bin-first matching of every fixed descriptor against all moving
/// descriptors. For unit vectors `cos = 1 - d^2 / 2`, so the Euclidean
/// nearest neighbor is the most similar descriptor.
pub fn bbf_match(fixed: &DescriptorBundle, moving: &DescriptorBundle, cfg: &MatchConfig) -> Result<MatchSet> {
    if fixed.is_empty() || moving.is_empty() {
        return Err(Error::EmptyBundle);
    }
    let points: Vec<[f64; DESCRIPTOR_LEN]> = moving.descriptors.iter().map(|d| d.values).collect();
    let tree = KdTree::new(&points);
    let nearest: Vec<(usize, f64)> = fixed
        .descriptors
        .par_iter()
        .map(|d| {
            let (i, d2) = tree.nearest(&d.values, cfg.max_checks).expect("tree is non-empty");
            (i, 1.0 - d2 / 2.0)
        })
        .collect();

    // best over levels, per fixed keypoint
    let mut best: Vec<Option<Match>> = vec![None; fixed.num_keypoints];
    for (fd, &(mi, sim)) in fixed.descriptors.iter().zip(&nearest) {
        let md = &moving.descriptors[mi];
        let slot = &mut best[fd.keypoint_id];
        if slot.is_none_or(|m| sim > m.similarity) {
            *slot = Some(Match {
                fixed_kp: fd.keypoint_id,
                moving_kp: md.keypoint_id,
                similarity: sim,
                fixed_level: (fd.octave, fd.layer),
                moving_level: (md.octave, md.layer),
                fixed_orientation: fd.orientation.angle,
                moving_orientation: md.orientation.angle,
            });
        }
    }

    // one claim per moving keypoint: higher similarity wins, then lower fixed id
    let mut owner: Vec<Option<Match>> = vec![None; moving.num_keypoints];
    for m in best.into_iter().flatten().filter(|m| m.similarity >= cfg.threshold) {
        let slot = &mut owner[m.moving_kp];
        if slot.is_none_or(|o| m.similarity > o.similarity) {
            *slot = Some(m);
        }
    }
    let mut matches: Vec<Match> = owner.into_iter().flatten().collect();
    matches.sort_by_key(|m| m.fixed_kp);
    Ok(MatchSet { matches, stage: Stage::Initial })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    /// Allowed deviation from the dominant orientation difference, radians.
    pub angle_tol: f64,
    /// Allowed relative deviation of a length ratio from the median ratio.
    pub ratio_tol: f64,
    /// Consistency score every kept match must reach.
    pub min_score: f64,
    /// Point pairs closer than this in either image are ignored.
    pub min_separation: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { angle_tol: PI / 18.0, ratio_tol: 0.15, min_score: 0.7, min_separation: 5.0 }
    }
}

const ORIENTATION_BINS: usize = 36;

/// Distance between two angles taken modulo pi.
pub fn angle_dist_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Dominant value of a set of angles modulo pi. The densest run of three
/// adjacent bins of a 36-bin circular histogram seeds the estimate, which is
/// then moved to the axial mean of the angles within `window` of it until
/// it settles, so the result does not depend on where bin edges fall.
pub fn orientation_mode(deltas: &[f64], window: f64) -> f64 {
    let width = PI / ORIENTATION_BINS as f64;
    let bin = |a: f64| ((a.rem_euclid(PI) / width) as usize).min(ORIENTATION_BINS - 1);
    let mut hist = [0usize; ORIENTATION_BINS];
    for &d in deltas {
        hist[bin(d)] += 1;
    }
    let peak = (0..ORIENTATION_BINS)
        .max_by_key(|&i| {
            let s = hist[(i + ORIENTATION_BINS - 1) % ORIENTATION_BINS] + hist[i] + hist[(i + 1) % ORIENTATION_BINS];
            (s, std::cmp::Reverse(i))
        })
        .unwrap_or(0);
    let mut mode = (peak as f64 + 0.5) * width;
    let mut radius = 1.5 * width;
    for _ in 0..20 {
        let (mut s, mut c) = (0.0, 0.0);
        for &d in deltas {
            if angle_dist_pi(d, mode) <= radius {
                s += (2.0 * d).sin();
                c += (2.0 * d).cos();
            }
        }
        if s == 0.0 && c == 0.0 {
            break;
        }
        let next = (0.5 * s.atan2(c)).rem_euclid(PI);
        let moved = angle_dist_pi(next, mode);
        mode = next;
        radius = window;
        if moved < 1e-12 {
            break;
        }
    }
    mode
}

/// Orientation-consistency then spatial-consistency filtering.
pub fn remove_mismatches(
    ms: &MatchSet,
    fixed_kps: &[Keypoint],
    moving_kps: &[Keypoint],
    cfg: &FilterConfig,
) -> Result<MatchSet> {
    if ms.len() < 3 {
        return Err(Error::InsufficientMatches(ms.len()));
    }
    let deltas: Vec<f64> =
        ms.matches.iter().map(|m| (m.fixed_orientation - m.moving_orientation).rem_euclid(PI)).collect();
    let mode = orientation_mode(&deltas, cfg.angle_tol);
    let oriented: Vec<Match> = ms
        .matches
        .iter()
        .zip(&deltas)
        .filter(|(_, &d)| angle_dist_pi(d, mode) <= cfg.angle_tol)
        .map(|(m, _)| *m)
        .collect();
    if oriented.len() < 3 {
        return Err(Error::InsufficientMatches(oriented.len()));
    }
    let kept = spatial_filter(&oriented, fixed_kps, moving_kps, cfg);
    Ok(MatchSet { matches: kept, stage: Stage::Filtered })
}

fn spatial_filter(matches: &[Match], fixed_kps: &[Keypoint], moving_kps: &[Keypoint], cfg: &FilterConfig) -> Vec<Match> {
    let n = matches.len();
    let pos = |k: &Keypoint| (k.x, k.y);
    let a: Vec<(f64, f64)> = matches.iter().map(|m| pos(&fixed_kps[m.fixed_kp])).collect();
    let b: Vec<(f64, f64)> = matches.iter().map(|m| pos(&moving_kps[m.moving_kp])).collect();
    let len = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();

    // ratio[i * n + j], NaN for pairs too close to be informative
    let mut ratio = vec![f64::NAN; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let (la, lb) = (len(a[i], a[j]), len(b[i], b[j]));
            if la >= cfg.min_separation && lb >= cfg.min_separation {
                ratio[i * n + j] = la / lb;
                ratio[j * n + i] = la / lb;
            }
        }
    }

    let mut active: Vec<usize> = (0..n).collect();
    let mut pool = Vec::with_capacity(n * n / 2);
    loop {
        pool.clear();
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                let r = ratio[i * n + j];
                if !r.is_nan() {
                    pool.push(r);
                }
            }
        }
        let median = median_of(&mut pool);
        let scores: Vec<f64> = active
            .iter()
            .map(|&i| {
                let (mut ok, mut total) = (0usize, 0usize);
                for &j in &active {
                    let r = ratio[i * n + j];
                    if j != i && !r.is_nan() {
                        total += 1;
                        if median.is_some_and(|m| (r - m).abs() <= cfg.ratio_tol * m) {
                            ok += 1;
                        }
                    }
                }
                if total == 0 { 0.0 } else { ok as f64 / total as f64 }
            })
            .collect();
        // worst: lowest score, then lowest similarity, then latest
        let worst = (0..active.len())
            .min_by(|&p, &q| {
                scores[p]
                    .total_cmp(&scores[q])
                    .then(matches[active[p]].similarity.total_cmp(&matches[active[q]].similarity))
                    .then(q.cmp(&p))
            })
            .expect("active is non-empty");
        if scores[worst] >= cfg.min_score || active.len() <= 3 {
            break;
        }
        active.remove(worst);
    }
    active.into_iter().map(|i| matches[i]).collect()
}

fn median_of(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let len = v.len();
    let mid = len / 2;
    let (lo, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if len % 2 == 1 {
        Some(m)
    } else {
        let below = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((below + m) / 2.0)
    }
}

/// CSV `fixed_x,fixed_y,moving_x,moving_y,similarity,kept` over the initial
/// matches; `kept` marks membership in the filtered set.
pub fn write_matches_csv(
    initial: &MatchSet,
    filtered: &MatchSet,
    fixed_kps: &[Keypoint],
    moving_kps: &[Keypoint],
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "fixed_x,fixed_y,moving_x,moving_y,similarity,kept")?;
    for m in &initial.matches {
        let kept = filtered.matches.iter().any(|f| f.fixed_kp == m.fixed_kp && f.moving_kp == m.moving_kp);
        let (f, mv) = (fixed_kps[m.fixed_kp], moving_kps[m.moving_kp]);
        writeln!(out, "{},{},{},{},{:.9},{}", f.x, f.y, mv.x, mv.y, m.similarity, kept as u8)?;
    }
    Ok(())
}
