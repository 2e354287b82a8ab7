//! Weak annotations carved out of full masks: scribble strokes, tight boxes
//! and single points.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::morphology::{line, Grid};
use super::{BinaryMask, ScribbleMask, BACKGROUND, FOREGROUND, UNLABELED};
use crate::error::{Error, Result};

/// Distance in pixels kept between a stroke and the mask boundary.
pub const SAFETY_MARGIN: usize = 2;
/// Upper bound on the labeled share of the image, both strokes together.
pub const MAX_LABELED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScribbleStyle {
    /// Smoothed random walk.
    Curve,
    /// Piece of the region's morphological skeleton.
    Skeleton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakKind {
    Box,
    Point,
}

/// One foreground and one background stroke, each connected and lying
/// strictly inside its region eroded by [`SAFETY_MARGIN`].
pub fn synthesize_scribble(full_mask: &BinaryMask, seed: u64, style: ScribbleStyle) -> Result<ScribbleMask> {
    let (h, w) = full_mask.hw();
    let fg = Grid::new(h, w, full_mask.data().iter().map(|&v| v == 1).collect());
    let bg = Grid::new(h, w, full_mask.data().iter().map(|&v| v == 0).collect());
    let fg_core = fg.erode(SAFETY_MARGIN).largest_component();
    let bg_core = bg.erode(SAFETY_MARGIN).largest_component();
    if fg_core.count() == 0 {
        return Err(Error::DegenerateRegion(format!(
            "no foreground left after {SAFETY_MARGIN}px erosion"
        )));
    }
    if bg_core.count() == 0 {
        return Err(Error::DegenerateRegion(format!(
            "no background left after {SAFETY_MARGIN}px erosion"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = ((MAX_LABELED_FRACTION / 2.0) * (h * w) as f64).floor() as usize;
    let mut labels = vec![UNLABELED; h * w];
    for (region, value) in [(&fg_core, FOREGROUND), (&bg_core, BACKGROUND)] {
        let path = match style {
            ScribbleStyle::Curve => curve_path(region, &mut rng),
            ScribbleStyle::Skeleton => skeleton_path(region, &mut rng),
        };
        let width = rng.random_range(1..=2usize);
        for i in stroke_pixels(region, &path, width, budget) {
            labels[i] = value;
        }
    }
    ScribbleMask::new(h, w, labels)
}

/// Rasterized stroke of the given width, truncated to `budget` pixels in
/// path order.
fn stroke_pixels(region: &Grid, path: &[usize], width: usize, budget: usize) -> Vec<usize> {
    let mut seen = vec![false; region.on.len()];
    let mut out = Vec::new();
    for &i in path {
        let mut cells = vec![i];
        if width == 2 && (i % region.w) + 1 < region.w && region.on[i + 1] {
            cells.push(i + 1);
        }
        for c in cells {
            if !seen[c] {
                if out.len() == budget {
                    return out;
                }
                seen[c] = true;
                out.push(c);
            }
        }
    }
    out
}

fn random_cell(region: &Grid, rng: &mut ChaCha8Rng) -> usize {
    let cells: Vec<usize> = (0..region.on.len()).filter(|&i| region.on[i]).collect();
    cells[rng.random_range(0..cells.len())]
}

/// Random walk with a drifting heading, subsampled to control points and
/// smoothed with a Catmull–Rom spline. The raster stops at the first pixel
/// that would leave the region.
fn curve_path(region: &Grid, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let start = random_cell(region, rng);
    let inside = |p: (f64, f64)| region.at(p.0.floor() as isize, p.1.floor() as isize).unwrap_or(false);
    let steps = ((region.count() as f64).sqrt() * 1.2).round().max(6.0) as usize;
    let turn = Normal::new(0.0, 0.35).expect("valid sigma");

    let mut p = ((start / region.w) as f64 + 0.5, (start % region.w) as f64 + 0.5);
    let mut heading = rng.random_range(0.0..2.0 * PI);
    let mut walk = vec![p];
    for _ in 0..steps {
        heading += turn.sample(rng);
        let mut moved = false;
        for _ in 0..8 {
            let q = (p.0 + heading.sin(), p.1 + heading.cos());
            if inside(q) {
                p = q;
                walk.push(p);
                moved = true;
                break;
            }
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            heading += sign * rng.random_range(0.6..1.6);
        }
        if !moved {
            break;
        }
    }

    let mut control: Vec<(f64, f64)> = walk.iter().step_by(4).copied().collect();
    if walk.len() > 1 && (walk.len() - 1) % 4 != 0 {
        control.push(*walk.last().expect("non-empty walk"));
    }
    let samples = catmull_rom(&control, 6);

    let mut path = vec![start];
    let mut prev = (start / region.w) as isize;
    let mut prev_x = (start % region.w) as isize;
    for &(y, x) in &samples[1..] {
        let (ty, tx) = (y.floor() as isize, x.floor() as isize);
        for (py, px) in line(prev, prev_x, ty, tx).into_iter().skip(1) {
            if !region.at(py, px).unwrap_or(false) {
                return path;
            }
            path.push(py as usize * region.w + px as usize);
        }
        (prev, prev_x) = (ty, tx);
    }
    path
}

fn catmull_rom(pts: &[(f64, f64)], per_segment: usize) -> Vec<(f64, f64)> {
    if pts.len() < 2 {
        return pts.to_vec();
    }
    let get = |i: isize| pts[i.clamp(0, pts.len() as isize - 1) as usize];
    let mut out = vec![pts[0]];
    for i in 0..pts.len() as isize - 1 {
        let (p0, p1, p2, p3) = (get(i - 1), get(i), get(i + 1), get(i + 2));
        for s in 1..=per_segment {
            let t = s as f64 / per_segment as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push((f(p0.0, p1.0, p2.0, p3.0), f(p0.1, p1.1, p2.1, p3.1)));
        }
    }
    out
}

/// Contiguous piece of the longest path through the region's skeleton.
fn skeleton_path(region: &Grid, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let skeleton = region.thin().largest_component();
    let Some(_) = skeleton.first_set() else {
        return vec![random_cell(region, rng)];
    };
    let start = random_cell(&skeleton, rng);
    let path = skeleton.long_path(start);
    let keep = ((rng.random_range(0.5..0.9) * path.len() as f64).round() as usize).clamp(1, path.len());
    let offset = rng.random_range(0..=path.len() - keep);
    path[offset..offset + keep].to_vec()
}

/// Box or point annotation derived from a full mask.
pub fn synthesize_weak(full_mask: &BinaryMask, kind: WeakKind, seed: u64) -> Result<ScribbleMask> {
    let (h, w) = full_mask.hw();
    let fg: Vec<usize> = (0..h * w).filter(|&i| full_mask.data()[i] == 1).collect();
    if fg.is_empty() {
        return Err(Error::DegenerateRegion("mask has no foreground".into()));
    }
    match kind {
        WeakKind::Box => {
            let (mut y0, mut y1, mut x0, mut x1) = (h, 0, w, 0);
            for &i in &fg {
                let (y, x) = (i / w, i % w);
                (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
            }
            let labels = (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    if (y0..=y1).contains(&y) && (x0..=x1).contains(&x) {
                        FOREGROUND
                    } else {
                        BACKGROUND
                    }
                })
                .collect();
            ScribbleMask::new(h, w, labels)
        }
        WeakKind::Point => {
            let bg: Vec<usize> = (0..h * w).filter(|&i| full_mask.data()[i] == 0).collect();
            if bg.is_empty() {
                return Err(Error::DegenerateRegion("mask has no background".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels = vec![UNLABELED; h * w];
            labels[fg[rng.random_range(0..fg.len())]] = FOREGROUND;
            labels[bg[rng.random_range(0..bg.len())]] = BACKGROUND;
            ScribbleMask::new(h, w, labels)
        }
    }
}
