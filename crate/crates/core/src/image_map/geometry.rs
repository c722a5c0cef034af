//! Planar helpers for framing an embedding: convex hull and the
//! minimum-area enclosing rectangle.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_2;

pub type Point = [f64; 2];

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull by Andrew's monotone chain, starting from the
/// lexicographically smallest point. Collinear boundary points are dropped.
/// Returns indices into `points`.
pub fn convex_hull(points: &[Point]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p[0].partial_cmp(&q[0])
            .unwrap_or(Ordering::Equal)
            .then(p[1].partial_cmp(&q[1]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    idx.dedup_by(|a, b| points[*a] == points[*b]);
    if idx.len() < 3 {
        return idx;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &i in iter {
            while hull.len() >= start + 2
                && cross(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[i]) <= 0.0
            {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    hull
}

pub fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Angle by which the points should be rotated so that their minimum-area
/// enclosing rectangle becomes axis aligned, reduced into `[0, pi/2)`.
///
/// The rectangle has one side on a hull edge, so only hull edge directions
/// are tried. `None` when the hull is degenerate (fewer than 3 vertices).
pub fn min_area_rotation(points: &[Point], hull: &[usize]) -> Option<f64> {
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for e in 0..hull.len() {
        let a = points[hull[e]];
        let b = points[hull[(e + 1) % hull.len()]];
        let edge_angle = (b[1] - a[1]).atan2(b[0] - a[0]);
        let rotation = (-edge_angle).rem_euclid(FRAC_PI_2);
        let area = bounding_area(hull.iter().map(|&i| rotate(points[i], rotation)));
        if best.is_none_or(|(_, best_area)| area < best_area * (1.0 - 1e-12)) {
            best = Some((rotation, area));
        }
    }
    best.map(|(r, _)| if r >= FRAC_PI_2 - 1e-12 { 0.0 } else { r })
}

fn bounding_area(points: impl Iterator<Item = Point>) -> f64 {
    let (lo, hi) = bounds(points);
    (hi[0] - lo[0]) * (hi[1] - lo[1])
}

pub fn bounds(points: impl Iterator<Item = Point>) -> (Point, Point) {
    points.fold(
        ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
        |(lo, hi), p| ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]),
    )
}
