use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// Control points plus their decomposition into closed components.
///
/// `components[c]` lists indices into `points` in traversal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonSet {
    pub points: Vec<Point>,
    pub components: Vec<Vec<usize>>,
}

impl PolygonSet {
    /// A single component through all points in order.
    pub fn single(points: Vec<Point>) -> Self {
        let n = points.len();
        Self {
            points,
            components: vec![(0..n).collect()],
        }
    }

    /// Consecutive index blocks of the given sizes.
    pub fn from_blocks(points: Vec<Point>, sizes: &[usize]) -> Self {
        let mut components = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            components.push((start..start + s).collect());
            start += s;
        }
        debug_assert_eq!(start, points.len());
        Self { points, components }
    }

    pub fn component_points(&self, c: usize) -> Vec<Point> {
        self.components[c].iter().map(|&i| self.points[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Scales normalized coordinates into an `w×h` pixel frame.
    pub fn scaled(&self, w: f64, h: f64) -> PolygonSet {
        PolygonSet {
            points: self.points.iter().map(|p| [p[0] * w, p[1] * h]).collect(),
            components: self.components.clone(),
        }
    }
}

/// Shoelace signed area; negative means clockwise in this crate's convention.
pub fn signed_area(loop_pts: &[Point]) -> f64 {
    let n = loop_pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = loop_pts[i];
        let b = loop_pts[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    s / 2.0
}

pub fn perimeter(loop_pts: &[Point]) -> f64 {
    let n = loop_pts.len();
    (0..n)
        .map(|i| dist(loop_pts[i], loop_pts[(i + 1) % n]))
        .sum()
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// `n` points on the circle of area 0.75 centered in the unit square,
/// starting at the top and running clockwise (negative signed area).
pub fn initial_circle(n: usize) -> PolygonSet {
    assert!(n >= 3, "initial circle needs at least 3 points");
    let r = (0.75 / std::f64::consts::PI).sqrt();
    let points = (0..n)
        .map(|i| {
            let theta = -std::f64::consts::FRAC_PI_2 - std::f64::consts::TAU * i as f64 / n as f64;
            [0.5 + r * theta.cos(), 0.5 + r * theta.sin()]
        })
        .collect();
    PolygonSet::single(points)
}

/// Result of arc-length resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub points: Vec<Point>,
    /// Spacing fell below one coordinate unit, so samples may coincide.
    pub repeated: bool,
}

/// Cumulative arc length at each vertex of a closed loop (`len = n + 1`).
fn cumulative(loop_pts: &[Point]) -> Vec<f64> {
    let n = loop_pts.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 0..n {
        let last = *cum.last().unwrap();
        cum.push(last + dist(loop_pts[i], loop_pts[(i + 1) % n]));
    }
    cum
}

fn point_at(loop_pts: &[Point], cum: &[f64], s: f64) -> Point {
    let total = *cum.last().unwrap();
    let n = loop_pts.len();
    if total <= 0.0 {
        return loop_pts[0];
    }
    let s = s.rem_euclid(total);
    // First segment whose end lies beyond s.
    let seg = cum[1..].partition_point(|&c| c <= s).min(n - 1);
    let len = cum[seg + 1] - cum[seg];
    let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
    let a = loop_pts[seg];
    let b = loop_pts[(seg + 1) % n];
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// `count` points equally spaced by arc length around a closed loop,
/// starting `offset` units along it, in the loop's own direction.
pub fn sample_boundary_points(loop_pts: &[Point], count: usize, offset: f64) -> Sampled {
    let cum = cumulative(loop_pts);
    let total = *cum.last().unwrap();
    let step = total / count.max(1) as f64;
    let points = (0..count)
        .map(|j| point_at(loop_pts, &cum, offset + j as f64 * step))
        .collect();
    Sampled {
        points,
        repeated: step < 1.0,
    }
}

/// `count ≥ 2` points on the arc `[start, start + length]` of a closed loop,
/// both endpoints included, equally spaced.
pub fn resample_arc(loop_pts: &[Point], start: f64, length: f64, count: usize) -> Sampled {
    let cum = cumulative(loop_pts);
    let step = if count > 1 { length / (count - 1) as f64 } else { 0.0 };
    let points = (0..count)
        .map(|j| point_at(loop_pts, &cum, start + j as f64 * step))
        .collect();
    Sampled {
        points,
        repeated: step < 1.0,
    }
}

/// Keeps the part of a polygon where `n·x >= c` (Sutherland-Hodgman).
pub fn clip_half_plane(poly: &[Point], n: [f64; 2], c: f64) -> Vec<Point> {
    let side = |p: Point| n[0] * p[0] + n[1] * p[1] - c;
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Clips a polygon to the rectangle `[0,w]×[0,h]`.
pub fn clip_to_rect(poly: &[Point], w: f64, h: f64) -> Vec<Point> {
    let mut p = clip_half_plane(poly, [1.0, 0.0], 0.0);
    p = clip_half_plane(&p, [-1.0, 0.0], -w);
    p = clip_half_plane(&p, [0.0, 1.0], 0.0);
    clip_half_plane(&p, [0.0, -1.0], -h)
}
