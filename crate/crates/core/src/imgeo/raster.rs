use super::{Mask, Point, PolygonSet};

/// Result of filling a polygon set.
#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    pub mask: Mask,
    /// Components with fewer than 3 points, left unfilled.
    pub skipped: usize,
}

/// Fills one closed loop (pixel coordinates) by the even-odd rule applied
/// to pixel centers.
pub fn rasterize_polygon(loop_pts: &[Point], height: usize, width: usize) -> Mask {
    let mut mask = Mask::new(height, width);
    fill_into(&mut mask, loop_pts);
    mask
}

fn fill_into(mask: &mut Mask, loop_pts: &[Point]) {
    let n = loop_pts.len();
    if n < 3 {
        return;
    }
    let (h, w) = (mask.height(), mask.width());
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    let mut filled = vec![false; w];
    for row in 0..h {
        let y = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let a = loop_pts[i];
            let b = loop_pts[(i + 1) % n];
            // Half-open in y so shared vertices are counted once.
            if (a[1] <= y) != (b[1] <= y) {
                let t = (y - a[1]) / (b[1] - a[1]);
                xs.push(a[0] + t * (b[0] - a[0]));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        filled.iter_mut().for_each(|f| *f = false);
        for pair in xs.chunks_exact(2) {
            // Pixel centers c + 0.5 with x0 <= c + 0.5 < x1.
            let lo = (pair[0] - 0.5).ceil().max(0.0);
            let hi = (pair[1] - 0.5).ceil().min(w as f64);
            let (lo, hi) = (lo as usize, hi.max(0.0) as usize);
            for f in filled.iter_mut().take(hi).skip(lo) {
                *f = true;
            }
        }
        for (col, &f) in filled.iter().enumerate() {
            if f {
                mask.set(row, col, true);
            }
        }
    }
}

/// Union of the even-odd fills of every component, in pixel coordinates.
pub fn rasterize(poly: &PolygonSet, height: usize, width: usize) -> Rasterized {
    let mut mask = Mask::new(height, width);
    let mut skipped = 0;
    for c in 0..poly.components.len() {
        let pts = poly.component_points(c);
        if pts.len() < 3 {
            skipped += 1;
            continue;
        }
        fill_into(&mut mask, &pts);
    }
    if skipped > 0 {
        log::warn!("rasterize: skipped {skipped} degenerate component(s)");
    }
    Rasterized { mask, skipped }
}

/// Marks every pixel touched by the polyline, sampled at quarter-pixel steps.
pub fn draw_polyline(mask: &mut Mask, pts: &[Point], closed: bool) {
    let n = pts.len();
    if n == 0 {
        return;
    }
    let (h, w) = (mask.height() as f64, mask.width() as f64);
    let mut plot = |p: Point| {
        if p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w && p[1] < h {
            mask.set(p[1] as usize, p[0] as usize, true);
        }
    };
    let segs = if closed { n } else { n - 1 };
    plot(pts[0]);
    for i in 0..segs {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (len * 4.0).ceil().max(1.0) as usize;
        for s in 1..=steps {
            let t = s as f64 / steps as f64;
            plot([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
}
