use std::collections::BTreeMap;

use super::{distance_transform, Mask};

/// |a ∩ b| / |a ∪ b|, with two empty masks scoring 1.
pub fn iou(a: &Mask, b: &Mask) -> f64 {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()), "iou dims");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Foreground pixels with at least one 4-neighbor outside the mask or the image.
pub fn mask_boundary(m: &Mask) -> Mask {
    let (h, w) = (m.height(), m.width());
    let mut out = Mask::new(h, w);
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r == h - 1
                || c == w - 1
                || !m.get(r - 1, c)
                || !m.get(r + 1, c)
                || !m.get(r, c - 1)
                || !m.get(r, c + 1);
            if edge {
                out.set(r, c, true);
            }
        }
    }
    out
}

fn matched_fraction(from: &Mask, to: &Mask, width: f64) -> f64 {
    let dist = distance_transform(to).expect("non-empty boundary");
    let total = from.count();
    let hits = from
        .bits()
        .iter()
        .zip(&dist)
        .filter(|(&b, &d)| b && d <= width)
        .count();
    hits as f64 / total as f64
}

/// Boundary F-measure: harmonic mean of the fractions of each boundary
/// lying within `width` pixels (Euclidean) of the other.
pub fn boundary_f(pred: &Mask, gt: &Mask, width: f64) -> f64 {
    let bp = mask_boundary(pred);
    let bg = mask_boundary(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let precision = matched_fraction(&bp, &bg, width);
    let recall = matched_fraction(&bg, &bp, width);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean over classes of the per-class mean score.
pub fn mean_iou_by_class<'a>(scores: impl IntoIterator<Item = (&'a str, f64)>) -> f64 {
    let mut per: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (class, v) in scores {
        let e = per.entry(class).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    if per.is_empty() {
        return 0.0;
    }
    per.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per.len() as f64
}
