use serde::{Deserialize, Serialize};

use super::{distance_transform, Mask};
use crate::error::Result;
use crate::tensor::gaussian_kernel_1d;

/// Boundary thickening parameters for ground-truth motion fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub kernel_size: usize,
    pub sigma: f64,
    /// A pixel joins the thickened boundary when its blurred value reaches
    /// this fraction of the response at the center of a straight 1-px line.
    pub threshold: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            kernel_size: 9,
            sigma: 2.0,
            threshold: 0.75,
        }
    }
}

/// Per-pixel 2-vectors stored as two planes: x components then y components.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMap {
    pub height: usize,
    pub width: usize,
    pub vectors: Vec<f64>,
}

impl MotionMap {
    pub fn at(&self, row: usize, col: usize) -> [f64; 2] {
        let i = row * self.width + col;
        [self.vectors[i], self.vectors[self.height * self.width + i]]
    }

    /// Pixels carrying a direction; zero vectors are excluded from losses.
    pub fn valid_mask(&self) -> Vec<bool> {
        let hw = self.height * self.width;
        (0..hw)
            .map(|i| self.vectors[i] != 0.0 || self.vectors[hw + i] != 0.0)
            .collect()
    }

    pub fn flip_horizontal(&self) -> MotionMap {
        let (h, w) = (self.height, self.width);
        let mut v = vec![0.0; 2 * h * w];
        for r in 0..h {
            for c in 0..w {
                let src = r * w + c;
                let dst = r * w + (w - 1 - c);
                v[dst] = -self.vectors[src];
                v[h * w + dst] = self.vectors[h * w + src];
            }
        }
        MotionMap { height: h, width: w, vectors: v }
    }
}

/// Blurs a 1-px boundary with a Gaussian and keeps pixels whose response
/// clears `threshold` times the straight-line peak, plus the original
/// boundary pixels.
pub fn thicken_boundary(boundary: &Mask, cfg: &MotionConfig) -> Mask {
    let (h, w) = (boundary.height(), boundary.width());
    let k = gaussian_kernel_1d(cfg.kernel_size, cfg.sigma);
    let half = (k.len() / 2) as isize;
    let src: Vec<f64> = boundary.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let sc = c as isize + t as isize - half;
                if sc >= 0 && sc < w as isize {
                    acc += kv * src[r * w + sc as usize];
                }
            }
            tmp[r * w + c] = acc;
        }
    }
    let cut = cfg.threshold * k[k.len() / 2];
    let mut out = boundary.clone();
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let sr = r as isize + t as isize - half;
                if sr >= 0 && sr < h as isize {
                    acc += kv * tmp[sr as usize * w + c];
                }
            }
            if acc >= cut {
                out.set(r, c, true);
            }
        }
    }
    out
}

/// Unit field pointing down the gradient of `phi` (toward the nearest
/// boundary). Central differences inside, one-sided at the image border;
/// pixels where the gradient vanishes get the zero vector.
pub fn motion_from_distance(phi: &[f64], height: usize, width: usize) -> MotionMap {
    let (h, w) = (height, width);
    let at = |r: usize, c: usize| phi[r * w + c];
    let mut v = vec![0.0; 2 * h * w];
    for r in 0..h {
        for c in 0..w {
            let gx = if w < 2 {
                0.0
            } else if c == 0 {
                at(r, 1) - at(r, 0)
            } else if c == w - 1 {
                at(r, c) - at(r, c - 1)
            } else {
                (at(r, c + 1) - at(r, c - 1)) / 2.0
            };
            let gy = if h < 2 {
                0.0
            } else if r == 0 {
                at(1, c) - at(0, c)
            } else if r == h - 1 {
                at(r, c) - at(r - 1, c)
            } else {
                (at(r + 1, c) - at(r - 1, c)) / 2.0
            };
            let norm = (gx * gx + gy * gy).sqrt();
            if norm > 1e-9 {
                v[r * w + c] = -gx / norm;
                v[h * w + r * w + c] = -gy / norm;
            }
        }
    }
    MotionMap { height: h, width: w, vectors: v }
}

/// Ground-truth motion field of a boundary mask: thicken, distance
/// transform, negated normalized gradient.
pub fn gt_motion_map(boundary: &Mask, cfg: &MotionConfig) -> Result<MotionMap> {
    let thick = thicken_boundary(boundary, cfg);
    let phi = distance_transform(&thick)?;
    Ok(motion_from_distance(&phi, boundary.height(), boundary.width()))
}
