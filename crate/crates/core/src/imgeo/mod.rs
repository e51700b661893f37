//! Image-space geometry: masks, polygons, distance transforms, motion
//! fields and evaluation metrics.
//!
//! Coordinates: `x` grows rightward and `y` downward. A pixel `(col, row)`
//! covers `[col, col+1) × [row, row+1)` and its center is at `+0.5`.
//! Normalized polygon coordinates map `[0, 1]` onto the full image extent.
//! "Clockwise" always means a negative shoelace signed area computed on
//! the raw `(x, y)` values.

mod distance;
mod metrics;
mod motion;
mod polygon;
mod raster;

pub use distance::distance_transform;
pub use metrics::{boundary_f, iou, mask_boundary, mean_iou_by_class};
pub use motion::{gt_motion_map, motion_from_distance, thicken_boundary, MotionConfig, MotionMap};
pub use polygon::{
    clip_half_plane, clip_to_rect, initial_circle, perimeter, resample_arc, sample_boundary_points, signed_area, Point, PolygonSet,
    Sampled,
};
pub use raster::{draw_polyline, rasterize, rasterize_polygon, Rasterized};

/// A boolean bitmap, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask bit count");
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut out = Mask::new(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, self.width - 1 - c, self.get(r, c));
            }
        }
        out
    }
}
