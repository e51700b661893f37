use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::gtbuild::{assign_gt_points, build_gt_adjacency, component_sizes};
use crate::imgeo::{clip_to_rect, draw_polyline, gt_motion_map, rasterize_polygon, signed_area, Mask, MotionConfig, Point};
use crate::losses::Target;

/// Crop margin around the box, as a fraction of its longer side.
pub const CROP_MARGIN: f64 = 0.1;

/// Geometric augmentation applied around the crop center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    /// Radians.
    pub rotation: f64,
    pub flip: bool,
    /// Apparent object magnification.
    pub scale: f64,
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        rotation: 0.0,
        flip: false,
        scale: 1.0,
    };

    /// Rotation within ±10°, horizontal flip with probability one half and
    /// scale in [0.9, 1.1].
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let max = 10f64.to_radians();
        Self {
            rotation: rng.random_range(-max..=max),
            flip: rng.random_bool(0.5),
            scale: rng.random_range(0.9..=1.1),
        }
    }
}

/// Affine map between an `S×S` crop and the source image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropFrame {
    pub center: Point,
    /// Source pixels per crop pixel.
    pub step: f64,
    pub size: usize,
    pub aug: Augment,
}

impl CropFrame {
    pub fn to_source(&self, u: Point) -> Point {
        let h = self.size as f64 / 2.0;
        let mut d = [u[0] - h, u[1] - h];
        if self.aug.flip {
            d[0] = -d[0];
        }
        let (s, c) = self.aug.rotation.sin_cos();
        let r = [c * d[0] - s * d[1], s * d[0] + c * d[1]];
        [self.center[0] + self.step * r[0], self.center[1] + self.step * r[1]]
    }

    pub fn to_crop(&self, p: Point) -> Point {
        let h = self.size as f64 / 2.0;
        let d = [(p[0] - self.center[0]) / self.step, (p[1] - self.center[1]) / self.step];
        let (s, c) = self.aug.rotation.sin_cos();
        let mut r = [c * d[0] + s * d[1], -s * d[0] + c * d[1]];
        if self.aug.flip {
            r[0] = -r[0];
        }
        [h + r[0], h + r[1]]
    }
}

/// Square crop centered on `bbox` with a margin on every side.
pub fn crop_frame(bbox: [f64; 4], size: usize, aug: Augment) -> CropFrame {
    let side = (1.0 + 2.0 * CROP_MARGIN) * bbox[2].max(bbox[3]).max(1.0);
    CropFrame {
        center: [bbox[0] + bbox[2] / 2.0, bbox[1] + bbox[3] / 2.0],
        step: side / (size as f64 * aug.scale),
        size,
        aug,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleConfig {
    pub image_size: usize,
    pub num_points: usize,
    pub split_k: usize,
    pub motion: MotionConfig,
}

impl ExampleConfig {
    pub fn feature_size(&self) -> usize {
        self.image_size / 4
    }
}

/// A network-ready crop and everything needed to supervise or score it.
#[derive(Debug, Clone)]
pub struct Example {
    /// `[3×S×S]`, channel-major, values in [-0.5, 0.5].
    pub image: Vec<f32>,
    pub target: Target,
    /// Union of all visible components at `S×S`.
    pub gt_mask: Mask,
    /// Visible components in crop pixels.
    pub loops: Vec<Vec<Point>>,
    pub class: String,
    pub disconnected: bool,
    pub frame: CropFrame,
}

fn sample_bilinear(img: &image::RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let px = |xi: i64, yi: i64| {
        let p = img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32);
        [p[0] as f64, p[1] as f64, p[2] as f64]
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (px(x0, y0), px(x0 + 1, y0), px(x0, y0 + 1), px(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = a[ch] + tx * (b[ch] - a[ch]);
        let bot = c[ch] + tx * (d[ch] - c[ch]);
        out[ch] = top + ty * (bot - top);
    }
    out
}

/// Resamples the frame's crop: `[3×S×S]`, channel-major, in [-0.5, 0.5].
pub fn crop_image(img: &image::RgbImage, frame: &CropFrame) -> Vec<f32> {
    let s = frame.size;
    let mut image = vec![0f32; 3 * s * s];
    for r in 0..s {
        for c in 0..s {
            let src = frame.to_source([c as f64 + 0.5, r as f64 + 0.5]);
            let v = sample_bilinear(img, src[0], src[1]);
            for ch in 0..3 {
                image[ch * s * s + r * s + c] = (v[ch] / 255.0 - 0.5) as f32;
            }
        }
    }
    image
}

/// Crops, augments and derives the supervision for one sample.
pub fn make_example(sample: &Sample, cfg: &ExampleConfig, aug: Augment) -> Result<Example> {
    let s = cfg.image_size;
    if s % 4 != 0 || s == 0 {
        return Err(Error::InvalidConfig(format!("image size {s} is not a multiple of 4")));
    }
    let frame = crop_frame(sample.record.bbox, s, aug);
    let image = crop_image(&sample.image, &frame);
    let sf = s as f64;
    let loops: Vec<Vec<Point>> = sample
        .record
        .components
        .iter()
        .map(|comp| {
            let mapped: Vec<Point> = comp.iter().map(|&p| frame.to_crop(p)).collect();
            clip_to_rect(&mapped, sf, sf)
        })
        .filter(|l| l.len() >= 3 && signed_area(l).abs() > 1e-9)
        .collect();
    if loops.is_empty() {
        return Err(Error::InvalidAnnotation(format!(
            "no component of {} survives cropping",
            sample.record.image
        )));
    }
    let mut gt_mask = Mask::new(s, s);
    for l in &loops {
        gt_mask.union_with(&rasterize_polygon(l, s, s));
    }
    let layout = component_sizes(cfg.num_points, cfg.split_k)?;
    let assignment = assign_gt_points(&loops, &layout, (sf, sf))?;
    let adjacency = build_gt_adjacency(&layout)?;
    let fs = cfg.feature_size();
    let ratio = fs as f64 / sf;
    let mut boundary = Mask::new(fs, fs);
    for l in &loops {
        let scaled: Vec<Point> = l.iter().map(|p| [p[0] * ratio, p[1] * ratio]).collect();
        draw_polyline(&mut boundary, &scaled, true);
    }
    let motion = gt_motion_map(&boundary, &cfg.motion)?;
    Ok(Example {
        image,
        target: Target {
            points: assignment.points.points,
            adjacency,
            motion,
        },
        gt_mask,
        disconnected: loops.len() > 1,
        loops,
        class: sample.record.class.clone(),
        frame,
    })
}
