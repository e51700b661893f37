//! Mask and boundary scores of predicted polygons against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::Result;
use crate::imgeo::{boundary_f, iou, mean_iou_by_class, rasterize, Mask, PolygonSet};
use crate::losses::{total_loss, LossReport, LossWeights, Target};
use crate::model::{decompose_components, Model};
use crate::tensor::{no_grad, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub class: String,
    pub disconnected: bool,
    pub iou: f64,
    pub f1: f64,
    pub f2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean over classes of per-class mean IoU.
    pub miou: f64,
    pub f1px: f64,
    pub f2px: f64,
    pub count: usize,
    pub per_class: BTreeMap<String, f64>,
}

impl EvalSummary {
    pub fn from_scores<'a>(scores: impl IntoIterator<Item = &'a SampleScore> + Clone) -> Self {
        let by = |f: fn(&SampleScore) -> f64| mean_iou_by_class(scores.clone().into_iter().map(|s| (s.class.as_str(), f(s))));
        let mut per: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for s in scores.clone() {
            let e = per.entry(s.class.clone()).or_default();
            e.0 += s.iou;
            e.1 += 1;
        }
        Self {
            miou: by(|s| s.iou),
            f1px: by(|s| s.f1),
            f2px: by(|s| s.f2),
            count: scores.into_iter().count(),
            per_class: per.into_iter().map(|(k, (v, n))| (k, v / n as f64)).collect(),
        }
    }
}

/// Rasterizes normalized polygons into an `S×S` mask.
pub fn polygon_mask(poly: &PolygonSet, size: usize) -> Mask {
    let s = size as f64;
    rasterize(&poly.scaled(s, s), size, size).mask
}

pub fn score_polygons(poly: &PolygonSet, ex: &Example) -> SampleScore {
    let size = ex.gt_mask.width();
    let pred = polygon_mask(poly, size);
    SampleScore {
        class: ex.class.clone(),
        disconnected: ex.disconnected,
        iou: iou(&pred, &ex.gt_mask),
        f1: boundary_f(&pred, &ex.gt_mask, 1.0),
        f2: boundary_f(&pred, &ex.gt_mask, 2.0),
    }
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub scores: Vec<SampleScore>,
    pub loss: LossReport,
}

impl Evaluation {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary::from_scores(self.scores.iter())
    }

    pub fn disconnected_summary(&self) -> EvalSummary {
        EvalSummary::from_scores(self.scores.iter().filter(|s| s.disconnected))
    }
}

pub fn batch_images<S: Scalar>(examples: &[&Example], size: usize) -> Result<Tensor<S>> {
    let mut v = Vec::with_capacity(examples.len() * 3 * size * size);
    for ex in examples {
        v.extend(ex.image.iter().map(|&x| S::lit(x as f64)));
    }
    Tensor::from_vec(v, &[examples.len(), 3, size, size])
}

/// Automatic (click-free) predictions, scored, with the loss in eval mode.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    examples: &[Example],
    weights: &LossWeights,
    batch: usize,
) -> Result<Evaluation> {
    let size = model.cfg.image_size;
    let mut out = Evaluation::default();
    if examples.is_empty() {
        return Ok(out);
    }
    no_grad(|| {
        for chunk in examples.chunks(batch.max(1)) {
            let refs: Vec<&Example> = chunk.iter().collect();
            let images = batch_images(&refs, size)?;
            let res = model.forward(&images, None, false)?;
            let targets: Vec<Target> = chunk.iter().map(|e| e.target.clone()).collect();
            let (_, report) = total_loss(&res, &targets, weights)?;
            out.loss.accumulate(&report, chunk.len() as f64 / examples.len() as f64);
            for (sample, ex) in res.samples.iter().zip(chunk) {
                let last = sample.last();
                let dec = decompose_components(&last.hard, &last.point_values());
                out.scores.push(score_polygons(&dec.polygons, ex));
            }
        }
        Ok(out)
    })
}
