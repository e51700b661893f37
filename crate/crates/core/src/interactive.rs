//! Vertex corrections fed back into the refinement network, and simulated
//! annotation sessions that click on the worst vertex.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::eval::{batch_images, score_polygons, SampleScore};
use crate::gtbuild::AdjacencyMatrix;
use crate::imgeo::{mean_iou_by_class, Point};
use crate::losses::best_shift;
use crate::model::{decompose_components, Decomposition, Model};
use crate::tensor::{no_grad, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub vertex_index: usize,
    /// Normalized crop coordinates.
    pub target: Point,
    pub source: Source,
}

/// Everything needed to continue refining one object.
#[derive(Clone)]
pub struct ModelState<S: Scalar> {
    pub embedding: Tensor<S>,
    pub points: Vec<Point>,
    /// Last soft adjacency and its truncation.
    pub soft: AdjacencyMatrix,
    pub adjacency: AdjacencyMatrix,
    pub delta_h: Vec<Point>,
    /// Corrected vertices and where they were put.
    pub pinned: BTreeMap<usize, Point>,
}

impl<S: Scalar> ModelState<S> {
    pub fn polygons(&self) -> Decomposition {
        decompose_components(&self.adjacency, &self.points)
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            embedding_shape: self.embedding.shape().to_vec(),
            embedding: self.embedding.to_f64_vec(),
            points: self.points.clone(),
            soft: self.soft.clone(),
            adjacency: self.adjacency.clone(),
            delta_h: self.delta_h.clone(),
            pinned: self.pinned.clone(),
        }
    }
}

/// A thread-portable copy of a [`ModelState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub embedding_shape: Vec<usize>,
    pub embedding: Vec<f64>,
    pub points: Vec<Point>,
    pub soft: AdjacencyMatrix,
    pub adjacency: AdjacencyMatrix,
    pub delta_h: Vec<Point>,
    pub pinned: BTreeMap<usize, Point>,
}

impl StateSnapshot {
    pub fn restore<S: Scalar>(&self) -> Result<ModelState<S>> {
        Ok(ModelState {
            embedding: Tensor::from_f64(&self.embedding, &self.embedding_shape)?,
            points: self.points.clone(),
            soft: self.soft.clone(),
            adjacency: self.adjacency.clone(),
            delta_h: self.delta_h.clone(),
            pinned: self.pinned.clone(),
        })
    }
}

/// Automatic-mode prediction for a batch of one `[1×3×S×S]` image.
pub fn initial_state<S: Scalar>(model: &Model<S>, image: &Tensor<S>) -> Result<ModelState<S>> {
    no_grad(|| {
        let out = model.forward(image, None, false)?;
        let sample = out.samples.into_iter().next().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let last = sample.last();
        let state = ModelState {
            points: last.point_values(),
            soft: last.soft_matrix(),
            adjacency: last.hard.clone(),
            embedding: sample.embedding.clone(),
            delta_h: vec![[0.0, 0.0]; model.cfg.num_points],
            pinned: BTreeMap::new(),
        };
        Ok(state)
    })
}

fn l1(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs()
}

/// The vertex farthest (Manhattan) from its ground-truth partner under the
/// matching shift, and the offset that would move it there. Ties go to the
/// smallest index.
pub fn worst_vertex(p: &[Point], q: &[Point]) -> Result<(usize, Point)> {
    let (i, j) = worst_pair(p, q)?;
    Ok((i, [q[j][0] - p[i][0], q[j][1] - p[i][1]]))
}

/// Index of the worst vertex and of its ground-truth partner.
pub fn worst_pair(p: &[Point], q: &[Point]) -> Result<(usize, usize)> {
    let (_, shift) = best_shift(p, q)?;
    let n = p.len();
    let mut best = (0, -1.0);
    for i in 0..n {
        let d = l1(p[i], q[(shift + i) % n]);
        if d > best.1 {
            best = (i, d);
        }
    }
    Ok((best.0, (shift + best.0) % n))
}

/// Feeds a correction through one refinement pass. The corrected vertex's
/// offset enters its ΔH features so neighbors can follow, and every vertex
/// corrected so far in the session stays exactly where it was put.
pub fn apply_correction<S: Scalar>(model: &Model<S>, state: &ModelState<S>, c: &Correction) -> Result<ModelState<S>> {
    let n = model.cfg.num_points;
    if c.vertex_index >= n {
        return Err(Error::InvalidInput(format!("vertex index {} out of range 0..{n}", c.vertex_index)));
    }
    if !c.target.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(format!("target {:?} outside the unit square", c.target)));
    }
    let i = c.vertex_index;
    let cur = state.points[i];
    let delta = [c.target[0] - cur[0], c.target[1] - cur[1]];
    let mut next = state.clone();
    if delta == [0.0, 0.0] {
        next.pinned.insert(i, c.target);
        return Ok(next);
    }
    next.delta_h[i] = delta;
    next.points[i] = c.target;
    next.pinned.insert(i, c.target);
    let flat = |v: &[Point]| -> Vec<f64> { v.iter().flat_map(|p| [p[0], p[1]]).collect() };
    let pass = no_grad(|| {
        let pts = Tensor::from_f64(&flat(&next.points), &[n, 2])?;
        let dh = Tensor::from_f64(&flat(&next.delta_h), &[n, 2])?;
        model.run_pass(&next.embedding, &pts, &state.adjacency, &dh)
    })?;
    next.points = pass.point_values();
    for (&j, &t) in &next.pinned {
        next.points[j] = t;
    }
    next.soft = pass.soft_matrix();
    next.adjacency = pass.hard;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub budget: usize,
    pub stop_miou: f64,
    /// Standard deviation of click noise in crop pixels; 0 clicks exactly.
    pub noise_px: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            budget: 5,
            stop_miou: 1.0,
            noise_px: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub class: String,
    pub disconnected: bool,
    /// IoU after each click, index 0 being automatic mode.
    pub ious: Vec<f64>,
    pub corrections: Vec<Correction>,
    /// Distance from each corrected vertex to its target after the pass.
    pub pin_errors: Vec<f64>,
    /// Whether the mean distance of the corrected vertex's two cycle
    /// neighbors to their matched ground truth did not grow.
    pub neighbors_improved: Vec<bool>,
    /// Clicks spent before reaching the stop threshold, if it was reached.
    pub clicks_to_threshold: Option<usize>,
    pub automatic: SampleScore,
}

fn neighbor_distance(p: &[Point], q: &[Point], adj: &AdjacencyMatrix, i: usize) -> Result<f64> {
    let (_, shift) = best_shift(p, q)?;
    let n = p.len();
    let nb = adj.neighbors(i);
    if nb.is_empty() {
        return Ok(0.0);
    }
    Ok(nb.iter().map(|&j| l1(p[j], q[(shift + j) % n])).sum::<f64>() / nb.len() as f64)
}

/// One simulated annotation session on an example.
pub fn simulate_session<S: Scalar>(model: &Model<S>, ex: &Example, cfg: &SimulateConfig) -> Result<SessionTrace> {
    let size = model.cfg.image_size;
    let image = batch_images::<S>(&[ex], size)?;
    let mut state = initial_state(model, &image)?;
    let automatic = score_polygons(&state.polygons().polygons, ex);
    let q = &ex.target.points;
    let mut trace = SessionTrace {
        class: ex.class.clone(),
        disconnected: ex.disconnected,
        ious: vec![automatic.iou],
        corrections: Vec::new(),
        pin_errors: Vec::new(),
        neighbors_improved: Vec::new(),
        clicks_to_threshold: (automatic.iou >= cfg.stop_miou).then_some(0),
        automatic,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for click in 1..=cfg.budget {
        if trace.clicks_to_threshold.is_some() {
            break;
        }
        let (i, j) = worst_pair(&state.points, q)?;
        let mut target = q[j];
        if cfg.noise_px > 0.0 {
            let noise = Normal::new(0.0, cfg.noise_px / size as f64)
                .map_err(|e| Error::InvalidConfig(format!("click noise: {e}")))?;
            target = [
                (target[0] + noise.sample(&mut rng)).clamp(0.0, 1.0),
                (target[1] + noise.sample(&mut rng)).clamp(0.0, 1.0),
            ];
        }
        let c = Correction {
            vertex_index: i,
            target,
            source: Source::Simulated,
        };
        let before = neighbor_distance(&state.points, q, &state.adjacency, i)?;
        let next = apply_correction(model, &state, &c)?;
        let after = neighbor_distance(&next.points, q, &state.adjacency, i)?;
        trace.neighbors_improved.push(after <= before);
        trace.pin_errors.push(l1(next.points[i], target));
        state = next;
        let iou = score_polygons(&state.polygons().polygons, ex).iou;
        trace.ious.push(iou);
        trace.corrections.push(c);
        if iou >= cfg.stop_miou {
            trace.clicks_to_threshold = Some(click);
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickBudgetReport {
    pub budget: usize,
    pub stop_miou: f64,
    /// Class-averaged mIoU after each click; length `budget + 1`.
    pub per_click_miou: Vec<f64>,
    pub per_class: BTreeMap<String, Vec<f64>>,
    /// Sessions by clicks spent to reach the threshold; the key
    /// `budget + 1` counts sessions that never reached it.
    pub clicks_histogram: BTreeMap<usize, usize>,
    pub sessions: Vec<SessionTrace>,
}

impl ClickBudgetReport {
    pub fn from_sessions(budget: usize, stop_miou: f64, sessions: Vec<SessionTrace>) -> Self {
        let at = |s: &SessionTrace, k: usize| *s.ious.get(k).or(s.ious.last()).unwrap_or(&0.0);
        let per_click_miou = (0..=budget)
            .map(|k| mean_iou_by_class(sessions.iter().map(|s| (s.class.as_str(), at(s, k)))))
            .collect();
        let mut per_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let classes: std::collections::BTreeSet<&str> = sessions.iter().map(|s| s.class.as_str()).collect();
        for c in classes {
            let members: Vec<&SessionTrace> = sessions.iter().filter(|s| s.class == c).collect();
            let row = (0..=budget)
                .map(|k| members.iter().map(|s| at(s, k)).sum::<f64>() / members.len() as f64)
                .collect();
            per_class.insert(c.to_string(), row);
        }
        let mut clicks_histogram = BTreeMap::new();
        for s in &sessions {
            *clicks_histogram.entry(s.clicks_to_threshold.unwrap_or(budget + 1)).or_insert(0) += 1;
        }
        Self {
            budget,
            stop_miou,
            per_click_miou,
            per_class,
            clicks_histogram,
            sessions,
        }
    }

    pub fn gain(&self) -> f64 {
        self.per_click_miou.last().copied().unwrap_or(0.0) - self.per_click_miou.first().copied().unwrap_or(0.0)
    }

    /// One row per click: overall mIoU and each class's mean.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("click,miou");
        for c in self.per_class.keys() {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for k in 0..self.per_click_miou.len() {
            s.push_str(&format!("{k},{}", self.per_click_miou[k]));
            for v in self.per_class.values() {
                s.push_str(&format!(",{}", v[k]));
            }
            s.push('\n');
        }
        s
    }
}

pub fn simulate<S: Scalar>(model: &Model<S>, examples: &[Example], cfg: &SimulateConfig) -> Result<ClickBudgetReport> {
    let sessions = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let c = SimulateConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            };
            simulate_session(model, ex, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClickBudgetReport::from_sessions(cfg.budget, cfg.stop_miou, sessions))
}
