//! Training objectives over model outputs.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::gtbuild::AdjacencyMatrix;
use crate::imgeo::{MotionMap, Point};
use crate::model::BatchOutput;
use crate::tensor::{Scalar, Tensor};

pub const SEP_EPS: f64 = 1e-7;
pub const MOTION_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub matching: f64,
    pub l2: f64,
    pub motion: f64,
    pub separating: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            matching: 1.0,
            l2: 0.5,
            motion: 1.0,
            separating: 1.0,
            beta: 0.9,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.matching, self.l2, self.motion, self.separating];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig("loss weights must be nonnegative, one positive".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta {} outside (0,1)", self.beta)));
        }
        Ok(())
    }
}

/// `Σ_i |p_i − q_{(shift+i) mod N}|₁`, summed coordinate by coordinate in
/// index order.
pub fn shifted_l1(p: &[Point], q: &[Point], shift: usize) -> f64 {
    let n = q.len();
    let mut s = 0.0;
    for (i, pi) in p.iter().enumerate() {
        let qi = q[(shift + i) % n];
        s += (pi[0] - qi[0]).abs();
        s += (pi[1] - qi[1]).abs();
    }
    s
}

/// Cyclic shift minimizing the L1 distance; ties go to the smallest shift.
pub fn best_shift(p: &[Point], q: &[Point]) -> Result<(f64, usize)> {
    if p.is_empty() || p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "point matching needs equal nonzero sizes, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut best = (f64::INFINITY, 0);
    for j in 0..q.len() {
        let c = shifted_l1(p, q, j);
        if c < best.0 {
            best = (c, j);
        }
    }
    Ok(best)
}

pub fn roll(q: &[Point], shift: usize) -> Vec<Point> {
    let n = q.len();
    (0..n).map(|i| q[(shift + i) % n]).collect()
}

/// Reindexes a ground-truth adjacency so that row `i` describes
/// `q_{(shift+i) mod N}`.
pub fn roll_adjacency(a: &AdjacencyMatrix, shift: usize) -> AdjacencyMatrix {
    let n = a.n;
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.get((shift + i) % n, (shift + j) % n));
        }
    }
    out
}

fn points_of<S: Scalar>(p: &Tensor<S>) -> Vec<Point> {
    p.to_f64_vec().chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn point_tensor<S: Scalar>(q: &[Point]) -> Result<Tensor<S>> {
    let flat: Vec<f64> = q.iter().flat_map(|p| [p[0], p[1]]).collect();
    Tensor::from_f64(&flat, &[q.len(), 2])
}

/// Minimum over cyclic shifts of the L1 distance between `P: [N×2]` and
/// `Q`, with the minimizing shift. The gradient flows through the pairing
/// chosen by that shift.
pub fn point_matching_loss<S: Scalar>(p: &Tensor<S>, q: &[Point]) -> Result<(Tensor<S>, usize)> {
    if p.ndim() != 2 || p.shape()[1] != 2 {
        return dim_err(format!("points must be [N,2], got {:?}", p.shape()));
    }
    let (_, shift) = best_shift(&points_of(p), q)?;
    let target = point_tensor::<S>(&roll(q, shift))?;
    Ok((p.sub(&target)?.abs().sum(), shift))
}

/// `Σ_i ‖p_i − q_i‖₂` under index-wise pairing.
pub fn point_l2_loss<S: Scalar>(p: &Tensor<S>, q: &[Point]) -> Result<Tensor<S>> {
    if q.is_empty() || p.shape() != [q.len(), 2] {
        return Err(Error::InvalidInput(format!(
            "point L2 needs [N,2] points against {} targets, got {:?}",
            q.len(),
            p.shape()
        )));
    }
    Ok(p.sub(&point_tensor::<S>(q)?)?.row_l2_norm()?.sum())
}

/// Class-balanced binary cross-entropy between a soft `[N×N]` prediction
/// and a binary target, averaged over entries.
pub fn separating_loss<S: Scalar>(a_pred: &Tensor<S>, a_gt: &AdjacencyMatrix, beta: f64) -> Result<Tensor<S>> {
    let n = a_gt.n;
    if a_pred.shape() != [n, n] {
        return dim_err(format!("soft adjacency {:?} against {n}x{n} target", a_pred.shape()));
    }
    let pos: Vec<S> = a_gt.entries.iter().map(|&v| S::lit(if v != 0.0 { beta } else { 0.0 })).collect();
    let neg: Vec<S> = a_gt
        .entries
        .iter()
        .map(|&v| S::lit(if v != 0.0 { 0.0 } else { 1.0 - beta }))
        .collect();
    let a = a_pred.clamp(SEP_EPS, 1.0 - SEP_EPS);
    let lp = a.ln().mul_const(&pos)?;
    let ln = a.neg().add_scalar(1.0).ln().mul_const(&neg)?;
    Ok(lp.add(&ln)?.mean().neg())
}

/// Mean squared angle between predicted `[2×H×W]` vectors and the unit
/// ground-truth field over its valid pixels.
pub fn motion_loss<S: Scalar>(v: &Tensor<S>, gt: &MotionMap) -> Result<Tensor<S>> {
    let (h, w) = (gt.height, gt.width);
    if v.shape() != [2, h, w] {
        return dim_err(format!("motion prediction {:?} against {h}x{w} target", v.shape()));
    }
    let valid = gt.valid_mask();
    let count = valid.iter().filter(|&&b| b).count();
    if count == 0 {
        log::warn!("motion loss: no valid pixels");
        return Ok(Tensor::scalar(S::zero()).add(&v.sum().scale(0.0))?);
    }
    let hw = h * w;
    let ux: Vec<S> = gt.vectors[..hw].iter().map(|&x| S::lit(x)).collect();
    let uy: Vec<S> = gt.vectors[hw..].iter().map(|&x| S::lit(x)).collect();
    let mask: Vec<S> = valid.iter().map(|&b| if b { S::one() } else { S::zero() }).collect();
    let vx = v.narrow(0, 0, 1)?.reshape(&[hw])?;
    let vy = v.narrow(0, 1, 1)?.reshape(&[hw])?;
    let norm = vx
        .square()
        .add(&vy.square())?
        .clamp_min(MOTION_EPS * MOTION_EPS)
        .sqrt();
    let dot = vx.mul_const(&ux)?.add(&vy.mul_const(&uy)?)?.div(&norm)?;
    let ang = dot.clamp(-1.0 + MOTION_EPS, 1.0 - MOTION_EPS).acos();
    Ok(ang.square().mul_const(&mask)?.sum().scale(1.0 / count as f64))
}

/// Per-sample supervision.
#[derive(Debug, Clone)]
pub struct Target {
    pub points: Vec<Point>,
    pub adjacency: AdjacencyMatrix,
    pub motion: MotionMap,
}

/// Per-term loss values, averaged over the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub matching: f64,
    pub l2: f64,
    pub motion: f64,
    pub separating: f64,
}

impl LossReport {
    pub fn accumulate(&mut self, other: &LossReport, weight: f64) {
        self.total += other.total * weight;
        self.matching += other.matching * weight;
        self.l2 += other.l2 * weight;
        self.motion += other.motion * weight;
        self.separating += other.separating * weight;
    }
}

/// Weighted sum of all terms. Point and separating terms are averaged over
/// the refinement passes; every term is averaged over the batch. Pairings
/// for the L2 and separating terms follow each pass's matching shift.
pub fn total_loss<S: Scalar>(
    out: &BatchOutput<S>,
    targets: &[Target],
    weights: &LossWeights,
) -> Result<(Tensor<S>, LossReport)> {
    if targets.len() != out.samples.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets for {} samples",
            targets.len(),
            out.samples.len()
        )));
    }
    let b = targets.len() as f64;
    let mut terms: [Vec<Tensor<S>>; 4] = Default::default();
    for (i, (sample, t)) in out.samples.iter().zip(targets).enumerate() {
        let np = sample.passes.len() as f64;
        let mut m_sum = Vec::new();
        let mut l2_sum = Vec::new();
        let mut sep_sum = Vec::new();
        for pass in &sample.passes {
            let (lm, shift) = point_matching_loss(&pass.points, &t.points)?;
            m_sum.push(lm);
            if weights.l2 > 0.0 {
                l2_sum.push(point_l2_loss(&pass.points, &roll(&t.points, shift))?);
            }
            sep_sum.push(separating_loss(&pass.soft, &roll_adjacency(&t.adjacency, shift), weights.beta)?);
        }
        let mean_of = |v: Vec<Tensor<S>>| -> Result<Tensor<S>> {
            let mut it = v.into_iter();
            let mut acc = it.next().expect("nonempty");
            for x in it {
                acc = acc.add(&x)?;
            }
            Ok(acc.scale(1.0 / np))
        };
        terms[0].push(mean_of(m_sum)?);
        if weights.l2 > 0.0 {
            terms[1].push(mean_of(l2_sum)?);
        }
        let (_, c, h, w) = (0, 2, out.motion.shape()[2], out.motion.shape()[3]);
        let v = out.motion.narrow(0, i, 1)?.reshape(&[c, h, w])?;
        terms[2].push(motion_loss(&v, &t.motion)?);
        terms[3].push(mean_of(sep_sum)?);
    }
    let lambdas = [weights.matching, weights.l2, weights.motion, weights.separating];
    let mut report = LossReport::default();
    let mut total: Option<Tensor<S>> = None;
    for (k, (ts, &lam)) in terms.into_iter().zip(&lambdas).enumerate() {
        if ts.is_empty() {
            continue;
        }
        let mut acc = ts[0].clone();
        for x in &ts[1..] {
            acc = acc.add(x)?;
        }
        let mean = acc.scale(1.0 / b);
        let value = mean.item().to_f64().unwrap_or(f64::NAN);
        match k {
            0 => report.matching = value,
            1 => report.l2 = value,
            2 => report.motion = value,
            _ => report.separating = value,
        }
        if lam == 0.0 {
            continue;
        }
        let weighted = mean.scale(lam);
        total = Some(match total {
            None => weighted,
            Some(t) => t.add(&weighted)?,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidConfig("all loss weights are zero".into()))?;
    report.total = total.item().to_f64().unwrap_or(f64::NAN);
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtbuild::{build_gt_adjacency, component_sizes, AdjacencyMode};
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect()
    }

    fn tensor(p: &[Point]) -> Tensor<f64> {
        point_tensor::<f64>(p).unwrap().requires_grad()
    }

    #[test]
    fn matching_identity_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = pts(&mut rng, 10);
        let (l, j) = point_matching_loss(&tensor(&q), &q).unwrap();
        assert_eq!((l.item(), j), (0.0, 0));
        let p = roll(&q, 3);
        let (l, j) = point_matching_loss(&tensor(&p), &q).unwrap();
        assert_eq!((l.item(), j), (0.0, 3));
        assert!(point_matching_loss(&Tensor::<f64>::zeros(&[0, 2]), &[]).is_err());
    }

    #[test]
    fn matching_equals_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..=40);
            let (p, q) = (pts(&mut rng, n), pts(&mut rng, n));
            let oracle = (0..n)
                .map(|j| {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += (p[i][0] - q[(i + j) % n][0]).abs();
                        s += (p[i][1] - q[(i + j) % n][1]).abs();
                    }
                    s
                })
                .fold(f64::INFINITY, f64::min);
            let (l, _) = point_matching_loss(&tensor(&p), &q).unwrap();
            assert_eq!(l.item(), oracle);
        }
    }

    #[test]
    fn l2_examples() {
        let p = tensor(&[[0.0, 0.0]]);
        assert_eq!(point_l2_loss(&p, &[[3.0, 4.0]]).unwrap().item(), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = pts(&mut rng, 6);
        assert_eq!(point_l2_loss(&tensor(&q), &q).unwrap().item(), 0.0);
        let p = pts(&mut rng, 6);
        let err = grad_check(|x| point_l2_loss(&x[0], &q), &[tensor(&p)], 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn separating_closed_forms() {
        let gt = build_gt_adjacency(&component_sizes(8, 2).unwrap()).unwrap();
        let half = Tensor::<f64>::full(&[8, 8], 0.5);
        let rho = 24.0 / 64.0;
        let beta = 0.9;
        let expect = 2f64.ln() * (beta * rho + (1.0 - beta) * (1.0 - rho));
        assert!((separating_loss(&half, &gt, beta).unwrap().item() - expect).abs() < 1e-12);
        let perfect = Tensor::from_vec(gt.entries.clone(), &[8, 8]).unwrap();
        assert!(separating_loss(&perfect, &gt, beta).unwrap().item() < 1e-6);
    }

    #[test]
    fn separating_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 9;
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.01..0.99)).collect();
        let g: Vec<f64> = (0..n * n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let gt = AdjacencyMatrix::from_entries(n, g.clone(), AdjacencyMode::Hard).unwrap();
        let beta = 0.8;
        let direct: f64 = a
            .iter()
            .zip(&g)
            .map(|(&p, &t)| if t == 1.0 { -beta * p.ln() } else { -(1.0 - beta) * (1.0 - p).ln() })
            .sum::<f64>()
            / (n * n) as f64;
        let l = separating_loss(&Tensor::from_vec(a.clone(), &[n, n]).unwrap(), &gt, beta).unwrap();
        assert!((l.item() - direct).abs() < 1e-12);
        let err = grad_check(
            |x| separating_loss(&x[0], &gt, beta),
            &[Tensor::param(a, &[n, n]).unwrap()],
            1e-6,
        );
        assert!(err < 1e-4, "{err}");
    }

    fn field(h: usize, w: usize, u: [f64; 2]) -> MotionMap {
        let mut v = vec![u[0]; h * w];
        v.extend(vec![u[1]; h * w]);
        MotionMap { height: h, width: w, vectors: v }
    }

    fn pred(h: usize, w: usize, v: [f64; 2]) -> Tensor<f64> {
        let mut d = vec![v[0]; h * w];
        d.extend(vec![v[1]; h * w]);
        Tensor::param(d, &[2, h, w]).unwrap()
    }

    #[test]
    fn motion_closed_forms() {
        let gt = field(3, 4, [0.6, 0.8]);
        let pi = std::f64::consts::PI;
        assert!(motion_loss(&pred(3, 4, [3.0, 4.0]), &gt).unwrap().item() < 1e-5);
        let anti = motion_loss(&pred(3, 4, [-3.0, -4.0]), &gt).unwrap().item();
        // The clamp keeps the angle 2e-3 short of pi.
        assert!((anti - pi * pi).abs() < 1e-2);
        let perp = motion_loss(&pred(3, 4, [-4.0, 3.0]), &gt).unwrap().item();
        assert!((perp - pi * pi / 4.0).abs() < 1e-9);
        let empty = field(2, 2, [0.0, 0.0]);
        assert_eq!(motion_loss(&pred(2, 2, [1.0, 0.0]), &empty).unwrap().item(), 0.0);
    }

    #[test]
    fn motion_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (3, 3);
        let mut u = Vec::new();
        let mut angles = Vec::new();
        for _ in 0..h * w {
            angles.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        u.extend(angles.iter().map(|a| a.cos()));
        u.extend(angles.iter().map(|a| a.sin()));
        u[4] = 0.0;
        u[h * w + 4] = 0.0;
        let gt = MotionMap { height: h, width: w, vectors: u };
        let v: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = grad_check(|x| motion_loss(&x[0], &gt), &[Tensor::param(v, &[2, h, w]).unwrap()], 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn rolled_adjacency_tracks_shift() {
        let a = build_gt_adjacency(&component_sizes(6, 2).unwrap()).unwrap();
        let r = roll_adjacency(&a, 1);
        // Row 0 now describes vertex 1 whose neighbors 0 and 2 sit at 5 and 1.
        assert_eq!(r.neighbors(0), vec![1, 5]);
        assert_eq!(roll_adjacency(&a, 0), a);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let z = LossWeights { matching: 0.0, l2: 0.0, motion: 0.0, separating: 0.0, beta: 0.5 };
        assert!(z.validate().is_err());
        let b = LossWeights { beta: 1.0, ..Default::default() };
        assert!(b.validate().is_err());
    }
}
