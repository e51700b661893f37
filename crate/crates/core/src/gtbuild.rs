//! Ground-truth point layout and block-diagonal adjacency for objects made
//! of several disconnected parts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgeo::{
    initial_circle, perimeter, resample_arc, sample_boundary_points, signed_area, Point, PolygonSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Cw,
    Ccw,
}

impl Orientation {
    /// Whether a loop's signed area agrees with this orientation.
    pub fn matches_area(self, area: f64) -> bool {
        match self {
            Orientation::Cw => area < 0.0,
            Orientation::Ccw => area > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLayout {
    pub sizes: Vec<usize>,
    pub orientations: Vec<Orientation>,
}

impl ComponentLayout {
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// First point index of every block.
    pub fn offsets(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .scan(0, |acc, &s| {
                let start = *acc;
                *acc += s;
                Some(start)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.len() != self.orientations.len() {
            return Err(Error::InvalidConfig("layout needs one orientation per block".into()));
        }
        if let Some(s) = self.sizes.iter().find(|&&s| s < 3) {
            return Err(Error::InvalidConfig(format!("block of {s} points cannot form a polygon")));
        }
        Ok(())
    }
}

/// Splits `n` points into `k` blocks: the first `k−1` hold ⌊n/k⌋ points and
/// the last holds the remainder. Block `t` (1-based) is clockwise iff `t` is odd.
pub fn component_sizes(n: usize, k: usize) -> Result<ComponentLayout> {
    if k == 0 || n < 3 * k {
        return Err(Error::InvalidConfig(format!(
            "k = {k} is out of range for N = {n} (need 1 <= k <= N/3)"
        )));
    }
    let m = n / k;
    let mut sizes = vec![m; k - 1];
    sizes.push(n - m * (k - 1));
    let orientations = (1..=k)
        .map(|t| if t % 2 == 1 { Orientation::Cw } else { Orientation::Ccw })
        .collect();
    Ok(ComponentLayout { sizes, orientations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjacencyMode {
    Soft,
    Hard,
}

/// Dense square matrix over polygon vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    pub n: usize,
    pub entries: Vec<f64>,
    pub mode: AdjacencyMode,
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize, mode: AdjacencyMode) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
            mode,
        }
    }

    pub fn from_entries(n: usize, entries: Vec<f64>, mode: AdjacencyMode) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Dimension(format!(
                "adjacency of size {n} needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        Ok(Self { n, entries, mode })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn row_nonzeros(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&v| v != 0.0).count()
    }

    /// Off-diagonal nonzero columns of row `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j != i && self.get(i, j) != 0.0).collect()
    }
}

/// Block-diagonal matrix of one cycle per block, with ones on the diagonal.
pub fn build_gt_adjacency(layout: &ComponentLayout) -> Result<AdjacencyMatrix> {
    layout.validate()?;
    let n = layout.total();
    let mut a = AdjacencyMatrix::zeros(n, AdjacencyMode::Hard);
    for (&start, &m) in layout.offsets().iter().zip(&layout.sizes) {
        for i in 0..m {
            let g = start + i;
            let next = start + (i + 1) % m;
            a.set(g, g, 1.0);
            a.set(g, next, 1.0);
            a.set(next, g, 1.0);
        }
    }
    Ok(a)
}

/// Ground-truth points plus bookkeeping about the assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct GtAssignment {
    /// Normalized points; `components` are the layout blocks.
    pub points: PolygonSet,
    /// Geometric components discarded because there were more than `k`.
    pub dropped: usize,
    /// Point spacing fell below one pixel somewhere.
    pub repeated: bool,
    /// For each block, the index of the geometric component it lies on.
    pub block_owner: Vec<usize>,
}

const START_CANDIDATES: usize = 64;
const MAX_PERMUTED: usize = 6;

/// Distributes `k` blocks over `weights.len()` components: one each, then
/// the rest by the highest-averages rule on `weights`.
fn allocate_blocks(weights: &[f64], k: usize) -> Vec<usize> {
    let mut alloc = vec![1usize; weights.len()];
    for _ in weights.len()..k {
        let best = (0..weights.len())
            .max_by(|&a, &b| {
                let qa = weights[a] / (alloc[a] + 1) as f64;
                let qb = weights[b] / (alloc[b] + 1) as f64;
                qa.total_cmp(&qb).then(b.cmp(&a))
            })
            .unwrap();
        alloc[best] += 1;
    }
    alloc
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n > MAX_PERMUTED {
        return vec![(0..n).collect()];
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    heap_permute(n, &mut cur, &mut out);
    out.sort();
    out
}

fn heap_permute(k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(cur.clone());
        return;
    }
    for i in 0..k {
        heap_permute(k - 1, cur, out);
        let j = if k % 2 == 0 { i } else { 0 };
        cur.swap(j, k - 1);
    }
}

/// Samples the points of consecutive blocks sharing one clockwise loop,
/// starting `offset` units along it.
fn sample_blocks(
    cw_loop: &[Point],
    sizes: &[usize],
    orientations: &[Orientation],
    offset: f64,
) -> (Vec<Point>, bool) {
    let mut repeated = false;
    let mut out = Vec::with_capacity(sizes.iter().sum());
    if sizes.len() == 1 {
        let s = sample_boundary_points(cw_loop, sizes[0], offset);
        repeated |= s.repeated;
        let mut pts = s.points;
        if orientations[0] == Orientation::Ccw {
            pts[1..].reverse();
        }
        out.extend(pts);
        return (out, repeated);
    }
    let total = perimeter(cw_loop);
    let spans: usize = sizes.iter().map(|m| m - 1).sum();
    let mut start = offset;
    for (&m, &o) in sizes.iter().zip(orientations) {
        let len = total * (m - 1) as f64 / spans as f64;
        let s = resample_arc(cw_loop, start, len, m);
        repeated |= s.repeated;
        let mut pts = s.points;
        if o == Orientation::Ccw {
            pts.reverse();
        }
        out.extend(pts);
        start += len;
    }
    (out, repeated)
}

fn sq_dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Places the layout's blocks on the object's boundary loops.
///
/// `loops` are closed boundary polylines in crop pixel coordinates and
/// `crop` is `(width, height)`; the returned points are normalized to the
/// crop. Component order and start positions are chosen to stay closest to
/// the initial circle so that the same shape always yields the same indexing.
pub fn assign_gt_points(
    loops: &[Vec<Point>],
    layout: &ComponentLayout,
    crop: (f64, f64),
) -> Result<GtAssignment> {
    layout.validate()?;
    let k = layout.k();
    let mut comps: Vec<(usize, Vec<Point>, f64)> = loops
        .iter()
        .enumerate()
        .filter(|(_, l)| l.len() >= 3 && signed_area(l) != 0.0)
        .map(|(i, l)| {
            let mut l = l.clone();
            let area = signed_area(&l);
            if area > 0.0 {
                l.reverse();
            }
            (i, l, area.abs())
        })
        .collect();
    if comps.is_empty() {
        return Err(Error::InvalidAnnotation("object has no usable boundary component".into()));
    }
    let mut dropped = loops.len() - comps.len();
    if comps.len() > k {
        comps.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        dropped += comps.len() - k;
        comps.truncate(k);
        comps.sort_by_key(|c| c.0);
    }
    if dropped > 0 {
        log::warn!("gt assignment dropped {dropped} boundary component(s)");
    }
    let norm: Vec<Vec<Point>> = comps
        .iter()
        .map(|(_, l, _)| l.iter().map(|p| [p[0] / crop.0, p[1] / crop.1]).collect())
        .collect();
    let pix_per_unit = crop.0.max(crop.1);
    let alloc = allocate_blocks(&norm.iter().map(|l| perimeter(l)).collect::<Vec<_>>(), k);
    let reference = initial_circle(layout.total()).points;
    let offsets = layout.offsets();

    let mut best: Option<(f64, Vec<Point>, bool, Vec<usize>)> = None;
    for perm in permutations(norm.len()) {
        let mut pts: Vec<Point> = Vec::with_capacity(layout.total());
        let mut owner = Vec::with_capacity(k);
        let mut repeated = false;
        let mut cost = 0.0;
        let mut block = 0;
        for &ci in &perm {
            let b = alloc[ci];
            let sizes = &layout.sizes[block..block + b];
            let ors = &layout.orientations[block..block + b];
            let first = offsets[block];
            let lp = &norm[ci];
            let per = perimeter(lp);
            let mut local: Option<(f64, Vec<Point>, bool)> = None;
            for j in 0..START_CANDIDATES {
                let off = per * j as f64 / START_CANDIDATES as f64;
                let (cand, _) = sample_blocks(lp, sizes, ors, off);
                let c: f64 = cand
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| sq_dist(p, reference[first + i]))
                    .sum();
                if local.as_ref().is_none_or(|l| c < l.0) {
                    local = Some((c, cand, false));
                }
            }
            let (c, cand, _) = local.unwrap();
            // Spacing check in pixels.
            let step_px = per * pix_per_unit / sizes.iter().sum::<usize>() as f64;
            repeated |= step_px < 1.0;
            cost += c;
            pts.extend(cand);
            owner.extend(std::iter::repeat_n(comps[ci].0, b));
            block += b;
        }
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, pts, repeated, owner));
        }
    }
    let (_, pts, repeated, block_owner) = best.unwrap();
    Ok(GtAssignment {
        points: PolygonSet::from_blocks(pts, &layout.sizes),
        dropped,
        repeated,
        block_owner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Orientation::{Ccw, Cw};

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point> {
        vec![[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]
    }

    #[test]
    fn sizes_examples() {
        let l = component_sizes(40, 3).unwrap();
        assert_eq!(l.sizes, vec![13, 13, 14]);
        assert_eq!(l.orientations, vec![Cw, Ccw, Cw]);
        let l = component_sizes(40, 1).unwrap();
        assert_eq!((l.sizes, l.orientations), (vec![40], vec![Cw]));
        let l = component_sizes(7, 2).unwrap();
        assert_eq!((l.sizes, l.orientations), (vec![3, 4], vec![Cw, Ccw]));
        assert!(matches!(component_sizes(8, 3), Err(Error::InvalidConfig(_))));
        assert!(component_sizes(8, 0).is_err());
    }

    #[test]
    fn adjacency_examples() {
        let a = build_gt_adjacency(&component_sizes(4, 1).unwrap()).unwrap();
        for i in 0..4 {
            let mut expect = [0.0; 4];
            expect[(i + 3) % 4] = 1.0;
            expect[i] = 1.0;
            expect[(i + 1) % 4] = 1.0;
            assert_eq!(a.row(i), &expect);
        }
        let a = build_gt_adjacency(&component_sizes(6, 2).unwrap()).unwrap();
        for i in 0..3 {
            for j in 3..6 {
                assert_eq!(a.get(i, j), 0.0);
                assert_eq!(a.get(j, i), 0.0);
            }
        }
        assert!(a.is_symmetric());
        assert!((0..6).all(|i| a.row_nonzeros(i) == 3));
    }

    #[test]
    fn single_component_clockwise() {
        let l = component_sizes(6, 1).unwrap();
        let g = assign_gt_points(&[square(8.0, 8.0, 40.0)], &l, (64.0, 64.0)).unwrap();
        assert_eq!(g.points.len(), 6);
        assert!(signed_area(&g.points.points) < 0.0);
        assert_eq!(g.dropped, 0);
    }

    #[test]
    fn two_squares_alternate_orientation() {
        let l = component_sizes(8, 2).unwrap();
        // Given counter-clockwise on purpose; the builder normalizes.
        let mut a = square(4.0, 20.0, 20.0);
        a.reverse();
        let b = square(40.0, 20.0, 20.0);
        let g = assign_gt_points(&[a, b], &l, (64.0, 64.0)).unwrap();
        let blk0 = g.points.component_points(0);
        let blk1 = g.points.component_points(1);
        assert!(signed_area(&blk0) < 0.0);
        assert!(signed_area(&blk1) > 0.0);
        assert_eq!(g.points.components, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
    }

    #[test]
    fn surplus_blocks_split_one_loop() {
        let l = component_sizes(12, 2).unwrap();
        let circle: Vec<Point> = (0..100)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / 100.0;
                [32.0 + 20.0 * t.cos(), 32.0 - 20.0 * t.sin()]
            })
            .collect();
        let g = assign_gt_points(&[circle], &l, (64.0, 64.0)).unwrap();
        assert_eq!(g.block_owner, vec![0, 0]);
        assert!(signed_area(&g.points.component_points(0)) < 0.0);
        assert!(signed_area(&g.points.component_points(1)) > 0.0);
        // The two arcs share their endpoints.
        let p = &g.points.points;
        let close = |a: Point, b: Point| sq_dist(a, b) < 1e-18;
        assert!(close(p[5], p[6]) || close(p[0], p[6]) || close(p[5], p[11]) || close(p[0], p[11]));
    }

    #[test]
    fn extra_components_dropped_by_area() {
        let l = component_sizes(6, 1).unwrap();
        let g = assign_gt_points(&[square(0.0, 0.0, 4.0), square(10.0, 10.0, 30.0)], &l, (64.0, 64.0))
            .unwrap();
        assert_eq!(g.dropped, 1);
        assert_eq!(g.block_owner, vec![1]);
    }

    #[test]
    fn no_components_rejected() {
        let l = component_sizes(6, 1).unwrap();
        assert!(matches!(
            assign_gt_points(&[], &l, (64.0, 64.0)),
            Err(Error::InvalidAnnotation(_))
        ));
    }

    #[test]
    fn highest_averages_allocation() {
        assert_eq!(allocate_blocks(&[1.0], 3), vec![3]);
        assert_eq!(allocate_blocks(&[3.0, 1.0], 3), vec![2, 1]);
        assert_eq!(allocate_blocks(&[1.0, 1.0], 2), vec![1, 1]);
        assert_eq!(permutations(3).len(), 6);
    }
}
