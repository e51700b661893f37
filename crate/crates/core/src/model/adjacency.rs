use crate::gtbuild::{AdjacencyMatrix, AdjacencyMode};
use crate::imgeo::{Point, PolygonSet};

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

fn two_best(s: &[f64], n: usize, i: usize) -> [usize; 2] {
    let mut best: [Option<usize>; 2] = [None, None];
    for j in (0..n).filter(|&j| j != i) {
        let v = s[i * n + j];
        // Strict comparisons keep the smaller index on ties.
        match best {
            [None, _] => best[0] = Some(j),
            [Some(a), None] => {
                if v > s[i * n + a] {
                    best = [Some(j), Some(a)];
                } else {
                    best[1] = Some(j);
                }
            }
            [Some(a), Some(b)] => {
                if v > s[i * n + a] {
                    best = [Some(j), Some(a)];
                } else if v > s[i * n + b] {
                    best[1] = Some(j);
                }
            }
        }
    }
    [best[0].unwrap(), best[1].unwrap()]
}

/// Reduces a soft adjacency to a symmetric graph in which every vertex has
/// exactly two neighbors, so each row holds three nonzeros with the diagonal.
///
/// Rows keep their two strongest off-diagonal entries of the symmetrized
/// scores; an edge survives only if both endpoints kept it. Open paths are
/// then joined greedily by score, closing a path into a cycle only once it
/// has at least three vertices. A last fragment too short to close is
/// spliced into the cycle edge where it scores best.
pub fn truncate_adjacency(soft: &AdjacencyMatrix) -> AdjacencyMatrix {
    let n = soft.n;
    assert!(n >= 3, "adjacency truncation needs at least 3 vertices");
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = 0.5 * (soft.get(i, j) + soft.get(j, i));
        }
    }
    let keep: Vec<[usize; 2]> = (0..n).map(|i| two_best(&s, n, i)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::with_capacity(2); n];
    let mut dsu = DisjointSet::new(n);
    for i in 0..n {
        for &j in &keep[i] {
            if i < j && keep[j].contains(&i) {
                adj[i].push(j);
                adj[j].push(i);
                dsu.union(i, j);
            }
        }
    }
    if adj.iter().any(|a| a.len() < 2) {
        let mut cands: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| adj[i].len() < 2 && adj[j].len() < 2 && !adj[i].contains(&j))
            .collect();
        cands.sort_by(|a, b| s[b.0 * n + b.1].total_cmp(&s[a.0 * n + a.1]).then(a.cmp(b)));
        for (i, j) in cands {
            if adj[i].len() >= 2 || adj[j].len() >= 2 || adj[i].contains(&j) {
                continue;
            }
            let (ri, rj) = (dsu.find(i), dsu.find(j));
            if ri == rj && dsu.size[ri] < 3 {
                continue;
            }
            adj[i].push(j);
            adj[j].push(i);
            dsu.union(i, j);
        }
        splice_leftover(&s, n, &mut adj);
    }
    let mut out = AdjacencyMatrix::zeros(n, AdjacencyMode::Hard);
    for (i, nb) in adj.iter().enumerate() {
        out.set(i, i, 1.0);
        for &j in nb {
            out.set(i, j, 1.0);
        }
    }
    out
}

/// Inserts a remaining fragment of one or two vertices into a cycle.
fn splice_leftover(s: &[f64], n: usize, adj: &mut [Vec<usize>]) {
    let deficient: Vec<usize> = (0..n).filter(|&i| adj[i].len() < 2).collect();
    if deficient.is_empty() {
        return;
    }
    let (a, b) = match deficient.as_slice() {
        [a] => (*a, *a),
        [a, b] => (*a, *b),
        other => panic!("repair left {} open vertices", other.len()),
    };
    let sc = |x: usize, y: usize| s[x * n + y];
    let mut best: Option<(f64, usize, usize, bool)> = None;
    for x in 0..n {
        if x == a || x == b {
            continue;
        }
        for &y in &adj[x] {
            if y < x || y == a || y == b {
                continue;
            }
            for flip in [false, true] {
                let (p, q) = if flip { (b, a) } else { (a, b) };
                let score = sc(x, p) + sc(q, y);
                if best.is_none_or(|bst| score > bst.0) {
                    best = Some((score, x, y, flip));
                }
            }
        }
    }
    let (_, x, y, flip) = best.expect("a cycle to splice into");
    let (p, q) = if flip { (b, a) } else { (a, b) };
    adj[x].retain(|&v| v != y);
    adj[y].retain(|&v| v != x);
    adj[x].push(p);
    adj[p].push(x);
    adj[y].push(q);
    adj[q].push(y);
}

/// Drawable polygons recovered from a hard adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub polygons: PolygonSet,
    /// Components with fewer than three vertices, left out of `polygons`.
    pub dropped: usize,
    /// Some component was not a simple cycle and was ordered by angle.
    pub degraded: bool,
}

/// Splits vertices into connected components of the off-diagonal graph and
/// orders each as a closed loop.
pub fn decompose_components(hard: &AdjacencyMatrix, points: &[Point]) -> Decomposition {
    let n = hard.n;
    let nbrs: Vec<Vec<usize>> = (0..n).map(|i| hard.neighbors(i)).collect();
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    let mut dropped = 0;
    let mut degraded = false;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut members = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < members.len() {
            let v = members[head];
            head += 1;
            for &u in &nbrs[v] {
                if !seen[u] {
                    seen[u] = true;
                    members.push(u);
                }
            }
        }
        if members.len() < 3 {
            dropped += 1;
            continue;
        }
        members.sort_unstable();
        if members.iter().all(|&v| nbrs[v].len() == 2) {
            let mut order = vec![members[0]];
            let mut prev = members[0];
            let mut cur = *nbrs[prev].iter().min().unwrap();
            while cur != members[0] {
                order.push(cur);
                let next = if nbrs[cur][0] == prev { nbrs[cur][1] } else { nbrs[cur][0] };
                prev = cur;
                cur = next;
            }
            components.push(order);
        } else {
            degraded = true;
            let cx = members.iter().map(|&v| points[v][0]).sum::<f64>() / members.len() as f64;
            let cy = members.iter().map(|&v| points[v][1]).sum::<f64>() / members.len() as f64;
            let mut order = members.clone();
            order.sort_by(|&a, &b| {
                let ta = (points[a][1] - cy).atan2(points[a][0] - cx);
                let tb = (points[b][1] - cy).atan2(points[b][0] - cx);
                ta.total_cmp(&tb).then(a.cmp(&b))
            });
            components.push(order);
        }
    }
    Decomposition {
        polygons: PolygonSet {
            points: points.to_vec(),
            components,
        },
        dropped,
        degraded,
    }
}
