use crate::error::{dim_err, Result};
use crate::gtbuild::AdjacencyMatrix;
use crate::nn::{Linear, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Off-diagonal part of a hard adjacency as a constant matrix.
pub fn neighbor_matrix<S: Scalar>(a: &AdjacencyMatrix) -> Tensor<S> {
    let n = a.n;
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && a.get(i, j) != 0.0 {
                v[i * n + j] = 1.0;
            }
        }
    }
    Tensor::from_f64(&v, &[n, n]).expect("square matrix")
}

pub struct GraphResLayer<S: Scalar> {
    pub w0: Linear<S>,
    pub w1: Linear<S>,
    pub w0t: Linear<S>,
    pub w1t: Linear<S>,
}

impl<S: Scalar> GraphResLayer<S> {
    pub fn new(ps: &mut ParamSet<S>, name: &str, d: usize) -> Self {
        Self {
            w0: Linear::new(ps, &format!("{name}.w0"), d, d, true, 1.0),
            w1: Linear::new(ps, &format!("{name}.w1"), d, d, false, 1.0),
            w0t: Linear::new(ps, &format!("{name}.w0t"), d, d, true, 0.5),
            w1t: Linear::new(ps, &format!("{name}.w1t"), d, d, false, 0.5),
        }
    }

    /// `relu(r′ + f)` with `r = relu(f·W0 + A·f·W1)` and `r′ = r·W̃0 + A·r·W̃1`,
    /// where `A` holds the neighbor indicator.
    pub fn forward(&self, f: &Tensor<S>, nbr: &Tensor<S>) -> Result<Tensor<S>> {
        let d = self.w0.w.shape()[0];
        if f.ndim() != 2 || f.shape()[1] != d || nbr.shape() != [f.shape()[0], f.shape()[0]] {
            return dim_err(format!(
                "graph layer of width {d} got features {:?} and adjacency {:?}",
                f.shape(),
                nbr.shape()
            ));
        }
        let r = self.w0.forward(f)?.add(&self.w1.forward(&nbr.matmul(f)?)?)?.relu();
        let r2 = self.w0t.forward(&r)?.add(&self.w1t.forward(&nbr.matmul(&r)?)?)?;
        Ok(r2.add(f)?.relu())
    }
}

/// Graph-ResNet stack plus a zero-initialized offset head.
pub struct Gcn<S: Scalar> {
    pub layers: Vec<GraphResLayer<S>>,
    pub head: Linear<S>,
}

impl<S: Scalar> Gcn<S> {
    pub fn new(ps: &mut ParamSet<S>, d: usize, depth: usize) -> Self {
        let layers = (0..depth).map(|l| GraphResLayer::new(ps, &format!("gcn.layer{l}"), d)).collect();
        let head = Linear::zeros(ps, "gcn.head", d, 2);
        Self { layers, head }
    }

    /// Per-vertex offsets `[N×2]`.
    pub fn offsets(&self, f: &Tensor<S>, adjacency: &AdjacencyMatrix) -> Result<Tensor<S>> {
        let nbr = neighbor_matrix::<S>(adjacency);
        let mut h = f.clone();
        for layer in &self.layers {
            h = layer.forward(&h, &nbr)?;
        }
        self.head.forward(&h)
    }
}
