//! Element-wise, reduction, shape and matrix ops.

use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    /// Applies `f` element-wise; `df(x, y)` is dy/dx given input and output.
    fn unary(&self, f: impl Fn(S) -> S, df: impl Fn(S, S) -> S + 'static) -> Tensor<S> {
        let out: Vec<S> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, y, p| {
            let x = p[0].data();
            p[0].accumulate(|gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * df(x[i], y[i]);
                }
            });
        })
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape(self, other, "add")?;
        let out = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |g, _, p| {
                for t in p {
                    t.accumulate(|gx| gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b));
                }
            },
        ))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape(self, other, "sub")?;
        let out = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |g, _, p| {
                p[0].accumulate(|gx| gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b));
                p[1].accumulate(|gx| gx.iter_mut().zip(g).for_each(|(a, &b)| *a -= b));
            },
        ))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape(self, other, "mul")?;
        let out = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |g, _, p| {
                {
                    let b = p[1].data();
                    p[0].accumulate(|gx| {
                        for i in 0..gx.len() {
                            gx[i] += g[i] * b[i];
                        }
                    });
                }
                let a = p[0].data();
                p[1].accumulate(|gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * a[i];
                    }
                });
            },
        ))
    }

    pub fn div(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape(self, other, "div")?;
        let out = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a / b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |g, y, p| {
                let b = p[1].data();
                p[0].accumulate(|gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] / b[i];
                    }
                });
                p[1].accumulate(|gx| {
                    for i in 0..gx.len() {
                        gx[i] -= g[i] * y[i] / b[i];
                    }
                });
            },
        ))
    }

    /// Multiplies element-wise by constant values (no gradient to `mask`).
    pub fn mul_const(&self, mask: &[S]) -> Result<Tensor<S>> {
        if mask.len() != self.numel() {
            return dim_err(format!("mul_const: {} values for {:?}", mask.len(), self.shape()));
        }
        let m = mask.to_vec();
        let out = self.data().iter().zip(&m).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, _, p| {
            p[0].accumulate(|gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * m[i];
                }
            });
        }))
    }

    /// Adds a vector along the last axis: `[.., D] + [D]`.
    pub fn add_row_vector(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let d = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [d] {
            return dim_err(format!(
                "add_row_vector: bias {:?} for input {:?}",
                bias.shape(),
                self.shape()
            ));
        }
        let out = {
            let b = bias.data();
            self.data().iter().enumerate().map(|(i, &x)| x + b[i % d]).collect()
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            move |g, _, p| {
                p[0].accumulate(|gx| gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b));
                p[1].accumulate(|gb| {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % d] += gi;
                    }
                });
            },
        ))
    }

    pub fn neg(&self) -> Tensor<S> {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor<S> {
        let c = S::lit(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<S> {
        let c = S::lit(c);
        self.unary(move |x| x + c, |_, _| S::one())
    }

    pub fn relu(&self) -> Tensor<S> {
        self.unary(
            |x| if x > S::zero() { x } else { S::zero() },
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        self.unary(
            |x| S::one() / (S::one() + (-x).exp()),
            |_, y| y * (S::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn exp(&self) -> Tensor<S> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<S> {
        self.unary(|x| x.ln(), |x, _| S::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<S> {
        self.unary(|x| x.sqrt(), |_, y| S::lit(0.5) / y)
    }

    pub fn square(&self) -> Tensor<S> {
        self.unary(|x| x * x, |x, _| S::lit(2.0) * x)
    }

    /// |x| with subgradient 0 at 0.
    pub fn abs(&self) -> Tensor<S> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    /// arccos on (−1, 1); callers clamp first.
    pub fn acos(&self) -> Tensor<S> {
        self.unary(|x| x.acos(), |x, _| -S::one() / (S::one() - x * x).sqrt())
    }

    /// Clamps to `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<S> {
        let (lo, hi) = (S::lit(lo), S::lit(hi));
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| if x > lo && x < hi { S::one() } else { S::zero() },
        )
    }

    pub fn clamp_min(&self, lo: f64) -> Tensor<S> {
        let lo = S::lit(lo);
        self.unary(
            move |x| x.max(lo),
            move |x, _| if x > lo { S::one() } else { S::zero() },
        )
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&self) -> Tensor<S> {
        let s: S = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], |g, _, p| {
            let g0 = g[0];
            p[0].accumulate(|gx| gx.iter_mut().for_each(|a| *a += g0));
        })
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over the last axis: `[.., D] -> [..]`.
    pub fn sum_last(&self) -> Result<Tensor<S>> {
        if self.ndim() == 0 {
            return dim_err("sum_last: scalar input");
        }
        let d = *self.shape().last().unwrap();
        if d == 0 {
            return dim_err("sum_last: empty last axis");
        }
        let out: Vec<S> = self.data().chunks(d).map(|c| c.iter().copied().sum()).collect();
        let shape = self.shape()[..self.ndim() - 1].to_vec();
        Ok(Tensor::from_op(out, shape, vec![self.clone()], move |g, _, p| {
            p[0].accumulate(|gx| {
                for (row, &gi) in gx.chunks_mut(d).zip(g) {
                    row.iter_mut().for_each(|a| *a += gi);
                }
            });
        }))
    }

    /// Euclidean norm of each row of an `[N×D]` tensor; gradient 0 at 0.
    pub fn row_l2_norm(&self) -> Result<Tensor<S>> {
        self.expect_ndim(2, "row_l2_norm")?;
        let d = self.shape()[1];
        let out: Vec<S> = self
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|&x| x * x).sum::<S>().sqrt())
            .collect();
        Ok(Tensor::from_op(out, vec![self.shape()[0]], vec![self.clone()], move |g, y, p| {
            let x = p[0].data();
            p[0].accumulate(|gx| {
                for i in 0..y.len() {
                    if y[i] > S::zero() {
                        for j in 0..d {
                            gx[i * d + j] += g[i] * x[i * d + j] / y[i];
                        }
                    }
                }
            });
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if shape.iter().product::<usize>() != self.numel() {
            return dim_err(format!("reshape {:?} -> {:?}", self.shape(), shape));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], |g, _, p| {
            p[0].accumulate(|gx| gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b));
        }))
    }

    /// `[m×n] -> [n×m]`.
    pub fn transpose(&self) -> Result<Tensor<S>> {
        self.expect_ndim(2, "transpose")?;
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        drop(x);
        Ok(Tensor::from_op(out, vec![n, m], vec![self.clone()], move |g, _, p| {
            p[0].accumulate(|gx| {
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] += g[j * m + i];
                    }
                }
            });
        }))
    }

    /// `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.matmul_impl(other, false)
    }

    /// `[m×k]·[n×k]ᵀ`.
    pub fn matmul_nt(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Tensor<S>, rhs_t: bool) -> Result<Tensor<S>> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return dim_err(format!(
                "matmul: expected 2-d operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (kb, n) = if rhs_t {
            (other.shape()[1], other.shape()[0])
        } else {
            (other.shape()[0], other.shape()[1])
        };
        if k != kb {
            return dim_err(format!(
                "matmul: inner dims differ ({:?} · {:?}{})",
                self.shape(),
                other.shape(),
                if rhs_t { "ᵀ" } else { "" }
            ));
        }
        // Strides of the logical rhs [k×n].
        let (rsb, csb) = if rhs_t { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            S::one(),
            &self.data(),
            k as isize,
            1,
            &other.data(),
            rsb,
            csb,
            S::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, _, p| {
                // dA = dC · Bᵀ
                {
                    let b = p[1].data();
                    p[0].accumulate(|ga| {
                        S::gemm(m, n, k, S::one(), g, n as isize, 1, &b, csb, rsb, S::one(), ga, k as isize, 1);
                    });
                }
                // dB = Aᵀ · dC, written through the logical rhs strides.
                let a = p[0].data();
                p[1].accumulate(|gb| {
                    S::gemm(k, m, n, S::one(), &a, 1, k as isize, g, n as isize, 1, S::one(), gb, rsb, csb);
                });
            },
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        if axis >= self.ndim() || start + len > self.shape()[axis] {
            return dim_err(format!(
                "narrow: axis {axis} range {start}..{} out of {:?}",
                start + len,
                self.shape()
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let dim = self.shape()[axis];
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(out, shape, vec![self.clone()], move |g, _, p| {
            p[0].accumulate(|gx| {
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    gx[base..base + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, &b)| *a += b);
                }
            });
        }))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let Some(first) = parts.first() else {
            return dim_err("concat: no inputs");
        };
        if axis >= first.ndim() {
            return dim_err(format!("concat: axis {axis} for {:?}", first.shape()));
        }
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return dim_err(format!(
                    "concat: incompatible shapes {:?} and {:?}",
                    first.shape(),
                    p.shape()
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (d, x) in dims.iter().zip(&datas) {
                out.extend_from_slice(&x[o * d * inner..(o + 1) * d * inner]);
            }
        }
        drop(datas);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(out, shape, parts.to_vec(), move |g, _, p| {
            let mut offset = 0;
            for (t, &d) in p.iter().zip(&dims) {
                t.accumulate(|gx| {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        gx[o * d * inner..(o + 1) * d * inner]
                            .iter_mut()
                            .zip(&g[src..src + d * inner])
                            .for_each(|(a, &b)| *a += b);
                    }
                });
                offset += d;
            }
        }))
    }

    /// Picks rows of a 2-d tensor: `out[i] = self[index[i]]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor<S>> {
        self.expect_ndim(2, "gather_rows")?;
        let (rows, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return dim_err(format!("gather_rows: index {bad} out of {rows} rows"));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            out.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        drop(x);
        let index = index.to_vec();
        Ok(Tensor::from_op(out, vec![index.len(), d], vec![self.clone()], move |g, _, p| {
            p[0].accumulate(|gx| {
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..d {
                        gx[i * d + j] += g[r * d + j];
                    }
                }
            });
        }))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_rows(&self) -> Result<Tensor<S>> {
        let d = *self.shape().last().unwrap_or(&0);
        if self.numel() == 0 || d == 0 {
            return dim_err("softmax_rows: empty input");
        }
        let mut out = self.to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / z);
        }
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, y, p| {
            p[0].accumulate(|gx| {
                for ((gr, yr), xr) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        xr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }))
    }

    /// Normalizes each row over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor<S>, beta: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let d = *self.shape().last().unwrap_or(&0);
        if d == 0 || self.numel() == 0 {
            return dim_err("layer_norm: empty input");
        }
        if gamma.shape() != [d] || beta.shape() != [d] {
            return dim_err(format!(
                "layer_norm: affine params {:?}/{:?} for width {d}",
                gamma.shape(),
                beta.shape()
            ));
        }
        let eps = S::lit(eps);
        let dn = S::lit(d as f64);
        let x = self.data();
        let rows = self.numel() / d;
        let mut xhat = vec![S::zero(); self.numel()];
        let mut inv_std = vec![S::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                xhat[r * d + j] = (row[j] - mean) * is;
            }
        }
        drop(x);
        let out = {
            let (gm, bt) = (gamma.data(), beta.data());
            xhat.iter().enumerate().map(|(i, &v)| v * gm[i % d] + bt[i % d]).collect()
        };
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, _, p| {
                let gm = p[1].data();
                p[0].accumulate(|gx| {
                    for r in 0..rows {
                        let o = r * d;
                        let mut sum_g = S::zero();
                        let mut sum_gx = S::zero();
                        for j in 0..d {
                            let gh = g[o + j] * gm[j];
                            sum_g += gh;
                            sum_gx += gh * xhat[o + j];
                        }
                        for j in 0..d {
                            let gh = g[o + j] * gm[j];
                            gx[o + j] += inv_std[r] * (gh - sum_g / dn - xhat[o + j] * sum_gx / dn);
                        }
                    }
                });
                drop(gm);
                p[1].accumulate(|gg| {
                    for i in 0..g.len() {
                        gg[i % d] += g[i] * xhat[i];
                    }
                });
                p[2].accumulate(|gb| {
                    for i in 0..g.len() {
                        gb[i % d] += g[i];
                    }
                });
            },
        ))
    }

    /// `x·w + b` for `x: [N×in]`, `w: [in×out]`, `b: [out]`.
    pub fn linear(&self, w: &Tensor<S>, b: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        let y = self.matmul(w)?;
        match b {
            Some(b) => y.add_row_vector(b),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::grad_check;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        let v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::param(v, shape).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let i2 = Tensor::<f64>::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        assert_eq!(i2.matmul(&i2).unwrap().to_vec(), vec![1.0, 0.0, 0.0, 1.0]);
        let a = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![0.0, 1.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(crate::Error::Dimension(_))));
        assert!(a.matmul_nt(&b).is_ok());
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_t(&mut rng, &[3, 4]);
        let b = rand_t(&mut rng, &[4, 2]);
        let err = grad_check(|x| x[0].matmul(&x[1]), &[a.clone(), b.clone()], 1e-5);
        assert!(err < 1e-8, "matmul grad err {err}");
        let c = rand_t(&mut rng, &[2, 4]);
        let err = grad_check(|x| x[0].matmul_nt(&x[1]), &[a, c], 1e-5);
        assert!(err < 1e-8, "matmul_nt grad err {err}");
    }

    #[test]
    fn softmax_uniform_row() {
        let x = Tensor::<f64>::full(&[2, 4], 3.0);
        let y = x.softmax_rows().unwrap();
        assert!(y.to_vec().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn sigmoid_at_zero() {
        let y = Tensor::<f32>::zeros(&[1]).sigmoid();
        assert_eq!(y.item(), 0.5);
    }

    #[test]
    fn empty_inputs_are_dimension_errors() {
        let e = Tensor::<f32>::zeros(&[0, 3]);
        assert!(e.softmax_rows().is_err());
        let g = Tensor::<f32>::ones(&[3]);
        assert!(e.layer_norm(&g, &g, 1e-5).is_err());
        assert!(Tensor::<f32>::concat(&[], 0).is_err());
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_t(&mut rng, &[3, 5]);
        let b = rand_t(&mut rng, &[3, 5]);
        let pos = Tensor::param(
            (0..15).map(|_| rng.random_range(0.2..2.0)).collect(),
            &[3, 5],
        )
        .unwrap();
        let cases: Vec<(&str, Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>)> = vec![
            ("add", Box::new(|x| x[0].add(&x[1]))),
            ("sub", Box::new(|x| x[0].sub(&x[1]))),
            ("mul", Box::new(|x| x[0].mul(&x[1]))),
            ("div", Box::new(|x| x[0].div(&x[2]))),
            ("relu", Box::new(|x| Ok(x[0].relu()))),
            ("sigmoid", Box::new(|x| Ok(x[0].sigmoid()))),
            ("tanh", Box::new(|x| Ok(x[0].tanh()))),
            ("exp", Box::new(|x| Ok(x[0].exp()))),
            ("ln", Box::new(|x| Ok(x[2].ln()))),
            ("sqrt", Box::new(|x| Ok(x[2].sqrt()))),
            ("square", Box::new(|x| Ok(x[0].square()))),
            ("abs", Box::new(|x| Ok(x[0].abs()))),
            ("acos", Box::new(|x| Ok(x[0].scale(0.9).acos()))),
            ("clamp", Box::new(|x| Ok(x[0].clamp(-0.5, 0.5)))),
            ("softmax", Box::new(|x| x[0].softmax_rows())),
            ("sum_last", Box::new(|x| x[0].sum_last())),
            ("row_norm", Box::new(|x| x[0].row_l2_norm())),
            ("transpose", Box::new(|x| x[0].transpose())),
            ("narrow", Box::new(|x| x[0].narrow(1, 1, 3))),
            ("concat0", Box::new(|x| Tensor::concat(&[x[0].clone(), x[1].clone()], 0))),
            ("concat1", Box::new(|x| Tensor::concat(&[x[0].clone(), x[1].clone()], 1))),
            ("gather", Box::new(|x| x[0].gather_rows(&[2, 0, 0, 1]))),
            ("mean", Box::new(|x| Ok(x[0].mean()))),
        ];
        for (name, f) in cases {
            let err = grad_check(&f, &[a.clone(), b.clone(), pos.clone()], 1e-5);
            assert!(err < 1e-4, "{name}: grad err {err}");
        }
    }

    #[test]
    fn layer_norm_and_linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_t(&mut rng, &[4, 6]);
        let g = rand_t(&mut rng, &[6]);
        let b = rand_t(&mut rng, &[6]);
        let err = grad_check(|t| t[0].layer_norm(&t[1], &t[2], 1e-5), &[x.clone(), g, b], 1e-5);
        assert!(err < 1e-4, "layer_norm err {err}");
        let w = rand_t(&mut rng, &[6, 3]);
        let bias = rand_t(&mut rng, &[3]);
        let err = grad_check(|t| t[0].linear(&t[1], Some(&t[2])), &[x, w, bias], 1e-5);
        assert!(err < 1e-8, "linear err {err}");
    }
}
