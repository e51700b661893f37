//! Spatial ops on `[C×H×W]` and `[B×C×H×W]` tensors.
//!
//! Resampling uses the align-corners convention: normalized coordinate 0
//! is the center of the first pixel and 1 the center of the last, so a
//! length-`n` axis upsampled to `2n − 1` samples reproduces the inputs at
//! even positions and midpoints in between.

use super::{Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

/// Splits a 3-d or 4-d tensor shape into `(batch, channels, h, w, batched)`.
fn spatial_dims<S: Scalar>(x: &Tensor<S>, op: &str) -> Result<(usize, usize, usize, usize, bool)> {
    match *x.shape() {
        [c, h, w] => Ok((1, c, h, w, false)),
        [b, c, h, w] => Ok((b, c, h, w, true)),
        _ => dim_err(format!("{op}: expected [C,H,W] or [B,C,H,W], got {:?}", x.shape())),
    }
}

fn out_shape(b: usize, c: usize, h: usize, w: usize, batched: bool) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<S: Scalar>(&self, x: &[S], cols: &mut [S]) {
        let n = self.cols();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[r * n..(r + 1) * n];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            row.iter_mut().for_each(|v| *v = S::zero());
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, v) in row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                S::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<S: Scalar>(&self, cols: &[S], dx: &mut [S]) {
        let n = self.cols();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[r * n..(r + 1) * n];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Normalized 1-d Gaussian taps of odd length `size`.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Separable zero-padded "same" blur of each `h×w` plane.
fn blur_planes<S: Scalar>(x: &[S], planes: usize, h: usize, w: usize, k: &[S]) -> Vec<S> {
    let half = (k.len() / 2) as isize;
    let mut tmp = vec![S::zero(); x.len()];
    let mut out = vec![S::zero(); x.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            for xx in 0..w {
                let mut acc = S::zero();
                for (t, &kv) in k.iter().enumerate() {
                    let sx = xx as isize + t as isize - half;
                    if sx >= 0 && sx < w as isize {
                        acc += kv * x[base + y * w + sx as usize];
                    }
                }
                tmp[base + y * w + xx] = acc;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let mut acc = S::zero();
                for (t, &kv) in k.iter().enumerate() {
                    let sy = y as isize + t as isize - half;
                    if sy >= 0 && sy < h as isize {
                        acc += kv * tmp[base + sy as usize * w + xx];
                    }
                }
                out[base + y * w + xx] = acc;
            }
        }
    }
    out
}

/// Source index pair and weight for each output position of an
/// align-corners linear resample of an axis of length `n_in` to `n_out`.
fn resample_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 || n_in == 1 {
                0.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(n_in.saturating_sub(2));
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

impl<S: Scalar> Tensor<S> {
    /// Cross-correlation with `weight: [O×C×kh×kw]` and optional `bias: [O]`.
    pub fn conv2d(&self, weight: &Tensor<S>, bias: Option<&Tensor<S>>, spec: Conv2dSpec) -> Result<Tensor<S>> {
        let (b, c, h, w, batched) = spatial_dims(self, "conv2d")?;
        let [o, wc, kh, kw] = *weight.shape() else {
            return dim_err(format!("conv2d: weight must be [O,C,kh,kw], got {:?}", weight.shape()));
        };
        if wc != c {
            return dim_err(format!("conv2d: input has {c} channels, weight expects {wc}"));
        }
        if let Some(bias) = bias {
            if bias.shape() != [o] {
                return dim_err(format!("conv2d: bias {:?} for {o} outputs", bias.shape()));
            }
        }
        if spec.stride == 0 {
            return dim_err("conv2d: stride must be positive");
        }
        if h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
            return dim_err(format!(
                "conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {}",
                spec.padding
            ));
        }
        let oh = (h + 2 * spec.padding - kh) / spec.stride + 1;
        let ow = (w + 2 * spec.padding - kw) / spec.stride + 1;
        let g = ConvGeom { c, h, w, kh, kw, oh, ow, stride: spec.stride, pad: spec.padding };
        let (rows, ncols) = (g.rows(), g.cols());
        let mut out = vec![S::zero(); b * o * ncols];
        let mut cols = vec![S::zero(); rows * ncols];
        {
            let x = self.data();
            let wd = weight.data();
            for bi in 0..b {
                g.im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
                let dst = &mut out[bi * o * ncols..(bi + 1) * o * ncols];
                S::gemm(o, rows, ncols, S::one(), &wd, rows as isize, 1, &cols, ncols as isize, 1, S::zero(), dst, ncols as isize, 1);
            }
            if let Some(bias) = bias {
                let bd = bias.data();
                for (i, plane) in out.chunks_mut(ncols).enumerate() {
                    let bv = bd[i % o];
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        Ok(Tensor::from_op(out, out_shape(b, o, oh, ow, batched), parents, move |gout, _, p| {
            let x = p[0].data();
            let wd = p[1].data();
            let mut cols = vec![S::zero(); rows * ncols];
            let mut dcols = vec![S::zero(); rows * ncols];
            let need_dx = p[0].is_tracked();
            for bi in 0..b {
                let gy = &gout[bi * o * ncols..(bi + 1) * o * ncols];
                if p[1].is_tracked() {
                    g.im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
                    p[1].accumulate(|gw| {
                        // dW += dY · colsᵀ
                        S::gemm(o, ncols, rows, S::one(), gy, ncols as isize, 1, &cols, 1, ncols as isize, S::one(), gw, rows as isize, 1);
                    });
                }
                if need_dx {
                    // dcols = Wᵀ · dY
                    S::gemm(rows, o, ncols, S::one(), &wd, 1, rows as isize, gy, ncols as isize, 1, S::zero(), &mut dcols, ncols as isize, 1);
                    p[0].accumulate(|gx| g.col2im(&dcols, &mut gx[bi * c * h * w..(bi + 1) * c * h * w]));
                }
            }
            if let Some(pb) = p.get(2) {
                pb.accumulate(|gb| {
                    for (i, plane) in gout.chunks(ncols).enumerate() {
                        gb[i % o] += plane.iter().copied().sum::<S>();
                    }
                });
            }
        }))
    }

    /// Per-channel normalization over batch and spatial positions.
    ///
    /// With `running = None` the batch statistics are used and returned as
    /// `(mean, biased variance)`; otherwise the given statistics are applied
    /// as a fixed affine map.
    pub fn batch_norm2d(
        &self,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        running: Option<(&[S], &[S])>,
        eps: f64,
    ) -> Result<(Tensor<S>, Option<(Vec<S>, Vec<S>)>)> {
        let (b, c, h, w, _) = spatial_dims(self, "batch_norm2d")?;
        if self.numel() == 0 {
            return dim_err("batch_norm2d: empty input");
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return dim_err(format!("batch_norm2d: affine params for {c} channels"));
        }
        let hw = h * w;
        let m = S::lit((b * hw) as f64);
        let eps = S::lit(eps);
        let x = self.data();
        let (mean, var, batch_stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return dim_err("batch_norm2d: running stats length");
                }
                (rm.to_vec(), rv.to_vec(), false)
            }
            None => {
                let mut mean = vec![S::zero(); c];
                let mut var = vec![S::zero(); c];
                for ch in 0..c {
                    let mut s = S::zero();
                    for bi in 0..b {
                        s += x[(bi * c + ch) * hw..][..hw].iter().copied().sum::<S>();
                    }
                    let mu = s / m;
                    let mut v = S::zero();
                    for bi in 0..b {
                        v += x[(bi * c + ch) * hw..][..hw].iter().map(|&t| (t - mu) * (t - mu)).sum::<S>();
                    }
                    mean[ch] = mu;
                    var[ch] = v / m;
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![S::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let o = (bi * c + ch) * hw;
                for i in 0..hw {
                    xhat[o + i] = (x[o + i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        drop(x);
        let out = {
            let (gm, bt) = (gamma.data(), beta.data());
            xhat.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = (i / hw) % c;
                    v * gm[ch] + bt[ch]
                })
                .collect()
        };
        let stats = batch_stats.then(|| (mean.clone(), var.clone()));
        let y = Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, _, p| {
                let gm = p[1].data();
                p[0].accumulate(|gx| {
                    for ch in 0..c {
                        let scale = gm[ch] * inv_std[ch];
                        if batch_stats {
                            let mut sum_g = S::zero();
                            let mut sum_gx = S::zero();
                            for bi in 0..b {
                                let o = (bi * c + ch) * hw;
                                for i in 0..hw {
                                    sum_g += g[o + i];
                                    sum_gx += g[o + i] * xhat[o + i];
                                }
                            }
                            for bi in 0..b {
                                let o = (bi * c + ch) * hw;
                                for i in 0..hw {
                                    gx[o + i] += scale * (g[o + i] - sum_g / m - xhat[o + i] * sum_gx / m);
                                }
                            }
                        } else {
                            for bi in 0..b {
                                let o = (bi * c + ch) * hw;
                                for i in 0..hw {
                                    gx[o + i] += scale * g[o + i];
                                }
                            }
                        }
                    }
                });
                drop(gm);
                p[1].accumulate(|gg| {
                    for (i, &gi) in g.iter().enumerate() {
                        gg[(i / hw) % c] += gi * xhat[i];
                    }
                });
                p[2].accumulate(|gb| {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[(i / hw) % c] += gi;
                    }
                });
            },
        );
        Ok((y, stats))
    }

    /// Bilinear resize of the two trailing axes (align-corners).
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<S>> {
        let (b, c, h, w, batched) = spatial_dims(self, "bilinear_resize")?;
        if out_h == 0 || out_w == 0 {
            return dim_err("bilinear_resize: zero target size");
        }
        if h == 0 || w == 0 {
            return dim_err("bilinear_resize: empty input");
        }
        let ry = resample_axis(h, out_h);
        let rx = resample_axis(w, out_w);
        let planes = b * c;
        let x = self.data();
        let mut out = vec![S::zero(); planes * out_h * out_w];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
                let fy = S::lit(fy);
                for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                    let fx = S::lit(fx);
                    let top = src[y0 * w + x0] * (S::one() - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (S::one() - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (S::one() - fy) + bot * fy;
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(out, out_shape(b, c, out_h, out_w, batched), vec![self.clone()], move |g, _, p| {
            p[0].accumulate(|gx| {
                for pl in 0..planes {
                    let gsrc = &g[pl * out_h * out_w..(pl + 1) * out_h * out_w];
                    let dst = &mut gx[pl * h * w..(pl + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
                        let fy = S::lit(fy);
                        for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                            let fx = S::lit(fx);
                            let gv = gsrc[oy * out_w + ox];
                            let gt = gv * (S::one() - fy);
                            let gb = gv * fy;
                            dst[y0 * w + x0] += gt * (S::one() - fx);
                            dst[y0 * w + x1] += gt * fx;
                            dst[y1 * w + x0] += gb * (S::one() - fx);
                            dst[y1 * w + x1] += gb * fx;
                        }
                    }
                }
            });
        }))
    }

    /// Samples a `[C×H×W]` map at `points: [N×2]` holding normalized
    /// `(x, y)` in `[0, 1]`, returning `[N×C]`. Coordinates outside the
    /// unit square are clamped (and receive no gradient along the clamped
    /// axis); NaN coordinates are rejected.
    pub fn bilinear_sample(&self, points: &Tensor<S>) -> Result<Tensor<S>> {
        let [c, h, w] = *self.shape() else {
            return dim_err(format!("bilinear_sample: map must be [C,H,W], got {:?}", self.shape()));
        };
        let [n, 2] = *points.shape() else {
            return dim_err(format!("bilinear_sample: points must be [N,2], got {:?}", points.shape()));
        };
        if h == 0 || w == 0 {
            return dim_err("bilinear_sample: empty map");
        }
        let pts = points.data();
        if pts.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("bilinear_sample: NaN coordinate".into()));
        }
        struct Tap<S> {
            x0: usize,
            x1: usize,
            y0: usize,
            y1: usize,
            fx: S,
            fy: S,
            in_x: bool,
            in_y: bool,
        }
        let axis = |v: S, len: usize| -> (usize, usize, S, bool) {
            let inside = v >= S::zero() && v <= S::one();
            let u = v.max(S::zero()).min(S::one()) * S::lit((len - 1) as f64);
            let i0 = u.floor().to_usize().unwrap_or(0).min(len.saturating_sub(2));
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, u - S::lit(i0 as f64), inside && len > 1)
        };
        let taps: Vec<Tap<S>> = (0..n)
            .map(|i| {
                let (x0, x1, fx, in_x) = axis(pts[2 * i], w);
                let (y0, y1, fy, in_y) = axis(pts[2 * i + 1], h);
                Tap { x0, x1, y0, y1, fx, fy, in_x, in_y }
            })
            .collect();
        drop(pts);
        let f = self.data();
        let hw = h * w;
        let mut out = vec![S::zero(); n * c];
        for (i, t) in taps.iter().enumerate() {
            let (w00, w01) = ((S::one() - t.fy) * (S::one() - t.fx), (S::one() - t.fy) * t.fx);
            let (w10, w11) = (t.fy * (S::one() - t.fx), t.fy * t.fx);
            for ch in 0..c {
                let pl = &f[ch * hw..(ch + 1) * hw];
                out[i * c + ch] = pl[t.y0 * w + t.x0] * w00
                    + pl[t.y0 * w + t.x1] * w01
                    + pl[t.y1 * w + t.x0] * w10
                    + pl[t.y1 * w + t.x1] * w11;
            }
        }
        drop(f);
        Ok(Tensor::from_op(out, vec![n, c], vec![self.clone(), points.clone()], move |g, _, p| {
            p[0].accumulate(|gf| {
                for (i, t) in taps.iter().enumerate() {
                    let (w00, w01) = ((S::one() - t.fy) * (S::one() - t.fx), (S::one() - t.fy) * t.fx);
                    let (w10, w11) = (t.fy * (S::one() - t.fx), t.fy * t.fx);
                    for ch in 0..c {
                        let gv = g[i * c + ch];
                        let pl = &mut gf[ch * hw..(ch + 1) * hw];
                        pl[t.y0 * w + t.x0] += gv * w00;
                        pl[t.y0 * w + t.x1] += gv * w01;
                        pl[t.y1 * w + t.x0] += gv * w10;
                        pl[t.y1 * w + t.x1] += gv * w11;
                    }
                }
            });
            if p[1].is_tracked() {
                let f = p[0].data();
                let sx = S::lit((w.max(2) - 1) as f64);
                let sy = S::lit((h.max(2) - 1) as f64);
                p[1].accumulate(|gp| {
                    for (i, t) in taps.iter().enumerate() {
                        let mut dx = S::zero();
                        let mut dy = S::zero();
                        for ch in 0..c {
                            let pl = &f[ch * hw..(ch + 1) * hw];
                            let (a, b2) = (pl[t.y0 * w + t.x0], pl[t.y0 * w + t.x1]);
                            let (c2, d) = (pl[t.y1 * w + t.x0], pl[t.y1 * w + t.x1]);
                            let gv = g[i * c + ch];
                            dx += gv * ((S::one() - t.fy) * (b2 - a) + t.fy * (d - c2));
                            dy += gv * ((S::one() - t.fx) * (c2 - a) + t.fx * (d - b2));
                        }
                        if t.in_x {
                            gp[2 * i] += dx * sx;
                        }
                        if t.in_y {
                            gp[2 * i + 1] += dy * sy;
                        }
                    }
                });
            }
        }))
    }

    /// Zero-padded Gaussian blur of each plane with a `size×size` kernel.
    pub fn gaussian_blur(&self, size: usize, sigma: f64) -> Result<Tensor<S>> {
        let (b, c, h, w, _) = spatial_dims(self, "gaussian_blur")?;
        if self.numel() == 0 {
            return dim_err("gaussian_blur: empty input");
        }
        if size % 2 == 0 || sigma <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "gaussian_blur: kernel size {size} must be odd and sigma {sigma} positive"
            )));
        }
        let k: Vec<S> = gaussian_kernel_1d(size, sigma).into_iter().map(S::lit).collect();
        let planes = b * c;
        let out = blur_planes(&self.data(), planes, h, w, &k);
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, _, p| {
            // Symmetric kernel with zero padding: the blur is self-adjoint.
            let back = blur_planes(g, planes, h, w, &k);
            p[0].accumulate(|gx| gx.iter_mut().zip(&back).for_each(|(a, &v)| *a += v));
        }))
    }
}
