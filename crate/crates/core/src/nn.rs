//! Parameterized layers and a named parameter registry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Scalar, Tensor};

/// A named tensor owned by a model. Buffers (batch-norm statistics) are
/// saved with the parameters but never optimized.
#[derive(Clone)]
pub struct Entry<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub trainable: bool,
}

/// Creates and records parameters in a fixed order from one seeded stream.
pub struct ParamSet<S: Scalar> {
    entries: Vec<Entry<S>>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, name: String, data: Vec<f64>, shape: &[usize], trainable: bool) -> Tensor<S> {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        let t = Tensor::from_f64(&data, shape).expect("parameter shape");
        let t = if trainable { t.requires_grad() } else { t };
        self.entries.push(Entry {
            name,
            tensor: t.clone(),
            trainable,
        });
        t
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> Tensor<S> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if bound > 0.0 { self.rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        self.push(name.into(), data, shape, true)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Tensor<S> {
        let n: usize = shape.iter().product();
        self.push(name.into(), vec![value; n], shape, true)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Tensor<S> {
        let n: usize = shape.iter().product();
        self.push(name.into(), vec![value; n], shape, false)
    }

    pub fn entries(&self) -> &[Entry<S>] {
        &self.entries
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Entry<S>> {
        self.entries.iter().filter(|e| e.trainable)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|e| e.tensor.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for e in &self.entries {
            e.tensor.zero_grad();
        }
    }

    /// `(name, shape, values)` for every entry, in creation order.
    pub fn export(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.entries
            .iter()
            .map(|e| {
                let v = e.tensor.data().iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect();
                (e.name.clone(), e.tensor.shape().to_vec(), v)
            })
            .collect()
    }

    /// Overwrites every entry in place from exported values.
    pub fn import(&self, values: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                values.len()
            )));
        }
        for (e, (name, shape, v)) in self.entries.iter().zip(values) {
            if &e.name != name {
                return Err(Error::Checkpoint(format!("expected tensor {}, found {name}", e.name)));
            }
            if e.tensor.shape() != shape.as_slice() || v.len() != e.tensor.numel() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} does not match model {:?}",
                    shape,
                    e.tensor.shape()
                )));
            }
            let mut d = e.tensor.data_mut();
            for (dst, &src) in d.iter_mut().zip(v) {
                *dst = S::lit(src as f64);
            }
        }
        Ok(())
    }
}

pub struct Linear<S: Scalar> {
    pub w: Tensor<S>,
    pub b: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    /// Uniform in `±gain/√fan_in` for weights and `±1/√fan_in` for the bias.
    pub fn new(ps: &mut ParamSet<S>, name: &str, d_in: usize, d_out: usize, bias: bool, gain: f64) -> Self {
        let bound = gain / (d_in as f64).sqrt();
        let w = ps.uniform(format!("{name}.weight"), &[d_in, d_out], bound);
        let b = bias.then(|| ps.uniform(format!("{name}.bias"), &[d_out], 1.0 / (d_in as f64).sqrt()));
        Self { w, b }
    }

    pub fn zeros(ps: &mut ParamSet<S>, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = ps.constant(format!("{name}.weight"), &[d_in, d_out], 0.0);
        let b = Some(ps.constant(format!("{name}.bias"), &[d_out], 0.0));
        Self { w, b }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.linear(&self.w, self.b.as_ref())
    }
}

pub struct Conv2d<S: Scalar> {
    pub w: Tensor<S>,
    pub b: Option<Tensor<S>>,
    pub spec: Conv2dSpec,
}

impl<S: Scalar> Conv2d<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: Conv2dSpec,
        bias: bool,
        gain: f64,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let w = ps.uniform(format!("{name}.weight"), &[c_out, c_in, kernel, kernel], gain / fan_in.sqrt());
        let b = bias.then(|| ps.uniform(format!("{name}.bias"), &[c_out], 1.0 / fan_in.sqrt()));
        Self { w, b, spec }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.conv2d(&self.w, self.b.as_ref(), self.spec)
    }
}

pub struct BatchNorm2d<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: f64,
    pub eps: f64,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(ps: &mut ParamSet<S>, name: &str, channels: usize) -> Self {
        Self {
            gamma: ps.constant(format!("{name}.gamma"), &[channels], 1.0),
            beta: ps.constant(format!("{name}.beta"), &[channels], 0.0),
            running_mean: ps.buffer(format!("{name}.running_mean"), &[channels], 0.0),
            running_var: ps.buffer(format!("{name}.running_var"), &[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training mode normalizes with batch statistics and updates the
    /// running averages; evaluation mode uses the running averages.
    pub fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        if !train {
            let rm = self.running_mean.data();
            let rv = self.running_var.data();
            let (y, _) = x.batch_norm2d(&self.gamma, &self.beta, Some((&rm, &rv)), self.eps)?;
            return Ok(y);
        }
        let (y, stats) = x.batch_norm2d(&self.gamma, &self.beta, None, self.eps)?;
        let (mean, var) = stats.expect("batch statistics");
        let shape = x.shape();
        let count: usize = if shape.len() == 4 { shape[0] * shape[2] * shape[3] } else { shape[1] * shape[2] };
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        let m = S::lit(self.momentum);
        let one = S::one();
        for (r, v) in self.running_mean.data_mut().iter_mut().zip(&mean) {
            *r = (one - m) * *r + m * *v;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&var) {
            *r = (one - m) * *r + m * *v * S::lit(unbias);
        }
        Ok(y)
    }
}

pub struct LayerNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(ps: &mut ParamSet<S>, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.constant(format!("{name}.gamma"), &[dim], 1.0),
            beta: ps.constant(format!("{name}.beta"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.layer_norm(&self.gamma, &self.beta, 1e-5)
    }
}
