use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, ParamSet};
use crate::tensor::{Conv2dSpec, Scalar, Tensor};

use super::ModelConfig;

struct Stage<S: Scalar> {
    conv: Conv2d<S>,
    bn: BatchNorm2d<S>,
}

impl<S: Scalar> Stage<S> {
    fn new(ps: &mut ParamSet<S>, name: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::new(ps, &format!("{name}.conv"), c_in, c_out, 3, Conv2dSpec::new(stride, 1), false, 2f64.sqrt()),
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), c_out),
        }
    }

    fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        Ok(self.bn.forward(&self.conv.forward(x)?, train)?.relu())
    }
}

/// Four stride-2 stages whose outputs are upsampled to the first stage's
/// resolution, concatenated and fused by a stride-2 convolution.
pub struct Encoder<S: Scalar> {
    stages: Vec<Stage<S>>,
    fuse: Stage<S>,
    in_channels: usize,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(ps: &mut ParamSet<S>, cfg: &ModelConfig) -> Self {
        let mut stages = Vec::new();
        let mut c_in = 3;
        for (i, &c) in cfg.stage_channels.iter().enumerate() {
            stages.push(Stage::new(ps, &format!("encoder.stage{i}"), c_in, c, 2));
            c_in = c;
        }
        let cat: usize = cfg.stage_channels.iter().sum();
        let fuse = Stage::new(ps, "encoder.fuse", cat, cfg.feat_channels, 2);
        Self {
            stages,
            fuse,
            in_channels: 3,
        }
    }

    /// `[B×3×S×S]` → `[B×C′×S/4×S/4]`.
    pub fn forward(&self, images: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        if images.ndim() != 4 || images.shape()[1] != self.in_channels {
            return crate::error::dim_err(format!(
                "encoder expects [B,{},S,S] images, got {:?}",
                self.in_channels,
                images.shape()
            ));
        }
        let mut x = images.clone();
        let mut outs = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            x = st.forward(&x, train)?;
            outs.push(x.clone());
        }
        let (h, w) = (outs[0].shape()[2], outs[0].shape()[3]);
        let ups = outs
            .iter()
            .map(|o| if o.shape()[2] == h { Ok(o.clone()) } else { o.bilinear_resize(h, w) })
            .collect::<Result<Vec<_>>>()?;
        let cat = Tensor::concat(&ups, 1)?;
        self.fuse.forward(&cat, train)
    }
}

/// A 3×3 convolution and a per-pixel dense layer producing 2 channels.
pub struct MotionBranch<S: Scalar> {
    conv: Conv2d<S>,
    head: Conv2d<S>,
}

impl<S: Scalar> MotionBranch<S> {
    pub fn new(ps: &mut ParamSet<S>, cfg: &ModelConfig) -> Self {
        let c = cfg.feat_channels;
        Self {
            conv: Conv2d::new(ps, "motion.conv", c, c, 3, Conv2dSpec::new(1, 1), true, 2f64.sqrt()),
            head: Conv2d::new(ps, "motion.fc", c, 2, 1, Conv2dSpec::new(1, 0), true, 1.0),
        }
    }

    pub fn forward(&self, fc: &Tensor<S>) -> Result<Tensor<S>> {
        self.head.forward(&self.conv.forward(fc)?.relu())
    }
}
