//! The polygon network: image encoder with a motion-field branch, vertex
//! embedding, graph refinement and the separating transformer, iterated
//! for a fixed number of passes.

mod adjacency;
mod encoder;
mod gcn;
mod separate;

pub use adjacency::{decompose_components, truncate_adjacency, Decomposition};
pub use encoder::{Encoder, MotionBranch};
pub use gcn::{neighbor_matrix, Gcn, GraphResLayer};
pub use separate::{positional_encoding, EncoderBlock, SeparatingNet};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::gtbuild::{build_gt_adjacency, component_sizes, AdjacencyMatrix, AdjacencyMode};
use crate::imgeo::{initial_circle, Point};
use crate::nn::ParamSet;
use crate::tensor::{no_grad, Scalar, Tensor};

/// Gain on ΔH before it joins the vertex features.
pub const DELTA_H_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Side of the square input crop.
    pub image_size: usize,
    pub stage_channels: [usize; 4],
    /// Channels of the fused feature map.
    pub feat_channels: usize,
    /// Side of the resized vertex embedding.
    pub embed_size: usize,
    pub num_points: usize,
    /// Number of ground-truth blocks the model is trained to separate.
    pub split_k: usize,
    pub gcn_layers: usize,
    pub passes: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub sep_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            stage_channels: [16, 32, 64, 64],
            feat_channels: 64,
            embed_size: 112,
            num_points: 40,
            split_k: 3,
            gcn_layers: 8,
            passes: 3,
            d_model: 128,
            heads: 4,
            d_ff: 256,
            sep_blocks: 6,
        }
    }
}

impl ModelConfig {
    /// Small profile for 64×64 crops on a single CPU core.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            stage_channels: [8, 16, 32, 32],
            feat_channels: 32,
            embed_size: 64,
            num_points: 20,
            split_k: 2,
            gcn_layers: 8,
            passes: 3,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            sep_blocks: 6,
        }
    }

    /// Smallest useful network, for gradient verification.
    pub fn tiny() -> Self {
        Self {
            image_size: 32,
            stage_channels: [3, 4, 4, 4],
            feat_channels: 4,
            embed_size: 16,
            num_points: 8,
            split_k: 2,
            gcn_layers: 2,
            passes: 2,
            d_model: 8,
            heads: 2,
            d_ff: 16,
            sep_blocks: 1,
        }
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / 4
    }

    /// Width of per-vertex GCN features: sampled embedding, coordinates, ΔH.
    pub fn vertex_width(&self) -> usize {
        self.feat_channels + 6
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return bad(format!("image size {} must be a positive multiple of 16", self.image_size));
        }
        if self.stage_channels.contains(&0) || self.feat_channels == 0 || self.embed_size < 2 {
            return bad("channel counts and embedding size must be positive".into());
        }
        if self.passes == 0 {
            return bad("at least one refinement pass is required".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        component_sizes(self.num_points, self.split_k)?;
        Ok(())
    }
}

/// One refinement pass: points after the GCN, and the adjacency predicted
/// for them.
#[derive(Clone)]
pub struct PassOutput<S: Scalar> {
    pub points: Tensor<S>,
    pub soft: Tensor<S>,
    pub hard: AdjacencyMatrix,
}

impl<S: Scalar> PassOutput<S> {
    pub fn point_values(&self) -> Vec<Point> {
        self.points.to_f64_vec().chunks_exact(2).map(|c| [c[0], c[1]]).collect()
    }

    pub fn soft_matrix(&self) -> AdjacencyMatrix {
        let n = self.hard.n;
        AdjacencyMatrix {
            n,
            entries: self.soft.to_f64_vec(),
            mode: AdjacencyMode::Soft,
        }
    }
}

pub struct SampleOutput<S: Scalar> {
    pub embedding: Tensor<S>,
    pub passes: Vec<PassOutput<S>>,
}

impl<S: Scalar> SampleOutput<S> {
    pub fn last(&self) -> &PassOutput<S> {
        self.passes.last().expect("at least one pass")
    }
}

pub struct BatchOutput<S: Scalar> {
    /// Unnormalized motion field `[B×2×H′×W′]`.
    pub motion: Tensor<S>,
    pub samples: Vec<SampleOutput<S>>,
}

pub struct Model<S: Scalar = f32> {
    pub cfg: ModelConfig,
    pub params: ParamSet<S>,
    encoder: Encoder<S>,
    motion: MotionBranch<S>,
    gcn: Gcn<S>,
    sep: SeparatingNet<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new(seed);
        let encoder = Encoder::new(&mut ps, &cfg);
        let motion = MotionBranch::new(&mut ps, &cfg);
        let gcn = Gcn::new(&mut ps, cfg.vertex_width(), cfg.gcn_layers);
        let prior = 3.0 / cfg.num_points as f64;
        let sep = SeparatingNet::new(
            &mut ps,
            cfg.feat_channels + 4,
            cfg.d_model,
            cfg.heads,
            cfg.d_ff,
            cfg.sep_blocks,
            prior,
        );
        Ok(Self {
            cfg,
            params: ps,
            encoder,
            motion,
            gcn,
            sep,
        })
    }

    /// Same architecture and values in another precision.
    pub fn cast<T: Scalar>(&self) -> Result<Model<T>> {
        let m = Model::<T>::new(self.cfg.clone(), 0)?;
        m.params.import(&self.params.export())?;
        Ok(m)
    }

    pub fn encode(&self, images: &Tensor<S>, train: bool) -> Result<(Tensor<S>, Tensor<S>)> {
        let s = self.cfg.image_size;
        if images.ndim() != 4 || images.shape()[2] != s || images.shape()[3] != s {
            return dim_err(format!("expected [B,3,{s},{s}] images, got {:?}", images.shape()));
        }
        let fc = self.encoder.forward(images, train)?;
        let motion = self.motion.forward(&fc)?;
        Ok((fc, motion))
    }

    /// Feature map of sample `b` with its unit motion directions mapped to
    /// [0,1], resized to the embedding resolution: `[(C′+2)×E×E]`.
    pub fn embed(&self, fc: &Tensor<S>, motion: &Tensor<S>, b: usize) -> Result<Tensor<S>> {
        let (c, h, w) = (fc.shape()[1], fc.shape()[2], fc.shape()[3]);
        let f = fc.narrow(0, b, 1)?.reshape(&[c, h, w])?;
        let v = motion.narrow(0, b, 1)?.reshape(&[2, h, w])?;
        let vx = v.narrow(0, 0, 1)?;
        let vy = v.narrow(0, 1, 1)?;
        let norm = vx.square().add(&vy.square())?.add_scalar(1e-12).sqrt();
        let ux = vx.div(&norm)?.scale(0.5).add_scalar(0.5);
        let uy = vy.div(&norm)?.scale(0.5).add_scalar(0.5);
        let cat = Tensor::concat(&[f, ux, uy], 0)?;
        let e = self.cfg.embed_size;
        if e == h && e == w {
            Ok(cat)
        } else {
            cat.bilinear_resize(e, e)
        }
    }

    /// `[N×(C′+6)]`: sampled embedding, coordinates and scaled ΔH per vertex.
    pub fn vertex_features(&self, emb: &Tensor<S>, points: &Tensor<S>, delta_h: &Tensor<S>) -> Result<Tensor<S>> {
        let sampled = emb.bilinear_sample(points)?;
        Tensor::concat(&[sampled, points.clone(), delta_h.scale(DELTA_H_SCALE)], 1)
    }

    /// One GCN step followed by the separating network at the moved points.
    pub fn run_pass(
        &self,
        emb: &Tensor<S>,
        points: &Tensor<S>,
        adjacency: &AdjacencyMatrix,
        delta_h: &Tensor<S>,
    ) -> Result<PassOutput<S>> {
        let n = self.cfg.num_points;
        if points.shape() != [n, 2] || delta_h.shape() != [n, 2] || adjacency.n != n {
            return dim_err(format!("pass expects {n} vertices"));
        }
        let f = self.vertex_features(emb, points, delta_h)?;
        let moved = points.add(&self.gcn.offsets(&f, adjacency)?)?.clamp(0.0, 1.0);
        let g = Tensor::concat(&[emb.bilinear_sample(&moved)?, moved.clone()], 1)?;
        let pe = positional_encoding(n, self.sep.d_model());
        let soft = self.sep.forward(&g, &pe)?;
        let hard = {
            let m = AdjacencyMatrix {
                n,
                entries: soft.to_f64_vec(),
                mode: AdjacencyMode::Soft,
            };
            truncate_adjacency(&m)
        };
        Ok(PassOutput {
            points: moved,
            soft,
            hard,
        })
    }

    /// Runs `passes` refinement passes from the given state. Each pass
    /// starts from the previous pass's points with gradients cut.
    pub fn refine(
        &self,
        emb: &Tensor<S>,
        start: &[Point],
        adjacency: &AdjacencyMatrix,
        delta_h: &[Point],
        passes: usize,
    ) -> Result<Vec<PassOutput<S>>> {
        let n = self.cfg.num_points;
        let flat = |p: &[Point]| -> Vec<f64> { p.iter().flat_map(|q| [q[0], q[1]]).collect() };
        let dh = Tensor::from_f64(&flat(delta_h), &[n, 2])?;
        let mut points = Tensor::from_f64(&flat(start), &[n, 2])?;
        let mut adj = adjacency.clone();
        let mut out = Vec::with_capacity(passes);
        for _ in 0..passes {
            let p = self.run_pass(emb, &points, &adj, &dh)?;
            points = p.points.detach();
            adj = p.hard.clone();
            out.push(p);
        }
        Ok(out)
    }

    /// Initial state: the circle and a single N-gon.
    pub fn initial_state(&self) -> (Vec<Point>, AdjacencyMatrix) {
        let n = self.cfg.num_points;
        let ring = component_sizes(n, 1).expect("n >= 3");
        (initial_circle(n).points, build_gt_adjacency(&ring).expect("valid ring"))
    }

    /// Full forward over a batch. `delta_h` defaults to zeros.
    pub fn forward(&self, images: &Tensor<S>, delta_h: Option<&[Vec<Point>]>, train: bool) -> Result<BatchOutput<S>> {
        let (fc, motion) = self.encode(images, train)?;
        let (start, adj) = self.initial_state();
        let zeros = vec![[0.0, 0.0]; self.cfg.num_points];
        let mut samples = Vec::with_capacity(images.shape()[0]);
        for b in 0..images.shape()[0] {
            let emb = self.embed(&fc, &motion, b)?;
            let dh = delta_h.map_or(zeros.as_slice(), |d| d[b].as_slice());
            let passes = self.refine(&emb, &start, &adj, dh, self.cfg.passes)?;
            samples.push(SampleOutput { embedding: emb, passes });
        }
        Ok(BatchOutput { motion, samples })
    }

    /// Inference on one `[3×S×S]` crop without recording gradients.
    pub fn predict(&self, image: &Tensor<S>) -> Result<Prediction<S>> {
        no_grad(|| {
            let s = self.cfg.image_size;
            let batch = image.reshape(&[1, 3, s, s])?;
            let mut out = self.forward(&batch, None, false)?;
            let sample = out.samples.pop().expect("one sample");
            Ok(Prediction {
                motion: out.motion,
                embedding: sample.embedding,
                passes: sample.passes,
            })
        })
    }
}

pub struct Prediction<S: Scalar> {
    pub motion: Tensor<S>,
    pub embedding: Tensor<S>,
    pub passes: Vec<PassOutput<S>>,
}

impl<S: Scalar> Prediction<S> {
    pub fn last(&self) -> &PassOutput<S> {
        self.passes.last().expect("at least one pass")
    }

    pub fn polygons(&self) -> Decomposition {
        let last = self.last();
        decompose_components(&last.hard, &last.point_values())
    }
}
