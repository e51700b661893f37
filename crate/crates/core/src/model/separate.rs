use crate::error::{dim_err, Result};
use crate::nn::{LayerNorm, Linear, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Fixed sinusoidal encoding `[n×d]` of vertex indices.
pub fn positional_encoding<S: Scalar>(n: usize, d: usize) -> Tensor<S> {
    let mut v = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / freq;
            v[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::from_f64(&v, &[n, d]).expect("encoding shape")
}

pub struct EncoderBlock<S: Scalar> {
    q: Linear<S>,
    k: Linear<S>,
    v: Linear<S>,
    o: Linear<S>,
    ln1: LayerNorm<S>,
    ff1: Linear<S>,
    ff2: Linear<S>,
    ln2: LayerNorm<S>,
    heads: usize,
}

impl<S: Scalar> EncoderBlock<S> {
    pub fn new(ps: &mut ParamSet<S>, name: &str, d: usize, heads: usize, d_ff: usize) -> Self {
        Self {
            q: Linear::new(ps, &format!("{name}.q"), d, d, true, 1.0),
            k: Linear::new(ps, &format!("{name}.k"), d, d, true, 1.0),
            v: Linear::new(ps, &format!("{name}.v"), d, d, true, 1.0),
            o: Linear::new(ps, &format!("{name}.o"), d, d, true, 1.0),
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            ff1: Linear::new(ps, &format!("{name}.ff1"), d, d_ff, true, 2f64.sqrt()),
            ff2: Linear::new(ps, &format!("{name}.ff2"), d_ff, d, true, 1.0),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
            heads,
        }
    }

    pub fn attention(&self, h: &Tensor<S>) -> Result<Tensor<S>> {
        let d = h.shape()[1];
        let dk = d / self.heads;
        let q = self.q.forward(h)?;
        let k = self.k.forward(h)?;
        let v = self.v.forward(h)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for hd in 0..self.heads {
            let qh = q.narrow(1, hd * dk, dk)?;
            let kh = k.narrow(1, hd * dk, dk)?;
            let vh = v.narrow(1, hd * dk, dk)?;
            let w = qh.matmul_nt(&kh)?.scale(scale).softmax_rows()?;
            outs.push(w.matmul(&vh)?);
        }
        let cat = if outs.len() == 1 { outs.pop().unwrap() } else { Tensor::concat(&outs, 1)? };
        self.o.forward(&cat)
    }

    pub fn forward(&self, h: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.ln1.forward(&h.add(&self.attention(h)?)?)?;
        let ff = self.ff2.forward(&self.ff1.forward(&h)?.relu())?;
        self.ln2.forward(&h.add(&ff)?)
    }
}

/// Transformer encoder over vertices with a pairwise sigmoid head.
pub struct SeparatingNet<S: Scalar> {
    input: Linear<S>,
    blocks: Vec<EncoderBlock<S>>,
    wa: Linear<S>,
    wb: Linear<S>,
    bias: Tensor<S>,
    d_model: usize,
}

impl<S: Scalar> SeparatingNet<S> {
    pub fn new(
        ps: &mut ParamSet<S>,
        d_in: usize,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        blocks: usize,
        prior: f64,
    ) -> Self {
        assert!(d_model % heads == 0, "model width must split evenly over heads");
        let input = Linear::new(ps, "sep.input", d_in, d_model, true, 1.0);
        let blocks = (0..blocks)
            .map(|b| EncoderBlock::new(ps, &format!("sep.block{b}"), d_model, heads, d_ff))
            .collect();
        let wa = Linear::new(ps, "sep.pair_a", d_model, d_model, false, 1.0);
        let wb = Linear::new(ps, "sep.pair_b", d_model, d_model, false, 1.0);
        let logit = (prior / (1.0 - prior)).ln();
        let bias = ps.constant("sep.pair_bias", &[1], logit);
        Self {
            input,
            blocks,
            wa,
            wb,
            bias,
            d_model,
        }
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Soft adjacency `[N×N]` in (0,1) from vertex features `[N×d_in]` and
    /// the positional rows `pe: [N×d_model]` assigned to them.
    pub fn forward(&self, g: &Tensor<S>, pe: &Tensor<S>) -> Result<Tensor<S>> {
        let n = g.shape()[0];
        if pe.shape() != [n, self.d_model] {
            return dim_err(format!("positional encoding {:?} for {n} vertices", pe.shape()));
        }
        let mut h = self.input.forward(g)?.add(pe)?;
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        let a = self.wa.forward(&h)?;
        let b = self.wb.forward(&h)?;
        let logits = a.matmul_nt(&b)?.scale(1.0 / (self.d_model as f64).sqrt());
        let bias = self.bias.reshape(&[1, 1])?;
        let bias_row = Tensor::ones(&[n, 1]).matmul(&bias)?.matmul(&Tensor::ones(&[1, n]))?;
        Ok(logits.add(&bias_row)?.sigmoid())
    }
}
