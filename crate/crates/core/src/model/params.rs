use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, width 128.
    pub fn desk(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_head: 32,
            d_ff: 512,
            max_seq_len: 256,
            vocab_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::Config(format!(
                "d_model ({}) must equal n_heads ({}) x d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        Ok(())
    }
}

/// Weights of one pre-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<S: Real = f32> {
    pub ln1_gain: Tensor<S>,
    pub ln1_bias: Tensor<S>,
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    /// Output projection, `[d_model, d_model]`; rows `h*d_head..(h+1)*d_head`
    /// belong to head `h`.
    pub wo: Tensor<S>,
    pub ln2_gain: Tensor<S>,
    pub ln2_bias: Tensor<S>,
    pub w_in: Tensor<S>,
    pub b_in: Tensor<S>,
    pub w_out: Tensor<S>,
    pub b_out: Tensor<S>,
}

/// All model weights. Row-vector convention: `y = x · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S: Real = f32> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<S>,
    pub pos_emb: Tensor<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub lnf_gain: Tensor<S>,
    pub lnf_bias: Tensor<S>,
    pub unembed: Tensor<S>,
}

const INIT_STD: f64 = 0.02;

/// Deterministic initialization: weights ~ N(0, 0.02), layer-norm gains 1,
/// biases 0.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut gauss = |shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
        Tensor::new(shape, data).expect("shape").with_grad(true)
    };
    let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
    let tok_emb = gauss(vec![v, d]);
    let pos_emb = gauss(vec![config.max_seq_len, d]);
    let blocks = (0..config.n_layers)
        .map(|_| BlockParams {
            ln1_gain: ones(d),
            ln1_bias: zeros(d),
            wq: gauss(vec![d, d]),
            wk: gauss(vec![d, d]),
            wv: gauss(vec![d, d]),
            wo: gauss(vec![d, d]),
            ln2_gain: ones(d),
            ln2_bias: zeros(d),
            w_in: gauss(vec![d, ff]),
            b_in: zeros(ff),
            w_out: gauss(vec![ff, d]),
            b_out: zeros(d),
        })
        .collect();
    let unembed = gauss(vec![d, v]);
    Ok(ModelParams {
        config: config.clone(),
        tok_emb,
        pos_emb,
        blocks,
        lnf_gain: ones(d),
        lnf_bias: zeros(d),
        unembed,
    })
}

fn ones(n: usize) -> Tensor<f32> {
    Tensor::full(vec![n], 1.0).with_grad(true)
}

fn zeros(n: usize) -> Tensor<f32> {
    Tensor::zeros(vec![n]).with_grad(true)
}

impl<S: Real> ModelParams<S> {
    /// Parameters in a fixed canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, t) in b.fields() {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("ln_f.gain".into(), &self.lnf_gain));
        out.push(("ln_f.bias".into(), &self.lnf_bias));
        out.push(("unembed".into(), &self.unembed));
        out
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (n, t) in b.fields_mut() {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("ln_f.gain".into(), &mut self.lnf_gain));
        out.push(("ln_f.bias".into(), &mut self.lnf_bias));
        out.push(("unembed".into(), &mut self.unembed));
        out
    }

    /// Expected shape of every named parameter for `config`.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![config.max_seq_len, d]),
        ];
        for i in 0..config.n_layers {
            for (n, s) in [
                ("ln1.gain", vec![d]),
                ("ln1.bias", vec![d]),
                ("wq", vec![d, d]),
                ("wk", vec![d, d]),
                ("wv", vec![d, d]),
                ("wo", vec![d, d]),
                ("ln2.gain", vec![d]),
                ("ln2.bias", vec![d]),
                ("mlp.w_in", vec![d, ff]),
                ("mlp.b_in", vec![ff]),
                ("mlp.w_out", vec![ff, d]),
                ("mlp.b_out", vec![d]),
            ] {
                out.push((format!("blocks.{i}.{n}"), s));
            }
        }
        out.push(("ln_f.gain".into(), vec![d]));
        out.push(("ln_f.bias".into(), vec![d]));
        out.push(("unembed".into(), vec![d, v]));
        out
    }

    /// Rebuild params from tensors listed in canonical order, checking names
    /// and shapes against `config`.
    pub fn from_named(config: ModelConfig, tensors: Vec<(String, Tensor<S>)>) -> Result<Self> {
        config.validate()?;
        let expected = Self::expected_shapes(&config);
        if expected.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors for this config, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&tensors) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor `{n}` {:?} does not match expected `{en}` {es:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter().map(|(_, t)| t.with_grad(true));
        let mut next = || it.next().expect("count checked");
        let tok_emb = next();
        let pos_emb = next();
        let blocks = (0..config.n_layers)
            .map(|_| BlockParams {
                ln1_gain: next(),
                ln1_bias: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                w_in: next(),
                b_in: next(),
                w_out: next(),
                b_out: next(),
            })
            .collect();
        let lnf_gain = next();
        let lnf_bias = next();
        let unembed = next();
        Ok(ModelParams {
            config,
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain,
            lnf_bias,
            unembed,
        })
    }

    /// Element-type conversion, e.g. an f64 shadow for gradient checks.
    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        let tensors = self.named().into_iter().map(|(n, t)| (n, t.cast::<T>())).collect();
        ModelParams::from_named(self.config.clone(), tensors).expect("same layout")
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }
}

impl<S: Real> BlockParams<S> {
    fn fields(&self) -> [(&'static str, &Tensor<S>); 12] {
        [
            ("ln1.gain", &self.ln1_gain),
            ("ln1.bias", &self.ln1_bias),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ln2.gain", &self.ln2_gain),
            ("ln2.bias", &self.ln2_bias),
            ("mlp.w_in", &self.w_in),
            ("mlp.b_in", &self.b_in),
            ("mlp.w_out", &self.w_out),
            ("mlp.b_out", &self.b_out),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut Tensor<S>); 12] {
        [
            ("ln1.gain", &mut self.ln1_gain),
            ("ln1.bias", &mut self.ln1_bias),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("ln2.gain", &mut self.ln2_gain),
            ("ln2.bias", &mut self.ln2_bias),
            ("mlp.w_in", &mut self.w_in),
            ("mlp.b_in", &mut self.b_in),
            ("mlp.w_out", &mut self.w_out),
            ("mlp.b_out", &mut self.b_out),
        ]
    }
}
