//! Device-identification network: ConvLSTM frame encoder, BiLSTM sequence
//! summary, transformer encoders and an MLP head, any subset of the three
//! blocks enabled.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featkit::TandemFeature;
use crate::layers::{
    positional_encoding, Activation, BatchNorm1d, BiLstm, ConvLstm1d, Dense, EncoderBlock, Mode, ParamSet, Pass,
};
use crate::tensor::{conv1d_out_len, Tape, Tensor, Var};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// How the BiLSTM summary vector is cut into encoder tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    /// One token per vector element (`d_model = 1`).
    Scalar,
    /// Consecutive blocks of `block_width` elements.
    Blocks,
}

/// Reduction of the encoder output to the head input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub use_convlstm: bool,
    pub use_bilstm: bool,
    pub use_transformer: bool,
    pub input_frames: usize,
    pub input_dims: usize,
    pub convlstm: Vec<ConvSpec>,
    pub bilstm_units: usize,
    pub encoder_num: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_units: usize,
    pub mlp_units: usize,
    pub n_classes: usize,
    pub token_scheme: TokenScheme,
    pub block_width: usize,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            use_convlstm: true,
            use_bilstm: true,
            use_transformer: true,
            input_frames: 128,
            input_dims: 73,
            convlstm: alloc::vec![
                ConvSpec { filters: 64, kernel: 3, stride: 3 },
                ConvSpec { filters: 32, kernel: 3, stride: 2 },
            ],
            bilstm_units: 128,
            encoder_num: 2,
            heads: 8,
            head_dim: 64,
            ff_units: 128,
            mlp_units: 128,
            n_classes: 45,
            token_scheme: TokenScheme::Blocks,
            block_width: 16,
            pooling: Pooling::Mean,
        }
    }
}

/// Block flags of ablation group `1..=7` on top of the default sizes.
///
/// 1 ConvLSTM, 2 BiLSTM, 3 Transformer, 4 all, 5 BiLSTM + Transformer,
/// 6 ConvLSTM + Transformer, 7 ConvLSTM + BiLSTM.
pub fn ablation_config(group: u8) -> Result<ModelConfig> {
    let (c, b, t) = match group {
        1 => (true, false, false),
        2 => (false, true, false),
        3 => (false, false, true),
        4 => (true, true, true),
        5 => (false, true, true),
        6 => (true, false, true),
        7 => (true, true, false),
        _ => return Err(Error::Config(format!("ablation group {group} not in 1..=7"))),
    };
    Ok(ModelConfig { use_convlstm: c, use_bilstm: b, use_transformer: t, ..ModelConfig::default() })
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.use_convlstm || self.use_bilstm || self.use_transformer) {
            return bad("at least one of convlstm, bilstm, transformer must be enabled".into());
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes = {} (need at least 2)", self.n_classes));
        }
        if self.input_frames == 0 || self.input_dims == 0 || self.mlp_units == 0 {
            return bad("input_frames, input_dims and mlp_units must be positive".into());
        }
        if self.use_convlstm && self.convlstm.is_empty() {
            return bad("convlstm enabled with no layer specs".into());
        }
        if self.use_bilstm && self.bilstm_units == 0 {
            return bad("bilstm_units must be positive".into());
        }
        if self.use_transformer {
            if self.encoder_num == 0 || self.heads == 0 || self.head_dim == 0 || self.ff_units == 0 {
                return bad("encoder_num, heads, head_dim and ff_units must be positive".into());
            }
            if self.use_bilstm && self.token_scheme == TokenScheme::Blocks {
                let w = 2 * self.bilstm_units;
                if self.block_width == 0 || w % self.block_width != 0 {
                    return bad(format!("block_width {} does not divide {w}", self.block_width));
                }
            }
        }
        Ok(())
    }

    /// Per-frame width after the ConvLSTM stack, or the raw width without it.
    fn frame_width(&self) -> Result<usize> {
        if !self.use_convlstm {
            return Ok(self.input_dims);
        }
        let mut len = self.input_dims;
        let mut ch = 1;
        for (i, s) in self.convlstm.iter().enumerate() {
            len = conv1d_out_len(len, s.kernel, s.stride)
                .ok_or_else(|| Error::Config(format!("convlstm layer {i}: length {len} shorter than kernel")))?;
            ch = s.filters;
        }
        Ok(len * ch)
    }

    /// Encoder `(tokens, d_model)` when the transformer is enabled.
    fn token_shape(&self) -> Result<(usize, usize)> {
        if !self.use_bilstm {
            return Ok((self.input_frames, self.frame_width()?));
        }
        let w = 2 * self.bilstm_units;
        Ok(match self.token_scheme {
            TokenScheme::Scalar => (w, 1),
            TokenScheme::Blocks => (w / self.block_width, self.block_width),
        })
    }

    /// Width of the vector entering the MLP head.
    pub fn embedding_width(&self) -> Result<usize> {
        if self.use_transformer {
            let (n, d) = self.token_shape()?;
            return Ok(match self.pooling {
                Pooling::Mean => d,
                Pooling::Flatten => n * d,
            });
        }
        if self.use_bilstm {
            return Ok(2 * self.bilstm_units);
        }
        Ok(self.input_frames * self.frame_width()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub cell: ConvLstm1d,
    pub norm: BatchNorm1d,
}

/// Layer graph; parameters live in the accompanying [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub conv: Vec<ConvStage>,
    pub bilstm: Option<BiLstm>,
    pub encoders: Vec<EncoderBlock>,
    pub head_hidden: Dense,
    pub head_out: Dense,
    frames: usize,
    dims: usize,
    tokens: Option<(usize, usize)>,
    pooling: Pooling,
}

/// Stage name and per-sample shape after that stage.
pub type ShapeTrace = Vec<(&'static str, Vec<usize>)>;

impl Network {
    fn build<T: Real>(cfg: &ModelConfig, params: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut conv = Vec::new();
        if cfg.use_convlstm {
            let (mut len, mut ch) = (cfg.input_dims, 1);
            for (i, s) in cfg.convlstm.iter().enumerate() {
                let cell = ConvLstm1d::new(params, &format!("convlstm{i}"), len, ch, s.filters, s.kernel, s.stride, rng)?;
                let norm = BatchNorm1d::new(params, &format!("bn{i}"), s.filters);
                len = cell.out_len;
                ch = s.filters;
                conv.push(ConvStage { cell, norm });
            }
        }
        let bilstm = cfg.use_bilstm.then(|| BiLstm::new(params, "bilstm", cfg.frame_width().unwrap_or(0), cfg.bilstm_units, rng));
        let mut encoders = Vec::new();
        let tokens = if cfg.use_transformer { Some(cfg.token_shape()?) } else { None };
        if let Some((_, d)) = tokens {
            for i in 0..cfg.encoder_num {
                encoders.push(EncoderBlock::new(params, &format!("encoder{i}"), d, cfg.heads, cfg.head_dim, cfg.ff_units, rng)?);
            }
        }
        let emb = cfg.embedding_width()?;
        let head_hidden = Dense::new(params, "head.hidden", emb, cfg.mlp_units, Activation::Relu, rng);
        let head_out = Dense::new(params, "head.out", cfg.mlp_units, cfg.n_classes, Activation::Linear, rng);
        Ok(Network {
            conv,
            bilstm,
            encoders,
            head_hidden,
            head_out,
            frames: cfg.input_frames,
            dims: cfg.input_dims,
            tokens,
            pooling: cfg.pooling,
        })
    }

    /// Backbone output `(batch, embedding)` for `x: (batch, frames, dims)`.
    pub fn embed<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        self.embed_traced(pass, x, None)
    }

    fn embed_traced<T: Real>(&self, pass: &Pass<'_, T>, x: Var, mut trace: Option<&mut ShapeTrace>) -> Result<Var> {
        let t = pass.tape();
        let shape = t.shape(x);
        if shape.len() != 3 || shape[1] != self.frames || shape[2] != self.dims {
            return Err(Error::shapes("model_input", &shape, &[self.frames, self.dims]));
        }
        let batch = shape[0];
        let mut record = |name: &'static str, v: Var| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((name, t.shape(v)[1..].to_vec()));
            }
        };
        record("input", x);
        let mut seq = x;
        if !self.conv.is_empty() {
            let mut s = t.reshape(x, &[batch, self.frames, self.dims, 1])?;
            for stage in &self.conv {
                s = stage.cell.forward(pass, s)?;
                record("convlstm", s);
                s = stage.norm.forward(pass, s)?;
            }
            let last = &self.conv[self.conv.len() - 1].cell;
            seq = t.reshape(s, &[batch, self.frames, last.out_len * last.filters])?;
            record("reshape", seq);
        }
        let summary = match &self.bilstm {
            Some(bl) => {
                let v = bl.forward(pass, seq)?;
                record("bilstm", v);
                Some(v)
            }
            None => None,
        };
        let Some((n, d)) = self.tokens else {
            return match summary {
                Some(v) => Ok(v),
                None => {
                    let flat = t.reshape(seq, &[batch, t.shape(seq)[1..].iter().product()])?;
                    record("flatten", flat);
                    Ok(flat)
                }
            };
        };
        let tokens = match summary {
            Some(v) => t.reshape(v, &[batch, n, d])?,
            None => seq,
        };
        let pe = t.constant(positional_encoding(n, d));
        let mut h = t.add_bias(tokens, pe)?;
        record("tokens", h);
        for enc in &self.encoders {
            h = enc.forward(pass, h)?;
            record("encoder", h);
        }
        let pooled = match self.pooling {
            Pooling::Mean => t.mean_axis(h, 1)?,
            Pooling::Flatten => t.reshape(h, &[batch, n * d])?,
        };
        record("pool", pooled);
        Ok(pooled)
    }

    /// Hidden MLP activations `(batch, mlp_units)` from embeddings.
    pub fn head_features<T: Real>(&self, pass: &Pass<'_, T>, emb: Var) -> Result<Var> {
        self.head_hidden.forward(pass, emb)
    }

    /// Class logits from embeddings.
    pub fn head<T: Real>(&self, pass: &Pass<'_, T>, emb: Var) -> Result<Var> {
        self.head_out.forward(pass, self.head_hidden.forward(pass, emb)?)
    }

    pub fn forward<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<Var> {
        self.head(pass, self.embed(pass, x)?)
    }

    /// Per-sample shapes after every stage for one forward pass on `x`.
    pub fn shape_trace<T: Real>(&self, pass: &Pass<'_, T>, x: Var) -> Result<ShapeTrace> {
        let mut trace = Vec::new();
        let emb = self.embed_traced(pass, x, Some(&mut trace))?;
        let hidden = self.head_hidden.forward(pass, emb)?;
        trace.push(("mlp", pass.tape().shape(hidden)[1..].to_vec()));
        let logits = self.head_out.forward(pass, hidden)?;
        trace.push(("logits", pass.tape().shape(logits)[1..].to_vec()));
        Ok(trace)
    }
}

/// A configured network together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceIdModel<T> {
    pub config: ModelConfig,
    pub net: Network,
    pub params: ParamSet<T>,
}

impl<T: Real> DeviceIdModel<T> {
    /// Builds the network with parameters drawn deterministically from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::build(&config, &mut params, &mut rng)?;
        Ok(DeviceIdModel { config, net, params })
    }

    /// Builds the network for `config` and installs `params` after checking
    /// names and shapes against the fresh layout.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let fresh = Self::build(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} parameters, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for ((_, want), (_, got)) in fresh.params.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() || want.role != got.role {
                return Err(Error::ParamMismatch(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(DeviceIdModel { config: fresh.config, net: fresh.net, params })
    }

    /// Stacks features into a `(batch, frames, dims)` tensor.
    pub fn batch_input(&self, features: &[&TandemFeature]) -> Result<Tensor<T>> {
        let (f, d) = (self.config.input_frames, self.config.input_dims);
        let mut data = Vec::with_capacity(features.len() * f * d);
        for feat in features {
            if feat.shape() != (f, d) {
                return Err(Error::shapes("model_input", &[feat.frames, feat.dims], &[f, d]));
            }
            data.extend(feat.data.iter().map(|&v| T::of(v as f64)));
        }
        Tensor::new(&[features.len(), f, d], data)
    }

    /// Inference-mode logits `(batch, n_classes)`.
    pub fn logits(&self, features: &[&TandemFeature]) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let pass = Pass::new(&tape, &self.params, Mode::Eval);
        let x = tape.constant(self.batch_input(features)?);
        let y = self.net.forward(&pass, x)?;
        let out = tape.value(y).clone();
        Ok(out)
    }

    /// Inference-mode backbone embeddings `(batch, embedding)`.
    pub fn embeddings(&self, features: &[&TandemFeature]) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let pass = Pass::new(&tape, &self.params, Mode::Eval);
        let x = tape.constant(self.batch_input(features)?);
        let y = self.net.embed(&pass, x)?;
        let out = tape.value(y).clone();
        Ok(out)
    }

    pub fn shape_trace(&self) -> Result<ShapeTrace> {
        let tape = Tape::new();
        let pass = Pass::new(&tape, &self.params, Mode::Eval);
        let x = tape.constant(Tensor::zeros(&[1, self.config.input_frames, self.config.input_dims]));
        self.net.shape_trace(&pass, x)
    }

    /// Swaps the output layer for a freshly initialized one with
    /// `n_classes` outputs.
    pub fn replace_head(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::Config(format!("n_classes = {n_classes} (need at least 2)")));
        }
        let mut scratch = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh = Dense::new(&mut scratch, "head.out", self.config.mlp_units, n_classes, Activation::Linear, &mut rng);
        let out = &mut self.net.head_out;
        self.params.replace(out.weight, scratch.value(fresh.weight).clone());
        self.params.replace(out.bias, scratch.value(fresh.bias).clone());
        out.output = n_classes;
        self.config.n_classes = n_classes;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> DeviceIdModel<U> {
        DeviceIdModel { config: self.config.clone(), net: self.net.clone(), params: self.params.cast() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(cfg: ModelConfig) -> ShapeTrace {
        DeviceIdModel::<f32>::build(cfg, 1).unwrap().shape_trace().unwrap()
    }

    #[test]
    fn full_model_trace() {
        let tr = trace_of(ModelConfig::default());
        let shapes: Vec<(&str, Vec<usize>)> = tr.into_iter().collect();
        let want: Vec<(&str, Vec<usize>)> = alloc::vec![
            ("input", alloc::vec![128, 73]),
            ("convlstm", alloc::vec![128, 24, 64]),
            ("convlstm", alloc::vec![128, 11, 32]),
            ("reshape", alloc::vec![128, 352]),
            ("bilstm", alloc::vec![256]),
            ("tokens", alloc::vec![16, 16]),
            ("encoder", alloc::vec![16, 16]),
            ("encoder", alloc::vec![16, 16]),
            ("pool", alloc::vec![16]),
            ("mlp", alloc::vec![128]),
            ("logits", alloc::vec![45]),
        ];
        assert_eq!(shapes, want);
    }

    #[test]
    fn scalar_tokens_trace() {
        let tr = trace_of(ModelConfig { token_scheme: TokenScheme::Scalar, ..ModelConfig::default() });
        assert!(tr.contains(&("tokens", alloc::vec![256, 1])));
    }

    #[test]
    fn group_topologies() {
        let g = |n| ablation_config(n).unwrap();
        assert!(g(6).use_convlstm && !g(6).use_bilstm && g(6).use_transformer);
        assert!(g(4).use_convlstm && g(4).use_bilstm && g(4).use_transformer);
        assert!(!g(7).use_transformer);
        assert!(matches!(ablation_config(0), Err(Error::Config(_))));
        assert!(matches!(ablation_config(8), Err(Error::Config(_))));
        let tr = trace_of(ModelConfig { n_classes: 8, ..g(2) });
        assert_eq!(tr[1], ("bilstm", alloc::vec![256]));
        let tr = trace_of(ModelConfig { n_classes: 8, ..g(1) });
        assert!(tr.contains(&("flatten", alloc::vec![128 * 352])));
        let tr = trace_of(ModelConfig { n_classes: 8, ..g(3) });
        assert!(tr.contains(&("tokens", alloc::vec![128, 73])));
    }

    #[test]
    fn no_blocks_is_config_error() {
        let cfg = ModelConfig { use_convlstm: false, use_bilstm: false, use_transformer: false, ..ModelConfig::default() };
        assert!(matches!(DeviceIdModel::<f32>::build(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig { n_classes: 4, ..ablation_config(5).unwrap() };
        let a = DeviceIdModel::<f32>::build(cfg.clone(), 9).unwrap();
        let b = DeviceIdModel::<f32>::build(cfg.clone(), 9).unwrap();
        let c = DeviceIdModel::<f32>::build(cfg, 10).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn head_replacement_changes_class_count() {
        let cfg = ModelConfig { n_classes: 45, ..ablation_config(2).unwrap() };
        let mut m = DeviceIdModel::<f32>::build(cfg, 0).unwrap();
        m.replace_head(21, 1).unwrap();
        assert_eq!(m.shape_trace().unwrap().last().unwrap().1, [21]);
        let again = DeviceIdModel::from_params(m.config.clone(), m.params.clone()).unwrap();
        assert_eq!(again.net, m.net);
    }
}
