//! The style-transfer transformer: patch embedding, content and style
//! encoders, the cross-attention decoder and the convolutional decoder.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::patching::{embed, PatchSequence};
use crate::posenc::{cape, PeMode};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Number of (conv, ReLU, 2x upsample) stages in the convolutional decoder.
pub const CNN_STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub channels: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    pub patch_size: usize,
    /// Side `n` of the pooled CAPE grid.
    pub cape_grid: usize,
    pub content_pe: PeMode,
    pub style_pe: PeMode,
    pub separate_embeddings: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            channels: 512,
            heads: 8,
            encoder_layers: 3,
            decoder_layers: 3,
            ffn_hidden: 2048,
            patch_size: 8,
            cape_grid: 18,
            content_pe: PeMode::Cape,
            style_pe: PeMode::None,
            separate_embeddings: false,
        }
    }
}

impl TransformerConfig {
    /// Small configuration used by the test and check suites
    /// (C = 64, 4 heads, one encoder and one decoder layer, CAPE grid 4).
    pub fn toy() -> Self {
        Self {
            channels: 64,
            heads: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_hidden: 128,
            cape_grid: 4,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let bad = |msg: String| Err(Error::Config(msg));
        if c == 0 || self.heads == 0 || !c.is_multiple_of(self.heads) {
            return bad(format!("channels {c} must be a positive multiple of heads {}", self.heads));
        }
        if !c.is_multiple_of(8) {
            return bad(format!("channels {c} must be divisible by 8 for the CNN decoder"));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.ffn_hidden == 0 {
            return bad("layer counts and ffn_hidden must be at least 1".into());
        }
        if self.patch_size != 1 << CNN_STAGES {
            return bad(format!(
                "patch_size {} unsupported: the CNN decoder upsamples by exactly {}",
                self.patch_size,
                1 << CNN_STAGES
            ));
        }
        if self.cape_grid == 0 {
            return bad("cape_grid must be at least 1".into());
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// Channel counts through the CNN decoder: `C, C/2, C/4, C/8`.
    pub fn cnn_channels(&self) -> [usize; CNN_STAGES + 1] {
        let c = self.channels;
        [c, c / 2, c / 4, c / 8]
    }

    /// Every learnable tensor with its shape and initializer, in a fixed order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = self.channels;
        let f = self.ffn_hidden;
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            specs.push(ParamSpec { name, shape, init })
        };

        let embedding = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
            push(format!("{prefix}.weight"), vec![self.patch_dim(), c], Init::xavier(self.patch_dim(), c));
            push(format!("{prefix}.bias"), vec![c], Init::Zeros);
        };
        embedding("embed", &mut push);
        if self.separate_embeddings {
            embedding("embed_style", &mut push);
        }
        push("cape.weight".into(), vec![c, c], Init::xavier(c, c));
        push("cape.bias".into(), vec![c], Init::Zeros);

        let attn = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
            for w in ["w_q", "w_k", "w_v", "w_o"] {
                push(format!("{prefix}.{w}"), vec![c, c], Init::xavier(c, c));
            }
        };
        let norm = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
            push(format!("{prefix}.gamma"), vec![c], Init::Ones);
            push(format!("{prefix}.beta"), vec![c], Init::Zeros);
        };
        let ffn = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
            push(format!("{prefix}.w1"), vec![c, f], Init::xavier(c, f));
            push(format!("{prefix}.b1"), vec![f], Init::Zeros);
            push(format!("{prefix}.w2"), vec![f, c], Init::xavier(f, c));
            push(format!("{prefix}.b2"), vec![c], Init::Zeros);
        };
        for branch in ["enc_c", "enc_s"] {
            for i in 0..self.encoder_layers {
                let p = format!("{branch}.{i}");
                attn(&format!("{p}.attn"), &mut push);
                norm(&format!("{p}.ln1"), &mut push);
                ffn(&format!("{p}.ffn"), &mut push);
                norm(&format!("{p}.ln2"), &mut push);
            }
        }
        for i in 0..self.decoder_layers {
            let p = format!("dec.{i}");
            attn(&format!("{p}.attn1"), &mut push);
            norm(&format!("{p}.ln1"), &mut push);
            attn(&format!("{p}.attn2"), &mut push);
            norm(&format!("{p}.ln2"), &mut push);
            ffn(&format!("{p}.ffn"), &mut push);
            norm(&format!("{p}.ln3"), &mut push);
        }
        let ch = self.cnn_channels();
        for s in 0..CNN_STAGES {
            let (ci, co) = (ch[s], ch[s + 1]);
            push(format!("cnn.{s}.weight"), vec![co, ci, 3, 3], Init::xavier(ci * 9, co * 9));
            push(format!("cnn.{s}.bias"), vec![co], Init::Zeros);
        }
        let last = ch[CNN_STAGES];
        push("cnn.out.weight".into(), vec![3, last, 3, 3], Init::xavier(last * 9, 27));
        push("cnn.out.bias".into(), vec![3], Init::Zeros);
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

impl Init {
    fn xavier(fan_in: usize, fan_out: usize) -> Self {
        Init::Xavier { fan_in, fan_out }
    }
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Named learnable tensors, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ModelParams<T: Real> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    /// Draws every tensor of `config` from one seeded stream, in spec order.
    pub fn init(config: &TransformerConfig, seed: u64) -> Self {
        let mut stream = rng::stream(seed);
        let mut params = Self::new();
        for spec in config.param_specs() {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Xavier { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n)
                        .map(|_| T::lit(rng::uniform(&mut stream, -limit, limit)))
                        .collect()
                }
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            params.insert(spec.name, Tensor::new(data, &spec.shape).expect("spec shape"));
        }
        params
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::load(Some(name), "missing tensor"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Fresh gradient-tracking leaves with the same values.
    pub fn trainable(&self) -> Self {
        self.map(|t| t.detach().requires_grad())
    }

    /// Constant copies cut from any graph.
    pub fn detached(&self) -> Self {
        self.map(Tensor::detach)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<U>()))
                .collect(),
        }
    }

    fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        Self {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
        }
    }

    /// Checks names and shapes against `config`; extra tensors are rejected.
    pub fn check_against(&self, config: &TransformerConfig) -> Result<()> {
        let specs = config.param_specs();
        for spec in &specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::load(
                    Some(&spec.name),
                    format!("shape {:?} does not match config ({:?})", t.shape(), spec.shape),
                ));
            }
        }
        if self.len() != specs.len() {
            let extra = self
                .names()
                .find(|n| !specs.iter().any(|s| s.name == *n))
                .unwrap_or("?");
            return Err(Error::load(Some(extra), "tensor not used by this config"));
        }
        Ok(())
    }
}

/// Query/key/value/output projections of one attention block, each `[C, C]`;
/// head `h` uses columns `h*d_head .. (h+1)*d_head` of `w_q`, `w_k`, `w_v`.
#[derive(Debug, Clone, Copy)]
pub struct AttnParams<'a, T: Real> {
    pub w_q: &'a Tensor<T>,
    pub w_k: &'a Tensor<T>,
    pub w_v: &'a Tensor<T>,
    pub w_o: &'a Tensor<T>,
    pub heads: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NormParams<'a, T: Real> {
    pub gamma: &'a Tensor<T>,
    pub beta: &'a Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnParams<'a, T: Real> {
    pub w1: &'a Tensor<T>,
    pub b1: &'a Tensor<T>,
    pub w2: &'a Tensor<T>,
    pub b2: &'a Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerParams<'a, T: Real> {
    pub attn: AttnParams<'a, T>,
    pub ln1: NormParams<'a, T>,
    pub ffn: FfnParams<'a, T>,
    pub ln2: NormParams<'a, T>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerParams<'a, T: Real> {
    pub attn1: AttnParams<'a, T>,
    pub ln1: NormParams<'a, T>,
    pub attn2: AttnParams<'a, T>,
    pub ln2: NormParams<'a, T>,
    pub ffn: FfnParams<'a, T>,
    pub ln3: NormParams<'a, T>,
}

impl<'a, T: Real> AttnParams<'a, T> {
    pub fn from_params(p: &'a ModelParams<T>, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            w_q: p.get(&format!("{prefix}.w_q"))?,
            w_k: p.get(&format!("{prefix}.w_k"))?,
            w_v: p.get(&format!("{prefix}.w_v"))?,
            w_o: p.get(&format!("{prefix}.w_o"))?,
            heads,
        })
    }
}

impl<'a, T: Real> NormParams<'a, T> {
    pub fn from_params(p: &'a ModelParams<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: p.get(&format!("{prefix}.gamma"))?,
            beta: p.get(&format!("{prefix}.beta"))?,
        })
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(self.gamma, self.beta, T::lit(LN_EPS))
    }
}

impl<'a, T: Real> FfnParams<'a, T> {
    pub fn from_params(p: &'a ModelParams<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: p.get(&format!("{prefix}.w1"))?,
            b1: p.get(&format!("{prefix}.b1"))?,
            w2: p.get(&format!("{prefix}.w2"))?,
            b2: p.get(&format!("{prefix}.b2"))?,
        })
    }

    /// `max(0, x W1 + b1) W2 + b2`, applied per token.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(self.w1)?
            .add_row(self.b1)?
            .relu()
            .matmul(self.w2)?
            .add_row(self.b2)
    }
}

impl<'a, T: Real> EncoderLayerParams<'a, T> {
    pub fn from_params(p: &'a ModelParams<T>, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            attn: AttnParams::from_params(p, &format!("{prefix}.attn"), heads)?,
            ln1: NormParams::from_params(p, &format!("{prefix}.ln1"))?,
            ffn: FfnParams::from_params(p, &format!("{prefix}.ffn"))?,
            ln2: NormParams::from_params(p, &format!("{prefix}.ln2"))?,
        })
    }
}

impl<'a, T: Real> DecoderLayerParams<'a, T> {
    pub fn from_params(p: &'a ModelParams<T>, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            attn1: AttnParams::from_params(p, &format!("{prefix}.attn1"), heads)?,
            ln1: NormParams::from_params(p, &format!("{prefix}.ln1"))?,
            attn2: AttnParams::from_params(p, &format!("{prefix}.attn2"), heads)?,
            ln2: NormParams::from_params(p, &format!("{prefix}.ln2"))?,
            ffn: FfnParams::from_params(p, &format!("{prefix}.ffn"))?,
            ln3: NormParams::from_params(p, &format!("{prefix}.ln3"))?,
        })
    }
}

/// Multi-head attention output together with each head's `[L_q, L_kv]` weights.
pub struct AttentionOutput<T: Real> {
    pub output: Tensor<T>,
    pub weights: Vec<Tensor<T>>,
}

/// Multi-head attention with queries from `q_in` `[L_q, C]` and keys/values
/// from `kv_in` `[L_kv, C]`. Scores are scaled by `1/sqrt(d_head)`.
pub fn mha_with_weights<T: Real>(
    q_in: &Tensor<T>,
    kv_in: &Tensor<T>,
    p: &AttnParams<'_, T>,
) -> Result<AttentionOutput<T>> {
    let c = p.w_q.shape().first().copied().unwrap_or(0);
    for (what, t) in [("query", q_in), ("key/value", kv_in)] {
        if t.ndim() != 2 || t.shape()[1] != c {
            return Err(Error::shape(
                "mha",
                format!("{what} input {:?} does not have {c} channels", t.shape()),
            ));
        }
    }
    if p.heads == 0 || c % p.heads != 0 {
        return Err(Error::shape("mha", format!("{c} channels over {} heads", p.heads)));
    }
    let d = c / p.heads;
    let q = q_in.matmul(p.w_q)?;
    let k = kv_in.matmul(p.w_k)?;
    let v = kv_in.matmul(p.w_v)?;
    let scale = T::lit(1.0 / (d as f64).sqrt());
    let mut heads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = q.slice(1, h * d, d)?;
        let kh = k.slice(1, h * d, d)?;
        let vh = v.slice(1, h * d, d)?;
        let attn = qh.matmul(&kh.transpose()?)?.scale(scale).softmax_lastdim()?;
        heads.push(attn.matmul(&vh)?);
        weights.push(attn);
    }
    let output = Tensor::concat_lastdim(&heads)?.matmul(p.w_o)?;
    Ok(AttentionOutput { output, weights })
}

pub fn mha<T: Real>(q_in: &Tensor<T>, kv_in: &Tensor<T>, p: &AttnParams<'_, T>) -> Result<Tensor<T>> {
    Ok(mha_with_weights(q_in, kv_in, p)?.output)
}

/// Post-norm self-attention layer:
/// `Z' = LN(MSA(x, x, x) + x)`, `Z = LN(FFN(Z') + Z')`.
pub fn encoder_layer<T: Real>(x: &Tensor<T>, p: &EncoderLayerParams<'_, T>) -> Result<Tensor<T>> {
    let z1 = p.ln1.apply(&mha(x, x, &p.attn)?.add(x)?)?;
    p.ln2.apply(&p.ffn.apply(&z1)?.add(&z1)?)
}

/// Decoder layer with two cross-attention blocks, both querying with the
/// content stream and reading keys/values from the style sequence `y_s`:
///
/// ```text
/// x̂   = x + P
/// X'' = LN(MSA(x̂, Y_s) + x̂)
/// X'  = LN(MSA(X'' + P, Y_s) + X'')
/// X   = LN(FFN(X') + X')
/// ```
pub fn decoder_layer<T: Real>(
    x: &Tensor<T>,
    y_s: &Tensor<T>,
    pos: &Tensor<T>,
    p: &DecoderLayerParams<'_, T>,
) -> Result<Tensor<T>> {
    let x_hat = x.add(pos)?;
    let x2 = p.ln1.apply(&mha(&x_hat, y_s, &p.attn1)?.add(&x_hat)?)?;
    let x1 = p.ln2.apply(&mha(&x2.add(pos)?, y_s, &p.attn2)?.add(&x2)?)?;
    p.ln3.apply(&p.ffn.apply(&x1)?.add(&x1)?)
}

/// Convolutional kernels of the image decoder.
#[derive(Debug, Clone)]
pub struct CnnParams<'a, T: Real> {
    pub stages: Vec<(&'a Tensor<T>, &'a Tensor<T>)>,
    pub out: (&'a Tensor<T>, &'a Tensor<T>),
}

impl<'a, T: Real> CnnParams<'a, T> {
    pub fn from_params(p: &'a ModelParams<T>) -> Result<Self> {
        let stages = (0..CNN_STAGES)
            .map(|s| Ok((p.get(&format!("cnn.{s}.weight"))?, p.get(&format!("cnn.{s}.bias"))?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            stages,
            out: (p.get("cnn.out.weight")?, p.get("cnn.out.bias")?),
        })
    }
}

/// Refines the decoded token map into an image: three rounds of
/// (3x3 conv, ReLU, 2x nearest upsample), then a 3x3 conv to RGB clamped to `[0, 1]`.
/// Output is `[3, 8 h_p, 8 w_p]`.
pub fn cnn_decode<T: Real>(x: &PatchSequence<T>, p: &CnnParams<'_, T>) -> Result<Tensor<T>> {
    let mut map = x.to_feature_map()?;
    for (w, b) in &p.stages {
        map = map.conv2d_3x3(w, b)?.relu().upsample_nearest_2x()?;
    }
    Ok(map
        .conv2d_3x3(p.out.0, p.out.1)?
        .clamp(T::zero(), T::one()))
}

/// Intermediate results of one forward pass.
pub struct Stylization<T: Real> {
    pub content_embedding: PatchSequence<T>,
    pub positional: Tensor<T>,
    pub content_encoded: Tensor<T>,
    pub style_encoded: Tensor<T>,
    pub decoded: Tensor<T>,
    pub image: Tensor<T>,
}

/// A configured model with its parameters.
#[derive(Debug, Clone)]
pub struct StyTr<T: Real> {
    config: TransformerConfig,
    params: ModelParams<T>,
}

impl<T: Real> StyTr<T> {
    pub fn new(config: TransformerConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    /// Same model with other parameter tensors (e.g. trainable leaves).
    pub fn with_params(&self, params: ModelParams<T>) -> Result<Self> {
        Self::new(self.config.clone(), params)
    }

    pub fn embed_content(&self, image: &Tensor<T>) -> Result<PatchSequence<T>> {
        embed(
            image,
            self.config.patch_size,
            self.params.get("embed.weight")?,
            self.params.get("embed.bias")?,
        )
    }

    pub fn embed_style(&self, image: &Tensor<T>) -> Result<PatchSequence<T>> {
        let prefix = if self.config.separate_embeddings {
            "embed_style"
        } else {
            "embed"
        };
        embed(
            image,
            self.config.patch_size,
            self.params.get(&format!("{prefix}.weight"))?,
            self.params.get(&format!("{prefix}.bias"))?,
        )
    }

    pub fn positional(&self, seq: &PatchSequence<T>, mode: PeMode) -> Result<Tensor<T>> {
        mode.encode(
            seq,
            self.params.get("cape.weight")?,
            self.params.get("cape.bias")?,
            self.config.cape_grid,
        )
    }

    /// Full CAPE evaluation including the pooled grid.
    pub fn cape(&self, seq: &PatchSequence<T>) -> Result<crate::posenc::CapeField<T>> {
        cape(
            seq,
            self.params.get("cape.weight")?,
            self.params.get("cape.bias")?,
            self.config.cape_grid,
        )
    }

    fn encoder_stack(&self, branch: &str, mut x: Tensor<T>) -> Result<Tensor<T>> {
        for i in 0..self.config.encoder_layers {
            let p = EncoderLayerParams::from_params(&self.params, &format!("{branch}.{i}"), self.config.heads)?;
            x = encoder_layer(&x, &p)?;
        }
        Ok(x)
    }

    /// Adds the positional code token-wise, then runs the content encoder.
    pub fn encode_content(&self, embedding: &Tensor<T>, pos: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder_stack("enc_c", embedding.add(pos)?)
    }

    /// Style encoder; receives the style branch's positional code (none by default).
    pub fn encode_style(&self, seq: &PatchSequence<T>) -> Result<Tensor<T>> {
        let x = match self.config.style_pe {
            PeMode::None => seq.tokens.clone(),
            mode => seq.tokens.add(&self.positional(seq, mode)?)?,
        };
        self.encoder_stack("enc_s", x)
    }

    pub fn decode(&self, y_c: &Tensor<T>, y_s: &Tensor<T>, pos: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = y_c.clone();
        for i in 0..self.config.decoder_layers {
            let p = DecoderLayerParams::from_params(&self.params, &format!("dec.{i}"), self.config.heads)?;
            x = decoder_layer(&x, y_s, pos, &p)?;
        }
        Ok(x)
    }

    /// Full pipeline from `[3, H, W]` content and style images.
    pub fn forward(&self, content: &Tensor<T>, style: &Tensor<T>, pe: PeMode) -> Result<Stylization<T>> {
        let content_embedding = self.embed_content(content)?;
        let style_embedding = self.embed_style(style)?;
        let positional = self.positional(&content_embedding, pe)?;
        let content_encoded = self.encode_content(&content_embedding.tokens, &positional)?;
        let style_encoded = self.encode_style(&style_embedding)?;
        let decoded = self.decode(&content_encoded, &style_encoded, &positional)?;
        let image = cnn_decode(
            &content_embedding.with_tokens(decoded.clone())?,
            &CnnParams::from_params(&self.params)?,
        )?;
        Ok(Stylization {
            content_embedding,
            positional,
            content_encoded,
            style_encoded,
            decoded,
            image,
        })
    }

    /// Stylized `[3, H, W]` image at the content resolution.
    pub fn stylize(&self, content: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
        self.stylize_with(content, style, self.config.content_pe)
    }

    pub fn stylize_with(&self, content: &Tensor<T>, style: &Tensor<T>, pe: PeMode) -> Result<Tensor<T>> {
        Ok(self.forward(content, style, pe)?.image)
    }
}
