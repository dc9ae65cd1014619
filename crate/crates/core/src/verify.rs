//! Self-check suites behind `stytr check`: finite-difference gradient
//! checks, the sinusoidal and attention-score identities, permutation
//! equivariance, the fixed CAPE grid and weight serialization.

use std::path::Path;

use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckOptions};
use crate::losses::{content_loss, style_loss, FeatureExtractor, LossOptions, LossWeights};
use crate::model::{decoder_layer, encoder_layer, DecoderLayerParams, EncoderLayerParams, ModelParams, StyTr, TransformerConfig};
use crate::patching::PatchSequence;
use crate::posenc::{attention_decomposition, cape, sinusoid_frequency, sinusoidal_pe, PeMode};
use crate::rng::{self, Stream};
use crate::samples::bundled_pair;
use crate::tensor::Tensor;
use crate::training::pair_losses;
use crate::weights::{model_file, model_from_file, WeightFile};

pub const GRAD_TOL: f64 = 1e-4;
pub const IDENTITY_TOL: f64 = 1e-9;
pub const EQUIVARIANCE_TOL: f64 = 1e-4;
/// Minimum deviation the CAPE content encoder must show under a permutation.
pub const COUNTEREXAMPLE_MIN: f64 = 1e-2;
pub const CAPE_POOL_TOL: f64 = 1e-6;
pub const CAPE_TOKEN_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed error, in the suite's own measure.
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    fn bounded(name: &'static str, max_error: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            passed: max_error < tolerance,
            max_error,
            tolerance,
            detail,
        }
    }
}

/// Runs every suite in a fixed order. `weights` replaces the in-memory
/// model of the serialization suite with a file on disk.
pub fn run_all(weights: Option<&Path>) -> Vec<SuiteResult> {
    vec![
        gradient_suite(),
        sinusoid_identity_suite(1000, 0),
        score_identity_suite(100, 0),
        permutation_suite(0),
        cape_grid_suite(0),
        serialization_suite(weights),
    ]
}

fn rand_tensor(s: &mut Stream, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(&rng::uniform_vec(s, n, lo, hi), shape).expect("shape")
}

/// Random values bounded away from zero, for kinked primitives.
fn away_from_zero(s: &mut Stream, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng::uniform(s, 0.1, 1.0);
            if rng::unit(s) < 0.5 { -m } else { m }
        })
        .collect();
    Tensor::from_f64(&v, shape).expect("shape")
}

type ScalarFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// A named scalar function with its evaluation point.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub f: ScalarFn,
    pub samples_per_input: Option<usize>,
}

fn case(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> GradCase {
    GradCase {
        name: name.into(),
        inputs,
        f: Box::new(f),
        samples_per_input: None,
    }
}

/// Contracts `out` against a fixed random tensor so every output element
/// contributes with a distinct weight.
fn probe(seed: u64) -> impl Fn(Tensor<f64>) -> Result<Tensor<f64>> + Clone {
    move |out: Tensor<f64>| {
        let r = rand_tensor(&mut rng::stream(seed), out.shape(), -1.0, 1.0);
        Ok(out.mul(&r)?.sum_all())
    }
}

/// One case per differentiable primitive.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut s = rng::stream(seed);
    let p = probe(seed ^ 0xABCD);
    let mut cases = Vec::new();
    macro_rules! push {
        ($name:expr, [$($input:expr),*], |$a:ident| $body:expr) => {{
            let p = p.clone();
            cases.push(case($name, vec![$($input),*], move |$a: &[Tensor<f64>]| p($body)));
        }};
    }
    let m23 = |s: &mut Stream| rand_tensor(s, &[2, 3], -1.0, 1.0);
    push!("add", [m23(&mut s), m23(&mut s)], |a| a[0].add(&a[1])?);
    push!("sub", [m23(&mut s), m23(&mut s)], |a| a[0].sub(&a[1])?);
    push!("mul", [m23(&mut s), m23(&mut s)], |a| a[0].mul(&a[1])?);
    push!("scale", [m23(&mut s)], |a| a[0].scale(-1.7));
    push!("add_scalar", [m23(&mut s)], |a| a[0].add_scalar(0.3));
    push!("add_row", [rand_tensor(&mut s, &[4, 3], -1.0, 1.0), rand_tensor(&mut s, &[3], -1.0, 1.0)], |a| a[0].add_row(&a[1])?);
    push!("relu", [away_from_zero(&mut s, &[3, 4])], |a| a[0].relu());
    push!("sqrt", [rand_tensor(&mut s, &[5], 0.2, 2.0)], |a| a[0].sqrt());
    push!("clamp", [rand_tensor(&mut s, &[2, 5], -0.9, 1.9)], |a| a[0].clamp(0.0, 1.0));
    push!("sum_all", [m23(&mut s)], |a| a[0].sum_all().scale(1.3));
    push!("mean_all", [m23(&mut s)], |a| a[0].mean_all().scale(1.3));
    push!("matmul", [rand_tensor(&mut s, &[3, 4], -1.0, 1.0), rand_tensor(&mut s, &[4, 2], -1.0, 1.0)], |a| a[0].matmul(&a[1])?);
    push!("transpose", [m23(&mut s)], |a| a[0].transpose()?);
    push!("reshape", [m23(&mut s)], |a| a[0].reshape(&[3, 2])?);
    push!("slice", [rand_tensor(&mut s, &[3, 5], -1.0, 1.0)], |a| a[0].slice(1, 1, 3)?);
    push!("concat", [m23(&mut s), rand_tensor(&mut s, &[2, 2], -1.0, 1.0)], |a| Tensor::concat(&[a[0].clone(), a[1].clone()], 1)?);
    push!("mean_axes", [rand_tensor(&mut s, &[2, 3, 4], -1.0, 1.0)], |a| a[0].mean_axes(&[1, 2])?);
    push!("var_axes", [rand_tensor(&mut s, &[2, 3, 4], -1.0, 1.0)], |a| a[0].var_axes(&[1, 2])?);
    push!("softmax", [rand_tensor(&mut s, &[3, 5], -2.0, 2.0)], |a| a[0].softmax_lastdim()?);
    push!(
        "layer_norm",
        [rand_tensor(&mut s, &[3, 6], -1.0, 1.0), rand_tensor(&mut s, &[6], 0.5, 1.5), rand_tensor(&mut s, &[6], -0.5, 0.5)],
        |a| a[0].layer_norm(&a[1], &a[2], 1e-5)?
    );
    push!(
        "conv2d_1x1",
        [rand_tensor(&mut s, &[3, 4, 5], -1.0, 1.0), rand_tensor(&mut s, &[2, 3], -1.0, 1.0), rand_tensor(&mut s, &[2], -1.0, 1.0)],
        |a| a[0].conv2d_1x1(&a[1], &a[2])?
    );
    push!(
        "conv2d_3x3",
        [rand_tensor(&mut s, &[2, 5, 4], -1.0, 1.0), rand_tensor(&mut s, &[3, 2, 3, 3], -1.0, 1.0), rand_tensor(&mut s, &[3], -1.0, 1.0)],
        |a| a[0].conv2d_3x3(&a[1], &a[2])?
    );
    push!("avgpool_adaptive", [rand_tensor(&mut s, &[2, 7, 5], -1.0, 1.0)], |a| a[0].avgpool_adaptive(3, 2)?);
    // distinct values keep every 2x2 block's maximum unique
    let distinct: Vec<f64> = rng::permutation(&mut s, 2 * 4 * 6).iter().map(|&i| i as f64 * 0.1).collect();
    push!("maxpool2x2", [Tensor::from_f64(&distinct, &[2, 4, 6]).expect("shape")], |a| a[0].maxpool2x2()?);
    push!("upsample_nearest_2x", [rand_tensor(&mut s, &[2, 3, 2], -1.0, 1.0)], |a| a[0].upsample_nearest_2x()?);
    push!("resize_bilinear", [rand_tensor(&mut s, &[2, 3, 4], -1.0, 1.0)], |a| a[0].resize_bilinear(5, 7)?);
    push!("patchify", [rand_tensor(&mut s, &[3, 4, 6], 0.0, 1.0)], |a| a[0].patchify(2)?);
    push!(
        "cape",
        [rand_tensor(&mut s, &[30, 4], -1.0, 1.0), rand_tensor(&mut s, &[4, 4], -1.0, 1.0), rand_tensor(&mut s, &[4], -0.5, 0.5)],
        |a| cape(&PatchSequence::new(a[0].clone(), (5, 6), 8)?, &a[1], &a[2], 3)?.encoding
    );
    cases
}

/// Every parameter of one toy layer as inputs, after the layer's activations.
fn layer_case(decoder: bool, seed: u64) -> GradCase {
    let config = TransformerConfig::toy();
    let heads = config.heads;
    let params = ModelParams::<f64>::init(&config, seed);
    let prefix = if decoder { "dec.0." } else { "enc_c.0." };
    let names: Vec<String> = params.names().filter(|n| n.starts_with(prefix)).map(str::to_owned).collect();
    let mut s = rng::stream(seed ^ 0x1A7E);
    let c = config.channels;
    let mut inputs = vec![rand_tensor(&mut s, &[6, c], -1.0, 1.0)];
    if decoder {
        inputs.push(rand_tensor(&mut s, &[5, c], -1.0, 1.0));
        inputs.push(rand_tensor(&mut s, &[6, c], -0.5, 0.5));
    }
    let lead = inputs.len();
    inputs.extend(names.iter().map(|n| params.get(n).expect("named").clone()));
    let p = probe(seed ^ 0x77);
    let label = if decoder { "decoder_layer" } else { "encoder_layer" };
    let mut gc = case(label, inputs, move |a| {
        let mut lp = ModelParams::new();
        for (n, t) in names.iter().zip(&a[lead..]) {
            lp.insert(n.clone(), t.clone());
        }
        let prefix = prefix.trim_end_matches('.');
        p(if decoder {
            decoder_layer(&a[0], &a[1], &a[2], &DecoderLayerParams::from_params(&lp, prefix, heads)?)?
        } else {
            encoder_layer(&a[0], &EncoderLayerParams::from_params(&lp, prefix, heads)?)?
        })
    });
    gc.samples_per_input = Some(12);
    gc
}

/// The weighted total loss at the toy configuration on the bundled 32x32
/// pair, as a function of every model parameter.
pub fn total_loss_case(seed: u64, samples_per_input: usize) -> GradCase {
    let config = TransformerConfig::toy();
    let params = ModelParams::<f64>::init(&config, seed);
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let inputs = params.iter().map(|(_, t)| t.clone()).collect();
    let extractor = FeatureExtractor::<f64>::builtin(seed, 4).expect("builtin");
    let (c, s) = bundled_pair();
    let (c, s) = (c.to_tensor::<f64>(), s.to_tensor::<f64>());
    let mut gc = case("total_loss", inputs, move |a| {
        let mut p = ModelParams::new();
        for (n, t) in names.iter().zip(a) {
            p.insert(n.clone(), t.clone());
        }
        let model = StyTr::new(config.clone(), p)?;
        Ok(pair_losses(&model, &extractor, &c, &s, &LossWeights::default(), &LossOptions::default())?.total)
    });
    gc.samples_per_input = Some(samples_per_input);
    gc
}

/// Content and style loss as functions of the output image.
pub fn image_loss_cases(seed: u64) -> Vec<GradCase> {
    let ex = FeatureExtractor::<f64>::builtin(seed, 3).expect("builtin");
    let mut s = rng::stream(seed ^ 0x10);
    let target = rand_tensor(&mut s, &[3, 16, 16], 0.0, 1.0);
    let out = rand_tensor(&mut s, &[3, 16, 16], 0.0, 1.0);
    let (ex2, t2) = (ex.clone(), target.clone());
    let mut cases = vec![
        case("content_loss(I_o)", vec![out.clone()], move |a| content_loss(&ex, &a[0], &target, &LossOptions::default())),
        case("style_loss(I_o)", vec![out], move |a| style_loss(&ex2, &a[0], &t2, &LossOptions::default())),
    ];
    for c in &mut cases {
        c.samples_per_input = Some(64);
    }
    cases
}

pub fn all_gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut cases = primitive_cases(seed);
    cases.push(layer_case(false, seed));
    cases.push(layer_case(true, seed));
    cases.extend(image_loss_cases(seed));
    cases.push(total_loss_case(seed, 3));
    cases
}

/// Worst relative error of one case.
pub fn run_case(c: &GradCase, seed: u64) -> Result<f64> {
    let opts = GradCheckOptions {
        samples_per_input: c.samples_per_input,
        seed,
        ..Default::default()
    };
    Ok(check_gradients(&c.f, &c.inputs, &opts)?.max_rel_error())
}

pub fn gradient_suite() -> SuiteResult {
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let cases = all_gradient_cases(0);
    for c in &cases {
        let err = run_case(c, 0).unwrap_or(f64::INFINITY);
        if err.is_nan() || err > worst {
            worst = err;
            worst_name = c.name.clone();
        }
    }
    SuiteResult::bounded(
        "gradients",
        worst,
        GRAD_TOL,
        format!("{} cases, worst {worst_name}", cases.len()),
    )
}

/// Sinusoidal dot products against `sum_k cos(w_k dx) + cos(w_k dy)` on a
/// 32x32 grid at d = 512, for `pairs` random pairs plus every zero offset.
pub fn sinusoid_identity_suite(pairs: usize, seed: u64) -> SuiteResult {
    let (g, d) = (32, 512);
    let pe = sinusoidal_pe::<f64>((g, g), d).expect("d divisible by 4");
    let tok = |i: usize| &pe.data()[i * d..(i + 1) * d];
    let dot = |i: usize, j: usize| tok(i).iter().zip(tok(j)).map(|(a, b)| a * b).sum::<f64>();
    let mut s = rng::stream(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let (i, j) = (rng::index(&mut s, g * g), rng::index(&mut s, g * g));
        let dx = (j % g) as f64 - (i % g) as f64;
        let dy = (j / g) as f64 - (i / g) as f64;
        let closed: f64 = (0..d / 4)
            .map(|k| {
                let w = sinusoid_frequency(k, d);
                (w * dx).cos() + (w * dy).cos()
            })
            .sum();
        worst = worst.max((dot(i, j) - closed).abs());
    }
    for i in 0..g * g {
        worst = worst.max((dot(i, i) - 256.0).abs());
    }
    SuiteResult::bounded("sinusoid_identity", worst, IDENTITY_TOL, format!("{pairs} pairs, d={d}, {g}x{g} grid"))
}

/// Direct attention score against the sum of its four expansion terms.
/// The error is relative to the largest magnitude among score and terms.
pub fn score_identity_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut s = rng::stream(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c = 2 + rng::index(&mut s, 15);
        let d = 1 + rng::index(&mut s, 8);
        let row = |s: &mut Stream| rand_tensor(s, &[1, c], -2.0, 2.0);
        let (ei, ej, pi, pj) = (row(&mut s), row(&mut s), row(&mut s), row(&mut s));
        let (wq, wk) = (rand_tensor(&mut s, &[c, d], -1.0, 1.0), rand_tensor(&mut s, &[c, d], -1.0, 1.0));
        let dec = attention_decomposition(&ei, &ej, &pi, &pj, &wq, &wk).expect("conforming");
        let score = dec.score.item();
        let sum = dec.term_sum().expect("scalars").item();
        let scale = dec.terms.iter().map(|t| t.item().abs()).fold(score.abs(), f64::max).max(f64::MIN_POSITIVE);
        worst = worst.max((score - sum).abs() / scale);
    }
    SuiteResult::bounded("score_identity", worst, IDENTITY_TOL, format!("{instances} random instances"))
}

/// Permutes the rows of `[L, C]` so that output row `i` is input row `perm[i]`.
pub fn permute_rows<T: crate::Real>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let c = t.shape()[1];
    let data = perm.iter().flat_map(|&src| t.data()[src * c..(src + 1) * c].iter().copied()).collect();
    Tensor::new(data, t.shape()).expect("same shape")
}

fn max_abs_diff<T: crate::Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of the style encoder from permutation equivariance on
/// 16 tokens over `trials` random permutations (f32).
pub fn style_equivariance_error(model: &StyTr<f32>, trials: usize, seed: u64) -> Result<f64> {
    let c = model.config().channels;
    let mut s = rng::stream(seed);
    let tokens = rand_tensor(&mut s, &[16, c], -1.0, 1.0).cast::<f32>();
    let base = model.encode_style(&PatchSequence::new(tokens.clone(), (4, 4), 8)?)?;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let perm = rng::permutation(&mut s, 16);
        let moved = model.encode_style(&PatchSequence::new(permute_rows(&tokens, &perm), (4, 4), 8)?)?;
        worst = worst.max(max_abs_diff(&moved, &permute_rows(&base, &perm)));
    }
    Ok(worst)
}

/// Deviation of the CAPE content encoder under a swap of two tokens that lie
/// in different pooling cells (4x4 grid pooled to 2x2).
pub fn content_counterexample_deviation(model: &StyTr<f32>, seed: u64) -> Result<f64> {
    let mut config = model.config().clone();
    config.cape_grid = 2;
    let model = StyTr::new(config, model.params().clone())?;
    let c = model.config().channels;
    let tokens = rand_tensor(&mut rng::stream(seed), &[16, c], -1.0, 1.0).cast::<f32>();
    let mut perm: Vec<usize> = (0..16).collect();
    perm.swap(0, 3);
    let encode = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
        let seq = PatchSequence::new(t.clone(), (4, 4), 8)?;
        model.encode_content(&seq.tokens, &model.positional(&seq, PeMode::Cape)?)
    };
    let moved = encode(&permute_rows(&tokens, &perm))?;
    Ok(max_abs_diff(&moved, &permute_rows(&encode(&tokens)?, &perm)))
}

pub fn permutation_suite(seed: u64) -> SuiteResult {
    let run = || -> Result<(f64, f64)> {
        let model = StyTr::<f32>::init(TransformerConfig::toy(), seed)?;
        Ok((style_equivariance_error(&model, 20, seed)?, content_counterexample_deviation(&model, seed)?))
    };
    match run() {
        Ok((eq, counter)) => SuiteResult {
            name: "permutation",
            passed: eq < EQUIVARIANCE_TOL && counter > COUNTEREXAMPLE_MIN,
            max_error: eq,
            tolerance: EQUIVARIANCE_TOL,
            detail: format!("style encoder equivariant; CAPE content encoder deviates by {counter:.3e}"),
        },
        Err(e) => failed("permutation", EQUIVARIANCE_TOL, e),
    }
}

/// Renders `blocks` (an `n x n x C` field, channel-last) on a `(n*k) x (n*k)`
/// grid, each block covering `k x k` tokens.
pub fn block_constant_tokens(blocks: &[f64], n: usize, c: usize, k: usize) -> Tensor<f64> {
    let side = n * k;
    let mut data = Vec::with_capacity(side * side * c);
    for r in 0..side {
        for col in 0..side {
            let b = (r / k) * n + col / k;
            data.extend_from_slice(&blocks[b * c..(b + 1) * c]);
        }
    }
    Tensor::new(data, &[side * side, c]).expect("shape")
}

/// Pooled-grid shape at several resolutions and the block-constant
/// comparison between 36x36 and 54x54 renderings at n = 18.
pub fn cape_grid_error(seed: u64) -> Result<(f64, f64)> {
    let (n, c) = (18, 8);
    let mut s = rng::stream(seed);
    let w = rand_tensor(&mut s, &[c, c], -0.6, 0.6);
    let b = rand_tensor(&mut s, &[c], -0.1, 0.1);
    for grid in [(18, 18), (36, 24), (54, 54)] {
        let seq = PatchSequence::new(rand_tensor(&mut s, &[grid.0 * grid.1, c], -1.0, 1.0), grid, 8)?;
        let field = cape(&seq, &w, &b, n)?;
        if field.pooled.shape() != [c, n, n] || field.encoding.shape() != [grid.0 * grid.1, c] {
            return Ok((f64::INFINITY, f64::INFINITY));
        }
    }
    let blocks = rng::uniform_vec(&mut s, n * n * c, -1.0, 1.0);
    let fields: Vec<_> = [2, 3]
        .iter()
        .map(|&k| cape(&PatchSequence::new(block_constant_tokens(&blocks, n, c, k), (n * k, n * k), 8)?, &w, &b, n))
        .collect::<Result<_>>()?;
    let pooled_err = max_abs_diff(&fields[0].pooled, &fields[1].pooled);
    // 0 and 1 are the only normalized coordinates shared by spans 35 and 53
    let mut token_err = 0.0f64;
    for (r, col) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let a = (r * 35) * 36 + col * 35;
        let bidx = (r * 53) * 54 + col * 53;
        for ch in 0..c {
            token_err = token_err.max((fields[0].encoding.data()[a * c + ch] - fields[1].encoding.data()[bidx * c + ch]).abs());
        }
    }
    Ok((pooled_err, token_err))
}

pub fn cape_grid_suite(seed: u64) -> SuiteResult {
    match cape_grid_error(seed) {
        Ok((pooled, token)) => SuiteResult {
            name: "cape_grid",
            passed: pooled < CAPE_POOL_TOL && token < CAPE_TOKEN_TOL,
            max_error: pooled.max(token),
            tolerance: CAPE_POOL_TOL,
            detail: format!("pooled grids differ by {pooled:.1e}, shared tokens by {token:.1e}"),
        },
        Err(e) => failed("cape_grid", CAPE_POOL_TOL, e),
    }
}

fn failed(name: &'static str, tolerance: f64, e: crate::Error) -> SuiteResult {
    SuiteResult {
        name,
        passed: false,
        max_error: f64::INFINITY,
        tolerance,
        detail: e.to_string(),
    }
}

/// Bitwise re-encode of a weight file and single-byte corruption detection.
/// Without `path` a fresh toy model is used.
pub fn serialization_suite(path: Option<&Path>) -> SuiteResult {
    let run = || -> Result<(bool, usize, usize)> {
        let bytes = match path {
            Some(p) => std::fs::read(p).map_err(|e| crate::Error::io(p, e))?,
            None => {
                let config = TransformerConfig::toy();
                model_file(&ModelParams::<f32>::init(&config, 0), &config).encode()?
            }
        };
        let file = WeightFile::decode(&bytes)?;
        let (params, config) = model_from_file::<f32>(&file)?;
        let again = model_file(&params, &config).encode()?;
        let bitwise = again == bytes;
        let mut s = rng::stream(0);
        let trials = 256.min(bytes.len());
        let mut caught = 0;
        for _ in 0..trials {
            let mut b = bytes.clone();
            let i = rng::index(&mut s, b.len());
            b[i] ^= 1 << rng::index(&mut s, 8);
            if WeightFile::decode(&b).is_err() {
                caught += 1;
            }
        }
        Ok((bitwise, caught, trials))
    };
    match run() {
        Ok((bitwise, caught, trials)) => SuiteResult {
            name: "serialization",
            passed: bitwise && caught == trials,
            max_error: if bitwise { (trials - caught) as f64 } else { f64::INFINITY },
            tolerance: 1.0,
            detail: format!("round trip bitwise: {bitwise}; {caught}/{trials} corruptions detected"),
        },
        Err(e) => failed("serialization", 1.0, e),
    }
}
