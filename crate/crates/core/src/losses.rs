//! Perceptual content/style losses, identity losses and the weighted objective,
//! computed over a frozen convolutional feature extractor.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;
use crate::weights::{StoredTensor, WeightFile};

/// Variance floor inside the square root of the per-channel deviation.
pub const STD_EPS: f64 = 1e-5;

/// Channel widths of the built-in extractor stages.
pub const BUILTIN_CHANNELS: [usize; 4] = [16, 32, 48, 64];

#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    /// Weight `[C_out, C_in, 3, 3]`, zero padding 1.
    Conv3x3 { weight: Tensor<T>, bias: Tensor<T> },
    /// Weight `[C_out, C_in]`.
    Conv1x1 { weight: Tensor<T>, bias: Tensor<T> },
    Relu,
    /// 2x2 average downsampling.
    AvgPool2,
    /// 2x2 max pooling, stride 2.
    MaxPool2,
}

impl<T: Real> Layer<T> {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv3x3 { weight, bias } => x.conv2d_3x3(weight, bias),
            Layer::Conv1x1 { weight, bias } => x.conv2d_1x1(weight, bias),
            Layer::Relu => Ok(x.relu()),
            Layer::AvgPool2 => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                x.avgpool_adaptive(h / 2, w / 2)
            }
            Layer::MaxPool2 => x.maxpool2x2(),
        }
    }

    pub fn op_name(&self) -> &'static str {
        match self {
            Layer::Conv3x3 { .. } => "conv3x3",
            Layer::Conv1x1 { .. } => "conv1x1",
            Layer::Relu => "relu",
            Layer::AvgPool2 => "avgpool2",
            Layer::MaxPool2 => "maxpool2",
        }
    }

    /// `(C_in, C_out)` for convolutions.
    fn channels(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Conv3x3 { weight, .. } | Layer::Conv1x1 { weight, .. } => {
                Some((weight.shape()[1], weight.shape()[0]))
            }
            _ => None,
        }
    }
}

/// Frozen feature stages. `extract` returns the output of every stage; each
/// stage consumes the previous stage's output. The available layers never
/// enlarge the spatial extent, so stage outputs are non-increasing in size.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T: Real> {
    stages: Vec<Vec<Layer<T>>>,
}

impl<T: Real> FeatureExtractor<T> {
    /// Validates stage count (at least 2), conv shapes and the channel chain from RGB.
    pub fn new(stages: Vec<Vec<Layer<T>>>) -> Result<Self> {
        if stages.len() < 2 {
            return Err(Error::Config(format!(
                "feature extractor needs at least 2 stages, got {}",
                stages.len()
            )));
        }
        let mut channels = 3;
        for (s, stage) in stages.iter().enumerate() {
            if stage.is_empty() {
                return Err(Error::Config(format!("extractor stage {s} is empty")));
            }
            for layer in stage {
                let (weight, bias) = match layer {
                    Layer::Conv3x3 { weight, bias } | Layer::Conv1x1 { weight, bias } => (weight, bias),
                    _ => continue,
                };
                let kernel_ok = match layer {
                    Layer::Conv3x3 { .. } => weight.ndim() == 4 && weight.shape()[2..] == [3, 3],
                    _ => weight.ndim() == 2,
                };
                let (cin, cout) = layer.channels().expect("conv layer");
                if !kernel_ok || cin != channels || bias.shape() != [cout] {
                    return Err(Error::Config(format!(
                        "extractor stage {s}: {} weight {:?} / bias {:?} does not follow {channels} input channels",
                        layer.op_name(),
                        weight.shape(),
                        bias.shape()
                    )));
                }
                channels = cout;
            }
        }
        Ok(Self { stages })
    }

    /// Small deterministic CNN: `stages` rounds of (3x3 conv, ReLU, 2x average
    /// downsample) with widths 16, 32, 48, 64 (then +16 per extra stage).
    /// Weights are uniform Xavier draws from the seeded stream, biases zero.
    pub fn builtin(seed: u64, stages: usize) -> Result<Self> {
        let mut stream = rng::stream(seed);
        let mut cin = 3;
        let mut out = Vec::with_capacity(stages);
        for s in 0..stages {
            let cout = BUILTIN_CHANNELS.get(s).copied().unwrap_or(16 * (s + 1));
            let limit = (6.0 / ((cin + cout) * 9) as f64).sqrt();
            let weight = Tensor::from_f64(
                &rng::uniform_vec(&mut stream, cout * cin * 9, -limit, limit),
                &[cout, cin, 3, 3],
            )?;
            out.push(vec![
                Layer::Conv3x3 {
                    weight,
                    bias: Tensor::zeros(&[cout]),
                },
                Layer::Relu,
                Layer::AvgPool2,
            ]);
            cin = cout;
        }
        Self::new(out)
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[Vec<Layer<T>>] {
        &self.stages
    }

    /// Stage outputs for a `[3, H, W]` image.
    pub fn extract(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut x = image.clone();
        let mut feats = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for layer in stage {
                x = layer.apply(&x)?;
            }
            feats.push(x.clone());
        }
        Ok(feats)
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractor<U> {
        let stages = self
            .stages
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|l| match l {
                        Layer::Conv3x3 { weight, bias } => Layer::Conv3x3 {
                            weight: weight.cast(),
                            bias: bias.cast(),
                        },
                        Layer::Conv1x1 { weight, bias } => Layer::Conv1x1 {
                            weight: weight.cast(),
                            bias: bias.cast(),
                        },
                        Layer::Relu => Layer::Relu,
                        Layer::AvgPool2 => Layer::AvgPool2,
                        Layer::MaxPool2 => Layer::MaxPool2,
                    })
                    .collect()
            })
            .collect();
        FeatureExtractor { stages }
    }
}

/// Layer program of an extractor: stages separated by `;`, layers by `,`,
/// e.g. `conv3x3,relu,avgpool2;conv3x3,relu,maxpool2`.
pub fn extractor_program<T: Real>(ex: &FeatureExtractor<T>) -> String {
    ex.stages
        .iter()
        .map(|s| s.iter().map(Layer::op_name).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

/// Weight file holding an extractor: conv tensors `stage{s}.{l}.weight|bias`
/// plus `kind=extractor`, `stages` and `program` records.
pub fn extractor_file<T: Real>(ex: &FeatureExtractor<T>) -> WeightFile {
    let mut tensors = Vec::new();
    for (s, stage) in ex.stages.iter().enumerate() {
        for (l, layer) in stage.iter().enumerate() {
            if let Layer::Conv3x3 { weight, bias } | Layer::Conv1x1 { weight, bias } = layer {
                tensors.push(StoredTensor::from_tensor(format!("stage{s}.{l}.weight"), weight));
                tensors.push(StoredTensor::from_tensor(format!("stage{s}.{l}.bias"), bias));
            }
        }
    }
    WeightFile {
        tensors,
        metadata: vec![
            ("kind".into(), "extractor".into()),
            ("stages".into(), ex.num_stages().to_string()),
            ("program".into(), extractor_program(ex)),
        ],
    }
}

pub fn extractor_from_file<T: Real>(file: &WeightFile) -> Result<FeatureExtractor<T>> {
    let meta = |k: &str| file.meta(k).ok_or_else(|| Error::load(None, format!("missing `{k}` record")));
    if meta("kind")? != "extractor" {
        return Err(Error::load(None, format!("expected an extractor file, found kind `{}`", meta("kind")?)));
    }
    let declared: usize = meta("stages")?
        .parse()
        .map_err(|_| Error::load(None, "`stages` record is not a number"))?;
    let program = meta("program")?;
    let mut stages = Vec::new();
    for (s, text) in program.split(';').enumerate() {
        let mut stage = Vec::new();
        for (l, op) in text.split(',').enumerate() {
            let conv = |kind: &str| -> Result<(Tensor<T>, Tensor<T>)> {
                let w = file.tensor(&format!("stage{s}.{l}.weight"))?.to_tensor()?;
                let b = file.tensor(&format!("stage{s}.{l}.bias"))?.to_tensor()?;
                let expect = if kind == "conv3x3" { 4 } else { 2 };
                if w.ndim() != expect {
                    return Err(Error::load(Some(&format!("stage{s}.{l}.weight")), format!("{kind} weight must be {expect}-D")));
                }
                Ok((w, b))
            };
            stage.push(match op.trim() {
                "conv3x3" => {
                    let (weight, bias) = conv("conv3x3")?;
                    Layer::Conv3x3 { weight, bias }
                }
                "conv1x1" => {
                    let (weight, bias) = conv("conv1x1")?;
                    Layer::Conv1x1 { weight, bias }
                }
                "relu" => Layer::Relu,
                "avgpool2" => Layer::AvgPool2,
                "maxpool2" => Layer::MaxPool2,
                other => return Err(Error::load(None, format!("unknown extractor layer `{other}`"))),
            });
        }
        stages.push(stage);
    }
    if stages.len() != declared {
        return Err(Error::load(
            None,
            format!("`stages` record says {declared} but the program has {}", stages.len()),
        ));
    }
    FeatureExtractor::new(stages).map_err(|e| Error::load(None, e.to_string()))
}

pub fn save_extractor<T: Real>(path: &Path, ex: &FeatureExtractor<T>) -> Result<()> {
    extractor_file(ex).write(path)
}

pub fn load_extractor<T: Real>(path: &Path) -> Result<FeatureExtractor<T>> {
    extractor_from_file(&WeightFile::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub identity_pixel: f64,
    pub identity_feature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content: 10.0,
            style: 7.0,
            identity_pixel: 50.0,
            identity_feature: 1.0,
        }
    }
}

/// Per-channel spread used in the style statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// `sqrt(var + STD_EPS)`
    #[default]
    Std,
    Variance,
}

impl FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std" => Ok(SigmaMode::Std),
            "variance" => Ok(SigmaMode::Variance),
            other => Err(Error::Config(format!("sigma must be std or variance, got `{other}`"))),
        }
    }
}

impl fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaMode::Std => "std",
            SigmaMode::Variance => "variance",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossOptions {
    /// Plain Euclidean distances instead of dividing by `sqrt(numel)`.
    pub raw_norms: bool,
    pub sigma: SigmaMode,
}

/// `||a - b||_2`, divided by `sqrt(numel)` unless `raw` is set.
pub fn distance<T: Real>(a: &Tensor<T>, b: &Tensor<T>, raw: bool) -> Result<Tensor<T>> {
    let d = a.sub(b)?;
    let sq = d.mul(&d)?;
    Ok(if raw { sq.sum_all() } else { sq.mean_all() }.sqrt())
}

/// Per-channel mean and spread of a `[C, H, W]` map.
pub fn channel_stats<T: Real>(feat: &Tensor<T>, sigma: SigmaMode) -> Result<(Tensor<T>, Tensor<T>)> {
    let mu = feat.mean_axes(&[1, 2])?;
    let var = feat.var_axes(&[1, 2])?;
    let spread = match sigma {
        SigmaMode::Std => var.add_scalar(T::lit(STD_EPS)).sqrt(),
        SigmaMode::Variance => var,
    };
    Ok((mu, spread))
}

fn mean_of<T: Real>(terms: Vec<Tensor<T>>) -> Result<Tensor<T>> {
    let n = T::lit(terms.len() as f64);
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| Error::shape("loss", "no stages"))?;
    Ok(it.try_fold(first, |acc, t| acc.add(&t))?.scale(T::one() / n))
}

fn check_stage_count<T: Real>(a: &[Tensor<T>], b: &[Tensor<T>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("loss", format!("{} vs {} feature stages", a.len(), b.len())));
    }
    Ok(())
}

/// Mean over stages of the feature distance.
pub fn content_loss_from_features<T: Real>(
    out: &[Tensor<T>],
    target: &[Tensor<T>],
    opts: &LossOptions,
) -> Result<Tensor<T>> {
    check_stage_count(out, target)?;
    mean_of(
        out.iter()
            .zip(target)
            .map(|(a, b)| distance(a, b, opts.raw_norms))
            .collect::<Result<_>>()?,
    )
}

/// Mean over stages of the distances between channel means plus channel spreads.
pub fn style_loss_from_features<T: Real>(
    out: &[Tensor<T>],
    style: &[Tensor<T>],
    opts: &LossOptions,
) -> Result<Tensor<T>> {
    check_stage_count(out, style)?;
    let mut terms = Vec::with_capacity(out.len());
    for (a, b) in out.iter().zip(style) {
        let (mu_a, sd_a) = channel_stats(a, opts.sigma)?;
        let (mu_b, sd_b) = channel_stats(b, opts.sigma)?;
        terms.push(distance(&mu_a, &mu_b, opts.raw_norms)?.add(&distance(&sd_a, &sd_b, opts.raw_norms)?)?);
    }
    mean_of(terms)
}

pub fn content_loss<T: Real>(
    extractor: &FeatureExtractor<T>,
    output: &Tensor<T>,
    content: &Tensor<T>,
    opts: &LossOptions,
) -> Result<Tensor<T>> {
    if output.shape() != content.shape() {
        return Err(Error::shape(
            "content_loss",
            format!("output {:?} vs content {:?}", output.shape(), content.shape()),
        ));
    }
    content_loss_from_features(&extractor.extract(output)?, &extractor.extract(content)?, opts)
}

pub fn style_loss<T: Real>(
    extractor: &FeatureExtractor<T>,
    output: &Tensor<T>,
    style: &Tensor<T>,
    opts: &LossOptions,
) -> Result<Tensor<T>> {
    style_loss_from_features(&extractor.extract(output)?, &extractor.extract(style)?, opts)
}

/// Pixel-level and feature-level identity losses `(L_id1, L_id2)` for
/// `i_cc = G(i_c, i_c)` and `i_ss = G(i_s, i_s)`.
pub fn identity_losses<T: Real>(
    extractor: &FeatureExtractor<T>,
    i_c: &Tensor<T>,
    i_s: &Tensor<T>,
    i_cc: &Tensor<T>,
    i_ss: &Tensor<T>,
    opts: &LossOptions,
) -> Result<(Tensor<T>, Tensor<T>)> {
    identity_losses_from_features(
        i_c,
        i_s,
        i_cc,
        i_ss,
        &extractor.extract(i_c)?,
        &extractor.extract(i_s)?,
        &extractor.extract(i_cc)?,
        &extractor.extract(i_ss)?,
        opts,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn identity_losses_from_features<T: Real>(
    i_c: &Tensor<T>,
    i_s: &Tensor<T>,
    i_cc: &Tensor<T>,
    i_ss: &Tensor<T>,
    f_c: &[Tensor<T>],
    f_s: &[Tensor<T>],
    f_cc: &[Tensor<T>],
    f_ss: &[Tensor<T>],
    opts: &LossOptions,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let raw = opts.raw_norms;
    let id1 = distance(i_cc, i_c, raw)?.add(&distance(i_ss, i_s, raw)?)?;
    check_stage_count(f_cc, f_c)?;
    check_stage_count(f_ss, f_s)?;
    let mut terms = Vec::with_capacity(f_c.len());
    for i in 0..f_c.len() {
        terms.push(distance(&f_cc[i], &f_c[i], raw)?.add(&distance(&f_ss[i], &f_s[i], raw)?)?);
    }
    Ok((id1, mean_of(terms)?))
}

/// The four loss terms and their weighted sum, still attached to the graph.
#[derive(Debug, Clone)]
pub struct LossTerms<T: Real> {
    pub content: Tensor<T>,
    pub style: Tensor<T>,
    pub identity_pixel: Tensor<T>,
    pub identity_feature: Tensor<T>,
    pub total: Tensor<T>,
}

impl<T: Real> LossTerms<T> {
    pub fn combine(
        content: Tensor<T>,
        style: Tensor<T>,
        identity_pixel: Tensor<T>,
        identity_feature: Tensor<T>,
        w: &LossWeights,
    ) -> Result<Self> {
        let total = content
            .scale(T::lit(w.content))
            .add(&style.scale(T::lit(w.style)))?
            .add(&identity_pixel.scale(T::lit(w.identity_pixel)))?
            .add(&identity_feature.scale(T::lit(w.identity_feature)))?;
        Ok(Self {
            content,
            style,
            identity_pixel,
            identity_feature,
            total,
        })
    }

    pub fn report(&self) -> LossReport {
        LossReport {
            content: self.content.item().as_f64(),
            style: self.style.item().as_f64(),
            identity_pixel: self.identity_pixel.item().as_f64(),
            identity_feature: self.identity_feature.item().as_f64(),
            total: self.total.item().as_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub content: f64,
    pub style: f64,
    pub identity_pixel: f64,
    pub identity_feature: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.content, self.style, self.identity_pixel, self.identity_feature, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Weighted sum of the four terms.
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.content * self.content
            + w.style * self.style
            + w.identity_pixel * self.identity_pixel
            + w.identity_feature * self.identity_feature
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_f64(&rng::uniform_vec(&mut rng::stream(seed), 3 * h * w, 0.0, 1.0), &[3, h, w]).unwrap()
    }

    /// Two stages of 1x1 identity convolutions on RGB.
    fn identity_extractor() -> FeatureExtractor<f64> {
        let eye = Tensor::from_f64(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]).unwrap();
        let stage = || {
            vec![Layer::Conv1x1 {
                weight: eye.clone(),
                bias: Tensor::zeros(&[3]),
            }]
        };
        FeatureExtractor::new(vec![stage(), stage()]).unwrap()
    }

    fn one_by_one_extractor(seed: u64) -> FeatureExtractor<f64> {
        let mut s = rng::stream(seed);
        let w1 = Tensor::from_f64(&rng::uniform_vec(&mut s, 5 * 3, -1.0, 1.0), &[5, 3]).unwrap();
        let w2 = Tensor::from_f64(&rng::uniform_vec(&mut s, 4 * 5, -1.0, 1.0), &[4, 5]).unwrap();
        FeatureExtractor::new(vec![
            vec![Layer::Conv1x1 { weight: w1, bias: Tensor::zeros(&[5]) }, Layer::Relu],
            vec![Layer::Conv1x1 { weight: w2, bias: Tensor::full(&[4], 0.1) }],
        ])
        .unwrap()
    }

    #[test]
    fn extractor_needs_two_stages_and_consistent_channels() {
        let ex = FeatureExtractor::<f64>::builtin(1, 4).unwrap();
        assert_eq!(ex.num_stages(), 4);
        assert!(FeatureExtractor::<f64>::builtin(1, 1).is_err());
        let bad = vec![
            vec![Layer::Conv1x1 { weight: Tensor::<f64>::zeros(&[4, 2]), bias: Tensor::zeros(&[4]) }],
            vec![Layer::Relu],
        ];
        assert!(FeatureExtractor::new(bad).is_err());
    }

    #[test]
    fn builtin_stage_sizes_halve_and_are_deterministic() {
        let a = FeatureExtractor::<f32>::builtin(42, 4).unwrap();
        let b = FeatureExtractor::<f32>::builtin(42, 4).unwrap();
        let x = img(3, 32, 32).cast::<f32>();
        let fa = a.extract(&x).unwrap();
        let fb = b.extract(&x).unwrap();
        let sizes: Vec<_> = fa.iter().map(|f| f.shape().to_vec()).collect();
        assert_eq!(sizes, vec![vec![16, 16, 16], vec![32, 8, 8], vec![48, 4, 4], vec![64, 2, 2]]);
        for (p, q) in fa.iter().zip(&fb) {
            assert_eq!(p.data(), q.data());
        }
    }

    #[test]
    fn builtin_distinguishes_images() {
        let ex = FeatureExtractor::<f64>::builtin(5, 4).unwrap();
        for seed in 0..5 {
            let a = ex.extract(&img(seed, 16, 16)).unwrap();
            let b = ex.extract(&img(seed + 100, 16, 16)).unwrap();
            let diff = distance(&a[0], &b[0], false).unwrap().item();
            assert!(diff > 1e-3, "stage-1 features too close: {diff}");
        }
    }

    #[test]
    fn identical_inputs_give_zero_losses() {
        let ex = FeatureExtractor::<f64>::builtin(5, 3).unwrap();
        let opts = LossOptions::default();
        let (c, s) = (img(1, 16, 16), img(2, 16, 16));
        assert_eq!(content_loss(&ex, &c, &c, &opts).unwrap().item(), 0.0);
        assert_eq!(style_loss(&ex, &s, &s, &opts).unwrap().item(), 0.0);
        let (id1, id2) = identity_losses(&ex, &c, &s, &c, &s, &opts).unwrap();
        assert_eq!((id1.item(), id2.item()), (0.0, 0.0));
    }

    #[test]
    fn losses_are_nonnegative_on_random_pairs() {
        let ex = FeatureExtractor::<f64>::builtin(5, 3).unwrap();
        for opts in [LossOptions::default(), LossOptions { raw_norms: true, sigma: SigmaMode::Variance }] {
            for seed in 0..4 {
                let (a, b) = (img(seed, 8, 8), img(seed + 50, 8, 8));
                assert!(content_loss(&ex, &a, &b, &opts).unwrap().item() > 0.0);
                assert!(style_loss(&ex, &a, &b, &opts).unwrap().item() > 0.0);
            }
        }
    }

    #[test]
    fn content_loss_hand_value_on_identity_stages() {
        // 2x2 image; identity stages make every stage distance the RMS pixel
        // difference. Output differs from content by +0.5 on one of 12 values
        // and -0.25 on another: RMS = sqrt((0.25 + 0.0625) / 12).
        let c = Tensor::<f64>::from_f64(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.0, 0.1, 0.2], &[3, 2, 2]).unwrap();
        let mut o = c.data().to_vec();
        o[0] += 0.5;
        o[7] -= 0.25;
        let o = Tensor::new(o, &[3, 2, 2]).unwrap();
        let ex = identity_extractor();
        let got = content_loss(&ex, &o, &c, &LossOptions::default()).unwrap().item();
        let expect = (0.3125f64 / 12.0).sqrt();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        let raw = content_loss(&ex, &o, &c, &LossOptions { raw_norms: true, ..Default::default() }).unwrap().item();
        assert!((raw - 0.3125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identity_losses_hand_value_on_single_pixels() {
        let ex = identity_extractor();
        let px = |v: [f64; 3]| Tensor::<f64>::from_f64(&v, &[3, 1, 1]).unwrap();
        let (ic, is) = (px([0.2, 0.4, 0.6]), px([1.0, 0.0, 0.5]));
        let (icc, iss) = (px([0.2, 0.4, 0.9]), px([0.6, 0.0, 0.5]));
        // |icc - ic| = 0.3 on one channel, |iss - is| = 0.4 on one channel
        let id1_expect = (0.09f64 / 3.0).sqrt() + (0.16f64 / 3.0).sqrt();
        let (id1, id2) = identity_losses(&ex, &ic, &is, &icc, &iss, &LossOptions::default()).unwrap();
        assert!((id1.item() - id1_expect).abs() < 1e-15);
        // identity stages: feature term equals the pixel term
        assert!((id2.item() - id1_expect).abs() < 1e-15);
        // swapping the content and style pairs leaves both sums unchanged
        let (s1, s2) = identity_losses(&ex, &is, &ic, &iss, &icc, &LossOptions::default()).unwrap();
        assert!((s1.item() - id1.item()).abs() < 1e-15);
        assert!((s2.item() - id2.item()).abs() < 1e-15);
    }

    #[test]
    fn style_loss_ignores_spatial_shuffles_under_pointwise_extractor() {
        let ex = one_by_one_extractor(9);
        let opts = LossOptions::default();
        let s = img(4, 6, 6);
        let perm = rng::permutation(&mut rng::stream(77), 36);
        let mut shuffled = vec![0.0; 3 * 36];
        for c in 0..3 {
            for (dst, &src) in perm.iter().enumerate() {
                shuffled[c * 36 + dst] = s.data()[c * 36 + src];
            }
        }
        let o = Tensor::new(shuffled, &[3, 6, 6]).unwrap();
        assert!(style_loss(&ex, &o, &s, &opts).unwrap().item() < 1e-12);
        // content loss sees the shuffle
        assert!(content_loss(&ex, &o, &s, &opts).unwrap().item() > 1e-2);
    }

    #[test]
    fn style_loss_matches_two_pass_statistics() {
        let ex = one_by_one_extractor(3);
        let (o, s) = (img(10, 5, 7), img(11, 4, 4));
        let fo = ex.extract(&o).unwrap();
        let fs = ex.extract(&s).unwrap();
        // independent two-pass mean / std
        let stats = |f: &Tensor<f64>| -> (Vec<f64>, Vec<f64>) {
            let (c, hw) = (f.shape()[0], f.shape()[1] * f.shape()[2]);
            let mut mu = vec![0.0; c];
            let mut sd = vec![0.0; c];
            for ch in 0..c {
                let plane = &f.data()[ch * hw..(ch + 1) * hw];
                mu[ch] = plane.iter().sum::<f64>() / hw as f64;
                let var = plane.iter().map(|v| (v - mu[ch]).powi(2)).sum::<f64>() / hw as f64;
                sd[ch] = (var + STD_EPS).sqrt();
            }
            (mu, sd)
        };
        let rms = |a: &[f64], b: &[f64]| -> f64 {
            (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
        };
        let mut expect = 0.0;
        for (a, b) in fo.iter().zip(&fs) {
            let (ma, sa) = stats(a);
            let (mb, sb) = stats(b);
            expect += rms(&ma, &mb) + rms(&sa, &sb);
        }
        expect /= 2.0;
        let got = style_loss(&ex, &o, &s, &LossOptions::default()).unwrap().item();
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn extractor_file_round_trip() {
        let ex = FeatureExtractor::<f32>::builtin(8, 4).unwrap();
        let back: FeatureExtractor<f32> =
            extractor_from_file(&WeightFile::decode(&extractor_file(&ex).encode().unwrap()).unwrap()).unwrap();
        assert_eq!(back.num_stages(), 4);
        let x = img(1, 16, 16).cast::<f32>();
        for (a, b) in ex.extract(&x).unwrap().iter().zip(back.extract(&x).unwrap()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn extractor_file_errors() {
        let ex = FeatureExtractor::<f32>::builtin(8, 3).unwrap();
        let mut f = extractor_file(&ex);
        f.tensors.retain(|t| t.name != "stage1.0.bias");
        let err = extractor_from_file::<f32>(&f).unwrap_err();
        assert!(err.to_string().contains("stage1.0.bias"), "{err}");

        let mut f = extractor_file(&ex);
        f.metadata[1].1 = "2".into();
        assert!(extractor_from_file::<f32>(&f).is_err());
    }

    #[test]
    fn extractor_program_with_maxpool_and_declared_stages() {
        let mut s = rng::stream(2);
        let w = Tensor::<f64>::from_f64(&rng::uniform_vec(&mut s, 4 * 3 * 9, -0.3, 0.3), &[4, 3, 3, 3]).unwrap();
        let ex = FeatureExtractor::new(vec![
            vec![Layer::Conv3x3 { weight: w, bias: Tensor::zeros(&[4]) }, Layer::Relu],
            vec![Layer::MaxPool2],
            vec![Layer::AvgPool2],
        ])
        .unwrap();
        assert_eq!(extractor_program(&ex), "conv3x3,relu;maxpool2;avgpool2");
        let back: FeatureExtractor<f64> = extractor_from_file(&extractor_file(&ex)).unwrap();
        assert_eq!(back.num_stages(), 3);
        let sizes: Vec<_> = back.extract(&img(3, 8, 8)).unwrap().iter().map(|f| f.shape().to_vec()).collect();
        assert_eq!(sizes, vec![vec![4, 8, 8], vec![4, 4, 4], vec![4, 2, 2]]);
    }

    #[test]
    fn content_loss_rejects_mismatched_sizes() {
        let ex = identity_extractor();
        assert!(content_loss(&ex, &img(1, 4, 4), &img(2, 4, 6), &LossOptions::default()).is_err());
    }

    #[test]
    fn total_is_weighted_sum() {
        let one = || Tensor::<f64>::scalar(1.0);
        let t = LossTerms::combine(one(), one(), one(), one(), &LossWeights::default()).unwrap();
        assert_eq!(t.total.item(), 68.0);
        let zero_w = LossWeights { content: 0.0, style: 0.0, identity_pixel: 0.0, identity_feature: 0.0 };
        let t = LossTerms::combine(one(), one(), one(), one(), &zero_w).unwrap();
        assert_eq!(t.total.item(), 0.0);
        let r = LossTerms::combine(
            Tensor::scalar(0.5),
            Tensor::scalar(0.25),
            Tensor::scalar(0.125),
            Tensor::scalar(2.0),
            &LossWeights::default(),
        )
        .unwrap()
        .report();
        assert_eq!(r.total, r.weighted(&LossWeights::default()));
    }
}
