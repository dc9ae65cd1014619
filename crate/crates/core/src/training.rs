//! Adam with linear warm-up, the per-batch training step, deterministic
//! crop sampling and the training loop.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::{
    content_loss_from_features, identity_losses_from_features, style_loss_from_features, FeatureExtractor,
    LossOptions, LossReport, LossTerms, LossWeights,
};
use crate::model::{ModelParams, StyTr};
use crate::patching::read_ppm;
use crate::patching::ImageBuffer;
use crate::real::Real;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use crate::weights::save_weights;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const BASE_LR: f64 = 0.0005;

/// Stream offset separating data sampling from weight initialization.
const DATA_STREAM: u64 = 0x5EED_DA7A_5EED_DA7A;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iters: usize,
    /// Side of the square training crops.
    pub crop: usize,
    pub seed: u64,
    pub base_lr: f64,
    /// `None` means `max(total_iters / 100, 100)`.
    pub warmup_steps: Option<usize>,
    /// Global gradient norm cap; off by default.
    pub clip_norm: Option<f64>,
    /// Write an intermediate checkpoint every this many steps (0 = only at the end).
    pub ckpt_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            total_iters: 200,
            crop: 32,
            seed: 0,
            base_lr: BASE_LR,
            warmup_steps: None,
            clip_norm: None,
            ckpt_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_steps.unwrap_or((self.total_iters / 100).max(100))
    }
}

/// `base_lr * min(t / warmup, 1)`; `warmup = 0` disables the ramp.
pub fn lr_schedule(t: usize, base_lr: f64, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        return base_lr;
    }
    base_lr * (t as f64 / warmup_steps as f64).min(1.0)
}

/// First and second moment estimates for every parameter, in parameter order.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub clip_norm: Option<f64>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>, base_lr: f64, warmup_steps: usize) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            base_lr,
            warmup_steps,
            clip_norm: None,
        }
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(self.t.max(1), self.base_lr, self.warmup_steps)
    }
}

/// One bias-corrected Adam update. `grads` follow the parameter order.
/// A non-finite gradient aborts before anything is changed.
/// Returns the updated parameters and the learning rate used.
pub fn adam_step<T: Real>(
    params: &ModelParams<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
) -> Result<(ModelParams<T>, f64)> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    let mut sq = 0.0;
    for ((name, p), g) in params.iter().zip(grads) {
        if g.len() != p.numel() {
            return Err(Error::shape("adam_step", format!("gradient for `{name}` has {} values", g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_owned()));
        }
        sq += g.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
    }
    let scale = match state.clip_norm {
        Some(c) if sq.sqrt() > c => T::lit(c / sq.sqrt()),
        _ => T::one(),
    };

    state.t += 1;
    let t = state.t as i32;
    let lr = lr_schedule(state.t, state.base_lr, state.warmup_steps);
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr_t, eps) = (T::lit(lr), T::lit(ADAM_EPS));

    let mut out = ModelParams::new();
    for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data: Vec<T> = p
            .data()
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                let g = g[j] * scale;
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                w - lr_t * m_hat / (v_hat.sqrt() + eps)
            })
            .collect();
        out.insert(name, Tensor::new(data, p.shape())?);
    }
    Ok((out, lr))
}

/// Loss terms for one content/style pair with the model's configured encodings.
pub fn pair_losses<T: Real>(
    model: &StyTr<T>,
    extractor: &FeatureExtractor<T>,
    content: &Tensor<T>,
    style: &Tensor<T>,
    weights: &LossWeights,
    opts: &LossOptions,
) -> Result<LossTerms<T>> {
    let i_o = model.stylize(content, style)?;
    let i_cc = model.stylize(content, content)?;
    let i_ss = model.stylize(style, style)?;
    let f_c = extractor.extract(content)?;
    let f_s = extractor.extract(style)?;
    let f_o = extractor.extract(&i_o)?;
    let l_c = content_loss_from_features(&f_o, &f_c, opts)?;
    let l_s = style_loss_from_features(&f_o, &f_s, opts)?;
    let (id1, id2) = identity_losses_from_features(
        content,
        style,
        &i_cc,
        &i_ss,
        &f_c,
        &f_s,
        &extractor.extract(&i_cc)?,
        &extractor.extract(&i_ss)?,
        opts,
    )?;
    LossTerms::combine(l_c, l_s, id1, id2, weights)
}

/// Mean loss over a batch of `[3, H, W]` pairs, differentiable in the model parameters.
pub fn batch_losses<T: Real>(
    model: &StyTr<T>,
    extractor: &FeatureExtractor<T>,
    batch: &[(Tensor<T>, Tensor<T>)],
    weights: &LossWeights,
    opts: &LossOptions,
) -> Result<LossTerms<T>> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let inv = T::one() / T::lit(batch.len() as f64);
    let mut acc: Option<[Tensor<T>; 5]> = None;
    for (c, s) in batch {
        let t = pair_losses(model, extractor, c, s, weights, opts)?;
        let terms = [t.content, t.style, t.identity_pixel, t.identity_feature, t.total];
        acc = Some(match acc {
            None => terms,
            Some(a) => {
                let mut sum = a.clone();
                for (k, term) in terms.iter().enumerate() {
                    sum[k] = a[k].add(term)?;
                }
                sum
            }
        });
    }
    let [content, style, identity_pixel, identity_feature, total] = acc.expect("nonempty batch").map(|t| t.scale(inv));
    Ok(LossTerms {
        content,
        style,
        identity_pixel,
        identity_feature,
        total,
    })
}

/// One optimizer step. Returns the updated model, the loss report measured
/// before the update, and the learning rate used.
pub fn train_step<T: Real>(
    model: &StyTr<T>,
    batch: &[(Tensor<T>, Tensor<T>)],
    state: &mut AdamState<T>,
    extractor: &FeatureExtractor<T>,
    weights: &LossWeights,
    opts: &LossOptions,
) -> Result<(StyTr<T>, LossReport, f64)> {
    let leaves = model.params().trainable();
    let live = model.with_params(leaves.clone())?;
    let terms = batch_losses(&live, extractor, batch, weights, opts)?;
    let report = terms.report();
    terms.total.backward()?;
    let grads: Vec<Vec<T>> = leaves
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]))
        .collect();
    let (params, lr) = adam_step(&model.params().detached(), &grads, state)?;
    Ok((model.with_params(params)?, report, lr))
}

/// One draw of a training pair.
#[derive(Debug, Clone)]
pub struct Sample {
    pub content_index: usize,
    pub content_offset: (usize, usize),
    pub style_index: usize,
    pub style_offset: (usize, usize),
    pub content: ImageBuffer,
    pub style: ImageBuffer,
}

fn random_crop(img: &ImageBuffer, crop: usize, rng: &mut Stream, what: &str) -> Result<((usize, usize), ImageBuffer)> {
    if img.height() < crop || img.width() < crop {
        return Err(Error::Data(format!(
            "{what} image is {}x{}, smaller than the {crop}x{crop} crop",
            img.height(),
            img.width()
        )));
    }
    let top = rng::index(rng, img.height() - crop + 1);
    let left = rng::index(rng, img.width() - crop + 1);
    Ok(((top, left), img.crop(top, left, crop, crop)?))
}

/// Uniform file choice then uniform top-left offset, content first, from `rng`.
pub fn sample_pair(
    content: &[ImageBuffer],
    style: &[ImageBuffer],
    crop: usize,
    rng: &mut Stream,
) -> Result<Sample> {
    if content.is_empty() || style.is_empty() {
        return Err(Error::Data("no images to sample from".into()));
    }
    let ci = rng::index(rng, content.len());
    let (content_offset, c) = random_crop(&content[ci], crop, rng, &format!("content #{ci}"))?;
    let si = rng::index(rng, style.len());
    let (style_offset, s) = random_crop(&style[si], crop, rng, &format!("style #{si}"))?;
    Ok(Sample {
        content_index: ci,
        content_offset,
        style_index: si,
        style_offset,
        content: c,
        style: s,
    })
}

/// Images of a training set, loaded once.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub paths: Vec<PathBuf>,
    pub images: Vec<ImageBuffer>,
}

impl ImageSet {
    /// Every `.ppm` file directly in `dir`, sorted by file name. Each image
    /// must be at least `crop` pixels on both sides.
    pub fn load_dir(dir: &Path, crop: usize) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
                paths.push(path);
            }
        }
        if paths.is_empty() {
            return Err(Error::Data(format!("no .ppm images in {}", dir.display())));
        }
        paths.sort();
        let mut images = Vec::with_capacity(paths.len());
        for p in &paths {
            let img = read_ppm(p)?;
            if img.height() < crop || img.width() < crop {
                return Err(Error::Data(format!(
                    "{} is {}x{}, smaller than the {crop}x{crop} crop",
                    p.display(),
                    img.height(),
                    img.width()
                )));
            }
            images.push(img);
        }
        Ok(Self { paths, images })
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: LossReport,
    pub lr: f64,
}

pub const TRACE_HEADER: [&str; 7] = ["step", "L_c", "L_s", "L_id1", "L_id2", "total", "lr"];

/// Where the training loop writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Final checkpoint; intermediate ones go next to it as `<stem>_step<N>.<ext>`.
    pub checkpoint: Option<PathBuf>,
    pub trace_csv: Option<PathBuf>,
}

pub fn intermediate_checkpoint(path: &Path, step: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ckpt");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_step{step:06}.{ext}"),
        None => format!("{stem}_step{step:06}"),
    };
    path.with_file_name(name)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: StyTr<f32>,
    pub trace: Vec<TraceRow>,
}

/// Runs `run.train.total_iters` steps from a fresh seeded model. Each step
/// draws `batch_size` crops; the reported loss is measured before the update.
pub fn train(
    run: &RunConfig,
    content: &ImageSet,
    style: &ImageSet,
    extractor: &FeatureExtractor<f32>,
    outputs: &TrainOutputs,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<TrainOutcome> {
    run.validate()?;
    let tc = &run.train;
    let mut model = StyTr::<f32>::init(run.model.clone(), tc.seed)?;
    let mut state = AdamState::new(model.params(), tc.base_lr, tc.warmup());
    state.clip_norm = tc.clip_norm;
    let mut data = rng::stream(tc.seed ^ DATA_STREAM);
    let mut writer = match &outputs.trace_csv {
        Some(p) => {
            let mut w = csv::Writer::from_path(p).map_err(|e| csv_error(p, e))?;
            w.write_record(TRACE_HEADER).map_err(|e| csv_error(p, e))?;
            Some((p, w))
        }
        None => None,
    };
    let mut trace = Vec::with_capacity(tc.total_iters);
    for step in 1..=tc.total_iters {
        let mut batch = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            let s = sample_pair(&content.images, &style.images, tc.crop, &mut data)?;
            batch.push((s.content.to_tensor(), s.style.to_tensor()));
        }
        let (next, loss, lr) = train_step(&model, &batch, &mut state, extractor, &run.weights, &run.loss)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        model = next;
        let row = TraceRow { step, loss, lr };
        if let Some((p, w)) = writer.as_mut() {
            let l = row.loss;
            w.write_record([
                step.to_string(),
                l.content.to_string(),
                l.style.to_string(),
                l.identity_pixel.to_string(),
                l.identity_feature.to_string(),
                l.total.to_string(),
                lr.to_string(),
            ])
            .and_then(|_| w.flush().map_err(Into::into))
            .map_err(|e| csv_error(p, e))?;
        }
        on_step(&row);
        trace.push(row);
        if let Some(ckpt) = &outputs.checkpoint {
            if tc.ckpt_every > 0 && step % tc.ckpt_every == 0 && step != tc.total_iters {
                save_weights(&intermediate_checkpoint(ckpt, step), model.params(), model.config())?;
            }
        }
    }
    if let Some(ckpt) = &outputs.checkpoint {
        save_weights(ckpt, model.params(), model.config())?;
    }
    Ok(TrainOutcome { model, trace })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        assert_eq!(lr_schedule(100, 0.0005, 100), 0.0005);
        assert_eq!(lr_schedule(50, 0.0005, 100), 0.00025);
        assert_eq!(lr_schedule(10_000, 0.0005, 100), 0.0005);
        assert_eq!(lr_schedule(1, 0.0005, 0), 0.0005);
        let tc = TrainConfig { total_iters: 160_000, ..Default::default() };
        assert_eq!(tc.warmup(), 1600);
        assert_eq!(TrainConfig::default().warmup(), 100);
    }

    fn scalar_params(w: f64) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::scalar(w));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let p = scalar_params(0.7);
        let mut st = AdamState::new(&p, 0.1, 0);
        let (q, _) = adam_step(&p, &[vec![0.0]], &mut st).unwrap();
        assert_eq!(q.get("w").unwrap().item(), 0.7);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn scalar_adam_matches_hand_recursion() {
        let (lr, warm) = (0.01, 2);
        let grads = [0.5, -1.25, 2.0, 0.1];
        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(&p, lr, warm);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let step_lr = lr * (t as f64 / warm as f64).min(1.0);
            w -= step_lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            p = adam_step(&p, &[vec![g]], &mut st).unwrap().0;
            assert!((p.get("w").unwrap().item() - w).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let p = scalar_params(0.0);
        let mut st = AdamState::new(&p, 0.5, 0);
        let (q, lr) = adam_step(&p, &[vec![3.0]], &mut st).unwrap();
        assert_eq!(lr, 0.5);
        assert!((q.get("w").unwrap().item() + 0.5).abs() < 1e-8);
    }

    #[test]
    fn nan_gradient_aborts_naming_parameter() {
        let mut p = scalar_params(1.0);
        p.insert("bias.x", Tensor::zeros(&[2]));
        let mut st = AdamState::new(&p, 0.1, 0);
        let err = adam_step(&p, &[vec![1.0], vec![0.0, f64::NAN]], &mut st).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref n) if n == "bias.x"));
        assert_eq!(st.t, 0);
        assert_eq!(st.m[0], vec![0.0]);
    }

    #[test]
    fn clip_norm_scales_gradient() {
        let p = scalar_params(0.0);
        let mut a = AdamState::new(&p, 0.1, 0);
        a.clip_norm = Some(1.0);
        adam_step(&p, &[vec![4.0]], &mut a).unwrap();
        assert!((a.m[0][0] - 0.1).abs() < 1e-15);
    }

    fn image(seed: u64, h: usize, w: usize) -> ImageBuffer {
        let v = rng::uniform_vec(&mut rng::stream(seed), h * w * 3, 0.0, 1.0);
        ImageBuffer::new(h, w, v.into_iter().map(|x| x as f32).collect()).unwrap()
    }

    #[test]
    fn full_size_crop_is_the_image() {
        let img = image(1, 16, 16);
        let s = sample_pair(std::slice::from_ref(&img), std::slice::from_ref(&img), 16, &mut rng::stream(5)).unwrap();
        assert_eq!((s.content_offset, s.style_offset), ((0, 0), (0, 0)));
        assert_eq!(s.content, img);
    }

    #[test]
    fn sampling_replays_and_stays_in_bounds() {
        let content = vec![image(1, 300, 300), image(2, 260, 280)];
        let style = vec![image(3, 300, 300)];
        let draw = |seed| {
            let mut r = rng::stream(seed);
            (0..200)
                .map(|_| {
                    let s = sample_pair(&content, &style, 256, &mut r).unwrap();
                    (s.content_index, s.content_offset, s.style_offset)
                })
                .collect::<Vec<_>>()
        };
        let a = draw(17);
        assert_eq!(a, draw(17));
        for &(ci, (ct, cl), (st, sl)) in &a {
            let (h, w) = if ci == 0 { (300, 300) } else { (260, 280) };
            assert!(ct <= h - 256 && cl <= w - 256);
            assert!(st <= 44 && sl <= 44);
        }
        assert!(a.iter().any(|x| x.0 == 0) && a.iter().any(|x| x.0 == 1));
    }

    #[test]
    fn undersized_image_is_reported() {
        let err = sample_pair(&[image(1, 20, 40)], &[image(2, 40, 40)], 32, &mut rng::stream(0)).unwrap_err();
        assert!(err.to_string().contains("20x40"), "{err}");
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(
            intermediate_checkpoint(Path::new("out/model.styw"), 50),
            PathBuf::from("out/model_step000050.styw")
        );
    }
}
