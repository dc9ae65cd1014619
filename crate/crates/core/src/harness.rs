//! Repeated-stylization rounds and positional-encoding comparison maps.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::StyTr;
use crate::patching::{embed, write_pgm, write_ppm, GrayImage, ImageBuffer, PatchSequence};
use crate::posenc::{cape, sinusoid_frequency, sinusoidal_pe, PeMode};
use crate::rng;
use crate::samples::content_image;
use crate::tensor::Tensor;

/// Stylizes `content` with `style`; the result is not yet quantized.
pub fn stylize_image(model: &StyTr<f32>, content: &ImageBuffer, style: &ImageBuffer, pe: PeMode) -> Result<ImageBuffer> {
    ImageBuffer::from_tensor(&model.stylize_with(&content.to_tensor(), &style.to_tensor(), pe)?)
}

/// `n` rounds of `I_i = G(I_{i-1}, style)` from `I_0 = content`. Each round
/// is quantized to 8 bits before feeding the next, so the returned images are
/// exactly what a file-based chain would see.
pub fn rounds(
    model: &StyTr<f32>,
    content: &ImageBuffer,
    style: &ImageBuffer,
    n: usize,
    pe: PeMode,
) -> Result<Vec<ImageBuffer>> {
    if n == 0 {
        return Err(Error::Config("rounds: n must be at least 1".into()));
    }
    let mut out: Vec<ImageBuffer> = Vec::with_capacity(n);
    for _ in 0..n {
        let prev = out.last().unwrap_or(content);
        out.push(stylize_image(model, prev, style, pe)?.quantized());
    }
    Ok(out)
}

pub fn round_file_name(i: usize) -> String {
    format!("round_{i:02}.ppm")
}

/// Writes `round_01.ppm` .. into `dir`, returning the paths.
pub fn write_rounds(images: &[ImageBuffer], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let p = dir.join(round_file_name(i + 1));
        write_ppm(img, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Square matrix of pairwise token dot products of `[L, d]` encodings.
pub fn dot_matrix(enc: &Tensor<f64>) -> Result<Tensor<f64>> {
    enc.matmul(&enc.transpose()?)
}

/// `sum_k cos(w_k dx) + cos(w_k dy)`, the sinusoidal dot product written in
/// closed form, for every pair of cells of a `(rows, cols)` grid.
pub fn closed_form_matrix(grid: (usize, usize), d: usize) -> Tensor<f64> {
    let (rows, cols) = grid;
    let l = rows * cols;
    let freqs: Vec<f64> = (0..d / 4).map(|k| sinusoid_frequency(k, d)).collect();
    let mut m = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            let dx = (j % cols) as f64 - (i % cols) as f64;
            let dy = (j / cols) as f64 - (i / cols) as f64;
            m[i * l + j] = freqs.iter().map(|w| (w * dx).cos() + (w * dy).cos()).sum();
        }
    }
    Tensor::new(m, &[l, l]).expect("square")
}

/// Euclidean norm of each token of `[L, d]`.
pub fn token_norms(enc: &Tensor<f64>) -> Vec<f64> {
    enc.data()
        .chunks(enc.shape()[1])
        .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Min-max scaled 8-bit image of `values` laid out as `height x width`.
pub fn heatmap(values: &[f64], height: usize, width: usize) -> GrayImage {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    GrayImage {
        width,
        height,
        pixels: values
            .iter()
            .map(|v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}

/// Dot-product matrices and token norms for the sinusoidal code, its closed
/// form, and CAPE on a sample content embedding.
#[derive(Debug, Clone)]
pub struct PeComparison {
    pub grid: (usize, usize),
    pub sinusoidal: Tensor<f64>,
    pub closed_form: Tensor<f64>,
    pub cape: Tensor<f64>,
    pub sinusoidal_norms: Vec<f64>,
    pub cape_norms: Vec<f64>,
}

/// The CAPE side embeds `content_image` at the grid's pixel size with a
/// seeded Xavier projection and `F_pos`, using an `n x n` pooled grid.
pub fn pe_compare(grid: (usize, usize), d: usize, n: usize, patch: usize, seed: u64) -> Result<PeComparison> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 {
        return Err(Error::Config("pe-compare: grid must be at least 1x1".into()));
    }
    let sin = sinusoidal_pe::<f64>(grid, d)?;
    let mut s = rng::stream(seed);
    let pd = 3 * patch * patch;
    let xavier = |s: &mut rng::Stream, fan_in: usize, fan_out: usize| {
        let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::<f64>::from_f64(&rng::uniform_vec(s, fan_in * fan_out, -lim, lim), &[fan_in, fan_out])
    };
    let proj = xavier(&mut s, pd, d)?;
    let f_pos = xavier(&mut s, d, d)?;
    let image = content_image(rows * patch, cols * patch).to_tensor::<f64>();
    let seq: PatchSequence<f64> = embed(&image, patch, &proj, &Tensor::zeros(&[d]))?;
    let ca = cape(&seq, &f_pos, &Tensor::zeros(&[d]), n)?.encoding;
    Ok(PeComparison {
        grid,
        sinusoidal: dot_matrix(&sin)?,
        closed_form: closed_form_matrix(grid, d),
        cape: dot_matrix(&ca)?,
        sinusoidal_norms: token_norms(&sin),
        cape_norms: token_norms(&ca),
    })
}

pub const PE_COMPARE_FILES: [&str; 5] = [
    "sinusoidal_dot.pgm",
    "closed_form_dot.pgm",
    "cape_dot.pgm",
    "sinusoidal_norm.pgm",
    "cape_norm.pgm",
];

impl PeComparison {
    /// Writes the five heatmaps of [`PE_COMPARE_FILES`] into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let l = self.grid.0 * self.grid.1;
        let (h, w) = self.grid;
        let maps = [
            heatmap(self.sinusoidal.data(), l, l),
            heatmap(self.closed_form.data(), l, l),
            heatmap(self.cape.data(), l, l),
            heatmap(&self.sinusoidal_norms, h, w),
            heatmap(&self.cape_norms, h, w),
        ];
        let mut paths = Vec::new();
        for (name, map) in PE_COMPARE_FILES.iter().zip(&maps) {
            let p = dir.join(name);
            write_pgm(map, &p)?;
            paths.push(p);
        }
        Ok(paths)
    }
}
