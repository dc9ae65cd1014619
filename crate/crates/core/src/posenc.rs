//! Positional encodings: the 2-D sinusoidal baseline and content-aware
//! positional encoding (CAPE), which pools the content embedding onto a
//! fixed `n x n` grid, maps it through a learnable 1x1 convolution and
//! interpolates back onto the patch grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::patching::{map_to_tokens, tokens_to_map, PatchSequence};
use crate::real::Real;
use crate::tensor::Tensor;

/// Angular frequency of sinusoid `k` for encoding width `d`:
/// `1 / 10000^(2k / (d/4))`, which is `2k/128` at `d = 512`.
pub fn sinusoid_frequency(k: usize, d: usize) -> f64 {
    1.0 / 10000f64.powf(2.0 * k as f64 / (d / 4) as f64)
}

/// 2-D sinusoidal encoding for every patch of a `(rows, cols)` grid, `[L, d]`.
///
/// Patch `(x, y)` (column, row) is encoded as
/// `[sin(w_0 x), cos(w_0 x), .., sin(w_{d/4-1} x), cos(w_{d/4-1} x)]`
/// followed by the same block for `y`. Tokens are row-major over the grid.
pub fn sinusoidal_pe<T: Real>(grid: (usize, usize), d: usize) -> Result<Tensor<T>> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "sinusoidal encoding width {d} must be a positive multiple of 4"
        )));
    }
    let quarter = d / 4;
    let freqs: Vec<f64> = (0..quarter).map(|k| sinusoid_frequency(k, d)).collect();
    let (rows, cols) = grid;
    let mut data = Vec::with_capacity(rows * cols * d);
    for y in 0..rows {
        for x in 0..cols {
            for coord in [x as f64, y as f64] {
                for &w in &freqs {
                    data.push(T::lit((w * coord).sin()));
                    data.push(T::lit((w * coord).cos()));
                }
            }
        }
    }
    Tensor::new(data, &[rows * cols, d])
}

/// Attention score between two tokens with additive positional codes and
/// its expansion into content/position cross terms.
#[derive(Debug, Clone)]
pub struct ScoreDecomposition<T: Real> {
    /// `((E_i + P_i) W_q) ((E_j + P_j) W_k)^T`
    pub score: Tensor<T>,
    /// content-content, content-position, position-content, position-position
    pub terms: [Tensor<T>; 4],
}

impl<T: Real> ScoreDecomposition<T> {
    pub fn term_sum(&self) -> Result<Tensor<T>> {
        self.terms[0]
            .add(&self.terms[1])?
            .add(&self.terms[2])?
            .add(&self.terms[3])
    }
}

/// Unscaled attention score and its four-term expansion. Token inputs are
/// row blocks `[r, C]`; projections are `[C, d]`.
pub fn attention_decomposition<T: Real>(
    e_i: &Tensor<T>,
    e_j: &Tensor<T>,
    p_i: &Tensor<T>,
    p_j: &Tensor<T>,
    w_q: &Tensor<T>,
    w_k: &Tensor<T>,
) -> Result<ScoreDecomposition<T>> {
    let bilinear = |a: &Tensor<T>, b: &Tensor<T>| -> Result<Tensor<T>> {
        a.matmul(w_q)?.matmul(&b.matmul(w_k)?.transpose()?)
    };
    let score = bilinear(&e_i.add(p_i)?, &e_j.add(p_j)?)?;
    let terms = [
        bilinear(e_i, e_j)?,
        bilinear(e_i, p_j)?,
        bilinear(p_i, e_j)?,
        bilinear(p_i, p_j)?,
    ];
    Ok(ScoreDecomposition { score, terms })
}

/// Intermediate and final tensors of one CAPE evaluation.
#[derive(Debug, Clone)]
pub struct CapeField<T: Real> {
    /// Learnable grid `F_pos(AvgPool(E))`, stored channel-first as `[C, n, n]`.
    pub pooled: Tensor<T>,
    /// Per-token encoding `[L, C]`.
    pub encoding: Tensor<T>,
}

/// Content-aware positional encoding of `seq`.
///
/// `f_pos_weight` `[C, C]` and `f_pos_bias` `[C]` form the 1x1 convolution;
/// `n` is the side of the pooled grid.
pub fn cape<T: Real>(
    seq: &PatchSequence<T>,
    f_pos_weight: &Tensor<T>,
    f_pos_bias: &Tensor<T>,
    n: usize,
) -> Result<CapeField<T>> {
    let (rows, cols) = seq.grid;
    if n == 0 || rows < n || cols < n {
        return Err(Error::Config(format!(
            "patch grid {rows}x{cols} is smaller than the CAPE grid {n}x{n}; \
             reduce `cape_grid` in the config or use a larger image"
        )));
    }
    let map = tokens_to_map(&seq.tokens, seq.grid)?;
    let pooled = map
        .avgpool_adaptive(n, n)?
        .conv2d_1x1(f_pos_weight, f_pos_bias)?;
    let encoding = map_to_tokens(&pooled.resize_bilinear(rows, cols)?)?;
    Ok(CapeField { pooled, encoding })
}

/// Which additive positional code a branch receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeMode {
    None,
    Sinusoidal,
    #[default]
    Cape,
}

impl FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PeMode::None),
            "sinusoidal" => Ok(PeMode::Sinusoidal),
            "cape" => Ok(PeMode::Cape),
            other => Err(Error::Config(format!(
                "unknown positional encoding `{other}` (expected none, sinusoidal or cape)"
            ))),
        }
    }
}

impl fmt::Display for PeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeMode::None => "none",
            PeMode::Sinusoidal => "sinusoidal",
            PeMode::Cape => "cape",
        })
    }
}

impl PeMode {
    /// The `[L, C]` code added to `seq` under this mode.
    pub fn encode<T: Real>(
        self,
        seq: &PatchSequence<T>,
        f_pos_weight: &Tensor<T>,
        f_pos_bias: &Tensor<T>,
        n: usize,
    ) -> Result<Tensor<T>> {
        match self {
            PeMode::None => Ok(Tensor::zeros(&[seq.len(), seq.channels()])),
            PeMode::Sinusoidal => sinusoidal_pe(seq.grid, seq.channels()),
            PeMode::Cape => Ok(cape(seq, f_pos_weight, f_pos_bias, n)?.encoding),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_from(values: Vec<f64>, grid: (usize, usize), c: usize) -> PatchSequence<f64> {
        PatchSequence::new(Tensor::new(values, &[grid.0 * grid.1, c]).unwrap(), grid, 8).unwrap()
    }

    fn identity(c: usize) -> Tensor<f64> {
        let mut d = vec![0.0; c * c];
        (0..c).for_each(|i| d[i * c + i] = 1.0);
        Tensor::new(d, &[c, c]).unwrap()
    }

    #[test]
    fn origin_patch_is_sin_zero_cos_one() {
        let pe = sinusoidal_pe::<f64>((2, 2), 16).unwrap();
        let origin = &pe.data()[..16];
        for (i, &v) in origin.iter().enumerate() {
            assert_eq!(v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn self_dot_product_is_half_width() {
        let pe = sinusoidal_pe::<f64>((5, 7), 512).unwrap();
        for tok in pe.data().chunks(512) {
            let dot: f64 = tok.iter().map(|v| v * v).sum();
            assert!((dot - 256.0).abs() < 1e-9);
        }
    }

    #[test]
    fn width_must_be_multiple_of_four() {
        assert!(sinusoidal_pe::<f64>((2, 2), 18).is_err());
    }

    #[test]
    fn frequency_matches_printed_law_at_512() {
        for k in [0, 1, 17, 127] {
            let printed = 1.0 / 10000f64.powf(2.0 * k as f64 / 128.0);
            assert_eq!(sinusoid_frequency(k, 512), printed);
        }
    }

    #[test]
    fn decomposition_degenerate_cases() {
        let e = Tensor::<f64>::from_f64(&[0.3, -1.2, 0.5], &[1, 3]).unwrap();
        let e2 = Tensor::<f64>::from_f64(&[1.1, 0.4, -0.7], &[1, 3]).unwrap();
        let w = Tensor::<f64>::from_f64(&[0.2, 0.1, -0.3, 0.8, 0.5, -0.6], &[3, 2]).unwrap();
        let zero = Tensor::<f64>::zeros(&[1, 3]);
        let d = attention_decomposition(&e, &e2, &zero, &zero, &w, &w).unwrap();
        assert_ne!(d.terms[0].item(), 0.0);
        assert!(d.terms[1..].iter().all(|t| t.item() == 0.0));
        let d = attention_decomposition(&zero, &zero, &e, &e2, &w, &w).unwrap();
        assert_ne!(d.terms[3].item(), 0.0);
        assert!(d.terms[..3].iter().all(|t| t.item() == 0.0));
    }

    #[test]
    fn constant_embedding_gives_constant_cape() {
        let c = 3;
        let tok = [0.5, -2.0, 1.25];
        let values: Vec<f64> = (0..7 * 9).flat_map(|_| tok).collect();
        let seq = seq_from(values, (7, 9), c);
        let w = Tensor::from_f64(&[0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, 0.8, -0.9], &[3, 3]).unwrap();
        let b = Tensor::from_f64(&[0.01, 0.02, 0.03], &[3]).unwrap();
        let field = cape(&seq, &w, &b, 4).unwrap();
        assert_eq!(field.pooled.shape(), &[3, 4, 4]);
        let first = field.encoding.data()[..3].to_vec();
        for row in field.encoding.data().chunks(3) {
            for (a, b) in row.iter().zip(&first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_equal_to_n_is_fixed_point() {
        let (n, c) = (4, 2);
        let values: Vec<f64> = (0..n * n * c).map(|i| (i as f64 * 0.37).sin()).collect();
        let seq = seq_from(values.clone(), (n, n), c);
        let field = cape(&seq, &identity(c), &Tensor::zeros(&[c]), n).unwrap();
        for (a, b) in field.encoding.data().iter().zip(&values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn undersized_grid_points_at_config() {
        let seq = seq_from(vec![0.0; 4 * 20 * 2], (4, 20), 2);
        let err = cape(&seq, &identity(2), &Tensor::zeros(&[2]), 18).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("cape_grid")), "{err}");
    }

    #[test]
    fn mode_selection() {
        assert_eq!("cape".parse::<PeMode>().unwrap(), PeMode::Cape);
        assert!("learned".parse::<PeMode>().is_err());
        let seq = seq_from((0..16 * 4).map(|i| i as f64).collect(), (4, 4), 4);
        let w = identity(4);
        let b = Tensor::zeros(&[4]);
        let none = PeMode::None.encode(&seq, &w, &b, 2).unwrap();
        assert_eq!(none.shape(), &[16, 4]);
        assert!(none.data().iter().all(|&v| v == 0.0));
        let sin = PeMode::Sinusoidal.encode(&seq, &w, &b, 2).unwrap();
        assert_eq!(sin.data(), sinusoidal_pe::<f64>((4, 4), 4).unwrap().data());
        let ca = PeMode::Cape.encode(&seq, &w, &b, 2).unwrap();
        assert_eq!(ca.data(), cape(&seq, &w, &b, 2).unwrap().encoding.data());
    }
}
