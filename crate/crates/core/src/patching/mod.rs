//! Images and their patch-token representation.

mod pnm;

pub use pnm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm,
    GrayImage,
};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// An RGB image with intensities in `[0, 1]`, stored row-major with
/// interleaved channels (`H x W x 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width * 3 {
            return Err(Error::shape(
                "image",
                format!("{height}x{width}x3 needs {} values, got {}", height * width * 3, values.len()),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    /// Quantizes to bytes with round-to-nearest after clamping to `[0, 1]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// The image as it would be read back from an 8-bit file.
    pub fn quantized(&self) -> Self {
        Self::from_u8(self.height, self.width, &self.to_u8()).expect("same geometry")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    /// Channel-first `[3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let hw = self.height * self.width;
        let mut data = vec![T::zero(); 3 * hw];
        for (i, px) in self.values.chunks(3).enumerate() {
            for c in 0..3 {
                data[c * hw + i] = T::lit(f64::from(px[c]));
            }
        }
        Tensor::new(data, &[3, self.height, self.width]).expect("consistent shape")
    }

    /// Reads a `[3, H, W]` tensor, clamping into `[0, 1]`. Non-finite values are rejected.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let &[3, h, w] = t.shape() else {
            return Err(Error::shape(
                "image",
                format!("expected [3, H, W], got {:?}", t.shape()),
            ));
        };
        let hw = h * w;
        let d = t.data();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("image tensor contains non-finite values".into()));
        }
        let mut values = Vec::with_capacity(3 * hw);
        for i in 0..hw {
            for c in 0..3 {
                values.push((d[c * hw + i].as_f64() as f32).clamp(0.0, 1.0));
            }
        }
        Self::new(h, w, values)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Data(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(height * width * 3);
        for r in top..top + height {
            let start = (r * self.width + left) * 3;
            values.extend_from_slice(&self.values[start..start + width * 3]);
        }
        Self::new(height, width, values)
    }

    /// Centre crop to the largest size whose sides are multiples of `m`.
    pub fn crop_to_multiple(&self, m: usize) -> Result<Self> {
        let (h, w) = (self.height / m * m, self.width / m * m);
        if h == 0 || w == 0 {
            return Err(Error::Data(format!(
                "image {}x{} is smaller than patch size {m}",
                self.height, self.width
            )));
        }
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }
}

/// `L x C` token embedding plus the patch grid it came from.
#[derive(Debug, Clone)]
pub struct PatchSequence<T: Real> {
    pub tokens: Tensor<T>,
    /// `(h_p, w_p)`: patch rows and columns; tokens are row-major over this grid.
    pub grid: (usize, usize),
    pub patch: usize,
}

impl<T: Real> PatchSequence<T> {
    pub fn new(tokens: Tensor<T>, grid: (usize, usize), patch: usize) -> Result<Self> {
        match *tokens.shape() {
            [l, _] if l == grid.0 * grid.1 => Ok(Self {
                tokens,
                grid,
                patch,
            }),
            ref s => Err(Error::shape(
                "patch_sequence",
                format!("tokens {s:?} do not match grid {grid:?}"),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[1]
    }

    /// Pixel size `(m * h_p, m * w_p)` of the image this sequence covers.
    pub fn unembed_shape(&self) -> (usize, usize) {
        unembed_shape(self.grid, self.patch)
    }

    /// Same tokens with a different tensor, keeping the geometry.
    pub fn with_tokens(&self, tokens: Tensor<T>) -> Result<Self> {
        Self::new(tokens, self.grid, self.patch)
    }

    /// Tokens as a `[C, h_p, w_p]` feature map.
    pub fn to_feature_map(&self) -> Result<Tensor<T>> {
        tokens_to_map(&self.tokens, self.grid)
    }
}

pub fn unembed_shape(grid: (usize, usize), patch: usize) -> (usize, usize) {
    (grid.0 * patch, grid.1 * patch)
}

/// `[L, C]` tokens over a row-major grid to a `[C, h, w]` map.
pub fn tokens_to_map<T: Real>(tokens: &Tensor<T>, grid: (usize, usize)) -> Result<Tensor<T>> {
    let c = tokens.shape().get(1).copied().unwrap_or(0);
    tokens.transpose()?.reshape(&[c, grid.0, grid.1])
}

/// `[C, h, w]` map back to `[h*w, C]` tokens.
pub fn map_to_tokens<T: Real>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let &[c, h, w] = map.shape() else {
        return Err(Error::shape(
            "map_to_tokens",
            format!("expected [C, H, W], got {:?}", map.shape()),
        ));
    };
    map.reshape(&[c, h * w])?.transpose()
}

/// Splits a `[3, H, W]` image into `m x m` patches and projects each flattened
/// patch (`3 m^2` values) with `weight` `[3 m^2, C]` and `bias` `[C]`.
pub fn embed<T: Real>(
    image: &Tensor<T>,
    patch: usize,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<PatchSequence<T>> {
    let &[_, h, w] = image.shape() else {
        return Err(Error::shape(
            "embed",
            format!("expected [3, H, W] image, got {:?}", image.shape()),
        ));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(
            "embed",
            format!("image H={h}, W={w} not divisible by patch size m={patch}"),
        ));
    }
    let tokens = image.patchify(patch)?.matmul(weight)?.add_row(bias)?;
    PatchSequence::new(tokens, (h / patch, w / patch), patch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        let values = (0..h * w * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        ImageBuffer::new(h, w, values).unwrap()
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageBuffer::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(ImageBuffer::new(1, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn tensor_round_trip_preserves_pixels() {
        let img = ramp(4, 5);
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), &[3, 4, 5]);
        assert_eq!(ImageBuffer::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn single_patch_image_gives_one_token() {
        let img = ramp(8, 8).to_tensor::<f64>();
        let seq = embed(&img, 8, &Tensor::zeros(&[192, 4]), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.grid, (1, 1));
    }

    #[test]
    fn token_count_matches_hw_over_m_squared() {
        let img = Tensor::<f32>::zeros(&[3, 256, 256]);
        let seq = embed(&img, 8, &Tensor::zeros(&[192, 2]), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(seq.len(), 1024);
        assert_eq!(seq.len(), 256 * 256 / 64);
    }

    #[test]
    fn zero_projection_gives_bias_tokens() {
        let img = ramp(16, 24).to_tensor::<f64>();
        let bias = Tensor::new(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let seq = embed(&img, 8, &Tensor::zeros(&[192, 3]), &bias).unwrap();
        assert_eq!(seq.grid, (2, 3));
        for tok in seq.tokens.data().chunks(3) {
            assert_eq!(tok, bias.data());
        }
    }

    #[test]
    fn non_divisible_image_is_rejected_with_dimensions() {
        let img = Tensor::<f32>::zeros(&[3, 20, 16]);
        let err = embed(&img, 8, &Tensor::zeros(&[192, 2]), &Tensor::zeros(&[2]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("H=20") && err.contains("W=16") && err.contains("m=8"), "{err}");
    }

    #[test]
    fn unembed_shape_examples() {
        assert_eq!(unembed_shape((4, 4), 8), (32, 32));
        assert_eq!(unembed_shape((32, 32), 8), (256, 256));
        assert_eq!(unembed_shape((3, 5), 8), (24, 40));
    }

    #[test]
    fn crop_to_multiple_centres() {
        let img = ramp(20, 19);
        let c = img.crop_to_multiple(8).unwrap();
        assert_eq!((c.height(), c.width()), (16, 16));
        assert_eq!(c.pixel(0, 0), img.pixel(2, 1));
    }

    #[test]
    fn token_map_conversions_are_inverse() {
        let t = Tensor::<f64>::from_f64(&(0..24).map(f64::from).collect::<Vec<_>>(), &[6, 4]).unwrap();
        let map = tokens_to_map(&t, (2, 3)).unwrap();
        assert_eq!(map.shape(), &[4, 2, 3]);
        // channel 1 at grid (1, 0) is token 3, column 1
        assert_eq!(map.data()[6 + 3], t.data()[3 * 4 + 1]);
        assert_eq!(map_to_tokens(&map).unwrap().data(), t.data());
    }
}
