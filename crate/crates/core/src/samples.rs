//! Procedural sample images and the bundled 32x32 pair.

use crate::patching::{decode_ppm, ImageBuffer};

pub const CONTENT_PPM: &[u8] = include_bytes!("../assets/content.ppm");
pub const STYLE_PPM: &[u8] = include_bytes!("../assets/style.ppm");

/// A smooth "scene": sky gradient, a disc and a block, at any size.
pub fn content_image(height: usize, width: usize) -> ImageBuffer {
    let mut v = Vec::with_capacity(height * width * 3);
    for r in 0..height {
        for c in 0..width {
            let y = (r as f32 + 0.5) / height as f32;
            let x = (c as f32 + 0.5) / width as f32;
            let mut px = [0.35 + 0.4 * (1.0 - y), 0.55 + 0.3 * (1.0 - y), 0.9 - 0.2 * y];
            if y > 0.7 {
                px = [0.25 + 0.2 * x, 0.5 - 0.15 * (y - 0.7), 0.2];
            }
            let (dx, dy) = (x - 0.3, y - 0.35);
            if dx * dx + dy * dy < 0.03 {
                px = [0.95, 0.8, 0.25];
            }
            if (0.55..0.85).contains(&x) && (0.4..0.8).contains(&y) {
                px = [0.6, 0.25 + 0.3 * x, 0.3];
            }
            v.extend(px);
        }
    }
    ImageBuffer::new(height, width, v).expect("values in range")
}

/// A high-frequency "painting": interfering diagonal colour bands.
pub fn style_image(height: usize, width: usize) -> ImageBuffer {
    let mut v = Vec::with_capacity(height * width * 3);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f32, c as f32);
            let a = ((x + y) * 0.7).sin();
            let b = ((x - 2.0 * y) * 0.45).cos();
            let t = (x * 0.21).sin() * (y * 0.33).cos();
            v.extend([
                0.5 + 0.45 * a * b,
                0.45 + 0.4 * t,
                0.55 + 0.4 * (a - b) * 0.5,
            ]);
        }
    }
    ImageBuffer::new(height, width, v).expect("values in range")
}

/// The bundled 32x32 pair `(content, style)`.
pub fn bundled_pair() -> (ImageBuffer, ImageBuffer) {
    (
        decode_ppm(CONTENT_PPM).expect("bundled content"),
        decode_ppm(STYLE_PPM).expect("bundled style"),
    )
}
