use std::path::Path;

use stytr_core::patching::{read_ppm, write_ppm, ImageBuffer};
use stytr_core::{Error, Result};

fn is_ppm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

/// Reads a binary PPM, or any format the `image` crate decodes (PNG).
pub fn load(path: &Path) -> Result<ImageBuffer> {
    if is_ppm(path) {
        return read_ppm(path);
    }
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    ImageBuffer::from_u8(img.height() as usize, img.width() as usize, img.as_raw())
}

/// Writes PPM unless the extension asks for PNG.
pub fn save(img: &ImageBuffer, path: &Path) -> Result<()> {
    if is_ppm(path) || path.extension().is_none() {
        return write_ppm(img, path);
    }
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_u8())
        .ok_or_else(|| Error::Data("image buffer size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
