//! Binary Netpbm I/O: PPM (`P6`) for RGB images and PGM (`P5`) for heatmaps.
//! Only maxval 255 is supported. Files are written as
//! `P6\n<width> <height>\n255\n` followed by the raw samples, so reading and
//! re-writing a file in that canonical form reproduces it byte for byte.

use std::fs;
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(
            0,
            format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        let ws_start = pos;
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        if pos == ws_start {
            return Err(parse_err(pos, "expected whitespace in header"));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][k];
            return Err(parse_err(pos, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| parse_err(start, format!("number `{text}` out of range")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(parse_err(pos, format!("unsupported maxval {maxval}, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(pos, format!("empty image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_err(pos, "expected single whitespace after maxval")),
    }
    Ok(Header {
        width,
        height,
        payload_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| parse_err(header.payload_start, "image dimensions overflow"))?;
    let have = bytes.len() - header.payload_start;
    if have < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, found {have}"),
        ));
    }
    Ok(&bytes[header.payload_start..header.payload_start + need])
}

/// Decodes a binary PPM held in memory.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let header = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &header, 3)?;
    ImageBuffer::from_u8(header.height, header.width, data)
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let header = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &header, 1)?;
    Ok(GrayImage {
        width: header.width,
        height: header.height,
        pixels: data.to_vec(),
    })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_red_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        assert_eq!((img.height(), img.width()), (1, 1));
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_ppm(b"P6 # made by hand\n2 # w\n1\n255\n\x00\x00\x00\xff\xff\xff").unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.pixel(0, 1), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let cases: [(&[u8], usize); 5] = [
            (b"P5\n1 1\n255\n\x00", 0),
            (b"P6\n1 x\n255\n", 5),
            (b"P6\n1 1\n65535\n\x00\x00", 12),
            (b"P6\n2 2\n255\n\x00\x00\x00", 14),
            (b"P6\n1 1\n255", 10),
        ];
        for (bytes, offset) in cases {
            match decode_ppm(bytes) {
                Err(Error::Parse { offset: got, .. }) => assert_eq!(got, offset, "{bytes:?}"),
                other => panic!("expected parse error for {bytes:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 20, 30, 40, 255],
        };
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    proptest! {
        #[test]
        fn canonical_ppm_round_trips_bytewise(
            (h, w, pixels) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
                (Just(h), Just(w), proptest::collection::vec(any::<u8>(), h * w * 3))
            })
        ) {
            let mut file = format!("P6\n{w} {h}\n255\n").into_bytes();
            file.extend(&pixels);
            let img = decode_ppm(&file).unwrap();
            prop_assert_eq!(img.to_u8(), pixels);
            prop_assert_eq!(encode_ppm(&img), file);
        }
    }
}
