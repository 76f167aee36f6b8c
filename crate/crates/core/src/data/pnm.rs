//! Binary 8-bit PGM (P5) and PPM (P6).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("not a binary PGM/PPM (expected P5 or P6)".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PNM header field".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing whitespace after PNM header".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PNM extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PNM maxval {maxval} (8-bit only)")));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes a P5 image into `[h, w]` or a P6 image into `[3, h, w]`, scaled
/// to `[0, 1]` by the header maxval (255 for ordinary 8-bit files).
pub fn decode(bytes: &[u8]) -> Result<Tensor<f64>> {
    let hd = parse_header(bytes)?;
    let n = hd.width * hd.height * hd.channels;
    let raster = bytes
        .get(hd.data_start..hd.data_start + n)
        .ok_or_else(|| Error::Format("truncated PNM raster".into()))?;
    let scale = hd.maxval as f64;
    let plane = hd.width * hd.height;
    if hd.channels == 1 {
        let data = raster.iter().map(|&b| b as f64 / scale).collect();
        return Tensor::new(&[hd.height, hd.width], data);
    }
    // interleaved RGB to channel-major
    let mut data = vec![0.0; n];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / scale;
        }
    }
    Tensor::new(&[3, hd.height, hd.width], data)
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes `[h, w]` as P5 or `[3, h, w]` as P6, quantizing with `round(255 v)`.
pub fn encode(img: &Tensor<f64>) -> Result<Vec<u8>> {
    let (magic, c, h, w) = match *img.shape() {
        [h, w] => ("P5", 1, h, w),
        [3, h, w] => ("P6", 3, h, w),
        ref s => return Err(Error::dim(format!("cannot encode shape {s:?} as PNM"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = img.data();
    for i in 0..plane {
        for ch in 0..c {
            out.push(quantize(d[ch * plane + i]));
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Tensor<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, img: &Tensor<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, encode(img)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
