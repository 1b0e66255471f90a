//! 8-bit RGB images: PPM and PNG codecs plus the crop/resize/scale
//! preprocessing shared by training, evaluation and the service.

use std::path::Path;

use super::DataError;
use crate::tensor::NdArray;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary (P6) PPM encoding with maxval 255.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>, DataError> {
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| DataError::Decode(e.to_string()))?;
        Ok(out)
    }

    /// Decodes PPM (P6 or P3) or PNG, sniffed from the leading bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self, DataError> {
        let img = if bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
            decode_ppm(bytes)?
        } else if bytes.starts_with(b"\x89PNG") {
            let dynamic = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
                .map_err(|e| DataError::Decode(format!("png: {e}")))?;
            let rgb = dynamic.to_rgb8();
            RgbImage {
                width: rgb.width() as usize,
                height: rgb.height() as usize,
                data: rgb.into_raw(),
            }
        } else {
            return Err(DataError::Decode("not a PPM or PNG image".into()));
        };
        if img.width == 0 || img.height == 0 {
            return Err(DataError::Decode("image has a zero dimension".into()));
        }
        Ok(img)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| DataError::Decode(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => self.to_png()?,
            _ => self.to_ppm(),
        };
        std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let bad = |m: &str| DataError::Decode(format!("ppm: {m}"));
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in &mut header {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only maxval 1..=255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    let n = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let rescale = |v: usize| -> u8 {
        if maxval == 255 {
            v as u8
        } else {
            ((v * 255 + maxval / 2) / maxval) as u8
        }
    };
    let data = if bytes[1] == b'6' {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated raster"))?;
        raster.iter().map(|&v| rescale(v as usize)).collect()
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("non-ascii P3 body"))?;
        let values: Vec<u8> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| t.parse::<usize>().ok().filter(|&v| v <= maxval).map(rescale))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("malformed P3 sample"))?;
        if values.len() != n {
            return Err(bad("truncated raster"));
        }
        values
    };
    Ok(RgbImage { width, height, data })
}

/// Samples `plane` (row-major, `w x h`) at fractional `(x, y)` with border
/// replication, using the `a + t (b - a)` form so constant regions stay exact.
pub(crate) fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |xx: usize, yy: usize| plane[yy * w + xx];
    let top = p(x0, y0) + fx * (p(x1, y0) - p(x0, y0));
    let bottom = p(x0, y1) + fx * (p(x1, y1) - p(x0, y1));
    top + fy * (bottom - top)
}

/// Center-crops to a square on the shorter side, resizes bilinearly
/// (half-pixel centers) to `size x size` and scales to `[0, 1]`.
/// Returns a `[3, size, size]` array.
pub fn preprocess(image: &RgbImage, size: usize) -> Result<NdArray, DataError> {
    if image.width == 0 || image.height == 0 {
        return Err(DataError::Decode("image has a zero dimension".into()));
    }
    if size == 0 {
        return Err(DataError::Decode("target size must be positive".into()));
    }
    let side = image.width.min(image.height);
    let (ox, oy) = ((image.width - side) / 2, (image.height - side) / 2);
    let mut planes = vec![vec![0.0; side * side]; 3];
    for y in 0..side {
        for x in 0..side {
            let px = image.get(ox + x, oy + y);
            for c in 0..3 {
                planes[c][y * side + x] = px[c] as f64 / 255.0;
            }
        }
    }
    let mut out = Vec::with_capacity(3 * size * size);
    if side == size {
        for p in planes {
            out.extend(p);
        }
    } else {
        let scale = side as f64 / size as f64;
        for p in &planes {
            for y in 0..size {
                let sy = (y as f64 + 0.5) * scale - 0.5;
                for x in 0..size {
                    let sx = (x as f64 + 0.5) * scale - 0.5;
                    out.push(bilinear(p, side, side, sx, sy));
                }
            }
        }
    }
    Ok(NdArray::from_parts(vec![3, size, size], out))
}
