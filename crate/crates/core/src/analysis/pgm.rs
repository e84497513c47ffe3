//! Binary PGM (`P5`) and PPM (`P6`) images, 8-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn black(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// Copies `tile` with its top-left corner at `(x, y)`.
    pub fn blit(&mut self, tile: &GrayImage, x: usize, y: usize) {
        for r in 0..tile.height {
            let dst = (y + r) * self.width + x;
            self.pixels[dst..dst + tile.width]
                .copy_from_slice(&tile.pixels[r * tile.width..(r + 1) * tile.width]);
        }
    }
}

fn header_err(path: &Path, offset: usize, detail: &str) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail: detail.to_string(),
    }
}

/// Reads a `P5` or `P6` file into a single-sample map scaled to `[0, 1]`.
pub fn read_netpbm(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes).map_err(|(offset, detail)| header_err(path, offset, &detail))
}

pub fn decode_netpbm(bytes: &[u8]) -> std::result::Result<FeatureMap, (usize, String)> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err((0, "expected P5 or P6 magic".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err((pos, "truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start, "expected a decimal header field".to_string()))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err((pos, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * channels;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or((bytes.len(), format!("raster needs {need} bytes")))?;
    let values = raster.iter().map(|&b| b as f64 / maxval as f64).collect();
    FeatureMap::from_vec(1, h, w, channels, values).map_err(|e| (pos, e.to_string()))
}

/// Writes channel `ch` of sample `b` as an image, min-max scaled; an
/// all-zero plane is black and any other constant plane mid-gray.
pub fn normalized_tile(map: &FeatureMap, b: usize, ch: usize) -> GrayImage {
    let plane = map.channel_plane(b, ch);
    let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi > lo {
        plane
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else if plane.iter().all(|&v| v == 0.0) {
        vec![0; plane.len()]
    } else {
        vec![128; plane.len()]
    };
    GrayImage {
        width: map.w,
        height: map.h,
        pixels,
    }
}
