//! 8-bit grayscale images: PGM (P2/P5) and PNG decoding, PGM and PNG encoding.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::DataError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(DataError::Image(format!(
                "{width}x{height} image cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Half-open crop `[x0, x1) × [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self, DataError> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(DataError::Image(format!(
                "crop ({x0},{y0})-({x1},{y1}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut px = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            px.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x1]);
        }
        Self::new(x1 - x0, y1 - y0, px)
    }

    /// Maps `values` (row-major, `width × height`) linearly so that min → 0 and
    /// max → 255. A constant input renders black.
    pub fn from_normalized(width: usize, height: usize, values: &[f64]) -> Result<Self, DataError> {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        let range = hi - lo;
        let px = values
            .iter()
            .map(|&v| {
                if range > 0.0 {
                    ((v - lo) / range * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        Self::new(width, height, px)
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        let decoded = if bytes.starts_with(b"\x89PNG") {
            decode_png(&bytes)
        } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
            decode_pgm(&bytes)
        } else {
            Err(DataError::Image("unrecognised image format".into()))
        };
        decoded.map_err(|e| DataError::Image(format!("{}: {e}", path.display())))
    }

    /// Writes PNG when the extension is `png`, binary PGM otherwise.
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            self.write_png(path)
        } else {
            self.write_pgm(path)
        }
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), DataError> {
        let f = File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(f);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)
            .and_then(|_| w.write_all(&self.pixels))
            .and_then(|_| w.flush())
            .map_err(|e| DataError::io(path, e))
    }

    pub fn write_png(&self, path: &Path) -> Result<(), DataError> {
        let f = File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(f), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| DataError::Image(format!("{}: {e}", path.display())))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| DataError::Image(format!("{}: {e}", path.display())))
    }
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, DataError> {
    let mut dec = png::Decoder::new(bytes);
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec
        .read_info()
        .map_err(|e| DataError::Image(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DataError::Image(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let px = match info.color_type {
        png::ColorType::Grayscale => buf.to_vec(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).map(|c| c[0]).collect(),
        other => {
            return Err(DataError::Image(format!(
                "only grayscale PNG is supported, found {other:?}"
            )))
        }
    };
    GrayImage::new(w, h, px)
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, DataError> {
    let binary = bytes.starts_with(b"P5");
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::Image("malformed PGM header".into()))?;
    }
    let [w, h, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(DataError::Image(format!("unsupported PGM maxval {maxval}")));
    }
    let rescale = |v: usize| ((v * 255 + maxval / 2) / maxval) as u8;
    let px: Vec<u8> = if binary {
        let data = bytes
            .get(pos + 1..pos + 1 + w * h)
            .ok_or_else(|| DataError::Image("truncated PGM data".into()))?;
        data.iter().map(|&v| rescale(v as usize)).collect()
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| DataError::Image("non-ASCII plain PGM".into()))?;
        let vals = text
            .split_ascii_whitespace()
            .take(w * h)
            .map(|s| s.parse::<usize>().map(rescale))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| DataError::Image("malformed plain PGM data".into()))?;
        if vals.len() != w * h {
            return Err(DataError::Image("truncated PGM data".into()));
        }
        vals
    };
    GrayImage::new(w, h, px)
}
