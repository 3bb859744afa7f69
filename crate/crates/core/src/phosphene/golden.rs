//! `PCPT0001`: magic, then little-endian u32 count, height, width, then
//! `count·height·width` little-endian f32 values.

use std::path::Path;

use crate::error::{Error, Result};

pub const PCPT_MAGIC: &[u8; 8] = b"PCPT0001";

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<f32>>,
}

impl FrameSet {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let plane = self.height * self.width;
        if let Some(f) = self.frames.iter().find(|f| f.len() != plane) {
            return Err(Error::shape(format!(
                "frame of {} values in a {}×{} set",
                f.len(),
                self.height,
                self.width
            )));
        }
        let mut out = Vec::with_capacity(20 + 4 * plane * self.frames.len());
        out.extend_from_slice(PCPT_MAGIC);
        for v in [self.frames.len(), self.height, self.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for f in &self.frames {
            for v in f {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != PCPT_MAGIC {
            return Err(Error::format("not a PCPT0001 file"));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (count, height, width) = (u(0), u(1), u(2));
        let plane = height * width;
        if bytes.len() != 20 + 4 * count * plane {
            return Err(Error::format(format!(
                "PCPT0001 payload is {} bytes, header implies {}",
                bytes.len() - 20,
                4 * count * plane
            )));
        }
        let values: Vec<f32> = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let frames = values.chunks(plane.max(1)).take(count).map(<[f32]>::to_vec).collect();
        Ok(Self { height, width, frames })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::precondition(path, "golden file not found"),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// Normalized cross-correlation of two equally sized images (Pearson
/// correlation of the pixel values).
pub fn normalized_cross_correlation(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("cannot correlate {} with {} values", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numeric("correlation of a constant image".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
