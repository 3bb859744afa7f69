use crate::error::{Error, Result};

use super::geometry::Percept;

/// Corner-aligned bilinear resampling: output corners coincide with input
/// corners.
pub fn resize_bilinear(src: &Percept, out_h: usize, out_w: usize) -> Result<Percept> {
    let (h, w) = (src.height(), src.width());
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("cannot resize a {h}×{w} percept")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape(format!("empty output size {out_h}×{out_w}")));
    }
    let d = src.data();
    let scale = |n_in: usize, n_out: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let (sy, sx) = (scale(h, out_h), scale(w, out_w));
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let fy = i as f64 * sy;
        let y0 = (fy.floor() as usize).min(h - 2);
        let ty = (fy - y0 as f64).clamp(0.0, 1.0);
        for j in 0..out_w {
            let fx = j as f64 * sx;
            let x0 = (fx.floor() as usize).min(w - 2);
            let tx = (fx - x0 as f64).clamp(0.0, 1.0);
            let at = |y: usize, x: usize| d[y * w + x] as f64;
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    Percept::new(out_h, out_w, out)
}

/// Largest value across the batch (0 for an all-zero batch).
pub fn global_max(batch: &[Percept]) -> f32 {
    batch.iter().map(Percept::max).fold(0.0, f32::max)
}

/// Divides every percept by the batch-global maximum; an all-zero batch is
/// left as zeros. Returns the maximum used.
pub fn normalize_percepts(batch: &mut [Percept]) -> Result<f32> {
    if batch.is_empty() {
        return Err(Error::input("cannot normalize an empty batch"));
    }
    let max = global_max(batch);
    if max > 0.0 {
        for p in batch.iter_mut() {
            p.divide(max);
        }
    }
    Ok(max)
}
