use rayon::prelude::*;

use crate::data::raw_percept;
use crate::error::Result;
use crate::models::Vgg5;
use crate::phosphene::AxonMapRenderer;
use crate::tensor::{Tape, Tensor};

use super::nets::{Encoder, Surrogate};

pub const INFER_BATCH: usize = 250;

/// Rows `idx` of a row-major matrix with `width` columns.
pub fn gather(data: &[f32], width: usize, idx: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&data[i * width..(i + 1) * width]);
    }
    out
}

pub fn image_batch(images: &[f32], idx: &[usize]) -> Tensor {
    Tensor::new(&[idx.len(), 1, 28, 28], gather(images, 784, idx)).expect("784 pixels per image")
}

/// Applies `f` to consecutive row blocks and concatenates the outputs.
fn blocks(
    data: &[f32],
    width: usize,
    mut f: impl FnMut(&mut Tape, Tensor) -> Result<Vec<f32>>,
    shape: impl Fn(usize) -> Vec<usize>,
) -> Result<Vec<f32>> {
    crate::tensor::flush_denormals();
    let mut out = Vec::new();
    for chunk in data.chunks(INFER_BATCH * width) {
        let n = chunk.len() / width;
        let mut tape = Tape::new();
        out.extend(f(&mut tape, Tensor::new(&shape(n), chunk.to_vec())?)?);
    }
    Ok(out)
}

/// Flattened stimuli for `N×784` images.
pub fn encode(enc: &Encoder, images: &[f32]) -> Result<Vec<f32>> {
    blocks(
        images,
        784,
        |tape, x| {
            let b = enc.bind(tape);
            let x = tape.constant(x);
            let s = enc.forward(tape, &b, x)?;
            Ok(tape.value(s).to_vec())
        },
        |n| vec![n, 1, 28, 28],
    )
}

/// Surrogate percepts (`N×784`) for flattened stimuli.
pub fn surrogate_percepts(sur: &Surrogate, stimuli: &[f32]) -> Result<Vec<f32>> {
    let (width, image) = match sur.up {
        Some(_) => (60, false),
        None => (784, true),
    };
    blocks(
        stimuli,
        width,
        |tape, x| {
            let b = sur.bind(tape);
            let x = tape.constant(x);
            let p = sur.forward(tape, &b, x)?;
            Ok(tape.value(p).to_vec())
        },
        |n| if image { vec![n, 1, 28, 28] } else { vec![n, width] },
    )
}

pub fn logits(vgg: &Vgg5, percepts: &[f32]) -> Result<Vec<f32>> {
    blocks(
        percepts,
        784,
        |tape, x| {
            let b = vgg.bind(tape);
            let x = tape.constant(x);
            let y = vgg.forward(tape, &b, x)?;
            Ok(tape.value(y).to_vec())
        },
        |n| vec![n, 1, 28, 28],
    )
}

/// Arg-max class of each `N×784` percept.
pub fn classify(vgg: &Vgg5, percepts: &[f32]) -> Result<Vec<usize>> {
    let l = logits(vgg, percepts)?;
    Ok(l.chunks(10)
        .map(|row| (0..10).fold(0, |best, k| if row[k] > row[best] { k } else { best }))
        .collect())
}

/// True-renderer percepts for flattened stimuli, divided by a fixed
/// normalization constant and clipped to [0, 1].
pub fn render_percepts(renderer: &AxonMapRenderer, stimuli: &[f32], scale: f32) -> Vec<f32> {
    let width = renderer.grid().len();
    stimuli
        .par_chunks(width)
        .flat_map_iter(|s| {
            let clipped: Vec<f32> = s.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            raw_percept(renderer, &clipped).into_iter().map(move |v| (v / scale).clamp(0.0, 1.0))
        })
        .collect()
}
