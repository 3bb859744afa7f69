use rand::Rng;

use crate::tensor::Tensor;

/// Kaiming-uniform over fan-in for `out×in×k×k` conv weights feeding a
/// ReLU. Each filter is shifted to zero mean: inputs here are nonnegative
/// (images or ReLU outputs), so a filter with a negative sum would start
/// dead on nearly every pixel.
pub(crate) fn kaiming_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let mut t = Tensor::uniform(shape, -bound, bound, rng);
    if shape.len() == 4 {
        let per = shape[1..].iter().product::<usize>();
        for filter in t.data_mut().chunks_mut(per) {
            let mean = filter.iter().sum::<f32>() / per as f32;
            filter.iter_mut().for_each(|w| *w -= mean);
        }
    }
    t.with_grad()
}

pub(crate) fn xavier_uniform<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
    Tensor::uniform(shape, -bound, bound, rng).with_grad()
}

/// Uniform over ±1/√fan_in, for the output layer so initial logits stay small.
pub(crate) fn fan_in_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    Tensor::uniform(shape, -bound, bound, rng).with_grad()
}

pub(crate) fn zero_bias(n: usize) -> Tensor {
    Tensor::zeros(&[n]).with_grad()
}
