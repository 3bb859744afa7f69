//! Plain-loop `f64` forward passes used as an independent oracle in tests.

use crate::tensor::Tensor;

use super::{ParamSet, UNet, Vgg5};

#[derive(Clone)]
pub struct Arr {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Arr {
    fn zeros(shape: [usize; 4]) -> Self {
        Arr {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        let mut shape = [1; 4];
        shape[4 - s.len()..].copy_from_slice(s);
        Arr {
            shape,
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.shape;
        self.data[((n * cc + c) * h + y) * w + x]
    }
}

/// Parameters as `f64`, in [`ParamSet`] order.
pub fn weights(p: &ParamSet) -> Vec<Vec<f64>> {
    p.tensors().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect()
}

fn conv(x: &Arr, w: &[f64], b: &[f64], o: usize, k: usize, pad: usize) -> Arr {
    let [n, c, h, wd] = x.shape;
    let (oh, ow) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
    let mut out = Arr::zeros([n, o, oh, ow]);
    for s in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let (iy, ix) = ((y + i) as isize - pad as isize, (xx + j) as isize - pad as isize);
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w[((oc * c + ic) * k + i) * k + j] * x.at(s, ic, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.data[((s * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

fn relu(mut x: Arr) -> Arr {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

fn sigmoid(mut x: Arr) -> Arr {
    x.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    x
}

fn pool(x: &Arr) -> Arr {
    let [n, c, h, w] = x.shape;
    let mut out = Arr::zeros([n, c, h / 2, w / 2]);
    for s in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(i, j)| x.at(s, ch, 2 * y + i, 2 * xx + j))
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.data[((s * c + ch) * (h / 2) + y) * (w / 2) + xx] = m;
                }
            }
        }
    }
    out
}

fn up(x: &Arr, w: &[f64], b: &[f64], o: usize) -> Arr {
    let [n, c, h, wd] = x.shape;
    let mut out = Arr::zeros([n, o, 2 * h, 2 * wd]);
    for s in 0..n {
        for oc in 0..o {
            for y in 0..2 * h {
                for xx in 0..2 * wd {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        acc += x.at(s, ic, y / 2, xx / 2) * w[((ic * o + oc) * 2 + y % 2) * 2 + xx % 2];
                    }
                    out.data[((s * o + oc) * 2 * h + y) * 2 * wd + xx] = acc;
                }
            }
        }
    }
    out
}

fn concat(a: &Arr, b: &Arr) -> Arr {
    let [n, ca, h, w] = a.shape;
    let cb = b.shape[1];
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (ca + cb) * plane);
    for s in 0..n {
        data.extend_from_slice(&a.data[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data[s * cb * plane..(s + 1) * cb * plane]);
    }
    Arr {
        shape: [n, ca + cb, h, w],
        data,
    }
}

fn dense(x: &[f64], rows: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let g = b.len();
    let f = x.len() / rows;
    let mut out = vec![0.0; rows * g];
    for r in 0..rows {
        for j in 0..g {
            out[r * g + j] = b[j] + (0..f).map(|i| x[r * f + i] * w[i * g + j]).sum::<f64>();
        }
    }
    out
}

pub fn unet(net: &UNet, w: &[Vec<f64>], x: &Arr) -> Arr {
    let c = net.config();
    let (a, b, m) = (c.stage1, c.stage2, c.bottleneck);
    let e1 = relu(conv(x, &w[0], &w[1], a, 3, 1));
    let e2 = relu(conv(&pool(&e1), &w[2], &w[3], b, 3, 1));
    let mid = relu(conv(&pool(&e2), &w[4], &w[5], m, 3, 1));
    let u = concat(&up(&mid, &w[6], &w[7], b), &e2);
    let u = relu(conv(&u, &w[8], &w[9], b, 3, 1));
    let u = concat(&up(&u, &w[10], &w[11], a), &e1);
    let u = relu(conv(&u, &w[12], &w[13], a, 3, 1));
    sigmoid(conv(&u, &w[14], &w[15], 1, 1, 0))
}

/// Logits, row-major `[N, classes]`.
pub fn vgg(net: &Vgg5, w: &[Vec<f64>], x: &Arr) -> Vec<f64> {
    let c = net.config();
    let mut h = x.clone();
    for stage in 0..3 {
        h = pool(&relu(conv(&h, &w[2 * stage], &w[2 * stage + 1], c.conv[stage], 3, 1)));
    }
    let n = h.shape[0];
    let hidden: Vec<f64> = dense(&h.data, n, &w[6], &w[7]).into_iter().map(|v| v.max(0.0)).collect();
    dense(&hidden, n, &w[8], &w[9])
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], labels: &[usize]) -> f64 {
    let k = logits.len() / labels.len();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| {
            let row = &logits[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum();
    total / labels.len() as f64
}
