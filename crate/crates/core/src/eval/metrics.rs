use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CLASSES: usize = 10;

fn check_pairs(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::input("no predictions to score"));
    }
    if preds.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if let Some(&c) = preds.iter().chain(labels).find(|&&c| c >= CLASSES) {
        return Err(Error::input(format!("class {c} outside 0..{CLASSES}")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64)
}

/// Per-class (tp, fp, fn).
fn confusion(preds: &[usize], labels: &[usize]) -> [(usize, usize, usize); CLASSES] {
    let mut c = [(0, 0, 0); CLASSES];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            c[l].0 += 1;
        } else {
            c[p].1 += 1;
            c[l].2 += 1;
        }
    }
    c
}

/// Global `TP / (TP + ½(FP + FN))` over all classes.
pub fn micro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let (tp, fp, fn_) = confusion(preds, labels)
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64))
}

/// Support-weighted mean of per-class F1 (0 for a class with
/// precision + recall = 0).
pub fn weighted_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let n = labels.len() as f64;
    Ok(confusion(preds, labels)
        .iter()
        .map(|&(tp, fp, fn_)| {
            let support = (tp + fn_) as f64;
            let f1 = if tp == 0 {
                0.0
            } else {
                let (p, r) = (tp as f64 / (tp + fp) as f64, tp as f64 / (tp + fn_) as f64);
                2.0 * p * r / (p + r)
            };
            support * f1
        })
        .sum::<f64>()
        / n)
}

fn check_images(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("images of {} and {} pixels", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::input("empty image"));
    }
    Ok(())
}

/// `10·log10(255² / MSE)` with the MSE taken on [0, 1] images;
/// `f64::INFINITY` for identical images.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    check_images(a, b)?;
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WIN] {
    let mut g = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Mean SSIM over every position where the 11×11 Gaussian window
/// (σ = 1.5) fits inside the image. Dynamic range 1.
pub fn ssim(a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    check_images(a, b)?;
    if a.len() != h * w {
        return Err(Error::shape(format!("{} pixels for a {h}×{w} image", a.len())));
    }
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::shape(format!("{h}×{w} image is smaller than the SSIM window")));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let g = gaussian_window();
    let (oh, ow) = (h - SSIM_WIN + 1, w - SSIM_WIN + 1);
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (u, gu) in g.iter().enumerate() {
                for (v, gv) in g.iter().enumerate() {
                    let k = (i + u) * w + j + v;
                    let wt = gu * gv;
                    let (x, y) = (a[k] as f64, b[k] as f64);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Raw response of the 4-neighbour Laplacian kernel with zero padding.
pub fn laplacian_response(img: &[f32], h: usize, w: usize) -> Vec<f32> {
    assert_eq!(img.len(), h * w, "image size");
    let at = |r: isize, c: isize| -> f32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img[r as usize * w + c as usize]
        }
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            out.push(at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c));
        }
    }
    out
}

/// Laplacian response min-max rescaled to [0, 1]; a constant response maps
/// to zeros.
pub fn laplacian_filter(img: &[f32], h: usize, w: usize) -> Vec<f32> {
    let r = laplacian_response(img, h, w);
    let (lo, hi) = r.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return vec![0.0; r.len()];
    }
    r.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Cosine of the angle between two vectors; 0 if either is zero.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "vector lengths");
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean pairwise cosine similarity between the flattened stimuli of each
/// pair of classes. At most `per_class` stimuli per class are drawn with a
/// seeded shuffle; diagonal entries average distinct pairs.
pub fn class_cosine_matrix(
    stimuli: &[Vec<f32>],
    labels: &[usize],
    per_class: usize,
    seed: u64,
) -> Result<[[f64; CLASSES]; CLASSES]> {
    if stimuli.len() != labels.len() {
        return Err(Error::shape(format!("{} stimuli for {} labels", stimuli.len(), labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        if l >= CLASSES {
            return Err(Error::input(format!("class {l} outside 0..{CLASSES}")));
        }
        members[l].push(i);
    }
    for (c, m) in members.iter_mut().enumerate() {
        if m.len() < 2 {
            return Err(Error::input(format!("class {c} has {} stimuli, need at least 2", m.len())));
        }
        m.shuffle(&mut rng);
        m.truncate(per_class.max(2));
    }
    let mut out = [[0.0; CLASSES]; CLASSES];
    for i in 0..CLASSES {
        for j in i..CLASSES {
            let (mut sum, mut n) = (0.0, 0usize);
            for (x, &a) in members[i].iter().enumerate() {
                let partners = if i == j { &members[j][x + 1..] } else { &members[j][..] };
                for &b in partners {
                    sum += cosine_similarity(&stimuli[a], &stimuli[b]);
                    n += 1;
                }
            }
            out[i][j] = sum / n as f64;
            out[j][i] = out[i][j];
        }
    }
    Ok(out)
}

/// Mean of the diagonal and mean of the off-diagonal entries.
pub fn diagonal_contrast(m: &[[f64; CLASSES]; CLASSES]) -> (f64, f64) {
    let diag: f64 = (0..CLASSES).map(|i| m[i][i]).sum::<f64>() / CLASSES as f64;
    let off: f64 = (0..CLASSES)
        .flat_map(|i| (0..CLASSES).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j])
        .sum::<f64>()
        / (CLASSES * (CLASSES - 1)) as f64;
    (diag, off)
}
