use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::init::{kaiming_uniform, xavier_uniform, zero_bias};
use super::params::{Bound, ParamSet};

/// Channel widths of the shallow two-level U-Net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub stage1: usize,
    pub stage2: usize,
    pub bottleneck: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            stage1: 16,
            stage2: 32,
            bottleneck: 64,
        }
    }
}

impl UNetConfig {
    /// Scalar parameter count implied by the widths.
    pub fn param_count(&self) -> usize {
        let (a, b, c) = (self.stage1, self.stage2, self.bottleneck);
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        conv(1, a, 3)
            + conv(a, b, 3)
            + conv(b, c, 3)
            + conv(c, b, 2)
            + conv(2 * b, b, 3)
            + conv(b, a, 2)
            + conv(2 * a, a, 3)
            + conv(a, 1, 1)
    }
}

/// Image-to-image U-Net on `N×1×28×28`: 3×3 conv+ReLU at 28, 14 and 7
/// pixels with max-pooling between, 2×2 transposed convolutions back up,
/// skip concatenation at each resolution and a 1×1 sigmoid head.
///
/// The encoder and the surrogate implant model are both instances of this
/// type, so their parameter names and shapes are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    config: UNetConfig,
    params: ParamSet,
}

const ENC1: usize = 0;
const ENC2: usize = 2;
const MID: usize = 4;
const UP2: usize = 6;
const DEC2: usize = 8;
const UP1: usize = 10;
const DEC1: usize = 12;
const HEAD: usize = 14;

impl UNet {
    pub fn new(config: UNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let UNetConfig {
            stage1: a,
            stage2: b,
            bottleneck: c,
        } = config;
        let mut p = ParamSet::new();
        p.push("enc1.weight", kaiming_uniform(&[a, 1, 3, 3], 9, &mut rng));
        p.push("enc1.bias", zero_bias(a));
        p.push("enc2.weight", kaiming_uniform(&[b, a, 3, 3], a * 9, &mut rng));
        p.push("enc2.bias", zero_bias(b));
        p.push("mid.weight", kaiming_uniform(&[c, b, 3, 3], b * 9, &mut rng));
        p.push("mid.bias", zero_bias(c));
        p.push("up2.weight", xavier_uniform(&[c, b, 2, 2], c * 4, b * 4, &mut rng));
        p.push("up2.bias", zero_bias(b));
        p.push("dec2.weight", kaiming_uniform(&[b, 2 * b, 3, 3], 2 * b * 9, &mut rng));
        p.push("dec2.bias", zero_bias(b));
        p.push("up1.weight", xavier_uniform(&[b, a, 2, 2], b * 4, a * 4, &mut rng));
        p.push("up1.bias", zero_bias(a));
        p.push("dec1.weight", kaiming_uniform(&[a, 2 * a, 3, 3], 2 * a * 9, &mut rng));
        p.push("dec1.bias", zero_bias(a));
        p.push("head.weight", xavier_uniform(&[1, a, 1, 1], a, 1, &mut rng));
        p.push("head.bias", zero_bias(1));
        debug_assert_eq!(p.count(), config.param_count());
        Self { config, params: p }
    }

    /// Rebuilds a network from loaded parameters, checking the layout.
    pub fn from_params(config: UNetConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config, 0);
        reference.params.check_layout(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> UNetConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Sets the head bias so an untrained network outputs `mean` everywhere.
    pub fn set_output_mean(&mut self, mean: f32) {
        let m = mean.clamp(1e-3, 1.0 - 1e-3);
        self.params.tensors_mut().nth(HEAD + 1).expect("head bias").data_mut()[0] = (m / (1.0 - m)).ln();
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != 1 || s[2] != 28 || s[3] != 28 {
            return Err(Error::shape(format!("U-Net expects N×1×28×28 input, got {s:?}")));
        }
        let conv_relu = |tape: &mut Tape, x: Var, at: usize| -> Result<Var> {
            let y = tape.conv2d(x, p.get(at), p.get(at + 1), 1)?;
            Ok(tape.relu(y))
        };
        let e1 = conv_relu(tape, x, ENC1)?; // 28
        let d = tape.maxpool2x2(e1)?;
        let e2 = conv_relu(tape, d, ENC2)?; // 14
        let d = tape.maxpool2x2(e2)?;
        let m = conv_relu(tape, d, MID)?; // 7
        let u = tape.conv_transpose2x2(m, p.get(UP2), p.get(UP2 + 1))?; // 14
        let u = tape.concat_channels(u, e2)?;
        let u = conv_relu(tape, u, DEC2)?;
        let u = tape.conv_transpose2x2(u, p.get(UP1), p.get(UP1 + 1))?; // 28
        let u = tape.concat_channels(u, e1)?;
        let u = conv_relu(tape, u, DEC1)?;
        let y = tape.conv2d(u, p.get(HEAD), p.get(HEAD + 1), 0)?;
        Ok(tape.sigmoid(y))
    }
}
