use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::init::{fan_in_uniform, kaiming_uniform, xavier_uniform, zero_bias};
use super::params::{Bound, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vgg5Config {
    pub conv: [usize; 3],
    pub hidden: usize,
    pub classes: usize,
}

impl Default for Vgg5Config {
    fn default() -> Self {
        Self {
            conv: [32, 64, 128],
            hidden: 128,
            classes: 10,
        }
    }
}

impl Vgg5Config {
    /// Flattened feature length after three poolings of a 28×28 input.
    pub fn flat_features(&self) -> usize {
        self.conv[2] * 3 * 3
    }

    pub fn param_count(&self) -> usize {
        let [a, b, c] = self.conv;
        let conv = |i: usize, o: usize| i * o * 9 + o;
        conv(1, a) + conv(a, b) + conv(b, c) + self.flat_features() * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }
}

/// Small VGG-style digit classifier: three conv+ReLU+maxpool stages
/// (28→14→7→3) followed by two dense layers. Returns raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Vgg5 {
    config: Vgg5Config,
    params: ParamSet,
}

impl Vgg5 {
    pub fn new(config: Vgg5Config, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [a, b, c] = config.conv;
        let flat = config.flat_features();
        let mut p = ParamSet::new();
        p.push("conv1.weight", kaiming_uniform(&[a, 1, 3, 3], 9, &mut rng));
        p.push("conv1.bias", zero_bias(a));
        p.push("conv2.weight", kaiming_uniform(&[b, a, 3, 3], a * 9, &mut rng));
        p.push("conv2.bias", zero_bias(b));
        p.push("conv3.weight", kaiming_uniform(&[c, b, 3, 3], b * 9, &mut rng));
        p.push("conv3.bias", zero_bias(c));
        p.push("fc1.weight", xavier_uniform(&[flat, config.hidden], flat, config.hidden, &mut rng));
        p.push("fc1.bias", zero_bias(config.hidden));
        p.push(
            "fc2.weight",
            fan_in_uniform(&[config.hidden, config.classes], config.hidden, &mut rng),
        );
        p.push("fc2.bias", zero_bias(config.classes));
        debug_assert_eq!(p.count(), config.param_count());
        Self { config, params: p }
    }

    pub fn from_params(config: Vgg5Config, params: ParamSet) -> Result<Self> {
        Self::new(config, 0).params.check_layout(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> Vgg5Config {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
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
            return Err(Error::shape(format!("VGG-5 expects N×1×28×28 input, got {s:?}")));
        }
        let mut h = x;
        for stage in 0..3 {
            h = tape.conv2d(h, p.get(2 * stage), p.get(2 * stage + 1), 1)?;
            h = tape.relu(h);
            h = tape.maxpool2x2(h)?;
        }
        let h = tape.flatten(h)?;
        let h = tape.dense(h, p.get(6), p.get(7))?;
        let h = tape.relu(h);
        tape.dense(h, p.get(8), p.get(9))
    }
}
