use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::init::{xavier_uniform, zero_bias};
use super::params::{Bound, ParamSet};

/// Flattened 28×28 image length.
pub const IMAGE_LEN: usize = 28 * 28;
/// Flattened 6×10 electrode pattern length.
pub const ELECTRODES_6X10: usize = 6 * 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleDirection {
    /// 784 → 60, trained with the encoder.
    Down,
    /// 60 → 784, trained with the surrogate and frozen afterwards.
    Up,
}

impl ScaleDirection {
    pub fn dims(self) -> (usize, usize) {
        match self {
            ScaleDirection::Down => (IMAGE_LEN, ELECTRODES_6X10),
            ScaleDirection::Up => (ELECTRODES_6X10, IMAGE_LEN),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScaleDirection::Down => "down",
            ScaleDirection::Up => "up",
        }
    }
}

/// Fully-connected resolution change between the 28×28 image plane and
/// the 6×10 electrode grid, followed by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScaler {
    direction: ScaleDirection,
    params: ParamSet,
}

impl LinearScaler {
    pub fn new(direction: ScaleDirection, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fan_in, fan_out) = direction.dims();
        let mut params = ParamSet::new();
        params.push("weight", xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, &mut rng));
        params.push("bias", zero_bias(fan_out));
        Self { direction, params }
    }

    pub fn from_params(direction: ScaleDirection, params: ParamSet) -> Result<Self> {
        Self::new(direction, 0).params.check_layout(&params)?;
        Ok(Self { direction, params })
    }

    pub fn direction(&self) -> ScaleDirection {
        self.direction
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

    /// Maps `N×F_in` to `N×F_out` in (0, 1). Any input whose trailing axes
    /// multiply to `F_in` is flattened first.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let (fan_in, _) = self.direction.dims();
        let x = tape.flatten(x)?;
        if tape.shape(x)[1] != fan_in {
            return Err(Error::shape(format!(
                "{} scaler expects {fan_in} features, got {:?}",
                self.direction.as_str(),
                tape.shape(x)
            )));
        }
        let y = tape.dense(x, p.get(0), p.get(1))?;
        Ok(tape.sigmoid(y))
    }
}
