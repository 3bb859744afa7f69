use std::path::Path;

use crate::data::Resolution;
use crate::error::{Error, Result};
use crate::models::{Bound, Checkpoint, LinearScaler, ParamSet, ScaleDirection, UNet, UNetConfig, Vgg5, Vgg5Config};
use crate::tensor::{Tape, Tensor, Var};

/// Parameters of several sub-networks under `prefix.` names.
fn merged(parts: &[(&str, &ParamSet)]) -> ParamSet {
    let mut out = ParamSet::new();
    for (prefix, ps) in parts {
        for (name, t) in ps.iter() {
            out.push(format!("{prefix}.{name}"), t.clone());
        }
    }
    out
}

/// The parameters stored under `prefix.`, with the prefix removed.
fn part(ps: &ParamSet, prefix: &str) -> ParamSet {
    let mut out = ParamSet::new();
    let p = format!("{prefix}.");
    for (name, t) in ps.iter() {
        if let Some(rest) = name.strip_prefix(&p) {
            out.push(rest, t.clone());
        }
    }
    out
}

fn widths_meta(c: UNetConfig) -> String {
    format!("{},{},{}", c.stage1, c.stage2, c.bottleneck)
}

fn widths_from(ckpt: &Checkpoint) -> Result<UNetConfig> {
    let Some(s) = ckpt.meta("unet_widths") else {
        return Ok(UNetConfig::default());
    };
    let v: Vec<usize> = s.split(',').filter_map(|x| x.parse().ok()).collect();
    match v[..] {
        [stage1, stage2, bottleneck] => Ok(UNetConfig {
            stage1,
            stage2,
            bottleneck,
        }),
        _ => Err(Error::format(format!("bad unet_widths {s:?}"))),
    }
}

fn expect_kind(ckpt: &Checkpoint, kind: &str, path: &Path) -> Result<()> {
    match ckpt.meta("kind") {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::precondition(path, format!("expected a {kind} checkpoint, found {other:?}"))),
    }
}

fn resolution_of(ckpt: &Checkpoint) -> Result<Resolution> {
    ckpt.meta("resolution")
        .ok_or_else(|| Error::format("checkpoint lacks a resolution"))?
        .parse()
}

/// Tape handles of a two-part network.
pub struct Bindings {
    pub unet: Bound,
    pub scaler: Option<Bound>,
}

/// Image-to-percept implant model. At 6×10 a 60→784 up-scaler feeds the
/// U-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub resolution: Resolution,
    pub up: Option<LinearScaler>,
    pub unet: UNet,
    /// Raw-percept maximum of the training split the targets were divided by.
    pub percept_scale: f32,
}

impl Surrogate {
    pub fn new(resolution: Resolution, seed: u64) -> Self {
        let up = (resolution == Resolution::Argus6x10).then(|| LinearScaler::new(ScaleDirection::Up, seed ^ 0x5ca1e));
        Self {
            resolution,
            up,
            unet: UNet::new(UNetConfig::default(), seed),
            percept_scale: 1.0,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings {
            unet: self.unet.bind(tape),
            scaler: self.up.as_ref().map(|s| s.bind(tape)),
        }
    }

    /// `x` is `N×1×28×28` at 28×28 and `N×60` at 6×10.
    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<Var> {
        let x = match (&self.up, &b.scaler) {
            (Some(up), Some(p)) => {
                let n = tape.shape(x)[0];
                let y = up.forward(tape, p, x)?;
                tape.reshape(y, &[n, 1, 28, 28])?
            }
            _ => x,
        };
        self.unet.forward(tape, &b.unet, x)
    }

    pub fn params(&self) -> ParamSet {
        match &self.up {
            Some(up) => merged(&[("up", up.params()), ("unet", self.unet.params())]),
            None => merged(&[("unet", self.unet.params())]),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        if let Some(up) = &mut self.up {
            v.extend(up.params_mut().tensors_mut());
        }
        v.extend(self.unet.params_mut().tensors_mut());
        v
    }

    pub fn pull_grads(&mut self, tape: &Tape, b: &Bindings) -> Result<()> {
        if let (Some(up), Some(p)) = (&mut self.up, &b.scaler) {
            up.params_mut().pull_grads(tape, p)?;
        }
        self.unet.params_mut().pull_grads(tape, &b.unet)
    }

    pub fn freeze(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::freeze);
    }

    pub fn is_frozen(&self) -> bool {
        self.unet.params().is_frozen() && self.up.as_ref().is_none_or(|u| u.params().is_frozen())
    }

    pub fn digest(&self) -> String {
        self.params().digest()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params())
            .with_meta("kind", "surrogate")
            .with_meta("resolution", self.resolution)
            .with_meta("unet_widths", widths_meta(self.unet.config()))
            .with_meta("percept_scale", format!("{:e}", self.percept_scale))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        expect_kind(&ckpt, "surrogate", path)?;
        let resolution = resolution_of(&ckpt)?;
        let unet = UNet::from_params(widths_from(&ckpt)?, part(&ckpt.params, "unet"))?;
        let up = match resolution {
            Resolution::Argus6x10 => {
                let p = part(&ckpt.params, "up");
                if p.is_empty() {
                    return Err(Error::precondition(path, "6x10 surrogate checkpoint has no up-scaler"));
                }
                Some(LinearScaler::from_params(ScaleDirection::Up, p)?)
            }
            Resolution::Full28 => None,
        };
        let percept_scale = ckpt
            .meta("percept_scale")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("surrogate checkpoint lacks percept_scale"))?;
        Ok(Self {
            resolution,
            up,
            unet,
            percept_scale,
        })
    }
}

/// Image-to-stimulus encoder. At 6×10 a trainable 784→60 down-scaler
/// follows the U-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub resolution: Resolution,
    pub unet: UNet,
    pub down: Option<LinearScaler>,
}

impl Encoder {
    pub fn new(resolution: Resolution, seed: u64) -> Self {
        let down =
            (resolution == Resolution::Argus6x10).then(|| LinearScaler::new(ScaleDirection::Down, seed ^ 0xd0a1));
        Self {
            resolution,
            unet: UNet::new(UNetConfig::default(), seed),
            down,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings {
            unet: self.unet.bind(tape),
            scaler: self.down.as_ref().map(|s| s.bind(tape)),
        }
    }

    /// `N×1×28×28` images to `N×1×28×28` or `N×60` stimuli in (0, 1).
    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x: Var) -> Result<Var> {
        let s = self.unet.forward(tape, &b.unet, x)?;
        match (&self.down, &b.scaler) {
            (Some(down), Some(p)) => down.forward(tape, p, s),
            _ => Ok(s),
        }
    }

    pub fn params(&self) -> ParamSet {
        match &self.down {
            Some(d) => merged(&[("unet", self.unet.params()), ("down", d.params())]),
            None => merged(&[("unet", self.unet.params())]),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.unet.params_mut().tensors_mut().collect();
        if let Some(d) = &mut self.down {
            v.extend(d.params_mut().tensors_mut());
        }
        v
    }

    pub fn pull_grads(&mut self, tape: &Tape, b: &Bindings) -> Result<()> {
        self.unet.params_mut().pull_grads(tape, &b.unet)?;
        if let (Some(d), Some(p)) = (&mut self.down, &b.scaler) {
            d.params_mut().pull_grads(tape, p)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params())
            .with_meta("kind", "encoder")
            .with_meta("resolution", self.resolution)
            .with_meta("unet_widths", widths_meta(self.unet.config()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        expect_kind(&ckpt, "encoder", path)?;
        let resolution = resolution_of(&ckpt)?;
        let unet = UNet::from_params(widths_from(&ckpt)?, part(&ckpt.params, "unet"))?;
        let down = match resolution {
            Resolution::Argus6x10 => Some(LinearScaler::from_params(ScaleDirection::Down, part(&ckpt.params, "down"))?),
            Resolution::Full28 => None,
        };
        Ok(Self {
            resolution,
            unet,
            down,
        })
    }
}

pub fn classifier_checkpoint(vgg: &Vgg5) -> Checkpoint {
    Checkpoint::new(vgg.params().clone())
        .with_meta("kind", "classifier")
        .with_meta("conv_widths", format!("{:?}", vgg.config().conv))
        .with_meta("hidden", vgg.config().hidden)
}

pub fn load_classifier(path: &Path) -> Result<Vgg5> {
    let ckpt = Checkpoint::load(path)?;
    expect_kind(&ckpt, "classifier", path)?;
    Vgg5::from_params(Vgg5Config::default(), ckpt.params)
}
