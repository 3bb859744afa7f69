//! Network architectures, parameter bookkeeping and checkpoints.

mod checkpoint;
mod init;
mod params;
mod scaler;
mod unet;
mod vgg;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use params::{Bound, ParamSet};
pub use scaler::{LinearScaler, ScaleDirection, ELECTRODES_6X10, IMAGE_LEN};
pub use unet::{UNet, UNetConfig};
pub use vgg::{Vgg5, Vgg5Config};

#[cfg(test)]
mod reference;
