//! Minimal reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]s. A forward pass records primitive operations
//! onto a [`Tape`], which hands out lightweight [`Var`] handles; calling
//! [`Tape::backward`] replays the adjoints in exact reverse order. Parameters
//! flagged frozen never receive gradient but still pass adjoints on to the
//! inputs of the operations that consume them.

mod adam;
pub mod gradcheck;
mod kernels;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Turns on flush-to-zero and denormals-are-zero on x86-64 for the calling
/// thread and every thread of the current rayon pool. Subnormal activations
/// and gradients otherwise slow training by an order of magnitude.
pub fn flush_denormals() {
    fn this_thread() {
        #[cfg(target_arch = "x86_64")]
        unsafe {
            let mut csr: u32 = 0;
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut csr, options(nostack));
            csr |= 0x8040;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &csr, options(nostack));
        }
    }
    this_thread();
    rayon::broadcast(|_| this_thread());
}
