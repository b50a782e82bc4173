//! Dense real/complex tensors, unitary 2D FFT, and seeded Gaussian sampling.

mod fft;
mod rng;
mod tensor;

pub use fft::{fft2, ifft2, ComplexImage};
pub use rng::{gaussian, Rng};
pub use tensor::ImageTensor;
