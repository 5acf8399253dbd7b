//! 2-D spectral transforms: discrete wavelet analysis/synthesis and the
//! real-input Fourier half-spectrum, plus the learnable per-bin modulation
//! both MDAB and the adaptive Wiener loss are built on.

pub mod fourier;
pub mod wavelet;

pub use fourier::{dft2, idft2, modulate, HalfSpectrum};
pub use wavelet::{dwt2, idwt2, WaveletBands, WaveletFamily};
