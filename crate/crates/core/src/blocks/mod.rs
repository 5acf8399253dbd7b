//! Network building blocks: shared layers, multi-head attention, the
//! deblurring branch (MMG/SK/PAKB + strip self-attention), the
//! super-resolution branch (RCAB/MDAB/RAG) and the fusion/reconstruction
//! stages.

pub mod attention;
pub mod deblur;
pub mod fusion;
pub mod layers;
pub mod sr;

pub use deblur::{select_kernel, DeblurBranch, MaskTriple, Mmg, Pakb, PakbPath, PakbThresholds};
pub use fusion::{Cbff, Fff, Reconstruction};
pub use sr::{ChannelAttention, Mdab, Rag, Rcab, SrBranch};
