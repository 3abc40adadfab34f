//! Patchification, the column-wise wave mask, the masked-autoencoder
//! generator, and the patch-level discriminator.

pub mod checkpoint;
pub mod net;
pub mod patch;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::{
    multi_head_attention, Discriminator, GenForward, Generator, MhaWeights, ModelConfig,
};
pub use patch::{
    partition_patches, patchify, positional_encoding, sample_wave_mask, sample_wave_mask_with,
    unpatchify, MaskDistribution, MaskSet, PatchGrid, PatchSeq,
};
