//! Building blocks for turning raw images into affordance-insertion training
//! tetrads (foreground, background, position prompt, ground truth), plus the
//! diffusion-side data math and evaluation metrics.

pub mod augment;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod imageops;
pub mod inpaint_qc;
pub mod io;
pub mod mask_ops;
pub mod metrics;
pub mod prompt;
pub mod qc_filters;

pub use corpus::{mask_bbox, rle_decode, rle_encode, BBox, BinaryMask, MaskCandidate, Params, RasterImage, RleMask, TetradMeta, TetradRecord};
pub use error::{Error, Result};
pub use prompt::{PositionMap, PositionPrompt, PromptKind};
