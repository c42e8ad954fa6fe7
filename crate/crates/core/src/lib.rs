//! Non-network components of a depth-stratified monocular 3D detector.
//!
//! The crate covers the full path around a per-pixel, anchor-free 3D head:
//! KITTI file parsing ([`kitti_io`]), pinhole geometry and rotated
//! bird's-eye-view IoU ([`geometry`]), depth stratification and per-cell label
//! assignment ([`stratify`]), the output-space box codec ([`codec`]), loss
//! functions with analytic gradients ([`losses`]), density-aware soft-NMS
//! ([`nms`]) and KITTI-style AP evaluation ([`eval`]). The [`cli`] module wires
//! these into the `mono3d` binary.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod codec;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kitti_io;
pub mod losses;
pub mod nms;
pub mod stratify;

pub use error::{Error, Result};
