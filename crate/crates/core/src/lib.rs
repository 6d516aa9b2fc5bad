//! Desk-scale autonomous reconstruction: a simulated drone explores a voxel
//! world, a bag-of-words selector picks overlapping image pairs, a two-view
//! backend predicts pointmaps, global alignment fuses them into one cloud,
//! and a Gaussian-splat renderer scores the result by PSNR.

// `!(x > 0.0)` range checks are written that way to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod bow;
pub mod explore;
pub mod features;
pub mod geom;
pub mod image;
pub mod pipeline;
pub mod simworld;
pub mod splat;
pub mod twoview;
pub mod voxel;
