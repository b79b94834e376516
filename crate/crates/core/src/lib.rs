//! LiDAR/camera feature alignment toolkit: projection geometry, dynamic
//! voxelization, deformable cross-attention fusion, depth-aware ground-truth
//! augmentation, synthetic scenes and a complexity benchmark.

pub mod augment;
pub mod bench;
pub mod cli;
pub mod boxes;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod scene;
pub mod seed;
pub mod selftest;
pub mod tensor;
pub mod voxel;

pub use error::{Error, Result};
