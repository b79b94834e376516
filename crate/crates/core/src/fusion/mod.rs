//! Voxel/image fusion: the deformable cross-attention operator, the dense
//! baseline, image-level dropout and whole-scene fusion.

mod deform;
mod dense;
mod params;
pub mod reference;

pub use deform::{
    attention_weights, deform_cafa, deform_cafa_backward, deform_cafa_batch, deform_cafa_multilevel,
    deform_cafa_single, make_token, sampling_offsets, CrossDomainToken, DeformCafaGrads,
};
pub use dense::{dense_attention_weights, dense_cafa, dense_cafa_batch};
pub use params::{CafaShape, DeformCafaParams, DenseCafaParams, DCFA_MAGIC, DCFA_VERSION};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{select_camera, CameraRig};
use crate::scene::FeaturePyramid;
use crate::tensor::{read_file, read_u32, write_file};
use crate::voxel::{Voxel, VoxelSet};

/// Per-camera keep flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
}

impl DropoutMask {
    pub fn all(camera_count: usize) -> Self {
        Self {
            keep: vec![true; camera_count],
        }
    }

    pub fn none(camera_count: usize) -> Self {
        Self {
            keep: vec![false; camera_count],
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// Keeps a uniformly random `keep_count`-subset of cameras.
pub fn make_dropout_mask(camera_count: usize, keep_count: usize, seed: u64) -> Result<DropoutMask> {
    if keep_count > camera_count {
        return Err(Error::invalid(format!(
            "keep_count {keep_count} exceeds camera count {camera_count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = DropoutMask::none(camera_count);
    for i in rand::seq::index::sample(&mut rng, camera_count, keep_count) {
        mask.keep[i] = true;
    }
    Ok(mask)
}

/// Where a voxel's image contribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    /// Aggregated from this camera.
    Camera(usize),
    /// Seen by this camera, but the camera was dropped.
    Dropped(usize),
    /// No camera sees the voxel center.
    OutOfView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedVoxelSet {
    pub voxels: VoxelSet,
    /// `voxel_feat + image contribution`, one row per voxel.
    pub fused: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
}

impl FusedVoxelSet {
    /// Image contribution of voxel `i` (`fused - voxel_feat`).
    pub fn contribution(&self, i: usize) -> Vec<f64> {
        self.fused[i]
            .iter()
            .zip(&self.voxels.voxels[i].feature)
            .map(|(f, v)| f - v)
            .collect()
    }

    pub fn contribution_norm(&self, i: usize) -> f64 {
        match self.provenance[i] {
            Provenance::Camera(_) => self.contribution(i).iter().map(|v| v * v).sum::<f64>().sqrt(),
            _ => 0.0,
        }
    }

    /// `FVOX` little-endian: magic, u32 version, u32 count, u32 width `c`,
    /// then per voxel: 3 x i64 cell, 3 x f64 center, u32 point count,
    /// u32 provenance kind (0 camera, 1 dropped, 2 out of view), u32 camera
    /// (`u32::MAX` if none), `c` x f64 voxel feature, `c` x f64 fused feature.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.voxels.feature_dim;
        let mut b = Vec::with_capacity(16 + self.voxels.len() * (64 + 16 * c));
        b.extend_from_slice(FVOX_MAGIC);
        for v in [FVOX_VERSION, self.voxels.len() as u32, c as u32] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for ((v, f), p) in self.voxels.voxels.iter().zip(&self.fused).zip(&self.provenance) {
            for x in v.cell {
                b.extend_from_slice(&x.to_le_bytes());
            }
            for x in v.center {
                b.extend_from_slice(&x.to_le_bytes());
            }
            let (kind, cam) = match *p {
                Provenance::Camera(c) => (0u32, c as u32),
                Provenance::Dropped(c) => (1, c as u32),
                Provenance::OutOfView => (2, u32::MAX),
            };
            for x in [v.point_count as u32, kind, cam] {
                b.extend_from_slice(&x.to_le_bytes());
            }
            for x in v.feature.iter().chain(f) {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::format("truncated or corrupt FVOX data");
        if bytes.len() < 16 || &bytes[..4] != FVOX_MAGIC {
            return Err(Error::format("missing FVOX header"));
        }
        let u32_at = |o: usize| read_u32(&bytes[o..o + 4]);
        if u32_at(4) != FVOX_VERSION {
            return Err(Error::format(format!("unsupported FVOX version {}", u32_at(4))));
        }
        let (n, c) = (u32_at(8) as usize, u32_at(12) as usize);
        let rec = 24 + 24 + 12 + 16 * c;
        if bytes.len() != 16 + n.checked_mul(rec).ok_or_else(bad)? {
            return Err(bad());
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let mut out = FusedVoxelSet {
            voxels: VoxelSet { feature_dim: c, voxels: Vec::with_capacity(n) },
            fused: Vec::with_capacity(n),
            provenance: Vec::with_capacity(n),
        };
        for i in 0..n {
            let o = 16 + i * rec;
            let cell = [0, 1, 2].map(|a| i64::from_le_bytes(bytes[o + 8 * a..o + 8 * a + 8].try_into().expect("8 bytes")));
            let center = [0, 1, 2].map(|a| f64_at(o + 24 + 8 * a));
            let (count, kind, cam) = (u32_at(o + 48), u32_at(o + 52), u32_at(o + 56) as usize);
            let feats: Vec<f64> = (0..2 * c).map(|k| f64_at(o + 60 + 8 * k)).collect();
            out.provenance.push(match kind {
                0 => Provenance::Camera(cam),
                1 => Provenance::Dropped(cam),
                2 => Provenance::OutOfView,
                _ => return Err(Error::format(format!("bad provenance kind {kind}"))),
            });
            out.voxels.voxels.push(Voxel {
                cell,
                center,
                feature: feats[..c].to_vec(),
                point_count: count as usize,
            });
            out.fused.push(feats[c..].to_vec());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub const FVOX_MAGIC: &[u8; 4] = b"FVOX";
pub const FVOX_VERSION: u32 = 1;

fn fuse_one(
    voxels: &VoxelSet,
    i: usize,
    pyramids: &[Option<FeaturePyramid>],
    rig: &CameraRig,
    params: &DeformCafaParams,
    mask: &DropoutMask,
) -> Result<(Vec<f64>, Provenance)> {
    let v = &voxels.voxels[i];
    let Some(hit) = select_camera(rig, &v.center)? else {
        return Ok((v.feature.clone(), Provenance::OutOfView));
    };
    let cam = hit.camera_index;
    if !mask.keep[cam] {
        return Ok((v.feature.clone(), Provenance::Dropped(cam)));
    }
    let pyr = pyramids[cam].as_ref().expect("checked by caller");
    let refs: Vec<[f64; 2]> = pyr
        .scales
        .iter()
        .map(|s| [hit.pixel[0] * s, hit.pixel[1] * s])
        .collect();
    let img = deform_cafa(&pyr.levels, &refs, &v.feature, params)?;
    let fused = v.feature.iter().zip(&img).map(|(a, b)| a + b).collect();
    Ok((fused, Provenance::Camera(cam)))
}

fn check_fuse_inputs(
    voxels: &VoxelSet,
    pyramids: &[Option<FeaturePyramid>],
    rig: &CameraRig,
    params: &DeformCafaParams,
    mask: &DropoutMask,
) -> Result<()> {
    params.validate()?;
    if mask.len() != rig.len() {
        return Err(Error::config("dropout_mask", format!("{} flags for {} cameras", mask.len(), rig.len())));
    }
    if pyramids.len() != rig.len() {
        return Err(Error::config("pyramids", format!("{} entries for {} cameras", pyramids.len(), rig.len())));
    }
    for (cam, keep) in mask.keep.iter().enumerate() {
        if !keep {
            continue;
        }
        let Some(p) = &pyramids[cam] else {
            return Err(Error::config("pyramids", format!("camera {cam} is kept but has no pyramid")));
        };
        crate::geometry::validate_scales(&p.scales)?;
        if p.levels.len() != p.scales.len() {
            return Err(Error::config("pyramids", format!("camera {cam}: levels and scales differ in length")));
        }
    }
    if voxels.feature_dim != params.shape.voxel_dim {
        return Err(Error::config(
            "params",
            format!(
                "voxel features have {} channels, params expect {}",
                voxels.feature_dim,
                params.shape.voxel_dim
            ),
        ));
    }
    Ok(())
}

/// Enriches every voxel with the deformable aggregation from the camera that
/// sees its center. Dropped cameras and out-of-view voxels contribute zero,
/// leaving the voxel feature untouched.
pub fn fuse_scene(
    voxels: &VoxelSet,
    pyramids: &[Option<FeaturePyramid>],
    rig: &CameraRig,
    params: &DeformCafaParams,
    mask: &DropoutMask,
) -> Result<FusedVoxelSet> {
    check_fuse_inputs(voxels, pyramids, rig, params, mask)?;
    let rows = (0..voxels.len())
        .map(|i| fuse_one(voxels, i, pyramids, rig, params, mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(voxels, rows))
}

/// Same result as [`fuse_scene`], voxels processed on the rayon pool.
pub fn fuse_scene_parallel(
    voxels: &VoxelSet,
    pyramids: &[Option<FeaturePyramid>],
    rig: &CameraRig,
    params: &DeformCafaParams,
    mask: &DropoutMask,
) -> Result<FusedVoxelSet> {
    check_fuse_inputs(voxels, pyramids, rig, params, mask)?;
    let rows = (0..voxels.len())
        .into_par_iter()
        .map(|i| fuse_one(voxels, i, pyramids, rig, params, mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(voxels, rows))
}

fn assemble(voxels: &VoxelSet, rows: Vec<(Vec<f64>, Provenance)>) -> FusedVoxelSet {
    let (fused, provenance) = rows.into_iter().unzip();
    FusedVoxelSet {
        voxels: voxels.clone(),
        fused,
        provenance,
    }
}
