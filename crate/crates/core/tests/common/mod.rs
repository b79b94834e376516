//! Independent scalar oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;

use alignfuse::fusion::{DeformCafaParams, DenseCafaParams};
use alignfuse::geometry::CameraRig;
use alignfuse::tensor::{FeatureMap, LinearLayer};
use alignfuse::voxel::{PointCloud, Voxel, VoxelConfig, VoxelSet};

pub fn affine(l: &LinearLayer, x: &[f64]) -> Vec<f64> {
    (0..l.out_dim)
        .map(|i| l.bias[i] + (0..l.in_dim).map(|j| l.weight[i * l.in_dim + j] * x[j]).sum::<f64>())
        .collect()
}

/// Tent-kernel form of zero-padded bilinear sampling: every pixel within one
/// unit contributes `max(0, 1 - |dx|) * max(0, 1 - |dy|)`.
pub fn tent_sample(map: &FeatureMap, x: f64, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; map.channels()];
    let (cx, cy) = (x.floor() as i64, y.floor() as i64);
    for r in cy - 1..=cy + 2 {
        for c in cx - 1..=cx + 2 {
            if r < 0 || c < 0 || r >= map.height() as i64 || c >= map.width() as i64 {
                continue;
            }
            let w = (1.0 - (x - c as f64).abs()).max(0.0) * (1.0 - (y - r as f64).abs()).max(0.0);
            if w > 0.0 {
                for (o, v) in out.iter_mut().zip(map.pixel(r as usize, c as usize)) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Deformable attention written head by head, point by point: value
/// projection of every sample, weighted sum, output projection, mean over
/// levels. The token uses the level-0 sample at the level-0 reference.
pub fn deform_oracle(levels: &[FeatureMap], refs: &[[f64; 2]], voxel: &[f64], p: &DeformCafaParams) -> Vec<f64> {
    let s = p.shape;
    let img = tent_sample(&levels[0], refs[0][0], refs[0][1]);
    let adapted = match &p.voxel_adapter {
        Some(a) => affine(a, voxel),
        None => voxel.to_vec(),
    };
    let prod: Vec<f64> = img.iter().zip(&adapted).map(|(a, b)| a * b).collect();
    let token = affine(&p.token_fc, &prod);
    let offsets = affine(&p.offset_net, &token);
    let logits = affine(&p.attn_net, &token);
    let mut out = vec![0.0; s.voxel_dim];
    for (map, r) in levels.iter().zip(refs) {
        for m in 0..s.heads {
            let a = softmax(&logits[m * s.points..(m + 1) * s.points]);
            let mut head = vec![0.0; s.head_dim];
            for k in 0..s.points {
                let idx = m * s.points + k;
                let smp = tent_sample(map, r[0] + offsets[2 * idx], r[1] + offsets[2 * idx + 1]);
                let v = affine(&p.value_proj[m], &smp);
                for (h, vv) in head.iter_mut().zip(v) {
                    *h += a[k] * vv;
                }
            }
            for (o, v) in out.iter_mut().zip(affine(&p.output_proj[m], &head)) {
                *o += v / levels.len() as f64;
            }
        }
    }
    out
}

/// Global attention with explicit keys: softmax(q·k/sqrt(dk)) over all pixels.
pub fn dense_oracle(map: &FeatureMap, voxel: &[f64], p: &DenseCafaParams) -> Vec<f64> {
    let q = affine(&p.query, voxel);
    let scale = (p.key.out_dim as f64).sqrt();
    let pixels: Vec<&[f64]> = (0..map.height())
        .flat_map(|r| (0..map.width()).map(move |c| (r, c)))
        .map(|(r, c)| map.pixel(r, c))
        .collect();
    let scores: Vec<f64> = pixels
        .iter()
        .map(|px| q.iter().zip(affine(&p.key, px)).map(|(a, b)| a * b).sum::<f64>() / scale)
        .collect();
    let a = softmax(&scores);
    let mut agg = vec![0.0; p.value.out_dim];
    for (w, px) in a.iter().zip(&pixels) {
        for (g, v) in agg.iter_mut().zip(affine(&p.value, px)) {
            *g += w * v;
        }
    }
    affine(&p.output, &agg)
}

/// `K · R_rect · (T · v)`, in view when depth > 1e-9 and inside the closed
/// pixel rectangle.
pub fn project(rig: &CameraRig, cam: usize, v: &[f64; 3]) -> Option<([f64; 2], f64)> {
    let c = &rig.cameras()[cam];
    let t = &c.t_cam_lidar;
    let x: Vec<f64> = (0..3).map(|i| (0..3).map(|j| t[i][j] * v[j]).sum::<f64>() + t[i][3]).collect();
    let q: Vec<f64> = (0..3).map(|i| (0..3).map(|j| c.rect_rot[i][j] * x[j]).sum()).collect();
    if q[2] <= 1e-9 {
        return None;
    }
    let u: Vec<f64> = (0..3).map(|i| (0..3).map(|j| c.intrinsics[i][j] * q[j]).sum()).collect();
    let px = [u[0] / q[2], u[1] / q[2]];
    let inside = px[0] >= 0.0
        && px[1] >= 0.0
        && px[0] <= (c.image_width - 1) as f64
        && px[1] <= (c.image_height - 1) as f64;
    inside.then_some((px, q[2]))
}

/// Projects into every camera and keeps the visible one ranked first in the
/// priority list.
pub fn select_oracle(rig: &CameraRig, v: &[f64; 3]) -> Option<(usize, [f64; 2], f64)> {
    (0..rig.len())
        .filter_map(|cam| project(rig, cam, v).map(|(px, d)| (cam, px, d)))
        .min_by_key(|(cam, _, _)| rig.priority().iter().position(|p| p == cam).unwrap())
}

/// Allocates every cell of the grid, adds points in lexicographic
/// (position, feature) order and emits the non-empty cells in index order.
pub fn dense_voxel_oracle(cloud: &PointCloud, cfg: &VoxelConfig) -> VoxelSet {
    let dims = cfg.grid_dims().unwrap();
    let fd = cloud.feature_dim();
    let total = (dims[0] * dims[1] * dims[2]) as usize;
    let mut sums = vec![vec![0.0; fd + 3]; total];
    let mut counts = vec![0usize; total];
    let key = |i: usize| -> Vec<f64> { cloud.positions()[i].iter().chain(cloud.point_features(i)).copied().collect() };
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    for i in order {
        let p = cloud.positions()[i];
        if !(0..3).all(|a| p[a] >= cfg.range_min[a] && p[a] < cfg.range_max[a]) {
            continue;
        }
        let cell: Vec<i64> = (0..3)
            .map(|a| (((p[a] - cfg.range_min[a]) / cfg.voxel_size[a]).floor() as i64).clamp(0, dims[a] - 1))
            .collect();
        let idx = ((cell[0] * dims[1] + cell[1]) * dims[2] + cell[2]) as usize;
        let center = cfg.center_of(&[cell[0], cell[1], cell[2]]);
        for (s, f) in sums[idx].iter_mut().zip(cloud.point_features(i)) {
            *s += f;
        }
        for a in 0..3 {
            sums[idx][fd + a] += p[a] - center[a];
        }
        counts[idx] += 1;
    }
    let mut voxels = Vec::new();
    for idx in 0..total {
        if counts[idx] == 0 {
            continue;
        }
        let i = idx as i64;
        let cell = [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]];
        voxels.push(Voxel {
            cell,
            center: cfg.center_of(&cell),
            feature: sums[idx].iter().map(|s| s / counts[idx] as f64).collect(),
            point_count: counts[idx],
        });
    }
    VoxelSet { feature_dim: fd + 3, voxels }
}

/// Central differences of `f` around `x`, one coordinate at a time, in place.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let fp = f(&x);
            x[i] = orig - step;
            let fm = f(&x);
            x[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// `max |a - n| / max(|a|, |n|, 1e-8)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
