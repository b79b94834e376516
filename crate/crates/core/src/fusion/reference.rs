//! Plain scalar-loop versions of the fusion operators. Slow and direct; used
//! as oracles by tests and the self-test.

use crate::tensor::{FeatureMap, LinearLayer};

use super::params::{DeformCafaParams, DenseCafaParams};

fn affine(l: &LinearLayer, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; l.out_dim];
    for i in 0..l.out_dim {
        let mut s = l.bias[i];
        for j in 0..l.in_dim {
            s += l.weight[i * l.in_dim + j] * x[j];
        }
        y[i] = s;
    }
    y
}

/// Channel `ch` at `(x, y)` from the four surrounding pixels; pixels outside
/// the map read as zero.
fn sample(map: &FeatureMap, x: f64, y: f64, ch: usize) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (r, c) = (y0 + dy, x0 + dx);
            if r >= 0.0 && c >= 0.0 && (r as usize) < map.height() && (c as usize) < map.width() {
                v += wy * wx * map.pixel(r as usize, c as usize)[ch];
            }
        }
    }
    v
}

pub fn token(img_feat: &[f64], voxel_feat: &[f64], params: &DeformCafaParams) -> Vec<f64> {
    let mapped = match &params.voxel_adapter {
        Some(a) => affine(a, voxel_feat),
        None => voxel_feat.to_vec(),
    };
    let mut prod = vec![0.0; img_feat.len()];
    for i in 0..img_feat.len() {
        prod[i] = img_feat[i] * mapped[i];
    }
    affine(&params.token_fc, &prod)
}

/// Loops over heads, points, output channels, head channels and input
/// channels without any factoring.
pub fn deform_single(map: &FeatureMap, r: [f64; 2], token: &[f64], params: &DeformCafaParams) -> Vec<f64> {
    let s = params.shape;
    let offsets = affine(&params.offset_net, token);
    let logits = affine(&params.attn_net, token);
    let mut out = vec![0.0; s.voxel_dim];
    for m in 0..s.heads {
        let mut max = f64::NEG_INFINITY;
        for k in 0..s.points {
            max = max.max(logits[m * s.points + k]);
        }
        let mut z = 0.0;
        for k in 0..s.points {
            z += (logits[m * s.points + k] - max).exp();
        }
        let wv = &params.value_proj[m];
        let wo = &params.output_proj[m];
        for i in 0..s.voxel_dim {
            let mut acc = wo.bias[i];
            for k in 0..s.points {
                let idx = m * s.points + k;
                let a = (logits[idx] - max).exp() / z;
                let x = r[0] + offsets[2 * idx];
                let y = r[1] + offsets[2 * idx + 1];
                for j in 0..s.head_dim {
                    let mut h = wv.bias[j];
                    for ch in 0..s.image_dim {
                        h += wv.weight[j * s.image_dim + ch] * sample(map, x, y, ch);
                    }
                    acc += wo.weight[i * s.head_dim + j] * a * h;
                }
            }
            out[i] += acc;
        }
    }
    out
}

pub fn deform_multilevel(
    levels: &[FeatureMap],
    refs: &[[f64; 2]],
    token: &[f64],
    params: &DeformCafaParams,
) -> Vec<f64> {
    let mut out = vec![0.0; params.shape.voxel_dim];
    for (map, r) in levels.iter().zip(refs) {
        for (o, v) in out.iter_mut().zip(deform_single(map, *r, token, params)) {
            *o += v;
        }
    }
    out.iter().map(|v| v / levels.len() as f64).collect()
}

/// Full operator with the token taken from level 0 at the level-0 reference.
pub fn deform(levels: &[FeatureMap], refs: &[[f64; 2]], voxel_feat: &[f64], params: &DeformCafaParams) -> Vec<f64> {
    let img: Vec<f64> = (0..levels[0].channels())
        .map(|ch| sample(&levels[0], refs[0][0], refs[0][1], ch))
        .collect();
    deform_multilevel(levels, refs, &token(&img, voxel_feat, params), params)
}

/// Scores with explicit key vectors (bias included), softmax, weighted value
/// vectors, output projection.
pub fn dense(map: &FeatureMap, voxel_feat: &[f64], params: &DenseCafaParams) -> Vec<f64> {
    let q = affine(&params.query, voxel_feat);
    let dk = params.key.out_dim as f64;
    let n = map.height() * map.width();
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let k = affine(&params.key, map.pixel(i / map.width(), i % map.width()));
        let mut s = 0.0;
        for j in 0..q.len() {
            s += q[j] * k[j];
        }
        scores[i] = s / dk.sqrt();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let mut agg = vec![0.0; params.value.out_dim];
    for i in 0..n {
        let a = (scores[i] - max).exp() / z;
        let v = affine(&params.value, map.pixel(i / map.width(), i % map.width()));
        for j in 0..agg.len() {
            agg[j] += a * v[j];
        }
    }
    affine(&params.output, &agg)
}
