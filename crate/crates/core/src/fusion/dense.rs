//! Dense cross-attention baseline: every voxel attends to every pixel.

use crate::error::{Error, Result};
use crate::tensor::{dot, FeatureMap};

use super::params::DenseCafaParams;

fn check(map: &FeatureMap, params: &DenseCafaParams) -> Result<()> {
    if map.is_empty() {
        return Err(Error::invalid("empty feature map"));
    }
    params.validate(map.channels(), params.output.out_dim)
}

/// Key projection folded into the query: `score_i = (W_kᵀ q) · f_i / √d_k`.
/// The key bias adds the same constant to every score and cancels in the
/// softmax, so it is dropped here.
fn folded_query(voxel_feat: &[f64], params: &DenseCafaParams, out: &mut [f64]) {
    let q = params.query.forward(voxel_feat).expect("shape checked");
    let scale = 1.0 / (params.key.out_dim as f64).sqrt();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, qj) in q.iter().enumerate() {
        let s = qj * scale;
        for (o, w) in out.iter_mut().zip(params.key.row(j)) {
            *o += s * w;
        }
    }
}

const INV_LN2: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
// adding 1.5 * 2^52 rounds to the nearest integer in the low mantissa bits
const SHIFT: f64 = 6_755_399_441_055_744.0;
// Taylor coefficients 1/13! .. 1/0!, highest first
const TAYLOR: [f64; 14] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
    1.0,
    1.0,
];

/// `exp(x)` for `x <= 0`, within a few ulp of `f64::exp`. Branch-free so
/// the softmax loops vectorize. Inputs below -700 are clamped; their weights
/// are below 1e-304 of the maximum term.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    exp_lanes([x])[0]
}

/// `L` lanes of [`exp_nonpositive`] in lockstep: the Horner chains are
/// independent, so they overlap and map onto vector registers.
#[inline(always)]
fn exp_lanes<const L: usize>(x: [f64; L]) -> [f64; L] {
    let mut r = [0.0; L];
    let mut scale = [0.0; L];
    for i in 0..L {
        let x = if x[i] < -700.0 { -700.0 } else { x[i] };
        let t = x * INV_LN2 + SHIFT;
        let nf = t - SHIFT;
        r[i] = (x - nf * LN2_HI) - nf * LN2_LO;
        // the low 12 bits of `t` hold n mod 2^12; n + 1023 lands in the
        // exponent field for every n in [-1010, 0]
        scale[i] = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    }
    // Taylor series to r^13 on |r| <= ln2 / 2
    let mut p = [TAYLOR[0]; L];
    for c in &TAYLOR[1..] {
        for i in 0..L {
            p[i] = p[i] * r[i] + c;
        }
    }
    for i in 0..L {
        p[i] *= scale[i];
    }
    p
}

/// `v[i] = exp(v[i] - shift)` for `v[i] <= shift`, eight lanes per step.
#[inline(always)]
fn exp_shifted_in_place(v: &mut [f64], shift: f64) {
    const L: usize = 8;
    let mut chunks = v.chunks_exact_mut(L);
    for c in &mut chunks {
        let mut x = [0.0; L];
        for (x, v) in x.iter_mut().zip(c.iter()) {
            *x = v - shift;
        }
        c.copy_from_slice(&exp_lanes(x));
    }
    for s in chunks.into_remainder() {
        *s = exp_nonpositive(*s - shift);
    }
}

/// Normalized attention weights over all pixels, two passes.
fn attention(map: &FeatureMap, qk: &[f64]) -> Vec<f64> {
    let d = map.channels();
    let mut scores: Vec<f64> = map.data().chunks_exact(d).map(|f| dot(qk, f)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for s in scores.iter_mut() {
        *s = exp_nonpositive(*s - max);
    }
    let inv = 1.0 / sum(&scores);
    scores.iter_mut().for_each(|v| *v *= inv);
    scores
}

/// Four-way split accumulation.
#[inline(always)]
fn sum(v: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = v.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for i in 0..4 {
            acc[i] += c[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Voxels sharing one pass over the map.
const VOXEL_BLOCK: usize = 32;
/// Pixels per tile; a tile of 8-channel pixels stays in L2.
const PIXEL_TILE: usize = 1024;

/// Streaming softmax state of one voxel: running max, running normalizer
/// and unnormalized weighted pixel sum, all relative to `max`.
struct Running {
    max: f64,
    total: f64,
    agg: Vec<f64>,
}

impl Running {
    fn absorb(&mut self, tile: &[f64], cols: &[f64], d: usize, qk: &[f64], scores: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { absorb_avx2(self, tile, cols, d, qk, scores) };
            return;
        }
        absorb_tile(self, tile, cols, d, qk, scores);
    }
}

/// Channel-major copy of a pixel-major tile, so per-pixel scores vectorize
/// across pixels.
fn transpose(tile: &[f64], d: usize, cols: &mut Vec<f64>) {
    let n = tile.len() / d;
    cols.resize(n * d, 0.0);
    for (i, f) in tile.chunks_exact(d).enumerate() {
        for (c, v) in f.iter().enumerate() {
            cols[c * n + i] = *v;
        }
    }
}

/// Same code as [`absorb_tile`], compiled for wider vectors. No fused
/// multiply-add is enabled, so results are bit-identical to the baseline.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn absorb_avx2(st: &mut Running, tile: &[f64], cols: &[f64], d: usize, qk: &[f64], scores: &mut [f64]) {
    absorb_tile(st, tile, cols, d, qk, scores);
}

#[inline(always)]
fn absorb_tile(st: &mut Running, tile: &[f64], cols: &[f64], d: usize, qk: &[f64], scores: &mut [f64]) {
    let n = tile.len() / d;
    let scores = &mut scores[..n];
    scores.iter_mut().for_each(|s| *s = 0.0);
    for (q, col) in qk.iter().zip(cols.chunks_exact(n)) {
        for (s, f) in scores.iter_mut().zip(col) {
            *s += q * f;
        }
    }
    let tile_max = max(scores);
    if tile_max > st.max {
        if st.total > 0.0 {
            let r = exp_nonpositive(st.max - tile_max);
            st.total *= r;
            st.agg.iter_mut().for_each(|v| *v *= r);
        }
        st.max = tile_max;
    }
    exp_shifted_in_place(scores, st.max);
    st.total += sum(scores);
    if d == 8 {
        // fixed width keeps the accumulator in registers
        let mut acc = [0.0; 8];
        acc.copy_from_slice(&st.agg);
        for (e, f) in scores.iter().zip(tile.chunks_exact(8)) {
            for c in 0..8 {
                acc[c] += e * f[c];
            }
        }
        st.agg.copy_from_slice(&acc);
    } else {
        for (e, f) in scores.iter().zip(tile.chunks_exact(d)) {
            for (a, v) in st.agg.iter_mut().zip(f) {
                *a += e * v;
            }
        }
    }
}

/// Four-lane maximum (scores are never NaN here).
#[inline(always)]
fn max(v: &[f64]) -> f64 {
    let mut m = [f64::NEG_INFINITY; 4];
    let chunks = v.chunks_exact(4);
    let tail = chunks.remainder().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for c in chunks {
        for i in 0..4 {
            m[i] = if c[i] > m[i] { c[i] } else { m[i] };
        }
    }
    m.iter().copied().fold(tail, f64::max)
}

fn check_voxel(voxel_feat: &[f64], params: &DenseCafaParams) -> Result<()> {
    if voxel_feat.len() != params.query.in_dim {
        return Err(Error::invalid(format!(
            "voxel feature has {} channels, params expect {}",
            voxel_feat.len(),
            params.query.in_dim
        )));
    }
    if voxel_feat.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite voxel feature"));
    }
    Ok(())
}

/// Attention weights over all `h * w` pixels, row-major.
pub fn dense_attention_weights(
    map: &FeatureMap,
    voxel_feat: &[f64],
    params: &DenseCafaParams,
) -> Result<Vec<f64>> {
    check(map, params)?;
    check_voxel(voxel_feat, params)?;
    let mut qk = vec![0.0; map.channels()];
    folded_query(voxel_feat, params, &mut qk);
    Ok(attention(map, &qk))
}

/// `output(value(Σ_i a_i f_i))`; the value projection commutes with the
/// weighted sum because the weights sum to one.
pub fn dense_cafa(map: &FeatureMap, voxel_feat: &[f64], params: &DenseCafaParams) -> Result<Vec<f64>> {
    dense_cafa_batch(map, voxel_feat, params)
}

/// Row-major `N x c` voxel features in, `N x c` out. Blocks of voxels walk
/// the map tile by tile with a streaming softmax, so each tile is read from
/// memory once per block rather than once per voxel.
pub fn dense_cafa_batch(
    map: &FeatureMap,
    voxel_feats: &[f64],
    params: &DenseCafaParams,
) -> Result<Vec<f64>> {
    check(map, params)?;
    let c = params.query.in_dim;
    if !voxel_feats.len().is_multiple_of(c) {
        return Err(Error::invalid("voxel feature buffer is not a multiple of c"));
    }
    let d = map.channels();
    let mut scores = vec![0.0; PIXEL_TILE];
    let mut cols = Vec::with_capacity(PIXEL_TILE * d);
    let mut val = vec![0.0; params.value.out_dim];
    let mut out = vec![0.0; voxel_feats.len()];
    for (block, out_block) in voxel_feats
        .chunks(VOXEL_BLOCK * c)
        .zip(out.chunks_mut(VOXEL_BLOCK * c))
    {
        let mut queries = Vec::with_capacity(block.len() / c);
        let mut states = Vec::with_capacity(block.len() / c);
        for p in block.chunks_exact(c) {
            check_voxel(p, params)?;
            let mut qk = vec![0.0; d];
            folded_query(p, params, &mut qk);
            queries.push(qk);
            states.push(Running {
                max: f64::NEG_INFINITY,
                total: 0.0,
                agg: vec![0.0; d],
            });
        }
        for tile in map.data().chunks(PIXEL_TILE * d) {
            transpose(tile, d, &mut cols);
            for (st, qk) in states.iter_mut().zip(&queries) {
                st.absorb(tile, &cols, d, qk, &mut scores);
            }
        }
        for (st, o) in states.iter_mut().zip(out_block.chunks_exact_mut(c)) {
            let inv = 1.0 / st.total;
            st.agg.iter_mut().for_each(|v| *v *= inv);
            params.value.forward_into(&st.agg, &mut val);
            params.output.forward_into(&val, o);
        }
    }
    Ok(out)
}
