//! Deformable cross-attention: each voxel query samples `K` learned offsets
//! per head around its projected reference point on every pyramid level.

use crate::error::{Error, Result};
use crate::tensor::{
    bilinear_accumulate, bilinear_backward_into, bilinear_sample_grad, bilinear_sample_into, dot,
    softmax_backward, softmax_in_place, FeatureMap,
};

use super::params::DeformCafaParams;

/// Query built from a paired image and voxel feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossDomainToken {
    pub value: Vec<f64>,
}

/// Voxel feature mapped to the image width (through the adapter if present).
fn adapt_voxel(voxel_feat: &[f64], params: &DeformCafaParams) -> Result<Vec<f64>> {
    if voxel_feat.len() != params.shape.voxel_dim {
        return Err(Error::invalid(format!(
            "voxel feature has {} channels, params expect {}",
            voxel_feat.len(),
            params.shape.voxel_dim
        )));
    }
    let mapped = match &params.voxel_adapter {
        Some(a) => a.forward(voxel_feat)?,
        None => voxel_feat.to_vec(),
    };
    if mapped.len() != params.shape.image_dim {
        return Err(Error::invalid("voxel feature does not map to the image width"));
    }
    Ok(mapped)
}

/// `token_fc(img_feat ⊙ adapt(voxel_feat))`.
pub fn make_token(
    img_feat: &[f64],
    voxel_feat: &[f64],
    params: &DeformCafaParams,
) -> Result<CrossDomainToken> {
    if img_feat.len() != params.shape.image_dim {
        return Err(Error::invalid(format!(
            "image feature has {} channels, params expect {}",
            img_feat.len(),
            params.shape.image_dim
        )));
    }
    if img_feat.iter().chain(voxel_feat).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite token input"));
    }
    let mapped = adapt_voxel(voxel_feat, params)?;
    let prod: Vec<f64> = img_feat.iter().zip(&mapped).map(|(a, b)| a * b).collect();
    Ok(CrossDomainToken {
        value: params.token_fc.forward(&prod)?,
    })
}

/// Offsets and per-head normalized attention derived from a token.
struct HeadPlan {
    offsets: Vec<f64>,
    attn: Vec<f64>,
}

fn plan(params: &DeformCafaParams, token: &[f64]) -> HeadPlan {
    let k = params.shape.points;
    let mut offsets = vec![0.0; params.offset_net.out_dim];
    params.offset_net.forward_into(token, &mut offsets);
    let mut attn = vec![0.0; params.attn_net.out_dim];
    params.attn_net.forward_into(token, &mut attn);
    for head in attn.chunks_exact_mut(k) {
        softmax_in_place(head);
    }
    HeadPlan { offsets, attn }
}

fn check_token(token: &CrossDomainToken, params: &DeformCafaParams) -> Result<()> {
    if token.value.len() != params.shape.token_dim {
        return Err(Error::invalid(format!(
            "token has {} values, params expect {}",
            token.value.len(),
            params.shape.token_dim
        )));
    }
    Ok(())
}

fn check_level(map: &FeatureMap, reference: [f64; 2], params: &DeformCafaParams) -> Result<()> {
    if map.is_empty() {
        return Err(Error::invalid("empty feature map"));
    }
    if map.channels() != params.shape.image_dim {
        return Err(Error::invalid(format!(
            "feature map has {} channels, params expect {}",
            map.channels(),
            params.shape.image_dim
        )));
    }
    if !reference[0].is_finite() || !reference[1].is_finite() {
        return Err(Error::invalid("non-finite reference point"));
    }
    Ok(())
}

/// Per-head attention weights `A_mqk` (softmax over `K` within each head).
pub fn attention_weights(token: &CrossDomainToken, params: &DeformCafaParams) -> Result<Vec<f64>> {
    check_token(token, params)?;
    Ok(plan(params, &token.value).attn)
}

/// Sampling offsets in pixels, `[(m * K + k) * 2 + {dx, dy}]`.
pub fn sampling_offsets(token: &CrossDomainToken, params: &DeformCafaParams) -> Result<Vec<f64>> {
    check_token(token, params)?;
    Ok(plan(params, &token.value).offsets)
}

/// Reusable buffers for the hot path.
struct Scratch {
    agg: Vec<f64>,
    head: Vec<f64>,
}

impl Scratch {
    fn new(params: &DeformCafaParams) -> Self {
        Self {
            agg: vec![0.0; params.shape.image_dim],
            head: vec![0.0; params.shape.head_dim],
        }
    }
}

/// Adds `scale * DeformCAFA(level)` to `out`.
fn accumulate_level(
    map: &FeatureMap,
    reference: [f64; 2],
    plan: &HeadPlan,
    params: &DeformCafaParams,
    scale: f64,
    scratch: &mut Scratch,
    out: &mut [f64],
) {
    let k = params.shape.points;
    for m in 0..params.shape.heads {
        scratch.agg.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..k {
            let idx = m * k + j;
            let x = reference[0] + plan.offsets[2 * idx];
            let y = reference[1] + plan.offsets[2 * idx + 1];
            bilinear_accumulate(map, x, y, plan.attn[idx], &mut scratch.agg);
        }
        // weights sum to one per head, so the value bias passes through once
        params.value_proj[m].forward_into(&scratch.agg, &mut scratch.head);
        let w = &params.output_proj[m];
        for (i, o) in out.iter_mut().enumerate() {
            *o += scale * (w.bias[i] + dot(w.row(i), &scratch.head));
        }
    }
}

/// Deformable cross-attention on one feature map for a given token.
pub fn deform_cafa_single(
    map: &FeatureMap,
    reference: [f64; 2],
    token: &CrossDomainToken,
    params: &DeformCafaParams,
) -> Result<Vec<f64>> {
    check_token(token, params)?;
    check_level(map, reference, params)?;
    let plan = plan(params, &token.value);
    let mut out = vec![0.0; params.shape.voxel_dim];
    accumulate_level(map, reference, &plan, params, 1.0, &mut Scratch::new(params), &mut out);
    Ok(out)
}

/// Applies the same operator to every level and averages the results.
pub fn deform_cafa_multilevel(
    levels: &[FeatureMap],
    references: &[[f64; 2]],
    token: &CrossDomainToken,
    params: &DeformCafaParams,
) -> Result<Vec<f64>> {
    check_token(token, params)?;
    check_levels(levels, references, params)?;
    let plan = plan(params, &token.value);
    Ok(multilevel_with_plan(levels, references, &plan, params, &mut Scratch::new(params)))
}

fn check_levels(
    levels: &[FeatureMap],
    references: &[[f64; 2]],
    params: &DeformCafaParams,
) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("feature pyramid has no levels"));
    }
    if levels.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} levels but {} reference points",
            levels.len(),
            references.len()
        )));
    }
    for (map, r) in levels.iter().zip(references) {
        check_level(map, *r, params)?;
    }
    Ok(())
}

fn multilevel_with_plan(
    levels: &[FeatureMap],
    references: &[[f64; 2]],
    plan: &HeadPlan,
    params: &DeformCafaParams,
    scratch: &mut Scratch,
) -> Vec<f64> {
    let c = params.shape.voxel_dim;
    let mut total = vec![0.0; c];
    let mut level_out = vec![0.0; c];
    for (map, r) in levels.iter().zip(references) {
        level_out.iter_mut().for_each(|v| *v = 0.0);
        accumulate_level(map, *r, plan, params, 1.0, scratch, &mut level_out);
        for (t, v) in total.iter_mut().zip(&level_out) {
            *t += v;
        }
    }
    let n = levels.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    total
}

/// Full operator: the token is built from the level-0 image feature sampled
/// at the level-0 reference and the voxel feature, then the multi-level
/// aggregation runs with it.
pub fn deform_cafa(
    levels: &[FeatureMap],
    references: &[[f64; 2]],
    voxel_feat: &[f64],
    params: &DeformCafaParams,
) -> Result<Vec<f64>> {
    check_levels(levels, references, params)?;
    let mut img = vec![0.0; params.shape.image_dim];
    bilinear_sample_into(&levels[0], references[0][0], references[0][1], &mut img);
    let token = make_token(&img, voxel_feat, params)?;
    deform_cafa_multilevel(levels, references, &token, params)
}

/// Forward over many voxels sharing one pyramid. `voxel_feats` is row-major
/// `N x c`; the result is `N x c` in input order. Voxels are visited in
/// row-band order of their level-0 reference so neighbouring queries touch
/// neighbouring memory; each result is independent of visiting order.
pub fn deform_cafa_batch(
    levels: &[FeatureMap],
    references: &[Vec<[f64; 2]>],
    voxel_feats: &[f64],
    params: &DeformCafaParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let c = params.shape.voxel_dim;
    let d = params.shape.image_dim;
    if voxel_feats.len() != references.len() * c {
        return Err(Error::invalid("voxel feature rows do not match reference count"));
    }
    for refs in references {
        check_levels(levels, refs, params)?;
    }
    const BAND: f64 = 8.0;
    let mut order: Vec<usize> = (0..references.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (references[a][0], references[b][0]);
        (ra[1] / BAND)
            .floor()
            .total_cmp(&(rb[1] / BAND).floor())
            .then(ra[0].total_cmp(&rb[0]))
    });

    let mut out = vec![0.0; voxel_feats.len()];
    let mut scratch = Scratch::new(params);
    let mut img = vec![0.0; d];
    let mut prod = vec![0.0; d];
    let mut token = vec![0.0; params.shape.token_dim];
    let mut mapped = vec![0.0; d];
    for i in order {
        let refs = &references[i];
        let p = &voxel_feats[i * c..(i + 1) * c];
        bilinear_sample_into(&levels[0], refs[0][0], refs[0][1], &mut img);
        match &params.voxel_adapter {
            Some(a) => a.forward_into(p, &mut mapped),
            None => mapped.copy_from_slice(p),
        }
        for k in 0..d {
            prod[k] = img[k] * mapped[k];
        }
        params.token_fc.forward_into(&prod, &mut token);
        let plan = plan(params, &token);
        let row = multilevel_with_plan(levels, refs, &plan, params, &mut scratch);
        out[i * c..(i + 1) * c].copy_from_slice(&row);
    }
    Ok(out)
}

/// Gradients of `upstream · deform_cafa(...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformCafaGrads {
    pub params: DeformCafaParams,
    pub maps: Vec<FeatureMap>,
    pub voxel_feat: Vec<f64>,
}

/// Analytic backward pass of [`deform_cafa`] through the per-level
/// aggregation, the softmax, the sampling positions, the offset and
/// attention layers, the token layer and the elementwise product.
pub fn deform_cafa_backward(
    levels: &[FeatureMap],
    references: &[[f64; 2]],
    voxel_feat: &[f64],
    params: &DeformCafaParams,
    upstream: &[f64],
) -> Result<DeformCafaGrads> {
    params.validate()?;
    check_levels(levels, references, params)?;
    let s = params.shape;
    if upstream.len() != s.voxel_dim {
        return Err(Error::invalid("upstream gradient has wrong length"));
    }
    let mut grads = DeformCafaGrads {
        params: params.zeros_like(),
        maps: levels
            .iter()
            .map(|m| FeatureMap::zeros(m.height(), m.width(), m.channels()))
            .collect(),
        voxel_feat: vec![0.0; s.voxel_dim],
    };

    // forward pieces needed for the backward pass
    let mapped = adapt_voxel(voxel_feat, params)?;
    let img = {
        let mut v = vec![0.0; s.image_dim];
        bilinear_sample_into(&levels[0], references[0][0], references[0][1], &mut v);
        v
    };
    let prod: Vec<f64> = img.iter().zip(&mapped).map(|(a, b)| a * b).collect();
    let token = params.token_fc.forward(&prod)?;
    let plan = plan(params, &token);

    let level_up: Vec<f64> = upstream.iter().map(|g| g / levels.len() as f64).collect();
    let mut g_offsets = vec![0.0; plan.offsets.len()];
    let mut g_attn = vec![0.0; plan.attn.len()];
    let mut sample = vec![0.0; s.image_dim];
    let mut agg = vec![0.0; s.image_dim];
    for (l, (map, r)) in levels.iter().zip(references).enumerate() {
        for m in 0..s.heads {
            agg.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..s.points {
                let idx = m * s.points + k;
                let (x, y) = (r[0] + plan.offsets[2 * idx], r[1] + plan.offsets[2 * idx + 1]);
                bilinear_accumulate(map, x, y, plan.attn[idx], &mut agg);
            }
            let head = params.value_proj[m].forward(&agg)?;
            let g_head =
                params.output_proj[m].backward(&head, &level_up, &mut grads.params.output_proj[m]);
            let g_agg = params.value_proj[m].backward(&agg, &g_head, &mut grads.params.value_proj[m]);
            for k in 0..s.points {
                let idx = m * s.points + k;
                let (x, y) = (r[0] + plan.offsets[2 * idx], r[1] + plan.offsets[2 * idx + 1]);
                bilinear_sample_into(map, x, y, &mut sample);
                g_attn[idx] += dot(&g_agg, &sample);
                let a = plan.attn[idx];
                let g_sample: Vec<f64> = g_agg.iter().map(|g| a * g).collect();
                let (gx, gy) = bilinear_backward_into(map, x, y, &g_sample, &mut grads.maps[l]);
                g_offsets[2 * idx] += gx;
                g_offsets[2 * idx + 1] += gy;
            }
        }
    }

    let mut g_logits = vec![0.0; g_attn.len()];
    for ((gl, ga), p) in g_logits
        .chunks_exact_mut(s.points)
        .zip(g_attn.chunks_exact(s.points))
        .zip(plan.attn.chunks_exact(s.points))
    {
        gl.copy_from_slice(&softmax_backward(p, ga));
    }
    let g_tok_off = params.offset_net.backward(&token, &g_offsets, &mut grads.params.offset_net);
    let g_tok_att = params.attn_net.backward(&token, &g_logits, &mut grads.params.attn_net);
    let g_token: Vec<f64> = g_tok_off.iter().zip(&g_tok_att).map(|(a, b)| a + b).collect();

    let g_prod = params.token_fc.backward(&prod, &g_token, &mut grads.params.token_fc);
    let g_img: Vec<f64> = g_prod.iter().zip(&mapped).map(|(g, p)| g * p).collect();
    let g_mapped: Vec<f64> = g_prod.iter().zip(&img).map(|(g, f)| g * f).collect();
    bilinear_sample_grad(&levels[0], references[0][0], references[0][1], &g_img)?
        .accumulate_into(&mut grads.maps[0], &g_img);
    grads.voxel_feat = match (&params.voxel_adapter, &mut grads.params.voxel_adapter) {
        (Some(a), Some(ga)) => a.backward(voxel_feat, &g_mapped, ga),
        _ => g_mapped,
    };
    Ok(grads)
}
