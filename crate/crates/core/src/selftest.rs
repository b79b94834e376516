//! Built-in numerical self-checks. Every check is deterministic, so two runs
//! print the same report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{composite_depth_ordered, PastePatch, PatchBounds};
use crate::error::Result;
use crate::fusion::{
    attention_weights, deform_cafa, deform_cafa_backward, dense_cafa, fuse_scene, make_token, reference,
    CafaShape, DeformCafaParams, DenseCafaParams, DropoutMask,
};
use crate::geometry::{select_camera, CameraRig};
use crate::scene::{generate_pyramid, generate_scene, SceneConfig};
use crate::tensor::{bilinear_sample, bilinear_sample_grad, dot, finite_diff_check, FeatureMap};
use crate::voxel::{voxelize, PointCloud, VoxelConfig};

const GRAD_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-10;

/// Deliberate corruption used to prove that a check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs the analytic gradient of the offset layer.
    OffsetGrad,
}

impl std::str::FromStr for Fault {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "offset-grad" => Ok(Fault::OffsetGrad),
            _ => Err(format!("unknown fault `{s}` (known: offset-grad)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub checks: Vec<Check>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{tag} {:<34} {}\n", c.name, c.detail));
        }
        let n = self.checks.iter().filter(|c| c.passed).count();
        s.push_str(&format!("{n}/{} checks passed\n", self.checks.len()));
        s
    }
}

struct Collector(Vec<Check>);

impl Collector {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.0.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn error_below(&mut self, name: impl Into<String>, err: f64, tol: f64) {
        self.push(name, err < tol, format!("max error {err:.3e} (tol {tol:.0e})"));
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run(fault: Option<Fault>) -> Result<SelfTestReport> {
    let mut c = Collector(Vec::new());
    bilinear_checks(&mut c)?;
    gradient_checks(&mut c, fault)?;
    oracle_checks(&mut c)?;
    composite_checks(&mut c)?;
    geometry_checks(&mut c)?;
    pipeline_checks(&mut c)?;
    Ok(SelfTestReport { checks: c.0 })
}

fn bilinear_checks(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let map = FeatureMap::random(7, 9, 3, &mut rng);
    let mut err: f64 = 0.0;
    for r in 0..7 {
        for col in 0..9 {
            let s = bilinear_sample(&map, col as f64, r as f64)?;
            err = err.max(max_abs_diff(&s, map.pixel(r, col)));
        }
    }
    for _ in 0..50 {
        let (x, y): (f64, f64) = (rng.gen_range(0.0..8.0), rng.gen_range(0.0..6.0));
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let px = |r: usize, cc: usize| map.pixel(r, cc).to_vec();
        let want: Vec<f64> = (0..3)
            .map(|ch| {
                (1.0 - fx) * (1.0 - fy) * px(y0, x0)[ch]
                    + fx * (1.0 - fy) * px(y0, x0 + 1)[ch]
                    + (1.0 - fx) * fy * px(y0 + 1, x0)[ch]
                    + fx * fy * px(y0 + 1, x0 + 1)[ch]
            })
            .collect();
        err = err.max(max_abs_diff(&bilinear_sample(&map, x, y)?, &want));
    }
    let outside = bilinear_sample(&map, -3.0, 20.0)?;
    c.error_below("bilinear.interior", err, 1e-12);
    c.push(
        "bilinear.outside_is_zero",
        outside.iter().all(|v| *v == 0.0),
        "sample far outside the map",
    );

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (x, y) = (rng.gen_range(-1.5..9.5), rng.gen_range(-1.5..7.5));
        let up = rand_vec(&mut rng, 3);
        let g = bilinear_sample_grad(&map, x, y, &up)?;
        let r = finite_diff_check(
            |p| dot(&bilinear_sample(&map, p[0], p[1]).unwrap(), &up),
            &[x, y],
            &[g.grad_x, g.grad_y],
            1e-6,
        )?;
        // kinks at integer coordinates are measure-zero; skip samples too close
        if (x - x.round()).abs() > 1e-4 && (y - y.round()).abs() > 1e-4 {
            worst = worst.max(r.max_relative_error);
        }
    }
    c.error_below("bilinear.position_gradient", worst, GRAD_TOL);
    Ok(())
}

fn gradient_checks(c: &mut Collector, fault: Option<Fault>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = CafaShape::standard(8, 8);
    let p = DeformCafaParams::random(shape, 2.0, &mut rng)?;
    let levels = vec![FeatureMap::random(12, 12, 8, &mut rng), FeatureMap::random(6, 6, 8, &mut rng)];
    let r0 = [5.3, 6.7];
    let refs = [r0, [r0[0] / 2.0, r0[1] / 2.0]];
    let v = rand_vec(&mut rng, 8);
    let up = rand_vec(&mut rng, 8);
    let mut g = deform_cafa_backward(&levels, &refs, &v, &p, &up)?;
    if fault == Some(Fault::OffsetGrad) {
        for w in &mut g.params.offset_net.weight {
            *w = *w * 1.5 + 1e-3;
        }
    }
    let loss = |p: &DeformCafaParams, levels: &[FeatureMap], v: &[f64]| {
        deform_cafa(levels, &refs, v, p).map(|o| dot(&o, &up)).unwrap_or(f64::NAN)
    };
    let names: Vec<String> = p.layers().into_iter().map(|(n, _)| n).collect();
    for (li, name) in names.iter().enumerate() {
        let layer = p.layers()[li].1.clone();
        let gl = g.params.layers()[li].1.clone();
        let n = layer.weight.len();
        let f = |w: &[f64]| {
            let mut q = p.clone();
            let mut ls = q.layers_mut();
            ls[li].1.weight.copy_from_slice(&w[..n]);
            ls[li].1.bias.copy_from_slice(&w[n..]);
            drop(ls);
            loss(&q, &levels, &v)
        };
        let point: Vec<f64> = layer.weight.iter().chain(&layer.bias).copied().collect();
        let analytic: Vec<f64> = gl.weight.iter().chain(&gl.bias).copied().collect();
        let r = finite_diff_check(f, &point, &analytic, 1e-5)?;
        c.error_below(format!("gradient.{name}"), r.max_relative_error, GRAD_TOL);
    }
    let mut worst: f64 = 0.0;
    for l in 0..levels.len() {
        let f = |x: &[f64]| {
            let mut ls = levels.clone();
            ls[l].data_mut().copy_from_slice(x);
            loss(&p, &ls, &v)
        };
        worst = worst.max(finite_diff_check(f, levels[l].data(), g.maps[l].data(), 1e-5)?.max_relative_error);
    }
    c.error_below("gradient.feature_maps", worst, GRAD_TOL);
    let r = finite_diff_check(|x| loss(&p, &levels, x), &v, &g.voxel_feat, 1e-5)?;
    c.error_below("gradient.voxel_feature", r.max_relative_error, GRAD_TOL);
    Ok(())
}

fn oracle_checks(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut err: f64 = 0.0;
    for (heads, points) in [(1, 1), (1, 4), (4, 8), (4, 1), (2, 4)] {
        let shape = CafaShape { heads, points, ..CafaShape::standard(8, 6) };
        let p = DeformCafaParams::random(shape, 3.0, &mut rng)?;
        let levels = vec![FeatureMap::random(16, 20, 8, &mut rng), FeatureMap::random(8, 10, 8, &mut rng)];
        let r0 = [rng.gen_range(-2.0..22.0), rng.gen_range(-2.0..18.0)];
        let refs = [r0, [r0[0] / 2.0, r0[1] / 2.0]];
        let v = rand_vec(&mut rng, 6);
        err = err.max(max_abs_diff(
            &deform_cafa(&levels, &refs, &v, &p)?,
            &reference::deform(&levels, &refs, &v, &p),
        ));
    }
    c.error_below("oracle.deform_cafa", err, ORACLE_TOL);

    let mut err: f64 = 0.0;
    let mut wsum: f64 = 0.0;
    for (h, w) in [(1, 1), (5, 7), (12, 9)] {
        let p = DenseCafaParams::random(8, 5, 6, 4, &mut rng);
        let map = FeatureMap::random(h, w, 8, &mut rng);
        let v = rand_vec(&mut rng, 5);
        err = err.max(max_abs_diff(&dense_cafa(&map, &v, &p)?, &reference::dense(&map, &v, &p)));
        let a = crate::fusion::dense_attention_weights(&map, &v, &p)?;
        wsum = wsum.max((a.iter().sum::<f64>() - 1.0).abs());
    }
    c.error_below("oracle.dense_cafa", err, ORACLE_TOL);
    c.error_below("dense.weights_sum_to_one", wsum, 1e-12);

    // zero offsets, one head, identity value/output: plain bilinear sampling
    let p = DeformCafaParams::passthrough(4, 4, 4)?;
    let map = FeatureMap::random(10, 10, 4, &mut rng);
    let mut err: f64 = 0.0;
    for _ in 0..20 {
        let r = [rng.gen_range(-2.0..12.0), rng.gen_range(-2.0..12.0)];
        let v = rand_vec(&mut rng, 4);
        err = err.max(max_abs_diff(
            &deform_cafa(std::slice::from_ref(&map), &[r], &v, &p)?,
            &bilinear_sample(&map, r[0], r[1])?,
        ));
    }
    c.error_below("deform.zero_offset_is_bilinear", err, 1e-12);

    let p = DeformCafaParams::random(CafaShape::standard(8, 8), 2.0, &mut rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let t = make_token(&rand_vec(&mut rng, 8), &rand_vec(&mut rng, 8), &p)?;
        let a = attention_weights(&t, &p)?;
        for head in a.chunks(p.shape.points) {
            worst = worst.max((head.iter().sum::<f64>() - 1.0).abs());
        }
    }
    c.error_below("deform.attention_per_head_sums_to_one", worst, 1e-12);
    Ok(())
}

/// Weight of an original pixel after `n` stacked patches.
pub fn original_weight(alpha: f64, n: usize) -> Result<f64> {
    let mut img = FeatureMap::filled(4, 4, 1, 1.0);
    let patch = FeatureMap::zeros(4, 4, 1);
    let bounds = PatchBounds { row0: 0, col0: 0, row1: 4, col1: 4 };
    let patches: Vec<PastePatch> = (0..n)
        .map(|i| PastePatch { bounds, patch: &patch, depth: 10.0 - i as f64 })
        .collect();
    composite_depth_ordered(&mut img, &patches, alpha)?;
    Ok(img.pixel(1, 1)[0])
}

fn composite_checks(c: &mut Collector) -> Result<()> {
    let mut err: f64 = 0.0;
    for alpha in [0.5, 0.6, 0.8] {
        for n in 0..=3 {
            err = err.max((original_weight(alpha, n)? - alpha.powi(n as i32)).abs());
        }
    }
    c.error_below("composite.original_weight_is_alpha_pow_n", err, 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = FeatureMap::random(6, 6, 3, &mut rng);
    let patch = FeatureMap::random(4, 5, 3, &mut rng);
    let mut out = img.clone();
    let b = PatchBounds { row0: 1, col0: 1, row1: 5, col1: 6 };
    composite_depth_ordered(&mut out, &[PastePatch { bounds: b, patch: &patch, depth: 3.0 }], 1.0)?;
    c.push("composite.alpha_one_is_identity", out.to_bytes() == img.to_bytes(), "byte comparison");
    Ok(())
}

fn geometry_checks(c: &mut Collector) -> Result<()> {
    let rig = CameraRig::ring(6, 160, 96, 75.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut err: f64 = 0.0;
    let mut selection_ok = true;
    for _ in 0..500 {
        let v = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(-3.0..3.0)];
        let hit = select_camera(&rig, &v)?;
        // oracle: scan the priority list by hand
        let mut want = None;
        for &ci in rig.priority() {
            let cam = &rig.cameras()[ci];
            let q = cam.to_camera(&v);
            if q[2] > 1e-9 {
                if let Some(px) = cam.camera_to_pixel(&q) {
                    if cam.in_bounds(px.pixel) {
                        want = Some(ci);
                        break;
                    }
                }
            }
        }
        selection_ok &= hit.map(|h| h.camera_index) == want;
        if let Some(h) = hit {
            let back = rig.cameras()[h.camera_index].back_project(h.pixel, h.depth);
            err = err.max(max_abs_diff(&back, &v));
        }
    }
    c.error_below("projection.round_trip", err, 1e-9);
    c.push("projection.camera_selection", selection_ok, "500 random points against a priority scan");
    Ok(())
}

fn pipeline_checks(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 400;
    let positions: Vec<[f64; 3]> =
        (0..n).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)]).collect();
    let feats = rand_vec(&mut rng, n * 2);
    let cloud = PointCloud::from_parts(2, positions.clone(), feats.clone())?;
    let cfg = VoxelConfig {
        voxel_size: [0.5; 3],
        range_min: [-4.0, -4.0, -1.0],
        range_max: [4.0, 4.0, 1.0],
    };
    let a = voxelize(&cloud, &cfg)?;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let b = voxelize(&cloud.select(&idx), &cfg)?;
    c.push("voxel.permutation_invariant", a == b, format!("{} voxels, bit comparison", a.len()));

    let p = DeformCafaParams::random(CafaShape::standard(3, 5), 1.0, &mut rng)?;
    let back = DeformCafaParams::from_bytes(&p.to_bytes())?;
    c.push("params.round_trip", back == p, format!("{} parameters", p.param_count()));

    let scene_cfg = SceneConfig {
        boxes: 3,
        points_per_box: 80,
        ground_points: 200,
        image_width: 48,
        image_height: 32,
        ..SceneConfig::default()
    };
    let scene = generate_scene(7, &scene_cfg)?;
    let vcfg = VoxelConfig::default();
    let voxels = voxelize(&scene.cloud, &vcfg)?;
    let params = DeformCafaParams::init(CafaShape::standard(3, voxels.feature_dim), &mut rng)?;
    let pyramids = scene.images.iter().map(|im| generate_pyramid(im, 2).map(Some)).collect::<Result<Vec<_>>>()?;
    let fused = fuse_scene(&voxels, &pyramids, &scene.rig, &params, &DropoutMask::none(scene.rig.len()))?;
    let identical = fused
        .fused
        .iter()
        .zip(&voxels.voxels)
        .all(|(f, v)| f.iter().zip(&v.feature).all(|(a, b)| a.to_bits() == b.to_bits()));
    c.push("dropout.all_dropped_is_identity", identical, format!("{} voxels", voxels.len()));
    Ok(())
}
