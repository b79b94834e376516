//! Depth-aware ground-truth augmentation: paste database objects into a
//! scene, their points into the cloud and their image patches into the
//! camera images, blended far to near.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::{bev_overlap_area, Box3d};
use crate::error::{Error, Result};
use crate::geometry::select_camera;
use crate::scene::{Annotation, SceneSample};
use crate::tensor::FeatureMap;
use crate::voxel::PointCloud;

/// Half-open pixel rectangle `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBounds {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl PatchBounds {
    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn is_empty(&self) -> bool {
        self.row1 <= self.row0 || self.col1 <= self.col0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }
}

/// One database entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub category: String,
    pub points: PointCloud,
    pub patch: FeatureMap,
    pub bounds: PatchBounds,
    pub camera_index: usize,
    /// Camera-frame depth of the box center, meters.
    pub depth: f64,
    pub bbox: Box3d,
    pub color: [f64; 3],
}

impl GtObject {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(Error::invalid("object depth must be positive"));
        }
        if self.bounds.is_empty()
            || self.patch.height() != self.bounds.height()
            || self.patch.width() != self.bounds.width()
        {
            return Err(Error::invalid("patch does not match its bounds"));
        }
        if self.points.positions().iter().any(|p| !self.bbox.contains(p)) {
            return Err(Error::invalid("object point outside its box"));
        }
        Ok(())
    }
}

/// Objects grouped by category; empty categories are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GtDatabase {
    categories: BTreeMap<String, Vec<GtObject>>,
}

impl GtDatabase {
    pub fn insert(&mut self, obj: GtObject) {
        self.categories.entry(obj.category.clone()).or_default().push(obj);
    }

    pub fn categories(&self) -> &BTreeMap<String, Vec<GtObject>> {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &GtObject> {
        self.categories.values().flatten()
    }

    /// `<dir>/<category>/<nnnn>.{pcld,fmap,txt}`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (cat, objs) in &self.categories {
            let sub = dir.join(cat);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (i, o) in objs.iter().enumerate() {
                o.points.save(&sub.join(format!("{i:04}.pcld")))?;
                o.patch.save(&sub.join(format!("{i:04}.fmap")))?;
                let p = sub.join(format!("{i:04}.txt"));
                std::fs::write(&p, object_metadata(o)).map_err(|e| Error::io(p, e))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut db = GtDatabase::default();
        let mut cats: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.path())
            .collect();
        cats.sort();
        for sub in cats {
            let category = sub
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::format("category directory name is not UTF-8"))?
                .to_string();
            let mut stems: Vec<_> = std::fs::read_dir(&sub)
                .map_err(|e| Error::io(&sub, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            stems.sort();
            for meta in stems {
                let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
                let mut obj = parse_metadata(&text, &category)?;
                obj.points = PointCloud::load(&meta.with_extension("pcld"))?;
                obj.patch = FeatureMap::load(&meta.with_extension("fmap"))?;
                obj.validate()?;
                db.insert(obj);
            }
        }
        Ok(db)
    }
}

fn object_metadata(o: &GtObject) -> String {
    let b = &o.bbox;
    let mut s = String::new();
    let _ = writeln!(s, "depth = {:?}", o.depth);
    let _ = writeln!(s, "camera = {}", o.camera_index);
    let _ = writeln!(s, "bounds = {} {} {} {}", o.bounds.row0, o.bounds.col0, o.bounds.row1, o.bounds.col1);
    let _ = writeln!(s, "center = {:?} {:?} {:?}", b.center[0], b.center[1], b.center[2]);
    let _ = writeln!(s, "size = {:?} {:?} {:?}", b.size[0], b.size[1], b.size[2]);
    let _ = writeln!(s, "yaw = {:?}", b.yaw);
    let _ = writeln!(s, "color = {:?} {:?} {:?}", o.color[0], o.color[1], o.color[2]);
    s
}

fn parse_metadata(text: &str, category: &str) -> Result<GtObject> {
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad metadata line `{line}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let nums = |key: &str, n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = kv
            .get(key)
            .ok_or_else(|| Error::format(format!("metadata is missing `{key}`")))?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(format!("bad number in `{key}`")))?;
        if v.len() != n {
            return Err(Error::format(format!("`{key}` needs {n} values")));
        }
        Ok(v)
    };
    let bounds = nums("bounds", 4)?;
    if bounds.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
        return Err(Error::format("patch bounds must be non-negative integers"));
    }
    let (c, s, col) = (nums("center", 3)?, nums("size", 3)?, nums("color", 3)?);
    Ok(GtObject {
        category: category.to_string(),
        points: PointCloud::new(0),
        patch: FeatureMap::zeros(0, 0, 0),
        bounds: PatchBounds {
            row0: bounds[0] as usize,
            col0: bounds[1] as usize,
            row1: bounds[2] as usize,
            col1: bounds[3] as usize,
        },
        camera_index: nums("camera", 1)?[0] as usize,
        depth: nums("depth", 1)?[0],
        bbox: Box3d {
            center: [c[0], c[1], c[2]],
            size: [s[0], s[1], s[2]],
            yaw: nums("yaw", 1)?[0],
        },
        color: [col[0], col[1], col[2]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionPolicy {
    /// Reject a candidate whose bird's-eye-view footprint overlaps any
    /// existing or previously accepted box by a positive area.
    RejectBevOverlap,
    /// Accept every candidate.
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugConfig {
    /// Weight of the existing image content in each blend, `(0, 1]`.
    pub alpha: f64,
    /// Upper bound on pasted objects per category.
    pub max_paste: BTreeMap<String, usize>,
    pub collision: CollisionPolicy,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            max_paste: ["car", "pedestrian", "cyclist"]
                .into_iter()
                .map(|c| (c.to_string(), 3))
                .collect(),
            collision: CollisionPolicy::RejectBevOverlap,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha", format!("{} is outside (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Greedy, in input order. Returns indices of accepted candidates.
pub fn collision_filter(candidates: &[Box3d], existing: &[Box3d]) -> Vec<usize> {
    let mut taken: Vec<Box3d> = existing.to_vec();
    let mut accepted = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if taken.iter().all(|b| bev_overlap_area(c, b) <= 0.0) {
            taken.push(*c);
            accepted.push(i);
        }
    }
    accepted
}

/// A patch queued for compositing onto one image.
#[derive(Debug, Clone, Copy)]
pub struct PastePatch<'a> {
    pub bounds: PatchBounds,
    pub patch: &'a FeatureMap,
    pub depth: f64,
}

/// Blends patches onto `image` from the farthest to the nearest:
/// `new = alpha * current + (1 - alpha) * patch` over each patch's area,
/// clipped to the image. Equal depths keep their input order.
pub fn composite_depth_ordered(image: &mut FeatureMap, patches: &[PastePatch], alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("alpha", format!("{alpha} is outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by(|&a, &b| patches[b].depth.total_cmp(&patches[a].depth));
    for i in order {
        let p = &patches[i];
        if p.patch.channels() != image.channels()
            || p.patch.height() != p.bounds.height()
            || p.patch.width() != p.bounds.width()
        {
            return Err(Error::invalid("patch shape does not match its bounds or the image"));
        }
        if alpha == 1.0 {
            // the patch weight is zero; skipping keeps the image bit-exact
            continue;
        }
        let rows = p.bounds.row0..p.bounds.row1.min(image.height());
        let cols = p.bounds.col0..p.bounds.col1.min(image.width());
        for r in rows {
            for c in cols.clone() {
                let src = p.patch.pixel(r - p.bounds.row0, c - p.bounds.col0);
                for (o, s) in image.pixel_mut(r, c).iter_mut().zip(src) {
                    *o = alpha * *o + (1.0 - alpha) * s;
                }
            }
        }
    }
    Ok(())
}

/// Samples up to `max_paste` objects per category, drops colliding ones,
/// appends their points and annotations, and composites their patches onto
/// the cameras they were cut from.
pub fn depth_aware_gt_aug(
    scene: &SceneSample,
    db: &GtDatabase,
    cfg: &AugConfig,
    seed: u64,
) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<&GtObject> = Vec::new();
    for (cat, objs) in db.categories() {
        let n = cfg.max_paste.get(cat).copied().unwrap_or(0).min(objs.len());
        for i in rand::seq::index::sample(&mut rng, objs.len(), n) {
            candidates.push(&objs[i]);
        }
    }
    let chosen: Vec<&GtObject> = match cfg.collision {
        CollisionPolicy::Ignore => candidates,
        CollisionPolicy::RejectBevOverlap => {
            let boxes: Vec<Box3d> = candidates.iter().map(|o| o.bbox).collect();
            let existing: Vec<Box3d> = scene.annotations.iter().map(|a| a.bbox).collect();
            collision_filter(&boxes, &existing)
                .into_iter()
                .map(|i| candidates[i])
                .collect()
        }
    };

    let mut out = scene.clone();
    for o in &chosen {
        if o.camera_index >= out.images.len() {
            return Err(Error::invalid(format!(
                "object camera {} not in a {}-camera rig",
                o.camera_index,
                out.images.len()
            )));
        }
        out.cloud.extend_from(&o.points)?;
        out.annotations.push(Annotation {
            category: o.category.clone(),
            bbox: o.bbox,
            color: o.color,
        });
    }
    for (cam, image) in out.images.iter_mut().enumerate() {
        let patches: Vec<PastePatch> = chosen
            .iter()
            .filter(|o| o.camera_index == cam)
            .map(|o| PastePatch {
                bounds: o.bounds,
                patch: &o.patch,
                depth: o.depth,
            })
            .collect();
        composite_depth_ordered(image, &patches, cfg.alpha)?;
    }
    Ok(out)
}

/// Pixel rectangle whose centers fall inside the bounding range of the
/// projected corners of `b`, clipped to the image. `None` when a corner is
/// behind the camera or no pixel is covered.
pub fn box_patch_bounds(
    calib: &crate::geometry::CameraCalibration,
    b: &Box3d,
) -> Option<PatchBounds> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in b.corners() {
        let p = calib.project_unbounded(&c)?;
        for a in 0..2 {
            lo[a] = lo[a].min(p.pixel[a]);
            hi[a] = hi[a].max(p.pixel[a]);
        }
    }
    let span = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let a = lo.ceil().clamp(0.0, n as f64) as usize;
        let b = (hi.floor() + 1.0).clamp(0.0, n as f64) as usize;
        (a, b)
    };
    let (col0, col1) = span(lo[0], hi[0], calib.image_width);
    let (row0, row1) = span(lo[1], hi[1], calib.image_height);
    let bounds = PatchBounds { row0, col0, row1, col1 };
    (!bounds.is_empty()).then_some(bounds)
}

fn crop(image: &FeatureMap, b: &PatchBounds) -> FeatureMap {
    let mut out = FeatureMap::zeros(b.height(), b.width(), image.channels());
    for r in 0..b.height() {
        for c in 0..b.width() {
            out.pixel_mut(r, c).copy_from_slice(image.pixel(b.row0 + r, b.col0 + c));
        }
    }
    out
}

/// One object per annotation that a camera sees: the points inside its box,
/// the patch on the first camera (in priority order) that sees its center,
/// and the center's depth in that camera.
pub fn build_gt_database(scenes: &[SceneSample]) -> Result<GtDatabase> {
    let mut db = GtDatabase::default();
    for scene in scenes {
        for a in &scene.annotations {
            let Some(hit) = select_camera(&scene.rig, &a.bbox.center)? else {
                continue;
            };
            let cam = &scene.rig.cameras()[hit.camera_index];
            let Some(bounds) = box_patch_bounds(cam, &a.bbox) else {
                continue;
            };
            let inside: Vec<usize> = (0..scene.cloud.len())
                .filter(|&i| a.bbox.contains(&scene.cloud.positions()[i]))
                .collect();
            let obj = GtObject {
                category: a.category.clone(),
                points: scene.cloud.select(&inside),
                patch: crop(&scene.images[hit.camera_index], &bounds),
                bounds,
                camera_index: hit.camera_index,
                depth: hit.depth,
                bbox: a.bbox,
                color: a.color,
            };
            obj.validate()?;
            db.insert(obj);
        }
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};
    use rand::Rng;

    fn small_scene(seed: u64, boxes: usize) -> SceneSample {
        let cfg = SceneConfig {
            boxes,
            points_per_box: 120,
            ground_points: 300,
            image_width: 96,
            image_height: 56,
            ..SceneConfig::default()
        };
        generate_scene(seed, &cfg).unwrap()
    }

    fn bx(x: f64, y: f64, yaw: f64) -> Box3d {
        Box3d { center: [x, y, 0.0], size: [2.0, 1.0, 1.5], yaw }
    }

    #[test]
    fn collision_trivial_cases() {
        let existing = [bx(0.0, 0.0, 0.0)];
        assert_eq!(collision_filter(&[bx(10.0, 0.0, 0.3)], &existing), vec![0]);
        assert!(collision_filter(&[bx(0.0, 0.0, 0.0)], &existing).is_empty());
        // second candidate collides with the first accepted one
        assert_eq!(collision_filter(&[bx(5.0, 0.0, 0.0), bx(5.5, 0.2, 0.4)], &existing), vec![0]);
    }

    /// Separating-axis test on the two footprints, strict overlap only.
    fn sat_overlap(a: &Box3d, b: &Box3d) -> bool {
        let pa = a.bev_polygon();
        let pb = b.bev_polygon();
        for poly in [&pa, &pb] {
            for i in 0..4 {
                let e = [poly[(i + 1) % 4][0] - poly[i][0], poly[(i + 1) % 4][1] - poly[i][1]];
                let n = [-e[1], e[0]];
                let proj = |p: &[[f64; 2]; 4]| {
                    let v: Vec<f64> = p.iter().map(|q| q[0] * n[0] + q[1] * n[1]).collect();
                    (v.iter().copied().fold(f64::MAX, f64::min), v.iter().copied().fold(f64::MIN, f64::max))
                };
                let (a0, a1) = proj(&pa);
                let (b0, b1) = proj(&pb);
                if a1 <= b0 + 1e-9 || b1 <= a0 + 1e-9 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn collision_filter_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cands: Vec<Box3d> = (0..50)
                .map(|_| bx(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let existing = [bx(0.0, 0.0, 0.0)];
            let got = collision_filter(&cands, &existing);
            let mut taken = existing.to_vec();
            let mut want = Vec::new();
            for (i, c) in cands.iter().enumerate() {
                if !taken.iter().any(|t| sat_overlap(c, t)) {
                    taken.push(*c);
                    want.push(i);
                }
            }
            assert_eq!(got, want);
        }
    }

    fn flat(h: usize, w: usize, v: f64) -> FeatureMap {
        FeatureMap::filled(h, w, 1, v)
    }

    #[test]
    fn single_blend_and_alpha_one() {
        let mut img = flat(4, 4, 1.0);
        let patch = flat(2, 2, 3.0);
        let b = PatchBounds { row0: 1, col0: 1, row1: 3, col1: 3 };
        composite_depth_ordered(&mut img, &[PastePatch { bounds: b, patch: &patch, depth: 5.0 }], 0.6).unwrap();
        assert_eq!(img.pixel(1, 1)[0], 0.6 * 1.0 + 0.4 * 3.0);
        assert_eq!(img.pixel(0, 0)[0], 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orig = FeatureMap::random(4, 4, 3, &mut rng);
        let mut img = orig.clone();
        let patch = FeatureMap::random(2, 2, 3, &mut rng);
        composite_depth_ordered(&mut img, &[PastePatch { bounds: b, patch: &patch, depth: 5.0 }], 1.0).unwrap();
        assert_eq!(img.to_bytes(), orig.to_bytes());
    }

    #[test]
    fn two_step_composition_oracle() {
        // far patch first, then near patch, regardless of input order
        let (o, far, near) = (0.2, 0.7, 0.9);
        let b = PatchBounds { row0: 0, col0: 0, row1: 1, col1: 1 };
        let (pf, pn) = (flat(1, 1, far), flat(1, 1, near));
        let mut img = flat(1, 1, o);
        let patches = [
            PastePatch { bounds: b, patch: &pn, depth: 3.0 },
            PastePatch { bounds: b, patch: &pf, depth: 9.0 },
        ];
        composite_depth_ordered(&mut img, &patches, 0.5).unwrap();
        let step1 = 0.5 * o + 0.5 * far;
        let step2 = 0.5 * step1 + 0.5 * near;
        assert_eq!(img.pixel(0, 0)[0], step2);
        // background weight 0.25 and nearest patch weight 0.5
        let coef = |o: f64, f: f64, n: f64| {
            let mut m = flat(1, 1, o);
            let (pf, pn) = (flat(1, 1, f), flat(1, 1, n));
            let ps = [
                PastePatch { bounds: b, patch: &pn, depth: 3.0 },
                PastePatch { bounds: b, patch: &pf, depth: 9.0 },
            ];
            composite_depth_ordered(&mut m, &ps, 0.5).unwrap();
            m.pixel(0, 0)[0]
        };
        assert_eq!(coef(1.0, 0.0, 0.0), 0.25);
        assert_eq!(coef(0.0, 0.0, 1.0), 0.5);
    }

    #[test]
    fn nearest_patch_weight_is_one_minus_alpha() {
        for alpha in [0.5, 0.6, 0.8] {
            for n_far in 0..4 {
                let b = PatchBounds { row0: 0, col0: 0, row1: 1, col1: 1 };
                let zero = flat(1, 1, 0.0);
                let one = flat(1, 1, 1.0);
                let mut ps: Vec<PastePatch> =
                    (0..n_far).map(|i| PastePatch { bounds: b, patch: &zero, depth: 10.0 + i as f64 }).collect();
                ps.push(PastePatch { bounds: b, patch: &one, depth: 1.0 });
                let mut img = flat(1, 1, 0.0);
                composite_depth_ordered(&mut img, &ps, alpha).unwrap();
                assert!((img.pixel(0, 0)[0] - (1.0 - alpha)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn patches_are_clipped_to_the_image() {
        let mut img = flat(3, 3, 0.0);
        let patch = flat(3, 3, 1.0);
        let b = PatchBounds { row0: 1, col0: 2, row1: 4, col1: 5 };
        composite_depth_ordered(&mut img, &[PastePatch { bounds: b, patch: &patch, depth: 1.0 }], 0.5).unwrap();
        assert_eq!(img.pixel(2, 2)[0], 0.5);
        assert_eq!(img.pixel(0, 2)[0], 0.0);
        assert!(composite_depth_ordered(&mut img, &[], 0.0).is_err());
    }

    #[test]
    fn database_objects_satisfy_invariants() {
        let scene = small_scene(3, 10);
        let db = build_gt_database(std::slice::from_ref(&scene)).unwrap();
        assert!(db.len() <= 10 && !db.is_empty());
        for o in db.objects() {
            o.validate().unwrap();
            let cam = &scene.rig.cameras()[o.camera_index];
            // brute force over the 8 corners
            let px: Vec<[f64; 2]> = o.bbox.corners().iter().map(|c| cam.project_unbounded(c).unwrap().pixel).collect();
            let minx = px.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
            let maxx = px.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
            let miny = px.iter().map(|p| p[1]).fold(f64::MAX, f64::min);
            let maxy = px.iter().map(|p| p[1]).fold(f64::MIN, f64::max);
            let expect_c0 = (minx.ceil().max(0.0)) as usize;
            let expect_c1 = ((maxx.floor() + 1.0).min(cam.image_width as f64)) as usize;
            let expect_r0 = (miny.ceil().max(0.0)) as usize;
            let expect_r1 = ((maxy.floor() + 1.0).min(cam.image_height as f64)) as usize;
            assert_eq!(o.bounds, PatchBounds { row0: expect_r0, col0: expect_c0, row1: expect_r1, col1: expect_c1 });
            let inside = scene.cloud.positions().iter().filter(|p| o.bbox.contains(p)).count();
            assert_eq!(o.points.len(), inside);
        }
    }

    #[test]
    fn box_out_of_view_is_skipped() {
        let mut scene = small_scene(4, 0);
        scene.annotations.push(Annotation {
            category: "car".into(),
            bbox: Box3d { center: [0.0, 0.0, 40.0], size: [1.0; 3], yaw: 0.0 },
            color: [1.0, 0.0, 0.0],
        });
        assert!(build_gt_database(&[scene]).unwrap().is_empty());
    }

    #[test]
    fn exactly_the_points_in_the_box() {
        let mut scene = small_scene(6, 0);
        let b = Box3d { center: [10.0, 0.0, -1.0], size: [2.0, 2.0, 2.0], yaw: 0.0 };
        let mut cloud = PointCloud::new(1);
        for i in 0..100 {
            let p = if i < 10 { [9.5 + 0.1 * i as f64, 0.0, -1.0] } else { [-10.0, i as f64, 0.0] };
            cloud.push(p, &[i as f64]).unwrap();
        }
        scene.cloud = cloud;
        scene.annotations.push(Annotation { category: "car".into(), bbox: b, color: [0.0, 1.0, 0.0] });
        let db = build_gt_database(&[scene]).unwrap();
        let o = db.objects().next().unwrap();
        assert_eq!(o.points.len(), 10);
        assert_eq!(o.points.features(), &(0..10).map(|i| i as f64).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn augmentation_conserves_points_and_is_deterministic() {
        let db = build_gt_database(&[small_scene(7, 10), small_scene(8, 10)]).unwrap();
        let scene = small_scene(9, 3);
        let cfg = AugConfig::default();
        let a = depth_aware_gt_aug(&scene, &db, &cfg, 11).unwrap();
        let b = depth_aware_gt_aug(&scene, &db, &cfg, 11).unwrap();
        assert_eq!(a, b);
        let pasted = &a.annotations[scene.annotations.len()..];
        assert!(!pasted.is_empty());
        let added: usize = pasted
            .iter()
            .map(|p| db.objects().find(|o| o.bbox == p.bbox).unwrap().points.len())
            .sum();
        assert_eq!(a.cloud.len(), scene.cloud.len() + added);
        for (i, p) in pasted.iter().enumerate() {
            for q in a.annotations.iter().take(scene.annotations.len() + i) {
                assert_eq!(bev_overlap_area(&p.bbox, &q.bbox), 0.0);
            }
        }

        let one = AugConfig { alpha: 1.0, ..cfg.clone() };
        let c = depth_aware_gt_aug(&scene, &db, &one, 11).unwrap();
        for (x, y) in c.images.iter().zip(&scene.images) {
            assert_eq!(x.to_bytes(), y.to_bytes());
        }
        assert_eq!(c.cloud, a.cloud);
        assert!(depth_aware_gt_aug(&scene, &db, &AugConfig { alpha: 1.5, ..cfg }, 1).is_err());
    }

    #[test]
    fn database_round_trips_on_disk() {
        let db = build_gt_database(&[small_scene(10, 6)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        db.save(dir.path()).unwrap();
        assert_eq!(GtDatabase::load(dir.path()).unwrap(), db);
    }
}
