//! Deterministic synthetic scenes: a camera ring, boxes on a ground plane,
//! surface-sampled points, flat-color rendered images, and average-pooling
//! feature pyramids standing in for an image backbone.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boxes::{bev_overlap_area, project_box_hull, rasterize_convex, Box3d};
use crate::error::{Error, Result};
use crate::geometry::{mat3_mul_vec, rotation_z, CameraCalibration, CameraRig};
use crate::tensor::FeatureMap;
use crate::voxel::PointCloud;

/// Ground plane height in the LiDAR frame.
pub const GROUND_Z: f64 = -1.8;
pub const BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];
/// Near plane used when painting boxes.
pub const RENDER_NEAR: f64 = 0.05;

/// Box colors; each has a single dominant channel.
pub const PALETTE: [[f64; 3]; 6] = [
    [0.9, 0.15, 0.1],
    [0.1, 0.85, 0.2],
    [0.15, 0.2, 0.9],
    [0.8, 0.35, 0.25],
    [0.3, 0.75, 0.35],
    [0.25, 0.3, 0.8],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub category: String,
    pub bbox: Box3d,
    /// Flat color the box is rendered with.
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub cloud: PointCloud,
    pub images: Vec<FeatureMap>,
    pub rig: CameraRig,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub cameras: usize,
    pub boxes: usize,
    pub points_per_box: usize,
    pub ground_points: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub hfov_deg: f64,
    /// Box centers are placed at a horizontal distance in this range.
    pub min_radius: f64,
    pub max_radius: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            cameras: 6,
            boxes: 8,
            points_per_box: 600,
            ground_points: 4000,
            image_width: 192,
            image_height: 112,
            hfov_deg: 75.0,
            min_radius: 7.0,
            max_radius: 25.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cameras == 0 {
            return Err(Error::config("cameras", "must be positive"));
        }
        if self.image_width < 2 || self.image_height < 2 {
            return Err(Error::config("image_size", "images must be at least 2x2"));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::config("hfov_deg", "must be in (0, 180)"));
        }
        if !(self.min_radius > 0.0 && self.max_radius > self.min_radius) {
            return Err(Error::config("radius", "need 0 < min_radius < max_radius"));
        }
        Ok(())
    }
}

const CATEGORIES: [(&str, [f64; 3], [f64; 3]); 3] = [
    ("car", [3.6, 1.6, 1.4], [4.8, 2.0, 1.8]),
    ("pedestrian", [0.5, 0.5, 1.6], [0.9, 0.9, 1.9]),
    ("cyclist", [1.6, 0.6, 1.5], [2.0, 0.9, 1.8]),
];

/// Clearance kept between generated boxes.
const BOX_MARGIN: f64 = 0.5;

pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = CameraRig::ring(cfg.cameras, cfg.image_width, cfg.image_height, cfg.hfov_deg)?;

    let mut annotations: Vec<Annotation> = Vec::with_capacity(cfg.boxes);
    let max_tries = 200 * cfg.boxes.max(1);
    let mut tries = 0;
    while annotations.len() < cfg.boxes {
        tries += 1;
        if tries > max_tries {
            return Err(Error::Generation(format!(
                "placed {} of {} boxes after {max_tries} attempts",
                annotations.len(),
                cfg.boxes
            )));
        }
        let (name, lo, hi) = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        let size = [
            rng.gen_range(lo[0]..=hi[0]),
            rng.gen_range(lo[1]..=hi[1]),
            rng.gen_range(lo[2]..=hi[2]),
        ];
        let r = rng.gen_range(cfg.min_radius..cfg.max_radius);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let bbox = Box3d {
            center: [r * theta.cos(), r * theta.sin(), GROUND_Z + size[2] / 2.0],
            size,
            yaw: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        let grown = bbox.expanded(BOX_MARGIN);
        if annotations
            .iter()
            .any(|a| bev_overlap_area(&grown, &a.bbox.expanded(BOX_MARGIN)) > 0.0)
        {
            continue;
        }
        let color = PALETTE[rng.gen_range(0..PALETTE.len())];
        annotations.push(Annotation {
            category: name.to_string(),
            bbox,
            color,
        });
    }

    let mut cloud = PointCloud::new(1);
    for a in &annotations {
        sample_box_surface(&a.bbox, cfg.points_per_box, &mut rng, &mut cloud)?;
    }
    let mut placed = 0;
    while placed < cfg.ground_points {
        let r = rng.gen_range(3.0..cfg.max_radius + 5.0);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = [r * theta.cos(), r * theta.sin(), GROUND_Z];
        let intensity = rng.gen_range(0.0..0.3);
        placed += 1;
        if annotations.iter().any(|a| a.bbox.contains(&p)) {
            continue;
        }
        cloud.push(p, &[intensity])?;
    }

    let images = rig
        .cameras()
        .iter()
        .map(|cam| render_camera(cam, &annotations))
        .collect();
    Ok(SceneSample {
        cloud,
        images,
        rig,
        annotations,
    })
}

/// Samples points on the four sides and the top of a box, area-weighted,
/// inset by a relative 1e-6 so they pass the closed point-in-box test.
fn sample_box_surface<R: Rng>(
    b: &Box3d,
    count: usize,
    rng: &mut R,
    cloud: &mut PointCloud,
) -> Result<()> {
    let h = [
        b.size[0] / 2.0 * (1.0 - 1e-6),
        b.size[1] / 2.0 * (1.0 - 1e-6),
        b.size[2] / 2.0 * (1.0 - 1e-6),
    ];
    // faces: +x, -x, +y, -y, +z
    let areas = [
        b.size[1] * b.size[2],
        b.size[1] * b.size[2],
        b.size[0] * b.size[2],
        b.size[0] * b.size[2],
        b.size[0] * b.size[1],
    ];
    let total: f64 = areas.iter().sum();
    let rot = rotation_z(b.yaw);
    for _ in 0..count {
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        while face < 4 && pick >= areas[face] {
            pick -= areas[face];
            face += 1;
        }
        let u = rng.gen_range(-1.0..=1.0);
        let v = rng.gen_range(-1.0..=1.0);
        let local = match face {
            0 => [h[0], u * h[1], v * h[2]],
            1 => [-h[0], u * h[1], v * h[2]],
            2 => [u * h[0], h[1], v * h[2]],
            3 => [u * h[0], -h[1], v * h[2]],
            _ => [u * h[0], v * h[1], h[2]],
        };
        let w = mat3_mul_vec(&rot, &local);
        let p = [w[0] + b.center[0], w[1] + b.center[1], w[2] + b.center[2]];
        cloud.push(p, &[rng.gen_range(0.3..1.0)])?;
    }
    Ok(())
}

/// Gray background with each box's image-plane hull painted far to near.
pub fn render_camera(cam: &CameraCalibration, annotations: &[Annotation]) -> FeatureMap {
    let (w, h) = (cam.image_width, cam.image_height);
    let mut img = FeatureMap::zeros(h, w, 3);
    for px in img.data_mut().chunks_exact_mut(3) {
        px.copy_from_slice(&BACKGROUND);
    }
    let mut order: Vec<(f64, usize)> = annotations
        .iter()
        .enumerate()
        .map(|(i, a)| (cam.to_camera(&a.bbox.center)[2], i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in order {
        let a = &annotations[i];
        let hull = project_box_hull(cam, &a.bbox, RENDER_NEAR);
        for (r, c) in rasterize_convex(&hull, w, h) {
            img.pixel_mut(r, c).copy_from_slice(&a.color);
        }
    }
    img
}

/// Multi-resolution stack of maps with a constant channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureMap>,
    /// Scale of each level relative to level 0.
    pub scales: Vec<f64>,
}

impl FeaturePyramid {
    pub fn single(map: FeatureMap) -> Self {
        Self {
            levels: vec![map],
            scales: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.levels.first().map_or(0, FeatureMap::channels)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .map(|m| FeatureMap::zeros(m.height(), m.width(), m.channels()))
                .collect(),
            scales: self.scales.clone(),
        }
    }
}

/// 2x2 average pooling. Odd trailing rows/columns form truncated windows that
/// average only the pixels they cover, so output dims are `ceil(n / 2)`.
pub fn avg_pool_2x2(map: &FeatureMap) -> FeatureMap {
    let (h, w, d) = (map.height(), map.width(), map.channels());
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = FeatureMap::zeros(oh, ow, d);
    for r in 0..oh {
        for c in 0..ow {
            let rows = (2 * r)..(2 * r + 2).min(h);
            let cols = (2 * c)..(2 * c + 2).min(w);
            let n = (rows.len() * cols.len()) as f64;
            let dst = out.pixel_mut(r, c);
            for rr in rows {
                for cc in cols.clone() {
                    for (o, v) in dst.iter_mut().zip(map.pixel(rr, cc)) {
                        *o += v;
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

pub fn generate_pyramid(image: &FeatureMap, levels: usize) -> Result<FeaturePyramid> {
    if levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    if image.is_empty() {
        return Err(Error::invalid("cannot build a pyramid from an empty image"));
    }
    let mut maps = vec![image.clone()];
    let mut scales = vec![1.0];
    for l in 1..levels {
        let next = avg_pool_2x2(&maps[l - 1]);
        maps.push(next);
        scales.push(0.5f64.powi(l as i32));
    }
    Ok(FeaturePyramid {
        levels: maps,
        scales,
    })
}

impl SceneSample {
    pub fn annotations_csv(&self) -> String {
        let mut s = String::from("category,cx,cy,cz,length,width,height,yaw,r,g,b\n");
        for a in &self.annotations {
            let b = &a.bbox;
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                a.category,
                b.center[0],
                b.center[1],
                b.center[2],
                b.size[0],
                b.size[1],
                b.size[2],
                b.yaw,
                a.color[0],
                a.color[1],
                a.color[2]
            );
        }
        s
    }

    pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() != 11 {
                    return Err(Error::format(format!("annotation row {}: expected 11 columns", n + 1)));
                }
                let v: Vec<f64> = cols[1..]
                    .iter()
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(format!("annotation row {}: bad number", n + 1)))?;
                Ok(Annotation {
                    category: cols[0].trim().to_string(),
                    bbox: Box3d {
                        center: [v[0], v[1], v[2]],
                        size: [v[3], v[4], v[5]],
                        yaw: v[6],
                    },
                    color: [v[7], v[8], v[9]],
                })
            })
            .collect()
    }

    /// Writes `cloud.pcld`, `cam<i>.fmap`, `calib.txt` and `annotations.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.cloud.save(&dir.join("cloud.pcld"))?;
        for (i, img) in self.images.iter().enumerate() {
            img.save(&dir.join(format!("cam{i}.fmap")))?;
        }
        self.rig.save(&dir.join("calib.txt"))?;
        let p = dir.join("annotations.csv");
        std::fs::write(&p, self.annotations_csv()).map_err(|e| Error::io(p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rig = CameraRig::load(&dir.join("calib.txt"))?;
        let cloud = PointCloud::load(&dir.join("cloud.pcld"))?;
        let images = (0..rig.len())
            .map(|i| FeatureMap::load(&dir.join(format!("cam{i}.fmap"))))
            .collect::<Result<Vec<_>>>()?;
        for (img, cam) in images.iter().zip(rig.cameras()) {
            if img.width() != cam.image_width || img.height() != cam.image_height {
                return Err(Error::format("image size does not match calibration"));
            }
        }
        let p = dir.join("annotations.csv");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))?;
        Ok(Self {
            cloud,
            images,
            rig,
            annotations: Self::parse_annotations(&text)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::convex_hull;

    fn small_cfg(boxes: usize) -> SceneConfig {
        SceneConfig {
            boxes,
            points_per_box: 200,
            ground_points: 500,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn no_boxes_means_ground_only_and_gray_images() {
        let s = generate_scene(3, &small_cfg(0)).unwrap();
        assert_eq!(s.cloud.len(), 500);
        assert!(s.cloud.positions().iter().all(|p| p[2] == GROUND_Z));
        for img in &s.images {
            assert!(img.data().chunks(3).all(|px| px == BACKGROUND));
        }
    }

    #[test]
    fn box_ahead_of_camera_zero_paints_one_region() {
        let rig = CameraRig::ring(6, 192, 112, 75.0).unwrap();
        let ann = vec![Annotation {
            category: "car".into(),
            bbox: Box3d {
                center: [10.0, 0.0, GROUND_Z + 0.8],
                size: [4.0, 1.8, 1.6],
                yaw: 0.3,
            },
            color: PALETTE[0],
        }];
        let imgs: Vec<FeatureMap> = rig.cameras().iter().map(|c| render_camera(c, &ann)).collect();
        let colored = |img: &FeatureMap| img.data().chunks(3).filter(|px| *px == PALETTE[0]).count();
        assert!(colored(&imgs[0]) > 100);
        assert!(imgs[0]
            .data()
            .chunks(3)
            .all(|px| px == PALETTE[0] || px == BACKGROUND));
        for img in &imgs[2..5] {
            assert_eq!(colored(img), 0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(42, &small_cfg(6)).unwrap();
        let b = generate_scene(42, &small_cfg(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cloud.to_bytes(), b.cloud.to_bytes());
        let c = generate_scene(43, &small_cfg(6)).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn infeasible_placement_reports_generation_error() {
        let cfg = SceneConfig {
            boxes: 500,
            min_radius: 5.0,
            max_radius: 6.0,
            ..small_cfg(0)
        };
        assert!(matches!(generate_scene(1, &cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn box_points_lie_inside_their_boxes() {
        let s = generate_scene(5, &small_cfg(8)).unwrap();
        for (k, a) in s.annotations.iter().enumerate() {
            let pts = &s.cloud.positions()[k * 200..(k + 1) * 200];
            assert!(pts.iter().all(|p| a.bbox.contains(p)));
        }
    }

    /// Point-in-hull by Carathéodory: inside iff inside some corner triangle.
    fn in_some_triangle(corners: &[[f64; 2]], p: [f64; 2]) -> bool {
        let tri = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
            let s = |u: [f64; 2], v: [f64; 2]| (v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]);
            let (d1, d2, d3) = (s(a, b), s(b, c), s(c, a));
            let eps = 1e-9;
            (d1 >= -eps && d2 >= -eps && d3 >= -eps) || (d1 <= eps && d2 <= eps && d3 <= eps)
        };
        let n = corners.len();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    if tri(corners[i], corners[j], corners[k]) {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn painted_region_matches_projected_corners_within_a_pixel() {
        let rig = CameraRig::ring(6, 160, 96, 75.0).unwrap();
        for (n, yaw) in [0.0, 0.4, 1.2, 2.5].iter().enumerate() {
            let bbox = Box3d {
                center: [8.0 + n as f64, 0.5 * n as f64, GROUND_Z + 0.8],
                size: [3.0, 1.5, 1.6],
                yaw: *yaw,
            };
            let ann = vec![Annotation {
                category: "car".into(),
                bbox,
                color: PALETTE[1],
            }];
            let cam = &rig.cameras()[0];
            let img = render_camera(cam, &ann);
            let corners: Vec<[f64; 2]> = bbox
                .corners()
                .iter()
                .map(|c| cam.project_unbounded(c).unwrap().pixel)
                .collect();
            let mut oracle = vec![false; 160 * 96];
            for r in 0..96 {
                for c in 0..160 {
                    oracle[r * 160 + c] = in_some_triangle(&corners, [c as f64, r as f64]);
                }
            }
            let painted: Vec<bool> = img.data().chunks(3).map(|px| px == PALETTE[1]).collect();
            let near = |set: &[bool], r: usize, c: usize| {
                (r.saturating_sub(1)..=(r + 1).min(95))
                    .any(|rr| (c.saturating_sub(1)..=(c + 1).min(159)).any(|cc| set[rr * 160 + cc]))
            };
            for r in 0..96 {
                for c in 0..160 {
                    let i = r * 160 + c;
                    if painted[i] != oracle[i] {
                        let other = if painted[i] { &oracle } else { &painted };
                        assert!(near(other, r, c), "pixel ({r},{c}) differs by more than 1px");
                    }
                }
            }
            assert!(painted.iter().filter(|v| **v).count() > 50);
            let _ = convex_hull(&corners);
        }
    }

    /// Independent pooling: each output pixel averages its covered inputs.
    fn pool_oracle(m: &FeatureMap) -> FeatureMap {
        let oh = m.height().div_ceil(2);
        let ow = m.width().div_ceil(2);
        let d = m.channels();
        let mut data = vec![0.0; oh * ow * d];
        for r in 0..oh {
            for c in 0..ow {
                for ch in 0..d {
                    let mut sum = 0.0;
                    let mut n = 0.0;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let (rr, cc) = (2 * r + dr, 2 * c + dc);
                            if rr < m.height() && cc < m.width() {
                                sum += m.data()[(rr * m.width() + cc) * d + ch];
                                n += 1.0;
                            }
                        }
                    }
                    data[(r * ow + c) * d + ch] = sum / n;
                }
            }
        }
        FeatureMap::new(oh, ow, d, data).unwrap()
    }

    #[test]
    fn pyramid_levels() {
        let flat = FeatureMap::filled(16, 12, 3, 0.25);
        let p = generate_pyramid(&flat, 3).unwrap();
        assert_eq!(p.scales, vec![1.0, 0.5, 0.25]);
        assert!(p.levels.iter().all(|l| l.data().iter().all(|v| *v == 0.25)));

        let tiny = FeatureMap::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = generate_pyramid(&tiny, 2).unwrap();
        assert_eq!(p.levels[1].data(), &[1.5]);
        assert!(generate_pyramid(&tiny, 0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = FeatureMap::random(64, 64, 3, &mut rng);
        let p = generate_pyramid(&img, 4).unwrap();
        for l in 1..4 {
            let want = pool_oracle(&p.levels[l - 1]);
            for (a, b) in p.levels[l].data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn odd_pyramid_dims_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = FeatureMap::random(37, 51, 2, &mut rng);
        let p = generate_pyramid(&img, 4).unwrap();
        let m0 = img.channel_mean();
        for (l, lvl) in p.levels.iter().enumerate() {
            let s = p.scales[l];
            assert_eq!(lvl.height(), (37.0 * s).ceil() as usize);
            assert_eq!(lvl.width(), (51.0 * s).ceil() as usize);
            // values in [-1, 1]: truncated windows shift the mean by at most
            // one row and one column's share
            let bound = 2.0 * (1.0 / lvl.height() as f64 + 1.0 / lvl.width() as f64);
            for (a, b) in lvl.channel_mean().iter().zip(&m0) {
                assert!((a - b).abs() <= bound, "level {l}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn scene_directory_round_trip() {
        let s = generate_scene(8, &small_cfg(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(SceneSample::load(dir.path()).unwrap(), s);
    }
}
