//! Camera calibration, LiDAR-to-pixel projection and priority-based camera
//! selection.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Mat4 = [[f64; 4]; 4];

/// Camera-frame depths at or below this are treated as out of view.
pub const MIN_DEPTH: f64 = 1e-9;

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const IDENTITY4: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

pub fn mat3_mul_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

pub fn rotation_z(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Rigid transform from a rotation and translation.
pub fn rigid(rot: &Mat3, t: &Vec3) -> Mat4 {
    let mut m = IDENTITY4;
    for i in 0..3 {
        m[i][..3].copy_from_slice(&rot[i]);
        m[i][3] = t[i];
    }
    m
}

/// A projected pixel with its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub pixel: [f64; 2],
    pub depth: f64,
}

/// Result of projecting into a specific camera of a rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    pub camera_index: usize,
    pub pixel: [f64; 2],
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub rect_rot: Mat3,
    pub intrinsics: Mat3,
    pub t_cam_lidar: Mat4,
    pub image_width: usize,
    pub image_height: usize,
}

impl CameraCalibration {
    pub fn new(
        rect_rot: Mat3,
        intrinsics: Mat3,
        t_cam_lidar: Mat4,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        let all = rect_rot
            .iter()
            .flatten()
            .chain(intrinsics.iter().flatten())
            .chain(t_cam_lidar.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite calibration entry"));
        }
        // R Rᵀ = I
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| rect_rot[i][k] * rect_rot[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-9 {
                    return Err(Error::invalid("rectifying rotation is not orthonormal"));
                }
            }
        }
        if t_cam_lidar[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("extrinsic bottom row must be (0,0,0,1)"));
        }
        let k = &intrinsics;
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 || k[2][2] != 1.0 {
            return Err(Error::invalid(
                "intrinsics must be upper-triangular with last row (0,0,1)",
            ));
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        Ok(Self {
            rect_rot,
            intrinsics,
            t_cam_lidar,
            image_width,
            image_height,
        })
    }

    /// LiDAR point to the rectified camera frame.
    pub fn to_camera(&self, v: &Vec3) -> Vec3 {
        let t = &self.t_cam_lidar;
        let cam = [
            t[0][0] * v[0] + t[0][1] * v[1] + t[0][2] * v[2] + t[0][3],
            t[1][0] * v[0] + t[1][1] * v[1] + t[1][2] * v[2] + t[1][3],
            t[2][0] * v[0] + t[2][1] * v[1] + t[2][2] * v[2] + t[2][3],
        ];
        mat3_mul_vec(&self.rect_rot, &cam)
    }

    /// Pixel of a rectified camera-frame point, or `None` when it is not in front.
    pub fn camera_to_pixel(&self, q: &Vec3) -> Option<ImagePoint> {
        if q[2] <= MIN_DEPTH {
            return None;
        }
        let u = mat3_mul_vec(&self.intrinsics, q);
        Some(ImagePoint {
            pixel: [u[0] / q[2], u[1] / q[2]],
            depth: q[2],
        })
    }

    /// Projection without the image-bounds test.
    pub fn project_unbounded(&self, v: &Vec3) -> Option<ImagePoint> {
        self.camera_to_pixel(&self.to_camera(v))
    }

    pub fn in_bounds(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[1] >= 0.0
            && pixel[0] <= (self.image_width - 1) as f64
            && pixel[1] <= (self.image_height - 1) as f64
    }

    /// Projects a LiDAR-frame point. `Ok(None)` means out of view.
    pub fn project(&self, v: &Vec3) -> Result<Option<ImagePoint>> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite point {v:?}")));
        }
        Ok(self.project_unbounded(v).filter(|p| self.in_bounds(p.pixel)))
    }

    /// Inverse of [`project`](Self::project) for a pixel at a given depth.
    pub fn back_project(&self, pixel: [f64; 2], depth: f64) -> Vec3 {
        let k = &self.intrinsics;
        // K is upper triangular with unit last row
        let y = (pixel[1] - k[1][2]) / k[1][1];
        let x = (pixel[0] - k[0][2] - k[0][1] * y) / k[0][0];
        let q = [x * depth, y * depth, depth];
        let cam = mat3_mul_vec(&mat3_transpose(&self.rect_rot), &q);
        let t = &self.t_cam_lidar;
        let p = [cam[0] - t[0][3], cam[1] - t[1][3], cam[2] - t[2][3]];
        let rot: Mat3 = [
            [t[0][0], t[0][1], t[0][2]],
            [t[1][0], t[1][1], t[1][2]],
            [t[2][0], t[2][1], t[2][2]],
        ];
        mat3_mul_vec(&mat3_transpose(&rot), &p)
    }

    /// Copy whose intrinsics are scaled for an image resampled by `scale`.
    pub fn with_scaled_intrinsics(&self, scale: f64) -> Self {
        let mut c = self.clone();
        for row in c.intrinsics.iter_mut().take(2) {
            row.iter_mut().for_each(|v| *v *= scale);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraCalibration>,
    priority: Vec<usize>,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraCalibration>, priority: Vec<usize>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("camera rig is empty"));
        }
        let mut seen = vec![false; cameras.len()];
        if priority.len() != cameras.len() {
            return Err(Error::invalid("priority length differs from camera count"));
        }
        for &p in &priority {
            if p >= cameras.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("priority is not a permutation of camera indices"));
            }
        }
        Ok(Self { cameras, priority })
    }

    /// Cameras evenly spaced in yaw around the LiDAR origin, all looking
    /// horizontally outwards. Camera 0 looks along +x; priority is index order.
    pub fn ring(count: usize, width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("ring rig needs at least one camera"));
        }
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        let intr = [
            [f, 0.0, (width as f64 - 1.0) / 2.0],
            [0.0, f, (height as f64 - 1.0) / 2.0],
            [0.0, 0.0, 1.0],
        ];
        let cameras = (0..count)
            .map(|i| {
                let yaw = i as f64 * std::f64::consts::TAU / count as f64;
                let (s, c) = yaw.sin_cos();
                // LiDAR x-forward/y-left/z-up to camera x-right/y-down/z-forward
                let rot: Mat3 = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
                let mount = [0.2 * c, 0.2 * s, 0.1];
                let t = mat3_mul_vec(&rot, &mount);
                CameraCalibration::new(
                    IDENTITY3,
                    intr,
                    rigid(&rot, &[-t[0], -t[1], -t[2]]),
                    width,
                    height,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cameras, (0..count).collect())
    }

    pub fn cameras(&self) -> &[CameraCalibration] {
        &self.cameras
    }

    pub fn priority(&self) -> &[usize] {
        &self.priority
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn with_priority(&self, priority: Vec<usize>) -> Result<Self> {
        Self::new(self.cameras.clone(), priority)
    }

    /// Calibration text: one `[camera N]` section per camera followed by a
    /// `[rig]` section with the priority list. Matrices are row-major.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &mut dyn Iterator<Item = &f64>| {
            v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
        };
        for (i, c) in self.cameras.iter().enumerate() {
            let _ = writeln!(s, "[camera {i}]");
            let _ = writeln!(s, "width = {}", c.image_width);
            let _ = writeln!(s, "height = {}", c.image_height);
            let _ = writeln!(s, "intrinsics = {}", join(&mut c.intrinsics.iter().flatten()));
            let _ = writeln!(s, "rect_rot = {}", join(&mut c.rect_rot.iter().flatten()));
            let _ = writeln!(s, "t_cam_lidar = {}", join(&mut c.t_cam_lidar.iter().flatten()));
            s.push('\n');
        }
        let pr: Vec<String> = self.priority.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(s, "[rig]\npriority = {}", pr.join(" "));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        #[derive(Default)]
        struct Partial {
            width: Option<usize>,
            height: Option<usize>,
            intrinsics: Option<Vec<f64>>,
            rect_rot: Option<Vec<f64>>,
            t_cam_lidar: Option<Vec<f64>>,
        }
        let mut cams: Vec<(usize, Partial)> = Vec::new();
        let mut priority: Option<Vec<usize>> = None;
        let mut in_rig = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::format(format!("calibration line {}: {msg}", lineno + 1));
            if let Some(sec) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let sec = sec.trim();
                if sec == "rig" {
                    in_rig = true;
                } else if let Some(idx) = sec.strip_prefix("camera") {
                    let idx: usize = idx.trim().parse().map_err(|_| err("bad camera index"))?;
                    in_rig = false;
                    cams.push((idx, Partial::default()));
                } else {
                    return Err(err("unknown section"));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let floats = || -> Result<Vec<f64>> {
                value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err("bad number")))
                    .collect()
            };
            if in_rig {
                match key {
                    "priority" => {
                        priority = Some(
                            value
                                .split_whitespace()
                                .map(|t| t.parse().map_err(|_| err("bad priority index")))
                                .collect::<Result<_>>()?,
                        )
                    }
                    _ => return Err(err("unknown rig key")),
                }
                continue;
            }
            let (_, cam) = cams.last_mut().ok_or_else(|| err("key outside a section"))?;
            match key {
                "width" => cam.width = Some(value.parse().map_err(|_| err("bad width"))?),
                "height" => cam.height = Some(value.parse().map_err(|_| err("bad height"))?),
                "intrinsics" => cam.intrinsics = Some(floats()?),
                "rect_rot" => cam.rect_rot = Some(floats()?),
                "t_cam_lidar" => cam.t_cam_lidar = Some(floats()?),
                _ => return Err(err("unknown camera key")),
            }
        }
        cams.sort_by_key(|(i, _)| *i);
        if cams.iter().enumerate().any(|(n, (i, _))| n != *i) {
            return Err(Error::format("camera sections must be numbered 0..n"));
        }
        let mat3 = |v: Option<Vec<f64>>, name: &str| -> Result<Mat3> {
            let v = v.ok_or_else(|| Error::format(format!("missing {name}")))?;
            if v.len() != 9 {
                return Err(Error::format(format!("{name} needs 9 values")));
            }
            Ok([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
        };
        let cameras = cams
            .into_iter()
            .map(|(_, p)| {
                let t = p
                    .t_cam_lidar
                    .ok_or_else(|| Error::format("missing t_cam_lidar"))?;
                if t.len() != 16 {
                    return Err(Error::format("t_cam_lidar needs 16 values"));
                }
                let mut m = [[0.0; 4]; 4];
                for (i, v) in t.iter().enumerate() {
                    m[i / 4][i % 4] = *v;
                }
                CameraCalibration::new(
                    mat3(p.rect_rot, "rect_rot")?,
                    mat3(p.intrinsics, "intrinsics")?,
                    m,
                    p.width.ok_or_else(|| Error::format("missing width"))?,
                    p.height.ok_or_else(|| Error::format("missing height"))?,
                )
                .map_err(|e| Error::format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = cameras.len();
        Self::new(cameras, priority.unwrap_or_else(|| (0..n).collect()))
            .map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Projects `v` into the rig's cameras in priority order and returns the
/// first camera that sees it.
pub fn select_camera(rig: &CameraRig, v: &Vec3) -> Result<Option<ProjectionResult>> {
    for &ci in rig.priority() {
        if let Some(p) = rig.cameras()[ci].project(v)? {
            return Ok(Some(ProjectionResult {
                camera_index: ci,
                pixel: p.pixel,
                depth: p.depth,
            }));
        }
    }
    Ok(None)
}

/// Reference points of one voxel on every pyramid level of its camera.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReferences {
    pub camera_index: usize,
    pub depth: f64,
    pub points: Vec<[f64; 2]>,
}

pub fn validate_scales(scales: &[f64]) -> Result<()> {
    if scales.first() != Some(&1.0) {
        return Err(Error::invalid("pyramid scale of level 0 must be 1"));
    }
    if scales.windows(2).any(|w| !(w[1] < w[0])) || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("pyramid scales must be positive and strictly decreasing"));
    }
    Ok(())
}

/// Projects a voxel center at full resolution and scales the pixel for each
/// pyramid level.
pub fn voxel_center_to_reference(
    center: &Vec3,
    rig: &CameraRig,
    pyramid_scales: &[f64],
) -> Result<Option<LevelReferences>> {
    validate_scales(pyramid_scales)?;
    Ok(select_camera(rig, center)?.map(|hit| LevelReferences {
        camera_index: hit.camera_index,
        depth: hit.depth,
        points: pyramid_scales
            .iter()
            .map(|s| [hit.pixel[0] * s, hit.pixel[1] * s])
            .collect(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple(f: f64, cx: f64, cy: f64, w: usize, h: usize) -> CameraCalibration {
        CameraCalibration::new(
            IDENTITY3,
            [[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]],
            IDENTITY4,
            w,
            h,
        )
        .unwrap()
    }

    fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
        // product of small rotations about x, y, z
        let (a, b, c) = (
            rng.gen_range(-0.2..0.2f64),
            rng.gen_range(-0.2..0.2f64),
            rng.gen_range(-0.2..0.2f64),
        );
        let rx = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rz = rotation_z(c);
        let mul = |x: &Mat3, y: &Mat3| {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
                }
            }
            m
        };
        mul(&mul(&rx, &ry), &rz)
    }

    pub(crate) fn random_rig<R: Rng>(rng: &mut R, n: usize) -> CameraRig {
        let base = CameraRig::ring(n, 64, 48, 80.0).unwrap();
        let cams = base
            .cameras()
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.rect_rot = random_rotation(rng);
                c.intrinsics[0][1] = rng.gen_range(-1.0..1.0);
                c
            })
            .collect();
        let mut pr: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut pr[..], rng);
        CameraRig::new(cams, pr).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let c = simple(1.0, 0.0, 0.0, 10, 10);
        let p = c.project(&[0.0, 0.0, 1.0]).unwrap().unwrap();
        assert_eq!(p.pixel, [0.0, 0.0]);
        assert_eq!(p.depth, 1.0);
    }

    #[test]
    fn hand_multiplied_projection() {
        // (100*1 + 320*2) / 2 = 370, (0 + 240*2) / 2 = 240
        let c = simple(100.0, 320.0, 240.0, 640, 480);
        let p = c.project(&[1.0, 0.0, 2.0]).unwrap().unwrap();
        assert_eq!(p.pixel, [370.0, 240.0]);
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn behind_and_degenerate_depth_are_out_of_view() {
        let c = simple(1.0, 0.0, 0.0, 10, 10);
        assert!(c.project(&[0.0, 0.0, -1.0]).unwrap().is_none());
        assert!(c.project(&[0.0, 0.0, 1e-12]).unwrap().is_none());
        assert!(c.project(&[f64::NAN, 0.0, 1.0]).is_err());
    }

    #[test]
    fn closed_bounds_convention() {
        let c = simple(1.0, 0.0, 0.0, 10, 8);
        assert!(c.project(&[9.0, 7.0, 1.0]).unwrap().is_some());
        assert!(c.project(&[9.0 + 1e-9, 0.0, 1.0]).unwrap().is_none());
        assert!(c.project(&[-1e-9, 0.0, 1.0]).unwrap().is_none());
    }

    #[test]
    fn calibration_invariants_enforced() {
        let bad_rot = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let k = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraCalibration::new(bad_rot, k, IDENTITY4, 4, 4).is_err());
        let mut t = IDENTITY4;
        t[3][0] = 1.0;
        assert!(CameraCalibration::new(IDENTITY3, k, t, 4, 4).is_err());
        let neg = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraCalibration::new(IDENTITY3, neg, IDENTITY4, 4, 4).is_err());
        assert!(CameraRig::new(vec![], vec![]).is_err());
        let c = simple(1.0, 0.0, 0.0, 4, 4);
        assert!(CameraRig::new(vec![c.clone(), c], vec![0, 0]).is_err());
    }

    #[test]
    fn selection_follows_priority_in_overlap() {
        let rig = CameraRig::ring(6, 160, 96, 80.0).unwrap();
        // 30 degrees: between cameras 0 and 1, inside both 80° frusta
        let a = 30f64.to_radians();
        let v = [10.0 * a.cos(), 10.0 * a.sin(), 0.0];
        let first = select_camera(&rig, &v).unwrap().unwrap();
        assert_eq!(first.camera_index, 0);
        let rig = rig.with_priority(vec![1, 0, 2, 3, 4, 5]).unwrap();
        assert_eq!(select_camera(&rig, &v).unwrap().unwrap().camera_index, 1);
    }

    #[test]
    fn point_seen_by_one_camera_selects_it_regardless_of_priority() {
        let rig = CameraRig::ring(6, 160, 96, 50.0).unwrap();
        let a = 180f64.to_radians();
        let v = [10.0 * a.cos(), 10.0 * a.sin(), 0.0];
        for pr in [vec![0, 1, 2, 3, 4, 5], vec![5, 4, 3, 2, 1, 0], vec![3, 0, 1, 2, 4, 5]] {
            let rig = rig.with_priority(pr).unwrap();
            assert_eq!(select_camera(&rig, &v).unwrap().unwrap().camera_index, 3);
        }
    }

    #[test]
    fn selection_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rig = random_rig(&mut rng, 6);
        for _ in 0..1000 {
            let v = [
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-3.0..3.0),
            ];
            // every camera, then pick the in-view one ranked first by priority
            let seen: Vec<usize> = (0..rig.len())
                .filter(|&i| rig.cameras()[i].project(&v).unwrap().is_some())
                .collect();
            let want = rig.priority().iter().copied().find(|p| seen.contains(p));
            let got = select_camera(&rig, &v).unwrap().map(|r| r.camera_index);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn references_scale_with_level() {
        let c = simple(100.0, 0.0, 0.0, 400, 400);
        let rig = CameraRig::new(vec![c], vec![0]).unwrap();
        let r = voxel_center_to_reference(&[1.0, 0.6, 1.0], &rig, &[1.0, 0.5, 0.25])
            .unwrap()
            .unwrap();
        assert_eq!(r.points, vec![[100.0, 60.0], [50.0, 30.0], [25.0, 15.0]]);
        assert!(voxel_center_to_reference(&[0.0, 0.0, -1.0], &rig, &[1.0, 0.5])
            .unwrap()
            .is_none());
        assert!(voxel_center_to_reference(&[1.0, 0.6, 1.0], &rig, &[0.5, 0.25]).is_err());
        assert!(voxel_center_to_reference(&[1.0, 0.6, 1.0], &rig, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn references_match_scaled_intrinsics() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rig = random_rig(&mut rng, 6);
        let scales = [1.0, 0.5, 0.25, 0.125];
        let mut hits = 0;
        for _ in 0..300 {
            let v = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), 0.5];
            if let Some(r) = voxel_center_to_reference(&v, &rig, &scales).unwrap() {
                hits += 1;
                for (s, p) in scales.iter().zip(&r.points) {
                    let cam = rig.cameras()[r.camera_index].with_scaled_intrinsics(*s);
                    let q = cam.project_unbounded(&v).unwrap();
                    assert!((q.pixel[0] - p[0]).abs() < 1e-9);
                    assert!((q.pixel[1] - p[1]).abs() < 1e-9);
                }
            }
        }
        assert!(hits > 50);
    }

    #[test]
    fn calibration_text_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rig = random_rig(&mut rng, 4);
        let text = rig.to_text();
        assert_eq!(CameraRig::from_text(&text).unwrap(), rig);
        assert!(CameraRig::from_text("[camera 0]\nwidth = x\n").is_err());
        assert!(CameraRig::from_text("width = 3\n").is_err());
    }

    proptest! {
        #[test]
        fn projection_is_scale_equivariant(
            x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.5f64..20.0, lambda in 0.1f64..10.0,
        ) {
            let c = simple(120.0, 64.0, 48.0, 1000, 1000);
            let a = c.project_unbounded(&[x, y, z]).unwrap();
            let b = c.project_unbounded(&[lambda * x, lambda * y, lambda * z]).unwrap();
            prop_assert!((a.pixel[0] - b.pixel[0]).abs() < 1e-9);
            prop_assert!((a.pixel[1] - b.pixel[1]).abs() < 1e-9);
            prop_assert!((b.depth - lambda * a.depth).abs() < 1e-9 * b.depth);
        }

        #[test]
        fn back_projection_round_trips(seed in 0u64..500, px in 0.0f64..63.0, py in 0.0f64..47.0, d in 0.5f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rig = random_rig(&mut rng, 3);
            let cam = &rig.cameras()[(seed % 3) as usize];
            let v = cam.back_project([px, py], d);
            let p = cam.project(&v).unwrap().unwrap();
            prop_assert!((p.pixel[0] - px).abs() < 1e-9 && (p.pixel[1] - py).abs() < 1e-9);
            prop_assert!((p.depth - d).abs() < 1e-9);
        }

        #[test]
        fn selection_is_deterministic(seed in 0u64..200, x in -20.0f64..20.0, y in -20.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rig = random_rig(&mut rng, 6);
            let a = select_camera(&rig, &[x, y, 0.3]).unwrap();
            let b = select_camera(&rig, &[x, y, 0.3]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
