//! Oriented 3D boxes and the planar polygon helpers used for bird's-eye-view
//! overlap and image-space rasterization.

use crate::geometry::{mat3_mul_vec, rotation_z, CameraCalibration, Vec3};

pub type Point2 = [f64; 2];

/// 7-DoF box: center, size `(length, width, height)` and yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3d {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
}

impl Box3d {
    /// The 8 corners, bottom face first.
    pub fn corners(&self) -> [Vec3; 8] {
        let r = rotation_z(self.yaw);
        let h = [self.size[0] / 2.0, self.size[1] / 2.0, self.size[2] / 2.0];
        let mut out = [[0.0; 3]; 8];
        let signs = [
            [1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0],
            [-1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0],
            [-1.0, -1.0, 1.0],
            [-1.0, 1.0, 1.0],
        ];
        for (o, s) in out.iter_mut().zip(&signs) {
            let local = [s[0] * h[0], s[1] * h[1], s[2] * h[2]];
            let w = mat3_mul_vec(&r, &local);
            *o = [w[0] + self.center[0], w[1] + self.center[1], w[2] + self.center[2]];
        }
        out
    }

    /// Box-local coordinates of a world point.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let r = rotation_z(-self.yaw);
        mat3_mul_vec(
            &r,
            &[
                p[0] - self.center[0],
                p[1] - self.center[1],
                p[2] - self.center[2],
            ],
        )
    }

    /// Closed point-in-box test.
    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|a| l[a].abs() <= self.size[a] / 2.0)
    }

    /// Counter-clockwise footprint in the xy plane.
    pub fn bev_polygon(&self) -> [Point2; 4] {
        let c = self.corners();
        [c[1], c[0], c[3], c[2]].map(|p| [p[0], p[1]])
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            size: [
                self.size[0] + 2.0 * margin,
                self.size[1] + 2.0 * margin,
                self.size[2] + 2.0 * margin,
            ],
            ..*self
        }
    }
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area, positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Sutherland-Hodgman clip of `subject` by a convex counter-clockwise `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Area of the bird's-eye-view intersection of two boxes.
pub fn bev_overlap_area(a: &Box3d, b: &Box3d) -> f64 {
    let inter = clip_convex(&a.bev_polygon(), &b.bev_polygon());
    if inter.len() < 3 {
        0.0
    } else {
        polygon_area(&inter).abs()
    }
}

/// Andrew's monotone chain; returns a counter-clockwise hull without
/// repeated endpoints.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Pixels `(row, col)` of a `width x height` image whose centers (integer
/// coordinates) lie inside the counter-clockwise convex polygon.
pub fn rasterize_convex(hull: &[Point2], width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if hull.len() < 3 || width == 0 || height == 0 {
        return out;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in hull {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let c0 = x0.ceil().max(0.0);
    let c1 = x1.floor().min((width - 1) as f64);
    let r0 = y0.ceil().max(0.0);
    let r1 = y1.floor().min((height - 1) as f64);
    if c0 > c1 || r0 > r1 {
        return out;
    }
    for r in r0 as usize..=r1 as usize {
        for c in c0 as usize..=c1 as usize {
            let p = [c as f64, r as f64];
            let inside = (0..hull.len())
                .all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -1e-12);
            if inside {
                out.push((r, c));
            }
        }
    }
    out
}

/// Image-plane hull of a box after clipping it to the space in front of the
/// camera (`z >= near` in the rectified camera frame).
pub fn project_box_hull(calib: &CameraCalibration, b: &Box3d, near: f64) -> Vec<Point2> {
    const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 0),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 4),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];
    let cam: Vec<Vec3> = b.corners().iter().map(|c| calib.to_camera(c)).collect();
    let mut pts: Vec<Vec3> = cam.iter().copied().filter(|q| q[2] >= near).collect();
    for &(i, j) in &EDGES {
        let (p, q) = (cam[i], cam[j]);
        if (p[2] >= near) != (q[2] >= near) {
            let t = (near - p[2]) / (q[2] - p[2]);
            pts.push([
                p[0] + t * (q[0] - p[0]),
                p[1] + t * (q[1] - p[1]),
                near,
            ]);
        }
    }
    let px: Vec<Point2> = pts
        .iter()
        .filter_map(|q| calib.camera_to_pixel(q).map(|ip| ip.pixel))
        .collect();
    convex_hull(&px)
}
