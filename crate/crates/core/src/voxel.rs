//! Point clouds and dynamic voxelization (only non-empty cells are stored).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::tensor::{read_file, read_u32, write_file};

pub const PCLD_MAGIC: &[u8; 4] = b"PCLD";

/// Points with `feature_dim` extra per-point values (e.g. intensity).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    feature_dim: usize,
    positions: Vec<Vec3>,
    features: Vec<f64>,
}

impl PointCloud {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            positions: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn from_parts(feature_dim: usize, positions: Vec<Vec3>, features: Vec<f64>) -> Result<Self> {
        if features.len() != positions.len() * feature_dim {
            return Err(Error::invalid("point features do not match point count"));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite point coordinate"));
        }
        Ok(Self {
            feature_dim,
            positions,
            features,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn point_features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn push(&mut self, position: Vec3, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::invalid(format!(
                "point has {} features, cloud expects {}",
                features.len(),
                self.feature_dim
            )));
        }
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite point coordinate"));
        }
        self.positions.push(position);
        self.features.extend_from_slice(features);
        Ok(())
    }

    pub fn extend_from(&mut self, other: &PointCloud) -> Result<()> {
        if other.feature_dim != self.feature_dim {
            return Err(Error::invalid("cannot merge clouds with different feature widths"));
        }
        self.positions.extend_from_slice(&other.positions);
        self.features.extend_from_slice(&other.features);
        Ok(())
    }

    /// Subset of points by index.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut out = PointCloud::new(self.feature_dim);
        for &i in indices {
            out.positions.push(self.positions[i]);
            out.features.extend_from_slice(self.point_features(i));
        }
        out
    }

    /// Total order over points used wherever a canonical order is required.
    fn cmp_points(&self, a: usize, b: usize) -> Ordering {
        let pa = self.positions[a].iter().chain(self.point_features(a));
        let pb = self.positions[b].iter().chain(self.point_features(b));
        pa.zip(pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    /// CSV with header `x,y,z,<feature names...>`.
    pub fn to_csv(&self, feature_names: &[&str]) -> String {
        let mut s = String::from("x,y,z");
        for n in feature_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for i in 0..self.len() {
            let p = self.positions[i];
            let _ = write!(s, "{:?},{:?},{:?}", p[0], p[1], p[2]);
            for f in self.point_features(i) {
                let _ = write!(s, ",{f:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format("empty point CSV"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[..3] != ["x", "y", "z"] {
            return Err(Error::format("point CSV header must start with x,y,z"));
        }
        let mut cloud = PointCloud::new(cols.len() - 3);
        for (n, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(format!("point CSV row {}: bad number", n + 1)))?;
            if vals.len() != cols.len() {
                return Err(Error::format(format!("point CSV row {}: wrong column count", n + 1)));
            }
            cloud
                .push([vals[0], vals[1], vals[2]], &vals[3..])
                .map_err(|e| Error::format(e.to_string()))?;
        }
        Ok(cloud)
    }

    /// `PCLD` magic, u32 point count, u32 row width (3 + feature_dim), then
    /// little-endian f64 rows `x y z features...`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = 3 + self.feature_dim;
        let mut out = Vec::with_capacity(12 + self.len() * width * 8);
        out.extend_from_slice(PCLD_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(width as u32).to_le_bytes());
        for i in 0..self.len() {
            for v in self.positions[i].iter().chain(self.point_features(i)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != PCLD_MAGIC {
            return Err(Error::format("missing PCLD header"));
        }
        let count = read_u32(&bytes[4..8]) as usize;
        let width = read_u32(&bytes[8..12]) as usize;
        if width < 3 || bytes.len() != 12 + count * width * 8 {
            return Err(Error::format("PCLD body size mismatch"));
        }
        let mut cloud = PointCloud::new(width - 3);
        for row in bytes[12..].chunks_exact(width * 8) {
            let v: Vec<f64> = row
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cloud
                .push([v[0], v[1], v[2]], &v[3..])
                .map_err(|e| Error::format(e.to_string()))?;
        }
        Ok(cloud)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        if bytes.starts_with(PCLD_MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            Self::from_csv(&String::from_utf8_lossy(&bytes))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelConfig {
    pub voxel_size: Vec3,
    pub range_min: Vec3,
    pub range_max: Vec3,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        Self {
            voxel_size: [0.1, 0.1, 0.1],
            range_min: [-40.0, -40.0, -3.0],
            range_max: [40.0, 40.0, 3.0],
        }
    }
}

impl VoxelConfig {
    /// Checks sizes and range, returning the grid dimensions. Each range
    /// extent must be a whole number of voxels so every cell center lies
    /// strictly inside the range.
    pub fn grid_dims(&self) -> Result<[i64; 3]> {
        let mut dims = [0i64; 3];
        for a in 0..3 {
            let s = self.voxel_size[a];
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::config("voxel_size", "sizes must be positive and finite"));
            }
            let ext = self.range_max[a] - self.range_min[a];
            if !(ext > 0.0) || !ext.is_finite() {
                return Err(Error::config("range", "range must be non-degenerate"));
            }
            let n = (ext / s).round();
            if n < 1.0 || ((ext / s) - n).abs() > 1e-6 * n.max(1.0) {
                return Err(Error::config(
                    "range",
                    format!("extent {ext} on axis {a} is not a multiple of voxel size {s}"),
                ));
            }
            dims[a] = n as i64;
        }
        Ok(dims)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.range_min[a] && p[a] < self.range_max[a])
    }

    /// Cell of an in-range point. Rounding just below the upper bound is
    /// clamped into the last cell.
    pub fn cell_of(&self, p: &Vec3, dims: &[i64; 3]) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            let i = ((p[a] - self.range_min[a]) / self.voxel_size[a]).floor() as i64;
            c[a] = i.clamp(0, dims[a] - 1);
        }
        c
    }

    pub fn center_of(&self, cell: &[i64; 3]) -> Vec3 {
        let mut v = [0.0; 3];
        for a in 0..3 {
            v[a] = self.range_min[a] + (cell[a] as f64 + 0.5) * self.voxel_size[a];
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    pub cell: [i64; 3],
    pub center: Vec3,
    /// Mean point features followed by the mean offset from `center`.
    pub feature: Vec<f64>,
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    pub feature_dim: usize,
    pub voxels: Vec<Voxel>,
}

impl VoxelSet {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn total_points(&self) -> usize {
        self.voxels.iter().map(|v| v.point_count).sum()
    }
}

/// Buckets in-range points into cells and mean-pools each non-empty cell.
///
/// Members of a cell are summed in a canonical point order, so the result is
/// bit-identical under any permutation of the input.
pub fn voxelize(cloud: &PointCloud, cfg: &VoxelConfig) -> Result<VoxelSet> {
    let dims = cfg.grid_dims()?;
    let fdim = cloud.feature_dim();
    let mut members: Vec<([i64; 3], usize)> = cloud
        .positions()
        .iter()
        .enumerate()
        .filter(|(_, p)| cfg.contains(p))
        .map(|(i, p)| (cfg.cell_of(p, &dims), i))
        .collect();
    members.sort_unstable_by(|a, b| a.0.cmp(&b.0).then_with(|| cloud.cmp_points(a.1, b.1)));

    let mut voxels = Vec::new();
    for run in members.chunk_by(|a, b| a.0 == b.0) {
        let cell = run[0].0;
        let center = cfg.center_of(&cell);
        let mut feature = vec![0.0; fdim + 3];
        for &(_, i) in run {
            for (acc, v) in feature.iter_mut().zip(cloud.point_features(i)) {
                *acc += v;
            }
            let p = cloud.positions()[i];
            for a in 0..3 {
                feature[fdim + a] += p[a] - center[a];
            }
        }
        let n = run.len() as f64;
        feature.iter_mut().for_each(|v| *v /= n);
        voxels.push(Voxel {
            cell,
            center,
            feature,
            point_count: run.len(),
        });
    }
    Ok(VoxelSet {
        feature_dim: fdim + 3,
        voxels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> VoxelConfig {
        VoxelConfig {
            voxel_size: [0.5, 0.5, 0.25],
            range_min: [-2.0, -2.0, -1.0],
            range_max: [2.0, 2.0, 1.0],
        }
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let mut c = PointCloud::new(1);
        for _ in 0..n {
            let p = [
                rng.gen_range(-2.5..2.5),
                rng.gen_range(-2.5..2.5),
                rng.gen_range(-1.2..1.2),
            ];
            c.push(p, &[rng.gen_range(0.0..1.0)]).unwrap();
        }
        c
    }

    /// Dense-grid accumulation: every cell of the full grid gets a bucket.
    fn dense_grid_oracle(cloud: &PointCloud, cfg: &VoxelConfig) -> VoxelSet {
        let n = [8usize, 8, 8];
        let mut grid: Vec<Vec<usize>> = vec![Vec::new(); n[0] * n[1] * n[2]];
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        order.sort_by(|&a, &b| cloud.cmp_points(a, b));
        for i in order {
            let p = cloud.positions()[i];
            if (0..3).any(|a| p[a] < cfg.range_min[a] || p[a] >= cfg.range_max[a]) {
                continue;
            }
            let ix: Vec<usize> = (0..3)
                .map(|a| {
                    (((p[a] - cfg.range_min[a]) / cfg.voxel_size[a]).floor() as usize).min(n[a] - 1)
                })
                .collect();
            grid[(ix[0] * n[1] + ix[1]) * n[2] + ix[2]].push(i);
        }
        let mut voxels = Vec::new();
        for x in 0..n[0] {
            for y in 0..n[1] {
                for z in 0..n[2] {
                    let pts = &grid[(x * n[1] + y) * n[2] + z];
                    if pts.is_empty() {
                        continue;
                    }
                    let center = [
                        cfg.range_min[0] + (x as f64 + 0.5) * cfg.voxel_size[0],
                        cfg.range_min[1] + (y as f64 + 0.5) * cfg.voxel_size[1],
                        cfg.range_min[2] + (z as f64 + 0.5) * cfg.voxel_size[2],
                    ];
                    let mut f = [0.0; 4];
                    for &i in pts {
                        f[0] += cloud.point_features(i)[0];
                        for a in 0..3 {
                            f[1 + a] += cloud.positions()[i][a] - center[a];
                        }
                    }
                    voxels.push(Voxel {
                        cell: [x as i64, y as i64, z as i64],
                        center,
                        feature: f.iter().map(|v| v / pts.len() as f64).collect(),
                        point_count: pts.len(),
                    });
                }
            }
        }
        VoxelSet {
            feature_dim: 4,
            voxels,
        }
    }

    #[test]
    fn point_at_center_has_zero_offset() {
        let cfg = small_cfg();
        let mut c = PointCloud::new(1);
        c.push(cfg.center_of(&[3, 4, 5]), &[0.7]).unwrap();
        let v = voxelize(&c, &cfg).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.voxels[0].cell, [3, 4, 5]);
        assert_eq!(v.voxels[0].feature, vec![0.7, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_points_average_intensity() {
        let cfg = small_cfg();
        let mut c = PointCloud::new(1);
        c.push([0.1, 0.1, 0.1], &[0.0]).unwrap();
        c.push([0.2, 0.2, 0.2], &[1.0]).unwrap();
        let v = voxelize(&c, &cfg).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.voxels[0].feature[0], 0.5);
        assert_eq!(v.voxels[0].point_count, 2);
    }

    #[test]
    fn upper_boundary_and_out_of_range_discarded() {
        let cfg = small_cfg();
        let mut c = PointCloud::new(1);
        c.push([2.0, 0.0, 0.0], &[1.0]).unwrap();
        c.push([0.0, -2.0001, 0.0], &[1.0]).unwrap();
        c.push([-2.0, -2.0, -1.0], &[1.0]).unwrap();
        let v = voxelize(&c, &cfg).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.voxels[0].cell, [0, 0, 0]);
        assert!(voxelize(&PointCloud::new(1), &cfg).unwrap().is_empty());
    }

    #[test]
    fn invalid_config_names_field() {
        let mut cfg = small_cfg();
        cfg.voxel_size[1] = 0.0;
        assert!(matches!(voxelize(&PointCloud::new(0), &cfg), Err(Error::Config { field, .. }) if field == "voxel_size"));
        let mut cfg = small_cfg();
        cfg.range_max[0] = 2.3;
        assert!(matches!(cfg.grid_dims(), Err(Error::Config { field, .. }) if field == "range"));
    }

    #[test]
    fn matches_dense_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cloud = random_cloud(&mut rng, 1000);
        let got = voxelize(&cloud, &small_cfg()).unwrap();
        assert_eq!(got, dense_grid_oracle(&cloud, &small_cfg()));
    }

    #[test]
    fn csv_and_pcld_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cloud = random_cloud(&mut rng, 20);
        let csv = cloud.to_csv(&["intensity"]);
        assert!(csv.starts_with("x,y,z,intensity\n"));
        assert_eq!(PointCloud::from_csv(&csv).unwrap(), cloud);
        assert_eq!(PointCloud::from_bytes(&cloud.to_bytes()).unwrap(), cloud);
        assert!(PointCloud::from_csv("a,b\n1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariance_and_count_conservation(seed in 0u64..10_000, n in 0usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud = random_cloud(&mut rng, n);
            let cfg = small_cfg();
            let a = voxelize(&cloud, &cfg).unwrap();
            let mut idx: Vec<usize> = (0..cloud.len()).collect();
            idx.shuffle(&mut rng);
            let b = voxelize(&cloud.select(&idx), &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            let in_range = cloud.positions().iter().filter(|p| cfg.contains(p)).count();
            prop_assert_eq!(a.total_points(), in_range);
            for v in &a.voxels {
                prop_assert!(v.point_count >= 1);
                for ax in 0..3 {
                    prop_assert!(v.center[ax] > cfg.range_min[ax] && v.center[ax] < cfg.range_max[ax]);
                }
            }
            prop_assert!(a.voxels.windows(2).all(|w| w[0].cell < w[1].cell));
        }
    }
}
