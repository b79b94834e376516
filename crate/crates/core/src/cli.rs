//! Run configuration and the subcommand implementations behind the binary.
//!
//! Configuration file grammar: one `key = value` per line, `#` starts a
//! comment, blank lines are ignored. Keys are listed in [`RunConfig::set`].
//! Command-line flags are applied after the file, so flags win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{build_gt_database, depth_aware_gt_aug, AugConfig, CollisionPolicy, GtDatabase};
use crate::bench::{self, BenchConfig, BenchSummary};
use crate::error::{Error, Result};
use crate::fusion::{
    fuse_scene, fuse_scene_parallel, make_dropout_mask, CafaShape, DeformCafaParams, FusedVoxelSet,
    Provenance,
};
use crate::scene::{generate_pyramid, generate_scene, FeaturePyramid, SceneConfig, SceneSample};
use crate::seed::{derive, derive_indexed, Stream};
use crate::voxel::{voxelize, VoxelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub voxel: VoxelConfig,
    pub aug: AugConfig,
    pub scene: SceneConfig,
    pub bench: BenchConfig,
    /// Fusion parameters file; freshly initialized parameters when absent.
    pub params: Option<PathBuf>,
    pub keep_count: usize,
    pub pyramid_levels: usize,
    /// Run depth-aware augmentation inside `pipeline`.
    pub augment: bool,
    /// Scenes generated to build a database when none is given.
    pub db_scenes: usize,
    /// Input scene directory; a scene is generated when absent.
    pub input: Option<PathBuf>,
    /// Input database directory; one is built when absent.
    pub db: Option<PathBuf>,
    pub out: PathBuf,
    /// Use the rayon path for fusion.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            voxel: VoxelConfig::default(),
            aug: AugConfig::default(),
            scene: SceneConfig::default(),
            bench: BenchConfig::default(),
            params: None,
            keep_count: 6,
            pyramid_levels: 3,
            augment: false,
            db_scenes: 1,
            input: None,
            db: None,
            out: PathBuf::from("out"),
            parallel: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_vec3(key: &str, value: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| parse(key, t))
        .collect::<Result<_>>()?;
    match v.len() {
        1 => Ok([v[0]; 3]),
        3 => Ok([v[0], v[1], v[2]]),
        _ => Err(Error::config(key, "expected 1 or 3 numbers")),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

/// `64x64,128x128` style size list.
pub fn parse_sizes(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (h, w) = t
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::config(key, format!("size `{t}` is not HxW")))?;
            Ok((parse(key, h)?, parse(key, w)?))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` setting.
    ///
    /// Keys: `seed`, `voxel_size`, `range_min`, `range_max`, `alpha`,
    /// `max_paste.<category>`, `collision` (`reject` | `ignore`), `params`,
    /// `keep_count`, `pyramid_levels`, `augment`, `db_scenes`, `input`, `db`,
    /// `out`, `parallel`, `scene.cameras`, `scene.boxes`,
    /// `scene.points_per_box`, `scene.ground_points`, `scene.image_width`,
    /// `scene.image_height`, `scene.hfov_deg`, `bench.sizes`, `bench.voxels`,
    /// `bench.heads`, `bench.points`, `bench.channels`, `bench.reps`,
    /// `bench.warmup`, `bench.min_sample_s`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "voxel_size" => self.voxel.voxel_size = parse_vec3(key, v)?,
            "range_min" => self.voxel.range_min = parse_vec3(key, v)?,
            "range_max" => self.voxel.range_max = parse_vec3(key, v)?,
            "alpha" => self.aug.alpha = parse(key, v)?,
            "collision" => {
                self.aug.collision = match v {
                    "reject" => CollisionPolicy::RejectBevOverlap,
                    "ignore" => CollisionPolicy::Ignore,
                    _ => return Err(Error::config(key, "expected `reject` or `ignore`")),
                }
            }
            "params" => self.params = Some(PathBuf::from(v)),
            "keep_count" => self.keep_count = parse(key, v)?,
            "pyramid_levels" => self.pyramid_levels = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "db_scenes" => self.db_scenes = parse(key, v)?,
            "input" => self.input = Some(PathBuf::from(v)),
            "db" => self.db = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "parallel" => self.parallel = parse_bool(key, v)?,
            "scene.cameras" => self.scene.cameras = parse(key, v)?,
            "scene.boxes" => self.scene.boxes = parse(key, v)?,
            "scene.points_per_box" => self.scene.points_per_box = parse(key, v)?,
            "scene.ground_points" => self.scene.ground_points = parse(key, v)?,
            "scene.image_width" => self.scene.image_width = parse(key, v)?,
            "scene.image_height" => self.scene.image_height = parse(key, v)?,
            "scene.hfov_deg" => self.scene.hfov_deg = parse(key, v)?,
            "bench.sizes" => self.bench.sizes = parse_sizes(key, v)?,
            "bench.voxels" => self.bench.voxels = parse(key, v)?,
            "bench.heads" => self.bench.heads = parse(key, v)?,
            "bench.points" => self.bench.points = parse(key, v)?,
            "bench.channels" => self.bench.channels = parse(key, v)?,
            "bench.reps" => self.bench.reps = parse(key, v)?,
            "bench.warmup" => self.bench.warmup = parse(key, v)?,
            "bench.min_sample_s" => self.bench.min_sample_s = parse(key, v)?,
            _ => {
                if let Some(cat) = key.strip_prefix("max_paste.") {
                    self.aug.max_paste.insert(cat.to_string(), parse(key, v)?);
                } else {
                    return Err(Error::config(key, "unknown configuration key"));
                }
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every check that can fail before work starts, so a bad field never
    /// leaves partial output behind.
    pub fn validate(&self) -> Result<()> {
        self.voxel.grid_dims()?;
        self.aug.validate()?;
        self.scene.validate()?;
        if self.keep_count > self.scene.cameras {
            return Err(Error::config(
                "keep_count",
                format!("{} exceeds the {} cameras", self.keep_count, self.scene.cameras),
            ));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::config("pyramid_levels", "must be at least 1"));
        }
        if self.db_scenes == 0 {
            return Err(Error::config("db_scenes", "must be at least 1"));
        }
        for (key, path) in [("params", &self.params), ("input", &self.input), ("db", &self.db)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::config(key, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        self.0.push(StageTiming {
            stage,
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionStats {
    pub max: f64,
    pub mean: f64,
    pub nonzero_voxels: usize,
}

/// Deterministic pipeline summary (no wall-clock values).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineMetrics {
    pub seed: u64,
    pub points: usize,
    pub voxel_count: usize,
    pub voxelized_points: usize,
    pub voxel_feature_dim: usize,
    pub cameras: usize,
    pub keep_count: usize,
    pub kept_cameras: Vec<usize>,
    pub pyramid_levels: usize,
    pub augmented: bool,
    pub pasted_objects: usize,
    /// Voxels whose center some camera sees.
    pub in_view_fraction: f64,
    /// Voxels that received an image contribution.
    pub fused_fraction: f64,
    /// `camera_<i>`, `dropped_<i>` and `out_of_view` counts.
    pub provenance: BTreeMap<String, usize>,
    pub image_contribution_norm: ContributionStats,
    /// FNV-1a 64 of the fused-voxel file.
    pub fused_checksum: String,
}

pub struct PipelineOutput {
    pub fused: FusedVoxelSet,
    pub metrics: PipelineMetrics,
    pub timings: Vec<StageTiming>,
}

impl PipelineOutput {
    /// Seconds spent on pyramids and fusion.
    pub fn image_branch_seconds(&self) -> f64 {
        self.timings
            .iter()
            .filter(|t| t.stage == "pyramids" || t.stage == "fusion")
            .map(|t| t.seconds)
            .sum()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    h
}

fn load_or_generate_scene(cfg: &RunConfig) -> Result<SceneSample> {
    match &cfg.input {
        Some(dir) => SceneSample::load(dir),
        None => generate_scene(derive(cfg.seed, Stream::Scene), &cfg.scene),
    }
}

fn load_or_build_db(cfg: &RunConfig) -> Result<GtDatabase> {
    match &cfg.db {
        Some(dir) => GtDatabase::load(dir),
        None => {
            let scenes = (0..cfg.db_scenes)
                .map(|i| generate_scene(derive_indexed(derive(cfg.seed, Stream::Database), i as u64), &cfg.scene))
                .collect::<Result<Vec<_>>>()?;
            build_gt_database(&scenes)
        }
    }
}

/// scene -> (augment) -> voxelize -> pyramids -> dropout -> fusion.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut timer = Timer(Vec::new());
    let mut scene = timer.run("scene", || load_or_generate_scene(cfg))?;
    let base_boxes = scene.annotations.len();
    if cfg.augment {
        let db = timer.run("gt_database", || load_or_build_db(cfg))?;
        scene = timer.run("augment", || {
            depth_aware_gt_aug(&scene, &db, &cfg.aug, derive(cfg.seed, Stream::Augment))
        })?;
    }
    let voxels = timer.run("voxelize", || voxelize(&scene.cloud, &cfg.voxel))?;
    let cams = scene.rig.len();
    let mask = timer.run("dropout", || {
        make_dropout_mask(cams, cfg.keep_count.min(cams), derive(cfg.seed, Stream::Dropout))
    })?;
    let params = timer.run("params", || match &cfg.params {
        Some(p) => DeformCafaParams::load(p),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, Stream::Params));
            DeformCafaParams::init(CafaShape::standard(3, voxels.feature_dim), &mut rng)
        }
    })?;
    let pyramids: Vec<Option<FeaturePyramid>> = timer.run("pyramids", || {
        scene
            .images
            .iter()
            .zip(&mask.keep)
            .map(|(img, keep)| keep.then(|| generate_pyramid(img, cfg.pyramid_levels)).transpose())
            .collect()
    })?;
    let fused = timer.run("fusion", || {
        if cfg.parallel {
            fuse_scene_parallel(&voxels, &pyramids, &scene.rig, &params, &mask)
        } else {
            fuse_scene(&voxels, &pyramids, &scene.rig, &params, &mask)
        }
    })?;

    let n = fused.voxels.len();
    let mut provenance = BTreeMap::new();
    let mut in_view = 0;
    for p in &fused.provenance {
        let key = match p {
            Provenance::Camera(c) => format!("camera_{c}"),
            Provenance::Dropped(c) => format!("dropped_{c}"),
            Provenance::OutOfView => "out_of_view".to_string(),
        };
        *provenance.entry(key).or_insert(0) += 1;
        in_view += !matches!(p, Provenance::OutOfView) as usize;
    }
    let norms: Vec<f64> = (0..n).map(|i| fused.contribution_norm(i)).collect();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let metrics = PipelineMetrics {
        seed: cfg.seed,
        points: scene.cloud.len(),
        voxel_count: n,
        voxelized_points: fused.voxels.total_points(),
        voxel_feature_dim: fused.voxels.feature_dim,
        cameras: cams,
        keep_count: mask.kept(),
        kept_cameras: (0..cams).filter(|&c| mask.keep[c]).collect(),
        pyramid_levels: cfg.pyramid_levels,
        augmented: cfg.augment,
        pasted_objects: scene.annotations.len() - base_boxes,
        in_view_fraction: frac(in_view),
        fused_fraction: frac(fused.provenance.iter().filter(|p| matches!(p, Provenance::Camera(_))).count()),
        provenance,
        image_contribution_norm: ContributionStats {
            max: norms.iter().copied().fold(0.0, f64::max),
            mean: if n == 0 { 0.0 } else { norms.iter().sum::<f64>() / n as f64 },
            nonzero_voxels: norms.iter().filter(|v| **v != 0.0).count(),
        },
        fused_checksum: format!("{:016x}", fnv1a64(&fused.to_bytes())),
    };
    Ok(PipelineOutput {
        fused,
        metrics,
        timings: timer.0,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

/// Writes `fused.fvox`, `metrics.json` and `timings.json` into `cfg.out`.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let out = run_pipeline(cfg)?;
    create_dir(&cfg.out)?;
    out.fused.save(&cfg.out.join("fused.fvox"))?;
    write(&cfg.out.join("metrics.json"), &to_json(&out.metrics))?;
    #[derive(Serialize)]
    struct Timings<'a> {
        stages: &'a [StageTiming],
        image_branch_s: f64,
        kept_cameras: usize,
    }
    let timings = Timings {
        stages: &out.timings,
        image_branch_s: out.image_branch_seconds(),
        kept_cameras: out.metrics.keep_count,
    };
    write(&cfg.out.join("timings.json"), &to_json(&timings))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentSummary {
    pub seed: u64,
    pub alpha: f64,
    pub database_objects: usize,
    pub pasted_objects: usize,
    pub points_before: usize,
    pub points_after: usize,
}

/// Writes the augmented scene to `cfg.out/scene` and `augment.json`.
pub fn cmd_augment(cfg: &RunConfig) -> Result<AugmentSummary> {
    cfg.validate()?;
    let scene = load_or_generate_scene(cfg).map_err(|e| e.in_stage("scene"))?;
    let db = load_or_build_db(cfg).map_err(|e| e.in_stage("gt_database"))?;
    let aug = depth_aware_gt_aug(&scene, &db, &cfg.aug, derive(cfg.seed, Stream::Augment))
        .map_err(|e| e.in_stage("augment"))?;
    let summary = AugmentSummary {
        seed: cfg.seed,
        alpha: cfg.aug.alpha,
        database_objects: db.len(),
        pasted_objects: aug.annotations.len() - scene.annotations.len(),
        points_before: scene.cloud.len(),
        points_after: aug.cloud.len(),
    };
    create_dir(&cfg.out)?;
    aug.save(&cfg.out.join("scene"))?;
    write(&cfg.out.join("augment.json"), &to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GtdbSummary {
    pub scenes: usize,
    pub objects: BTreeMap<String, usize>,
}

/// Builds a database from `cfg.input` or `db_scenes` generated scenes and
/// writes it under `cfg.out/gtdb`, plus `gtdb.json`.
pub fn cmd_gtdb(cfg: &RunConfig) -> Result<GtdbSummary> {
    cfg.validate()?;
    let scenes = match &cfg.input {
        Some(dir) => vec![SceneSample::load(dir)?],
        None => (0..cfg.db_scenes)
            .map(|i| generate_scene(derive_indexed(derive(cfg.seed, Stream::Database), i as u64), &cfg.scene))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("scene"))?,
    };
    let db = build_gt_database(&scenes).map_err(|e| e.in_stage("gt_database"))?;
    let summary = GtdbSummary {
        scenes: scenes.len(),
        objects: db.categories().iter().map(|(k, v)| (k.clone(), v.len())).collect(),
    };
    let dir = cfg.out.join("gtdb");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    create_dir(&dir)?;
    db.save(&dir)?;
    write(&cfg.out.join("gtdb.json"), &to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct FuseTiming {
    pub voxels: usize,
    pub sequential_s: f64,
    pub parallel_s: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    #[serde(flatten)]
    pub summary: BenchSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fuse_scene: Option<FuseTiming>,
}

/// Runs the sweep, writes `bench.csv` and `bench.json`. The caller turns a
/// non-monotone ratio into a failing exit status.
pub fn cmd_bench(cfg: &RunConfig, progress: impl FnMut(&bench::BenchResult)) -> Result<BenchReport> {
    cfg.validate()?;
    cfg.bench.validate()?;
    let results = bench::run_complexity_sweep(&cfg.bench, derive(cfg.seed, Stream::Bench), progress)?;
    let fuse = if cfg.parallel {
        Some(time_fuse_paths(cfg)?)
    } else {
        None
    };
    let report = BenchReport {
        summary: bench::summarize(&results),
        fuse_scene: fuse,
    };
    create_dir(&cfg.out)?;
    write(&cfg.out.join("bench.csv"), bench::to_csv(&results).as_bytes())?;
    write(&cfg.out.join("bench.json"), &to_json(&report))?;
    Ok(report)
}

fn time_fuse_paths(cfg: &RunConfig) -> Result<FuseTiming> {
    let seq = RunConfig { parallel: false, ..cfg.clone() };
    let par = RunConfig { parallel: true, ..cfg.clone() };
    let fusion_time = |c: &RunConfig| -> Result<(usize, f64)> {
        let mut t = Vec::new();
        let mut n = 0;
        for _ in 0..cfg.bench.reps {
            let out = run_pipeline(c)?;
            n = out.metrics.voxel_count;
            t.extend(out.timings.iter().filter(|s| s.stage == "fusion").map(|s| s.seconds));
        }
        Ok((n, bench::median_iqr(&t).0))
    };
    let (voxels, sequential_s) = fusion_time(&seq)?;
    let (_, parallel_s) = fusion_time(&par)?;
    Ok(FuseTiming {
        voxels,
        sequential_s,
        parallel_s,
        threads: rayon::current_num_threads(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# small scene\nseed = 7\nscene.boxes = 3\nscene.points_per_box = 100\n\
             scene.ground_points = 300\nscene.image_width = 64\nscene.image_height = 40\n",
        )
        .unwrap();
        cfg.out = out.to_path_buf();
        cfg
    }

    #[test]
    fn config_grammar() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("seed = 3 # trailing\n\nvoxel_size = 0.2\nrange_min = -10 -10 -2\nrange_max = 10,10,2\nmax_paste.car = 5\ncollision = ignore\nbench.sizes = 8x8, 16x32\n")
            .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.voxel.voxel_size, [0.2; 3]);
        assert_eq!(cfg.voxel.range_max, [10.0, 10.0, 2.0]);
        assert_eq!(cfg.aug.max_paste["car"], 5);
        assert_eq!(cfg.aug.collision, CollisionPolicy::Ignore);
        assert_eq!(cfg.bench.sizes, vec![(8, 8), (16, 32)]);
    }

    #[test]
    fn bad_fields_are_named() {
        let field = |text: &str| match RunConfig::default().apply_text(text).map(|_| ()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field("nonsense = 1"), "nonsense");
        assert_eq!(field("seed = x"), "seed");
        assert_eq!(field("just words"), "line 1");
        let mut cfg = RunConfig::default();
        cfg.set("alpha", "0").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "alpha"));
        let mut cfg = RunConfig::default();
        cfg.set("keep_count", "9").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "keep_count"));
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut cfg = small(&out);
        cfg.voxel.voxel_size = [0.0; 3];
        assert!(cmd_pipeline(&cfg).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn keep_count_changes_provenance_not_voxels() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        let full = run_pipeline(&cfg).unwrap();
        cfg.keep_count = 3;
        let half = run_pipeline(&cfg).unwrap();
        cfg.keep_count = 0;
        let none = run_pipeline(&cfg).unwrap();
        assert_eq!(full.metrics.voxel_count, half.metrics.voxel_count);
        assert_eq!(full.metrics.voxelized_points, half.metrics.voxelized_points);
        assert_ne!(full.metrics.provenance, half.metrics.provenance);
        assert_eq!(none.metrics.image_contribution_norm.max, 0.0);
        assert_eq!(none.metrics.image_contribution_norm.nonzero_voxels, 0);
    }

    #[test]
    fn pipeline_artifacts_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let mut cfg = small(&a);
        cfg.augment = true;
        cmd_pipeline(&cfg).unwrap();
        cfg.out = b.clone();
        cmd_pipeline(&cfg).unwrap();
        for f in ["fused.fvox", "metrics.json"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
    }

    #[test]
    fn augment_with_alpha_one_keeps_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.aug.alpha = 1.0;
        let s = cmd_augment(&cfg).unwrap();
        let scene = generate_scene(derive(cfg.seed, Stream::Scene), &cfg.scene).unwrap();
        for i in 0..scene.images.len() {
            let got = std::fs::read(dir.path().join(format!("scene/cam{i}.fmap"))).unwrap();
            assert_eq!(got, scene.images[i].to_bytes());
        }
        assert!(s.points_after >= s.points_before);
    }

    #[test]
    fn gtdb_on_a_ten_box_scene() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.scene.boxes = 10;
        let s = cmd_gtdb(&cfg).unwrap();
        let total: usize = s.objects.values().sum();
        assert!(total <= 10);
        let db = GtDatabase::load(&dir.path().join("gtdb")).unwrap();
        assert_eq!(db.len(), total);
        for o in db.objects() {
            o.validate().unwrap();
        }
    }
}
