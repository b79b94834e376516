use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use alignfuse::cli::{self, RunConfig};
use alignfuse::selftest::{self, Fault};
use alignfuse::Error;

#[derive(Parser)]
#[command(name = "alignfuse", version, about = "LiDAR/camera feature alignment toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Root seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in numerical checks.
    Selftest {
        /// Corrupt a computation on purpose (`offset-grad`).
        #[arg(long)]
        inject_fault: Option<Fault>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Scene, optional augmentation, voxelization, dropout and fusion.
    Pipeline {
        /// Scene directory to load instead of generating one.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Apply depth-aware augmentation before voxelizing.
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        keep_count: Option<usize>,
        /// Fusion parameter file.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Depth-aware ground-truth augmentation of one scene.
    Augment {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Build a ground-truth object database.
    Gtdb {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Number of generated scenes.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Dense vs deformable attention cost sweep.
    Bench {
        /// Map sizes, e.g. `64x64,128x128`.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        voxels: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Also time sequential vs parallel scene fusion.
        #[arg(long)]
        parallel: bool,
    },
}

fn build_config(g: &Global, cmd: &Command) -> alignfuse::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v);
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config { field: kv.clone(), reason: "expected KEY=VALUE".into() })?;
        set(k.trim(), v.to_string())?;
    }
    let path = |p: &PathBuf| p.display().to_string();
    if let Some(s) = g.seed {
        set("seed", s.to_string())?;
    }
    if let Some(o) = &g.out {
        set("out", path(o))?;
    }
    match cmd {
        Command::Selftest { .. } => {}
        Command::Pipeline { input, augment, db, keep_count, params, parallel } => {
            if let Some(p) = input {
                set("input", path(p))?;
            }
            if *augment {
                set("augment", "true".into())?;
            }
            if let Some(p) = db {
                set("db", path(p))?;
            }
            if let Some(k) = keep_count {
                set("keep_count", k.to_string())?;
            }
            if let Some(p) = params {
                set("params", path(p))?;
            }
            if *parallel {
                set("parallel", "true".into())?;
            }
        }
        Command::Augment { input, db, alpha } => {
            if let Some(p) = input {
                set("input", path(p))?;
            }
            if let Some(p) = db {
                set("db", path(p))?;
            }
            if let Some(a) = alpha {
                set("alpha", a.to_string())?;
            }
        }
        Command::Gtdb { input, scenes } => {
            if let Some(p) = input {
                set("input", path(p))?;
            }
            if let Some(n) = scenes {
                set("db_scenes", n.to_string())?;
            }
        }
        Command::Bench { sizes, voxels, reps, parallel } => {
            if let Some(s) = sizes {
                set("bench.sizes", s.clone())?;
            }
            if let Some(n) = voxels {
                set("bench.voxels", n.to_string())?;
            }
            if let Some(n) = reps {
                set("bench.reps", n.to_string())?;
            }
            if *parallel {
                set("parallel", "true".into())?;
            }
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> alignfuse::Result<bool> {
    let cfg = build_config(&cli.global, &cli.command)?;
    match cli.command {
        Command::Selftest { inject_fault, json } => {
            let report = selftest::run(inject_fault)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            } else {
                print!("{}", report.to_text());
            }
            Ok(report.passed())
        }
        Command::Pipeline { .. } => {
            let out = cli::cmd_pipeline(&cfg)?;
            let m = &out.metrics;
            println!(
                "{} voxels, {:.1}% in view, {:.1}% fused, cameras kept {:?}, checksum {}",
                m.voxel_count,
                100.0 * m.in_view_fraction,
                100.0 * m.fused_fraction,
                m.kept_cameras,
                m.fused_checksum
            );
            println!("wrote {}", cfg.out.display());
            Ok(true)
        }
        Command::Augment { .. } => {
            let s = cli::cmd_augment(&cfg)?;
            println!(
                "pasted {} objects, {} -> {} points; wrote {}",
                s.pasted_objects,
                s.points_before,
                s.points_after,
                cfg.out.display()
            );
            Ok(true)
        }
        Command::Gtdb { .. } => {
            let s = cli::cmd_gtdb(&cfg)?;
            for (cat, n) in &s.objects {
                println!("{cat:<12} {n}");
            }
            println!("wrote {}", cfg.out.join("gtdb").display());
            Ok(true)
        }
        Command::Bench { .. } => {
            let report = cli::cmd_bench(&cfg, |r| {
                eprintln!(
                    "{:<12} {:>4}x{:<4} median {:.4e} s  iqr {:.2e} s",
                    r.operator, r.h, r.w, r.median_s, r.iqr_s
                )
            })?;
            let s = &report.summary;
            println!(
                "deform spread {:.3}x, dense growth {:.1}x, ratio at largest {:.1}, monotone {}",
                s.deform_spread, s.dense_growth, s.ratio_at_largest, s.ratio_monotone
            );
            if let Some(f) = &report.fuse_scene {
                println!(
                    "fuse_scene {} voxels: sequential {:.4} s, parallel {:.4} s on {} threads",
                    f.voxels, f.sequential_s, f.parallel_s, f.threads
                );
            }
            println!("wrote {}", cfg.out.display());
            Ok(s.ratio_monotone)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
