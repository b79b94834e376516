//! Timing harness comparing dense cross-attention with the deformable
//! operator across feature-map sizes.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{
    deform_cafa_batch, dense_cafa_batch, CafaShape, DeformCafaParams, DenseCafaParams,
};
use crate::tensor::FeatureMap;

pub const DENSE: &str = "dense_cafa";
pub const DEFORM: &str = "deform_cafa";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<(usize, usize)>,
    pub voxels: usize,
    pub heads: usize,
    pub points: usize,
    /// Image and voxel channels.
    pub channels: usize,
    pub reps: usize,
    pub warmup: usize,
    /// Samples shorter than this are auto-scaled by repeating the call.
    pub min_sample_s: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![(64, 64), (128, 128), (256, 256), (512, 512)],
            voxels: 10_000,
            heads: 4,
            points: 8,
            channels: 8,
            reps: 10,
            warmup: 1,
            min_sample_s: 0.2,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::config("sizes", "need at least one non-empty map size"));
        }
        if self.reps < 10 {
            return Err(Error::config("reps", "at least 10 repetitions are required"));
        }
        if self.heads == 0 || self.points == 0 || self.channels == 0 {
            return Err(Error::config("shape", "heads, points and channels must be positive"));
        }
        if !(self.min_sample_s >= 0.0) {
            return Err(Error::config("min_sample_s", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub operator: String,
    pub h: usize,
    pub w: usize,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Seconds per operator call over all `n` voxels.
    pub median_s: f64,
    pub iqr_s: f64,
    pub reps: usize,
    /// Calls per timed sample (raised when a call is below timer resolution).
    pub inner_iters: usize,
    /// Set when the workload is empty and times sit at the timer floor.
    pub degenerate: bool,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Calls per sample needed for one sample to last at least `min_sample_s`.
pub fn calibrate<F: FnMut()>(f: &mut F, min_sample_s: f64) -> usize {
    let mut inner = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..inner {
            f();
        }
        if t.elapsed().as_secs_f64() >= min_sample_s || inner >= 1 << 20 {
            return inner;
        }
        inner *= 2;
    }
}

/// Seconds per call over one sample of `inner` calls.
pub fn sample<F: FnMut()>(f: &mut F, inner: usize) -> f64 {
    let t = Instant::now();
    for _ in 0..inner {
        f();
    }
    t.elapsed().as_secs_f64() / inner as f64
}

/// Median and interquartile range.
pub fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile(&s, 0.5), quantile(&s, 0.75) - quantile(&s, 0.25))
}

/// Median and interquartile range of per-call seconds, plus the number of
/// calls per sample.
pub fn time_call<F: FnMut()>(mut f: F, reps: usize, warmup: usize, min_sample_s: f64) -> (f64, f64, usize) {
    for _ in 0..warmup {
        f();
    }
    let inner = calibrate(&mut f, min_sample_s);
    let samples: Vec<f64> = (0..reps).map(|_| sample(&mut f, inner)).collect();
    let (median, iqr) = median_iqr(&samples);
    (median, iqr, inner)
}

/// Shared random inputs for one map size.
pub struct BenchInputs {
    pub map: FeatureMap,
    pub refs: Vec<Vec<[f64; 2]>>,
    pub voxel_feats: Vec<f64>,
}

pub fn make_inputs(h: usize, w: usize, n: usize, channels: usize, seed: u64) -> BenchInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = FeatureMap::random(h, w, channels, &mut rng);
    let refs = (0..n)
        .map(|_| vec![[rng.gen_range(0.0..(w - 1) as f64), rng.gen_range(0.0..(h - 1) as f64)]])
        .collect();
    let voxel_feats = (0..n * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    BenchInputs { map, refs, voxel_feats }
}

pub fn bench_params(cfg: &BenchConfig, seed: u64) -> Result<(DeformCafaParams, DenseCafaParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = CafaShape {
        heads: cfg.heads,
        points: cfg.points,
        ..CafaShape::standard(cfg.channels, cfg.channels)
    };
    let deform = DeformCafaParams::random(shape, 4.0, &mut rng)?;
    let dense = DenseCafaParams::random(cfg.channels, cfg.channels, cfg.channels, cfg.channels, &mut rng);
    Ok((deform, dense))
}

fn ensure_finite(out: &[f64], op: &str) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("{op} produced a non-finite output")))
    }
}

/// Times both operators at every size on identical inputs. Repetitions are
/// interleaved round-robin over all (size, operator) pairs so slow phases of
/// a shared machine hit every configuration alike. `progress` receives each
/// finished result.
pub fn run_complexity_sweep(
    cfg: &BenchConfig,
    seed: u64,
    mut progress: impl FnMut(&BenchResult),
) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    let (deform, dense) = bench_params(cfg, seed)?;
    let inputs: Vec<BenchInputs> = cfg
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &(h, w))| make_inputs(h, w, cfg.voxels, cfg.channels, seed.wrapping_add(1 + i as u64)))
        .collect();
    for inp in &inputs {
        let levels = std::slice::from_ref(&inp.map);
        ensure_finite(&deform_cafa_batch(levels, &inp.refs, &inp.voxel_feats, &deform)?, DEFORM)?;
        ensure_finite(&dense_cafa_batch(&inp.map, &inp.voxel_feats, &dense)?, DENSE)?;
    }

    let run = |op: &str, inp: &BenchInputs| {
        if op == DEFORM {
            std::hint::black_box(
                deform_cafa_batch(std::slice::from_ref(&inp.map), &inp.refs, &inp.voxel_feats, &deform).ok(),
            );
        } else {
            std::hint::black_box(dense_cafa_batch(&inp.map, &inp.voxel_feats, &dense).ok());
        }
    };
    let jobs: Vec<(usize, &str)> = (0..inputs.len())
        .flat_map(|i| [(i, DEFORM), (i, DENSE)])
        .collect();
    let mut inner = Vec::with_capacity(jobs.len());
    for &(i, op) in &jobs {
        let mut f = || run(op, &inputs[i]);
        for _ in 0..cfg.warmup {
            f();
        }
        inner.push(calibrate(&mut f, cfg.min_sample_s));
    }
    // Each round times one operator at every size back to back, starting
    // from a different size each round, so throughput drift on a shared
    // machine lands on all sizes alike.
    let sizes = inputs.len();
    let mut samples = vec![Vec::with_capacity(cfg.reps); jobs.len()];
    for round in 0..cfg.reps {
        for op in 0..2 {
            for step in 0..sizes {
                let j = 2 * ((round + step) % sizes) + op;
                let (i, name) = jobs[j];
                samples[j].push(sample(&mut || run(name, &inputs[i]), inner[j]));
            }
        }
    }

    let mut results = Vec::with_capacity(jobs.len());
    for (j, &(i, op)) in jobs.iter().enumerate() {
        let (h, w) = cfg.sizes[i];
        let (median, iqr) = median_iqr(&samples[j]);
        let r = BenchResult {
            operator: op.to_string(),
            h,
            w,
            n: cfg.voxels,
            m: cfg.heads,
            k: cfg.points,
            median_s: median,
            iqr_s: iqr,
            reps: cfg.reps,
            inner_iters: inner[j],
            degenerate: cfg.voxels == 0,
        };
        progress(&r);
        results.push(r);
    }
    Ok(results)
}

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut s = String::from("operator,h,w,N,M,K,median_s,iqr_s,reps\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:e},{:e},{}",
            r.operator, r.h, r.w, r.n, r.m, r.k, r.median_s, r.iqr_s, r.reps
        );
    }
    s
}

fn median_of(results: &[BenchResult], op: &str, h: usize, w: usize) -> Option<f64> {
    results
        .iter()
        .find(|r| r.operator == op && r.h == h && r.w == w)
        .map(|r| r.median_s)
}

/// `(area, dense / deformable)` in sweep order.
pub fn ratios(results: &[BenchResult]) -> Vec<(usize, f64)> {
    let mut sizes: Vec<(usize, usize)> = Vec::new();
    for r in results {
        if !sizes.contains(&(r.h, r.w)) {
            sizes.push((r.h, r.w));
        }
    }
    sizes.sort_by_key(|&(h, w)| h * w);
    sizes
        .into_iter()
        .filter_map(|(h, w)| {
            let d = median_of(results, DENSE, h, w)?;
            let f = median_of(results, DEFORM, h, w)?;
            Some((h * w, d / f))
        })
        .collect()
}

/// Dense/deformable ratio must not decrease with area, tolerating one
/// inversion.
pub fn ratio_is_monotone(results: &[BenchResult]) -> bool {
    let r = ratios(results);
    r.windows(2).filter(|w| w[1].1 < w[0].1).count() <= 1
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub results: Vec<BenchResult>,
    /// Slowest over fastest deformable median across sizes.
    pub deform_spread: f64,
    /// Dense median at the largest size over the smallest.
    pub dense_growth: f64,
    /// Dense over deformable at the largest size.
    pub ratio_at_largest: f64,
    pub ratio_monotone: bool,
}

pub fn summarize(results: &[BenchResult]) -> BenchSummary {
    let pick = |op: &str| -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = results
            .iter()
            .filter(|r| r.operator == op)
            .map(|r| (r.h * r.w, r.median_s))
            .collect();
        v.sort_by_key(|x| x.0);
        v
    };
    let deform = pick(DEFORM);
    let dense = pick(DENSE);
    let spread = {
        let max = deform.iter().map(|x| x.1).fold(f64::NAN, f64::max);
        let min = deform.iter().map(|x| x.1).fold(f64::NAN, f64::min);
        max / min
    };
    let growth = match (dense.first(), dense.last()) {
        (Some(a), Some(b)) => b.1 / a.1,
        _ => f64::NAN,
    };
    let ratio_at_largest = ratios(results).last().map_or(f64::NAN, |r| r.1);
    BenchSummary {
        results: results.to_vec(),
        deform_spread: spread,
        dense_growth: growth,
        ratio_at_largest,
        ratio_monotone: ratio_is_monotone(results),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(op: &str, side: usize, t: f64) -> BenchResult {
        BenchResult {
            operator: op.into(),
            h: side,
            w: side,
            n: 10,
            m: 4,
            k: 8,
            median_s: t,
            iqr_s: 0.0,
            reps: 10,
            inner_iters: 1,
            degenerate: false,
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn monotonicity_allows_one_inversion() {
        let mk = |ratios: &[f64]| -> Vec<BenchResult> {
            ratios
                .iter()
                .enumerate()
                .flat_map(|(i, r)| [fake(DEFORM, 8 << i, 1.0), fake(DENSE, 8 << i, *r)])
                .collect()
        };
        assert!(ratio_is_monotone(&mk(&[1.0, 2.0, 4.0, 8.0])));
        assert!(ratio_is_monotone(&mk(&[1.0, 2.5, 2.0, 8.0])));
        assert!(!ratio_is_monotone(&mk(&[4.0, 2.0, 1.0, 0.5])));
        let s = summarize(&mk(&[1.0, 2.0, 4.0, 8.0]));
        assert_eq!(s.dense_growth, 8.0);
        assert_eq!(s.deform_spread, 1.0);
    }

    #[test]
    fn csv_has_one_row_per_operator_and_size() {
        let cfg = BenchConfig {
            sizes: vec![(8, 8), (16, 16)],
            voxels: 20,
            reps: 10,
            warmup: 0,
            min_sample_s: 0.0,
            ..BenchConfig::default()
        };
        let res = run_complexity_sweep(&cfg, 1, |_| {}).unwrap();
        let csv = to_csv(&res);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "operator,h,w,N,M,K,median_s,iqr_s,reps");
        assert_eq!(lines.len(), 5);
        assert!(res.iter().all(|r| r.median_s > 0.0 && r.reps >= 10));
    }

    #[test]
    fn zero_voxels_is_flagged_degenerate() {
        let cfg = BenchConfig {
            sizes: vec![(8, 8)],
            voxels: 0,
            min_sample_s: 1e-4,
            ..BenchConfig::default()
        };
        let res = run_complexity_sweep(&cfg, 1, |_| {}).unwrap();
        assert!(res.iter().all(|r| r.degenerate));
    }

    #[test]
    fn rejects_too_few_reps() {
        let cfg = BenchConfig { reps: 3, ..BenchConfig::default() };
        assert!(matches!(run_complexity_sweep(&cfg, 1, |_| {}), Err(Error::Config { .. })));
    }
}
