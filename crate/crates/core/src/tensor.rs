//! Dense numeric building blocks: channels-last feature maps, affine layers,
//! softmax, zero-padded bilinear sampling with analytic gradients, and a
//! central-difference gradient checker.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";

/// Row-major, channels-last 2D feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "feature map data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature map value at {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn random<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..height * width * channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Per-channel mean over all pixels.
    pub fn channel_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.channels];
        if self.height * self.width == 0 {
            return mean;
        }
        for px in self.data.chunks_exact(self.channels) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
        let n = (self.height * self.width) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 8);
        out.extend_from_slice(FMAP_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != FMAP_MAGIC {
            return Err(Error::format("missing FMAP header"));
        }
        let h = read_u32(&bytes[4..8]) as usize;
        let w = read_u32(&bytes[8..12]) as usize;
        let d = read_u32(&bytes[12..16]) as usize;
        let body = &bytes[16..];
        if body.len() != h * w * d * 8 {
            return Err(Error::format(format!(
                "FMAP body has {} bytes, expected {}",
                body.len(),
                h * w * d * 8
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(h, w, d, data).map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub(crate) fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().unwrap())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Affine map `y = W x + b` with a row-major `out x in` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(Error::invalid(format!(
                "linear layer {out_dim}x{in_dim} got weight {} bias {}",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite linear layer parameter"));
        }
        Ok(Self {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Rectangular identity: ones on the leading diagonal, zero bias.
    pub fn identity(out_dim: usize, in_dim: usize) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        for i in 0..out_dim.min(in_dim) {
            layer.weight[i * in_dim + i] = 1.0;
        }
        layer
    }

    /// Uniform init in `±scale / sqrt(in_dim)` for weights and `±scale` / 10 for bias.
    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (in_dim.max(1) as f64).sqrt();
        let weight = (0..out_dim * in_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let bias = (0..out_dim)
            .map(|_| rng.gen_range(-0.1 * scale..=0.1 * scale))
            .collect();
        Self {
            out_dim,
            in_dim,
            weight,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.in_dim..(i + 1) * self.in_dim]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(Error::invalid(format!(
                "linear layer expects input of length {}, got {}",
                self.in_dim,
                input.len()
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(input, &mut out);
        Ok(out)
    }

    /// Unchecked forward for hot paths; lengths are debug-asserted.
    #[inline]
    pub fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.bias[i] + dot(self.row(i), input);
        }
    }

    /// Backward pass: accumulates parameter gradients into `grad` and returns
    /// the gradient with respect to `input`.
    pub fn backward(&self, input: &[f64], grad_out: &[f64], grad: &mut LinearLayer) -> Vec<f64> {
        debug_assert_eq!(grad.weight.len(), self.weight.len());
        let mut grad_in = vec![0.0; self.in_dim];
        for (i, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[i] += g;
            let row = self.row(i);
            let grow = &mut grad.weight[i * self.in_dim..(i + 1) * self.in_dim];
            for j in 0..self.in_dim {
                grow[j] += g * input[j];
                grad_in[j] += g * row[j];
            }
        }
        grad_in
    }

    /// Gradient with respect to the input only.
    pub fn backward_input(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for (i, &g) in grad_out.iter().enumerate() {
            for (gi, w) in grad_in.iter_mut().zip(self.row(i)) {
                *gi += g * w;
            }
        }
        grad_in
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Gradient of a softmax with respect to its logits, given its output `probs`.
pub fn softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let inner: f64 = dot(probs, grad_out);
    probs
        .iter()
        .zip(grad_out)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

/// The four bilinear taps around a subpixel location. Taps falling outside
/// the map are `None` (zero padding).
#[derive(Debug, Clone, Copy)]
struct Taps {
    idx: [Option<(usize, usize)>; 4],
    weight: [f64; 4],
    dwdx: [f64; 4],
    dwdy: [f64; 4],
}

#[inline]
fn taps(height: usize, width: usize, x: f64, y: f64) -> Taps {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let inside = |c: f64, r: f64| -> Option<(usize, usize)> {
        if c >= 0.0 && r >= 0.0 && c < width as f64 && r < height as f64 {
            Some((r as usize, c as usize))
        } else {
            None
        }
    };
    Taps {
        idx: [
            inside(x0, y0),
            inside(x0 + 1.0, y0),
            inside(x0, y0 + 1.0),
            inside(x0 + 1.0, y0 + 1.0),
        ],
        weight: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
        dwdx: [-(1.0 - fy), 1.0 - fy, -fy, fy],
        dwdy: [-(1.0 - fx), -fx, 1.0 - fx, fx],
    }
}

fn check_coords(map: &FeatureMap, x: f64, y: f64) -> Result<()> {
    if map.is_empty() {
        return Err(Error::invalid("bilinear sampling from an empty map"));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::invalid(format!("non-finite sample coordinate ({x}, {y})")));
    }
    Ok(())
}

/// Samples `map` at pixel coordinates `(x, y)` (column, row) with bilinear
/// interpolation. Out-of-map taps contribute zero.
pub fn bilinear_sample(map: &FeatureMap, x: f64, y: f64) -> Result<Vec<f64>> {
    check_coords(map, x, y)?;
    let mut out = vec![0.0; map.channels()];
    bilinear_sample_into(map, x, y, &mut out);
    Ok(out)
}

/// Unchecked variant of [`bilinear_sample`] writing into `out`.
#[inline]
pub fn bilinear_sample_into(map: &FeatureMap, x: f64, y: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    bilinear_accumulate(map, x, y, 1.0, out);
}

/// Adds `scale * sample(map, x, y)` to `out`.
#[inline]
pub fn bilinear_accumulate(map: &FeatureMap, x: f64, y: f64, scale: f64, out: &mut [f64]) {
    let t = taps(map.height(), map.width(), x, y);
    for c in 0..4 {
        if let Some((r, col)) = t.idx[c] {
            let w = t.weight[c] * scale;
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(map.pixel(r, col)) {
                    *o += w * v;
                }
            }
        }
    }
}

/// Gradient of `upstream · bilinear_sample(map, x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearGrad {
    /// `(row, col, weight)`: the map gradient at that pixel is `weight * upstream`.
    pub corners: Vec<(usize, usize, f64)>,
    pub grad_x: f64,
    pub grad_y: f64,
}

impl BilinearGrad {
    pub fn accumulate_into(&self, grad_map: &mut FeatureMap, upstream: &[f64]) {
        for &(r, c, w) in &self.corners {
            for (g, u) in grad_map.pixel_mut(r, c).iter_mut().zip(upstream) {
                *g += w * u;
            }
        }
    }
}

pub fn bilinear_sample_grad(
    map: &FeatureMap,
    x: f64,
    y: f64,
    upstream: &[f64],
) -> Result<BilinearGrad> {
    check_coords(map, x, y)?;
    if upstream.len() != map.channels() {
        return Err(Error::invalid(format!(
            "upstream length {} != channels {}",
            upstream.len(),
            map.channels()
        )));
    }
    let t = taps(map.height(), map.width(), x, y);
    let mut grad = BilinearGrad {
        corners: Vec::with_capacity(4),
        grad_x: 0.0,
        grad_y: 0.0,
    };
    for c in 0..4 {
        if let Some((r, col)) = t.idx[c] {
            grad.corners.push((r, col, t.weight[c]));
            let proj = dot(map.pixel(r, col), upstream);
            grad.grad_x += t.dwdx[c] * proj;
            grad.grad_y += t.dwdy[c] * proj;
        }
    }
    Ok(grad)
}

/// Hot-path gradient: scatters `scale * upstream` into `grad_map` and returns
/// `(d/dx, d/dy)` of `upstream · sample`.
#[inline]
pub(crate) fn bilinear_backward_into(
    map: &FeatureMap,
    x: f64,
    y: f64,
    upstream: &[f64],
    grad_map: &mut FeatureMap,
) -> (f64, f64) {
    let t = taps(map.height(), map.width(), x, y);
    let (mut gx, mut gy) = (0.0, 0.0);
    for c in 0..4 {
        if let Some((r, col)) = t.idx[c] {
            let proj = dot(map.pixel(r, col), upstream);
            gx += t.dwdx[c] * proj;
            gy += t.dwdy[c] * proj;
            let w = t.weight[c];
            if w != 0.0 {
                for (g, u) in grad_map.pixel_mut(r, col).iter_mut().zip(upstream) {
                    *g += w * u;
                }
            }
        }
    }
    (gx, gy)
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares `analytic` against the central-difference gradient of `f` at
/// `point`. The relative error denominator is `max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    if analytic.len() != point.len() {
        return Err(Error::invalid("analytic gradient length differs from point length"));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    let mut x = point.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Evaluation(format!(
                "function not finite around coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_relative_error || i == 0 {
            report = GradCheckReport {
                max_relative_error: rel.max(report.max_relative_error),
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}
