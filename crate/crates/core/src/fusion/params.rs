use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_file, read_u32, write_file, LinearLayer};

pub const DCFA_MAGIC: &[u8; 4] = b"DCFA";
pub const DCFA_VERSION: u32 = 1;

/// Dimensions of a deformable cross-attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CafaShape {
    /// Attention heads `M`.
    pub heads: usize,
    /// Sampling points per head `K`.
    pub points: usize,
    /// Image feature channels `d`.
    pub image_dim: usize,
    /// Voxel feature channels `c`.
    pub voxel_dim: usize,
    /// Cross-domain token width.
    pub token_dim: usize,
    /// Per-head value width.
    pub head_dim: usize,
}

impl CafaShape {
    /// `M = 4`, `K = 8`, token width `d`, head width `d / M`.
    pub fn standard(image_dim: usize, voxel_dim: usize) -> Self {
        Self {
            heads: 4,
            points: 8,
            image_dim,
            voxel_dim,
            token_dim: image_dim,
            head_dim: (image_dim / 4).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("heads", self.heads),
            ("points", self.points),
            ("image_dim", self.image_dim),
            ("voxel_dim", self.voxel_dim),
            ("token_dim", self.token_dim),
            ("head_dim", self.head_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Learnable weights of the deformable cross-attention operator.
///
/// Offsets are laid out `[(m * K + k) * 2 + {0: dx, 1: dy}]` and attention
/// logits `[m * K + k]`, both in head-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformCafaParams {
    pub shape: CafaShape,
    /// Maps voxel features to the image width when `c != d`.
    pub voxel_adapter: Option<LinearLayer>,
    pub token_fc: LinearLayer,
    pub offset_net: LinearLayer,
    pub attn_net: LinearLayer,
    pub value_proj: Vec<LinearLayer>,
    pub output_proj: Vec<LinearLayer>,
}

impl DeformCafaParams {
    /// Standard initialization: random token, value and output layers, zero
    /// offset and attention layers, so the operator starts as multi-point
    /// bilinear sampling at the reference point.
    pub fn init<R: Rng + ?Sized>(shape: CafaShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let s = shape;
        Ok(Self {
            shape: s,
            voxel_adapter: (s.voxel_dim != s.image_dim)
                .then(|| LinearLayer::random(s.image_dim, s.voxel_dim, 1.0, rng)),
            token_fc: LinearLayer::random(s.token_dim, s.image_dim, 1.0, rng),
            offset_net: LinearLayer::zeros(2 * s.heads * s.points, s.token_dim),
            attn_net: LinearLayer::zeros(s.heads * s.points, s.token_dim),
            value_proj: (0..s.heads)
                .map(|_| LinearLayer::random(s.head_dim, s.image_dim, 1.0, rng))
                .collect(),
            output_proj: (0..s.heads)
                .map(|_| LinearLayer::random(s.voxel_dim, s.head_dim, 1.0, rng))
                .collect(),
        })
    }

    /// Every layer random; `offset_scale` bounds the typical offset in pixels.
    pub fn random<R: Rng + ?Sized>(shape: CafaShape, offset_scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::init(shape, rng)?;
        p.offset_net = LinearLayer::random(p.offset_net.out_dim, shape.token_dim, offset_scale, rng);
        p.attn_net = LinearLayer::random(p.attn_net.out_dim, shape.token_dim, 1.0, rng);
        Ok(p)
    }

    /// Single head whose value and output projections pass image channels
    /// straight through (output channel `i < min(c, d)` carries image channel
    /// `i`), with zero offsets and uniform attention.
    pub fn passthrough(image_dim: usize, voxel_dim: usize, points: usize) -> Result<Self> {
        let shape = CafaShape {
            heads: 1,
            points,
            image_dim,
            voxel_dim,
            token_dim: image_dim,
            head_dim: image_dim,
        };
        shape.validate()?;
        Ok(Self {
            shape,
            voxel_adapter: (voxel_dim != image_dim).then(|| LinearLayer::identity(image_dim, voxel_dim)),
            token_fc: LinearLayer::identity(image_dim, image_dim),
            offset_net: LinearLayer::zeros(2 * points, image_dim),
            attn_net: LinearLayer::zeros(points, image_dim),
            value_proj: vec![LinearLayer::identity(image_dim, image_dim)],
            output_proj: vec![LinearLayer::identity(voxel_dim, image_dim)],
        })
    }

    /// All parameters zero, same shapes. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &LinearLayer| LinearLayer::zeros(l.out_dim, l.in_dim);
        Self {
            shape: self.shape,
            voxel_adapter: self.voxel_adapter.as_ref().map(z),
            token_fc: z(&self.token_fc),
            offset_net: z(&self.offset_net),
            attn_net: z(&self.attn_net),
            value_proj: self.value_proj.iter().map(z).collect(),
            output_proj: self.output_proj.iter().map(z).collect(),
        }
    }

    /// Layers in serialization order with stable names.
    pub fn layers(&self) -> Vec<(String, &LinearLayer)> {
        let mut v = Vec::new();
        if let Some(a) = &self.voxel_adapter {
            v.push(("voxel_adapter".to_string(), a));
        }
        v.push(("token_fc".to_string(), &self.token_fc));
        v.push(("offset_net".to_string(), &self.offset_net));
        v.push(("attn_net".to_string(), &self.attn_net));
        for (m, l) in self.value_proj.iter().enumerate() {
            v.push((format!("value_proj[{m}]"), l));
        }
        for (m, l) in self.output_proj.iter().enumerate() {
            v.push((format!("output_proj[{m}]"), l));
        }
        v
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut LinearLayer)> {
        let mut v = Vec::new();
        if let Some(a) = &mut self.voxel_adapter {
            v.push(("voxel_adapter".to_string(), a));
        }
        v.push(("token_fc".to_string(), &mut self.token_fc));
        v.push(("offset_net".to_string(), &mut self.offset_net));
        v.push(("attn_net".to_string(), &mut self.attn_net));
        for (m, l) in self.value_proj.iter_mut().enumerate() {
            v.push((format!("value_proj[{m}]"), l));
        }
        for (m, l) in self.output_proj.iter_mut().enumerate() {
            v.push((format!("output_proj[{m}]"), l));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape;
        s.validate()?;
        let expect = |l: &LinearLayer, out: usize, inp: usize, name: &str| -> Result<()> {
            if l.out_dim != out
                || l.in_dim != inp
                || l.weight.len() != out * inp
                || l.bias.len() != out
            {
                return Err(Error::invalid(format!(
                    "{name} is {}x{}, expected {out}x{inp}",
                    l.out_dim, l.in_dim
                )));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} has non-finite weights")));
            }
            Ok(())
        };
        match (&self.voxel_adapter, s.voxel_dim == s.image_dim) {
            (Some(a), _) => expect(a, s.image_dim, s.voxel_dim, "voxel_adapter")?,
            (None, true) => {}
            (None, false) => {
                return Err(Error::invalid(
                    "voxel_adapter required when voxel and image widths differ",
                ))
            }
        }
        expect(&self.token_fc, s.token_dim, s.image_dim, "token_fc")?;
        expect(&self.offset_net, 2 * s.heads * s.points, s.token_dim, "offset_net")?;
        expect(&self.attn_net, s.heads * s.points, s.token_dim, "attn_net")?;
        if self.value_proj.len() != s.heads || self.output_proj.len() != s.heads {
            return Err(Error::invalid("one value and one output projection per head"));
        }
        for l in &self.value_proj {
            expect(l, s.head_dim, s.image_dim, "value_proj")?;
        }
        for l in &self.output_proj {
            expect(l, s.voxel_dim, s.head_dim, "output_proj")?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// `DCFA` file: magic, u32 version, six u32 shape fields (heads, points,
    /// image_dim, voxel_dim, token_dim, head_dim), u32 adapter flag, then each
    /// layer as u32 out, u32 in, `out*in` weights row-major, `out` biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.shape;
        let mut out = Vec::with_capacity(36 + self.param_count() * 8);
        out.extend_from_slice(DCFA_MAGIC);
        for v in [
            DCFA_VERSION as usize,
            s.heads,
            s.points,
            s.image_dim,
            s.voxel_dim,
            s.token_dim,
            s.head_dim,
            self.voxel_adapter.is_some() as usize,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (_, l) in self.layers() {
            out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
            for v in l.weight.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 36 || &bytes[..4] != DCFA_MAGIC {
            return Err(Error::format("missing DCFA header"));
        }
        let header: Vec<usize> = (0..8)
            .map(|i| read_u32(&bytes[4 + 4 * i..]) as usize)
            .collect();
        if header[0] as u32 != DCFA_VERSION {
            return Err(Error::format(format!("unsupported DCFA version {}", header[0])));
        }
        let shape = CafaShape {
            heads: header[1],
            points: header[2],
            image_dim: header[3],
            voxel_dim: header[4],
            token_dim: header[5],
            head_dim: header[6],
        };
        shape.validate().map_err(|e| Error::format(e.to_string()))?;
        let mut pos = 36;
        let mut next_layer = || -> Result<LinearLayer> {
            if bytes.len() < pos + 8 {
                return Err(Error::format("truncated DCFA layer header"));
            }
            let out_dim = read_u32(&bytes[pos..]) as usize;
            let in_dim = read_u32(&bytes[pos + 4..]) as usize;
            pos += 8;
            let n = out_dim * in_dim + out_dim;
            if bytes.len() < pos + n * 8 {
                return Err(Error::format("truncated DCFA layer body"));
            }
            let vals: Vec<f64> = bytes[pos..pos + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos += n * 8;
            let (w, b) = vals.split_at(out_dim * in_dim);
            LinearLayer::new(out_dim, in_dim, w.to_vec(), b.to_vec())
                .map_err(|e| Error::format(e.to_string()))
        };
        let voxel_adapter = if header[7] != 0 {
            Some(next_layer()?)
        } else {
            None
        };
        let token_fc = next_layer()?;
        let offset_net = next_layer()?;
        let attn_net = next_layer()?;
        let value_proj = (0..shape.heads).map(|_| next_layer()).collect::<Result<_>>()?;
        let output_proj = (0..shape.heads).map(|_| next_layer()).collect::<Result<_>>()?;
        if pos != bytes.len() {
            return Err(Error::format("trailing bytes after DCFA layers"));
        }
        let p = Self {
            shape,
            voxel_adapter,
            token_fc,
            offset_net,
            attn_net,
            value_proj,
            output_proj,
        };
        p.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Weights of the dense (all-pixel) cross-attention baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCafaParams {
    /// Voxel feature to query, `c -> d_k`.
    pub query: LinearLayer,
    /// Pixel feature to key, `d -> d_k`.
    pub key: LinearLayer,
    /// Pixel feature to value, `d -> d_v`.
    pub value: LinearLayer,
    /// Aggregated value to output, `d_v -> c`.
    pub output: LinearLayer,
}

impl DenseCafaParams {
    pub fn random<R: Rng + ?Sized>(
        image_dim: usize,
        voxel_dim: usize,
        key_dim: usize,
        value_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query: LinearLayer::random(key_dim, voxel_dim, 1.0, rng),
            key: LinearLayer::random(key_dim, image_dim, 1.0, rng),
            value: LinearLayer::random(value_dim, image_dim, 1.0, rng),
            output: LinearLayer::random(voxel_dim, value_dim, 1.0, rng),
        }
    }

    pub fn validate(&self, image_dim: usize, voxel_dim: usize) -> Result<()> {
        let dk = self.query.out_dim;
        if self.query.in_dim != voxel_dim
            || self.key.in_dim != image_dim
            || self.key.out_dim != dk
            || self.value.in_dim != image_dim
            || self.output.in_dim != self.value.out_dim
            || self.output.out_dim != voxel_dim
            || dk == 0
        {
            return Err(Error::invalid("dense attention layer shapes are inconsistent"));
        }
        Ok(())
    }
}
