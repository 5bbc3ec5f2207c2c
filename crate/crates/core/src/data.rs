//! Procedural glyph images with attribute conditions.
//!
//! Each sample is a single anti-aliased shape on a flat background. The shape
//! attributes play the role of a caption: they are encoded into the
//! ground-truth condition, and a degraded re-encoding stands in for a caption
//! produced by an external captioner.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ImageShape;
use crate::error::{Error, Result};
use crate::nn::{Condition, Provenance};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disc,
    Square,
    Cross,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Disc, ShapeKind::Square, ShapeKind::Cross, ShapeKind::Ring];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub shape: ShapeKind,
    /// (row, col) in normalized image coordinates.
    pub center: (f64, f64),
    pub radius: f64,
    pub intensity: f64,
    pub background: f64,
}

/// Domains of the continuous attributes, in encoding order.
pub const ROW_RANGE: (f64, f64) = (0.0, 1.0);
pub const COL_RANGE: (f64, f64) = (0.0, 1.0);
pub const RADIUS_RANGE: (f64, f64) = (0.1, 0.4);
pub const INTENSITY_RANGE: (f64, f64) = (0.3, 1.0);
pub const BACKGROUND_RANGE: (f64, f64) = (0.0, 0.2);

/// Centers are drawn away from the border so every glyph stays mostly visible.
const CENTER_DRAW: (f64, f64) = (0.2, 0.8);

const SUPERSAMPLE: usize = 4;

impl GlyphSpec {
    fn attributes(&self) -> [f64; 5] {
        [
            self.center.0,
            self.center.1,
            self.radius,
            self.intensity,
            self.background,
        ]
    }

    fn with_attributes(&self, a: [f64; 5]) -> Self {
        Self {
            shape: self.shape,
            center: (a[0], a[1]),
            radius: a[2],
            intensity: a[3],
            background: a[4],
        }
    }

    fn covers(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.center.0, col - self.center.1);
        let r = self.radius;
        match self.shape {
            ShapeKind::Disc => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs().max(dy.abs()) <= 0.8 * r,
            ShapeKind::Cross => {
                let arm = r / 3.0;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.3 * r * r
            }
        }
    }

    /// Renders with 4×4 supersampling; values lie in `[0, 1]`.
    pub fn render(&self, shape: ImageShape) -> Vec<f64> {
        let (h, w) = (shape.height, shape.width);
        let mut out = Vec::with_capacity(shape.len());
        let per = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for r in 0..h {
            for c in 0..w {
                let mut hits = 0usize;
                for i in 0..SUPERSAMPLE {
                    for j in 0..SUPERSAMPLE {
                        let py = (r as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64) / h as f64;
                        let px = (c as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64) / w as f64;
                        hits += self.covers(py, px) as usize;
                    }
                }
                let cov = hits as f64 / per;
                let v = self.background + (self.intensity - self.background) * cov;
                for _ in 0..shape.channels {
                    out.push(v);
                }
            }
        }
        // row-major with channels innermost
        out
    }

    /// Draws a spec from the generator's distribution.
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        let shape = ShapeKind::ALL[rng.random_range(0..4)];
        let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        Self {
            shape,
            center: (u(rng, CENTER_DRAW), u(rng, CENTER_DRAW)),
            radius: u(rng, RADIUS_RANGE),
            intensity: u(rng, INTENSITY_RANGE),
            background: u(rng, BACKGROUND_RANGE),
        }
    }
}

/// One-hot shape ⊕ raw attributes ⊕ sinusoidal position features, zero-padded
/// or truncated to `dim`.
pub fn encode_condition(spec: &GlyphSpec, dim: usize) -> Condition {
    let mut v = vec![0.0; 4];
    v[spec.shape.index()] = 1.0;
    v.extend(spec.attributes());
    let (row, col) = spec.center;
    v.extend([
        (TAU * row).sin(),
        (TAU * row).cos(),
        (TAU * col).sin(),
        (TAU * col).cos(),
    ]);
    v.resize(dim, 0.0);
    Condition::new(v, Provenance::GroundTruth)
}

fn quantize(v: f64, (lo, hi): (f64, f64), levels: usize) -> f64 {
    let steps = (levels - 1) as f64;
    let idx = ((v - lo) / (hi - lo) * steps).round().clamp(0.0, steps);
    lo + (idx / steps) * (hi - lo)
}

/// Degraded copy of the ground-truth attributes: each continuous attribute is
/// quantized to `ceil(2 + 6·fidelity)` levels over its domain, then perturbed
/// by Gaussian noise with standard deviation `0.25·(1 − fidelity)` of the
/// domain width and clamped back into the domain. The shape kind is kept.
pub fn approximate_spec(spec: &GlyphSpec, fidelity: f64, seed: u64) -> Result<GlyphSpec> {
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(Error::config("fidelity", format!("{fidelity} not in [0,1]")));
    }
    let levels = (2.0 + 6.0 * fidelity).ceil() as usize;
    let ranges = [ROW_RANGE, COL_RANGE, RADIUS_RANGE, INTENSITY_RANGE, BACKGROUND_RANGE];
    let noise_scale = 0.25 * (1.0 - fidelity);
    let mut r = rng::stream(seed, Purpose::ApproxCondition, 0, 0);
    let mut attrs = spec.attributes();
    for (a, &range) in attrs.iter_mut().zip(&ranges) {
        let mut q = quantize(*a, range, levels);
        if noise_scale > 0.0 {
            let n: f64 = StandardNormal.sample(&mut r);
            q = (q + n * noise_scale * (range.1 - range.0)).clamp(range.0, range.1);
        }
        *a = q;
    }
    Ok(spec.with_attributes(attrs))
}

/// Approximate (captioner-like) condition for `spec`.
pub fn approximate_condition(spec: &GlyphSpec, fidelity: f64, seed: u64, dim: usize) -> Result<Condition> {
    let approx = approximate_spec(spec, fidelity, seed)?;
    let mut c = encode_condition(&approx, dim);
    c.provenance = Provenance::Approximate;
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Member,
    Holdout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Member => "member",
            Split::Holdout => "holdout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "member" => Some(Split::Member),
            "holdout" => Some(Split::Holdout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub split: Split,
    pub spec: GlyphSpec,
    #[serde(skip)]
    pub image: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub image: ImageShape,
    pub n_member: usize,
    pub n_holdout: usize,
    pub cond_dim: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            image: ImageShape::default(),
            n_member: 64,
            n_holdout: 64,
            cond_dim: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
}

/// Ids `0..n_member` are members, the rest hold-outs; every spec comes from
/// its own substream of the same distribution.
pub fn generate_dataset(cfg: &DatasetConfig) -> Dataset {
    let total = cfg.n_member + cfg.n_holdout;
    let samples = (0..total as u64)
        .map(|id| {
            let mut r = rng::stream(cfg.seed, Purpose::Dataset, id, 0);
            let spec = GlyphSpec::sample(&mut r);
            Sample {
                id,
                split: if (id as usize) < cfg.n_member {
                    Split::Member
                } else {
                    Split::Holdout
                },
                image: spec.render(cfg.image),
                spec,
            }
        })
        .collect();
    Dataset {
        config: cfg.clone(),
        samples,
    }
}

/// On-disk manifest; images live in a separate little-endian f64 blob in
/// manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
    pub image_file: String,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub build: String,
}

impl Dataset {
    pub fn members(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Member)
    }

    pub fn holdouts(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Holdout)
    }

    pub fn condition(&self, s: &Sample) -> Condition {
        encode_condition(&s.spec, self.config.cond_dim)
    }

    /// SHA-256 over specs and image bytes.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.id.to_le_bytes());
            h.update(serde_json::to_vec(&s.spec).expect("spec serializes"));
            for v in &s.image {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn image_blob(&self) -> Vec<u8> {
        self.samples
            .iter()
            .flat_map(|s| s.image.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn from_parts(manifest: DatasetManifest, blob: &[u8]) -> Result<Self> {
        let per = manifest.config.image.len();
        if blob.len() != per * manifest.samples.len() * 8 {
            return Err(Error::Format(format!(
                "image blob has {} bytes, manifest needs {}",
                blob.len(),
                per * manifest.samples.len() * 8
            )));
        }
        let mut samples = manifest.samples;
        for (s, chunk) in samples.iter_mut().zip(blob.chunks_exact(per * 8)) {
            s.image = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
        }
        Ok(Self {
            config: manifest.config,
            samples,
        })
    }
}
