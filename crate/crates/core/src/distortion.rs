//! Simulated object-detection errors applied to query signatures.
//!
//! A distortion run applies a fixed number of type-level operations, each
//! drawn uniformly from miss detection (drop an element), false detection
//! (insert a random class at a random bearing) and false classification
//! (replace a class with a different one). Every element then receives
//! clipped Gaussian bearing noise around its bin center, is re-quantized,
//! and the sequence is re-sorted into sweep order.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::normalize_deg;
use crate::model::{Alphabet, Signature};
use crate::siggen::quantize_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionLevel {
    None,
    Light,
    Medium,
    Strong,
    /// Explicit number of type-level operations.
    Ops(u32),
}

impl DistortionLevel {
    pub fn op_count(self) -> u32 {
        match self {
            DistortionLevel::None => 0,
            DistortionLevel::Light => 1,
            DistortionLevel::Medium => 7,
            DistortionLevel::Strong => 13,
            DistortionLevel::Ops(n) => n,
        }
    }
}

impl fmt::Display for DistortionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistortionLevel::None => f.write_str("none"),
            DistortionLevel::Light => f.write_str("light"),
            DistortionLevel::Medium => f.write_str("medium"),
            DistortionLevel::Strong => f.write_str("strong"),
            DistortionLevel::Ops(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for DistortionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DistortionLevel::None),
            "light" => Ok(DistortionLevel::Light),
            "medium" => Ok(DistortionLevel::Medium),
            "strong" => Ok(DistortionLevel::Strong),
            other => other.parse().map(DistortionLevel::Ops).map_err(|_| Error::Parse {
                position: 0,
                message: format!(
                    "unknown distortion {other:?} (expected none, light, medium, strong or a count)"
                ),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionConfig {
    pub level: DistortionLevel,
    /// Standard deviation of the bearing noise, degrees.
    pub angle_noise_sigma: f64,
    /// Bearing noise is clipped to `±angle_noise_clip` degrees.
    pub angle_noise_clip: f64,
    pub seed: u64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self::new(DistortionLevel::None, 0)
    }
}

impl DistortionConfig {
    pub fn new(level: DistortionLevel, seed: u64) -> Self {
        Self {
            level,
            angle_noise_sigma: 5.0,
            angle_noise_clip: 30.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.angle_noise_sigma.is_finite() && self.angle_noise_sigma >= 0.0)
            || !(self.angle_noise_clip.is_finite() && self.angle_noise_clip >= 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "angle noise sigma and clip must be finite and non-negative, got {} / {}",
                self.angle_noise_sigma, self.angle_noise_clip
            )));
        }
        Ok(())
    }
}

/// Independent random stream for query `index` under `master_seed`.
pub fn query_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// What a distortion run actually did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistortionTrace {
    pub inserted: usize,
    pub removed: usize,
    pub reclassified: usize,
    /// Operations that found nothing to act on (e.g. a miss on an empty signature).
    pub no_ops: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Miss,
    False,
    Reclassify,
}

struct Element {
    class: u8,
    angle: f64,
}

/// Distorts `sig` with the stream seeded by `cfg.seed`.
pub fn distort(sig: &Signature, cfg: &DistortionConfig, alphabet: &Alphabet, levels: u16) -> Signature {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    distort_with_rng(sig, cfg, alphabet, levels, &mut rng).0
}

/// Distorts `sig` using an explicit random stream; `cfg.seed` is ignored.
pub fn distort_with_rng<R: Rng + ?Sized>(
    sig: &Signature,
    cfg: &DistortionConfig,
    alphabet: &Alphabet,
    levels: u16,
    rng: &mut R,
) -> (Signature, DistortionTrace) {
    let step = 360.0 / levels as f64;
    let mut elems: Vec<Element> = sig
        .types()
        .iter()
        .zip(sig.bins())
        .map(|(&class, &bin)| Element {
            class,
            angle: (bin as f64 + 0.5) * step,
        })
        .collect();
    let symbols: Vec<u8> = alphabet.symbols().collect();
    let mut trace = DistortionTrace::default();

    for _ in 0..cfg.level.op_count() {
        let op = [Op::Miss, Op::False, Op::Reclassify][rng.random_range(0..3)];
        match op {
            Op::Miss if !elems.is_empty() => {
                let i = rng.random_range(0..elems.len());
                elems.remove(i);
                trace.removed += 1;
            }
            Op::False if !symbols.is_empty() => {
                let class = *symbols.choose(rng).expect("non-empty");
                let angle = rng.random_range(0.0..360.0);
                elems.push(Element { class, angle });
                trace.inserted += 1;
            }
            Op::Reclassify if !elems.is_empty() && symbols.len() > 1 => {
                let i = rng.random_range(0..elems.len());
                let current = elems[i].class;
                let others: Vec<u8> = symbols.iter().copied().filter(|&s| s != current).collect();
                elems[i].class = *others.choose(rng).expect("alphabet has another class");
                trace.reclassified += 1;
            }
            _ => trace.no_ops += 1,
        }
    }

    if cfg.level != DistortionLevel::None && cfg.angle_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.angle_noise_sigma).expect("finite sigma");
        let clip = cfg.angle_noise_clip;
        for e in &mut elems {
            let noise: f64 = normal.sample(rng);
            e.angle = normalize_deg(e.angle + noise.clamp(-clip, clip));
        }
    }

    // Stable: elements with equal angles keep their sequence order.
    elems.sort_by(|a, b| a.angle.total_cmp(&b.angle));
    let types = elems.iter().map(|e| e.class).collect();
    let bins = elems
        .iter()
        .map(|e| quantize_unchecked(e.angle, levels))
        .collect();
    (Signature::new(types, bins).expect("parallel parts"), trace)
}
