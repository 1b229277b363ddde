//! Sequence distances usable on either signature part.
//!
//! Every metric is oriented as a distance in `[0, 1]` (0 = identical) so that
//! the type-part and angle-part scores can be fused with plain weights:
//!
//! * Jaccard: `1 - |X ∩ Y| / |X ∪ Y|` over the *sets* of symbols.
//! * Histogram: `1 - (Σ_c min(x_c, y_c) / max(x_c, y_c)) / |classes in X ∪ Y|`.
//! * Edit: weighted Levenshtein divided by `max(|x|, |y|) · max(weight)`.
//!
//! Two empty sequences are at distance 0 under every metric.
//!
//! [`PreparedQuery`] pre-processes one side of the comparison so that a
//! linear scan over many records avoids repeated setup. For uniform edit
//! weights it uses the bit-parallel algorithm of Myers (in Hyyrö's global
//! formulation) whenever the query fits into a 64-bit word; otherwise it
//! runs the two-row dynamic program.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Signature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Jaccard,
    Histogram,
    Edit,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Jaccard, MetricKind::Histogram, MetricKind::Edit];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Jaccard => "jaccard",
            MetricKind::Histogram => "hist",
            MetricKind::Edit => "edit",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jaccard" => Ok(MetricKind::Jaccard),
            "hist" | "histogram" => Ok(MetricKind::Histogram),
            "edit" | "levenshtein" => Ok(MetricKind::Edit),
            other => Err(Error::Parse {
                position: 0,
                message: format!("unknown metric {other:?} (expected jaccard, hist or edit)"),
            }),
        }
    }
}

/// Which half of a signature a metric is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignaturePart {
    Type,
    Angle,
}

impl SignaturePart {
    pub fn other(self) -> Self {
        match self {
            SignaturePart::Type => SignaturePart::Angle,
            SignaturePart::Angle => SignaturePart::Type,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignaturePart::Type => "type",
            SignaturePart::Angle => "angle",
        }
    }
}

impl fmt::Display for SignaturePart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignaturePart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "type" => Ok(SignaturePart::Type),
            "angle" => Ok(SignaturePart::Angle),
            other => Err(Error::Parse {
                position: 0,
                message: format!("unknown signature part {other:?} (expected type or angle)"),
            }),
        }
    }
}

/// Costs of deleting, inserting and substituting one symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditWeights {
    pub del: f64,
    pub ins: f64,
    pub sub: f64,
}

impl Default for EditWeights {
    fn default() -> Self {
        Self {
            del: 1.0,
            ins: 1.0,
            sub: 1.0,
        }
    }
}

impl EditWeights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.del, self.ins, self.sub] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidPolicy(format!(
                    "edit weights must be finite and non-negative, got {self:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.del.max(self.ins).max(self.sub)
    }

    fn uniform(&self) -> Option<f64> {
        (self.del == self.ins && self.ins == self.sub).then_some(self.del)
    }
}

/// A sequence element: class symbols (`u8`) or angle bins (`u16`).
pub trait Symbol: Copy + Ord + Eq + std::hash::Hash + Send + Sync {
    fn code(self) -> usize;
}

impl Symbol for u8 {
    #[inline]
    fn code(self) -> usize {
        self as usize
    }
}

impl Symbol for u16 {
    #[inline]
    fn code(self) -> usize {
        self as usize
    }
}

/// Codes below this bound use 128-bit set masks.
const SMALL_CODES: usize = 128;

pub fn jaccard_distance<T: Symbol>(x: &[T], y: &[T]) -> f64 {
    PreparedQuery::new(MetricKind::Jaccard, x, EditWeights::default()).distance(y)
}

pub fn histogram_distance<T: Symbol>(x: &[T], y: &[T]) -> f64 {
    PreparedQuery::new(MetricKind::Histogram, x, EditWeights::default()).distance(y)
}

/// Weighted Levenshtein distance, evaluated in place on a single DP row.
///
/// Rows walk `y` and columns walk `x`: `d[i][0]` accumulates deletions of
/// `y[..i]` and `d[0][j]` insertions of `x[..j]`.
pub fn edit_distance<T: Symbol>(x: &[T], y: &[T], w: EditWeights) -> f64 {
    const STACK: usize = 64;
    if x.len() < STACK {
        let mut row = [0.0; STACK];
        edit_dp(x, y, w, &mut row[..=x.len()])
    } else {
        edit_dp(x, y, w, &mut vec![0.0; x.len() + 1])
    }
}

fn edit_dp<T: Symbol>(x: &[T], y: &[T], w: EditWeights, row: &mut [f64]) -> f64 {
    for (j, cell) in row.iter_mut().enumerate() {
        *cell = j as f64 * w.ins;
    }
    for (i, &yi) in y.iter().enumerate() {
        // `diag` holds d[i][j], `row[j + 1]` still holds d[i][j + 1]
        let mut diag = row[0];
        row[0] = (i + 1) as f64 * w.del;
        for (j, &xj) in x.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if xj == yi {
                diag
            } else {
                (up + w.del).min(row[j] + w.ins).min(diag + w.sub)
            };
            diag = up;
        }
    }
    row[x.len()]
}

pub fn edit_distance_normalized<T: Symbol>(x: &[T], y: &[T], w: EditWeights) -> f64 {
    let denom = x.len().max(y.len()) as f64 * w.scale();
    if denom == 0.0 {
        return 0.0;
    }
    edit_distance(x, y, w) / denom
}

/// Distance between one part of two signatures. Angle bins are compared as
/// plain symbols; both signatures must come from the same quantization.
pub fn part_distance(
    kind: MetricKind,
    a: &Signature,
    b: &Signature,
    part: SignaturePart,
    w: EditWeights,
) -> f64 {
    match part {
        SignaturePart::Type => PreparedQuery::new(kind, a.types(), w).distance(b.types()),
        SignaturePart::Angle => PreparedQuery::new(kind, a.bins(), w).distance(b.bins()),
    }
}

/// Unit-cost edit distance of `text` against a pattern of at most 64 symbols.
fn myers_distance<T: Symbol>(peq: &[u64], pattern_len: usize, text: &[T]) -> u32 {
    if pattern_len == 0 {
        return text.len() as u32;
    }
    let high = 1u64 << (pattern_len - 1);
    let mut pv = if pattern_len == 64 {
        u64::MAX
    } else {
        (1u64 << pattern_len) - 1
    };
    let mut mv = 0u64;
    let mut score = pattern_len as u32;
    for &c in text {
        let eq = peq.get(c.code()).copied().unwrap_or(0);
        let xv = eq | mv;
        let xh = ((eq & pv).wrapping_add(pv) ^ pv) | eq;
        let mut ph = mv | !(xh | pv);
        let mut mh = pv & xh;
        // at most one of the two high bits is set
        score = score + u32::from(ph & high != 0) - u32::from(mh & high != 0);
        // the top boundary row grows by one per text symbol
        ph = (ph << 1) | 1;
        mh <<= 1;
        pv = mh | !(xv | ph);
        mv = ph & xv;
    }
    score
}

/// Fills a stack buffer with the sorted symbols of `seq` and calls `f` on it.
fn with_sorted<T: Symbol, R>(seq: &[T], f: impl FnOnce(&[T]) -> R) -> R {
    match seq.first() {
        None => f(seq),
        Some(&fill) if seq.len() <= 64 => {
            let mut buf = [fill; 64];
            let buf = &mut buf[..seq.len()];
            buf.copy_from_slice(seq);
            buf.sort_unstable();
            f(buf)
        }
        Some(_) => {
            let mut v = seq.to_vec();
            v.sort_unstable();
            f(&v)
        }
    }
}

/// Iterates `(symbol, multiplicity)` runs of a sorted slice.
fn runs<T: Symbol>(sorted: &[T]) -> impl Iterator<Item = (T, u32)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= sorted.len() {
            return None;
        }
        let s = sorted[i];
        let start = i;
        while i < sorted.len() && sorted[i] == s {
            i += 1;
        }
        Some((s, (i - start) as u32))
    })
}

fn small_mask<T: Symbol>(seq: &[T]) -> Option<u128> {
    let mut m = 0u128;
    for &s in seq {
        let c = s.code();
        if c >= SMALL_CODES {
            return None;
        }
        m |= 1u128 << c;
    }
    Some(m)
}

enum Plan {
    Jaccard {
        mask: Option<u128>,
    },
    Histogram {
        mask: Option<u128>,
        counts: Vec<u32>,
    },
    EditBitParallel {
        peq: Vec<u64>,
        weight: f64,
    },
    EditDp,
}

/// One side of a comparison, pre-processed for repeated evaluation against
/// many other sequences. [`PreparedQuery::distance`] equals the corresponding
/// free function with the query as first argument.
pub struct PreparedQuery<'q, T: Symbol> {
    kind: MetricKind,
    query: &'q [T],
    weights: EditWeights,
    plan: Plan,
}

impl<'q, T: Symbol> PreparedQuery<'q, T> {
    pub fn new(kind: MetricKind, query: &'q [T], weights: EditWeights) -> Self {
        let plan = match kind {
            MetricKind::Jaccard => Plan::Jaccard {
                mask: small_mask(query),
            },
            MetricKind::Histogram => {
                let mask = small_mask(query);
                let max_code = query.iter().map(|s| s.code()).max().unwrap_or(0);
                let mut counts = vec![0u32; max_code + 1];
                for &s in query {
                    counts[s.code()] += 1;
                }
                Plan::Histogram { mask, counts }
            }
            MetricKind::Edit => match weights.uniform() {
                Some(weight) if query.len() <= 64 => {
                    let max_code = query.iter().map(|s| s.code()).max().unwrap_or(0);
                    let mut peq = vec![0u64; max_code + 1];
                    for (i, &s) in query.iter().enumerate() {
                        peq[s.code()] |= 1u64 << i;
                    }
                    Plan::EditBitParallel { peq, weight }
                }
                _ => Plan::EditDp,
            },
        };
        Self {
            kind,
            query,
            weights,
            plan,
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    /// Normalized distance in `[0, 1]` from the query to `other`.
    pub fn distance(&self, other: &[T]) -> f64 {
        let q = self.query;
        if q.is_empty() && other.is_empty() {
            return 0.0;
        }
        if q.is_empty() || other.is_empty() {
            return match self.kind {
                MetricKind::Edit if self.weights.scale() == 0.0 => 0.0,
                MetricKind::Edit => {
                    let w = &self.weights;
                    // all insertions or all deletions
                    let cost = if q.is_empty() {
                        other.len() as f64 * w.del
                    } else {
                        q.len() as f64 * w.ins
                    };
                    cost / (q.len().max(other.len()) as f64 * w.scale())
                }
                _ => 1.0,
            };
        }
        match &self.plan {
            Plan::Jaccard { mask } => match (mask, small_mask(other)) {
                (Some(a), Some(b)) => {
                    1.0 - (a & b).count_ones() as f64 / (a | b).count_ones() as f64
                }
                _ => jaccard_sorted(q, other),
            },
            Plan::Histogram { mask, counts } => match (mask, small_mask(other)) {
                (Some(a), Some(b)) => {
                    let union = (a | b).count_ones() as f64;
                    let sim = with_sorted(other, |sorted| {
                        runs(sorted)
                            .map(|(s, n)| match counts.get(s.code()).copied().unwrap_or(0) {
                                0 => 0.0,
                                m => m.min(n) as f64 / m.max(n) as f64,
                            })
                            .sum::<f64>()
                    });
                    1.0 - sim / union
                }
                _ => histogram_sorted(q, other),
            },
            Plan::EditBitParallel { peq, weight } => {
                if *weight == 0.0 {
                    return 0.0;
                }
                let d = myers_distance(peq, q.len(), other) as f64;
                // uniform weights: weighted distance = weight · unit distance,
                // and the weight cancels in the normalization
                d / q.len().max(other.len()) as f64
            }
            Plan::EditDp => edit_distance_normalized(q, other, self.weights),
        }
    }
}

fn jaccard_sorted<T: Symbol>(x: &[T], y: &[T]) -> f64 {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    let inter = a.iter().filter(|s| b.binary_search(s).is_ok()).count();
    let union = a.len() + b.len() - inter;
    1.0 - inter as f64 / union as f64
}

fn histogram_sorted<T: Symbol>(x: &[T], y: &[T]) -> f64 {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let ra: Vec<(T, u32)> = runs(&a).collect();
    let rb: Vec<(T, u32)> = runs(&b).collect();
    let (mut i, mut j, mut union, mut sim) = (0, 0, 0usize, 0.0);
    while i < ra.len() || j < rb.len() {
        union += 1;
        match (ra.get(i), rb.get(j)) {
            (Some(&(sa, na)), Some(&(sb, nb))) if sa == sb => {
                sim += na.min(nb) as f64 / na.max(nb) as f64;
                i += 1;
                j += 1;
            }
            (Some(&(sa, _)), Some(&(sb, _))) if sa < sb => i += 1,
            (Some(_), Some(_)) => j += 1,
            (Some(_), None) => i += 1,
            (None, _) => j += 1,
        }
    }
    1.0 - sim / union as f64
}
