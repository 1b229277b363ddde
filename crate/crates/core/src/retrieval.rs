//! Linear-scan ranking of database cells against a query signature.
//!
//! Scores are distances (lower is better). Every ranking is a total order on
//! `(score, cell_id)`, so equal scores are always broken by the smaller cell
//! id regardless of record order or thread scheduling.
//!
//! Metric fusion scores each record with
//! `alpha · D_type(q, r) + beta · D_angle(q, r)` where `beta = 1 - alpha`.
//! Two-stage fusion first scores every record with one weighted part, keeps
//! the best `ceil(k% · N)` records and adds the other weighted part for those
//! survivors only; with `k = 100` it reproduces full fusion exactly.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EditWeights, MetricKind, PreparedQuery, SignaturePart};
use crate::model::{GeoPoint, Signature, SignatureDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionPolicy {
    /// Metric for the type part.
    pub metric_type: MetricKind,
    /// Metric for the angle part.
    pub metric_angle: MetricKind,
    /// Weight of the type part; the angle part gets `1 - alpha`.
    pub alpha: f64,
    /// Share of the database kept after the first stage, in percent.
    pub k_percent: f64,
    /// Number of candidates returned.
    pub t: usize,
    pub weights: EditWeights,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self {
            metric_type: MetricKind::Edit,
            metric_angle: MetricKind::Edit,
            alpha: 0.5,
            k_percent: 5.0,
            t: 100,
            weights: EditWeights::default(),
        }
    }
}

impl FusionPolicy {
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn metric(&self, part: SignaturePart) -> MetricKind {
        match part {
            SignaturePart::Type => self.metric_type,
            SignaturePart::Angle => self.metric_angle,
        }
    }

    pub fn weight(&self, part: SignaturePart) -> f64 {
        match part {
            SignaturePart::Type => self.alpha,
            SignaturePart::Angle => self.beta(),
        }
    }

    /// Single-metric policy on one part, as a degenerate fusion.
    pub fn single(kind: MetricKind, part: SignaturePart, t: usize) -> Self {
        let mut p = Self {
            t,
            ..Self::default()
        };
        match part {
            SignaturePart::Type => {
                p.alpha = 1.0;
                p.metric_type = kind;
            }
            SignaturePart::Angle => {
                p.alpha = 0.0;
                p.metric_angle = kind;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidPolicy(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            return Err(Error::InvalidPolicy(format!(
                "k must lie in (0, 100], got {}",
                self.k_percent
            )));
        }
        if self.t == 0 {
            return Err(Error::InvalidPolicy("t must be positive".into()));
        }
        self.weights.validate()
    }

    /// Records surviving the first stage of a two-stage ranking over `n` records.
    pub fn survivors(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let exact = self.k_percent * n as f64 / 100.0;
        (exact.ceil() as usize).clamp(1, n)
    }
}

/// How a query is ranked against the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum Protocol {
    /// Metric fusion over every record.
    Full,
    /// Two-stage fusion starting from `first`.
    TwoStage { first: SignaturePart },
    /// One metric on one part.
    Single { kind: MetricKind, part: SignaturePart },
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Full => f.write_str("full"),
            Protocol::TwoStage { first } => write!(f, "two-stage-{first}-first"),
            Protocol::Single { kind, part } => write!(f, "single-{kind}-{part}"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    /// Accepts `full`, `two-stage` (type first), `two-stage-type-first`,
    /// `two-stage-angle-first` and `single-<metric>-<part>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "full" => return Ok(Protocol::Full),
            "two-stage" | "two-stage-type-first" => {
                return Ok(Protocol::TwoStage {
                    first: SignaturePart::Type,
                })
            }
            "two-stage-angle-first" => {
                return Ok(Protocol::TwoStage {
                    first: SignaturePart::Angle,
                })
            }
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("single-") {
            if let Some((kind, part)) = rest.split_once('-') {
                return Ok(Protocol::Single {
                    kind: kind.parse()?,
                    part: part.parse()?,
                });
            }
        }
        Err(Error::Parse {
            position: 0,
            message: format!("unknown protocol {s:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub cell_id: u64,
    pub cell_center: GeoPoint,
    pub score: f64,
    pub rank: usize,
}

/// A query prepared for scanning: one pre-processed matcher per part.
pub struct QueryScorer<'q> {
    types: PreparedQuery<'q, u8>,
    bins: PreparedQuery<'q, u16>,
}

impl<'q> QueryScorer<'q> {
    pub fn new(query: &'q Signature, policy: &FusionPolicy) -> Self {
        Self {
            types: PreparedQuery::new(policy.metric_type, query.types(), policy.weights),
            bins: PreparedQuery::new(policy.metric_angle, query.bins(), policy.weights),
        }
    }

    #[inline]
    pub fn part(&self, part: SignaturePart, record: &Signature) -> f64 {
        match part {
            SignaturePart::Type => self.types.distance(record.types()),
            SignaturePart::Angle => self.bins.distance(record.bins()),
        }
    }

    /// `weight · D_part`, skipping the metric entirely when the weight is zero.
    #[inline]
    fn weighted(&self, part: SignaturePart, weight: f64, record: &Signature) -> f64 {
        if weight == 0.0 {
            0.0
        } else {
            weight * self.part(part, record)
        }
    }

    #[inline]
    fn fused(&self, alpha: f64, beta: f64, record: &Signature) -> f64 {
        self.weighted(SignaturePart::Type, alpha, record)
            + self.weighted(SignaturePart::Angle, beta, record)
    }
}

/// Fused distance between two signatures.
pub fn score_fused(q: &Signature, r: &Signature, policy: &FusionPolicy) -> f64 {
    QueryScorer::new(q, policy).fused(policy.alpha, policy.beta(), r)
}

/// Ranking state after scoring one query; enough to produce the top-t list
/// and the position of any record.
#[derive(Debug, Clone)]
pub struct Ranking {
    /// Primary key per record (stage-1 key for two-stage rankings).
    keys: Vec<f64>,
    /// Stage-2 survivors with their final scores, sorted; `None` for one-stage rankings.
    survivors: Option<Vec<(usize, f64)>>,
}

impl Ranking {
    fn cmp_key(db: &SignatureDatabase, a: (usize, f64), b: (usize, f64)) -> Ordering {
        a.1.total_cmp(&b.1).then_with(|| {
            let recs = db.records();
            recs[a.0].cell_id.cmp(&recs[b.0].cell_id)
        })
    }

    /// Best `t` records, ranked from 1.
    pub fn top(&self, db: &SignatureDatabase, t: usize) -> Vec<RankedCandidate> {
        let ordered: Vec<(usize, f64)> = match &self.survivors {
            Some(s) => s.iter().take(t).copied().collect(),
            None => {
                let mut idx: Vec<(usize, f64)> = self.keys.iter().copied().enumerate().collect();
                select_sorted(db, &mut idx, t);
                idx
            }
        };
        ordered
            .into_iter()
            .enumerate()
            .map(|(i, (pos, score))| {
                let rec = &db.records()[pos];
                RankedCandidate {
                    cell_id: rec.cell_id,
                    cell_center: rec.cell_center,
                    score,
                    rank: i + 1,
                }
            })
            .collect()
    }

    /// 1-based position of the record at index `pos` in the complete ordering.
    /// Records pruned by a first stage follow every survivor, in stage-1 order.
    pub fn rank_of(&self, db: &SignatureDatabase, pos: usize) -> usize {
        if let Some(survivors) = &self.survivors {
            if let Some(i) = survivors.iter().position(|&(p, _)| p == pos) {
                return i + 1;
            }
        }
        // A pruned record is preceded by all survivors, which all have a
        // smaller stage-1 key, so its rank is simply its stage-1 rank.
        let me = (pos, self.keys[pos]);
        1 + self
            .keys
            .iter()
            .enumerate()
            .filter(|&(i, &k)| Self::cmp_key(db, (i, k), me) == Ordering::Less)
            .count()
    }

    /// Number of records whose final score was computed in the last stage.
    pub fn evaluated_in_last_stage(&self) -> usize {
        self.survivors
            .as_ref()
            .map_or(self.keys.len(), |s| s.len())
    }
}

/// Keeps the `t` smallest entries of `idx` and sorts them by `(score, cell_id)`.
fn select_sorted(db: &SignatureDatabase, idx: &mut Vec<(usize, f64)>, t: usize) {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| Ranking::cmp_key(db, *a, *b);
    if t == 0 {
        idx.clear();
        return;
    }
    if t < idx.len() {
        idx.select_nth_unstable_by(t - 1, cmp);
        idx.truncate(t);
    }
    idx.sort_unstable_by(cmp);
}

fn check_query(db: &SignatureDatabase, q: &Signature) -> Result<()> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    q.validate(db.alphabet(), db.params().quantization_levels)
}

fn scan<F>(db: &SignatureDatabase, score: F) -> Vec<f64>
where
    F: Fn(&Signature) -> f64 + Sync,
{
    db.records()
        .par_iter()
        .with_min_len(1024)
        .map(|r| score(&r.signature))
        .collect()
}

/// Scores `q` against every record under `protocol`.
pub fn rank(
    db: &SignatureDatabase,
    q: &Signature,
    policy: &FusionPolicy,
    protocol: Protocol,
) -> Result<Ranking> {
    policy.validate()?;
    check_query(db, q)?;
    match protocol {
        Protocol::Full => {
            let scorer = QueryScorer::new(q, policy);
            let (alpha, beta) = (policy.alpha, policy.beta());
            Ok(Ranking {
                keys: scan(db, |r| scorer.fused(alpha, beta, r)),
                survivors: None,
            })
        }
        Protocol::Single { kind, part } => {
            let single = FusionPolicy {
                metric_type: kind,
                metric_angle: kind,
                ..*policy
            };
            let scorer = QueryScorer::new(q, &single);
            Ok(Ranking {
                keys: scan(db, |r| scorer.part(part, r)),
                survivors: None,
            })
        }
        Protocol::TwoStage { first } => {
            let scorer = QueryScorer::new(q, policy);
            let second = first.other();
            let (w1, w2) = (policy.weight(first), policy.weight(second));
            let keys = scan(db, |r| scorer.weighted(first, w1, r));
            let mut kept: Vec<(usize, f64)> = keys.iter().copied().enumerate().collect();
            select_sorted(db, &mut kept, policy.survivors(db.len()));
            let recs = db.records();
            for entry in kept.iter_mut() {
                entry.1 += scorer.weighted(second, w2, &recs[entry.0].signature);
            }
            kept.sort_unstable_by(|a, b| Ranking::cmp_key(db, *a, *b));
            Ok(Ranking {
                keys,
                survivors: Some(kept),
            })
        }
    }
}

/// Metric fusion over the whole database; returns the best `policy.t` cells.
pub fn rank_full(
    db: &SignatureDatabase,
    q: &Signature,
    policy: &FusionPolicy,
) -> Result<Vec<RankedCandidate>> {
    Ok(rank(db, q, policy, Protocol::Full)?.top(db, policy.t))
}

/// Two-stage metric fusion starting from `first_part`.
pub fn rank_two_stage(
    db: &SignatureDatabase,
    q: &Signature,
    policy: &FusionPolicy,
    first_part: SignaturePart,
) -> Result<Vec<RankedCandidate>> {
    let protocol = Protocol::TwoStage { first: first_part };
    Ok(rank(db, q, policy, protocol)?.top(db, policy.t))
}

pub fn rank_single(
    db: &SignatureDatabase,
    q: &Signature,
    kind: MetricKind,
    part: SignaturePart,
    t: usize,
) -> Result<Vec<RankedCandidate>> {
    let policy = FusionPolicy::single(kind, part, t);
    Ok(rank(db, q, &policy, Protocol::Single { kind, part })?.top(db, t))
}

/// Rank of `truth_cell` among all records, as a percentage of the database size.
pub fn ground_truth_rank(
    db: &SignatureDatabase,
    q: &Signature,
    policy: &FusionPolicy,
    truth_cell: u64,
    protocol: Protocol,
) -> Result<f64> {
    let pos = db
        .position_of(truth_cell)
        .ok_or(Error::UnknownCell(truth_cell))?;
    let ranking = rank(db, q, policy, protocol)?;
    Ok(100.0 * ranking.rank_of(db, pos) as f64 / db.len() as f64)
}
