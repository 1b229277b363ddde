//! Benchmark protocol: query sampling, localization-error CDFs, recall
//! curves, parameter sweeps and scoring-time statistics.
//!
//! All randomness derives from one master seed. Query `i` distorts its
//! signature with its own substream, so results do not depend on how queries
//! are scheduled across threads.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::{self, DistortionConfig, DistortionLevel};
use crate::error::{Error, Result};
use crate::geo;
use crate::model::{Alphabet, GeoBBox, GeoPoint, SemanticObject, Signature, SignatureDatabase};
use crate::retrieval::{self, FusionPolicy, Protocol, RankedCandidate};
use crate::siggen::{self, BuildParams};

/// Localization-error thresholds of the CDF, meters.
pub fn error_grid() -> Vec<f64> {
    (0..=50).map(|i| i as f64 * 10.0).collect()
}

/// Rank thresholds of the recall curve, in tenths of a percent.
const RANK_GRID_PERMILLE: [u64; 15] = [1, 5, 10, 20, 50, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000];

pub fn rank_grid() -> Vec<f64> {
    RANK_GRID_PERMILLE.iter().map(|&g| g as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub cell_id: u64,
    pub signature: Signature,
}

/// Uniform sample of `n` database records without replacement, in shuffled order.
pub fn sample_query_set(db: &SignatureDatabase, n: usize, seed: u64) -> Result<Vec<Query>> {
    if n > db.len() {
        return Err(Error::TooManyQueries {
            requested: n,
            available: db.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // kept apart from the per-query distortion streams 0..n
    rng.set_stream(u64::MAX);
    Ok(index::sample(&mut rng, db.len(), n)
        .into_iter()
        .map(|i| {
            let r = &db.records()[i];
            Query {
                cell_id: r.cell_id,
                signature: r.signature.clone(),
            }
        })
        .collect())
}

/// Distance from the true location to the closest of the returned candidates.
pub fn localization_error(
    db: &SignatureDatabase,
    truth_center: GeoPoint,
    candidates: &[RankedCandidate],
) -> Result<f64> {
    let origin = db.origin();
    let truth = geo::project(origin, truth_center)?;
    let mut best = f64::INFINITY;
    for c in candidates {
        let d = geo::planar_distance(truth, geo::project(origin, c.cell_center)?);
        best = best.min(d);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCdf {
    /// `(error_m, P(error ≤ error_m))`.
    pub points: Vec<(f64, f64)>,
}

impl ErrorCdf {
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len().max(1) as f64;
        let points = error_grid()
            .into_iter()
            .map(|x| (x, errors.iter().filter(|&&e| e <= x).count() as f64 / n))
            .collect();
        Self { points }
    }

    pub fn at(&self, error_m: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == error_m).map(|p| p.1)
    }

    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1)
            && self.points.iter().all(|p| (0.0..=1.0).contains(&p.1))
    }

    /// Error thresholds where `self` is below `baseline`.
    pub fn shortfalls(&self, baseline: &ErrorCdf) -> Vec<f64> {
        self.points
            .iter()
            .zip(&baseline.points)
            .filter(|(a, b)| a.1 < b.1)
            .map(|(a, _)| a.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    /// `(rank_percent, fraction of queries whose truth ranks within it)`.
    pub points: Vec<(f64, f64)>,
}

impl RecallCurve {
    /// `ranks` are 1-based positions among `db_len` records.
    pub fn from_ranks(ranks: &[usize], db_len: usize) -> Self {
        let n = ranks.len().max(1) as f64;
        let points = RANK_GRID_PERMILLE
            .iter()
            .map(|&g| {
                // rank / db_len ≤ g / 1000, in exact integer arithmetic
                let hits = ranks
                    .iter()
                    .filter(|&&r| r as u64 * 1000 <= g * db_len as u64)
                    .count();
                (g as f64 / 10.0, hits as f64 / n)
            })
            .collect();
        Self { points }
    }

    pub fn at(&self, rank_percent: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.0 == rank_percent)
            .map(|p| p.1)
    }

    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1)
            && self.points.iter().all(|p| (0.0..=1.0).contains(&p.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    fn from_ms(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pick = |q: f64| s[((s.len() - 1) as f64 * q).round() as usize];
        Self {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            median_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: s[s.len() - 1],
        }
    }
}

/// Result of one query in a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub cell_id: u64,
    pub error_m: f64,
    pub truth_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: FusionPolicy,
    pub protocol: Protocol,
    pub distortion: DistortionConfig,
    pub params: BuildParams,
    pub db_records: usize,
    pub outcomes: Vec<QueryOutcome>,
    pub cdf: ErrorCdf,
    pub recall: RecallCurve,
    pub p_error_le_50m: f64,
    pub recall_at_10pct: f64,
    /// Wall-clock time of scoring and ranking only; not reproducible across runs.
    pub timing: TimingStats,
}

impl EvaluationReport {
    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("error_m,cum_prob\n");
        for (x, p) in &self.cdf.points {
            let _ = writeln!(out, "{x},{p:.6}");
        }
        out
    }

    pub fn recall_csv(&self) -> String {
        let mut out = String::from("rank_pct,recall\n");
        for (x, r) in &self.recall.points {
            let _ = writeln!(out, "{x},{r:.6}");
        }
        out
    }

    /// Reproducible summary scalars. Timing lives in [`EvaluationReport::timing_csv`].
    pub fn summary_csv(&self) -> String {
        format!(
            "queries,db_records,p_error_le_50m,recall_at_10pct\n{},{},{:.6},{:.6}\n",
            self.outcomes.len(),
            self.db_records,
            self.p_error_le_50m,
            self.recall_at_10pct
        )
    }

    pub fn timing_csv(&self) -> String {
        let t = &self.timing;
        format!(
            "mean_query_ms,median_query_ms,p95_query_ms,max_query_ms\n{:.4},{:.4},{:.4},{:.4}\n",
            t.mean_ms, t.median_ms, t.p95_ms, t.max_ms
        )
    }
}

/// Distorts, ranks and scores every query.
pub fn run_benchmark(
    db: &SignatureDatabase,
    queries: &[Query],
    policy: &FusionPolicy,
    distortion_cfg: &DistortionConfig,
    protocol: Protocol,
) -> Result<EvaluationReport> {
    policy.validate()?;
    distortion_cfg.validate()?;
    let levels = db.params().quantization_levels;
    let results: Vec<(QueryOutcome, f64)> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let truth_pos = db.position_of(q.cell_id).ok_or(Error::UnknownCell(q.cell_id))?;
            let signature = if distortion_cfg.level == DistortionLevel::None {
                q.signature.clone()
            } else {
                let mut rng = distortion::query_rng(distortion_cfg.seed, i as u64);
                distortion::distort_with_rng(&q.signature, distortion_cfg, db.alphabet(), levels, &mut rng).0
            };
            let started = Instant::now();
            let ranking = retrieval::rank(db, &signature, policy, protocol)?;
            let top = ranking.top(db, policy.t);
            let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
            let truth_rank = ranking.rank_of(db, truth_pos);
            let truth_center = db.records()[truth_pos].cell_center;
            let error_m = localization_error(db, truth_center, &top)?;
            Ok((
                QueryOutcome {
                    cell_id: q.cell_id,
                    error_m,
                    truth_rank,
                },
                elapsed_ms,
            ))
        })
        .collect::<Result<_>>()?;

    let (outcomes, times): (Vec<QueryOutcome>, Vec<f64>) = results.into_iter().unzip();
    let errors: Vec<f64> = outcomes.iter().map(|o| o.error_m).collect();
    let ranks: Vec<usize> = outcomes.iter().map(|o| o.truth_rank).collect();
    let cdf = ErrorCdf::from_errors(&errors);
    let recall = RecallCurve::from_ranks(&ranks, db.len());
    let p_error_le_50m = cdf.at(50.0).expect("50 m is on the error grid");
    let recall_at_10pct = recall.at(10.0).expect("10% is on the rank grid");
    Ok(EvaluationReport {
        policy: *policy,
        protocol,
        distortion: *distortion_cfg,
        params: *db.params(),
        db_records: db.len(),
        outcomes,
        cdf,
        recall,
        p_error_le_50m,
        recall_at_10pct,
        timing: TimingStats::from_ms(&times),
    })
}

/// Keeps queries whose complete signature occurs exactly once in the
/// database; also returns the kept fraction.
pub fn filter_unambiguous(queries: &[Query], db: &SignatureDatabase) -> (Vec<Query>, f64) {
    let mut counts: HashMap<&Signature, usize> = HashMap::with_capacity(db.len());
    for r in db.records() {
        *counts.entry(&r.signature).or_default() += 1;
    }
    let kept: Vec<Query> = queries
        .iter()
        .filter(|q| counts.get(&q.signature).copied() == Some(1))
        .cloned()
        .collect();
    let fraction = if queries.is_empty() {
        0.0
    } else {
        kept.len() as f64 / queries.len() as f64
    };
    (kept, fraction)
}

/// Everything held fixed across the databases of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSetup {
    pub policy: FusionPolicy,
    pub protocol: Protocol,
    pub distortion: DistortionConfig,
    pub queries: usize,
    pub query_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: BuildParams,
    pub db_records: usize,
    pub mean_signature_length: f64,
    pub queries: usize,
    pub p_error_le_50m: f64,
    pub recall_at_10pct: f64,
}

/// Rebuilds the database for each parameter set and reruns the benchmark
/// with the same seeds. The query count is capped at the database size.
pub fn sweep(
    objects: &[SemanticObject],
    bbox: &GeoBBox,
    alphabet: &Alphabet,
    param_sets: &[BuildParams],
    setup: &SweepSetup,
) -> Result<Vec<SweepRow>> {
    param_sets
        .iter()
        .map(|params| {
            let db = siggen::build_database(objects, params, bbox, alphabet)?;
            let n = setup.queries.min(db.len());
            let queries = sample_query_set(&db, n, setup.query_seed)?;
            let report = run_benchmark(&db, &queries, &setup.policy, &setup.distortion, setup.protocol)?;
            Ok(SweepRow {
                params: *params,
                db_records: db.len(),
                mean_signature_length: db.mean_signature_length(),
                queries: n,
                p_error_le_50m: report.p_error_le_50m,
                recall_at_10pct: report.recall_at_10pct,
            })
        })
        .collect()
}

pub fn sweep_visibility(
    objects: &[SemanticObject],
    bbox: &GeoBBox,
    alphabet: &Alphabet,
    base: &BuildParams,
    ranges_m: &[f64],
    setup: &SweepSetup,
) -> Result<Vec<SweepRow>> {
    let sets: Vec<BuildParams> = ranges_m
        .iter()
        .map(|&r| BuildParams {
            visibility_range_m: r,
            ..*base
        })
        .collect();
    sweep(objects, bbox, alphabet, &sets, setup)
}

pub fn sweep_quantization(
    objects: &[SemanticObject],
    bbox: &GeoBBox,
    alphabet: &Alphabet,
    base: &BuildParams,
    levels: &[u16],
    setup: &SweepSetup,
) -> Result<Vec<SweepRow>> {
    let sets: Vec<BuildParams> = levels
        .iter()
        .map(|&q| BuildParams {
            quantization_levels: q,
            ..*base
        })
        .collect();
    sweep(objects, bbox, alphabet, &sets, setup)
}
