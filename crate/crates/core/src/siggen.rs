//! Signature generation for a single viewpoint and grid-sampled database
//! construction.
//!
//! A signature lists every object within the visibility range of a viewpoint,
//! ordered by a clockwise sweep that starts at north. Objects are sorted by
//! their raw azimuth; exact ties fall back to distance, class symbol and
//! finally object id so that identical inputs always yield identical
//! databases. Each azimuth is then quantized into `Q` equal bins.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, PlanarPoint};
use crate::metrics::SignaturePart;
use crate::model::{
    Alphabet, DatabaseRecord, GeoBBox, GeoPoint, SemanticObject, Signature, SignatureDatabase,
};

/// Visibility range, grid step and angle quantization of a database.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub visibility_range_m: f64,
    pub grid_step_m: f64,
    pub quantization_levels: u16,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            visibility_range_m: 30.0,
            grid_step_m: 10.0,
            quantization_levels: 16,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.visibility_range_m.is_finite() && self.visibility_range_m > 0.0) {
            return Err(Error::InvalidParams(format!(
                "visibility range must be positive, got {}",
                self.visibility_range_m
            )));
        }
        if !(self.grid_step_m.is_finite() && self.grid_step_m > 0.0) {
            return Err(Error::InvalidParams(format!(
                "grid step must be positive, got {}",
                self.grid_step_m
            )));
        }
        if self.quantization_levels < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 quantization levels, got {}",
                self.quantization_levels
            )));
        }
        Ok(())
    }

    pub fn bin_width_deg(&self) -> f64 {
        360.0 / self.quantization_levels as f64
    }
}

/// Maps an azimuth to its bin: `floor(angle / (360 / levels)) mod levels`.
pub fn quantize_angle(angle: f64, levels: u16) -> Result<u16> {
    if !(0.0..360.0).contains(&angle) {
        return Err(Error::AngleOutOfRange(angle));
    }
    if levels < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 quantization levels, got {levels}"
        )));
    }
    Ok(quantize_unchecked(angle, levels))
}

#[inline]
pub(crate) fn quantize_unchecked(angle: f64, levels: u16) -> u16 {
    let step = 360.0 / levels as f64;
    ((angle / step).floor() as u64 % levels as u64) as u16
}

/// An object already projected into the database plane.
#[derive(Debug, Clone)]
struct PlacedObject<'a> {
    xy: PlanarPoint,
    class: u8,
    id: &'a str,
}

struct Sighting<'a> {
    azimuth: f64,
    distance: f64,
    class: u8,
    id: &'a str,
}

/// Runs the clockwise sweep from `viewpoint` over `candidates`.
fn sweep<'a, I>(viewpoint: PlanarPoint, candidates: I, params: &BuildParams) -> Signature
where
    I: IntoIterator<Item = &'a PlacedObject<'a>>,
{
    let range = params.visibility_range_m;
    let mut seen: Vec<Sighting<'a>> = candidates
        .into_iter()
        .filter_map(|o| {
            let distance = geo::planar_distance(viewpoint, o.xy);
            if distance > range {
                return None;
            }
            // An object standing exactly on the viewpoint is treated as due north.
            let azimuth = geo::azimuth_deg(viewpoint, o.xy).unwrap_or(0.0);
            Some(Sighting {
                azimuth,
                distance,
                class: o.class,
                id: o.id,
            })
        })
        .collect();
    seen.sort_by(|a, b| {
        a.azimuth
            .total_cmp(&b.azimuth)
            .then(a.distance.total_cmp(&b.distance))
            .then(a.class.cmp(&b.class))
            .then(a.id.cmp(b.id))
    });
    let levels = params.quantization_levels;
    let types = seen.iter().map(|s| s.class).collect();
    let bins = seen
        .iter()
        .map(|s| quantize_unchecked(s.azimuth, levels))
        .collect();
    Signature::new(types, bins).expect("parallel parts")
}

fn place<'a>(origin: GeoPoint, objects: &'a [SemanticObject]) -> Result<Vec<PlacedObject<'a>>> {
    objects
        .iter()
        .map(|o| {
            Ok(PlacedObject {
                xy: geo::project(origin, o.position)?,
                class: o.class,
                id: o.id.as_str(),
            })
        })
        .collect()
}

/// Signature seen from `viewpoint`, with all positions projected around `origin`.
pub fn build_signature(
    viewpoint: GeoPoint,
    objects: &[SemanticObject],
    params: &BuildParams,
    origin: GeoPoint,
) -> Result<Signature> {
    params.validate()?;
    let vp = geo::project(origin, viewpoint)?;
    let placed = place(origin, objects)?;
    Ok(sweep(vp, &placed, params))
}

/// Mean longitude/latitude of the object set, used as the projection origin.
pub fn centroid(objects: &[SemanticObject]) -> Result<GeoPoint> {
    if objects.is_empty() {
        return Err(Error::NoObjects);
    }
    let n = objects.len() as f64;
    let (lon, lat) = objects.iter().fold((0.0, 0.0), |(lon, lat), o| {
        (lon + o.position.lon, lat + o.position.lat)
    });
    GeoPoint::new(lon / n, lat / n)
}

/// Cell layout of a grid over a bounding box, in planar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub min: PlanarPoint,
    pub step: f64,
    pub cols: u64,
    pub rows: u64,
}

impl GridLayout {
    /// Inclusive grid: a 100 m extent with a 10 m step gives 11 samples per axis.
    pub fn covering(origin: GeoPoint, bbox: &GeoBBox, step: f64) -> Result<Self> {
        let lo = geo::project(origin, GeoPoint::new(bbox.lon_min, bbox.lat_min)?)?;
        let hi = geo::project(origin, GeoPoint::new(bbox.lon_max, bbox.lat_max)?)?;
        let span = |a: f64, b: f64| ((b - a) / step + 1e-9).floor() as u64 + 1;
        Ok(Self {
            min: lo,
            step,
            cols: span(lo.x_east, hi.x_east),
            rows: span(lo.y_north, hi.y_north),
        })
    }

    pub fn cell_count(&self) -> u64 {
        self.cols * self.rows
    }

    pub fn center(&self, row: u64, col: u64) -> PlanarPoint {
        PlanarPoint::new(
            self.min.x_east + col as f64 * self.step,
            self.min.y_north + row as f64 * self.step,
        )
    }
}

/// Uniform bucket grid with side equal to the visibility range, so every
/// object within range of a point lies in the 3×3 neighbourhood of its bucket.
struct BucketGrid<'a> {
    min: PlanarPoint,
    side: f64,
    cols: i64,
    rows: i64,
    buckets: Vec<Vec<PlacedObject<'a>>>,
}

impl<'a> BucketGrid<'a> {
    fn new(min: PlanarPoint, max: PlanarPoint, side: f64) -> Self {
        let cols = ((max.x_east - min.x_east) / side).floor() as i64 + 1;
        let rows = ((max.y_north - min.y_north) / side).floor() as i64 + 1;
        Self {
            min,
            side,
            cols,
            rows,
            buckets: (0..cols * rows).map(|_| Vec::new()).collect(),
        }
    }

    fn cell_of(&self, p: PlanarPoint) -> (i64, i64) {
        (
            ((p.x_east - self.min.x_east) / self.side).floor() as i64,
            ((p.y_north - self.min.y_north) / self.side).floor() as i64,
        )
    }

    fn insert(&mut self, obj: PlacedObject<'a>) {
        let (c, r) = self.cell_of(obj.xy);
        if (0..self.cols).contains(&c) && (0..self.rows).contains(&r) {
            self.buckets[(r * self.cols + c) as usize].push(obj);
        }
    }

    fn near(&self, p: PlanarPoint) -> impl Iterator<Item = &PlacedObject<'a>> + '_ {
        let (c, r) = self.cell_of(p);
        (r - 1..=r + 1)
            .flat_map(move |rr| (c - 1..=c + 1).map(move |cc| (rr, cc)))
            .filter(|&(rr, cc)| (0..self.rows).contains(&rr) && (0..self.cols).contains(&cc))
            .flat_map(move |(rr, cc)| self.buckets[(rr * self.cols + cc) as usize].iter())
    }
}

fn check_classes(objects: &[SemanticObject], alphabet: &Alphabet) -> Result<()> {
    match objects.iter().find(|o| !alphabet.contains(o.class)) {
        Some(o) => Err(Error::UnknownClass((o.class as char).to_string())),
        None => Ok(()),
    }
}

/// Samples `bbox` every `grid_step_m` meters and records the signature at
/// each cell center. Cells that see no object are dropped. Cell ids are the
/// row-major grid index (`row * cols + col`, rows running south to north).
pub fn build_database(
    objects: &[SemanticObject],
    params: &BuildParams,
    bbox: &GeoBBox,
    alphabet: &Alphabet,
) -> Result<SignatureDatabase> {
    params.validate()?;
    check_classes(objects, alphabet)?;
    let origin = centroid(objects)?;
    let grid = GridLayout::covering(origin, bbox, params.grid_step_m)?;
    let placed = place(origin, objects)?;

    let range = params.visibility_range_m;
    let lo = PlanarPoint::new(grid.min.x_east - range, grid.min.y_north - range);
    let far = grid.center(grid.rows - 1, grid.cols - 1);
    let hi = PlanarPoint::new(far.x_east + range, far.y_north + range);
    let mut buckets = BucketGrid::new(lo, hi, range);
    for obj in placed {
        buckets.insert(obj);
    }

    let records: Vec<DatabaseRecord> = (0..grid.rows)
        .into_par_iter()
        .flat_map_iter(|row| {
            let buckets = &buckets;
            (0..grid.cols).filter_map(move |col| {
                let (center, vp) = cell_viewpoint(origin, grid.center(row, col));
                let signature = sweep(vp, buckets.near(vp), params);
                (!signature.is_empty()).then(|| DatabaseRecord {
                    cell_id: row * grid.cols + col,
                    cell_center: center,
                    signature,
                })
            })
        })
        .collect();

    SignatureDatabase::new(*params, origin, alphabet.clone(), true, records)
}

/// Snaps a grid sample to the stored coordinate resolution and returns both
/// the stored center and the planar viewpoint that reproduces its signature.
fn cell_viewpoint(origin: GeoPoint, sample: PlanarPoint) -> (GeoPoint, PlanarPoint) {
    let center = geo::unproject(origin, sample).snapped();
    let vp = geo::project(origin, center).unwrap_or(sample);
    (center, vp)
}

/// Reference construction without bucketing; every cell scans every object.
pub fn build_database_naive(
    objects: &[SemanticObject],
    params: &BuildParams,
    bbox: &GeoBBox,
    alphabet: &Alphabet,
) -> Result<SignatureDatabase> {
    params.validate()?;
    check_classes(objects, alphabet)?;
    let origin = centroid(objects)?;
    let grid = GridLayout::covering(origin, bbox, params.grid_step_m)?;
    let placed = place(origin, objects)?;
    let mut records = Vec::new();
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let (center, vp) = cell_viewpoint(origin, grid.center(row, col));
            let signature = sweep(vp, &placed, params);
            if !signature.is_empty() {
                records.push(DatabaseRecord {
                    cell_id: row * grid.cols + col,
                    cell_center: center,
                    signature,
                });
            }
        }
    }
    SignatureDatabase::new(*params, origin, alphabet.clone(), true, records)
}

/// Distribution of signature-group sizes (pandas `describe` layout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: usize,
}

/// Groups records by exact equality of one signature part and summarizes the
/// group sizes.
pub fn group_stats(db: &SignatureDatabase, part: SignaturePart) -> Result<GroupStats> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let mut sizes: Vec<usize> = match part {
        SignaturePart::Type => {
            let mut groups: HashMap<&[u8], usize> = HashMap::new();
            for r in db.records() {
                *groups.entry(r.signature.types()).or_default() += 1;
            }
            groups.into_values().collect()
        }
        SignaturePart::Angle => {
            let mut groups: HashMap<&[u16], usize> = HashMap::new();
            for r in db.records() {
                *groups.entry(r.signature.bins()).or_default() += 1;
            }
            groups.into_values().collect()
        }
    };
    sizes.sort_unstable();
    Ok(describe(&sizes))
}

fn describe(sorted: &[usize]) -> GroupStats {
    let n = sorted.len();
    let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
    let std = if n > 1 {
        let ss: f64 = sorted.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let quantile = |q: f64| {
        let pos = q * (n - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let frac = pos - lo as f64;
        sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
    };
    GroupStats {
        count: n,
        mean,
        std,
        min: sorted[0],
        q25: quantile(0.25),
        q50: quantile(0.5),
        q75: quantile(0.75),
        max: sorted[n - 1],
    }
}
