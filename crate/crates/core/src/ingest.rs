//! Object dataset readers, the binary database format and a synthetic city
//! generator for desk-scale experiments.
//!
//! # Database file layout
//!
//! All fixed-width integers are little-endian.
//!
//! ```text
//! "SSIG"            magic
//! u8                format version (0x01)
//! f64 f64 u16       visibility range (m), grid step (m), quantization levels Q
//! f64 f64           projection origin lon, lat (degrees)
//! u8                flags; bit 0 = empty-signature cells were dropped
//! u8                alphabet size, then per class:
//!                   u8 symbol, u8 numeric id, u8 name length, name bytes (UTF-8)
//! u64               record count
//! records:
//!   varint          cell id
//!   i32 i32         cell center lon, lat in units of 1e-7°
//!   varint          n
//!   n bytes         class symbols
//!   ceil(n·b / 8)   angle bins, b = ceil(log2 Q) bits each, LSB first
//! u32               CRC-32 (IEEE) of every preceding byte
//! ```

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::{self, PlanarPoint};
use crate::model::{
    Alphabet, DatabaseRecord, GeoBBox, GeoPoint, ObjectClass, SemanticObject, Signature,
    SignatureDatabase, DEFAULT_CLASSES,
};
use crate::siggen::BuildParams;

pub const MAGIC: &[u8; 4] = b"SSIG";
pub const FORMAT_VERSION: u8 = 0x01;

/// Area of the Paris sampling region, km².
pub const PARIS_AREA_KM2: f64 = 79.0;

/// A malformed input row or feature that was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number (CSV) or feature index (GeoJSON).
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub objects: Vec<SemanticObject>,
    pub errors: Vec<RowError>,
}

pub fn read_objects_csv(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Ingested> {
    parse_objects_csv(File::open(path)?, alphabet)
}

/// Parses an `id,class,lon,lat` table. Rows that fail to parse are reported
/// in [`Ingested::errors`]; a missing column in the header is fatal.
pub fn parse_objects_csv<R: Read>(reader: R, alphabet: &Alphabet) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                position: 0,
                message: format!("CSV header lacks column {name:?}"),
            })
    };
    let (c_id, c_class, c_lon, c_lat) = (column("id")?, column("class")?, column("lon")?, column("lat")?);

    let mut out = Ingested::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let field = |c: usize| row.get(c).unwrap_or("");
        let parsed = (|| -> std::result::Result<SemanticObject, String> {
            let class = alphabet
                .resolve(field(c_class))
                .ok_or_else(|| format!("unknown class {:?}", field(c_class)))?;
            let lon: f64 = field(c_lon)
                .parse()
                .map_err(|_| format!("invalid lon {:?}", field(c_lon)))?;
            let lat: f64 = field(c_lat)
                .parse()
                .map_err(|_| format!("invalid lat {:?}", field(c_lat)))?;
            let position = GeoPoint::new(lon, lat).map_err(|e| e.to_string())?;
            Ok(SemanticObject::new(field(c_id), class.symbol, position))
        })();
        match parsed {
            Ok(obj) => out.objects.push(obj),
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }
    Ok(out)
}

/// Writes objects as `id,class,lon,lat` with class symbols. Coordinates use
/// the shortest representation that parses back to the same value.
pub fn write_objects_csv<W: Write>(writer: W, objects: &[SemanticObject]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "class", "lon", "lat"])?;
    for o in objects {
        w.write_record([
            o.id.clone(),
            (o.class as char).to_string(),
            o.position.lon.to_string(),
            o.position.lat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_objects_geojson(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Ingested> {
    let value: Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    parse_objects_geojson(&value, alphabet)
}

/// Reads a FeatureCollection whose features carry a `class` property.
/// Non-point geometries are reduced to the mean of their vertices.
pub fn parse_objects_geojson(value: &Value, alphabet: &Alphabet) -> Result<Ingested> {
    let features = value
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse {
            position: 0,
            message: "expected a FeatureCollection with a \"features\" array".into(),
        })?;
    let mut out = Ingested::default();
    for (i, feature) in features.iter().enumerate() {
        match parse_feature(feature, i, alphabet) {
            Ok(obj) => out.objects.push(obj),
            Err(message) => out.errors.push(RowError {
                line: i as u64 + 1,
                message,
            }),
        }
    }
    Ok(out)
}

fn parse_feature(
    feature: &Value,
    index: usize,
    alphabet: &Alphabet,
) -> std::result::Result<SemanticObject, String> {
    let props = feature.get("properties");
    let label = props
        .and_then(|p| p.get("class"))
        .and_then(Value::as_str)
        .ok_or("missing class property")?;
    let class = alphabet
        .resolve(label)
        .ok_or_else(|| format!("unknown class {label:?}"))?;
    let id = feature
        .get("id")
        .or_else(|| props.and_then(|p| p.get("id")))
        .map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .unwrap_or_else(|| (index + 1).to_string());
    let geometry = feature.get("geometry").ok_or("missing geometry")?;
    let kind = geometry
        .get("type")
        .and_then(Value::as_str)
        .ok_or("geometry without type")?;
    let coords = geometry.get("coordinates").ok_or("geometry without coordinates")?;
    let vertices = geometry_vertices(kind, coords)?;
    if vertices.is_empty() {
        return Err("geometry has no vertices".into());
    }
    let n = vertices.len() as f64;
    let (lon, lat) = vertices
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let position = GeoPoint::new(lon / n, lat / n).map_err(|e| e.to_string())?;
    Ok(SemanticObject::new(id, class.symbol, position))
}

fn position(v: &Value) -> std::result::Result<(f64, f64), String> {
    let arr = v.as_array().ok_or("position is not an array")?;
    match (arr.first().and_then(Value::as_f64), arr.get(1).and_then(Value::as_f64)) {
        (Some(lon), Some(lat)) => Ok((lon, lat)),
        _ => Err("position needs two numbers".into()),
    }
}

fn positions(v: &Value) -> std::result::Result<Vec<(f64, f64)>, String> {
    v.as_array()
        .ok_or("expected an array of positions")?
        .iter()
        .map(position)
        .collect()
}

/// Ring vertices without the repeated closing vertex.
fn ring(v: &Value) -> std::result::Result<Vec<(f64, f64)>, String> {
    let mut pts = positions(v)?;
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    Ok(pts)
}

fn rings(v: &Value) -> std::result::Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for r in v.as_array().ok_or("expected an array of rings")? {
        out.extend(ring(r)?);
    }
    Ok(out)
}

fn geometry_vertices(kind: &str, coords: &Value) -> std::result::Result<Vec<(f64, f64)>, String> {
    match kind {
        "Point" => Ok(vec![position(coords)?]),
        "MultiPoint" | "LineString" => positions(coords),
        "MultiLineString" => {
            let mut out = Vec::new();
            for line in coords.as_array().ok_or("expected an array of lines")? {
                out.extend(positions(line)?);
            }
            Ok(out)
        }
        "Polygon" => rings(coords),
        "MultiPolygon" => {
            let mut out = Vec::new();
            for poly in coords.as_array().ok_or("expected an array of polygons")? {
                out.extend(rings(poly)?);
            }
            Ok(out)
        }
        other => Err(format!("unsupported geometry type {other:?}")),
    }
}

/// Bits per stored angle bin: `ceil(log2 levels)`.
pub fn bits_per_bin(levels: u16) -> u32 {
    16 - (levels.max(2) - 1).leading_zeros()
}

fn put_varint(buf: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        buf.push((v as u8) | 0x80);
        v >>= 7;
    }
    buf.push(v as u8);
}

/// Serializes `db` into the binary database format.
pub fn encode_database(db: &SignatureDatabase) -> Vec<u8> {
    let params = db.params();
    let bits = bits_per_bin(params.quantization_levels);
    let mut buf = Vec::with_capacity(64 + db.len() * 40);
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.extend_from_slice(&params.visibility_range_m.to_le_bytes());
    buf.extend_from_slice(&params.grid_step_m.to_le_bytes());
    buf.extend_from_slice(&params.quantization_levels.to_le_bytes());
    buf.extend_from_slice(&db.origin().lon.to_le_bytes());
    buf.extend_from_slice(&db.origin().lat.to_le_bytes());
    buf.push(db.empty_cells_dropped() as u8);
    let classes = db.alphabet().classes();
    buf.push(classes.len() as u8);
    for c in classes {
        let name = c.name.as_bytes();
        let name = &name[..name.len().min(255)];
        buf.extend_from_slice(&[c.symbol, c.numeric_id, name.len() as u8]);
        buf.extend_from_slice(name);
    }
    buf.extend_from_slice(&(db.len() as u64).to_le_bytes());
    for rec in db.records() {
        put_varint(&mut buf, rec.cell_id);
        let (lon, lat) = rec.cell_center.to_fixed();
        buf.extend_from_slice(&lon.to_le_bytes());
        buf.extend_from_slice(&lat.to_le_bytes());
        let sig = &rec.signature;
        put_varint(&mut buf, sig.len() as u64);
        buf.extend_from_slice(sig.types());
        let mut acc: u32 = 0;
        let mut filled = 0;
        for &b in sig.bins() {
            acc |= (b as u32) << filled;
            filled += bits;
            while filled >= 8 {
                buf.push(acc as u8);
                acc >>= 8;
                filled -= 8;
            }
        }
        if filled > 0 {
            buf.push(acc as u8);
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_database(db: &SignatureDatabase, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_database(db))?;
    w.flush()?;
    Ok(())
}

pub fn load_database(path: impl AsRef<Path>) -> Result<SignatureDatabase> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_database(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated: needed {n} more bytes"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn varint(&mut self) -> Result<u64> {
        let start = self.pos;
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        self.pos = start;
        self.fail("varint longer than 10 bytes")
    }
}

/// Parses the binary database format, verifying magic, version and checksum.
pub fn decode_database(bytes: &[u8]) -> Result<SignatureDatabase> {
    if bytes.len() < MAGIC.len() + 1 + 4 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: "truncated: file shorter than the minimal header".into(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, not a signature database".into(),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                bytes[4]
            ),
        });
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body_len]) != stored {
        return Err(Error::Format {
            offset: body_len as u64,
            message: "checksum mismatch".into(),
        });
    }

    let mut c = Cursor {
        bytes: &bytes[..body_len],
        pos: 5,
    };
    let params = BuildParams {
        visibility_range_m: c.f64()?,
        grid_step_m: c.f64()?,
        quantization_levels: u16::from_le_bytes(c.array()?),
    };
    let origin = GeoPoint {
        lon: c.f64()?,
        lat: c.f64()?,
    };
    let flags = c.u8()?;
    let class_count = c.u8()?;
    let mut classes = Vec::with_capacity(class_count as usize);
    for _ in 0..class_count {
        let [symbol, numeric_id, name_len] = c.array()?;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(name_len as usize)?).map_err(|_| Error::Format {
            offset: at as u64,
            message: "class name is not UTF-8".into(),
        })?;
        classes.push(ObjectClass::new(symbol, name, numeric_id));
    }
    let alphabet = Alphabet::new(classes)?;
    let count = u64::from_le_bytes(c.array()?);
    let bits = bits_per_bin(params.quantization_levels);
    let mask = (1u32 << bits) - 1;
    let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let cell_id = c.varint()?;
        let lon = i32::from_le_bytes(c.array()?);
        let lat = i32::from_le_bytes(c.array()?);
        let n = c.varint()? as usize;
        if n > c.bytes.len() {
            return c.fail(format!("signature length {n} exceeds file size"));
        }
        let types = c.take(n)?.to_vec();
        let packed = c.take((n * bits as usize).div_ceil(8))?;
        let mut bins = Vec::with_capacity(n);
        let (mut acc, mut filled, mut next) = (0u32, 0u32, 0usize);
        for _ in 0..n {
            while filled < bits {
                acc |= (packed[next] as u32) << filled;
                next += 1;
                filled += 8;
            }
            bins.push((acc & mask) as u16);
            acc >>= bits;
            filled -= bits;
        }
        records.push(DatabaseRecord {
            cell_id,
            cell_center: GeoPoint::from_fixed(lon, lat),
            signature: Signature::new(types, bins)?,
        });
    }
    if c.pos != c.bytes.len() {
        return c.fail("trailing bytes after the last record");
    }
    SignatureDatabase::new(params, origin, alphabet, flags & 1 == 1, records)
}

/// Human-readable header summary.
pub fn describe_database(db: &SignatureDatabase) -> String {
    let p = db.params();
    let mut out = String::new();
    let _ = writeln!(out, "format_version: {FORMAT_VERSION}");
    let _ = writeln!(out, "visibility_range_m: {}", p.visibility_range_m);
    let _ = writeln!(out, "grid_step_m: {}", p.grid_step_m);
    let _ = writeln!(out, "quantization_levels: {}", p.quantization_levels);
    let _ = writeln!(out, "origin: {:.7},{:.7}", db.origin().lon, db.origin().lat);
    let _ = writeln!(
        out,
        "empty_cells: {}",
        if db.empty_cells_dropped() { "dropped" } else { "kept" }
    );
    let symbols: String = db.alphabet().symbols().map(char::from).collect();
    let _ = writeln!(out, "alphabet: {symbols}");
    let _ = writeln!(out, "records: {}", db.len());
    let _ = writeln!(out, "mean_signature_length: {:.3}", db.mean_signature_length());
    out
}

pub fn describe_record(rec: &DatabaseRecord) -> String {
    format!(
        "cell_id: {}\ncenter: {:.7},{:.7}\nlength: {}\nsignature: {}\n",
        rec.cell_id,
        rec.cell_center.lon,
        rec.cell_center.lat,
        rec.signature.len(),
        rec.signature
    )
}

/// Parameters of a homogeneous Poisson city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCityConfig {
    /// South-west corner of the city.
    pub origin: GeoPoint,
    pub width_m: f64,
    pub height_m: f64,
    /// Objects per km² for each class symbol.
    pub intensities: Vec<(u8, f64)>,
    pub seed: u64,
}

impl SyntheticCityConfig {
    pub fn new(width_m: f64, height_m: f64, intensities: Vec<(u8, f64)>, seed: u64) -> Self {
        Self {
            origin: GeoPoint {
                lon: 2.35,
                lat: 48.85,
            },
            width_m,
            height_m,
            intensities,
            seed,
        }
    }

    pub fn area_km2(&self) -> f64 {
        self.width_m * self.height_m / 1e6
    }
}

/// Object counts of the Paris corpus spread over its 79 km², per class.
pub fn paris_intensities() -> Vec<(u8, f64)> {
    DEFAULT_CLASSES
        .iter()
        .map(|&(sym, _, _, count)| (sym, count as f64 / PARIS_AREA_KM2))
        .collect()
}

/// Paris class proportions, scaled so that a viewpoint sees `mean_length`
/// objects on average within `range_m`.
pub fn paris_intensities_for_mean_length(mean_length: f64, range_m: f64) -> Vec<(u8, f64)> {
    let base = paris_intensities();
    let total: f64 = base.iter().map(|p| p.1).sum();
    let disc_km2 = std::f64::consts::PI * range_m * range_m / 1e6;
    let scale = mean_length / (total * disc_km2);
    base.into_iter().map(|(s, l)| (s, l * scale)).collect()
}

pub fn uniform_intensities(alphabet: &Alphabet, per_km2: f64) -> Vec<(u8, f64)> {
    alphabet.symbols().map(|s| (s, per_km2)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub objects: Vec<SemanticObject>,
    pub bbox: GeoBBox,
}

/// Draws a Poisson count per class and places its objects uniformly.
/// Class `i` of the configuration uses random stream `i`, so changing one
/// class's intensity leaves the others untouched.
pub fn generate_synthetic_city(cfg: &SyntheticCityConfig) -> Result<SyntheticCity> {
    if !(cfg.width_m > 0.0 && cfg.height_m > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "city extent must be positive, got {} x {} m",
            cfg.width_m, cfg.height_m
        )));
    }
    if let Some(&(s, l)) = cfg.intensities.iter().find(|p| !(p.1.is_finite() && p.1 >= 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "intensity of class {:?} must be non-negative, got {l}",
            s as char
        )));
    }
    cfg.origin.validate()?;
    let far = geo::unproject(cfg.origin, PlanarPoint::new(cfg.width_m, cfg.height_m));
    geo::project(cfg.origin, far)?;
    let bbox = GeoBBox::new(cfg.origin.lon, cfg.origin.lat, far.lon, far.lat)?;

    let mut objects = Vec::new();
    for (stream, &(symbol, intensity)) in cfg.intensities.iter().enumerate() {
        let mean = intensity * cfg.area_km2();
        if mean <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        let count = Poisson::new(mean)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .sample(&mut rng) as u64;
        for _ in 0..count {
            let x = rng.random_range(0.0..cfg.width_m);
            let y = rng.random_range(0.0..cfg.height_m);
            let id = (objects.len() + 1).to_string();
            let position = geo::unproject(cfg.origin, PlanarPoint::new(x, y));
            objects.push(SemanticObject::new(id, symbol, position));
        }
    }
    Ok(SyntheticCity { objects, bbox })
}
