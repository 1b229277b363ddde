//! Domain types shared across the crate: the object-class alphabet, geographic
//! points, semantic objects, signatures and the signature database.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::siggen::BuildParams;

/// One object category, identified by a single uppercase ASCII symbol.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectClass {
    pub symbol: u8,
    pub name: String,
    pub numeric_id: u8,
}

impl ObjectClass {
    pub fn new(symbol: u8, name: impl Into<String>, numeric_id: u8) -> Self {
        Self {
            symbol,
            name: name.into(),
            numeric_id,
        }
    }

    pub fn symbol_char(&self) -> char {
        self.symbol as char
    }
}

/// The street-object classes with their symbols and total counts in the
/// Paris open-data corpus. The lettering skips `A` and `F`.
pub const DEFAULT_CLASSES: [(u8, &str, u8, u64); 11] = [
    (b'B', "Alignment tree", 1, 1_752_696),
    (b'C', "Water fountain", 2, 6_713),
    (b'D', "Street light", 3, 2_299_639),
    (b'E', "Indicator", 4, 36_333),
    (b'G', "Traffic light", 5, 102_240),
    (b'H', "Bike station", 6, 14_397),
    (b'I', "Automatic WC", 7, 8_006),
    (b'J', "Autolib (car) station", 8, 4_421),
    (b'K', "Taxi station", 9, 2_537),
    (b'L', "Public chair", 10, 135_748),
    (b'M', "Bus stop", 11, 32_320),
];

/// An ordered set of object classes with pairwise distinct symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    classes: Vec<ObjectClass>,
}

impl Alphabet {
    pub fn new(classes: Vec<ObjectClass>) -> Result<Self> {
        let mut seen = HashSet::new();
        for class in &classes {
            if !class.symbol.is_ascii_uppercase() {
                return Err(Error::InvalidAlphabet(format!(
                    "symbol {:?} is not an uppercase ASCII letter",
                    class.symbol as char
                )));
            }
            if !seen.insert(class.symbol) {
                return Err(Error::InvalidAlphabet(format!(
                    "duplicate symbol {:?}",
                    class.symbol as char
                )));
            }
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[ObjectClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, symbol: u8) -> bool {
        self.classes.iter().any(|c| c.symbol == symbol)
    }

    pub fn by_symbol(&self, symbol: u8) -> Option<&ObjectClass> {
        self.classes.iter().find(|c| c.symbol == symbol)
    }

    /// Resolves either a one-character symbol or a class name, ignoring case.
    pub fn resolve(&self, label: &str) -> Option<&ObjectClass> {
        let label = label.trim();
        if label.len() == 1 {
            let sym = label.as_bytes()[0].to_ascii_uppercase();
            if let Some(c) = self.by_symbol(sym) {
                return Some(c);
            }
        }
        self.classes
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(label))
    }

    pub fn symbols(&self) -> impl Iterator<Item = u8> + '_ {
        self.classes.iter().map(|c| c.symbol)
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        alphabet_default()
    }
}

/// The 11 street-object classes used throughout the Paris experiments.
pub fn alphabet_default() -> Alphabet {
    Alphabet {
        classes: DEFAULT_CLASSES
            .iter()
            .map(|&(sym, name, id, _)| ObjectClass::new(sym, name, id))
            .collect(),
    }
}

/// WGS84 longitude/latitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

/// Fixed-point resolution used for stored cell centers (1e-7 degrees).
pub const COORD_SCALE: f64 = 1e7;

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        let p = Self { lon, lat };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lon.is_finite()
            || !self.lat.is_finite()
            || !(-180.0..=180.0).contains(&self.lon)
            || !(-90.0..=90.0).contains(&self.lat)
        {
            return Err(Error::InvalidCoordinate {
                lon: self.lon,
                lat: self.lat,
            });
        }
        Ok(())
    }

    /// Rounds to the 1e-7° grid used by the database file format.
    pub fn snapped(self) -> Self {
        let (lon, lat) = self.to_fixed();
        Self::from_fixed(lon, lat)
    }

    pub fn to_fixed(self) -> (i32, i32) {
        (
            (self.lon * COORD_SCALE).round() as i32,
            (self.lat * COORD_SCALE).round() as i32,
        )
    }

    pub fn from_fixed(lon: i32, lat: i32) -> Self {
        Self {
            lon: lon as f64 / COORD_SCALE,
            lat: lat as f64 / COORD_SCALE,
        }
    }
}

/// Axis-aligned geographic rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBBox {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl GeoBBox {
    pub fn new(lon_min: f64, lat_min: f64, lon_max: f64, lat_max: f64) -> Result<Self> {
        GeoPoint::new(lon_min, lat_min)?;
        GeoPoint::new(lon_max, lat_max)?;
        if !(lon_min < lon_max && lat_min < lat_max) {
            return Err(Error::DegenerateBBox);
        }
        Ok(Self {
            lon_min,
            lat_min,
            lon_max,
            lat_max,
        })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.lon_min..=self.lon_max).contains(&p.lon)
            && (self.lat_min..=self.lat_max).contains(&p.lat)
    }
}

impl FromStr for GeoBBox {
    type Err = Error;

    /// Parses `LONMIN,LATMIN,LONMAX,LATMAX`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                position: 0,
                message: format!("bbox: {e}"),
            })?;
        if parts.len() != 4 {
            return Err(Error::Parse {
                position: 0,
                message: format!("bbox needs 4 numbers, got {}", parts.len()),
            });
        }
        Self::new(parts[0], parts[1], parts[2], parts[3])
    }
}

/// A geo-referenced street object, located by its centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticObject {
    pub id: String,
    /// Class symbol; must belong to the alphabet in use.
    pub class: u8,
    pub position: GeoPoint,
}

impl SemanticObject {
    pub fn new(id: impl Into<String>, class: u8, position: GeoPoint) -> Self {
        Self {
            id: id.into(),
            class,
            position,
        }
    }
}

/// Type sequence plus quantized angle sequence of the objects visible from
/// one viewpoint, in clockwise sweep order from north.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    types: Vec<u8>,
    bins: Vec<u16>,
}

impl Signature {
    pub fn new(types: Vec<u8>, bins: Vec<u16>) -> Result<Self> {
        if types.len() != bins.len() {
            return Err(Error::LengthMismatch {
                types: types.len(),
                bins: bins.len(),
            });
        }
        Ok(Self { types, bins })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn types(&self) -> &[u8] {
        &self.types
    }

    pub fn bins(&self) -> &[u16] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn into_parts(self) -> (Vec<u8>, Vec<u16>) {
        (self.types, self.bins)
    }

    pub fn is_sweep_ordered(&self) -> bool {
        self.bins.windows(2).all(|w| w[0] <= w[1])
    }

    /// Checks symbols against `alphabet` and bins against `levels`.
    pub fn validate(&self, alphabet: &Alphabet, levels: u16) -> Result<()> {
        if let Some(&s) = self.types.iter().find(|&&s| !alphabet.contains(s)) {
            return Err(Error::UnknownClass((s as char).to_string()));
        }
        if let Some(&b) = self.bins.iter().find(|&&b| b >= levels) {
            return Err(Error::BinOutOfRange { bin: b, levels });
        }
        Ok(())
    }
}

impl fmt::Display for Signature {
    /// Renders as `TYPES|b1;b2;...`, e.g. `BD|0;4`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &t in &self.types {
            write!(f, "{}", t as char)?;
        }
        f.write_str("|")?;
        for (i, b) in self.bins.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for Signature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bar = s.find('|').ok_or(Error::Parse {
            position: s.len(),
            message: "missing '|' separator".into(),
        })?;
        let (type_part, angle_part) = (&s[..bar], &s[bar + 1..]);
        let mut types = Vec::with_capacity(type_part.len());
        for (pos, ch) in type_part.char_indices() {
            if !ch.is_ascii_uppercase() {
                return Err(Error::Parse {
                    position: pos,
                    message: format!("invalid class symbol {ch:?}"),
                });
            }
            types.push(ch as u8);
        }
        let mut bins = Vec::with_capacity(types.len());
        if !angle_part.is_empty() {
            let mut offset = bar + 1;
            for tok in angle_part.split(';') {
                let bin = tok.parse::<u16>().map_err(|_| Error::Parse {
                    position: offset,
                    message: format!("invalid angle bin {tok:?}"),
                })?;
                bins.push(bin);
                offset += tok.len() + 1;
            }
        }
        if types.len() != bins.len() {
            return Err(Error::Parse {
                position: bar,
                message: format!(
                    "{} class symbols but {} angle bins",
                    types.len(),
                    bins.len()
                ),
            });
        }
        Ok(Self { types, bins })
    }
}

/// One grid cell of the database and the signature seen from its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseRecord {
    pub cell_id: u64,
    pub cell_center: GeoPoint,
    pub signature: Signature,
}

/// Immutable collection of cell signatures sharing one set of build parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureDatabase {
    params: BuildParams,
    origin: GeoPoint,
    alphabet: Alphabet,
    empty_cells_dropped: bool,
    records: Vec<DatabaseRecord>,
    index: HashMap<u64, usize>,
}

impl SignatureDatabase {
    /// Validates parameters and record consistency. Cell centers are snapped to
    /// the 1e-7° storage grid so that a saved database reloads identically.
    pub fn new(
        params: BuildParams,
        origin: GeoPoint,
        alphabet: Alphabet,
        empty_cells_dropped: bool,
        mut records: Vec<DatabaseRecord>,
    ) -> Result<Self> {
        params.validate()?;
        origin.validate()?;
        let mut index = HashMap::with_capacity(records.len());
        for (pos, rec) in records.iter_mut().enumerate() {
            if index.insert(rec.cell_id, pos).is_some() {
                return Err(Error::DuplicateCell(rec.cell_id));
            }
            rec.cell_center.validate()?;
            rec.cell_center = rec.cell_center.snapped();
            rec.signature.validate(&alphabet, params.quantization_levels)?;
        }
        Ok(Self {
            params,
            origin,
            alphabet,
            empty_cells_dropped,
            records,
            index,
        })
    }

    pub fn params(&self) -> &BuildParams {
        &self.params
    }

    /// Projection origin for every planar computation on this database.
    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn empty_cells_dropped(&self) -> bool {
        self.empty_cells_dropped
    }

    pub fn records(&self) -> &[DatabaseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, cell_id: u64) -> Option<&DatabaseRecord> {
        self.position_of(cell_id).map(|i| &self.records[i])
    }

    pub fn position_of(&self, cell_id: u64) -> Option<usize> {
        self.index.get(&cell_id).copied()
    }

    pub fn mean_signature_length(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let total: usize = self.records.iter().map(|r| r.signature.len()).sum();
        total as f64 / self.records.len() as f64
    }
}
