//! Place recognition from semantic street-object signatures.
//!
//! A viewpoint is summarized by the classes of the street objects around it
//! (trees, street lights, bus stops, ...) listed in clockwise order from
//! north, together with their quantized bearings. A city is sampled on a
//! regular grid into a [`SignatureDatabase`], and a query signature is
//! localized by ranking database cells with single metrics, metric fusion or
//! two-stage metric fusion.

pub mod distortion;
pub mod error;
pub mod evaluation;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod siggen;

pub use error::{Error, Result};
pub use metrics::{EditWeights, MetricKind, SignaturePart};
pub use model::{
    alphabet_default, Alphabet, DatabaseRecord, GeoBBox, GeoPoint, ObjectClass, SemanticObject,
    Signature, SignatureDatabase,
};
pub use retrieval::{FusionPolicy, Protocol, RankedCandidate};
pub use siggen::BuildParams;
