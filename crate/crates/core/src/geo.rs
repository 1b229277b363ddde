//! Local equirectangular projection around a fixed origin, plus planar
//! distance and clockwise-from-north azimuth.
//!
//! At city scale (well under 1° of extent) the equirectangular error is
//! sub-decimeter, and working in a plane keeps distance and azimuth
//! consistent with each other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GeoPoint;

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Largest latitude or longitude offset from the origin accepted by [`project`].
pub const MAX_OFFSET_DEG: f64 = 1.0;

/// East/north offset in meters from a projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x_east: f64,
    pub y_north: f64,
}

impl PlanarPoint {
    pub const fn new(x_east: f64, y_north: f64) -> Self {
        Self { x_east, y_north }
    }
}

pub fn project(origin: GeoPoint, p: GeoPoint) -> Result<PlanarPoint> {
    let dlat = p.lat - origin.lat;
    let dlon = p.lon - origin.lon;
    let delta = if dlat.is_nan() || dlon.is_nan() {
        f64::NAN
    } else {
        dlat.abs().max(dlon.abs())
    };
    if delta.is_nan() || delta >= MAX_OFFSET_DEG {
        return Err(Error::BeyondCityScale { delta_deg: delta });
    }
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    Ok(PlanarPoint {
        x_east: dlon * k * origin.lat.to_radians().cos(),
        y_north: dlat * k,
    })
}

/// Inverse of [`project`].
pub fn unproject(origin: GeoPoint, p: PlanarPoint) -> GeoPoint {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    GeoPoint {
        lon: origin.lon + p.x_east / (k * origin.lat.to_radians().cos()),
        lat: origin.lat + p.y_north / k,
    }
}

pub fn planar_distance(a: PlanarPoint, b: PlanarPoint) -> f64 {
    (b.x_east - a.x_east).hypot(b.y_north - a.y_north)
}

/// Clockwise angle from north, in `[0, 360)`.
pub fn azimuth_deg(viewpoint: PlanarPoint, object: PlanarPoint) -> Result<f64> {
    let dx = object.x_east - viewpoint.x_east;
    let dy = object.y_north - viewpoint.y_north;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(normalize_deg(dx.atan2(dy).to_degrees()))
}

/// Wraps any finite angle into `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}
