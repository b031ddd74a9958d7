//! Geographic primitives shared by every other module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A validated point, longitude and latitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLocation", into = "RawLocation")]
pub struct LocationDeg {
    lon: f64,
    lat: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLocation {
    lon: f64,
    lat: f64,
}

impl TryFrom<RawLocation> for LocationDeg {
    type Error = Error;
    fn try_from(r: RawLocation) -> Result<Self> {
        validate_location(r.lon, r.lat)
    }
}

impl From<LocationDeg> for RawLocation {
    fn from(l: LocationDeg) -> Self {
        RawLocation {
            lon: l.lon,
            lat: l.lat,
        }
    }
}

impl LocationDeg {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        validate_location(lon, lat)
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon_rad(&self) -> f64 {
        self.lon.to_radians()
    }

    pub fn lat_rad(&self) -> f64 {
        self.lat.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub fn dot(&self, o: &Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Rejects out-of-range or non-finite coordinates; nothing is wrapped.
pub fn validate_location(lon: f64, lat: f64) -> Result<LocationDeg> {
    if !lon.is_finite() {
        return Err(Error::NonFinite("lon"));
    }
    if !lat.is_finite() {
        return Err(Error::NonFinite("lat"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Range {
            what: "lon",
            value: lon,
            lo: -180.0,
            hi: 180.0,
        });
    }
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Range {
            what: "lat",
            value: lat,
            lo: -90.0,
            hi: 90.0,
        });
    }
    Ok(LocationDeg { lon, lat })
}

/// Central angle between two points, in `[0, π]`.
pub fn great_circle_angle_rad(a: LocationDeg, b: LocationDeg) -> f64 {
    let (p1, p2) = (a.lat_rad(), b.lat_rad());
    let dphi = p2 - p1;
    let dlam = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlam / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin()
}

/// Haversine great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: LocationDeg, b: LocationDeg) -> f64 {
    EARTH_RADIUS_KM * great_circle_angle_rad(a, b)
}

pub fn latlon_to_xyz(a: LocationDeg) -> Vec3 {
    let (lam, phi) = (a.lon_rad(), a.lat_rad());
    Vec3 {
        x: phi.cos() * lam.cos(),
        y: phi.cos() * lam.sin(),
        z: phi.sin(),
    }
}
