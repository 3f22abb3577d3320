//! Spherical geodesy and trajectory construction.
//!
//! All distances are statute miles on a sphere of radius
//! [`EARTH_RADIUS_MI`]; durations are hours and speeds mph.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MI: f64 = 3958.761;

/// Hops shorter than this are treated as GPS jitter and dropped.
pub const JITTER_FLOOR_MI: f64 = 0.01;

/// Coordinates are compared at this many decimal places (~1 m).
const LOCATION_DECIMALS: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    /// Latitude must lie in [-90, 90]; longitude is wrapped into (-180, 180].
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidCoordinate(format!("({lat}, {lon}) is not finite")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate(format!("latitude {lat} outside [-90, 90]")));
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Key used for "same location" comparisons.
    pub fn location_key(&self) -> (i64, i64) {
        let scale = 10f64.powi(LOCATION_DECIMALS);
        ((self.lat * scale).round() as i64, (self.lon * scale).round() as i64)
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped == -180.0 {
        180.0
    } else {
        wrapped
    }
}

fn normalize_azimuth(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Great-circle distance in miles.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MI * h.sqrt().min(1.0).asin()
}

/// Forward azimuth at `a` of the great circle towards `b`, degrees clockwise
/// from true north in [0, 360).
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    if haversine_distance(a, b) == 0.0 {
        return Err(Error::UndefinedBearing);
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    if x == 0.0 && y == 0.0 {
        return Err(Error::UndefinedBearing);
    }
    Ok(normalize_azimuth(y.atan2(x).to_degrees()))
}

/// Point reached by travelling `distance` miles from `origin` along the
/// great circle with initial bearing `azimuth` degrees.
pub fn forward_point(origin: GeoPoint, azimuth: f64, distance: f64) -> GeoPoint {
    if distance == 0.0 {
        return origin;
    }
    let delta = distance / EARTH_RADIUS_MI;
    let theta = azimuth.to_radians();
    let phi1 = origin.lat.to_radians();
    let lambda1 = origin.lon.to_radians();
    let sin_phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).clamp(-1.0, 1.0);
    let phi2 = sin_phi2.asin();
    let lambda2 = lambda1 + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);
    GeoPoint {
        lat: phi2.to_degrees().clamp(-90.0, 90.0),
        lon: normalize_lon(lambda2.to_degrees()),
    }
}

/// One straight hop between two consecutive observed locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub depart: DateTime<Utc>,
    pub arrive: DateTime<Utc>,
    /// miles
    pub distance: f64,
    /// hours, always > 0
    pub duration: f64,
    /// mph
    pub speed: f64,
    /// degrees clockwise from north
    pub azimuth: f64,
}

impl Segment {
    fn new(origin: GeoPoint, destination: GeoPoint, depart: DateTime<Utc>, arrive: DateTime<Utc>) -> Result<Self> {
        let distance = haversine_distance(origin, destination);
        let duration = (arrive - depart).num_seconds() as f64 / 3600.0;
        debug_assert!(duration > 0.0);
        Ok(Segment {
            origin,
            destination,
            depart,
            arrive,
            distance,
            duration,
            speed: distance / duration,
            azimuth: initial_bearing(origin, destination)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: String,
    pub segments: Vec<Segment>,
    pub first_point: GeoPoint,
    /// miles
    pub total_distance: f64,
    /// hours
    pub total_duration: f64,
    /// mph
    pub average_speed: f64,
}

/// A geocoded observation: when and where a user posted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub timestamp: DateTime<Utc>,
    pub location: GeoPoint,
}

/// Builds a user's trajectory from their geocoded posts.
///
/// Fixes are ordered by timestamp (ties keep input order). Consecutive fixes
/// with the same timestamp and location collapse into one. A hop shorter
/// than [`JITTER_FLOOR_MI`] is skipped: the anchor stays at the last kept
/// fix, so segments remain contiguous and dwell time is carried into the
/// next real move. Each segment lasts at least one second.
pub fn build_trajectory(user_id: &str, fixes: &[Fix]) -> Result<Trajectory> {
    let mut ordered: Vec<Fix> = fixes.to_vec();
    ordered.sort_by_key(|f| f.timestamp);
    ordered.dedup_by(|b, a| a.timestamp == b.timestamp && a.location.location_key() == b.location.location_key());

    let insufficient = |reason: &str| Error::InsufficientData {
        user: user_id.to_string(),
        reason: reason.to_string(),
    };
    let first = *ordered.first().ok_or_else(|| insufficient("no geocoded posts"))?;

    let mut segments = Vec::new();
    let mut anchor = first.location;
    let mut anchor_time = first.timestamp;
    for fix in &ordered[1..] {
        if haversine_distance(anchor, fix.location) < JITTER_FLOOR_MI {
            continue;
        }
        let arrive = fix.timestamp.max(anchor_time + Duration::seconds(1));
        segments.push(Segment::new(anchor, fix.location, anchor_time, arrive)?);
        anchor = fix.location;
        anchor_time = arrive;
    }
    if segments.is_empty() {
        return Err(insufficient("fewer than two usable locations"));
    }

    let total_distance: f64 = segments.iter().map(|s| s.distance).sum();
    let span = segments[segments.len() - 1].arrive - segments[0].depart;
    let total_duration = span.num_seconds() as f64 / 3600.0;
    let average_speed = if total_duration > 0.0 {
        total_distance / total_duration
    } else {
        0.0
    };
    Ok(Trajectory {
        user_id: user_id.to_string(),
        segments,
        first_point: first.location,
        total_distance,
        total_duration,
        average_speed,
    })
}
