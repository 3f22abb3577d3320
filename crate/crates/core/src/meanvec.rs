//! Resultant movement vectors.
//!
//! Segment velocities are averaged the way wind observations are: each
//! (azimuth, speed) pair is split into east-west and north-south components,
//! the components are averaged with equal weight, and the mean components are
//! turned back into a heading and a magnitude.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{forward_point, GeoPoint, Trajectory};

/// Below this magnitude (mph) the mean heading is undefined.
pub const ZERO_MAGNITUDE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resultant {
    pub magnitude: f64,
    /// `None` when the inputs cancel out.
    pub azimuth: Option<f64>,
}

/// Averages `(azimuth_deg, speed)` pairs.
///
/// The components carry a leading minus sign (they describe where the flow
/// comes from) and the final heading adds 180 degrees back, so a single
/// vector maps onto itself.
pub fn mean_vector(pairs: &[(f64, f64)]) -> Result<Resultant> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("mean_vector needs at least one segment"));
    }
    let n = pairs.len() as f64;
    let (mut sum_e, mut sum_n) = (0.0, 0.0);
    for &(azimuth, speed) in pairs {
        let theta = azimuth.to_radians();
        sum_e += speed * theta.sin();
        sum_n += speed * theta.cos();
    }
    let v_e = -sum_e / n;
    let v_n = -sum_n / n;
    let magnitude = v_e.hypot(v_n);
    if magnitude < ZERO_MAGNITUDE {
        return Ok(Resultant {
            magnitude,
            azimuth: None,
        });
    }
    let mut azimuth = (v_e.atan2(v_n).to_degrees() + 180.0).rem_euclid(360.0);
    if azimuth >= 360.0 {
        azimuth = 0.0;
    }
    Ok(Resultant {
        magnitude,
        azimuth: Some(azimuth),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanVector {
    /// mph
    pub magnitude: f64,
    /// degrees; `None` for a stationary-on-average user
    pub azimuth: Option<f64>,
    /// contributing segments
    pub n: usize,
    pub origin: GeoPoint,
    pub endpoint: GeoPoint,
    /// miles
    pub displacement: f64,
    /// hours the trajectory spans; scales the endpoint
    pub duration: f64,
}

impl MeanVector {
    /// A user with no usable movement: endpoint pinned to the origin.
    pub fn stationary(origin: GeoPoint) -> Self {
        MeanVector {
            magnitude: 0.0,
            azimuth: None,
            n: 0,
            origin,
            endpoint: origin,
            displacement: 0.0,
            duration: 0.0,
        }
    }
}

/// Mean vector of a trajectory, anchored at its first point. The endpoint
/// lies `magnitude * total_duration` miles away along the mean heading.
pub fn user_mean_vector(traj: &Trajectory) -> Result<MeanVector> {
    let pairs: Vec<(f64, f64)> = traj.segments.iter().map(|s| (s.azimuth, s.speed)).collect();
    let r = mean_vector(&pairs)?;
    let origin = traj.first_point;
    let (displacement, endpoint) = match r.azimuth {
        Some(az) => {
            let d = r.magnitude * traj.total_duration;
            (d, forward_point(origin, az, d))
        }
        None => (0.0, origin),
    };
    Ok(MeanVector {
        magnitude: r.magnitude,
        azimuth: r.azimuth,
        n: pairs.len(),
        origin,
        endpoint,
        displacement,
        duration: traj.total_duration,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVector {
    pub origin: GeoPoint,
    pub endpoint: GeoPoint,
    pub magnitude: f64,
    pub azimuth: Option<f64>,
    pub members: usize,
}

/// Averages member vectors into one group origin and endpoint.
pub fn group_mean_vector(vectors: &[MeanVector]) -> Result<GroupVector> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("group_mean_vector needs at least one member"));
    }
    let n = vectors.len() as f64;
    let lat = vectors.iter().map(|v| v.origin.lat()).sum::<f64>() / n;
    let lon = vectors.iter().map(|v| v.origin.lon()).sum::<f64>() / n;
    let origin = GeoPoint::new(lat, lon)?;

    // a zero-magnitude member contributes nothing whatever its heading
    let pairs: Vec<(f64, f64)> = vectors
        .iter()
        .map(|v| (v.azimuth.unwrap_or(0.0), v.azimuth.map_or(0.0, |_| v.magnitude)))
        .collect();
    let r = mean_vector(&pairs)?;
    let mean_duration = vectors.iter().map(|v| v.duration).sum::<f64>() / n;
    let endpoint = match r.azimuth {
        Some(az) => forward_point(origin, az, r.magnitude * mean_duration),
        None => origin,
    };
    Ok(GroupVector {
        origin,
        endpoint,
        magnitude: r.magnitude,
        azimuth: r.azimuth,
        members: vectors.len(),
    })
}

/// GeoJSON LineString feature from origin to endpoint.
pub fn vector_feature(user: &str, mv: &MeanVector) -> Value {
    json!({
        "type": "Feature",
        "geometry": {
            "type": "LineString",
            "coordinates": [
                [mv.origin.lon(), mv.origin.lat()],
                [mv.endpoint.lon(), mv.endpoint.lat()],
            ],
        },
        "properties": {
            "user": user,
            "magnitude_mph": mv.magnitude,
            "azimuth_deg": mv.azimuth,
            "displacement_mi": mv.displacement,
        },
    })
}
