//! Graded risk surface and the risk behavior quotient.
//!
//! Evacuation zones carry a base level (1 lowest, 3 highest); anywhere
//! outside every zone is level 0. A point inside any flood polygon gets one
//! extra level, so the pilot scheme spans 0..=4.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Trajectory};
use crate::meanvec::MeanVector;

/// How zone levels map onto risk scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RiskScheme {
    /// zones 1..=3, outside 0, +1 when flooded
    #[default]
    #[serde(rename = "pilot-0-4")]
    Pilot,
    /// zones 1..=3 scored 2..=4, outside 1, flood ignored
    #[serde(rename = "figure1-1-4")]
    Figure1,
}

/// A polygon in (lon, lat) coordinates: exterior ring first, then holes.
/// Rings are closed (first vertex repeated last).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    rings: Vec<Vec<[f64; 2]>>,
    bbox: [f64; 4],
}

impl Polygon {
    pub fn new(rings: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::Surface("polygon has no rings".into()));
        }
        for (i, ring) in rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(Error::Surface(format!(
                    "ring {i} has {} positions, need at least 4",
                    ring.len()
                )));
            }
            if ring.first() != ring.last() {
                return Err(Error::Surface(format!("ring {i} is not closed")));
            }
            if ring.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::Surface(format!("ring {i} has non-finite coordinates")));
            }
        }
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &[x, y] in &rings[0] {
            bbox[0] = bbox[0].min(x);
            bbox[1] = bbox[1].min(y);
            bbox[2] = bbox[2].max(x);
            bbox[3] = bbox[3].max(y);
        }
        Ok(Polygon { rings, bbox })
    }

    /// Axis-aligned rectangle, handy for fixtures.
    pub fn rect(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Polygon::new(vec![rect_ring(min_lon, min_lat, max_lon, max_lat)]).expect("valid rectangle")
    }

    pub fn rings(&self) -> &[Vec<[f64; 2]>] {
        &self.rings
    }

    /// `[min_lon, min_lat, max_lon, max_lat]` of the exterior ring.
    pub fn bbox(&self) -> [f64; 4] {
        self.bbox
    }

    /// Even-odd ray cast towards +x over every ring. Boundary points count
    /// as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if x < self.bbox[0] || x > self.bbox[2] || y < self.bbox[1] || y > self.bbox[3] {
            return false;
        }
        let mut inside = false;
        for ring in &self.rings {
            for edge in ring.windows(2) {
                let ([xi, yi], [xj, yj]) = (edge[0], edge[1]);
                if on_segment(x, y, xi, yi, xj, yj) {
                    return true;
                }
                // half-open rule: a vertex exactly at height y is counted
                // for the edge that lies above it only
                if (yi > y) != (yj > y) {
                    let x_cross = xi + (y - yi) * (xj - xi) / (yj - yi);
                    if x < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn geojson_coordinates(&self) -> Value {
        Value::from(
            self.rings
                .iter()
                .map(|r| Value::from(r.iter().map(|c| Value::from(c.to_vec())).collect::<Vec<_>>()))
                .collect::<Vec<_>>(),
        )
    }
}

pub(crate) fn rect_ring(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Vec<[f64; 2]> {
    vec![
        [min_lon, min_lat],
        [max_lon, min_lat],
        [max_lon, max_lat],
        [min_lon, max_lat],
        [min_lon, min_lat],
    ]
}

fn on_segment(x: f64, y: f64, xi: f64, yi: f64, xj: f64, yj: f64) -> bool {
    let cross = (xj - xi) * (y - yi) - (yj - yi) * (x - xi);
    cross == 0.0 && x >= xi.min(xj) && x <= xi.max(xj) && y >= yi.min(yj) && y <= yi.max(yj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskZone {
    pub polygon: Polygon,
    /// 1, 2 or 3
    pub base_level: u8,
}

/// Uniform grid over polygon bounding boxes.
#[derive(Debug, Clone)]
struct GridIndex {
    bounds: [f64; 4],
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl GridIndex {
    const MAX_SIDE: usize = 64;

    fn build(boxes: &[[f64; 4]]) -> Self {
        if boxes.is_empty() {
            return GridIndex {
                bounds: [0.0; 4],
                cols: 0,
                rows: 0,
                cells: Vec::new(),
            };
        }
        let mut bounds = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for b in boxes {
            bounds[0] = bounds[0].min(b[0]);
            bounds[1] = bounds[1].min(b[1]);
            bounds[2] = bounds[2].max(b[2]);
            bounds[3] = bounds[3].max(b[3]);
        }
        let side = ((boxes.len() as f64).sqrt().ceil() as usize * 4).clamp(1, Self::MAX_SIDE);
        let mut index = GridIndex {
            bounds,
            cols: side,
            rows: side,
            cells: vec![Vec::new(); side * side],
        };
        for (id, b) in boxes.iter().enumerate() {
            let (c0, r0) = index.cell_of(b[0], b[1]);
            let (c1, r1) = index.cell_of(b[2], b[3]);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    index.cells[r * index.cols + c].push(id);
                }
            }
        }
        index
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = (x - self.bounds[0]) / (self.bounds[2] - self.bounds[0]);
        let fy = (y - self.bounds[1]) / (self.bounds[3] - self.bounds[1]);
        let c = if fx.is_finite() {
            (fx * self.cols as f64) as usize
        } else {
            0
        };
        let r = if fy.is_finite() {
            (fy * self.rows as f64) as usize
        } else {
            0
        };
        (c.min(self.cols - 1), r.min(self.rows - 1))
    }

    fn candidates(&self, x: f64, y: f64) -> &[usize] {
        if self.cells.is_empty() || x < self.bounds[0] || x > self.bounds[2] || y < self.bounds[1] || y > self.bounds[3]
        {
            return &[];
        }
        let (c, r) = self.cell_of(x, y);
        &self.cells[r * self.cols + c]
    }
}

/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone)]
pub struct RiskSurface {
    zones: Vec<RiskZone>,
    flood: Vec<Polygon>,
    scheme: RiskScheme,
    zone_index: GridIndex,
    flood_index: GridIndex,
}

impl RiskSurface {
    pub fn new(zones: Vec<RiskZone>, flood: Vec<Polygon>, scheme: RiskScheme) -> Result<Self> {
        if let Some(z) = zones.iter().find(|z| !(1..=3).contains(&z.base_level)) {
            return Err(Error::Surface(format!("zone level {} outside 1..=3", z.base_level)));
        }
        let zone_index = GridIndex::build(&zones.iter().map(|z| z.polygon.bbox()).collect::<Vec<_>>());
        let flood_index = GridIndex::build(&flood.iter().map(|p| p.bbox()).collect::<Vec<_>>());
        Ok(RiskSurface {
            zones,
            flood,
            scheme,
            zone_index,
            flood_index,
        })
    }

    pub fn zones(&self) -> &[RiskZone] {
        &self.zones
    }

    pub fn flood(&self) -> &[Polygon] {
        &self.flood
    }

    pub fn scheme(&self) -> RiskScheme {
        self.scheme
    }

    pub fn outside_level(&self) -> u8 {
        match self.scheme {
            RiskScheme::Pilot => 0,
            RiskScheme::Figure1 => 1,
        }
    }

    /// Highest zone base level containing (lon, lat), 0 if none.
    pub fn zone_level_at(&self, lon: f64, lat: f64) -> u8 {
        self.zone_index
            .candidates(lon, lat)
            .iter()
            .map(|&i| &self.zones[i])
            .filter(|z| z.polygon.contains(lon, lat))
            .map(|z| z.base_level)
            .max()
            .unwrap_or(0)
    }

    pub fn flooded_at(&self, lon: f64, lat: f64) -> bool {
        self.flood_index
            .candidates(lon, lat)
            .iter()
            .any(|&i| self.flood[i].contains(lon, lat))
    }

    pub fn level_at(&self, lon: f64, lat: f64) -> u8 {
        let base = self.zone_level_at(lon, lat);
        match self.scheme {
            RiskScheme::Pilot => base + u8::from(self.flooded_at(lon, lat)),
            RiskScheme::Figure1 => {
                if base == 0 {
                    1
                } else {
                    base + 1
                }
            }
        }
    }

    /// Evacuation zones as a GeoJSON FeatureCollection with `zone_level`.
    pub fn evac_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .zones
            .iter()
            .map(|z| {
                serde_json::json!({
                    "type": "Feature",
                    "properties": { "zone_level": z.base_level },
                    "geometry": { "type": "Polygon", "coordinates": z.polygon.geojson_coordinates() },
                })
            })
            .collect();
        serde_json::json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn flood_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .flood
            .iter()
            .map(|p| {
                serde_json::json!({
                    "type": "Feature",
                    "properties": {},
                    "geometry": { "type": "Polygon", "coordinates": p.geojson_coordinates() },
                })
            })
            .collect();
        serde_json::json!({ "type": "FeatureCollection", "features": features })
    }
}

/// Risk level at a point, in 0..=4.
pub fn risk_at(surface: &RiskSurface, p: GeoPoint) -> u8 {
    surface.level_at(p.lon(), p.lat())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Surface(format!("{}: {e}", path.display())))
}

/// Loads evacuation zones and flood polygons from GeoJSON files.
pub fn load_surface(evac: &Path, flood: &Path, scheme: RiskScheme) -> Result<RiskSurface> {
    surface_from_geojson(&read_json(evac)?, &read_json(flood)?, scheme)
}

pub fn surface_from_geojson(evac: &Value, flood: &Value, scheme: RiskScheme) -> Result<RiskSurface> {
    let mut zones = Vec::new();
    for (i, feature) in features(evac, "evac")?.iter().enumerate() {
        let label = feature_label(feature, i);
        let level = feature
            .get("properties")
            .and_then(|p| p.get("zone_level"))
            .ok_or_else(|| Error::Surface(format!("evac {label}: missing zone_level")))?;
        let level = level
            .as_u64()
            .filter(|l| (1..=3).contains(l))
            .ok_or_else(|| Error::Surface(format!("evac {label}: zone_level {level} is not an integer in 1..=3")))?;
        for polygon in polygons(feature).map_err(|e| Error::Surface(format!("evac {label}: {e}")))? {
            zones.push(RiskZone {
                polygon,
                base_level: level as u8,
            });
        }
    }
    let mut flood_polys = Vec::new();
    for (i, feature) in features(flood, "flood")?.iter().enumerate() {
        let label = feature_label(feature, i);
        flood_polys.extend(polygons(feature).map_err(|e| Error::Surface(format!("flood {label}: {e}")))?);
    }
    RiskSurface::new(zones, flood_polys, scheme)
}

/// Every polygon in a GeoJSON FeatureCollection, ignoring properties.
pub fn load_polygons(path: &Path) -> Result<Vec<Polygon>> {
    let doc = read_json(path)?;
    let mut out = Vec::new();
    for (i, feature) in features(&doc, "polygon")?.iter().enumerate() {
        let label = feature_label(feature, i);
        out.extend(polygons(feature).map_err(|e| Error::Surface(format!("{}: {label}: {e}", path.display())))?);
    }
    Ok(out)
}

fn features<'a>(doc: &'a Value, which: &str) -> Result<&'a Vec<Value>> {
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Surface(format!("{which} file is not a FeatureCollection")));
    }
    doc.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Surface(format!("{which} file has no features array")))
}

fn feature_label(feature: &Value, i: usize) -> String {
    match feature.get("id") {
        Some(id) if !id.is_null() => format!("feature {i} (id {id})"),
        _ => format!("feature {i}"),
    }
}

fn polygons(feature: &Value) -> std::result::Result<Vec<Polygon>, String> {
    let geometry = feature
        .get("geometry")
        .filter(|g| !g.is_null())
        .ok_or("missing geometry")?;
    let coords = geometry.get("coordinates").ok_or("geometry has no coordinates")?;
    match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(vec![parse_polygon(coords)?]),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or("MultiPolygon coordinates are not an array")?
            .iter()
            .map(parse_polygon)
            .collect(),
        Some(other) => Err(format!("unsupported geometry type {other}")),
        None => Err("geometry has no type".into()),
    }
}

fn parse_polygon(coords: &Value) -> std::result::Result<Polygon, String> {
    let rings = coords
        .as_array()
        .ok_or("polygon coordinates are not an array")?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(|| "ring is not an array".to_string())?
                .iter()
                .map(|pos| match pos.as_array().map(Vec::as_slice) {
                    Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                        (Some(x), Some(y)) => Ok([x, y]),
                        _ => Err("non-numeric position".to_string()),
                    },
                    _ => Err("malformed position".to_string()),
                })
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Polygon::new(rings).map_err(|e| match e {
        Error::Surface(msg) => msg,
        other => other.to_string(),
    })
}

/// ((R_d - R_o) + R_d) * (d * s)
pub fn rbq(r_origin: u8, r_dest: u8, distance: f64, speed: f64) -> f64 {
    let levels = (f64::from(r_dest) - f64::from(r_origin)) + f64::from(r_dest);
    levels * (distance * speed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbqRecord {
    pub user_id: String,
    pub r_origin: u8,
    pub r_dest: u8,
    /// miles
    pub distance: f64,
    /// mph
    pub speed: f64,
    pub rbq: f64,
}

impl RbqRecord {
    pub fn new(user_id: impl Into<String>, r_origin: u8, r_dest: u8, distance: f64, speed: f64) -> Self {
        RbqRecord {
            user_id: user_id.into(),
            r_origin,
            r_dest,
            distance,
            speed,
            rbq: rbq(r_origin, r_dest, distance, speed),
        }
    }
}

/// Levels at the mean vector's origin and endpoint, scaled by the
/// trajectory's total distance and average speed.
pub fn user_rbq(traj: &Trajectory, mv: &MeanVector, surface: &RiskSurface) -> RbqRecord {
    RbqRecord::new(
        traj.user_id.clone(),
        risk_at(surface, mv.origin),
        risk_at(surface, mv.endpoint),
        traj.total_distance,
        traj.average_speed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbqSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

pub fn rbq_summary(records: &[RbqRecord]) -> Result<RbqSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("rbq_summary needs at least one record"));
    }
    let mut values: Vec<f64> = records.iter().map(|r| r.rbq).collect();
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    Ok(RbqSummary {
        count: n,
        min: values[0],
        max: values[n - 1],
        mean: values.iter().sum::<f64>() / n as f64,
        median,
    })
}
