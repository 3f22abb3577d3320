//! Seeded synthetic scenarios with known answers.
//!
//! Users move on a surface of concentric square zones (level 3 at the
//! center, then 2, then 1, with a flood square on top of the center) under
//! one of four policies. Every user gets an independent ChaCha stream
//! derived from the scenario seed, so a user's data does not depend on how
//! many other users are generated.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_distance, GeoPoint, EARTH_RADIUS_MI, JITTER_FLOOR_MI};
use crate::ingest::TimedPost;
use crate::risk::{rbq, rect_ring, risk_at, Polygon, RiskScheme, RiskSurface, RiskZone};

const DEFAULT_SPEC: &str = include_str!("../data/scenario_default.toml");

/// Points closer than this to a zone edge (in miles) make a user degenerate.
pub const BOUNDARY_MARGIN_MI: f64 = 0.25;
/// Offset between the two fixes of a stationary user; below the jitter floor.
const STATIONARY_WOBBLE_MI: f64 = 0.003;
const MILES_PER_DEGREE: f64 = EARTH_RADIUS_MI * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// start in the innermost zone, end outside all zones
    Flee,
    /// start outside all zones, end in the innermost zone
    Seek,
    /// every fix within the jitter floor of the first
    Stationary,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyCounts {
    pub flee: usize,
    pub seek: usize,
    pub stationary: usize,
    pub random_walk: usize,
}

impl Default for PolicyCounts {
    fn default() -> Self {
        PolicyCounts {
            flee: 20,
            seek: 20,
            stationary: 5,
            random_walk: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceLayout {
    /// [lat, lon]
    pub center: [f64; 2],
    pub ring_width_mi: f64,
    /// number of zone rings, 0..=3
    pub rings: u8,
    /// 0 disables the flood square
    pub flood_half_width_mi: f64,
}

impl Default for SurfaceLayout {
    fn default() -> Self {
        SurfaceLayout {
            center: [40.70, -73.95],
            ring_width_mi: 2.0,
            rings: 3,
            flood_half_width_mi: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MovementSpec {
    /// inclusive range of legs per moving user
    pub legs: [usize; 2],
    /// inclusive range of minutes per leg; all legs of a user share one value
    pub leg_minutes: [i64; 2],
    pub walk_leg_mi: [f64; 2],
    pub start: DateTime<Utc>,
    pub start_spread_hours: i64,
}

impl Default for MovementSpec {
    fn default() -> Self {
        MovementSpec {
            legs: [3, 6],
            leg_minutes: [15, 45],
            walk_leg_mi: [0.5, 3.0],
            start: "2012-10-28T14:30:00Z".parse().expect("valid literal"),
            start_spread_hours: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentSpec {
    pub p_verb: f64,
    pub p_event_tag: f64,
    pub p_emotional: f64,
    pub p_mention: f64,
    pub p_reply: f64,
    /// inclusive range of extra posts without coordinates per user
    pub extra_posts: [usize; 2],
    pub official_docs: usize,
}

impl Default for ContentSpec {
    fn default() -> Self {
        ContentSpec {
            p_verb: 0.3,
            p_event_tag: 0.3,
            p_emotional: 0.25,
            p_mention: 0.3,
            p_reply: 0.1,
            extra_posts: [0, 2],
            official_docs: 40,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub policies: PolicyCounts,
    pub surface: SurfaceLayout,
    pub movement: MovementSpec,
    pub content: ContentSpec,
}

impl ScenarioSpec {
    /// The bundled 50-user mixed-policy scenario.
    pub fn bundled() -> Self {
        ScenarioSpec::parse(DEFAULT_SPEC).expect("bundled scenario parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        ScenarioSpec::parse(&text)
    }

    pub fn users(&self) -> usize {
        let p = &self.policies;
        p.flee + p.seek + p.stationary + p.random_walk
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(m.to_string()));
        let (s, m, c) = (&self.surface, &self.movement, &self.content);
        if self.users() == 0 {
            return bad("scenario has no users");
        }
        if s.rings > 3 {
            return bad("at most 3 zone rings");
        }
        if s.rings == 0 && (self.policies.flee > 0 || self.policies.seek > 0) {
            return bad("flee and seek policies need at least one risk zone ring");
        }
        if !(s.ring_width_mi.is_finite() && s.ring_width_mi > 4.0 * BOUNDARY_MARGIN_MI) {
            return bad("ring_width_mi must exceed four boundary margins");
        }
        if !(s.flood_half_width_mi.is_finite() && s.flood_half_width_mi >= 0.0) {
            return bad("flood_half_width_mi must be finite and non-negative");
        }
        GeoPoint::new(s.center[0], s.center[1]).map_err(|e| Error::Scenario(e.to_string()))?;
        if m.legs[0] < 1 || m.legs[0] > m.legs[1] {
            return bad("legs must be an increasing range starting at 1 or more");
        }
        if m.leg_minutes[0] < 1 || m.leg_minutes[0] > m.leg_minutes[1] {
            return bad("leg_minutes must be an increasing range starting at 1 or more");
        }
        if !(m.walk_leg_mi[0] > JITTER_FLOOR_MI && m.walk_leg_mi[0] <= m.walk_leg_mi[1]) {
            return bad("walk_leg_mi must be an increasing range above the jitter floor");
        }
        if m.start_spread_hours < 0 {
            return bad("start_spread_hours must be non-negative");
        }
        for (name, p) in [
            ("p_verb", c.p_verb),
            ("p_event_tag", c.p_event_tag),
            ("p_emotional", c.p_emotional),
            ("p_mention", c.p_mention),
            ("p_reply", c.p_reply),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Scenario(format!("{name} must lie in [0, 1]")));
            }
        }
        if c.extra_posts[0] > c.extra_posts[1] {
            return bad("extra_posts must be an increasing range");
        }
        if c.official_docs < 4 {
            return bad("official_docs must be at least 4");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthVector {
    pub magnitude: f64,
    pub azimuth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub policy: Policy,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub distance: f64,
    pub duration: f64,
    pub mean_vector: TruthVector,
    pub r_origin: u8,
    pub r_dest: u8,
    pub rbq: f64,
    /// -1, 0 or 1
    pub rbq_sign: i8,
    /// origin or destination lies within the boundary margin of a zone edge
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub users: Vec<UserTruth>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub posts: Vec<TimedPost>,
    pub surface: RiskSurface,
    pub official: Vec<String>,
    pub truth: GroundTruth,
}

/// Flat local frame around the surface center, in miles east/north.
#[derive(Debug, Clone, Copy)]
struct Frame {
    lat: f64,
    lon: f64,
    cos_lat: f64,
}

impl Frame {
    fn new(center: [f64; 2]) -> Self {
        Frame {
            lat: center[0],
            lon: center[1],
            cos_lat: center[0].to_radians().cos(),
        }
    }

    fn point(&self, x: f64, y: f64) -> GeoPoint {
        GeoPoint::new(
            self.lat + y / MILES_PER_DEGREE,
            self.lon + x / (MILES_PER_DEGREE * self.cos_lat),
        )
        .expect("scenario points stay near the center")
    }

    fn rect(&self, half_width: f64) -> Vec<[f64; 2]> {
        let dx = half_width / (MILES_PER_DEGREE * self.cos_lat);
        let dy = half_width / MILES_PER_DEGREE;
        rect_ring(self.lon - dx, self.lat - dy, self.lon + dx, self.lat + dy)
    }
}

fn build_surface(layout: &SurfaceLayout, frame: &Frame) -> Result<RiskSurface> {
    let w = layout.ring_width_mi;
    let mut zones = Vec::new();
    for i in 0..layout.rings {
        let mut rings = vec![frame.rect(w * f64::from(i + 1))];
        if i > 0 {
            rings.push(frame.rect(w * f64::from(i)));
        }
        zones.push(RiskZone {
            polygon: Polygon::new(rings)?,
            base_level: 3 - i,
        });
    }
    let flood = if layout.flood_half_width_mi > 0.0 {
        vec![Polygon::new(vec![frame.rect(layout.flood_half_width_mi)])?]
    } else {
        Vec::new()
    };
    RiskSurface::new(zones, flood, RiskScheme::Pilot)
}

/// Zone edges in the square metric max(|x|, |y|).
fn edges(layout: &SurfaceLayout) -> Vec<f64> {
    let mut e: Vec<f64> = (1..=layout.rings)
        .map(|k| layout.ring_width_mi * f64::from(k))
        .collect();
    if layout.flood_half_width_mi > 0.0 {
        e.push(layout.flood_half_width_mi);
    }
    e
}

fn near_edge(layout: &SurfaceLayout, x: f64, y: f64) -> bool {
    let s = x.abs().max(y.abs());
    edges(layout).iter().any(|e| (s - e).abs() < BOUNDARY_MARGIN_MI)
}

const NEUTRAL: &[&str] = &[
    "wind picking up here",
    "long line for gas",
    "streets pretty empty",
    "lights flickering again",
    "checking on the neighbors",
    "rain getting heavier",
    "traffic on the avenue",
    "store shelves almost bare",
];
const ANCHORS: &[&str] = &[
    "at home",
    "at the corner store",
    "at work",
    "at the station",
    "at the park",
];
const VERBS: &[&str] = &[
    "need to find water",
    "want to watch the news",
    "gotta go now",
    "said the bridge is closed",
    "doing laundry before it hits",
    "driving north",
];
const EMOTIONAL: &[&str] = &[
    "so scared",
    "feeling safe",
    "really worried",
    "love my neighbors",
    "terrified of this wind",
];
const EVENT_TAGS: &[&str] = &["#sandy", "#hurricane"];
const EXTERNAL_ACCOUNTS: &[&str] = &["nycoem", "notifynyc"];
const OFFICIAL_THEMES: &[&[&str]] = &[
    &[
        "shelter", "shelters", "open", "evacuees", "pets", "schools", "beds", "centers",
    ],
    &[
        "evacuation",
        "zone",
        "order",
        "mandatory",
        "residents",
        "leave",
        "coastal",
        "low",
    ],
    &[
        "power",
        "outage",
        "crews",
        "restoring",
        "customers",
        "utility",
        "lines",
        "downed",
    ],
    &[
        "subway",
        "service",
        "suspended",
        "bus",
        "tunnels",
        "bridges",
        "closed",
        "transit",
    ],
];

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn post_text(rng: &mut ChaCha8Rng, c: &ContentSpec, anchor: bool, mention: Option<&str>) -> String {
    let mut parts = vec![if anchor { pick(rng, ANCHORS) } else { pick(rng, NEUTRAL) }.to_string()];
    if rng.random_bool(c.p_verb) {
        parts.push(pick(rng, VERBS).to_string());
    }
    if rng.random_bool(c.p_emotional) {
        parts.push(pick(rng, EMOTIONAL).to_string());
    }
    if rng.random_bool(c.p_event_tag) {
        parts.push(pick(rng, EVENT_TAGS).to_string());
    }
    if let Some(m) = mention {
        parts.insert(0, format!("@{m}"));
    }
    parts.join(" ")
}

struct Track {
    /// local (x, y) miles at each fix
    points: Vec<(f64, f64)>,
    leg_minutes: i64,
}

fn uniform_square(rng: &mut ChaCha8Rng, half: f64) -> (f64, f64) {
    (rng.random_range(-half..=half), rng.random_range(-half..=half))
}

/// A point inside the innermost zone, clear of the flood edge.
fn core_point(rng: &mut ChaCha8Rng, layout: &SurfaceLayout) -> (f64, f64) {
    loop {
        let (x, y) = uniform_square(rng, 0.7 * layout.ring_width_mi);
        if !near_edge(layout, x, y) {
            return (x, y);
        }
    }
}

/// A point outside every zone.
fn outer_point(rng: &mut ChaCha8Rng, layout: &SurfaceLayout) -> (f64, f64) {
    let phi = rng.random_range(0.0..2.0 * PI);
    let r = f64::from(layout.rings) * layout.ring_width_mi * 1.5 + rng.random_range(0.5..2.0);
    (r * phi.cos(), r * phi.sin())
}

fn straight_track(rng: &mut ChaCha8Rng, from: (f64, f64), to: (f64, f64), legs: usize) -> Vec<(f64, f64)> {
    let jitter = Normal::new(0.0, 0.15).expect("valid normal");
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let len = dx.hypot(dy);
    let (nx, ny) = (-dy / len, dx / len);
    (0..=legs)
        .map(|k| {
            let f = k as f64 / legs as f64;
            let off = if k == 0 || k == legs { 0.0 } else { jitter.sample(rng) };
            (from.0 + f * dx + off * nx, from.1 + f * dy + off * ny)
        })
        .collect()
}

fn track(rng: &mut ChaCha8Rng, policy: Policy, spec: &ScenarioSpec) -> Track {
    let m = &spec.movement;
    let layout = &spec.surface;
    let legs = rng.random_range(m.legs[0]..=m.legs[1]);
    let leg_minutes = rng.random_range(m.leg_minutes[0]..=m.leg_minutes[1]);
    let roam = f64::from(layout.rings) * layout.ring_width_mi + 1.0;
    let points = match policy {
        Policy::Flee => {
            let from = core_point(rng, layout);
            let to = outer_point(rng, layout);
            straight_track(rng, from, to, legs)
        }
        Policy::Seek => {
            let from = outer_point(rng, layout);
            let to = core_point(rng, layout);
            straight_track(rng, from, to, legs)
        }
        Policy::Stationary => {
            let (x, y) = uniform_square(rng, roam);
            (0..=legs)
                .map(|k| (x + if k % 2 == 1 { STATIONARY_WOBBLE_MI } else { 0.0 }, y))
                .collect()
        }
        Policy::RandomWalk => {
            let mut p = uniform_square(rng, roam);
            let mut points = vec![p];
            for _ in 0..legs {
                let heading = rng.random_range(0.0..2.0 * PI);
                let len = rng.random_range(m.walk_leg_mi[0]..=m.walk_leg_mi[1]);
                p = (p.0 + len * heading.sin(), p.1 + len * heading.cos());
                points.push(p);
            }
            points
        }
    };
    Track { points, leg_minutes }
}

/// Generates a scenario. The same (spec, seed) always yields the same data.
pub fn synthesize_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let frame = Frame::new(spec.surface.center);
    let surface = build_surface(&spec.surface, &frame)?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);

    let p = &spec.policies;
    let mut policies: Vec<Policy> = [
        (Policy::Flee, p.flee),
        (Policy::Seek, p.seek),
        (Policy::Stationary, p.stationary),
        (Policy::RandomWalk, p.random_walk),
    ]
    .iter()
    .flat_map(|&(policy, n)| std::iter::repeat_n(policy, n))
    .collect();
    policies.shuffle(&mut master);
    let ids: Vec<String> = (0..policies.len()).map(|i| format!("user{:03}", i + 1)).collect();

    let official = (0..spec.content.official_docs)
        .map(|_| {
            let theme = OFFICIAL_THEMES[master.random_range(0..OFFICIAL_THEMES.len())];
            let n = master.random_range(4..=7);
            (0..n).map(|_| pick(&mut master, theme)).collect::<Vec<_>>().join(" ")
        })
        .collect();

    let mut posts = Vec::new();
    let mut truths = Vec::new();
    for (i, (&policy, user)) in policies.iter().zip(&ids).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let t = track(&mut rng, policy, spec);
        let offset = rng.random_range(0..=spec.movement.start_spread_hours * 60);
        let start = spec.movement.start + Duration::minutes(offset);
        let leg = Duration::minutes(t.leg_minutes);
        let geo: Vec<GeoPoint> = t.points.iter().map(|&(x, y)| frame.point(x, y)).collect();

        let mut n_post = 0;
        let mut emit = |rng: &mut ChaCha8Rng, ts: DateTime<Utc>, location: Option<GeoPoint>, anchor: bool| {
            let others: Vec<&str> = ids.iter().map(String::as_str).filter(|o| *o != user).collect();
            let mention = rng.random_bool(spec.content.p_mention).then(|| {
                if others.is_empty() || rng.random_bool(0.2) {
                    pick(rng, EXTERNAL_ACCOUNTS)
                } else {
                    pick(rng, &others)
                }
            });
            let reply_to =
                (rng.random_bool(spec.content.p_reply) && !others.is_empty()).then(|| pick(rng, &others).to_string());
            n_post += 1;
            let text = post_text(rng, &spec.content, anchor, mention);
            TimedPost::new(
                format!("{user}-{n_post:03}"),
                user.clone(),
                ts,
                location,
                text,
                reply_to,
            )
        };
        let mut user_posts = Vec::new();
        for (k, point) in geo.iter().enumerate() {
            user_posts.push(emit(&mut rng, start + leg * k as i32, Some(*point), k == 0));
        }
        let span_minutes = t.leg_minutes * (geo.len() as i64 - 1);
        for _ in 0..rng.random_range(spec.content.extra_posts[0]..=spec.content.extra_posts[1]) {
            let at = start + Duration::minutes(rng.random_range(0..=span_minutes));
            user_posts.push(emit(&mut rng, at, None, false));
        }
        user_posts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.post_id.cmp(&b.post_id)));
        posts.extend(user_posts);

        let (first, last) = (t.points[0], *t.points.last().expect("at least two fixes"));
        let (origin, destination) = (geo[0], *geo.last().expect("at least two fixes"));
        let r_origin = risk_at(&surface, origin);
        let r_dest = risk_at(&surface, destination);
        let (distance, duration) = if policy == Policy::Stationary {
            (0.0, 0.0)
        } else {
            let d: f64 = geo.windows(2).map(|w| haversine_distance(w[0], w[1])).sum();
            (d, span_minutes as f64 / 60.0)
        };
        let speed = if duration > 0.0 { distance / duration } else { 0.0 };
        let (nx, ny) = (last.0 - first.0, last.1 - first.1);
        let moving = policy != Policy::Stationary;
        let mean_vector = TruthVector {
            magnitude: if moving { nx.hypot(ny) / duration } else { 0.0 },
            azimuth: moving.then(|| nx.atan2(ny).to_degrees().rem_euclid(360.0)),
        };
        let value = rbq(r_origin, r_dest, distance, speed);
        truths.push(UserTruth {
            user_id: user.clone(),
            policy,
            origin,
            destination,
            distance,
            duration,
            mean_vector,
            r_origin,
            r_dest,
            rbq: value,
            rbq_sign: if value > 0.0 {
                1
            } else if value < 0.0 {
                -1
            } else {
                0
            },
            degenerate: near_edge(&spec.surface, first.0, first.1) || near_edge(&spec.surface, last.0, last.1),
        });
    }
    posts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.post_id.cmp(&b.post_id)));
    Ok(Scenario {
        posts,
        surface,
        official,
        truth: GroundTruth { seed, users: truths },
    })
}

pub const POSTS_FILE: &str = "posts.jsonl";
pub const EVAC_FILE: &str = "evac.geojson";
pub const FLOOD_FILE: &str = "flood.geojson";
pub const OFFICIAL_FILE: &str = "official.txt";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const CONFIG_FILE: &str = "pipeline.toml";

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes the scenario files plus a `pipeline.toml` that runs on them.
pub fn write_scenario(scenario: &Scenario, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let posts: String = scenario.posts.iter().map(|p| p.to_json_line() + "\n").collect();
    write(dir, POSTS_FILE, &posts)?;
    write(dir, EVAC_FILE, &pretty(&scenario.surface.evac_geojson()))?;
    write(dir, FLOOD_FILE, &pretty(&scenario.surface.flood_geojson()))?;
    write(dir, OFFICIAL_FILE, &(scenario.official.join("\n") + "\n"))?;
    write(dir, TRUTH_FILE, &pretty(&scenario.truth))?;
    let config = format!(
        "schema_version = 1\nseed = {}\nunits = \"miles-mph\"\nrisk_scheme = \"pilot-0-4\"\n\n[paths]\nposts = \"{POSTS_FILE}\"\nevac = \"{EVAC_FILE}\"\nflood = \"{FLOOD_FILE}\"\nofficial = \"{OFFICIAL_FILE}\"\nout = \"out\"\n",
        scenario.truth.seed
    );
    write(dir, CONFIG_FILE, &config)
}
