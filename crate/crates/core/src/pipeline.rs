//! File-backed stages and the end-to-end run.
//!
//! Every stage reads its inputs from a working directory and writes plain
//! files back into it, so stages can be run one at a time and diffed.
//! A full run executes all stages in a staging directory next to the
//! output directory and only moves the bundle into place once every stage
//! has succeeded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::content::{
    fit_topics, tokenize, Classifier, ContentConfig, ContentLabel, Lexicon, SentimentClass, DEFAULT_EVENT_TAGS,
    DEFAULT_STRONG_VERBS,
};
use crate::error::{Error, ErrorKind, Result};
use crate::geo::{build_trajectory, Fix, GeoPoint};
use crate::ingest::{
    build_peer_graph, parse_posts, select_users_counted, LineError, PeerGraph, SelectionConfig, SelectionCounts,
    TimedPost,
};
use crate::meanvec::{group_mean_vector, user_mean_vector, vector_feature, MeanVector};
use crate::risk::{load_polygons, load_surface, rbq_summary, risk_at, RbqRecord, RiskScheme};
use crate::stats::{
    build_feature_table, labels_by_user, regress_features, render_report, PeerAggregation, UserFeatures,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const UNITS: &str = "miles-mph";

pub const INGESTED_POSTS: &str = "ingested_posts.jsonl";
pub const SELECTION: &str = "selection.json";
pub const PEER_GRAPH: &str = "peer_graph.json";
pub const VECTORS: &str = "vectors.geojson";
pub const GROUP_VECTOR: &str = "group_vector.geojson";
pub const RBQ: &str = "rbq.csv";
pub const RBQ_SUMMARY: &str = "rbq_summary.json";
pub const LABELS: &str = "labels.csv";
pub const TOPICS: &str = "topics.txt";
pub const USERS: &str = "users.csv";
pub const FEATURES_REPORT: &str = "features_report.json";
pub const REGRESSION_JSON: &str = "regression.json";
pub const REGRESSION_TXT: &str = "regression.txt";
pub const MANIFEST: &str = "run_manifest.json";
pub const ERROR_REPORT: &str = "error_report.json";

/// Terms listed per topic in `topics.txt`.
const TOPIC_DUMP_TERMS: usize = 50;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_units() -> String {
    UNITS.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub posts: PathBuf,
    pub evac: PathBuf,
    pub flood: PathBuf,
    /// official-account posts, one document per line
    pub official: PathBuf,
    /// valence lexicon; the bundled one when absent
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub keywords: Vec<String>,
    pub min_distinct_locations: usize,
    /// GeoJSON polygons the users' first geocoded post must fall in
    pub study_area: Option<PathBuf>,
    pub time_window: Option<[DateTime<Utc>; 2]>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        let d = SelectionConfig::default();
        SelectionSection {
            keywords: d.keywords,
            min_distinct_locations: d.min_distinct_locations,
            study_area: None,
            time_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub sentiment: f64,
    pub topic: f64,
    pub alpha: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            sentiment: 0.66,
            topic: 0.66,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentSection {
    pub event_tags: Vec<String>,
    pub strong_verbs: Vec<String>,
    pub topics_k: usize,
}

impl Default for ContentSection {
    fn default() -> Self {
        ContentSection {
            event_tags: DEFAULT_EVENT_TAGS.iter().map(|s| s.to_string()).collect(),
            strong_verbs: DEFAULT_STRONG_VERBS.iter().map(|s| s.to_string()).collect(),
            topics_k: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// required by topic fitting
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_units")]
    pub units: String,
    #[serde(default)]
    pub risk_scheme: RiskScheme,
    #[serde(default)]
    pub peer_aggregation: PeerAggregation,
    pub paths: Paths,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub content: ContentSection,
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let p = &mut cfg.paths;
        for path in [&mut p.posts, &mut p.evac, &mut p.flood, &mut p.official, &mut p.out] {
            *path = base.join(&*path);
        }
        if let Some(l) = &mut p.lexicon {
            *l = base.join(&*l);
        }
        if let Some(s) = &mut cfg.selection.study_area {
            *s = base.join(&*s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        PipelineConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.units != UNITS {
            return Err(Error::Config(format!(
                "units {:?} is not supported (expected {UNITS:?})",
                self.units
            )));
        }
        let t = &self.thresholds;
        for (name, v) in [("sentiment", t.sentiment), ("topic", t.topic), ("alpha", t.alpha)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!(
                    "threshold {name} = {v} must lie strictly between 0 and 1"
                )));
            }
        }
        if self.content.topics_k == 0 {
            return Err(Error::Config("topics_k must be at least 1".into()));
        }
        if self.selection.min_distinct_locations < 1 {
            return Err(Error::Config("min_distinct_locations must be at least 1".into()));
        }
        if let Some([start, end]) = self.selection.time_window {
            if start > end {
                return Err(Error::Config("time_window start is after its end".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with all file paths removed; input
    /// contents are hashed separately in the manifest.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("paths");
            if let Some(Value::Object(sel)) = map.get_mut("selection") {
                sel.remove("study_area");
            }
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn selection_config(&self) -> Result<SelectionConfig> {
        let s = &self.selection;
        let study_area = s.study_area.as_deref().map(load_polygons).transpose()?;
        let cfg = SelectionConfig {
            keywords: s.keywords.iter().map(|k| k.to_lowercase()).collect(),
            min_distinct_locations: s.min_distinct_locations,
            study_area,
            time_window: s.time_window.map(|[a, b]| (a, b)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn content_config(&self) -> ContentConfig {
        ContentConfig {
            event_tags: self.content.event_tags.clone(),
            strong_verbs: self.content.strong_verbs.clone(),
            sentiment_threshold: self.thresholds.sentiment,
            topic_threshold: self.thresholds.topic,
            topics_k: self.content.topics_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Vectors,
    Risk,
    Classify,
    Features,
    Regress,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Vectors,
        Stage::Risk,
        Stage::Classify,
        Stage::Features,
        Stage::Regress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Vectors => "vectors",
            Stage::Risk => "risk",
            Stage::Classify => "classify",
            Stage::Features => "features",
            Stage::Regress => "regress",
        }
    }

    /// Runs this stage against `dir`, reading upstream artifacts from it.
    pub fn run(self, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
        match self {
            Stage::Ingest => ingest_stage(cfg, dir),
            Stage::Vectors => vectors_stage(dir),
            Stage::Risk => risk_stage(cfg, dir),
            Stage::Classify => classify_stage(cfg, dir),
            Stage::Features => features_stage(cfg, dir),
            Stage::Regress => regress_stage(cfg, dir),
        }
    }
}

fn require(dir: &Path, name: &str, stage: &'static str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { path, stage })
    }
}

fn artifact_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Artifact {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Writes via a temporary file in the same directory and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(format!("creating temporary file in {}", dir.display()), e))?;
    tmp.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", target.display()), e))?;
    tmp.persist(&target)
        .map_err(|e| Error::io(format!("renaming into {}", target.display()), e.error))?;
    Ok(())
}

fn pretty_json(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| artifact_err(path, e))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Config(format!("serializing csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("serializing csv: {e}")))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| artifact_err(path, e))
}

fn read_posts_file(path: &Path) -> Result<(Vec<TimedPost>, Vec<LineError>)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let report = parse_posts(BufReader::new(file))?;
    Ok((report.posts, report.errors))
}

/// `selection.json`: who was selected and how many users each filter kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub posts_parsed: usize,
    pub parse_errors: Vec<LineError>,
    pub counts: SelectionCounts,
    pub users: BTreeSet<String>,
}

fn ingest_stage(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let selection = cfg.selection_config()?;
    let (posts, parse_errors) = read_posts_file(&cfg.paths.posts)?;
    let (users, counts) = select_users_counted(&posts, &selection);
    if users.is_empty() {
        return Err(Error::NoUsersSelected);
    }
    let graph = build_peer_graph(&posts, &users);
    let keep: BTreeSet<&str> = users
        .iter()
        .map(String::as_str)
        .chain(users.iter().flat_map(|u| graph.peers(u).map(String::as_str)))
        .collect();
    let kept: String = posts
        .iter()
        .filter(|p| keep.contains(p.user_id.as_str()))
        .map(|p| p.to_json_line() + "\n")
        .collect();
    let artifact = SelectionArtifact {
        posts_parsed: posts.len(),
        parse_errors,
        counts,
        users,
    };
    write_atomic(dir, INGESTED_POSTS, kept.as_bytes())?;
    write_atomic(dir, PEER_GRAPH, &pretty_json(&graph))?;
    write_atomic(dir, SELECTION, &pretty_json(&artifact))
}

fn ingested(dir: &Path) -> Result<(SelectionArtifact, Vec<TimedPost>)> {
    let selection: SelectionArtifact = read_json(&require(dir, SELECTION, "ingest")?)?;
    let path = require(dir, INGESTED_POSTS, "ingest")?;
    let (posts, errors) = read_posts_file(&path)?;
    if let Some(e) = errors.first() {
        return Err(artifact_err(
            &path,
            format!("line {}: {} (rerun stage `ingest`)", e.line, e.message),
        ));
    }
    Ok((selection, posts))
}

fn vectors_stage(dir: &Path) -> Result<()> {
    let (selection, posts) = ingested(dir)?;
    let mut fixes: BTreeMap<&str, Vec<Fix>> = BTreeMap::new();
    for post in &posts {
        if let Some(location) = post.location {
            fixes.entry(post.user_id.as_str()).or_default().push(Fix {
                timestamp: post.timestamp,
                location,
            });
        }
    }
    let mut features = Vec::new();
    let mut vectors = Vec::new();
    for user in &selection.users {
        let user_fixes = fixes.get(user.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let (mv, distance, speed, segments) = match build_trajectory(user, user_fixes) {
            Ok(traj) => (
                user_mean_vector(&traj)?,
                traj.total_distance,
                traj.average_speed,
                traj.segments.len(),
            ),
            Err(Error::InsufficientData { .. }) => {
                let first = user_fixes
                    .iter()
                    .min_by_key(|f| f.timestamp)
                    .ok_or_else(|| Error::InsufficientData {
                        user: user.clone(),
                        reason: "no geocoded posts".into(),
                    })?;
                (MeanVector::stationary(first.location), 0.0, 0.0, 0)
            }
            Err(e) => return Err(e),
        };
        let mut feature = vector_feature(user, &mv);
        let props = feature["properties"].as_object_mut().expect("feature has properties");
        props.insert("total_distance_mi".into(), json!(distance));
        props.insert("average_speed_mph".into(), json!(speed));
        props.insert("duration_h".into(), json!(mv.duration));
        props.insert("segments".into(), json!(segments));
        features.push(feature);
        vectors.push(mv);
    }
    let group = group_mean_vector(&vectors)?;
    let group_feature = json!({
        "type": "FeatureCollection",
        "features": [{
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[group.origin.lon(), group.origin.lat()], [group.endpoint.lon(), group.endpoint.lat()]],
            },
            "properties": { "members": group.members, "magnitude_mph": group.magnitude, "azimuth_deg": group.azimuth },
        }],
    });
    write_atomic(
        dir,
        VECTORS,
        &pretty_json(&json!({ "type": "FeatureCollection", "features": features })),
    )?;
    write_atomic(dir, GROUP_VECTOR, &pretty_json(&group_feature))
}

/// Per-user quantities read back from `vectors.geojson`.
struct VectorRow {
    user: String,
    origin: GeoPoint,
    endpoint: GeoPoint,
    distance: f64,
    speed: f64,
}

fn read_vectors(path: &Path) -> Result<Vec<VectorRow>> {
    let doc: Value = read_json(path)?;
    let bad = |i: usize, what: &str| artifact_err(path, format!("feature {i}: {what}"));
    let features = doc["features"]
        .as_array()
        .ok_or_else(|| artifact_err(path, "no features array"))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let point = |k: usize| -> Result<GeoPoint> {
                let c = &f["geometry"]["coordinates"][k];
                match (c[0].as_f64(), c[1].as_f64()) {
                    (Some(lon), Some(lat)) => GeoPoint::new(lat, lon),
                    _ => Err(bad(i, "malformed coordinates")),
                }
            };
            let p = &f["properties"];
            Ok(VectorRow {
                user: p["user"].as_str().ok_or_else(|| bad(i, "missing user"))?.to_string(),
                origin: point(0)?,
                endpoint: point(1)?,
                distance: p["total_distance_mi"]
                    .as_f64()
                    .ok_or_else(|| bad(i, "missing total_distance_mi"))?,
                speed: p["average_speed_mph"]
                    .as_f64()
                    .ok_or_else(|| bad(i, "missing average_speed_mph"))?,
            })
        })
        .collect()
}

/// RBQ is reported to six decimals; negative zero prints as zero.
fn round_rbq(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn risk_stage(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let vectors = read_vectors(&require(dir, VECTORS, "vectors")?)?;
    let surface = load_surface(&cfg.paths.evac, &cfg.paths.flood, cfg.risk_scheme)?;
    let records: Vec<RbqRecord> = vectors
        .iter()
        .map(|v| {
            let mut r = RbqRecord::new(
                v.user.clone(),
                risk_at(&surface, v.origin),
                risk_at(&surface, v.endpoint),
                v.distance,
                v.speed,
            );
            r.rbq = round_rbq(r.rbq);
            r
        })
        .collect();
    let summary = rbq_summary(&records)?;
    write_atomic(dir, RBQ, &csv_bytes(&records)?)?;
    write_atomic(dir, RBQ_SUMMARY, &pretty_json(&summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub post_id: String,
    pub user_id: String,
    pub actional: bool,
    pub informational: bool,
    pub sentiment_class: SentimentClass,
}

fn classify_stage(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let (_, posts) = ingested(dir)?;
    let seed = cfg
        .seed
        .ok_or_else(|| Error::Config("a seed is required for topic fitting (set `seed` or pass --seed)".into()))?;
    let lexicon = match &cfg.paths.lexicon {
        Some(path) => Lexicon::load(path)?,
        None => Lexicon::bundled(),
    };
    let official = std::fs::read_to_string(&cfg.paths.official)
        .map_err(|e| Error::io(format!("reading {}", cfg.paths.official.display()), e))?;
    let docs: Vec<_> = official
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(tokenize)
        .collect();
    let content = cfg.content_config();
    let model = fit_topics(&docs, content.topics_k, seed)?;
    let dump = model.dump(TOPIC_DUMP_TERMS);
    let classifier = Classifier::new(lexicon, model, content);
    let rows: Vec<LabelRow> = posts
        .iter()
        .map(|p| {
            let l = classifier.label_text(&p.text);
            LabelRow {
                post_id: p.post_id.clone(),
                user_id: p.user_id.clone(),
                actional: l.actional,
                informational: l.informational,
                sentiment_class: l.sentiment_class,
            }
        })
        .collect();
    write_atomic(dir, LABELS, &csv_bytes(&rows)?)?;
    write_atomic(dir, TOPICS, dump.as_bytes())
}

fn features_stage(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let selection: SelectionArtifact = read_json(&require(dir, SELECTION, "ingest")?)?;
    let graph: PeerGraph = read_json(&require(dir, PEER_GRAPH, "ingest")?)?;
    let records: Vec<RbqRecord> = read_csv(&require(dir, RBQ, "risk")?)?;
    let labels: Vec<LabelRow> = read_csv(&require(dir, LABELS, "classify")?)?;
    let by_user: HashMap<String, Vec<ContentLabel>> = labels_by_user(labels.iter().map(|l| {
        (
            l.user_id.as_str(),
            ContentLabel {
                actional: l.actional,
                informational: l.informational,
                sentiment_class: l.sentiment_class,
            },
        )
    }));
    let (rows, report) = build_feature_table(&selection.users, &records, &by_user, &graph, cfg.peer_aggregation);
    write_atomic(dir, USERS, &csv_bytes(&rows)?)?;
    write_atomic(dir, FEATURES_REPORT, &pretty_json(&report))
}

fn regress_stage(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let rows: Vec<UserFeatures> = read_csv(&require(dir, USERS, "features")?)?;
    let report = regress_features(&rows, cfg.thresholds.alpha)?;
    write_atomic(dir, REGRESSION_JSON, &pretty_json(&report))?;
    write_atomic(dir, REGRESSION_TXT, render_report(&report).as_bytes())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub posts_parsed: usize,
    pub parse_errors: usize,
    pub users_total: usize,
    pub after_locations: usize,
    pub after_keywords: usize,
    pub after_study_area: usize,
    pub after_time_window: usize,
    pub selected_users: usize,
    pub peer_edges: usize,
    pub ingested_posts: usize,
    pub vector_features: usize,
    pub stationary_users: usize,
    pub rbq_records: usize,
    pub labelled_posts: usize,
    pub feature_rows: usize,
    pub regression_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub units: String,
    pub risk_scheme: RiskScheme,
    pub seed: Option<u64>,
    pub config_hash: String,
    /// SHA-256 of each input, keyed by role
    pub inputs: BTreeMap<String, String>,
    pub counts: ManifestCounts,
    /// SHA-256 of each output file
    pub outputs: BTreeMap<String, String>,
}

fn build_manifest(cfg: &PipelineConfig, dir: &Path) -> Result<RunManifest> {
    let mut inputs = BTreeMap::new();
    for (role, path) in [
        ("posts", &cfg.paths.posts),
        ("evac", &cfg.paths.evac),
        ("flood", &cfg.paths.flood),
        ("official", &cfg.paths.official),
    ] {
        inputs.insert(role.to_string(), sha256_file(path)?);
    }
    let lexicon = match &cfg.paths.lexicon {
        Some(path) => sha256_file(path)?,
        None => format!(
            "bundled:{}",
            hex::encode(Sha256::digest(Lexicon::bundled_source().as_bytes()))
        ),
    };
    inputs.insert("lexicon".into(), lexicon);
    if let Some(area) = &cfg.selection.study_area {
        inputs.insert("study_area".into(), sha256_file(area)?);
    }

    let selection: SelectionArtifact = read_json(&dir.join(SELECTION))?;
    let graph: PeerGraph = read_json(&dir.join(PEER_GRAPH))?;
    let (ingested_posts, _) = read_posts_file(&dir.join(INGESTED_POSTS))?;
    let vectors: Value = read_json(&dir.join(VECTORS))?;
    let features = vectors["features"].as_array().map(Vec::as_slice).unwrap_or(&[]);
    let stationary = features
        .iter()
        .filter(|f| f["properties"]["segments"] == json!(0))
        .count();
    let records: Vec<RbqRecord> = read_csv(&dir.join(RBQ))?;
    let labels: Vec<LabelRow> = read_csv(&dir.join(LABELS))?;
    let rows: Vec<UserFeatures> = read_csv(&dir.join(USERS))?;
    let regression: Value = read_json(&dir.join(REGRESSION_JSON))?;
    let c = &selection.counts;
    let counts = ManifestCounts {
        posts_parsed: selection.posts_parsed,
        parse_errors: selection.parse_errors.len(),
        users_total: c.users_total,
        after_locations: c.after_locations,
        after_keywords: c.after_keywords,
        after_study_area: c.after_study_area,
        after_time_window: c.after_time_window,
        selected_users: selection.users.len(),
        peer_edges: graph.edge_count(),
        ingested_posts: ingested_posts.len(),
        vector_features: features.len(),
        stationary_users: stationary,
        rbq_records: records.len(),
        labelled_posts: labels.len(),
        feature_rows: rows.len(),
        regression_n: regression["n"].as_u64().unwrap_or(0) as usize,
    };

    let mut outputs = BTreeMap::new();
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST && !n.starts_with('.'))
        .collect();
    names.sort();
    for name in names {
        outputs.insert(name.clone(), sha256_file(&dir.join(&name))?);
    }
    Ok(RunManifest {
        schema_version: SCHEMA_VERSION,
        units: cfg.units.clone(),
        risk_scheme: cfg.risk_scheme,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        inputs,
        counts,
        outputs,
    })
}

/// Stage that failed during a run, alongside the error.
#[derive(Debug)]
pub struct RunFailure {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for RunFailure {}

fn write_error_report(out: &Path, stage: &str, error: &Error) {
    let kind = match error.kind() {
        ErrorKind::Validation => "validation",
        ErrorKind::Runtime => "runtime",
    };
    let report = json!({ "stage": stage, "kind": kind, "message": error.to_string() });
    // best effort: the original error is what the caller needs
    let _ = write_atomic(out, ERROR_REPORT, &pretty_json(&report));
}

/// Runs every stage and moves the finished bundle into `cfg.paths.out`.
///
/// On failure nothing from this run is left behind except
/// `error_report.json` in the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<RunManifest, RunFailure> {
    let out = &cfg.paths.out;
    let fail = |stage: &'static str, error: Error| {
        write_error_report(out, stage, &error);
        RunFailure { stage, error }
    };
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent)
        .map_err(|e| fail("setup", Error::io(format!("creating {}", parent.display()), e)))?;
    let staging = tempfile::Builder::new()
        .prefix(".riskvec-staging-")
        .tempdir_in(&parent)
        .map_err(|e| {
            fail(
                "setup",
                Error::io(format!("creating staging directory in {}", parent.display()), e),
            )
        })?;

    for stage in Stage::ALL {
        stage.run(cfg, staging.path()).map_err(|e| fail(stage.name(), e))?;
    }
    let manifest = build_manifest(cfg, staging.path()).map_err(|e| fail("manifest", e))?;
    write_atomic(staging.path(), MANIFEST, &pretty_json(&manifest)).map_err(|e| fail("manifest", e))?;

    let publish = || -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
        let mut names: Vec<_> = std::fs::read_dir(staging.path())
            .map_err(|e| Error::io("listing staging directory", e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name())
            .collect();
        names.sort();
        // the manifest goes last so its presence marks a complete bundle
        names.retain(|n| n != MANIFEST);
        names.push(MANIFEST.into());
        let _ = std::fs::remove_file(out.join(MANIFEST));
        for name in names {
            std::fs::rename(staging.path().join(&name), out.join(&name))
                .map_err(|e| Error::io(format!("moving {} into {}", name.to_string_lossy(), out.display()), e))?;
        }
        let _ = std::fs::remove_file(out.join(ERROR_REPORT));
        Ok(())
    };
    publish().map_err(|e| fail("publish", e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize_scenario, write_scenario, ScenarioSpec};

    fn scenario_config(dir: &Path) -> PipelineConfig {
        let sc = synthesize_scenario(&ScenarioSpec::default(), 5).unwrap();
        write_scenario(&sc, dir).unwrap();
        PipelineConfig::load(&dir.join("pipeline.toml")).unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let base = Path::new("/data");
        let text = "seed = 1\n[paths]\nposts = \"p.jsonl\"\nevac = \"e.geojson\"\nflood = \"f.geojson\"\nofficial = \"o.txt\"\nout = \"out\"\n";
        let cfg = PipelineConfig::parse(text, base).unwrap();
        assert_eq!(cfg.paths.posts, Path::new("/data/p.jsonl"));
        assert_eq!(cfg.thresholds, Thresholds::default());
        assert_eq!(cfg.risk_scheme, RiskScheme::Pilot);
        assert_eq!(cfg.selection.keywords.len(), 5);

        let bad = format!("{text}[thresholds]\nalpha = 1.0\n");
        assert!(matches!(PipelineConfig::parse(&bad, base), Err(Error::Config(_))));
        let bad = format!("units = \"km-kmh\"\n{text}");
        assert!(PipelineConfig::parse(&bad, base).is_err());
        let bad = format!("{text}[selection]\nnope = 1\n");
        assert!(PipelineConfig::parse(&bad, base).is_err());
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let text = "seed = 1\n[paths]\nposts = \"p\"\nevac = \"e\"\nflood = \"f\"\nofficial = \"o\"\nout = \"out\"\n";
        let a = PipelineConfig::parse(text, Path::new("/a")).unwrap();
        let mut b = PipelineConfig::parse(text, Path::new("/b")).unwrap();
        assert_eq!(a.hash(), b.hash());
        b.seed = Some(2);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn stages_require_upstream_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = scenario_config(tmp.path());
        let work = tmp.path().join("work");
        std::fs::create_dir_all(&work).unwrap();
        let err = Stage::Vectors.run(&cfg, &work).unwrap_err();
        assert!(err.to_string().contains("run stage `ingest` first"), "{err}");
        Stage::Ingest.run(&cfg, &work).unwrap();
        Stage::Vectors.run(&cfg, &work).unwrap();
        assert!(work.join(VECTORS).is_file());
        assert!(!work.join(RBQ).exists());
        let err = Stage::Features.run(&cfg, &work).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { stage: "risk", .. }));
    }

    #[test]
    fn run_is_consistent_and_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = scenario_config(tmp.path());
        let m = run_pipeline(&cfg).unwrap();
        assert_eq!(m.counts.selected_users, 50);
        assert_eq!(m.counts.vector_features, 50);
        assert_eq!(m.counts.feature_rows, 50);
        let first = std::fs::read(cfg.paths.out.join(MANIFEST)).unwrap();
        cfg.paths.out = tmp.path().join("again");
        run_pipeline(&cfg).unwrap();
        assert_eq!(first, std::fs::read(cfg.paths.out.join(MANIFEST)).unwrap());
        let leftovers = std::fs::read_dir(tmp.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with(".riskvec")
            })
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn empty_posts_fail_cleanly() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = scenario_config(tmp.path());
        std::fs::write(&cfg.paths.posts, "").unwrap();
        cfg.paths.out = tmp.path().join("empty_out");
        let failure = run_pipeline(&cfg).unwrap_err();
        assert_eq!(failure.stage, "ingest");
        assert!(failure.error.to_string().contains("no users selected"));
        let names: Vec<_> = std::fs::read_dir(&cfg.paths.out)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from(ERROR_REPORT)]);
    }
}
