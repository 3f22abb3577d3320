//! Post stream parsing, user selection and the peer interaction graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::content::tokenize;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::risk::Polygon;

#[derive(Debug, Clone, PartialEq)]
pub struct TimedPost {
    pub post_id: String,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub location: Option<GeoPoint>,
    pub text: String,
    /// lowercase, without the leading '#'
    pub hashtags: Vec<String>,
    /// without the leading '@'
    pub mentions: Vec<String>,
    pub reply_to: Option<String>,
}

/// One JSONL line as it appears on disk.
#[derive(Debug, Serialize, Deserialize)]
struct RawPost {
    id: Option<String>,
    user: Option<String>,
    ts: Option<String>,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    text: String,
    #[serde(default)]
    reply_to: Option<String>,
}

impl TimedPost {
    pub fn new(
        post_id: impl Into<String>,
        user_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        location: Option<GeoPoint>,
        text: impl Into<String>,
        reply_to: Option<String>,
    ) -> Self {
        let text = text.into();
        TimedPost {
            post_id: post_id.into(),
            user_id: user_id.into(),
            timestamp,
            location,
            hashtags: extract_hashtags(&text),
            mentions: extract_mentions(&text),
            text,
            reply_to,
        }
    }

    /// Serializes back to the input schema (one line, no newline).
    pub fn to_json_line(&self) -> String {
        let raw = RawPost {
            id: Some(self.post_id.clone()),
            user: Some(self.user_id.clone()),
            ts: Some(self.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
            lat: self.location.map(|p| p.lat()),
            lon: self.location.map(|p| p.lon()),
            text: self.text.clone(),
            reply_to: self.reply_to.clone(),
        };
        serde_json::to_string(&raw).expect("post serializes")
    }
}

/// Tag words introduced by '#', lowercased.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    leading_tokens(text, '#').map(|t| t.to_lowercase()).collect()
}

/// Handles introduced by '@'.
pub fn extract_mentions(text: &str) -> Vec<String> {
    leading_tokens(text, '@').map(str::to_string).collect()
}

fn leading_tokens(text: &str, marker: char) -> impl Iterator<Item = &str> {
    text.split_whitespace().filter_map(move |word| {
        let rest = word.strip_prefix(marker)?;
        let end = rest
            .char_indices()
            .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
            .map_or(rest.len(), |(i, _)| i);
        (end > 0).then(|| &rest[..end])
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    /// 1-based
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub posts: Vec<TimedPost>,
    pub errors: Vec<LineError>,
}

/// Parses a JSONL post stream. Malformed lines are collected in the report
/// with their line number; blank lines are skipped.
pub fn parse_posts<R: BufRead>(reader: R) -> Result<ParseReport> {
    let mut report = ParseReport::default();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading post line {}", idx + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(post) => {
                if seen_ids.insert(post.post_id.clone()) {
                    report.posts.push(post);
                } else {
                    report.errors.push(LineError {
                        line: idx + 1,
                        message: format!("duplicate post id {}", post.post_id),
                    });
                }
            }
            Err(message) => report.errors.push(LineError { line: idx + 1, message }),
        }
    }
    Ok(report)
}

fn parse_line(line: &str) -> std::result::Result<TimedPost, String> {
    let raw: RawPost = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let user = raw.user.filter(|u| !u.is_empty()).ok_or("record lacks user")?;
    let ts = raw.ts.ok_or("record lacks ts")?;
    let timestamp = DateTime::parse_from_rfc3339(&ts)
        .map_err(|e| format!("bad timestamp {ts:?}: {e}"))?
        .with_timezone(&Utc);
    let id = raw.id.filter(|i| !i.is_empty()).ok_or("record lacks id")?;
    let location = match (raw.lat, raw.lon) {
        (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon).map_err(|e| e.to_string())?),
        (None, None) => None,
        _ => return Err("lat and lon must both be present or both null".into()),
    };
    Ok(TimedPost::new(
        id,
        user,
        timestamp,
        location,
        raw.text,
        raw.reply_to.filter(|r| !r.is_empty()),
    ))
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    /// matched as whole lowercase tokens
    pub keywords: Vec<String>,
    pub min_distinct_locations: usize,
    /// the user's earliest geocoded post must fall inside one of these
    pub study_area: Option<Vec<Polygon>>,
    pub time_window: Option<(DateTime<Utc>, DateTime<Utc>)>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            keywords: ["sandy", "at", "go", "drive", "driving"].map(String::from).to_vec(),
            min_distinct_locations: 2,
            study_area: None,
            time_window: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_distinct_locations < 1 {
            return Err(Error::Config("min_distinct_locations must be at least 1".into()));
        }
        if let Some((start, end)) = self.time_window {
            if start > end {
                return Err(Error::Config("time_window start is after its end".into()));
            }
        }
        Ok(())
    }
}

/// Number of users remaining after each selection filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub users_total: usize,
    pub after_locations: usize,
    pub after_keywords: usize,
    pub after_study_area: usize,
    pub after_time_window: usize,
}

pub fn select_users(posts: &[TimedPost], cfg: &SelectionConfig) -> BTreeSet<String> {
    select_users_counted(posts, cfg).0
}

pub fn select_users_counted(posts: &[TimedPost], cfg: &SelectionConfig) -> (BTreeSet<String>, SelectionCounts) {
    let keywords: HashSet<String> = cfg.keywords.iter().map(|k| k.to_lowercase()).collect();
    let mut by_user: BTreeMap<&str, Vec<&TimedPost>> = BTreeMap::new();
    for post in posts {
        by_user.entry(&post.user_id).or_default().push(post);
    }
    let mut counts = SelectionCounts {
        users_total: by_user.len(),
        ..Default::default()
    };
    let mut selected = BTreeSet::new();
    for (user, posts) in by_user {
        let locations: HashSet<(i64, i64)> = posts
            .iter()
            .filter_map(|p| p.location)
            .map(|l| l.location_key())
            .collect();
        if locations.len() < cfg.min_distinct_locations {
            continue;
        }
        counts.after_locations += 1;

        let mentions_keyword = posts
            .iter()
            .any(|p| tokenize(&p.text).iter().any(|t| keywords.contains(&t.text)));
        if !mentions_keyword {
            continue;
        }
        counts.after_keywords += 1;

        if let Some(area) = &cfg.study_area {
            // earliest by timestamp, ties broken by input order
            let origin = posts
                .iter()
                .filter(|p| p.location.is_some())
                .min_by_key(|p| p.timestamp);
            let inside = origin
                .and_then(|p| p.location)
                .is_some_and(|l| area.iter().any(|poly| poly.contains(l.lon(), l.lat())));
            if !inside {
                continue;
            }
        }
        counts.after_study_area += 1;

        if let Some((start, end)) = cfg.time_window {
            if !posts.iter().all(|p| p.timestamp >= start && p.timestamp <= end) {
                continue;
            }
        }
        counts.after_time_window += 1;
        selected.insert(user.to_string());
    }
    (selected, counts)
}

/// Directed reply/mention graph among users.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerGraph {
    pub edges: BTreeMap<String, BTreeSet<String>>,
    /// targets that authored no post in the corpus
    pub external: BTreeSet<String>,
}

impl PeerGraph {
    pub fn peers(&self, user: &str) -> impl Iterator<Item = &String> {
        self.edges.get(user).into_iter().flatten()
    }

    pub fn out_degree(&self, user: &str) -> usize {
        self.edges.get(user).map_or(0, BTreeSet::len)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }
}

/// Edge u -> v when a post by selected user u mentions or replies to v.
pub fn build_peer_graph(posts: &[TimedPost], users: &BTreeSet<String>) -> PeerGraph {
    let authors: HashSet<&str> = posts.iter().map(|p| p.user_id.as_str()).collect();
    let mut graph = PeerGraph::default();
    for post in posts.iter().filter(|p| users.contains(&p.user_id)) {
        let targets = post.mentions.iter().chain(post.reply_to.iter());
        for target in targets.filter(|t| **t != post.user_id) {
            graph
                .edges
                .entry(post.user_id.clone())
                .or_default()
                .insert(target.clone());
            if !authors.contains(target.as_str()) {
                graph.external.insert(target.clone());
            }
        }
    }
    graph
}

/// Posts grouped by author, each list in input order.
pub fn posts_by_user(posts: &[TimedPost]) -> HashMap<&str, Vec<&TimedPost>> {
    let mut map: HashMap<&str, Vec<&TimedPost>> = HashMap::new();
    for p in posts {
        map.entry(p.user_id.as_str()).or_default().push(p);
    }
    map
}
