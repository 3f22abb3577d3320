use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{is_stopword, Token};
use crate::error::{Error, Result};

const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.tsv");

/// Bin centers of the five sentiment classes.
const CENTERS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// Token valences in [-2, 2].
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    valence: HashMap<String, f64>,
}

impl Lexicon {
    /// Parses `token<TAB>valence` lines; `#` starts a comment line.
    pub fn parse(tsv: &str) -> Result<Self> {
        let mut valence = HashMap::new();
        for (i, line) in tsv.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Lexicon { line: i + 1, reason };
            let (token, value) = line
                .split_once('\t')
                .ok_or_else(|| err("expected token<TAB>valence".into()))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("bad valence {value:?}")))?;
            if !(-2.0..=2.0).contains(&value) {
                return Err(err(format!("valence {value} outside [-2, 2]")));
            }
            valence.insert(token.trim().to_lowercase(), value);
        }
        Ok(Lexicon { valence })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading lexicon {}", path.display()), e))?;
        Lexicon::parse(&text)
    }

    /// The lexicon shipped in `data/lexicon.tsv`.
    pub fn bundled() -> Self {
        Lexicon::parse(BUNDLED_LEXICON).expect("bundled lexicon parses")
    }

    pub fn bundled_source() -> &'static str {
        BUNDLED_LEXICON
    }

    pub fn valence(&self, token: &str) -> f64 {
        self.valence.get(token).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScores {
    pub very_negative: f64,
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
    pub very_positive: f64,
}

impl SentimentScores {
    pub const NEUTRAL: SentimentScores = SentimentScores {
        very_negative: 0.0,
        negative: 0.0,
        neutral: 1.0,
        positive: 0.0,
        very_positive: 0.0,
    };

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.very_negative,
            self.negative,
            self.neutral,
            self.positive,
            self.very_positive,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        SentimentScores {
            very_negative: a[0],
            negative: a[1],
            neutral: a[2],
            positive: a[3],
            very_positive: a[4],
        }
    }

    /// Index of the largest bin (first on ties).
    pub fn modal_bin(&self) -> usize {
        let a = self.as_array();
        (0..5).fold(0, |best, i| if a[i] > a[best] { i } else { best })
    }
}

/// Mean valence of the non-stopword tokens, spread over the five bins with a
/// triangular kernel of half-width one. Words missing from the lexicon count
/// as valence 0.
pub fn sentiment_scores(tokens: &[Token], lexicon: &Lexicon) -> SentimentScores {
    let content: Vec<f64> = tokens
        .iter()
        .filter(|t| !is_stopword(&t.text))
        .map(|t| lexicon.valence(&t.text))
        .collect();
    if content.is_empty() {
        return SentimentScores::NEUTRAL;
    }
    let v = (content.iter().sum::<f64>() / content.len() as f64).clamp(-2.0, 2.0);
    let mut w = CENTERS.map(|c| (1.0 - (v - c).abs()).max(0.0));
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    SentimentScores::from_array(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentClass {
    Negative,
    Neutral,
    Positive,
    Unclassified,
}

impl SentimentClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SentimentClass::Negative => "negative",
            SentimentClass::Neutral => "neutral",
            SentimentClass::Positive => "positive",
            SentimentClass::Unclassified => "unclassified",
        }
    }

    pub fn is_emotional(&self) -> bool {
        matches!(self, SentimentClass::Negative | SentimentClass::Positive)
    }
}

impl std::str::FromStr for SentimentClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "negative" => Ok(SentimentClass::Negative),
            "neutral" => Ok(SentimentClass::Neutral),
            "positive" => Ok(SentimentClass::Positive),
            "unclassified" => Ok(SentimentClass::Unclassified),
            other => Err(format!("unknown sentiment class {other:?}")),
        }
    }
}

/// Merges the five scores into negative/neutral/positive and returns the
/// class strictly above `threshold`, if any.
pub fn sentiment_class(scores: &SentimentScores, threshold: f64) -> SentimentClass {
    let merged = [
        (SentimentClass::Negative, scores.very_negative + scores.negative),
        (SentimentClass::Neutral, scores.neutral),
        (SentimentClass::Positive, scores.positive + scores.very_positive),
    ];
    let above: Vec<_> = merged.iter().filter(|(_, s)| *s > threshold).collect();
    match above.as_slice() {
        [] => SentimentClass::Unclassified,
        [(class, _)] => *class,
        // only reachable with threshold < 0.5
        many => {
            let best = many.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<_> = many.iter().filter(|(_, s)| *s == best).collect();
            if winners.len() == 1 {
                winners[0].0
            } else {
                SentimentClass::Unclassified
            }
        }
    }
}
