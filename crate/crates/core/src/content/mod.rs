//! Post content labelling.
//!
//! A post is *actional* when any of three tests fires: it uses a strong verb,
//! it is an informational post (neutral sentiment plus an event hashtag), or
//! its summed similarity to the official-account topics exceeds a threshold.
//! Sentiment comes from a valence lexicon and is thresholded into negative,
//! neutral, positive or unclassified.

mod sentiment;
mod tokenize;
mod topics;
mod verbs;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use sentiment::{sentiment_class, sentiment_scores, Lexicon, SentimentClass, SentimentScores};
pub use tokenize::{is_stopword, tokenize, Token, STOPWORDS};
pub use topics::{fit_topics, topic_likelihood, TopicModel};
pub use verbs::{classify_actional_verbs, inflections, VerbSet, DEFAULT_STRONG_VERBS};

use crate::error::{Error, Result};
use crate::ingest::TimedPost;

pub const DEFAULT_EVENT_TAGS: &[&str] = &["sandy", "storm", "hurricane"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentConfig {
    pub event_tags: Vec<String>,
    pub strong_verbs: Vec<String>,
    pub sentiment_threshold: f64,
    pub topic_threshold: f64,
    pub topics_k: usize,
}

impl Default for ContentConfig {
    fn default() -> Self {
        ContentConfig {
            event_tags: DEFAULT_EVENT_TAGS.iter().map(|s| s.to_string()).collect(),
            strong_verbs: DEFAULT_STRONG_VERBS.iter().map(|s| s.to_string()).collect(),
            sentiment_threshold: 0.66,
            topic_threshold: 0.66,
            topics_k: 4,
        }
    }
}

/// True when the post is neutral and carries one of the event hashtags.
pub fn classify_informational(tokens: &[Token], class: SentimentClass, event_tags: &BTreeSet<String>) -> bool {
    class == SentimentClass::Neutral && tokens.iter().any(|t| t.hashtag && event_tags.contains(&t.text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentLabel {
    pub actional: bool,
    pub informational: bool,
    pub sentiment_class: SentimentClass,
}

/// Lexicon, topic model and rule configuration bundled for labelling.
#[derive(Debug, Clone)]
pub struct Classifier {
    lexicon: Lexicon,
    model: TopicModel,
    verbs: VerbSet,
    event_tags: BTreeSet<String>,
    cfg: ContentConfig,
}

impl Classifier {
    pub fn new(lexicon: Lexicon, model: TopicModel, cfg: ContentConfig) -> Self {
        Classifier {
            verbs: VerbSet::new(&cfg.strong_verbs),
            event_tags: cfg.event_tags.iter().map(|t| t.to_lowercase()).collect(),
            lexicon,
            model,
            cfg,
        }
    }

    pub fn model(&self) -> &TopicModel {
        &self.model
    }

    pub fn scores(&self, text: &str) -> SentimentScores {
        sentiment_scores(&tokenize(text), &self.lexicon)
    }

    pub fn label_text(&self, text: &str) -> ContentLabel {
        let tokens = tokenize(text);
        let class = sentiment_class(&sentiment_scores(&tokens, &self.lexicon), self.cfg.sentiment_threshold);
        let informational = classify_informational(&tokens, class, &self.event_tags);
        let actional = classify_actional_verbs(&tokens, &self.verbs)
            || informational
            || topic_likelihood(&self.model, &tokens) > self.cfg.topic_threshold;
        ContentLabel {
            actional,
            informational,
            sentiment_class: class,
        }
    }
}

pub fn label_post(post: &TimedPost, model: &TopicModel, lexicon: &Lexicon, cfg: &ContentConfig) -> ContentLabel {
    Classifier::new(lexicon.clone(), model.clone(), cfg.clone()).label_text(&post.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentRatios {
    pub informational: f64,
    pub actional: f64,
    pub emotional: f64,
}

/// Share of a user's posts carrying each label.
pub fn user_content_ratios(labels: &[ContentLabel]) -> Result<ContentRatios> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("user_content_ratios needs at least one post"));
    }
    let n = labels.len() as f64;
    let share = |f: fn(&ContentLabel) -> bool| labels.iter().filter(|l| f(l)).count() as f64 / n;
    Ok(ContentRatios {
        informational: share(|l| l.informational),
        actional: share(|l| l.actional),
        emotional: share(|l| l.sentiment_class.is_emotional()),
    })
}
