use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    /// lowercase
    pub text: String,
    /// came from a `#tag`
    pub hashtag: bool,
}

impl Token {
    pub fn word(text: &str) -> Self {
        Token {
            text: text.to_string(),
            hashtag: false,
        }
    }

    pub fn tag(text: &str) -> Self {
        Token {
            text: text.to_string(),
            hashtag: true,
        }
    }
}

/// Lowercase word tokens. URLs and `@mentions` are dropped; a `#tag` yields
/// its tag word flagged as a hashtag.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        if lower.starts_with("http://")
            || lower.starts_with("https://")
            || lower.starts_with("www.")
            || lower.starts_with('@')
        {
            continue;
        }
        let mut rest = lower.as_str();
        if let Some(tag) = rest.strip_prefix('#') {
            let end = tag
                .char_indices()
                .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
                .map_or(tag.len(), |(i, _)| i);
            if end > 0 {
                tokens.push(Token::tag(&tag[..end]));
            }
            rest = &tag[end..];
        }
        tokens.extend(
            rest.split(|c: char| !c.is_alphanumeric())
                .filter(|s| !s.is_empty())
                .map(Token::word),
        );
    }
    tokens
}

/// Function words ignored by sentiment averaging and topic modelling.
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "rt",
    "s",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "t",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn normalizes_case_and_punctuation() {
        assert_eq!(texts(&tokenize("Going home NOW!!")), ["going", "home", "now"]);
    }

    #[test]
    fn hashtags_are_flagged() {
        let t = tokenize("#Sandy is here");
        assert_eq!(texts(&t), ["sandy", "is", "here"]);
        assert!(t[0].hashtag && !t[1].hashtag);
        let t = tokenize("#NYC_Storm! wow");
        assert_eq!(texts(&t), ["nyc_storm", "wow"]);
    }

    #[test]
    fn urls_and_mentions_dropped() {
        assert_eq!(texts(&tokenize("see https://x.y @bob")), ["see"]);
        assert_eq!(texts(&tokenize("www.fema.gov is up")), ["is", "up"]);
    }

    #[test]
    fn unicode_words_survive() {
        assert_eq!(texts(&tokenize("Café—ÜBER")), ["café", "über"]);
    }

    #[test]
    fn stopword_table_is_sorted() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
        assert!(is_stopword("the") && !is_stopword("storm"));
    }
}
