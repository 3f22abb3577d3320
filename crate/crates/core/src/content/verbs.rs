use std::collections::HashSet;

use super::Token;

/// Lemmas whose every inflection marks a post as actional.
pub const DEFAULT_STRONG_VERBS: &[&str] = &["do", "go", "say", "watch", "want", "need"];

const IRREGULAR: &[(&str, &[&str])] = &[
    ("do", &["do", "does", "did", "doing", "done"]),
    ("go", &["go", "goes", "went", "going", "gone"]),
    ("say", &["say", "says", "said", "saying"]),
    ("have", &["have", "has", "had", "having"]),
    ("make", &["make", "makes", "made", "making"]),
    ("get", &["get", "gets", "got", "getting", "gotten"]),
    ("take", &["take", "takes", "took", "taking", "taken"]),
    ("leave", &["leave", "leaves", "left", "leaving"]),
    ("run", &["run", "runs", "ran", "running"]),
    ("come", &["come", "comes", "came", "coming"]),
    ("drive", &["drive", "drives", "drove", "driving", "driven"]),
    ("stay", &["stay", "stays", "stayed", "staying"]),
];

/// Inflected forms of a lemma: the irregular table when it has an entry,
/// otherwise regular English -s/-ed/-ing morphology.
pub fn inflections(lemma: &str) -> Vec<String> {
    let lemma = lemma.to_lowercase();
    if let Some((_, forms)) = IRREGULAR.iter().find(|(l, _)| *l == lemma) {
        return forms.iter().map(|f| f.to_string()).collect();
    }
    let consonant_y =
        lemma.ends_with('y') && !lemma.ends_with("ay") && !lemma.ends_with("ey") && !lemma.ends_with("oy");
    let stem = &lemma[..lemma.len().saturating_sub(1)];
    let third = if ["s", "x", "z", "ch", "sh"].iter().any(|s| lemma.ends_with(s)) {
        format!("{lemma}es")
    } else if consonant_y {
        format!("{stem}ies")
    } else {
        format!("{lemma}s")
    };
    let past = if lemma.ends_with('e') {
        format!("{lemma}d")
    } else if consonant_y {
        format!("{stem}ied")
    } else {
        format!("{lemma}ed")
    };
    let gerund = if lemma.ends_with('e') && !lemma.ends_with("ee") {
        format!("{stem}ing")
    } else {
        format!("{lemma}ing")
    };
    vec![lemma, third, past, gerund]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbSet {
    forms: HashSet<String>,
}

impl VerbSet {
    pub fn new<S: AsRef<str>>(lemmas: &[S]) -> Self {
        VerbSet {
            forms: lemmas.iter().flat_map(|l| inflections(l.as_ref())).collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.forms.contains(word)
    }
}

impl Default for VerbSet {
    fn default() -> Self {
        VerbSet::new(DEFAULT_STRONG_VERBS)
    }
}

pub fn classify_actional_verbs(tokens: &[Token], verbs: &VerbSet) -> bool {
    tokens.iter().any(|t| verbs.contains(&t.text))
}
