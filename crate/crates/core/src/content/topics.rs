//! Bag-of-words topics from official-account posts.
//!
//! Documents are TF-IDF weighted, L2 normalised and clustered with
//! spherical k-means (k-means++ seeding from a fixed seed). Each topic is
//! its cluster's mean TF-IDF vector rescaled to unit sum.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{is_stopword, Token};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
/// Topic pairs more similar than this are reported as degenerate.
const DEGENERATE_COSINE: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    /// term -> column, in lexical order
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    /// k non-negative vectors over the vocabulary, each summing to 1
    pub topics: Vec<Vec<f64>>,
    /// documents assigned to each topic
    pub sizes: Vec<usize>,
    /// some topics are near-identical
    pub degenerate: bool,
}

type Sparse = Vec<(usize, f64)>;

fn terms(tokens: &[Token]) -> impl Iterator<Item = &str> {
    tokens.iter().map(|t| t.text.as_str()).filter(|t| !is_stopword(t))
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn sparse_dot(a: &Sparse, dense: &[f64]) -> f64 {
    a.iter().map(|&(i, x)| x * dense[i]).sum()
}

impl TopicModel {
    /// Assembles a model from parts; topic vectors are rescaled to unit sum.
    pub fn from_parts(vocabulary: BTreeMap<String, usize>, idf: Vec<f64>, mut topics: Vec<Vec<f64>>) -> Result<Self> {
        let dims = vocabulary.len();
        if idf.len() != dims || topics.iter().any(|t| t.len() != dims) {
            return Err(Error::Config("topic model dimensions disagree with vocabulary".into()));
        }
        for t in &mut topics {
            if t.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::Config("topic weights must be finite and non-negative".into()));
            }
            let sum: f64 = t.iter().sum();
            if sum > 0.0 {
                t.iter_mut().for_each(|x| *x /= sum);
            }
        }
        let k = topics.len();
        let mut model = TopicModel {
            k,
            vocabulary,
            idf,
            sizes: vec![0; k],
            topics,
            degenerate: false,
        };
        model.degenerate = model.has_near_duplicates();
        Ok(model)
    }

    /// TF-IDF vector of a token list over this model's vocabulary.
    fn weigh(&self, tokens: &[Token]) -> Sparse {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for term in terms(tokens) {
            if let Some(&i) = self.vocabulary.get(term) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect()
    }

    fn has_near_duplicates(&self) -> bool {
        for i in 0..self.topics.len() {
            for j in i + 1..self.topics.len() {
                if cosine_dense(&self.topics[i], &self.topics[j]) > DEGENERATE_COSINE {
                    return true;
                }
            }
        }
        false
    }

    /// Human-readable listing of the top `n` terms per topic.
    pub fn dump(&self, n: usize) -> String {
        let terms: Vec<&str> = {
            let mut by_index = vec![""; self.vocabulary.len()];
            for (term, &i) in &self.vocabulary {
                by_index[i] = term;
            }
            by_index
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# k={} vocabulary={} degenerate={}",
            self.k,
            self.vocabulary.len(),
            self.degenerate
        );
        for (t, topic) in self.topics.iter().enumerate() {
            let _ = writeln!(out, "topic {t} documents={}", self.sizes.get(t).copied().unwrap_or(0));
            let mut ranked: Vec<(usize, f64)> = topic.iter().copied().enumerate().filter(|(_, w)| *w > 0.0).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (i, w) in ranked.into_iter().take(n) {
                let _ = writeln!(out, "  {}\t{:.6}", terms[i], w);
            }
        }
        out
    }
}

fn cosine_dense(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fits `k` topics. Documents with no non-stopword terms are ignored.
pub fn fit_topics(docs: &[Vec<Token>], k: usize, seed: u64) -> Result<TopicModel> {
    let docs: Vec<Vec<&str>> = docs
        .iter()
        .map(|d| terms(d).collect::<Vec<_>>())
        .filter(|d| !d.is_empty())
        .collect();
    if k == 0 || docs.len() < k {
        return Err(Error::InsufficientCorpus { docs: docs.len(), k });
    }

    let vocab_set: BTreeSet<&str> = docs.iter().flatten().copied().collect();
    let vocabulary: BTreeMap<String, usize> = vocab_set.iter().enumerate().map(|(i, t)| (t.to_string(), i)).collect();
    let dims = vocabulary.len();
    let n_docs = docs.len() as f64;
    let mut df = vec![0.0; dims];
    for doc in &docs {
        for term in doc.iter().copied().collect::<BTreeSet<_>>() {
            df[vocabulary[term]] += 1.0;
        }
    }
    let idf: Vec<f64> = df.iter().map(|d| ((1.0 + n_docs) / (1.0 + d)).ln() + 1.0).collect();

    let vectors: Vec<Sparse> = docs
        .iter()
        .map(|doc| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for term in doc {
                *counts.entry(vocabulary[*term]).or_default() += 1.0;
            }
            let mut v: Sparse = counts.into_iter().map(|(i, c)| (i, c * idf[i])).collect();
            let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|(_, x)| *x /= norm);
            v
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&vectors, k, dims, &mut rng);
    let mut assignment = vec![usize::MAX; vectors.len()];
    let mut means = vec![vec![0.0; dims]; k];

    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (d, v) in vectors.iter().enumerate() {
            let best = nearest(v, &centroids);
            if assignment[d] != best {
                assignment[d] = best;
                changed = true;
            }
        }
        fill_empty_clusters(&vectors, &centroids, &mut assignment, k);

        means = vec![vec![0.0; dims]; k];
        let mut sizes = vec![0usize; k];
        for (d, v) in vectors.iter().enumerate() {
            let c = assignment[d];
            sizes[c] += 1;
            for &(i, x) in v {
                means[c][i] += x;
            }
        }
        for (c, mean) in means.iter_mut().enumerate() {
            if sizes[c] > 0 {
                mean.iter_mut().for_each(|x| *x /= sizes[c] as f64);
            }
            let mut unit = mean.clone();
            l2_normalize(&mut unit);
            centroids[c] = unit;
        }
        if !changed {
            break;
        }
    }

    let mut sizes = vec![0usize; k];
    for &c in &assignment {
        sizes[c] += 1;
    }
    let mut model = TopicModel::from_parts(vocabulary, idf, means)?;
    model.sizes = sizes;
    Ok(model)
}

fn nearest(v: &Sparse, centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let sim = sparse_dot(v, centroid);
        if sim > best_sim {
            best_sim = sim;
            best = c;
        }
    }
    best
}

/// k-means++ seeding under cosine distance.
fn seed_centroids(vectors: &[Sparse], k: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dense = |v: &Sparse| {
        let mut d = vec![0.0; dims];
        for &(i, x) in v {
            d[i] = x;
        }
        d
    };
    let mut chosen = vec![rng.random_range(0..vectors.len())];
    let mut centroids = vec![dense(&vectors[chosen[0]])];
    while centroids.len() < k {
        let weights: Vec<f64> = vectors
            .iter()
            .map(|v| {
                let sim = centroids
                    .iter()
                    .map(|c| sparse_dot(v, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                (1.0 - sim).max(0.0).powi(2)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 1e-12 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            while weights[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // every document coincides with a chosen seed
            (0..vectors.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        centroids.push(dense(&vectors[next]));
    }
    centroids
}

/// Moves the document least similar to its centroid into each empty
/// cluster, never emptying another cluster in the process.
fn fill_empty_clusters(vectors: &[Sparse], centroids: &[Vec<f64>], assignment: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..vectors.len())
            .filter(|&d| sizes[assignment[d]] > 1)
            .min_by(|&a, &b| {
                let sa = sparse_dot(&vectors[a], &centroids[assignment[a]]);
                let sb = sparse_dot(&vectors[b], &centroids[assignment[b]]);
                sa.total_cmp(&sb).then(a.cmp(&b))
            });
        match donor {
            Some(d) => assignment[d] = empty,
            None => return,
        }
    }
}

/// Sum over topics of the cosine similarity between the tokens' TF-IDF
/// vector and each topic vector; 0 when no token is in the vocabulary.
pub fn topic_likelihood(model: &TopicModel, tokens: &[Token]) -> f64 {
    let v = model.weigh(tokens);
    if v.is_empty() {
        return 0.0;
    }
    let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    model
        .topics
        .iter()
        .map(|t| {
            let tn = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            if tn == 0.0 {
                0.0
            } else {
                sparse_dot(&v, t) / (norm * tn)
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::tokenize;

    fn docs(texts: &[&str]) -> Vec<Vec<Token>> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    fn top_term(model: &TopicModel, topic: usize) -> &str {
        let (i, _) =
            model.topics[topic].iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc },
            );
        model.vocabulary.iter().find(|(_, &j)| j == i).unwrap().0
    }

    #[test]
    fn separable_corpus() {
        let corpus = docs(&[
            "shelter shelter open",
            "evacuation order zone",
            "power outage crews",
            "subway service suspended",
        ]);
        let model = fit_topics(&corpus, 4, 7).unwrap();
        assert_eq!(model.k, 4);
        assert_eq!(model.sizes, vec![1, 1, 1, 1]);
        assert!(!model.degenerate);
        for t in &model.topics {
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(t.iter().all(|x| *x >= 0.0));
            // each topic lives entirely on one document's terms
            let support: Vec<&str> = model
                .vocabulary
                .iter()
                .filter(|(_, &i)| t[i] > 0.0)
                .map(|(w, _)| w.as_str())
                .collect();
            let expected = if support.contains(&"shelter") { 2 } else { 3 };
            assert_eq!(support.len(), expected, "{support:?}");
        }
        let mut tops: Vec<&str> = (0..4).map(|t| top_term(&model, t)).collect();
        tops.sort();
        assert!(tops.contains(&"shelter"));
    }

    #[test]
    fn identical_documents_are_degenerate() {
        let corpus = docs(&["stay indoors"; 6]);
        let model = fit_topics(&corpus, 4, 1).unwrap();
        assert!(model.degenerate);
        assert_eq!(model.sizes.iter().sum::<usize>(), 6);
    }

    #[test]
    fn deterministic_under_seed() {
        let corpus = docs(&[
            "shelter open brooklyn",
            "shelter open queens",
            "evacuate zone a now",
            "evacuate zone b",
            "power outage update",
            "outage crews working",
            "bridges closed traffic",
            "tunnels closed traffic",
        ]);
        assert_eq!(fit_topics(&corpus, 4, 42).unwrap(), fit_topics(&corpus, 4, 42).unwrap());
    }

    #[test]
    fn too_small_corpus() {
        let err = fit_topics(&docs(&["a b", "c d", "the of"]), 4, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientCorpus { docs: 2, k: 4 }));
    }

    #[test]
    fn likelihood_alignment_and_vacuous_overlap() {
        let corpus = docs(&["shelter open", "evacuation order", "power outage", "subway suspended"]);
        let model = fit_topics(&corpus, 4, 3).unwrap();
        let score = topic_likelihood(&model, &tokenize("shelter open"));
        assert!((score - 1.0).abs() < 1e-9, "{score}");
        assert_eq!(topic_likelihood(&model, &tokenize("pizza tonight")), 0.0);
        assert_eq!(topic_likelihood(&model, &[]), 0.0);
    }

    #[test]
    fn crafted_likelihood_matches_dot_product_oracle() {
        // two orthogonal topics over {x, y, z}, unit idf
        let vocab: BTreeMap<String, usize> = [("x", 0), ("y", 1), ("z", 2)]
            .iter()
            .map(|(t, i)| (t.to_string(), *i))
            .collect();
        let model =
            TopicModel::from_parts(vocab, vec![1.0; 3], vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5]]).unwrap();
        // tweet "x y": unit vector (1,1,0)/sqrt2
        // cos with (1,0,0) = 1/sqrt2; with (0,.5,.5)/|.| = (0,1,1)/sqrt2 -> 1/2
        let expected = 1.0 / 2f64.sqrt() + 0.5;
        let got = topic_likelihood(&model, &[Token::word("x"), Token::word("y")]);
        assert!((got - expected).abs() < 1e-12);
        // "y z z": (0,1,2)/sqrt5 against (0,1,1)/sqrt2 = 3/sqrt10, against x = 0
        let got = topic_likelihood(&model, &[Token::word("y"), Token::word("z"), Token::word("z")]);
        assert!((got - 3.0 / 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dump_lists_terms() {
        let model = fit_topics(
            &docs(&["shelter open", "evacuation order", "power outage", "subway suspended"]),
            4,
            3,
        )
        .unwrap();
        let text = model.dump(50);
        assert!(text.starts_with("# k=4"));
        assert_eq!(text.matches("topic ").count(), 4);
        assert!(text.contains("shelter\t"));
    }
}
