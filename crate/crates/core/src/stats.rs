//! Per-user feature table and the RBQ regression.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::content::{user_content_ratios, ContentLabel, ContentRatios};
use crate::error::{Error, Result};
use crate::ingest::PeerGraph;
use crate::risk::RbqRecord;

/// Predictor columns, in feature-table order.
pub const PREDICTORS: [&str; 10] = [
    "n_self_tweets",
    "prop_self_informational",
    "prop_self_actional",
    "prop_self_emotional",
    "n_peers",
    "n_peer_tweets",
    "prop_peer_informational",
    "prop_peer_actional",
    "prop_peer_emotional",
    "peer_missing",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFeatures {
    pub user_id: String,
    pub rbq: f64,
    pub n_self_tweets: usize,
    pub prop_self_informational: f64,
    pub prop_self_actional: f64,
    pub prop_self_emotional: f64,
    pub n_peers: usize,
    pub n_peer_tweets: usize,
    pub prop_peer_informational: f64,
    pub prop_peer_actional: f64,
    pub prop_peer_emotional: f64,
    /// no peer with posts in the corpus; peer proportions are 0
    pub peer_missing: bool,
}

impl UserFeatures {
    pub fn predictors(&self) -> [f64; 10] {
        [
            self.n_self_tweets as f64,
            self.prop_self_informational,
            self.prop_self_actional,
            self.prop_self_emotional,
            self.n_peers as f64,
            self.n_peer_tweets as f64,
            self.prop_peer_informational,
            self.prop_peer_actional,
            self.prop_peer_emotional,
            f64::from(u8::from(self.peer_missing)),
        ]
    }
}

/// How peer proportions are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeerAggregation {
    /// mean of each peer's own proportions
    #[default]
    RatioMean,
    /// one proportion over all peers' posts pooled together
    Pooled,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    /// selected users without an RBQ record
    pub missing_rbq: Vec<String>,
    /// selected users without any labelled post
    pub missing_posts: Vec<String>,
}

/// Builds one row per user from their own labelled posts and their peers'.
///
/// `labels` maps every author in the corpus to the labels of their posts.
pub fn build_feature_table(
    users: &BTreeSet<String>,
    rbq_records: &[RbqRecord],
    labels: &HashMap<String, Vec<ContentLabel>>,
    peer_graph: &PeerGraph,
    aggregation: PeerAggregation,
) -> (Vec<UserFeatures>, FeatureReport) {
    let rbq: HashMap<&str, f64> = rbq_records.iter().map(|r| (r.user_id.as_str(), r.rbq)).collect();
    let ratios: HashMap<&str, ContentRatios> = labels
        .iter()
        .filter_map(|(u, l)| user_content_ratios(l).ok().map(|r| (u.as_str(), r)))
        .collect();

    let mut rows = Vec::new();
    let mut report = FeatureReport::default();
    for user in users {
        let Some(&user_rbq) = rbq.get(user.as_str()) else {
            report.missing_rbq.push(user.clone());
            continue;
        };
        let Some(own) = ratios.get(user.as_str()) else {
            report.missing_posts.push(user.clone());
            continue;
        };
        let peers: Vec<&String> = peer_graph.peers(user).collect();
        let with_posts: Vec<&str> = peers
            .iter()
            .map(|p| p.as_str())
            .filter(|p| ratios.contains_key(p))
            .collect();
        let n_peer_tweets: usize = with_posts.iter().map(|p| labels[*p].len()).sum();

        let peer = if with_posts.is_empty() {
            None
        } else {
            Some(match aggregation {
                PeerAggregation::RatioMean => {
                    let n = with_posts.len() as f64;
                    let mean = |f: fn(&ContentRatios) -> f64| with_posts.iter().map(|p| f(&ratios[p])).sum::<f64>() / n;
                    ContentRatios {
                        informational: mean(|r| r.informational),
                        actional: mean(|r| r.actional),
                        emotional: mean(|r| r.emotional),
                    }
                }
                PeerAggregation::Pooled => {
                    let pooled: Vec<ContentLabel> =
                        with_posts.iter().flat_map(|p| labels[*p].iter().copied()).collect();
                    user_content_ratios(&pooled).expect("peers with posts have labels")
                }
            })
        };
        let zero = ContentRatios {
            informational: 0.0,
            actional: 0.0,
            emotional: 0.0,
        };
        let p = peer.unwrap_or(zero);
        rows.push(UserFeatures {
            user_id: user.clone(),
            rbq: user_rbq,
            n_self_tweets: labels[user.as_str()].len(),
            prop_self_informational: own.informational,
            prop_self_actional: own.actional,
            prop_self_emotional: own.emotional,
            n_peers: peers.len(),
            n_peer_tweets,
            prop_peer_informational: p.informational,
            prop_peer_actional: p.actional,
            prop_peer_emotional: p.emotional,
            peer_missing: peer.is_none(),
        });
    }
    (rows, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
    /// estimate * sd(x) / sd(y); 0 for the intercept
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub intercept: Coefficient,
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub n: usize,
    pub df_resid: usize,
}

impl RegressionModel {
    pub fn predictors(&self) -> Vec<&str> {
        self.coefficients.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Relative pivot size below which a design column counts as dependent.
const RANK_TOLERANCE: f64 = 1e-10;

fn two_sided_p(t: f64, df: usize) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

fn sample_sd(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn coefficient(name: &str, estimate: f64, std_error: f64, df: usize, beta: f64) -> Coefficient {
    let t = if std_error > 0.0 {
        estimate / std_error
    } else if estimate == 0.0 {
        f64::NAN
    } else {
        estimate.signum() * f64::INFINITY
    };
    Coefficient {
        name: name.to_string(),
        estimate,
        std_error,
        t,
        p: two_sided_p(t, df),
        beta,
    }
}

/// Least squares with an intercept, solved through a QR factorisation of
/// the column-scaled design.
///
/// `x` holds one row per observation and no constant column.
pub fn ols_fit(y: &[f64], x: &[Vec<f64>], names: &[String]) -> Result<RegressionModel> {
    let n = y.len();
    let p = names.len();
    if x.len() != n || x.iter().any(|row| row.len() != p) {
        return Err(Error::SampleSize(format!("design is not {n} x {p}")));
    }
    if n <= p + 1 {
        return Err(Error::SampleSize(format!(
            "{n} observations for {p} predictors plus intercept"
        )));
    }
    let cols = p + 1;
    let design = DMatrix::from_fn(n, cols, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let scale: Vec<f64> = (0..cols)
        .map(|j| {
            let norm = design.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, cols, |i, j| design[(i, j)] / scale[j]);
    let qr = scaled.qr();
    let r = qr.r();
    let max_pivot = (0..cols).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let dependent: Vec<String> = (0..cols)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOLERANCE * max_pivot.max(f64::MIN_POSITIVE))
        .map(|j| {
            if j == 0 {
                "(intercept)".to_string()
            } else {
                names[j - 1].clone()
            }
        })
        .collect();
    if !dependent.is_empty() {
        return Err(Error::Collinear(dependent));
    }

    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let scaled_coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Collinear(names.to_vec()))?;
    let coef: Vec<f64> = (0..cols).map(|j| scaled_coef[j] / scale[j]).collect();

    let fitted = &design * DVector::from_column_slice(&coef);
    let resid = &yv - fitted;
    let rss = resid.norm_squared();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let df = n - cols;
    let sigma2 = rss / df as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(cols, cols))
        .ok_or_else(|| Error::Collinear(names.to_vec()))?;
    // (X'X)^-1 of the scaled design is R^-1 R^-T
    let std_error = |j: usize| (sigma2 * r_inv.row(j).norm_squared()).sqrt() / scale[j];

    let sd_y = sample_sd(y.iter().copied());
    let coefficients = (0..p)
        .map(|k| {
            let sd_x = sample_sd(x.iter().map(|row| row[k]));
            let beta = if sd_y > 0.0 { coef[k + 1] * sd_x / sd_y } else { 0.0 };
            coefficient(&names[k], coef[k + 1], std_error(k + 1), df, beta)
        })
        .collect();
    Ok(RegressionModel {
        intercept: coefficient("(intercept)", coef[0], std_error(0), df, 0.0),
        coefficients,
        r_squared,
        n,
        df_resid: df,
    })
}

/// Mean-only model: the fallback when every predictor is dropped.
pub fn intercept_only(y: &[f64]) -> Result<RegressionModel> {
    let n = y.len();
    if n < 2 {
        return Err(Error::SampleSize(format!("{n} observations; need at least 2")));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let se = sample_sd(y.iter().copied()) / (n as f64).sqrt();
    Ok(RegressionModel {
        intercept: coefficient("(intercept)", mean, se, n - 1, 0.0),
        coefficients: Vec::new(),
        r_squared: 0.0,
        n,
        df_resid: n - 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub dropped: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub model: RegressionModel,
    pub trace: Vec<SelectionStep>,
}

/// Backward elimination: refit and drop the predictor with the largest
/// p-value while that p-value is at least `alpha`.
pub fn backward_select(y: &[f64], x: &[Vec<f64>], names: &[String], alpha: f64) -> Result<SelectionResult> {
    let mut keep: Vec<usize> = (0..names.len()).collect();
    let mut trace = Vec::new();
    loop {
        if keep.is_empty() {
            return Ok(SelectionResult {
                model: intercept_only(y)?,
                trace,
            });
        }
        let sub_x: Vec<Vec<f64>> = x.iter().map(|row| keep.iter().map(|&j| row[j]).collect()).collect();
        let sub_names: Vec<String> = keep.iter().map(|&j| names[j].clone()).collect();
        let model = ols_fit(y, &sub_x, &sub_names)?;
        let worst = model
            .coefficients
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.p.total_cmp(&b.1.p).then(b.0.cmp(&a.0)))
            .map(|(i, c)| (i, c.p))
            .expect("non-empty model");
        if worst.1 < alpha {
            return Ok(SelectionResult { model, trace });
        }
        trace.push(SelectionStep {
            dropped: sub_names[worst.0].clone(),
            p: worst.1,
        });
        keep.remove(worst.0);
    }
}

/// Full and selected models plus bookkeeping for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub dependent: String,
    pub n: usize,
    pub alpha: f64,
    /// predictors removed before fitting because they do not vary
    pub dropped_constant: Vec<String>,
    /// predictors removed because they were linearly dependent on others
    pub dropped_collinear: Vec<String>,
    /// `None` when there are too few users to estimate every predictor
    pub full_model: Option<RegressionModel>,
    pub selected_model: RegressionModel,
    pub selection_trace: Vec<SelectionStep>,
    pub notes: Vec<String>,
}

/// Regresses RBQ on the feature table.
pub fn regress_features(rows: &[UserFeatures], alpha: f64) -> Result<RegressionReport> {
    if rows.len() < 2 {
        return Err(Error::SampleSize(format!(
            "{} users; regression needs at least 2",
            rows.len()
        )));
    }
    let y: Vec<f64> = rows.iter().map(|r| r.rbq).collect();
    let all: Vec<[f64; 10]> = rows.iter().map(UserFeatures::predictors).collect();
    let mut notes = Vec::new();

    let (mut keep, constant): (Vec<usize>, Vec<usize>) =
        (0..PREDICTORS.len()).partition(|&j| all.iter().any(|row| row[j] != all[0][j]));
    let dropped_constant: Vec<String> = constant.iter().map(|&j| PREDICTORS[j].to_string()).collect();

    let mut dropped_collinear = Vec::new();
    let build = |keep: &[usize]| -> (Vec<Vec<f64>>, Vec<String>) {
        (
            all.iter().map(|row| keep.iter().map(|&j| row[j]).collect()).collect(),
            keep.iter().map(|&j| PREDICTORS[j].to_string()).collect(),
        )
    };

    let full_model = loop {
        if keep.is_empty() {
            break None;
        }
        let (x, names) = build(&keep);
        if rows.len() <= names.len() + 1 {
            notes.push(format!(
                "{} users cannot support {} predictors plus intercept; reporting the intercept-only model",
                rows.len(),
                names.len()
            ));
            keep.clear();
            break None;
        }
        match ols_fit(&y, &x, &names) {
            Ok(model) => break Some(model),
            Err(Error::Collinear(cols)) => {
                let last = cols.last().cloned().unwrap_or_default();
                let Some(pos) = keep.iter().position(|&j| PREDICTORS[j] == last) else {
                    break None;
                };
                dropped_collinear.push(last);
                keep.remove(pos);
            }
            Err(e) => return Err(e),
        }
    };

    let (x, names) = build(&keep);
    let selection = if keep.is_empty() {
        SelectionResult {
            model: intercept_only(&y)?,
            trace: Vec::new(),
        }
    } else {
        backward_select(&y, &x, &names, alpha)?
    };
    if selection.model.coefficients.is_empty() {
        notes.push("no predictor retained at the significance level; intercept-only model".into());
    }
    Ok(RegressionReport {
        dependent: "rbq".into(),
        n: rows.len(),
        alpha,
        dropped_constant,
        dropped_collinear,
        full_model,
        selected_model: selection.model,
        selection_trace: selection.trace,
        notes,
    })
}

/// Plain-text rendering of a regression report.
pub fn render_report(report: &RegressionReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let table = |out: &mut String, m: &RegressionModel| {
        let _ = writeln!(out, "  n = {}, df = {}, R^2 = {:.6}", m.n, m.df_resid, m.r_squared);
        let _ = writeln!(
            out,
            "  {:<26} {:>14} {:>12} {:>10} {:>10} {:>10}",
            "variable", "estimate", "std.err", "t", "p", "beta"
        );
        for c in std::iter::once(&m.intercept).chain(&m.coefficients) {
            let _ = writeln!(
                out,
                "  {:<26} {:>14.6} {:>12.6} {:>10.4} {:>10.6} {:>10.4}",
                c.name, c.estimate, c.std_error, c.t, c.p, c.beta
            );
        }
    };
    let _ = writeln!(
        out,
        "Association of {} with user and peer content features",
        report.dependent
    );
    let _ = writeln!(out, "users: {}  alpha: {}", report.n, report.alpha);
    if !report.dropped_constant.is_empty() {
        let _ = writeln!(out, "constant columns dropped: {}", report.dropped_constant.join(", "));
    }
    if !report.dropped_collinear.is_empty() {
        let _ = writeln!(
            out,
            "collinear columns dropped: {}",
            report.dropped_collinear.join(", ")
        );
    }
    let _ = writeln!(out, "\nfull model:");
    match &report.full_model {
        Some(m) => table(&mut out, m),
        None => {
            let _ = writeln!(out, "  not estimable");
        }
    }
    let _ = writeln!(out, "\nbackward elimination:");
    for step in &report.selection_trace {
        let _ = writeln!(out, "  dropped {} (p = {:.6})", step.dropped, step.p);
    }
    let _ = writeln!(out, "\nselected model:");
    table(&mut out, &report.selected_model);
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

/// Feature table column order for CSV output.
pub const FEATURE_COLUMNS: [&str; 12] = [
    "user_id",
    "rbq",
    "n_self_tweets",
    "prop_self_informational",
    "prop_self_actional",
    "prop_self_emotional",
    "n_peers",
    "n_peer_tweets",
    "prop_peer_informational",
    "prop_peer_actional",
    "prop_peer_emotional",
    "peer_missing",
];

/// Groups labels by author.
pub fn labels_by_user<'a>(pairs: impl Iterator<Item = (&'a str, ContentLabel)>) -> HashMap<String, Vec<ContentLabel>> {
    let mut map: BTreeMap<String, Vec<ContentLabel>> = BTreeMap::new();
    for (user, label) in pairs {
        map.entry(user.to_string()).or_default().push(label);
    }
    map.into_iter().collect()
}
