//! Behavioural feature vectors, Pearson screening and L1 normalisation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AccountAggregates, CorpusError, Dataset};
use crate::labeling::{Category, LabelError};

pub const DEFAULT_TARGET_COUNT: usize = 8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("pearson matrix needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("feature vectors disagree on feature names")]
    NameMismatch,
    #[error("cannot select {target} of {available} features")]
    TargetTooLarge { target: usize, available: usize },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("duplicate feature {0:?} in catalog")]
    DuplicateFeature(String),
    #[error("malformed feature matrix: {0}")]
    Malformed(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    TweetCount,
    RetweetCount,
    MentionCount,
    AvgFollowers,
    AvgFollowing,
    HashtagCount,
    ReplyCount,
    LikeCount,
    TweetsPerActiveDay,
    ActiveDays,
}

impl FeatureKind {
    pub const DEFAULTS: [FeatureKind; 8] = [
        FeatureKind::TweetCount,
        FeatureKind::RetweetCount,
        FeatureKind::MentionCount,
        FeatureKind::AvgFollowers,
        FeatureKind::AvgFollowing,
        FeatureKind::HashtagCount,
        FeatureKind::ReplyCount,
        FeatureKind::LikeCount,
    ];
    pub const TIMING: [FeatureKind; 2] = [FeatureKind::TweetsPerActiveDay, FeatureKind::ActiveDays];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::TweetCount => "tweet_count",
            FeatureKind::RetweetCount => "retweet_count",
            FeatureKind::MentionCount => "mention_count",
            FeatureKind::AvgFollowers => "avg_followers",
            FeatureKind::AvgFollowing => "avg_following",
            FeatureKind::HashtagCount => "hashtag_count",
            FeatureKind::ReplyCount => "reply_count",
            FeatureKind::LikeCount => "like_count",
            FeatureKind::TweetsPerActiveDay => "tweets_per_active_day",
            FeatureKind::ActiveDays => "active_days",
        }
    }

    pub fn extract(self, a: &AccountAggregates) -> f64 {
        match self {
            FeatureKind::TweetCount => a.tweet_count as f64,
            FeatureKind::RetweetCount => a.retweet_count as f64,
            FeatureKind::MentionCount => a.mention_count as f64,
            FeatureKind::AvgFollowers => a.mean_followers,
            FeatureKind::AvgFollowing => a.mean_following,
            FeatureKind::HashtagCount => a.hashtag_count as f64,
            FeatureKind::ReplyCount => a.reply_count as f64,
            FeatureKind::LikeCount => a.like_count as f64,
            FeatureKind::TweetsPerActiveDay => {
                if a.active_days == 0 {
                    0.0
                } else {
                    a.tweet_count as f64 / a.active_days as f64
                }
            }
            FeatureKind::ActiveDays => a.active_days as f64,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::DEFAULTS
            .iter()
            .chain(FeatureKind::TIMING.iter())
            .copied()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| FeatureError::UnknownFeature(s.to_string()))
    }
}

/// Ordered candidate features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    features: Vec<FeatureKind>,
}

impl FeatureCatalog {
    pub fn new(features: Vec<FeatureKind>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for f in &features {
            if !seen.insert(*f) {
                return Err(FeatureError::DuplicateFeature(f.name().to_string()));
            }
        }
        Ok(FeatureCatalog { features })
    }

    pub fn with_timing() -> Self {
        let mut f = FeatureKind::DEFAULTS.to_vec();
        f.extend(FeatureKind::TIMING);
        FeatureCatalog { features: f }
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(names.iter().map(|n| n.as_ref().parse()).collect::<Result<_>>()?)
    }

    pub fn features(&self) -> &[FeatureKind] {
        &self.features
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name().to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Sub-catalog keeping only `names`, in catalog order.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> FeatureCatalog {
        FeatureCatalog {
            features: self
                .features
                .iter()
                .copied()
                .filter(|f| names.iter().any(|n| n.as_ref() == f.name()))
                .collect(),
        }
    }
}

impl Default for FeatureCatalog {
    fn default() -> Self {
        FeatureCatalog {
            features: FeatureKind::DEFAULTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub account_id: String,
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    /// All values zero; excluded from training.
    pub degenerate: bool,
}

impl FeatureVector {
    pub fn new(account_id: impl Into<String>, feature_names: Vec<String>, values: Vec<f64>) -> Self {
        let degenerate = values.iter().all(|v| *v == 0.0);
        FeatureVector {
            account_id: account_id.into(),
            feature_names,
            values,
            degenerate,
        }
    }

    pub fn project<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureVector> {
        let values = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n.as_ref())
                    .map(|i| self.values[i])
                    .ok_or_else(|| FeatureError::UnknownFeature(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureVector::new(
            self.account_id.clone(),
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            values,
        ))
    }
}

pub fn extract_features(dataset: &Dataset, account_id: &str, catalog: &FeatureCatalog) -> Result<FeatureVector> {
    let agg = dataset.account_aggregates(account_id)?;
    Ok(FeatureVector::new(
        account_id,
        catalog.names(),
        catalog.features.iter().map(|f| f.extract(&agg)).collect(),
    ))
}

/// Raw vectors for every account of the dataset, in account-id order.
pub fn extract_all(dataset: &Dataset, catalog: &FeatureCatalog) -> Result<Vec<FeatureVector>> {
    dataset
        .accounts()
        .keys()
        .map(|id| extract_features(dataset, id, catalog))
        .collect()
}

/// Divides every value by the row's L1 norm. All-zero rows come back
/// unchanged and flagged degenerate.
pub fn l1_normalize(vector: &FeatureVector) -> FeatureVector {
    let total: f64 = vector.values.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return FeatureVector {
            degenerate: true,
            ..vector.clone()
        };
    }
    FeatureVector {
        values: vector.values.iter().map(|v| v / total).collect(),
        degenerate: false,
        ..vector.clone()
    }
}

/// Column-wise variant: each feature is divided by its L1 norm across rows.
pub fn l1_normalize_columns(vectors: &[FeatureVector]) -> Vec<FeatureVector> {
    let d = vectors.first().map_or(0, |v| v.values.len());
    let totals: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v.values[j].abs()).sum())
        .collect();
    vectors
        .iter()
        .map(|v| {
            let values: Vec<f64> = v
                .values
                .iter()
                .zip(&totals)
                .map(|(x, t)| if *t == 0.0 { 0.0 } else { x / t })
                .collect();
            FeatureVector::new(v.account_id.clone(), v.feature_names.clone(), values)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeAxis {
    #[default]
    Row,
    Column,
}

pub fn normalize(vectors: &[FeatureVector], axis: NormalizeAxis) -> Vec<FeatureVector> {
    match axis {
        NormalizeAxis::Row => vectors.iter().map(l1_normalize).collect(),
        NormalizeAxis::Column => l1_normalize_columns(vectors),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Constant,
    MeanAbsCorrelation { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub name: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub target_count: usize,
    pub selected: Vec<String>,
    pub dropped: Vec<DroppedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub names: Vec<String>,
    pub samples: usize,
    pub matrix: Vec<Vec<f64>>,
    /// Mean |r| of each feature against all others.
    pub mean_abs: Vec<f64>,
    pub constant: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<FeatureSelection>,
}

impl CorrelationReport {
    pub fn r(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.matrix[i][j])
    }

    pub fn select(&mut self, target_count: usize) -> Result<&FeatureSelection> {
        let s = select_features(self, target_count)?;
        Ok(self.selection.insert(s))
    }
}

/// Sample Pearson correlation of every feature pair, computed two-pass
/// (means first, then centred sums). Constant features correlate 0 with
/// everything else.
pub fn pearson_matrix(vectors: &[FeatureVector]) -> Result<CorrelationReport> {
    if vectors.len() < 3 {
        return Err(FeatureError::TooFewSamples(vectors.len()));
    }
    let names = vectors[0].feature_names.clone();
    if vectors.iter().any(|v| v.feature_names != names) {
        return Err(FeatureError::NameMismatch);
    }
    let n = vectors.len() as f64;
    let d = names.len();
    let means: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v.values[j]).sum::<f64>() / n)
        .collect();
    let centred: Vec<Vec<f64>> = (0..d)
        .map(|j| vectors.iter().map(|v| v.values[j] - means[j]).collect())
        .collect();
    let ss: Vec<f64> = centred.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    let mut matrix = vec![vec![0.0; d]; d];
    for i in 0..d {
        matrix[i][i] = 1.0;
        for j in (i + 1)..d {
            let r = if ss[i] == 0.0 || ss[j] == 0.0 {
                0.0
            } else {
                let sxy: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
                (sxy / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0)
            };
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    let mean_abs = (0..d)
        .map(|i| {
            if d < 2 {
                0.0
            } else {
                (0..d).filter(|&j| j != i).map(|j| matrix[i][j].abs()).sum::<f64>() / (d - 1) as f64
            }
        })
        .collect();
    let constant = (0..d).filter(|&j| ss[j] == 0.0).map(|j| names[j].clone()).collect();
    Ok(CorrelationReport {
        names,
        samples: vectors.len(),
        matrix,
        mean_abs,
        constant,
        selection: None,
    })
}

/// Greedy multicollinearity screening: constant features go first, then
/// the survivor with the highest mean |r| to the other survivors is dropped
/// until `target_count` remain. Ties drop the lexicographically larger name.
pub fn select_features(report: &CorrelationReport, target_count: usize) -> Result<FeatureSelection> {
    let d = report.names.len();
    if target_count > d {
        return Err(FeatureError::TargetTooLarge {
            target: target_count,
            available: d,
        });
    }
    // Survivors are visited in name order so the outcome does not depend on
    // the candidate order.
    let mut survivors: Vec<usize> = (0..d).collect();
    survivors.sort_by(|&a, &b| report.names[a].cmp(&report.names[b]));
    let mut dropped = Vec::new();

    for name in &report.constant {
        if survivors.len() <= target_count {
            break;
        }
        let i = report
            .names
            .iter()
            .position(|n| n == name)
            .expect("constant feature named in report");
        survivors.retain(|&s| s != i);
        dropped.push(DroppedFeature {
            name: name.clone(),
            reason: DropReason::Constant,
        });
    }
    while survivors.len() > target_count {
        let others = (survivors.len() - 1).max(1) as f64;
        let mut worst: Option<(usize, f64)> = None;
        for &i in &survivors {
            let m = survivors
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| report.matrix[i][j].abs())
                .sum::<f64>()
                / others;
            // `>=` over name-sorted survivors keeps the larger name on ties.
            if worst.is_none_or(|(_, w)| m >= w) {
                worst = Some((i, m));
            }
        }
        let (i, value) = worst.expect("survivors non-empty");
        survivors.retain(|&s| s != i);
        dropped.push(DroppedFeature {
            name: report.names[i].clone(),
            reason: DropReason::MeanAbsCorrelation { value },
        });
    }
    survivors.sort_unstable();
    Ok(FeatureSelection {
        target_count,
        selected: survivors.iter().map(|&i| report.names[i].clone()).collect(),
        dropped,
    })
}

/// Feature matrix row: a vector and, when known, its label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub vector: FeatureVector,
    pub category: Option<Category>,
}

/// CSV with `account_id`, the feature columns and a `category` column
/// (empty when unlabeled).
pub fn write_feature_csv<W: Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header = vec!["account_id".to_string()];
        header.extend(first.vector.feature_names.iter().cloned());
        header.push("category".into());
        w.write_record(&header)?;
    }
    for r in rows {
        let mut rec = vec![r.vector.account_id.clone()];
        rec.extend(r.vector.values.iter().map(|v| v.to_string()));
        rec.push(r.category.map(|c| c.token().to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "account_id" || header.last().map(String::as_str) != Some("category") {
        return Err(FeatureError::Malformed(
            "expected account_id, features..., category".into(),
        ));
    }
    let names: Vec<String> = header[1..header.len() - 1].to_vec();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let values = (1..=names.len())
            .map(|i| {
                rec.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| FeatureError::Malformed(format!("bad value in row {:?}", rec.get(0))))
            })
            .collect::<Result<Vec<_>>>()?;
        let cat = rec.get(names.len() + 1).unwrap_or("").trim();
        let category = if cat.is_empty() { None } else { Some(cat.parse()?) };
        let mut vector = FeatureVector::new(rec.get(0).unwrap_or(""), names.clone(), values);
        vector.degenerate = vector.values.iter().all(|v| *v == 0.0);
        rows.push(FeatureRow { vector, category });
    }
    Ok(rows)
}

/// Category-level means of raw features, as in a descriptive-statistics table.
pub fn category_means(rows: &[FeatureRow]) -> BTreeMap<Category, Vec<f64>> {
    let mut sums: BTreeMap<Category, (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let Some(c) = r.category else { continue };
        let e = sums.entry(c).or_insert_with(|| (vec![0.0; r.vector.values.len()], 0));
        for (s, v) in e.0.iter_mut().zip(&r.vector.values) {
            *s += v;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(c, (s, n))| (c, s.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_reader, IngestOptions, Schema};
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{Signed, ToPrimitive, Zero};

    fn fv(values: &[f64]) -> FeatureVector {
        let names = (0..values.len()).map(|i| format!("f{i}")).collect();
        FeatureVector::new("a", names, values.to_vec())
    }

    fn rows(data: &[Vec<f64>], names: &[&str]) -> Vec<FeatureVector> {
        data.iter()
            .enumerate()
            .map(|(i, r)| {
                FeatureVector::new(
                    format!("s{i}"),
                    names.iter().map(|s| s.to_string()).collect(),
                    r.clone(),
                )
            })
            .collect()
    }

    /// Pearson r from exact rational sums over integer data.
    fn exact_pearson(x: &[i64], y: &[i64]) -> f64 {
        let n = BigRational::from_integer(BigInt::from(x.len()));
        let q = |v: i64| BigRational::from_integer(BigInt::from(v));
        let mx = x.iter().map(|&v| q(v)).fold(BigRational::zero(), |a, b| a + b) / &n;
        let my = y.iter().map(|&v| q(v)).fold(BigRational::zero(), |a, b| a + b) / &n;
        let (mut sxy, mut sxx, mut syy) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
        for (&a, &b) in x.iter().zip(y) {
            let dx = q(a) - &mx;
            let dy = q(b) - &my;
            sxy += &dx * &dy;
            sxx += &dx * &dx;
            syy += &dy * &dy;
        }
        let r2 = (&sxy * &sxy) / (sxx * syy);
        let r = r2.to_f64().unwrap().sqrt();
        if sxy.is_negative() {
            -r
        } else {
            r
        }
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_normalize(&fv(&[2.0, 3.0, 5.0])).values, vec![0.2, 0.3, 0.5]);
        let z = l1_normalize(&fv(&[0.0, 0.0, 0.0]));
        assert_eq!(z.values, vec![0.0; 3]);
        assert!(z.degenerate);
        assert_eq!(l1_normalize(&fv(&[1.0, -1.0, 2.0])).values, vec![0.25, -0.25, 0.5]);
    }

    #[test]
    fn column_normalisation() {
        let v = rows(&[vec![1.0, 0.0], vec![3.0, 0.0]], &["a", "b"]);
        let n = l1_normalize_columns(&v);
        assert_eq!(n[0].values, vec![0.25, 0.0]);
        assert_eq!(n[1].values, vec![0.75, 0.0]);
    }

    #[test]
    fn pearson_identities() {
        let data: Vec<Vec<f64>> = [1.0, 4.0, 2.0, 8.0, 5.0].iter().map(|&x| vec![x, x, -x, 3.0]).collect();
        let rep = pearson_matrix(&rows(&data, &["x", "dup", "neg", "const"])).unwrap();
        assert_eq!(rep.r("x", "dup").unwrap(), 1.0);
        assert!((rep.r("x", "neg").unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(rep.r("x", "const").unwrap(), 0.0);
        assert_eq!(rep.r("const", "const").unwrap(), 1.0);
        assert_eq!(rep.constant, vec!["const"]);
        assert!(matches!(
            pearson_matrix(&rows(&data[..2], &["x", "dup", "neg", "const"])),
            Err(FeatureError::TooFewSamples(2))
        ));
    }

    #[test]
    fn pearson_against_exact_oracle() {
        let cols: [[i64; 5]; 3] = [[3, 9, 1, 7, 4], [10, 2, 8, 8, 1], [5, 6, 7, 9, 20]];
        let data: Vec<Vec<f64>> = (0..5).map(|i| cols.iter().map(|c| c[i] as f64).collect()).collect();
        let rep = pearson_matrix(&rows(&data, &["a", "b", "c"])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { exact_pearson(&cols[i], &cols[j]) };
                assert!((rep.matrix[i][j] - want).abs() < 1e-12, "{i},{j}");
            }
        }
    }

    #[test]
    fn identity_selection() {
        let data: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..8)
                    .map(|j| ((i * 7 + j * 3) % 5) as f64 + j as f64 * i as f64)
                    .collect()
            })
            .collect();
        let names = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let rep = pearson_matrix(&rows(&data, &names)).unwrap();
        let sel = select_features(&rep, 8).unwrap();
        assert_eq!(sel.selected, names);
        assert!(sel.dropped.is_empty());
        assert!(select_features(&rep, 9).is_err());
    }

    #[test]
    fn duplicate_feature_dropped() {
        // Eight mutually orthogonal Walsh columns plus an exact copy of `c3`.
        let walsh = |i: u32, j: u32| {
            if (i & j).count_ones().is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        };
        let data: Vec<Vec<f64>> = (0..16u32)
            .map(|i| {
                let mut v: Vec<f64> = (1..=8).map(|j| walsh(i, j)).collect();
                v.push(v[3]);
                v
            })
            .collect();
        let names = ["c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c3_copy"];
        let rep = pearson_matrix(&rows(&data, &names)).unwrap();
        let sel = select_features(&rep, 8).unwrap();
        assert_eq!(sel.dropped.len(), 1);
        let gone = &sel.dropped[0].name;
        assert!(gone == "c3" || gone == "c3_copy");
        // Both copies share the same mean |r|; the name tie-break keeps `c3`.
        assert_eq!(gone, "c3_copy");
        let ma = |n: &str| rep.mean_abs[names.iter().position(|x| *x == n).unwrap()];
        for n in names.iter().filter(|n| !n.starts_with("c3")) {
            assert!(ma("c3") > ma(n));
        }
    }

    #[test]
    fn constants_dropped_first() {
        let data: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64, 1.0]).collect();
        let rep = pearson_matrix(&rows(&data, &["x", "x2", "k"])).unwrap();
        let sel = select_features(&rep, 2).unwrap();
        assert_eq!(sel.selected, vec!["x", "x2"]);
        assert_eq!(sel.dropped[0].reason, DropReason::Constant);
    }

    #[test]
    fn extraction_from_dataset() {
        let line = |t: &str, rt: bool, text: &str, f: u64| {
            serde_json::json!({
                "account_id": "acc", "timestamp": t, "text": text, "is_retweet": rt, "is_reply": false,
                "like_count": 2, "follower_count_at_tweet": f, "following_count_at_tweet": 4, "language_tag": "en",
            })
            .to_string()
        };
        let input = [
            line("2016-01-01T00:00:00Z", true, "RT @a: @b @c", 10),
            line("2016-01-01T05:00:00Z", false, "#x", 20),
        ]
        .join("\n");
        let (ds, _) = parse_reader("f", input.as_bytes(), IngestOptions::new(Schema::Jsonl)).unwrap();
        let v = extract_features(&ds, "acc", &FeatureCatalog::with_timing()).unwrap();
        assert_eq!(v.values, vec![2.0, 1.0, 3.0, 15.0, 4.0, 1.0, 0.0, 4.0, 2.0, 1.0]);
        assert!(!v.degenerate);
        assert!(extract_features(&ds, "nobody", &FeatureCatalog::default()).is_err());
    }

    #[test]
    fn feature_csv_round_trip() {
        let rows = vec![
            FeatureRow {
                vector: FeatureVector::new("a", vec!["x".into(), "y".into()], vec![0.1, 1.0 / 3.0]),
                category: Some(Category::FakeNews),
            },
            FeatureRow {
                vector: FeatureVector::new("b", vec!["x".into(), "y".into()], vec![0.0, 0.0]),
                category: None,
            },
        ];
        let mut buf = Vec::new();
        write_feature_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_feature_csv(buf.as_slice()).unwrap(), rows);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vals() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-1e6f64..1e6, 1..10)
        }

        proptest! {
            #[test]
            fn normalisation_idempotent_and_scale_free(v in vals(), c in 1e-3f64..1e3) {
                let once = l1_normalize(&fv(&v));
                let twice = l1_normalize(&once);
                for (a, b) in once.values.iter().zip(&twice.values) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
                if !once.degenerate {
                    let s: f64 = once.values.iter().map(|x| x.abs()).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-9);
                    let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
                    for (a, b) in l1_normalize(&fv(&scaled)).values.iter().zip(&once.values) {
                        prop_assert!((a - b).abs() <= 1e-12);
                    }
                }
            }

            #[test]
            fn pearson_matrix_well_formed_and_matches_oracle(
                data in proptest::collection::vec(proptest::collection::vec(-50i64..50, 4), 3..12)
            ) {
                let fdata: Vec<Vec<f64>> = data.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
                let rep = pearson_matrix(&rows(&fdata, &["a", "b", "c", "d"])).unwrap();
                for i in 0..4 {
                    prop_assert_eq!(rep.matrix[i][i], 1.0);
                    for j in 0..4 {
                        prop_assert!(rep.matrix[i][j].abs() <= 1.0);
                        prop_assert!((rep.matrix[i][j] - rep.matrix[j][i]).abs() <= 1e-12);
                        let ci: Vec<i64> = data.iter().map(|r| r[i]).collect();
                        let cj: Vec<i64> = data.iter().map(|r| r[j]).collect();
                        let constant = |c: &[i64]| c.iter().all(|&x| x == c[0]);
                        if i != j && !constant(&ci) && !constant(&cj) {
                            prop_assert!((rep.matrix[i][j] - exact_pearson(&ci, &cj)).abs() <= 1e-9);
                        }
                    }
                }
            }

            #[test]
            fn selection_ignores_candidate_order(
                data in proptest::collection::vec(proptest::collection::vec(-20i64..20, 5), 4..10),
                perm in Just(vec![0usize, 1, 2, 3, 4]).prop_shuffle(),
                target in 1usize..5,
            ) {
                let names = ["a", "b", "c", "d", "e"];
                let fdata: Vec<Vec<f64>> = data.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
                let pdata: Vec<Vec<f64>> = fdata.iter().map(|r| perm.iter().map(|&i| r[i]).collect()).collect();
                let pnames: Vec<&str> = perm.iter().map(|&i| names[i]).collect();
                let a = select_features(&pearson_matrix(&rows(&fdata, &names)).unwrap(), target).unwrap();
                let b = select_features(&pearson_matrix(&rows(&pdata, &pnames)).unwrap(), target).unwrap();
                let mut sa = a.selected.clone();
                let mut sb = b.selected.clone();
                sa.sort();
                sb.sort();
                prop_assert_eq!(sa, sb);
            }
        }
    }
}
