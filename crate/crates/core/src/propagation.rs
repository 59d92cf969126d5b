//! Category propagation to hashed accounts.
//!
//! The timeframe is cut into subspans (six months by default). Within each
//! subspan every active account becomes a sparse hashtag-count vector over
//! the subspan vocabulary. Each uncategorized vector takes the category of
//! its most cosine-similar categorized vector (an "impermanent" category),
//! and an account's final category is the mode of its impermanent
//! categories across subspans.
//!
//! Tie-breaks, all deterministic:
//! * argmax over categorized columns: higher score, then category order,
//!   then smaller account id;
//! * mode across subspans: higher count, then larger summed similarity,
//!   then category order.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Months, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset, Timeframe};
use crate::labeling::{Category, LabelError, Provenance, SeedLabelSet};

pub const DEFAULT_SUBSPAN_MONTHS: u32 = 6;
pub const LOW_CONFIDENCE_FLOOR: f64 = 0.05;
pub const MAX_FIXPOINT_ROUNDS: usize = 10;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("dataset has no tweets")]
    EmptyDataset,
    #[error("subspan width must be at least one month")]
    InvalidWidth,
    #[error("zero vector for account {0:?}")]
    ZeroVector(String),
    #[error("no categorized account is active in subspan {0}")]
    NoCategorizedActivity(usize),
    #[error("account {0:?} has no subspan entries")]
    NoEntries(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

pub type Result<T, E = PropagationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subspan {
    pub index: usize,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Subspan {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

/// Contiguous half-open windows of `width_months` starting at
/// `timeframe.start` and covering it; the last window may be short.
pub fn partition_timeframe(timeframe: Timeframe, width_months: u32) -> Result<Vec<Subspan>> {
    if width_months == 0 {
        return Err(PropagationError::InvalidWidth);
    }
    if timeframe.end <= timeframe.start {
        return Err(PropagationError::EmptyDataset);
    }
    let mut out = Vec::new();
    let mut start = timeframe.start;
    while start < timeframe.end {
        let index = out.len();
        // Offsets are taken from the origin so month-end clamping never drifts.
        let next = timeframe
            .start
            .checked_add_months(Months::new(width_months * (index as u32 + 1)))
            .expect("subspan boundary within chrono range");
        let end = next.min(timeframe.end);
        out.push(Subspan { index, start, end });
        start = next;
    }
    Ok(out)
}

/// Subspans covering the first through the last tweet of `dataset`.
pub fn partition_subspans(dataset: &Dataset, width_months: u32) -> Result<Vec<Subspan>> {
    let (first, last) = dataset
        .observed_span()
        .filter(|_| dataset.tweet_count() > 0)
        .ok_or(PropagationError::EmptyDataset)?;
    partition_timeframe(Timeframe::new(first, last + Duration::nanoseconds(1)), width_months)
}

fn subspan_of(subspans: &[Subspan], t: DateTime<Utc>) -> Option<usize> {
    let i = subspans.partition_point(|s| s.start <= t);
    (i > 0 && subspans[i - 1].contains(t)).then(|| i - 1)
}

/// Hashtag counts per account within one subspan.
pub type SubspanUsage = BTreeMap<String, BTreeMap<String, u64>>;

/// One pass over the tweets, bucketing hashtag usage by subspan.
pub fn collect_usage(dataset: &Dataset, subspans: &[Subspan]) -> Result<Vec<SubspanUsage>> {
    let mut out = vec![SubspanUsage::new(); subspans.len()];
    for t in dataset.tweets()? {
        let t = t?;
        if t.hashtags.is_empty() {
            continue;
        }
        let Some(i) = subspan_of(subspans, t.timestamp) else {
            continue;
        };
        let acc = out[i].entry(t.account_id).or_default();
        for h in t.hashtags {
            *acc.entry(h).or_default() += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorMode {
    #[default]
    Counts,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspanVocabulary {
    pub subspan: usize,
    pub index: BTreeMap<String, u32>,
}

impl SubspanVocabulary {
    pub fn m(&self) -> usize {
        self.index.len()
    }
}

/// Sorted `(dimension, count)` pairs with a cached L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHashtagVector {
    pub account_id: String,
    pub subspan: usize,
    entries: Vec<(u32, u64)>,
    norm_sq: u128,
    norm: f64,
}

impl SparseHashtagVector {
    /// Entries may come in any order; zero counts are dropped and repeated
    /// dimensions summed.
    pub fn new(account_id: impl Into<String>, subspan: usize, mut entries: Vec<(u32, u64)>) -> Self {
        entries.retain(|e| e.1 > 0);
        entries.sort_unstable_by_key(|e| e.0);
        entries.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let sq: u128 = entries.iter().map(|&(_, c)| c as u128 * c as u128).sum();
        SparseHashtagVector {
            account_id: account_id.into(),
            subspan,
            entries,
            norm_sq: sq,
            norm: (sq as f64).sqrt(),
        }
    }

    pub fn from_dense(account_id: impl Into<String>, subspan: usize, dense: &[u64]) -> Self {
        let entries = dense.iter().enumerate().map(|(i, &c)| (i as u32, c)).collect();
        Self::new(account_id, subspan, entries)
    }

    pub fn entries(&self) -> &[(u32, u64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Exact integer dot product, merged in dimension order.
    pub fn dot(&self, other: &SparseHashtagVector) -> u128 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut acc) = (0, 0, 0u128);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 as u128 * b[j].1 as u128;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// `u·v / (‖u‖‖v‖)`, clamped into `[0, 1]`.
pub fn cosine_similarity(u: &SparseHashtagVector, v: &SparseHashtagVector) -> Result<f64> {
    for x in [u, v] {
        if x.norm == 0.0 {
            return Err(PropagationError::ZeroVector(x.account_id.clone()));
        }
    }
    // One square root over the product of squared norms keeps cos(v, v) at
    // exactly 1.
    let denom = (u.norm_sq as f64 * v.norm_sq as f64).sqrt();
    Ok((u.dot(v) as f64 / denom).clamp(0.0, 1.0))
}

/// Orders cos(u, a) against cos(u, b) exactly by comparing
/// `(u·a)²·|b|²` with `(u·b)²·|a|²`, so equal similarities tie even when
/// their floating-point values differ in the last place.
pub fn compare_similarity(u: &SparseHashtagVector, a: &SparseHashtagVector, b: &SparseHashtagVector) -> Ordering {
    let (da, db) = (u.dot(a), u.dot(b));
    let lhs = da.checked_mul(da).and_then(|x| x.checked_mul(b.norm_sq));
    let rhs = db.checked_mul(db).and_then(|x| x.checked_mul(a.norm_sq));
    match (lhs, rhs) {
        (Some(l), Some(r)) => l.cmp(&r),
        _ => (da as f64 / a.norm).total_cmp(&(db as f64 / b.norm)),
    }
}

/// Columns of one subspan: `uncategorized` is U, `categorized` is V.
#[derive(Debug, Clone)]
pub struct SimilarityMatrices {
    pub vocabulary: SubspanVocabulary,
    pub uncategorized: Vec<SparseHashtagVector>,
    pub categorized: Vec<(SparseHashtagVector, Category)>,
}

impl SimilarityMatrices {
    pub fn m(&self) -> usize {
        self.vocabulary.m()
    }

    pub fn n(&self) -> usize {
        self.uncategorized.len()
    }

    pub fn k(&self) -> usize {
        self.categorized.len()
    }
}

/// Builds U and V for one subspan over the union vocabulary of every
/// active account. Dimensions follow sorted hashtag order.
pub fn build_vectors(
    subspan: usize,
    usage: &SubspanUsage,
    labels: &BTreeMap<String, Category>,
    mode: VectorMode,
) -> Result<SimilarityMatrices> {
    let mut index = BTreeMap::new();
    for tags in usage.values() {
        for t in tags.keys() {
            index.entry(t.clone()).or_insert(0u32);
        }
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i as u32;
    }
    let mut uncategorized = Vec::new();
    let mut categorized = Vec::new();
    for (account, tags) in usage {
        let entries: Vec<(u32, u64)> = tags
            .iter()
            .map(|(t, &c)| {
                let c = match mode {
                    VectorMode::Counts => c,
                    VectorMode::Binary => u64::from(c > 0),
                };
                (index[t], c)
            })
            .collect();
        let vector = SparseHashtagVector::new(account.clone(), subspan, entries);
        if vector.norm == 0.0 {
            continue;
        }
        match labels.get(account) {
            Some(&c) if c != Category::Uncategorized => categorized.push((vector, c)),
            _ => uncategorized.push(vector),
        }
    }
    if categorized.is_empty() {
        return Err(PropagationError::NoCategorizedActivity(subspan));
    }
    Ok(SimilarityMatrices {
        vocabulary: SubspanVocabulary { subspan, index },
        uncategorized,
        categorized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpermanentEntry {
    pub account_id: String,
    pub subspan: usize,
    pub category: Category,
    pub score: f64,
    pub matched_account: String,
    pub low_confidence: bool,
}

/// Best categorized column for every uncategorized column of a subspan.
pub fn assign_impermanent(matrices: &SimilarityMatrices) -> Result<Vec<ImpermanentEntry>> {
    if matrices.categorized.is_empty() {
        return Err(PropagationError::NoCategorizedActivity(matrices.vocabulary.subspan));
    }
    matrices
        .uncategorized
        .par_iter()
        .map(|u| {
            let mut best: Option<(&SparseHashtagVector, Category)> = None;
            for (v, c) in &matrices.categorized {
                if v.norm_sq == 0 {
                    return Err(PropagationError::ZeroVector(v.account_id.clone()));
                }
                let better = match best {
                    None => true,
                    Some((b, bc)) => match compare_similarity(u, v, b) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => *c < bc || (*c == bc && v.account_id < b.account_id),
                    },
                };
                if better {
                    best = Some((v, *c));
                }
            }
            let (v, category) = best.expect("k >= 1");
            let (score, matched) = (cosine_similarity(u, v)?, v.account_id.as_str());
            Ok(ImpermanentEntry {
                account_id: u.account_id.clone(),
                subspan: u.subspan,
                category,
                score,
                matched_account: matched.to_string(),
                low_confidence: score < LOW_CONFIDENCE_FLOOR,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpermanentAssignment {
    pub account_id: String,
    pub entries: BTreeMap<usize, ImpermanentEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalCategory {
    pub category: Category,
    /// Relative frequency of the mode.
    pub confidence: f64,
    pub mode_count: usize,
    pub entry_count: usize,
}

/// Mode of the impermanent categories across subspans.
pub fn resolve_final(assignment: &ImpermanentAssignment) -> Result<FinalCategory> {
    if assignment.entries.is_empty() {
        return Err(PropagationError::NoEntries(assignment.account_id.clone()));
    }
    let mut scores: [Vec<f64>; Category::COUNT] = Default::default();
    for e in assignment.entries.values() {
        let i = e.category.index().expect("impermanent categories are trainable");
        scores[i].push(e.score);
    }
    let counts = scores.each_ref().map(Vec::len);
    // Sorted summation makes the sum a function of the score multiset alone.
    let sums = scores.map(|mut s| {
        s.sort_by(f64::total_cmp);
        s.into_iter().sum::<f64>()
    });
    let best = (0..Category::COUNT)
        .filter(|&i| counts[i] > 0)
        .max_by(|&a, &b| {
            counts[a]
                .cmp(&counts[b])
                .then(sums[a].total_cmp(&sums[b]))
                .then(b.cmp(&a))
        })
        .expect("non-empty");
    let n = assignment.entries.len();
    Ok(FinalCategory {
        category: Category::from_index(best),
        confidence: counts[best] as f64 / n as f64,
        mode_count: counts[best],
        entry_count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    #[default]
    Single,
    Fixpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub subspan_months: u32,
    pub vector_mode: VectorMode,
    pub mode: PropagationMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            subspan_months: DEFAULT_SUBSPAN_MONTHS,
            vector_mode: VectorMode::Counts,
            mode: PropagationMode::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspanSummary {
    pub index: usize,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub round: usize,
    pub n_uncategorized: usize,
    pub k_categorized: usize,
    pub m_vocabulary: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailEntry {
    pub subspan: usize,
    pub category: Category,
    pub score: f64,
    pub matched_account: String,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountTrail {
    pub category: Category,
    pub confidence: f64,
    pub round: usize,
    pub trail: Vec<TrailEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub config: PropagationConfig,
    pub subspan_count: usize,
    pub rounds: usize,
    pub labeled_before: usize,
    pub propagated: usize,
    pub labeled_after: usize,
    pub uncategorized_after: usize,
    pub propagated_by_category: BTreeMap<Category, usize>,
    pub subspans: Vec<SubspanSummary>,
    /// Every account that entered propagation unlabeled.
    pub accounts: BTreeMap<String, AccountTrail>,
}

/// Runs propagation over `dataset`, returning the enlarged label set.
pub fn propagate(
    dataset: &Dataset,
    seeds: &SeedLabelSet,
    config: &PropagationConfig,
) -> Result<(SeedLabelSet, PropagationReport)> {
    let subspans = partition_subspans(dataset, config.subspan_months)?;
    let usage = collect_usage(dataset, &subspans)?;
    let mut labels = seeds.clone();
    let mut report = PropagationReport {
        config: *config,
        subspan_count: subspans.len(),
        rounds: 0,
        labeled_before: seeds.len(),
        propagated: 0,
        labeled_after: 0,
        uncategorized_after: 0,
        propagated_by_category: BTreeMap::new(),
        subspans: Vec::new(),
        accounts: BTreeMap::new(),
    };
    let max_rounds = match config.mode {
        PropagationMode::Single => 1,
        PropagationMode::Fixpoint => MAX_FIXPOINT_ROUNDS,
    };
    for round in 1..=max_rounds {
        let known = labels.categories();
        let per_subspan: Vec<(SubspanSummary, Vec<ImpermanentEntry>)> = subspans
            .par_iter()
            .zip(usage.par_iter())
            .map(|(sp, u)| {
                let mut summary = SubspanSummary {
                    index: sp.index,
                    start: sp.start,
                    end: sp.end,
                    round,
                    n_uncategorized: 0,
                    k_categorized: 0,
                    m_vocabulary: 0,
                    skipped: false,
                };
                match build_vectors(sp.index, u, &known, config.vector_mode) {
                    Ok(m) => {
                        summary.n_uncategorized = m.n();
                        summary.k_categorized = m.k();
                        summary.m_vocabulary = m.m();
                        Ok((summary, assign_impermanent(&m)?))
                    }
                    Err(PropagationError::NoCategorizedActivity(i)) => {
                        log::debug!("subspan {i} skipped: no categorized activity");
                        summary.skipped = true;
                        summary.n_uncategorized = u.keys().filter(|a| !known.contains_key(*a)).count();
                        Ok((summary, Vec::new()))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;

        let mut assignments: BTreeMap<String, ImpermanentAssignment> = BTreeMap::new();
        for (summary, entries) in per_subspan {
            report.subspans.push(summary);
            for e in entries {
                assignments
                    .entry(e.account_id.clone())
                    .or_insert_with(|| ImpermanentAssignment {
                        account_id: e.account_id.clone(),
                        entries: BTreeMap::new(),
                    })
                    .entries
                    .insert(e.subspan, e);
            }
        }
        report.rounds = round;
        let mut added = 0;
        for (account, assignment) in assignments {
            let fin = resolve_final(&assignment)?;
            labels.insert(&account, fin.category, Provenance::Propagated)?;
            *report.propagated_by_category.entry(fin.category).or_default() += 1;
            report.accounts.insert(
                account,
                AccountTrail {
                    category: fin.category,
                    confidence: fin.confidence,
                    round,
                    trail: assignment
                        .entries
                        .into_values()
                        .map(|e| TrailEntry {
                            subspan: e.subspan,
                            category: e.category,
                            score: e.score,
                            matched_account: e.matched_account,
                            low_confidence: e.low_confidence,
                        })
                        .collect(),
                },
            );
            added += 1;
        }
        report.propagated += added;
        if added == 0 {
            break;
        }
    }
    for id in dataset.accounts().keys() {
        if !labels.contains(id) {
            report.accounts.insert(
                id.clone(),
                AccountTrail {
                    category: Category::Uncategorized,
                    confidence: 0.0,
                    round: 0,
                    trail: Vec::new(),
                },
            );
        }
    }
    report.labeled_after = labels.len();
    report.uncategorized_after = dataset.accounts().len() - labels.len();
    debug_assert_eq!(report.labeled_before + report.propagated, report.labeled_after);
    Ok((labels, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_reader, IngestOptions, Schema};
    use chrono::TimeZone;

    fn day(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).unwrap()
    }

    fn v(id: &str, dense: &[u64]) -> SparseHashtagVector {
        SparseHashtagVector::from_dense(id, 0, dense)
    }

    /// Months between two first-of-month dates, rounded up to whole windows.
    fn calendar_windows(start: (i32, u32), end: (i32, u32, u32), width: u32) -> usize {
        let months = (end.0 - start.0) * 12 + end.1 as i32 - start.1 as i32 + i32::from(end.2 > 1);
        (months as u32).div_ceil(width) as usize
    }

    #[test]
    fn exact_division() {
        let s = partition_timeframe(Timeframe::new(day(2015, 1, 1), day(2016, 1, 1)), 6).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].start, day(2015, 7, 1));
        assert_eq!(s[1].end, day(2016, 1, 1));
    }

    #[test]
    fn short_last_window() {
        let s = partition_timeframe(Timeframe::new(day(2015, 1, 1), day(2016, 4, 15)), 6).unwrap();
        assert_eq!(s.len(), calendar_windows((2015, 1), (2016, 4, 15), 6));
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].start, day(2016, 1, 1));
        assert_eq!(s[2].end, day(2016, 4, 15));
        assert_eq!((s[2].end - s[2].start).num_days(), 105);
    }

    #[test]
    fn archive_timeframe_windows() {
        let s = partition_timeframe(Timeframe::new(day(2009, 11, 1), day(2018, 5, 1)), 6).unwrap();
        assert_eq!(s.len(), calendar_windows((2009, 11), (2018, 5, 1), 6));
        assert_eq!(s.len(), 17);
        for w in s.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn width_zero_and_empty() {
        let tf = Timeframe::new(day(2015, 1, 1), day(2016, 1, 1));
        assert!(matches!(
            partition_timeframe(tf, 0),
            Err(PropagationError::InvalidWidth)
        ));
        let (ds, _) = parse_reader("e", "".as_bytes(), IngestOptions::new(Schema::Jsonl)).unwrap();
        assert!(matches!(
            partition_subspans(&ds, 6),
            Err(PropagationError::EmptyDataset)
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_similarity(&v("u", &[1, 0, 2]), &v("v", &[2, 0, 4])).unwrap(),
            1.0
        );
        assert_eq!(cosine_similarity(&v("u", &[1, 0]), &v("v", &[0, 1])).unwrap(), 0.0);
        let s = cosine_similarity(&v("u", &[1, 1, 0]), &v("v", &[1, 0, 1])).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&v("u", &[0, 0]), &v("v", &[1, 0])),
            Err(PropagationError::ZeroVector(_))
        ));
    }

    #[test]
    fn norm_is_cached_sqrt_of_squares() {
        let x = SparseHashtagVector::new("a", 0, vec![(5, 3), (1, 4), (5, 0)]);
        assert_eq!(x.entries(), &[(1, 4), (5, 3)]);
        assert!((x.norm() - 5.0).abs() <= 5.0 * 1e-12);
    }

    fn usage(rows: &[(&str, &[(&str, u64)])]) -> SubspanUsage {
        rows.iter()
            .map(|(a, tags)| (a.to_string(), tags.iter().map(|(t, c)| (t.to_string(), *c)).collect()))
            .collect()
    }

    #[test]
    fn blueprint_vector_has_exactly_the_used_dimensions() {
        let u = usage(&[
            (
                "Rita_Hart",
                &[
                    ("ihavearighttoknow", 2),
                    ("itsriskyto", 1),
                    ("giftideasforpoliticians", 1),
                ],
            ),
            (
                "hashed",
                &[("sports", 1), ("entertainment", 1), ("news", 3), ("health", 1)],
            ),
        ]);
        let labels = BTreeMap::from([("Rita_Hart".to_string(), Category::PoliticalAffiliates)]);
        let m = build_vectors(0, &u, &labels, VectorMode::Counts).unwrap();
        assert_eq!(m.m(), 7);
        let rita = &m.categorized[0].0;
        let dims: Vec<&str> = rita
            .entries()
            .iter()
            .map(|(d, _)| m.vocabulary.index.iter().find(|(_, i)| *i == d).unwrap().0.as_str())
            .collect();
        assert_eq!(dims, ["giftideasforpoliticians", "ihavearighttoknow", "itsriskyto"]);
    }

    #[test]
    fn hand_built_matrices() {
        let u = usage(&[
            ("l1", &[("a", 2), ("b", 1)]),
            ("l2", &[("c", 1), ("d", 3)]),
            ("x", &[("a", 2), ("d", 1)]),
        ]);
        let labels = BTreeMap::from([
            ("l1".to_string(), Category::FakeNews),
            ("l2".to_string(), Category::Organizations),
        ]);
        let m = build_vectors(0, &u, &labels, VectorMode::Counts).unwrap();
        assert_eq!((m.m(), m.n(), m.k()), (4, 1, 2));
        assert_eq!(m.categorized[0].0.entries(), &[(0, 2), (1, 1)]);
        assert_eq!(m.categorized[1].0.entries(), &[(2, 1), (3, 3)]);
        assert_eq!(m.uncategorized[0].entries(), &[(0, 2), (3, 1)]);
        // x·l1 = 4, |x| = √5, |l1| = √5 ; x·l2 = 3, |l2| = √10
        let e = assign_impermanent(&m).unwrap();
        let s1 = 4.0 / 5.0;
        let s2 = 3.0 / (5f64.sqrt() * 10f64.sqrt());
        assert!(s1 > s2);
        assert_eq!(e[0].category, Category::FakeNews);
        assert!((e[0].score - s1).abs() < 1e-12);

        let bin = build_vectors(0, &u, &labels, VectorMode::Binary).unwrap();
        assert_eq!(bin.categorized[1].0.entries(), &[(2, 1), (3, 1)]);
    }

    #[test]
    fn silent_and_unlabeled_only_subspans() {
        let u = usage(&[("x", &[("a", 1)])]);
        assert!(matches!(
            build_vectors(3, &u, &BTreeMap::new(), VectorMode::Counts),
            Err(PropagationError::NoCategorizedActivity(3))
        ));
    }

    #[test]
    fn self_match_and_orthogonal() {
        let u = usage(&[
            ("fn", &[("news", 2), ("topnews", 1)]),
            ("pa", &[("maga", 1)]),
            ("twin", &[("news", 2), ("topnews", 1)]),
            ("loner", &[("cats", 4)]),
        ]);
        let labels = BTreeMap::from([
            ("fn".to_string(), Category::FakeNews),
            ("pa".to_string(), Category::PoliticalAffiliates),
        ]);
        let e = assign_impermanent(&build_vectors(0, &u, &labels, VectorMode::Counts).unwrap()).unwrap();
        let loner = e.iter().find(|x| x.account_id == "loner").unwrap();
        assert_eq!(loner.score, 0.0);
        assert_eq!(loner.category, Category::FakeNews);
        assert!(loner.low_confidence);
        let twin = e.iter().find(|x| x.account_id == "twin").unwrap();
        assert_eq!(
            (twin.category, twin.score, twin.low_confidence),
            (Category::FakeNews, 1.0, false)
        );
        assert_eq!(twin.matched_account, "fn");
    }

    fn entry(sp: usize, c: Category, score: f64) -> ImpermanentEntry {
        ImpermanentEntry {
            account_id: "a".into(),
            subspan: sp,
            category: c,
            score,
            matched_account: "m".into(),
            low_confidence: score < LOW_CONFIDENCE_FLOOR,
        }
    }

    fn assignment(entries: Vec<ImpermanentEntry>) -> ImpermanentAssignment {
        ImpermanentAssignment {
            account_id: "a".into(),
            entries: entries.into_iter().map(|e| (e.subspan, e)).collect(),
        }
    }

    #[test]
    fn mode_resolution() {
        use Category::*;
        let f = resolve_final(&assignment(vec![
            entry(1, PoliticalAffiliates, 0.4),
            entry(2, PoliticalAffiliates, 0.3),
            entry(3, DefaultIndividuals, 0.9),
        ]))
        .unwrap();
        assert_eq!(f.category, PoliticalAffiliates);
        assert!((f.confidence - 2.0 / 3.0).abs() < 1e-15);

        let f = resolve_final(&assignment(vec![entry(1, FakeNews, 0.2)])).unwrap();
        assert_eq!((f.category, f.confidence), (FakeNews, 1.0));

        // Equal counts: larger summed similarity wins.
        let f = resolve_final(&assignment(vec![
            entry(1, PoliticalAffiliates, 0.2),
            entry(2, DefaultIndividuals, 0.7),
        ]))
        .unwrap();
        assert_eq!(f.category, DefaultIndividuals);
        // Equal counts and sums: category order.
        let f = resolve_final(&assignment(vec![
            entry(1, DefaultIndividuals, 0.5),
            entry(2, PoliticalAffiliates, 0.5),
        ]))
        .unwrap();
        assert_eq!(f.category, PoliticalAffiliates);

        assert!(matches!(
            resolve_final(&assignment(vec![])),
            Err(PropagationError::NoEntries(_))
        ));
    }

    fn tweet(account: &str, t: DateTime<Utc>, text: &str) -> String {
        serde_json::json!({
            "account_id": account, "timestamp": t.to_rfc3339(), "text": text,
            "is_retweet": false, "is_reply": false, "like_count": 0,
            "follower_count_at_tweet": 0, "following_count_at_tweet": 0, "language_tag": "en",
        })
        .to_string()
    }

    #[test]
    fn end_to_end_single_and_fixpoint() {
        // `late` only overlaps `bridge`, which is itself unlabeled until round 1 resolves it.
        let lines = [
            tweet("fn", day(2016, 1, 2), "#news #topnews"),
            tweet("pa", day(2016, 1, 3), "#maga #tcot"),
            tweet("bridge", day(2016, 1, 4), "#maga"),
            tweet("bridge", day(2016, 8, 4), "#rare"),
            tweet("late", day(2016, 8, 5), "#rare #rare"),
            tweet("quiet", day(2016, 8, 6), "no tags"),
        ];
        let (ds, _) = parse_reader("p", lines.join("\n").as_bytes(), IngestOptions::new(Schema::Jsonl)).unwrap();
        let mut seeds = SeedLabelSet::new();
        seeds.insert("fn", Category::FakeNews, Provenance::CodedFile).unwrap();
        seeds
            .insert("pa", Category::PoliticalAffiliates, Provenance::CodedFile)
            .unwrap();

        let (single, rep) = propagate(&ds, &seeds, &PropagationConfig::default()).unwrap();
        assert_eq!(rep.subspan_count, 2);
        assert!(rep.subspans[1].skipped);
        assert_eq!(single.category("bridge"), Some(Category::PoliticalAffiliates));
        assert_eq!(single.category("late"), None);
        assert_eq!(rep.accounts["late"].category, Category::Uncategorized);
        assert_eq!(rep.accounts["quiet"].category, Category::Uncategorized);
        assert_eq!(rep.labeled_before + rep.propagated, rep.labeled_after);
        assert_eq!(rep.uncategorized_after, 2);

        let cfg = PropagationConfig {
            mode: PropagationMode::Fixpoint,
            ..Default::default()
        };
        let (fix, rep) = propagate(&ds, &seeds, &cfg).unwrap();
        assert_eq!(fix.category("late"), Some(Category::PoliticalAffiliates));
        assert_eq!(fix.get("late").unwrap().provenance, Provenance::Propagated);
        assert_eq!(rep.accounts["late"].round, 2);
        assert_eq!(rep.rounds, 3);
        assert_eq!(fix.category("quiet"), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dense() -> impl Strategy<Value = Vec<u64>> {
            proptest::collection::vec(0u64..5, 6).prop_filter("non-zero", |v| v.iter().any(|&c| c > 0))
        }

        proptest! {
            #[test]
            fn similarity_is_symmetric_scale_invariant_and_bounded(a in dense(), b in dense(), c in 1u64..7) {
                let (u, w) = (v("u", &a), v("w", &b));
                let s = cosine_similarity(&u, &w).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, cosine_similarity(&w, &u).unwrap());
                let scaled: Vec<u64> = a.iter().map(|x| x * c).collect();
                prop_assert!((cosine_similarity(&v("u", &scaled), &w).unwrap() - s).abs() < 1e-12);
            }

            #[test]
            fn scaled_columns_tie_exactly(u in dense(), b in dense(), c in 2u64..9) {
                let (u, b1) = (v("u", &u), v("b1", &b));
                let b2 = v("b2", &b.iter().map(|x| x * c).collect::<Vec<_>>());
                prop_assert_eq!(compare_similarity(&u, &b1, &b2), Ordering::Equal);
                let m = SimilarityMatrices {
                    vocabulary: SubspanVocabulary { subspan: 0, index: BTreeMap::new() },
                    uncategorized: vec![u],
                    categorized: vec![(b2, Category::Organizations), (b1, Category::FakeNews)],
                };
                let e = &assign_impermanent(&m).unwrap()[0];
                prop_assert_eq!(e.category, Category::FakeNews);
                prop_assert_eq!(e.matched_account.as_str(), "b1");
            }

            #[test]
            fn assignments_ignore_column_order(
                labeled in proptest::collection::vec((dense(), 0usize..4), 1..6),
                unlabeled in proptest::collection::vec(dense(), 1..4),
                perm_seed in any::<u64>(),
            ) {
                let tags = ["a", "b", "c", "d", "e", "f"];
                let to_map = |d: &Vec<u64>| d.iter().enumerate().filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (tags[i].to_string(), c)).collect::<BTreeMap<_, _>>();
                let mut usage = SubspanUsage::new();
                let mut labels = BTreeMap::new();
                for (i, (d, c)) in labeled.iter().enumerate() {
                    usage.insert(format!("l{i}"), to_map(d));
                    labels.insert(format!("l{i}"), Category::from_index(*c));
                }
                for (i, d) in unlabeled.iter().enumerate() {
                    usage.insert(format!("u{i}"), to_map(d));
                }
                let m = build_vectors(0, &usage, &labels, VectorMode::Counts).unwrap();
                let base = assign_impermanent(&m).unwrap();
                let mut shuffled = m.clone();
                let n = shuffled.categorized.len();
                let mut s = perm_seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                    shuffled.categorized.swap(i, (s >> 33) as usize % (i + 1));
                }
                prop_assert_eq!(&base, &assign_impermanent(&shuffled).unwrap());

                // Scaling an account's counts changes no assignment.
                let mut scaled = usage.clone();
                for c in scaled.get_mut("u0").unwrap().values_mut() { *c *= 3; }
                let again = assign_impermanent(&build_vectors(0, &scaled, &labels, VectorMode::Counts).unwrap()).unwrap();
                prop_assert_eq!(base[0].category, again[0].category);
                prop_assert!((base[0].score - again[0].score).abs() < 1e-12);
            }

            #[test]
            fn resolution_ignores_entry_order(
                raw in proptest::collection::vec((0usize..4, 0u32..=20), 1..8),
            ) {
                let n = raw.len();
                let entries: Vec<ImpermanentEntry> = raw.iter().enumerate()
                    .map(|(i, (c, s))| entry(i, Category::from_index(*c), *s as f64 / 20.0)).collect();
                let rev: Vec<ImpermanentEntry> = raw.iter().enumerate()
                    .map(|(i, (c, s))| entry(n - 1 - i, Category::from_index(*c), *s as f64 / 20.0)).collect();
                let a = resolve_final(&assignment(entries)).unwrap();
                let b = resolve_final(&assignment(rev)).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
