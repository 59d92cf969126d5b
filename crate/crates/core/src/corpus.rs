//! Streaming ingestion of tweet archives.
//!
//! Three input layouts are supported: the tab-separated archive release
//! (`alliance-tsv`), the comma-separated research release (`linvill-csv`)
//! and the canonical JSON-lines interchange format (`jsonl`) whose field
//! names are exactly the [`TweetRecord`] field names.
//!
//! Rows are read one at a time. Per-account aggregates are accumulated as
//! rows arrive and the accepted tweets go to a [`TweetStore`] that keeps at
//! most `buffer_cap` records in memory and spills the rest to a temporary
//! JSON-lines file.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use thiserror::Error;

pub const DEFAULT_BUFFER_CAP: usize = 100_000;
pub const DEFAULT_HASH_PATTERN: &str = r"^[0-9A-Fa-f]{16,}$";
const MAX_REJECT_EXAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("header does not match schema {schema}: missing column(s) {missing:?}")]
    SchemaMismatch { schema: Schema, missing: Vec<String> },
    #[error("unknown schema {0:?} (expected alliance-tsv, linvill-csv or jsonl)")]
    UnknownSchema(String),
    #[error("unknown account {0:?}")]
    UnknownAccount(String),
    #[error("invalid hash pattern: {0}")]
    InvalidPattern(#[from] regex::Error),
    #[error("tweet store i/o: {0}")]
    Store(#[from] io::Error),
    #[error("tweet store record is corrupt: {0}")]
    CorruptStore(#[from] serde_json::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// One archive row after normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub account_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub is_retweet: bool,
    pub is_reply: bool,
    pub like_count: u64,
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub follower_count_at_tweet: u64,
    pub following_count_at_tweet: u64,
    pub language_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountProfile {
    pub account_id: String,
    pub is_hashed: bool,
    pub display_name: Option<String>,
    pub description: Option<String>,
    pub primary_language: String,
    pub first_seen: Option<DateTime<Utc>>,
    pub last_seen: Option<DateTime<Utc>>,
    /// First-seen values of archive columns the data model does not use.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeframe {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Timeframe {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Timeframe { start, end }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schema {
    #[serde(rename = "alliance-tsv")]
    AllianceTsv,
    #[serde(rename = "linvill-csv")]
    LinvillCsv,
    #[serde(rename = "jsonl")]
    Jsonl,
}

impl Schema {
    fn required_columns(self) -> &'static [&'static str] {
        match self {
            Schema::AllianceTsv => &["userid", "tweet_time", "tweet_text"],
            Schema::LinvillCsv => &["external_author_id", "publish_date", "content"],
            Schema::Jsonl => &[],
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            Schema::AllianceTsv => b'\t',
            _ => b',',
        }
    }

    /// Picks the tabular schema whose required columns all appear in `header`.
    pub fn detect(header: &[&str]) -> Option<Schema> {
        [Schema::AllianceTsv, Schema::LinvillCsv]
            .into_iter()
            .find(|s| s.required_columns().iter().all(|c| header.contains(c)))
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::AllianceTsv => "alliance-tsv",
            Schema::LinvillCsv => "linvill-csv",
            Schema::Jsonl => "jsonl",
        })
    }
}

impl FromStr for Schema {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alliance-tsv" | "alliance" => Ok(Schema::AllianceTsv),
            "linvill-csv" | "linvill" => Ok(Schema::LinvillCsv),
            "jsonl" | "canonical" => Ok(Schema::Jsonl),
            _ => Err(CorpusError::UnknownSchema(s.to_string())),
        }
    }
}

fn hashtag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#[\p{L}\p{N}_]+").unwrap())
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@([\p{L}\p{N}_]+)").unwrap())
}

/// Hashtags of `text` in order of appearance, lowercased and without `#`.
/// Duplicates are kept.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    hashtag_regex()
        .find_iter(text)
        .map(|m| m.as_str()[1..].to_lowercase())
        .collect()
}

pub fn extract_mentions(text: &str) -> Vec<String> {
    mention_regex().captures_iter(text).map(|c| c[1].to_string()).collect()
}

/// Normalises a hashtag given explicitly (with or without `#`).
pub fn normalize_hashtag(tag: &str) -> Option<String> {
    let t = tag.trim().trim_start_matches('#').to_lowercase();
    (!t.is_empty()).then_some(t)
}

/// Decides whether a profile was anonymised in the public release.
#[derive(Debug, Clone)]
pub struct HashDetector {
    pattern: Regex,
}

impl HashDetector {
    pub fn new(pattern: &str) -> Result<Self> {
        Ok(HashDetector {
            pattern: Regex::new(pattern)?,
        })
    }

    /// True when the description is absent, blank, or a single opaque token
    /// matching the hash pattern.
    pub fn is_hashed(&self, description: Option<&str>) -> bool {
        match description.map(str::trim) {
            None | Some("") => true,
            Some(d) => !d.chars().any(char::is_whitespace) && self.pattern.is_match(d),
        }
    }
}

impl Default for HashDetector {
    fn default() -> Self {
        HashDetector::new(DEFAULT_HASH_PATTERN).unwrap()
    }
}

pub fn detect_hashed(description: Option<&str>) -> bool {
    HashDetector::default().is_hashed(description)
}

/// Maps language names used by the archives onto short tags.
pub fn normalize_language(lang: &str) -> String {
    let l = lang.trim().to_lowercase();
    match l.as_str() {
        "english" => "en".into(),
        "russian" => "ru".into(),
        "" => "und".into(),
        _ => l,
    }
}

/// Parses the timestamp layouts found across archive releases. Naive
/// timestamps are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    const NAIVE: [&str; 6] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%m/%d/%Y %H:%M:%S",
        "%m/%d/%Y %H:%M",
        "%a %b %d %H:%M:%S +0000 %Y",
    ];
    for f in NAIVE {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "t" | "yes" => Some(true),
        "false" | "0" | "f" | "no" => Some(false),
        _ => None,
    }
}

fn parse_count(s: &str) -> Option<u64> {
    let s = s.trim();
    s.parse::<u64>()
        .ok()
        .or_else(|| s.parse::<f64>().ok().filter(|v| *v >= 0.0).map(|v| v as u64))
}

fn parse_list(s: &str) -> Vec<String> {
    s.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|x| x.trim().trim_matches(|c| c == '\'' || c == '"').to_string())
        .filter(|x| !x.is_empty())
        .collect()
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

/// A row as read from any schema, before validation.
#[derive(Debug, Default, Clone)]
pub struct RawRow {
    pub account_id: Option<String>,
    pub timestamp: Option<String>,
    pub text: String,
    pub is_retweet: Option<bool>,
    pub is_reply: Option<bool>,
    pub like_count: Option<u64>,
    pub hashtags: Option<Vec<String>>,
    pub mentions: Option<Vec<String>>,
    pub follower_count: Option<u64>,
    pub following_count: Option<u64>,
    pub language: Option<String>,
    pub display_name: Option<String>,
    pub description: Option<String>,
    pub extra: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

/// Counts reported after an ingest. Merging two summaries is associative
/// and commutative, so shards may be parsed independently.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: u64,
    pub rows_filtered_language: u64,
    pub rows_rejected: u64,
    pub tweets: u64,
    pub accounts: u64,
    pub hashed_accounts: u64,
    pub rejected_by_reason: BTreeMap<String, u64>,
    pub rejected_examples: Vec<RejectedRow>,
    /// Missing or unparsable numeric fields that were defaulted to zero.
    pub defaulted_fields: BTreeMap<String, u64>,
    pub retweet_flag_explicit: u64,
    pub retweet_flag_heuristic: u64,
    pub reply_flag_explicit: u64,
    pub reply_flag_heuristic: u64,
}

impl IngestSummary {
    fn reject(&mut self, line: u64, reason: &str) {
        self.rows_rejected += 1;
        *self.rejected_by_reason.entry(reason.to_string()).or_default() += 1;
        if self.rejected_examples.len() < MAX_REJECT_EXAMPLES {
            self.rejected_examples.push(RejectedRow {
                line,
                reason: reason.to_string(),
            });
        }
    }

    fn defaulted(&mut self, field: &str) {
        *self.defaulted_fields.entry(field.to_string()).or_default() += 1;
    }

    /// Combines row-level counters of two shards. Account counts are not
    /// additive across shards and are recomputed by the dataset merge.
    pub fn merge(&self, other: &IngestSummary) -> IngestSummary {
        let mut out = self.clone();
        out.rows_read += other.rows_read;
        out.rows_filtered_language += other.rows_filtered_language;
        out.rows_rejected += other.rows_rejected;
        out.tweets += other.tweets;
        out.accounts = out.accounts.max(other.accounts);
        out.hashed_accounts = out.hashed_accounts.max(other.hashed_accounts);
        for (k, v) in &other.rejected_by_reason {
            *out.rejected_by_reason.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.defaulted_fields {
            *out.defaulted_fields.entry(k.clone()).or_default() += v;
        }
        out.rejected_examples.extend(other.rejected_examples.iter().cloned());
        out.rejected_examples
            .sort_by(|a, b| (a.line, &a.reason).cmp(&(b.line, &b.reason)));
        out.rejected_examples.dedup();
        out.rejected_examples.truncate(MAX_REJECT_EXAMPLES);
        out.retweet_flag_explicit += other.retweet_flag_explicit;
        out.retweet_flag_heuristic += other.retweet_flag_heuristic;
        out.reply_flag_explicit += other.reply_flag_explicit;
        out.reply_flag_heuristic += other.reply_flag_heuristic;
        out
    }
}

/// Raw per-account sums accumulated during ingest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccountStats {
    pub tweet_count: u64,
    pub retweet_count: u64,
    pub reply_count: u64,
    pub mention_count: u64,
    pub hashtag_count: u64,
    pub like_count: u64,
    pub followers_sum: u128,
    pub following_sum: u128,
    pub active_days: BTreeSet<i32>,
    pub languages: BTreeMap<String, u64>,
}

impl AccountStats {
    fn add(&mut self, t: &TweetRecord) {
        self.tweet_count += 1;
        self.retweet_count += t.is_retweet as u64;
        self.reply_count += t.is_reply as u64;
        self.mention_count += t.mentions.len() as u64;
        self.hashtag_count += t.hashtags.len() as u64;
        self.like_count += t.like_count;
        self.followers_sum += t.follower_count_at_tweet as u128;
        self.following_sum += t.following_count_at_tweet as u128;
        self.active_days.insert(t.timestamp.date_naive().num_days_from_ce());
        *self.languages.entry(t.language_tag.clone()).or_default() += 1;
    }

    pub fn merge(&mut self, other: &AccountStats) {
        self.tweet_count += other.tweet_count;
        self.retweet_count += other.retweet_count;
        self.reply_count += other.reply_count;
        self.mention_count += other.mention_count;
        self.hashtag_count += other.hashtag_count;
        self.like_count += other.like_count;
        self.followers_sum += other.followers_sum;
        self.following_sum += other.following_sum;
        self.active_days.extend(other.active_days.iter().copied());
        for (k, v) in &other.languages {
            *self.languages.entry(k.clone()).or_default() += v;
        }
    }
}

/// Per-account totals used as behavioural features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountAggregates {
    pub tweet_count: u64,
    pub retweet_count: u64,
    pub mention_count: u64,
    pub hashtag_count: u64,
    pub reply_count: u64,
    pub like_count: u64,
    pub mean_followers: f64,
    pub mean_following: f64,
    pub active_days: u64,
}

impl From<&AccountStats> for AccountAggregates {
    fn from(s: &AccountStats) -> Self {
        let mean = |sum: u128| {
            if s.tweet_count == 0 {
                0.0
            } else {
                sum as f64 / s.tweet_count as f64
            }
        };
        AccountAggregates {
            tweet_count: s.tweet_count,
            retweet_count: s.retweet_count,
            mention_count: s.mention_count,
            hashtag_count: s.hashtag_count,
            reply_count: s.reply_count,
            like_count: s.like_count,
            mean_followers: mean(s.followers_sum),
            mean_following: mean(s.following_sum),
            active_days: s.active_days.len() as u64,
        }
    }
}

/// Append-ordered tweet sequence holding at most `cap` records in memory.
#[derive(Debug)]
pub struct TweetStore {
    buffer: Vec<TweetRecord>,
    cap: usize,
    spill: Option<NamedTempFile>,
    writer: Option<BufWriter<File>>,
    len: u64,
    peak_buffered: usize,
}

impl TweetStore {
    pub fn new(cap: usize) -> Self {
        TweetStore {
            buffer: Vec::new(),
            cap: cap.max(1),
            spill: None,
            writer: None,
            len: 0,
            peak_buffered: 0,
        }
    }

    fn push(&mut self, record: TweetRecord) -> Result<()> {
        if self.buffer.len() >= self.cap {
            self.flush_buffer()?;
        }
        self.buffer.push(record);
        self.len += 1;
        self.peak_buffered = self.peak_buffered.max(self.buffer.len());
        Ok(())
    }

    fn flush_buffer(&mut self) -> Result<()> {
        if self.writer.is_none() {
            let file = NamedTempFile::new()?;
            self.writer = Some(BufWriter::new(file.reopen()?));
            self.spill = Some(file);
        }
        let w = self.writer.as_mut().expect("spill writer");
        for r in self.buffer.drain(..) {
            serde_json::to_writer(&mut *w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn seal(&mut self) -> Result<()> {
        if let Some(mut w) = self.writer.take() {
            w.flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Largest number of records ever held in memory at once.
    pub fn peak_buffered(&self) -> usize {
        self.peak_buffered
    }

    pub fn spilled(&self) -> bool {
        self.spill.is_some()
    }

    pub fn iter(&self) -> Result<TweetIter<'_>> {
        let spill = match &self.spill {
            Some(f) => Some(BufReader::new(f.reopen()?).lines()),
            None => None,
        };
        Ok(TweetIter {
            spill,
            buffer: self.buffer.iter(),
        })
    }
}

pub struct TweetIter<'a> {
    spill: Option<io::Lines<BufReader<File>>>,
    buffer: std::slice::Iter<'a, TweetRecord>,
}

impl Iterator for TweetIter<'_> {
    type Item = Result<TweetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(lines) = &mut self.spill {
            match lines.next() {
                Some(Ok(line)) => return Some(serde_json::from_str(&line).map_err(Into::into)),
                Some(Err(e)) => return Some(Err(e.into())),
                None => self.spill = None,
            }
        }
        self.buffer.next().cloned().map(Ok)
    }
}

/// An ingested archive. Immutable once built.
#[derive(Debug)]
pub struct Dataset {
    pub name: String,
    accounts: BTreeMap<String, AccountProfile>,
    stats: BTreeMap<String, AccountStats>,
    store: TweetStore,
    timeframe: Option<Timeframe>,
}

impl Dataset {
    pub fn accounts(&self) -> &BTreeMap<String, AccountProfile> {
        &self.accounts
    }

    pub fn account(&self, id: &str) -> Option<&AccountProfile> {
        self.accounts.get(id)
    }

    pub fn tweet_count(&self) -> u64 {
        self.store.len()
    }

    pub fn store(&self) -> &TweetStore {
        &self.store
    }

    pub fn tweets(&self) -> Result<TweetIter<'_>> {
        self.store.iter()
    }

    /// Configured timeframe, or the observed `[first, last]` span of tweets
    /// closed by one second past the last tweet.
    pub fn timeframe(&self) -> Option<Timeframe> {
        self.timeframe
    }

    /// Observed first and last tweet instants.
    pub fn observed_span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let first = self.accounts.values().filter_map(|a| a.first_seen).min()?;
        let last = self.accounts.values().filter_map(|a| a.last_seen).max()?;
        Some((first, last))
    }

    pub fn hashed_count(&self) -> usize {
        self.accounts.values().filter(|a| a.is_hashed).count()
    }

    pub fn account_aggregates(&self, id: &str) -> Result<AccountAggregates> {
        self.stats
            .get(id)
            .map(AccountAggregates::from)
            .ok_or_else(|| CorpusError::UnknownAccount(id.to_string()))
    }

    /// Per-account hashtag usage counts over the whole timeframe.
    pub fn hashtag_usage(&self) -> Result<BTreeMap<String, BTreeMap<String, u64>>> {
        let mut out: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for t in self.tweets()? {
            let t = t?;
            if t.hashtags.is_empty() {
                continue;
            }
            let m = out.entry(t.account_id.clone()).or_default();
            for h in t.hashtags {
                *m.entry(h).or_default() += 1;
            }
        }
        Ok(out)
    }

    /// Writes the canonical JSON-lines form. Profile fields ride on each
    /// account's first emitted tweet.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut seen = HashSet::new();
        for t in self.tweets()? {
            let t = t?;
            let mut v = serde_json::to_value(&t)?;
            if seen.insert(t.account_id.clone()) {
                if let Some(p) = self.accounts.get(&t.account_id) {
                    let obj = v.as_object_mut().expect("record serialises to an object");
                    if let Some(d) = &p.display_name {
                        obj.insert("display_name".into(), d.clone().into());
                    }
                    if let Some(d) = &p.description {
                        obj.insert("description".into(), d.clone().into());
                    }
                }
            }
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub schema: Schema,
    pub language_filter: Option<String>,
    pub timeframe: Option<Timeframe>,
    pub buffer_cap: usize,
    pub hash_detector: HashDetector,
}

impl IngestOptions {
    pub fn new(schema: Schema) -> Self {
        IngestOptions {
            schema,
            language_filter: None,
            timeframe: None,
            buffer_cap: DEFAULT_BUFFER_CAP,
            hash_detector: HashDetector::default(),
        }
    }

    pub fn language(mut self, lang: impl Into<String>) -> Self {
        self.language_filter = Some(lang.into());
        self
    }
}

#[derive(Debug, Default)]
struct PendingAccount {
    display_name: Option<String>,
    description: Option<String>,
    first_seen: Option<DateTime<Utc>>,
    last_seen: Option<DateTime<Utc>>,
    metadata: BTreeMap<String, String>,
}

/// Incremental dataset construction shared by all schema readers.
pub struct DatasetBuilder {
    name: String,
    options: IngestOptions,
    language_filter: Option<String>,
    pending: BTreeMap<String, PendingAccount>,
    stats: BTreeMap<String, AccountStats>,
    store: TweetStore,
    summary: IngestSummary,
}

impl DatasetBuilder {
    pub fn new(name: impl Into<String>, options: IngestOptions) -> Self {
        let language_filter = options.language_filter.as_deref().map(normalize_language);
        let store = TweetStore::new(options.buffer_cap);
        DatasetBuilder {
            name: name.into(),
            options,
            language_filter,
            pending: BTreeMap::new(),
            stats: BTreeMap::new(),
            store,
            summary: IngestSummary::default(),
        }
    }

    /// Registers an account that may have no tweets.
    pub fn add_account(&mut self, account_id: &str, display_name: Option<String>, description: Option<String>) {
        let p = self.pending.entry(account_id.to_string()).or_default();
        if p.display_name.is_none() {
            p.display_name = non_empty(display_name);
        }
        if p.description.is_none() {
            p.description = non_empty(description);
        }
        self.stats.entry(account_id.to_string()).or_default();
    }

    pub fn push_row(&mut self, line: u64, row: RawRow) -> Result<()> {
        self.summary.rows_read += 1;
        let Some(account_id) = non_empty(row.account_id.clone()) else {
            self.summary.reject(line, "missing_account_id");
            return Ok(());
        };
        let Some(timestamp) = row.timestamp.as_deref().and_then(parse_timestamp) else {
            self.summary.reject(line, "malformed_timestamp");
            return Ok(());
        };
        if let Some(tf) = &self.options.timeframe {
            if !tf.contains(timestamp) {
                self.summary.reject(line, "outside_timeframe");
                return Ok(());
            }
        }
        let language_tag = normalize_language(row.language.as_deref().unwrap_or(""));
        if let Some(filter) = &self.language_filter {
            if &language_tag != filter {
                self.summary.rows_filtered_language += 1;
                return Ok(());
            }
        }

        let is_retweet = match row.is_retweet {
            Some(v) => {
                self.summary.retweet_flag_explicit += 1;
                v
            }
            None => {
                self.summary.retweet_flag_heuristic += 1;
                row.text.trim_start().starts_with("RT @")
            }
        };
        let is_reply = match row.is_reply {
            Some(v) => {
                self.summary.reply_flag_explicit += 1;
                v
            }
            None => {
                self.summary.reply_flag_heuristic += 1;
                !is_retweet && row.text.trim_start().starts_with('@')
            }
        };
        let like_count = row.like_count.unwrap_or_else(|| {
            self.summary.defaulted("like_count");
            0
        });
        let follower_count_at_tweet = row.follower_count.unwrap_or_else(|| {
            self.summary.defaulted("follower_count_at_tweet");
            0
        });
        let following_count_at_tweet = row.following_count.unwrap_or_else(|| {
            self.summary.defaulted("following_count_at_tweet");
            0
        });
        let hashtags = match row.hashtags {
            Some(list) => list.iter().filter_map(|h| normalize_hashtag(h)).collect(),
            None => extract_hashtags(&row.text),
        };
        let mentions = match row.mentions {
            Some(list) if !list.is_empty() => list,
            _ => extract_mentions(&row.text),
        };

        let p = self.pending.entry(account_id.clone()).or_default();
        if p.display_name.is_none() {
            p.display_name = non_empty(row.display_name);
        }
        if p.description.is_none() {
            p.description = non_empty(row.description);
        }
        for (k, v) in row.extra {
            p.metadata.entry(k).or_insert(v);
        }
        p.first_seen = Some(p.first_seen.map_or(timestamp, |f| f.min(timestamp)));
        p.last_seen = Some(p.last_seen.map_or(timestamp, |l| l.max(timestamp)));

        let record = TweetRecord {
            account_id: account_id.clone(),
            timestamp,
            text: row.text,
            is_retweet,
            is_reply,
            like_count,
            hashtags,
            mentions,
            follower_count_at_tweet,
            following_count_at_tweet,
            language_tag,
        };
        self.stats.entry(account_id).or_default().add(&record);
        self.store.push(record)?;
        self.summary.tweets += 1;
        Ok(())
    }

    fn reject_row(&mut self, line: u64, reason: &str) {
        self.summary.rows_read += 1;
        self.summary.reject(line, reason);
    }

    pub fn finish(mut self) -> Result<(Dataset, IngestSummary)> {
        self.store.seal()?;
        let detector = &self.options.hash_detector;
        let mut accounts = BTreeMap::new();
        for (id, p) in self.pending {
            let stats = self.stats.get(&id);
            let primary_language = stats
                .and_then(|s| {
                    s.languages
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map(|(l, _)| l.clone())
                })
                .unwrap_or_else(|| "und".to_string());
            let is_hashed = detector.is_hashed(p.description.as_deref());
            accounts.insert(
                id.clone(),
                AccountProfile {
                    account_id: id,
                    is_hashed,
                    display_name: p.display_name,
                    description: p.description,
                    primary_language,
                    first_seen: p.first_seen,
                    last_seen: p.last_seen,
                    metadata: p.metadata,
                },
            );
        }
        let mut summary = self.summary;
        summary.accounts = accounts.len() as u64;
        summary.hashed_accounts = accounts.values().filter(|a| a.is_hashed).count() as u64;
        let timeframe = self.options.timeframe.or_else(|| {
            let first = accounts.values().filter_map(|a| a.first_seen).min()?;
            let last = accounts.values().filter_map(|a| a.last_seen).max()?;
            Some(Timeframe::new(first, last + chrono::Duration::seconds(1)))
        });
        let dataset = Dataset {
            name: self.name,
            accounts,
            stats: self.stats,
            store: self.store,
            timeframe,
        };
        Ok((dataset, summary))
    }
}

/// Reads an archive from disk.
pub fn parse_archive(path: &Path, options: IngestOptions) -> Result<(Dataset, IngestSummary)> {
    let file = File::open(path).map_err(|source| CorpusError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_reader(name, file, options)
}

pub fn parse_reader<R: Read>(
    name: impl Into<String>,
    reader: R,
    options: IngestOptions,
) -> Result<(Dataset, IngestSummary)> {
    let schema = options.schema;
    let mut builder = DatasetBuilder::new(name, options);
    match schema {
        Schema::Jsonl => read_jsonl(reader, &mut builder)?,
        Schema::AllianceTsv | Schema::LinvillCsv => read_tabular(reader, schema, &mut builder)?,
    }
    builder.finish()
}

#[derive(Deserialize)]
struct JsonRow {
    account_id: Option<String>,
    timestamp: Option<String>,
    #[serde(default)]
    text: String,
    is_retweet: Option<bool>,
    is_reply: Option<bool>,
    like_count: Option<u64>,
    hashtags: Option<Vec<String>>,
    mentions: Option<Vec<String>>,
    follower_count_at_tweet: Option<u64>,
    following_count_at_tweet: Option<u64>,
    language_tag: Option<String>,
    display_name: Option<String>,
    description: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn read_jsonl<R: Read>(reader: R, builder: &mut DatasetBuilder) -> Result<()> {
    let reader = BufReader::new(reader);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JsonRow>(&line) {
            Ok(j) => {
                let extra = j
                    .extra
                    .into_iter()
                    .map(|(k, v)| match v {
                        serde_json::Value::String(s) => (k, s),
                        other => (k, other.to_string()),
                    })
                    .collect();
                builder.push_row(
                    lineno,
                    RawRow {
                        account_id: j.account_id,
                        timestamp: j.timestamp,
                        text: j.text,
                        is_retweet: j.is_retweet,
                        is_reply: j.is_reply,
                        like_count: j.like_count,
                        hashtags: j.hashtags,
                        mentions: j.mentions,
                        follower_count: j.follower_count_at_tweet,
                        following_count: j.following_count_at_tweet,
                        language: j.language_tag,
                        display_name: j.display_name,
                        description: j.description,
                        extra,
                    },
                )?;
            }
            Err(_) => builder.reject_row(lineno, "malformed_row"),
        }
    }
    Ok(())
}

/// Column names consumed by each tabular schema. Everything else is kept
/// as account metadata.
fn modeled_columns(schema: Schema) -> &'static [&'static str] {
    match schema {
        Schema::AllianceTsv => &[
            "userid",
            "tweet_time",
            "tweet_text",
            "is_retweet",
            "in_reply_to_tweetid",
            "in_reply_to_userid",
            "like_count",
            "follower_count",
            "following_count",
            "tweet_language",
            "user_display_name",
            "user_profile_description",
            "user_mentions",
            "hashtags",
            "tweetid",
        ],
        Schema::LinvillCsv => &[
            "external_author_id",
            "publish_date",
            "content",
            "retweet",
            "followers",
            "following",
            "language",
            "author",
            "tweet_id",
        ],
        Schema::Jsonl => &[],
    }
}

fn read_tabular<R: Read>(reader: R, schema: Schema, builder: &mut DatasetBuilder) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter())
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(|c| c.trim().to_string()).collect(),
        Err(e) => {
            return Err(CorpusError::SchemaMismatch {
                schema,
                missing: vec![format!("<unreadable header: {e}>")],
            })
        }
    };
    let missing: Vec<String> = schema
        .required_columns()
        .iter()
        .filter(|c| !header.iter().any(|h| h == *c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::SchemaMismatch { schema, missing });
    }
    let col = |name: &str| header.iter().position(|h| h == name);
    let modeled = modeled_columns(schema);
    let extra_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !modeled.contains(&h.as_str()))
        .map(|(i, h)| (i, h.clone()))
        .collect();

    let mut record = csv::StringRecord::new();
    loop {
        let lineno = rdr.position().line() + 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => {
                return Err(match e.into_kind() {
                    csv::ErrorKind::Io(io) => CorpusError::Store(io),
                    _ => unreachable!(),
                })
            }
            Err(_) => {
                builder.reject_row(lineno, "malformed_row");
                continue;
            }
        }
        let get = |name: &str| -> Option<String> { col(name).and_then(|i| record.get(i)).map(|s| s.to_string()) };
        // Present column with an unparsable value counts as missing.
        let count = |name: &str| get(name).as_deref().and_then(parse_count);
        let extra = extra_cols
            .iter()
            .filter_map(|(i, h)| {
                record
                    .get(*i)
                    .filter(|v| !v.is_empty())
                    .map(|v| (h.clone(), v.to_string()))
            })
            .collect();
        let row = match schema {
            Schema::AllianceTsv => RawRow {
                account_id: get("userid"),
                timestamp: get("tweet_time"),
                text: get("tweet_text").unwrap_or_default(),
                is_retweet: get("is_retweet").as_deref().and_then(parse_bool),
                is_reply: if col("in_reply_to_tweetid").is_some() {
                    Some(get("in_reply_to_tweetid").is_some_and(|v| !v.trim().is_empty()))
                } else if col("in_reply_to_userid").is_some() {
                    Some(get("in_reply_to_userid").is_some_and(|v| !v.trim().is_empty()))
                } else {
                    None
                },
                like_count: count("like_count"),
                hashtags: None,
                mentions: get("user_mentions").map(|s| parse_list(&s)),
                follower_count: count("follower_count"),
                following_count: count("following_count"),
                language: get("tweet_language"),
                display_name: get("user_display_name"),
                description: get("user_profile_description"),
                extra,
            },
            Schema::LinvillCsv => RawRow {
                account_id: get("external_author_id"),
                timestamp: get("publish_date"),
                text: get("content").unwrap_or_default(),
                is_retweet: get("retweet").as_deref().and_then(parse_bool),
                is_reply: None,
                like_count: None,
                hashtags: None,
                mentions: None,
                follower_count: count("followers"),
                following_count: count("following"),
                language: get("language"),
                display_name: get("author"),
                description: None,
                extra,
            },
            Schema::Jsonl => unreachable!(),
        };
        builder.push_row(lineno, row)?;
    }
    Ok(())
}
