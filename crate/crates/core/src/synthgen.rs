//! Deterministic synthetic archives with planted categories.
//!
//! Behaviour profiles default to per-tweet ratios of the published
//! per-category totals; hashtag pools start from the bundled footprint
//! table. Counts are Poisson, account-level follower and following levels
//! log-normal with the configured mean.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{Sample, TrainingSet};
use crate::corpus::{CorpusError, Dataset, TweetRecord};
use crate::labeling::{Category, HashtagFootprintTable, Provenance, SeedLabelSet};

const K: usize = Category::COUNT;

/// Reply probability ceiling. One category's published reply total exceeds
/// its tweet total, which no per-tweet probability can reproduce.
pub const MAX_REPLY_PROBABILITY: f64 = 0.95;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Label(#[from] crate::labeling::LabelError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

/// Per-category totals: accounts, tweets, retweets, mentions, mean
/// followers, mean following, hashtags, replies, likes.
pub const DESCRIPTIVE_TOTALS: [[f64; 9]; K] = [
    [
        136.0, 91_539.0, 78_036.0, 119_093.0, 9_137.65, 3_858.04, 116_919.0, 5_348.0, 39_073.0,
    ],
    [
        101.0, 158_605.0, 44_529.0, 63_172.0, 27_593.52, 6_364.18, 129_838.0, 7_508.0, 78_892.0,
    ],
    [
        595.0,
        323_714.0,
        162_419.0,
        594_701.0,
        5_126.85,
        3_144.11,
        273_813.0,
        196_641.0,
        6_487_172.0,
    ],
    [
        2_000.0,
        1_337_698.0,
        795_594.0,
        1_425_592.0,
        11_339.62,
        5_601.21,
        1_474_905.0,
        1_490_090.0,
        23_487_246.0,
    ],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorProfile {
    /// Mean tweets per account before `volume_scale`.
    pub mean_tweets: f64,
    pub retweet_ratio: f64,
    pub reply_ratio: f64,
    pub hashtags_per_tweet: f64,
    pub mentions_per_tweet: f64,
    pub likes_per_tweet: f64,
    pub mean_followers: f64,
    pub mean_following: f64,
}

impl BehaviorProfile {
    pub fn from_totals(t: &[f64; 9]) -> Self {
        let tweets = t[1];
        BehaviorProfile {
            mean_tweets: tweets / t[0],
            retweet_ratio: t[2] / tweets,
            reply_ratio: (t[7] / tweets).min(MAX_REPLY_PROBABILITY),
            hashtags_per_tweet: t[6] / tweets,
            mentions_per_tweet: t[3] / tweets,
            likes_per_tweet: t[8] / tweets,
            mean_followers: t[4],
            mean_following: t[5],
        }
    }

    pub fn defaults() -> [BehaviorProfile; K] {
        DESCRIPTIVE_TOTALS.each_ref().map(Self::from_totals)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashtagPool {
    pub tags: Vec<String>,
    /// Relative draw weights; empty means Zipf (1/rank).
    #[serde(default)]
    pub weights: Vec<f64>,
}

impl HashtagPool {
    fn weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            (1..=self.tags.len()).map(|r| 1.0 / r as f64).collect()
        } else {
            self.weights.clone()
        }
    }
}

const EXTRA_TAGS: [[&str; 6]; K] = [
    [
        "breakingnews",
        "worldnews",
        "headlines",
        "newsalert",
        "dailynews",
        "pressrelease",
    ],
    ["community", "volunteer", "nonprofit", "rally", "solidarity", "charity"],
    ["gop", "vote", "election", "liberty", "freedom", "secondamendment"],
    ["coffee", "weekend", "mood", "photography", "travel", "foodie"],
];

/// Generator-specific tags followed by the footprint-table tags of each
/// category.
pub fn default_pools() -> [HashtagPool; K] {
    let table = HashtagFootprintTable::default_table();
    std::array::from_fn(|c| {
        let cat = Category::from_index(c);
        let mut tags: Vec<String> = EXTRA_TAGS[c].iter().map(|t| t.to_string()).collect();
        tags.extend(table.iter().filter(|(_, tc)| *tc == cat).map(|(t, _)| t.to_string()));
        HashtagPool {
            tags,
            weights: Vec::new(),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub accounts_per_category: [usize; K],
    pub hashed_fraction: [f64; K],
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Multiplies every profile's mean tweet count.
    pub volume_scale: f64,
    /// Probability that a hashtag draw comes from another category's pool.
    pub noise: f64,
    /// Log-space standard deviation of account follower/following levels.
    pub follower_sigma: f64,
    pub profiles: [BehaviorProfile; K],
    pub pools: [HashtagPool; K],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            accounts_per_category: [100; K],
            hashed_fraction: [0.25; K],
            start: Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
            end: Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
            volume_scale: 0.1,
            noise: 0.1,
            follower_sigma: 0.25,
            profiles: BehaviorProfile::defaults(),
            pools: default_pools(),
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SynthError::InvalidConfig(format!("{name} = {v} outside [0, 1]")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(SynthError::InvalidConfig(format!(
            "{name} = {v} must be finite and non-negative"
        )))
    }
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.end <= self.start {
            return Err(SynthError::InvalidConfig("timeframe end must follow start".into()));
        }
        unit("noise", self.noise)?;
        non_negative("volume_scale", self.volume_scale)?;
        non_negative("follower_sigma", self.follower_sigma)?;
        for c in 0..K {
            let name = Category::from_index(c).token();
            unit(&format!("hashed_fraction.{name}"), self.hashed_fraction[c])?;
            let p = &self.profiles[c];
            unit(&format!("{name}.retweet_ratio"), p.retweet_ratio)?;
            unit(&format!("{name}.reply_ratio"), p.reply_ratio)?;
            for (field, v) in [
                ("mean_tweets", p.mean_tweets),
                ("hashtags_per_tweet", p.hashtags_per_tweet),
                ("mentions_per_tweet", p.mentions_per_tweet),
                ("likes_per_tweet", p.likes_per_tweet),
                ("mean_followers", p.mean_followers),
                ("mean_following", p.mean_following),
            ] {
                non_negative(&format!("{name}.{field}"), v)?;
            }
            let pool = &self.pools[c];
            if pool.tags.is_empty() {
                return Err(SynthError::InvalidConfig(format!("hashtag pool of {name} is empty")));
            }
            if !pool.weights.is_empty()
                && (pool.weights.len() != pool.tags.len()
                    || pool.weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                    || pool.weights.iter().sum::<f64>() <= 0.0)
            {
                return Err(SynthError::InvalidConfig(format!("bad weights for the {name} pool")));
            }
        }
        Ok(())
    }

    pub fn total_accounts(&self) -> usize {
        self.accounts_per_category.iter().sum()
    }

    /// Exact number of hashed accounts per category.
    pub fn hashed_counts(&self) -> [usize; K] {
        std::array::from_fn(|c| (self.accounts_per_category[c] as f64 * self.hashed_fraction[c]).round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, Category>,
}

impl GroundTruth {
    pub fn get(&self, account: &str) -> Option<Category> {
        self.labels.get(account).copied()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["account_id", "category"])?;
        for (id, c) in &self.labels {
            w.write_record([id.as_str(), c.token()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut labels = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or("").to_string();
            let c: Category = rec.get(1).unwrap_or("").parse()?;
            labels.insert(id, c);
        }
        Ok(GroundTruth { labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAccount {
    pub account_id: String,
    pub category: Category,
    pub hashed: bool,
    pub display_name: Option<String>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: GeneratorConfig,
    pub accounts: Vec<SyntheticAccount>,
    /// Sorted by timestamp, then account.
    pub tweets: Vec<TweetRecord>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFiles {
    pub archive: PathBuf,
    pub labels: PathBuf,
    pub truth: PathBuf,
}

impl SyntheticCorpus {
    /// Coded labels for the unhashed accounts.
    pub fn labels(&self) -> SeedLabelSet {
        let mut set = SeedLabelSet::new();
        for a in self.accounts.iter().filter(|a| !a.hashed) {
            set.insert(&a.account_id, a.category, Provenance::CodedFile)
                .expect("generated accounts are unique");
        }
        set
    }

    pub fn hashed_accounts(&self) -> impl Iterator<Item = &SyntheticAccount> {
        self.accounts.iter().filter(|a| a.hashed)
    }

    /// Canonical JSONL; each account's first line carries its profile.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let profiles: BTreeMap<&str, &SyntheticAccount> =
            self.accounts.iter().map(|a| (a.account_id.as_str(), a)).collect();
        let mut seen = BTreeSet::new();
        for t in &self.tweets {
            let mut v = serde_json::to_value(t)?;
            if seen.insert(t.account_id.as_str()) {
                let a = profiles[t.account_id.as_str()];
                let obj = v.as_object_mut().expect("tweet serialises to an object");
                if let Some(n) = &a.display_name {
                    obj.insert("display_name".into(), n.clone().into());
                }
                if let Some(d) = &a.description {
                    obj.insert("description".into(), d.clone().into());
                }
            }
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// `account_id,category` rows for unhashed accounts.
    pub fn write_labels_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["account_id", "category"])?;
        for a in self.accounts.iter().filter(|a| !a.hashed) {
            w.write_record([a.account_id.as_str(), a.category.token()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `corpus.jsonl`, `labels.csv` and `ground_truth.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<GeneratedFiles> {
        fs::create_dir_all(dir)?;
        let files = GeneratedFiles {
            archive: dir.join("corpus.jsonl"),
            labels: dir.join("labels.csv"),
            truth: dir.join("ground_truth.csv"),
        };
        self.write_jsonl(io::BufWriter::new(fs::File::create(&files.archive)?))?;
        self.write_labels_csv(fs::File::create(&files.labels)?)?;
        self.truth.write_csv(fs::File::create(&files.truth)?)?;
        Ok(files)
    }
}

const CITIES: [&str; 8] = [
    "Chester",
    "Austin",
    "Atlanta",
    "Denver",
    "Cleveland",
    "Tampa",
    "Memphis",
    "Phoenix",
];
const FILLER: [&str; 16] = [
    "today", "people", "really", "think", "great", "time", "never", "world", "watch", "new", "life", "day", "just",
    "read", "more", "here",
];
const ID_PREFIX: [&str; K] = ["newsdesk", "org", "patriot", "user"];

fn description(c: usize, rng: &mut ChaCha8Rng) -> String {
    let city = CITIES[rng.random_range(0..CITIES.len())];
    let options: [String; 3] = match c {
        0 => [
            format!("Breaking news from {city}"),
            format!("Local news and stories for {city}"),
            "Your source for the latest news".to_string(),
        ],
        1 => [
            format!("We are a nonprofit organization in {city}"),
            format!("Official account of the {city} community club"),
            "Grassroots movement for justice and equality".to_string(),
        ],
        2 => [
            "Conservative. Patriot. 2nd Amendment.".to_string(),
            format!("Proud liberal from {city}, fighting for progress"),
            "Politics junkie. Vote them out.".to_string(),
        ],
        _ => [
            format!("Music lover and coffee addict. {city}"),
            "Mom of two, dog person".to_string(),
            format!("Just living life in {city}"),
        ],
    };
    options[rng.random_range(0..3)].clone()
}

fn hex_id(rng: &mut ChaCha8Rng) -> String {
    (0..32)
        .map(|_| char::from_digit(rng.random_range(0..16u32), 16).unwrap())
        .collect()
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Log-normal draw with the given arithmetic mean.
fn lognormal_level(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if sigma == 0.0 {
        return mean.round() as u64;
    }
    let d = LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma).expect("valid log-normal");
    d.sample(rng).round() as u64
}

/// Generates a corpus. The output is a pure function of the config.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samplers: Vec<WeightedIndex<f64>> = config
        .pools
        .iter()
        .map(|p| WeightedIndex::new(p.weights()).expect("validated weights"))
        .collect();
    let span = (config.end - config.start).num_seconds().max(1);
    let hashed_counts = config.hashed_counts();

    let mut accounts = Vec::with_capacity(config.total_accounts());
    let mut tweets = Vec::new();
    let mut used_ids = BTreeSet::new();
    for c in 0..K {
        let profile = &config.profiles[c];
        for i in 0..config.accounts_per_category[c] {
            let hashed = i < hashed_counts[c];
            let account_id = if hashed {
                loop {
                    let id = hex_id(&mut rng);
                    if !used_ids.contains(&id) {
                        break id;
                    }
                }
            } else {
                format!("{}_{:04}", ID_PREFIX[c], i)
            };
            used_ids.insert(account_id.clone());
            let (display_name, description) = if hashed {
                (None, None)
            } else {
                (Some(format!("{} {}", ID_PREFIX[c], i)), Some(description(c, &mut rng)))
            };
            let followers = lognormal_level(&mut rng, profile.mean_followers, config.follower_sigma);
            let following = lognormal_level(&mut rng, profile.mean_following, config.follower_sigma);
            let n_tweets = poisson(&mut rng, profile.mean_tweets * config.volume_scale).max(1);
            for _ in 0..n_tweets {
                let timestamp = config.start + chrono::Duration::seconds(rng.random_range(0..span));
                let is_retweet = rng.random_bool(profile.retweet_ratio);
                let is_reply = rng.random_bool(profile.reply_ratio);
                let hashtags: Vec<String> = (0..poisson(&mut rng, profile.hashtags_per_tweet))
                    .map(|_| {
                        let pool = if config.noise > 0.0 && rng.random_bool(config.noise) {
                            let other = rng.random_range(0..K - 1);
                            if other >= c {
                                other + 1
                            } else {
                                other
                            }
                        } else {
                            c
                        };
                        config.pools[pool].tags[samplers[pool].sample(&mut rng)].clone()
                    })
                    .collect();
                let mentions: Vec<String> = (0..poisson(&mut rng, profile.mentions_per_tweet))
                    .map(|_| format!("handle{}", rng.random_range(0..500)))
                    .collect();
                let like_count = poisson(&mut rng, profile.likes_per_tweet);
                let words: Vec<&str> = (0..rng.random_range(3..9))
                    .map(|_| FILLER[rng.random_range(0..FILLER.len())])
                    .collect();
                let mut text = String::new();
                if is_retweet {
                    text.push_str("RT ");
                }
                text.push_str(&words.join(" "));
                for m in &mentions {
                    text.push_str(" @");
                    text.push_str(m);
                }
                for h in &hashtags {
                    text.push_str(" #");
                    text.push_str(h);
                }
                tweets.push(TweetRecord {
                    account_id: account_id.clone(),
                    timestamp,
                    text,
                    is_retweet,
                    is_reply,
                    like_count,
                    hashtags,
                    mentions,
                    follower_count_at_tweet: followers,
                    following_count_at_tweet: following,
                    language_tag: "en".into(),
                });
            }
            accounts.push(SyntheticAccount {
                account_id,
                category: Category::from_index(c),
                hashed,
                display_name,
                description,
            });
        }
    }
    // Stable sort keeps per-account generation order for equal keys.
    tweets.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.account_id.cmp(&b.account_id))
    });
    let truth = GroundTruth {
        labels: accounts.iter().map(|a| (a.account_id.clone(), a.category)).collect(),
    };
    Ok(SyntheticCorpus {
        config: config.clone(),
        accounts,
        tweets,
        truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatCheck {
    pub category: Category,
    pub statistic: String,
    pub expected: f64,
    pub observed: f64,
    pub standard_error: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<StatCheck>,
    pub flags: Vec<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flag_rate(&self) -> f64 {
        if self.checks.is_empty() {
            0.0
        } else {
            self.checks.iter().filter(|c| c.flagged).count() as f64 / self.checks.len() as f64
        }
    }
}

/// Z-score bound used by [`verify_generation`].
pub const VERIFY_SIGMAS: f64 = 3.0;

/// Compares empirical per-category statistics of an ingested archive with
/// the configuration, flagging any that stray more than three standard
/// errors. Also checks that each category draws its hashtags from its own
/// pool at the configured rate.
pub fn verify_generation(
    dataset: &Dataset,
    truth: &GroundTruth,
    config: &GeneratorConfig,
) -> Result<VerificationReport> {
    let usage = dataset.hashtag_usage()?;
    let pools: Vec<BTreeSet<&str>> = config
        .pools
        .iter()
        .map(|p| p.tags.iter().map(String::as_str).collect())
        .collect();
    let mut checks = Vec::new();
    for (c, pool) in pools.iter().enumerate() {
        let category = Category::from_index(c);
        let members: Vec<&str> = truth
            .labels
            .iter()
            .filter(|(id, cat)| **cat == category && dataset.account(id).is_some())
            .map(|(id, _)| id.as_str())
            .collect();
        if members.is_empty() {
            continue;
        }
        let aggs = members
            .iter()
            .map(|id| dataset.account_aggregates(id))
            .collect::<Result<Vec<_>, _>>()?;
        let n = aggs.len() as f64;
        let tweets: u64 = aggs.iter().map(|a| a.tweet_count).sum();
        let nt = tweets as f64;
        let p = &config.profiles[c];
        let mut check = |statistic: &str, expected: f64, observed: f64, se: f64, one_sided: bool| {
            let dev = if one_sided {
                expected - observed
            } else {
                (observed - expected).abs()
            };
            let flagged = if se > 0.0 {
                dev > VERIFY_SIGMAS * se
            } else {
                dev > 1e-12
            };
            checks.push(StatCheck {
                category,
                statistic: statistic.into(),
                expected,
                observed,
                standard_error: se,
                flagged,
            });
        };
        let lambda = p.mean_tweets * config.volume_scale;
        check("tweets_per_account", lambda, nt / n, (lambda / n).sqrt(), false);
        for (name, prob, count) in [
            (
                "retweet_ratio",
                p.retweet_ratio,
                aggs.iter().map(|a| a.retweet_count).sum::<u64>(),
            ),
            ("reply_ratio", p.reply_ratio, aggs.iter().map(|a| a.reply_count).sum()),
        ] {
            check(name, prob, count as f64 / nt, (prob * (1.0 - prob) / nt).sqrt(), false);
        }
        for (name, rate, count) in [
            (
                "hashtags_per_tweet",
                p.hashtags_per_tweet,
                aggs.iter().map(|a| a.hashtag_count).sum::<u64>(),
            ),
            (
                "mentions_per_tweet",
                p.mentions_per_tweet,
                aggs.iter().map(|a| a.mention_count).sum(),
            ),
            (
                "likes_per_tweet",
                p.likes_per_tweet,
                aggs.iter().map(|a| a.like_count).sum(),
            ),
        ] {
            check(name, rate, count as f64 / nt, (rate / nt).sqrt(), false);
        }
        let cv = (config.follower_sigma.powi(2).exp() - 1.0).sqrt();
        for (name, mean, observed) in [
            (
                "mean_followers",
                p.mean_followers,
                aggs.iter().map(|a| a.mean_followers).sum::<f64>() / n,
            ),
            (
                "mean_following",
                p.mean_following,
                aggs.iter().map(|a| a.mean_following).sum::<f64>() / n,
            ),
        ] {
            // Rounding to whole counts adds at most 0.5 per account.
            check(name, mean, observed, mean * cv / n.sqrt() + 0.5 / n.sqrt(), false);
        }
        let (own, total) = members
            .iter()
            .filter_map(|id| usage.get(*id))
            .flat_map(|tags| tags.iter())
            .fold((0u64, 0u64), |(o, t), (tag, k)| {
                (o + if pool.contains(tag.as_str()) { *k } else { 0 }, t + k)
            });
        if total > 0 {
            let expected = 1.0 - config.noise;
            let se = (expected * (1.0 - expected) / total as f64).sqrt();
            check("pool_purity", expected, own as f64 / total as f64, se, true);
        }
    }
    let flags = checks
        .iter()
        .filter(|c| c.flagged)
        .map(|c| {
            format!(
                "{} {}: observed {:.4}, expected {:.4} (se {:.4})",
                c.category.token(),
                c.statistic,
                c.observed,
                c.expected,
                c.standard_error
            )
        })
        .collect();
    Ok(VerificationReport { checks, flags })
}

/// Labels of a three-level rule over five uniform features. Every leaf of
/// the rule sits at depth 3.
pub fn planted_rule(x: &[f64]) -> Category {
    use Category::*;
    match (x[0] <= 0.5, x[1] <= 0.5, x[2] <= 0.5, x[3] <= 0.5) {
        (true, true, true, _) => FakeNews,
        (true, true, false, _) => Organizations,
        (true, false, _, true) => PoliticalAffiliates,
        (true, false, _, false) => DefaultIndividuals,
        (false, true, true, _) => PoliticalAffiliates,
        (false, false, true, _) => FakeNews,
        (false, _, false, true) => Organizations,
        (false, _, false, false) => DefaultIndividuals,
    }
}

/// `n` samples labelled by [`planted_rule`]; each label is replaced by a
/// different category with probability `label_noise`.
pub fn planted_rule_samples(n: usize, label_noise: f64, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let mut c = planted_rule(&x);
            if rng.random_bool(label_noise) {
                let shift = rng.random_range(1..K);
                c = Category::from_index((c.index().unwrap() + shift) % K);
            }
            Sample::new(format!("r{i:05}"), x, c)
        })
        .collect();
    TrainingSet::new((0..5).map(|i| format!("x{i}")).collect(), samples)
}
