//! Seed categories: coded label files, description rules and hashtag
//! footprints.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset};

pub const DEFAULT_RULES: &str = include_str!("../data/default_rules.toml");
pub const DEFAULT_FOOTPRINTS: &str = include_str!("../data/default_footprints.csv");
pub const DEFAULT_MIN_HITS: u64 = 2;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("unknown category token {0:?}")]
    UnknownCategoryToken(String),
    #[error("account {account:?} labelled both {first} and {second}")]
    DuplicateAccountConflict {
        account: String,
        first: Category,
        second: Category,
    },
    #[error("hashtag {hashtag:?} mapped to both {first} and {second}")]
    FootprintConflict {
        hashtag: String,
        first: Category,
        second: Category,
    },
    #[error("rule file: {0}")]
    RuleSyntax(String),
    #[error("rule pattern {pattern:?}: {source}")]
    RulePattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T, E = LabelError> = std::result::Result<T, E>;

/// The four footprint classes plus the unassigned state. The declaration
/// order is the tie-break order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    FakeNews,
    Organizations,
    PoliticalAffiliates,
    DefaultIndividuals,
    Uncategorized,
}

impl Category {
    /// Categories usable as training labels, in tie-break order.
    pub const ALL: [Category; 4] = [
        Category::FakeNews,
        Category::Organizations,
        Category::PoliticalAffiliates,
        Category::DefaultIndividuals,
    ];
    pub const COUNT: usize = 4;

    /// Position in [`Category::ALL`]; `None` for `Uncategorized`.
    pub fn index(self) -> Option<usize> {
        match self {
            Category::FakeNews => Some(0),
            Category::Organizations => Some(1),
            Category::PoliticalAffiliates => Some(2),
            Category::DefaultIndividuals => Some(3),
            Category::Uncategorized => None,
        }
    }

    pub fn from_index(i: usize) -> Category {
        Category::ALL[i]
    }

    pub fn token(self) -> &'static str {
        match self {
            Category::FakeNews => "FakeNews",
            Category::Organizations => "Organizations",
            Category::PoliticalAffiliates => "PoliticalAffiliates",
            Category::DefaultIndividuals => "DefaultIndividuals",
            Category::Uncategorized => "Uncategorized",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Category::FakeNews => "Fake News",
            Category::Organizations => "Organizations",
            Category::PoliticalAffiliates => "Political Affiliates",
            Category::DefaultIndividuals => "Default Individuals",
            Category::Uncategorized => "Uncategorized",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Category {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "fakenews" | "fn" => Ok(Category::FakeNews),
            "organizations" | "organization" | "org" => Ok(Category::Organizations),
            "politicalaffiliates" | "politicalaffiliate" | "pa" => Ok(Category::PoliticalAffiliates),
            "defaultindividuals" | "defaultindividual" | "di" => Ok(Category::DefaultIndividuals),
            "uncategorized" => Ok(Category::Uncategorized),
            _ => Err(LabelError::UnknownCategoryToken(s.to_string())),
        }
    }
}

/// Where a label came from. Earlier variants take precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    CodedFile,
    DescriptionRule,
    HashtagFootprint,
    Propagated,
}

impl Provenance {
    pub fn token(self) -> &'static str {
        match self {
            Provenance::CodedFile => "coded-file",
            Provenance::DescriptionRule => "description-rule",
            Provenance::HashtagFootprint => "hashtag-footprint",
            Provenance::Propagated => "propagated",
        }
    }
}

impl FromStr for Provenance {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "coded-file" => Ok(Provenance::CodedFile),
            "description-rule" => Ok(Provenance::DescriptionRule),
            "hashtag-footprint" => Ok(Provenance::HashtagFootprint),
            "propagated" => Ok(Provenance::Propagated),
            other => Err(LabelError::RuleSyntax(format!("unknown provenance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLabel {
    pub category: Category,
    pub provenance: Provenance,
}

/// Account labels with provenance. Higher-priority provenance wins;
/// disagreement at equal priority is an error.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLabelSet {
    labels: BTreeMap<String, SeedLabel>,
}

impl SeedLabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, account: &str, category: Category, provenance: Provenance) -> Result<()> {
        if category == Category::Uncategorized {
            return Err(LabelError::UnknownCategoryToken(category.token().to_string()));
        }
        match self.labels.get(account) {
            Some(existing) if existing.provenance < provenance => Ok(()),
            Some(existing) if existing.provenance == provenance && existing.category != category => {
                Err(LabelError::DuplicateAccountConflict {
                    account: account.to_string(),
                    first: existing.category,
                    second: category,
                })
            }
            _ => {
                self.labels
                    .insert(account.to_string(), SeedLabel { category, provenance });
                Ok(())
            }
        }
    }

    pub fn get(&self, account: &str) -> Option<&SeedLabel> {
        self.labels.get(account)
    }

    pub fn category(&self, account: &str) -> Option<Category> {
        self.labels.get(account).map(|l| l.category)
    }

    pub fn contains(&self, account: &str) -> bool {
        self.labels.contains_key(account)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SeedLabel)> {
        self.labels.iter()
    }

    pub fn categories(&self) -> BTreeMap<String, Category> {
        self.labels.iter().map(|(k, v)| (k.clone(), v.category)).collect()
    }

    pub fn count_by_provenance(&self) -> BTreeMap<Provenance, usize> {
        let mut out = BTreeMap::new();
        for l in self.labels.values() {
            *out.entry(l.provenance).or_default() += 1;
        }
        out
    }

    pub fn count_by_category(&self) -> BTreeMap<Category, usize> {
        let mut out = BTreeMap::new();
        for l in self.labels.values() {
            *out.entry(l.category).or_default() += 1;
        }
        out
    }

    /// CSV with `account_id,category,provenance`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["account_id", "category", "provenance"])?;
        for (id, l) in &self.labels {
            w.write_record([id.as_str(), l.category.token(), l.provenance.token()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads what [`SeedLabelSet::write_csv`] wrote; rows without a
    /// provenance column count as coded.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let id_col = column(&header, "account_id")?;
        let cat_col = column(&header, "category")?;
        let prov_col = header.iter().position(|h| h.trim() == "provenance");
        let mut set = SeedLabelSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let category: Category = rec.get(cat_col).unwrap_or("").parse()?;
            let provenance = match prov_col.and_then(|i| rec.get(i)) {
                Some(p) => p.parse()?,
                None => Provenance::CodedFile,
            };
            set.insert(rec.get(id_col).unwrap_or("").trim(), category, provenance)?;
        }
        Ok(set)
    }
}

fn column(header: &csv::StringRecord, name: &'static str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or(LabelError::MissingColumn(name))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLabel {
    pub line: u64,
    pub token: String,
}

#[derive(Debug, Clone, Default)]
pub struct SeedLoad {
    pub labels: SeedLabelSet,
    pub rejected: Vec<RejectedLabel>,
}

/// Loads a coded-labels CSV (`account_id,category`). Rows with unknown
/// category tokens are rejected individually; an account coded with two
/// different categories fails the load.
pub fn load_seed_labels(path: &Path) -> Result<SeedLoad> {
    read_seed_labels(fs::File::open(path)?)
}

pub fn read_seed_labels<R: Read>(input: R) -> Result<SeedLoad> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let id_col = column(&header, "account_id")?;
    let cat_col = column(&header, "category")?;
    let mut load = SeedLoad::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(id_col).unwrap_or("").trim();
        let token = rec.get(cat_col).unwrap_or("").trim();
        let category = match token.parse::<Category>() {
            Ok(c) if c != Category::Uncategorized && !id.is_empty() => c,
            _ => {
                load.rejected.push(RejectedLabel {
                    line,
                    token: token.to_string(),
                });
                continue;
            }
        };
        load.labels.insert(id, category, Provenance::CodedFile)?;
    }
    Ok(load)
}

#[derive(Debug, Clone)]
enum RulePattern {
    Substring(String),
    Regex(Regex),
}

#[derive(Debug, Clone)]
pub struct DescriptionRule {
    source: String,
    pattern: RulePattern,
    pub category: Category,
}

impl DescriptionRule {
    /// Plain patterns match as case-insensitive substrings; a `re:` prefix
    /// selects a case-insensitive regular expression.
    pub fn new(pattern: &str, category: Category) -> Result<Self> {
        let compiled = match pattern.strip_prefix("re:") {
            Some(re) => RulePattern::Regex(RegexBuilder::new(re).case_insensitive(true).build().map_err(|source| {
                LabelError::RulePattern {
                    pattern: pattern.to_string(),
                    source,
                }
            })?),
            None => RulePattern::Substring(pattern.to_lowercase()),
        };
        Ok(DescriptionRule {
            source: pattern.to_string(),
            pattern: compiled,
            category,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.source
    }

    pub fn matches(&self, description: &str) -> bool {
        match &self.pattern {
            RulePattern::Substring(s) => description.to_lowercase().contains(s.as_str()),
            RulePattern::Regex(r) => r.is_match(description),
        }
    }
}

/// Ordered description rules; the first match wins.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    pub rules: Vec<DescriptionRule>,
}

impl RuleSet {
    /// Parses a flat `"pattern" = "Category"` file, keeping file order.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| LabelError::RuleSyntax(e.to_string()))?;
        let mut rules = Vec::with_capacity(table.len());
        for (pattern, value) in table {
            let token = value
                .as_str()
                .ok_or_else(|| LabelError::RuleSyntax(format!("value for {pattern:?} must be a string")))?;
            let category: Category = token.parse()?;
            if category == Category::Uncategorized {
                return Err(LabelError::UnknownCategoryToken(token.to_string()));
            }
            rules.push(DescriptionRule::new(&pattern, category)?);
        }
        Ok(RuleSet { rules })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn default_rules() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled rule file parses")
    }
}

pub fn label_from_description(description: &str, rules: &RuleSet) -> Option<Category> {
    if description.trim().is_empty() {
        return None;
    }
    rules.rules.iter().find(|r| r.matches(description)).map(|r| r.category)
}

/// Hashtag to category lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HashtagFootprintTable {
    map: BTreeMap<String, Category>,
}

impl HashtagFootprintTable {
    pub fn insert(&mut self, hashtag: &str, category: Category) -> Result<()> {
        let Some(tag) = crate::corpus::normalize_hashtag(hashtag) else {
            return Ok(());
        };
        match self.map.get(&tag) {
            Some(&existing) if existing != category => Err(LabelError::FootprintConflict {
                hashtag: tag,
                first: existing,
                second: category,
            }),
            _ => {
                self.map.insert(tag, category);
                Ok(())
            }
        }
    }

    pub fn get(&self, hashtag: &str) -> Option<Category> {
        self.map.get(hashtag).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Entries in hashtag order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Category)> {
        self.map.iter().map(|(t, c)| (t.as_str(), *c))
    }

    /// CSV with `hashtag,category`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let tag_col = column(&header, "hashtag")?;
        let cat_col = column(&header, "category")?;
        let mut table = Self::default();
        for rec in rdr.records() {
            let rec = rec?;
            let category: Category = rec.get(cat_col).unwrap_or("").parse()?;
            table.insert(rec.get(tag_col).unwrap_or(""), category)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(fs::File::open(path)?)
    }

    pub fn default_table() -> Self {
        Self::read_csv(DEFAULT_FOOTPRINTS.as_bytes()).expect("bundled footprint table parses")
    }
}

/// Category whose table hashtags the account used most, provided the hit
/// count reaches `min_hits`. Equal counts fall to category order.
pub fn label_from_hashtag_footprint<I, S>(hashtags: I, table: &HashtagFootprintTable, min_hits: u64) -> Option<Category>
where
    I: IntoIterator<Item = (S, u64)>,
    S: AsRef<str>,
{
    let mut hits = [0u64; Category::COUNT];
    for (tag, n) in hashtags {
        if let Some(i) = table.get(tag.as_ref()).and_then(Category::index) {
            hits[i] += n;
        }
    }
    let (best, &count) = hits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (count >= min_hits.max(1)).then(|| Category::from_index(best))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedReport {
    pub coded: usize,
    pub coded_not_in_dataset: usize,
    pub description_rule: usize,
    pub hashtag_footprint: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub unlabeled_hashed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SeedSources<'a> {
    pub coded: Option<&'a SeedLabelSet>,
    pub rules: Option<&'a RuleSet>,
    pub footprints: Option<&'a HashtagFootprintTable>,
    pub min_hits: u64,
}

/// Seeds labels for a dataset: coded labels first, description rules for
/// readable profiles, hashtag footprints for hashed profiles.
pub fn seed_labels(dataset: &Dataset, sources: &SeedSources<'_>) -> Result<(SeedLabelSet, SeedReport)> {
    let mut set = SeedLabelSet::new();
    let mut report = SeedReport::default();
    if let Some(coded) = sources.coded {
        for (id, l) in coded.iter() {
            if dataset.account(id).is_some() {
                set.insert(id, l.category, Provenance::CodedFile)?;
                report.coded += 1;
            } else {
                report.coded_not_in_dataset += 1;
            }
        }
    }
    if let Some(rules) = sources.rules {
        for (id, profile) in dataset.accounts() {
            if profile.is_hashed || set.contains(id) {
                continue;
            }
            if let Some(c) = profile
                .description
                .as_deref()
                .and_then(|d| label_from_description(d, rules))
            {
                set.insert(id, c, Provenance::DescriptionRule)?;
                report.description_rule += 1;
            }
        }
    }
    if let Some(table) = sources.footprints {
        let usage = dataset.hashtag_usage()?;
        for (id, profile) in dataset.accounts() {
            if !profile.is_hashed || set.contains(id) {
                continue;
            }
            let Some(tags) = usage.get(id) else { continue };
            let hits = tags.iter().map(|(t, n)| (t.as_str(), *n));
            if let Some(c) = label_from_hashtag_footprint(hits, table, sources.min_hits) {
                set.insert(id, c, Provenance::HashtagFootprint)?;
                report.hashtag_footprint += 1;
            }
        }
    }
    report.labeled = set.len();
    report.unlabeled = dataset.accounts().len() - set.len();
    report.unlabeled_hashed = dataset
        .accounts()
        .values()
        .filter(|a| a.is_hashed && !set.contains(&a.account_id))
        .count();
    Ok((set, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_tokens() {
        assert_eq!("Fake News".parse::<Category>().unwrap(), Category::FakeNews);
        assert_eq!(
            "political_affiliates".parse::<Category>().unwrap(),
            Category::PoliticalAffiliates
        );
        assert!("Trolls".parse::<Category>().is_err());
        assert!(Category::FakeNews < Category::Organizations);
        for c in Category::ALL {
            assert_eq!(c.token().parse::<Category>().unwrap(), c);
            assert_eq!(Category::from_index(c.index().unwrap()), c);
        }
    }

    #[test]
    fn two_row_label_file() {
        let load = read_seed_labels("account_id,category\na1,FakeNews\na2,Organizations\n".as_bytes()).unwrap();
        assert_eq!(load.labels.len(), 2);
        assert_eq!(load.labels.category("a2"), Some(Category::Organizations));
    }

    #[test]
    fn identical_duplicate_is_idempotent() {
        let load = read_seed_labels("account_id,category\na1,FakeNews\na1,FakeNews\n".as_bytes()).unwrap();
        assert_eq!(load.labels.len(), 1);
    }

    #[test]
    fn conflicting_duplicate_fails() {
        let err = read_seed_labels("account_id,category\na1,FakeNews\na1,Organizations\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LabelError::DuplicateAccountConflict { .. }));
    }

    #[test]
    fn unknown_tokens_rejected_row_wise() {
        let load = read_seed_labels(
            "account_id,category\na1,FakeNews\na2,Troll\na3,Uncategorized\na4,DefaultIndividuals\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(load.labels.len(), 2);
        assert_eq!(load.rejected.len(), 2);
        assert_eq!(load.rejected[0].token, "Troll");
        assert_eq!(load.rejected[0].line, 3);
    }

    #[test]
    fn coded_provenance_wins() {
        let mut s = SeedLabelSet::new();
        s.insert("a", Category::FakeNews, Provenance::HashtagFootprint).unwrap();
        s.insert("a", Category::Organizations, Provenance::CodedFile).unwrap();
        assert_eq!(s.category("a"), Some(Category::Organizations));
        s.insert("a", Category::PoliticalAffiliates, Provenance::DescriptionRule)
            .unwrap();
        assert_eq!(s.category("a"), Some(Category::Organizations));
        assert!(s.insert("a", Category::FakeNews, Provenance::CodedFile).is_err());
        assert!(s.insert("b", Category::Uncategorized, Provenance::CodedFile).is_err());
    }

    #[test]
    fn label_csv_round_trip() {
        let mut s = SeedLabelSet::new();
        s.insert("a", Category::FakeNews, Provenance::CodedFile).unwrap();
        s.insert("b", Category::DefaultIndividuals, Provenance::Propagated)
            .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(SeedLabelSet::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn exemplar_descriptions() {
        let rules = RuleSet::default_rules();
        let cases = [
            ("Official Twitter account for the online magazine \"United Muslims of America,\" a page to unite all Muslim people living in the USA.", Category::Organizations),
            ("Newark's latest news source. Follow us for original reporting and trusted news @NewarkVoice", Category::FakeNews),
            ("Political & Military Analyst", Category::PoliticalAffiliates),
            ("Every child is an artist. The problem is how to remain an artist once he grows up.", Category::DefaultIndividuals),
            ("Social media enthusiast. Wannabe creator. General internet expert. Entrepreneur. Hardcore introvert.", Category::DefaultIndividuals),
            ("Non-Governmental Organization (NGO)", Category::Organizations),
            ("Breaking news, weather, traffic and more for New Orleans and Louisiana. DM us anytime. RTs not endorsements", Category::FakeNews),
            ("warm as the sun, dipped in black. full time protagonist, womanist, & revolutionary STRENGTH, COURAGE, & WISDOM.", Category::DefaultIndividuals),
            ("Welcome to the official Department of Space Twitter account!", Category::Organizations),
            ("Constitutional conservative-Pro life-Pro 2nd amendment-Christian", Category::PoliticalAffiliates),
            ("When in danger or in doubt, run in circles, scream and shout", Category::DefaultIndividuals),
            ("Local news, sports, business, politics, entertainment, travel and opinion for Detroit. DM us 24/7", Category::FakeNews),
            ("We are a club of people who love New York City. Follow us or visit our website, then you can know everything about NYC.", Category::Organizations),
            ("Houston top news and stories, powered 24/7", Category::FakeNews),
            ("Conservative; Right and proud; Christian. Love my country and will stand against liberals and socialists.", Category::PoliticalAffiliates),
            ("Unofficial Twitter of Tennessee Republicans. Covering breaking news, national politics, foreign policy, and more.", Category::PoliticalAffiliates),
        ];
        for (d, want) in cases {
            assert_eq!(label_from_description(d, &rules), Some(want), "{d}");
        }
        assert_eq!(label_from_description("", &rules), None);
    }

    #[test]
    fn rule_order_is_file_order() {
        let rules = RuleSet::parse("\"news\" = \"FakeNews\"\n\"re:^n\" = \"Organizations\"\n").unwrap();
        assert_eq!(rules.rules[0].pattern(), "news");
        assert_eq!(label_from_description("news", &rules), Some(Category::FakeNews));
        assert_eq!(label_from_description("nope", &rules), Some(Category::Organizations));
        assert!(RuleSet::parse("\"x\" = \"Trolls\"").is_err());
        assert!(RuleSet::parse("\"re:(\" = \"FakeNews\"").is_err());
    }

    #[test]
    fn footprint_hits() {
        let table = HashtagFootprintTable::default_table();
        assert_eq!(table.get("maga"), Some(Category::PoliticalAffiliates));
        assert_eq!(table.get("news"), Some(Category::FakeNews));
        assert_eq!(
            label_from_hashtag_footprint([("maga", 3)], &table, 2),
            Some(Category::PoliticalAffiliates)
        );
        assert_eq!(label_from_hashtag_footprint([("maga", 1)], &table, 2), None);
        assert_eq!(label_from_hashtag_footprint([("cats", 9)], &table, 2), None);
        // Equal hit counts resolve by category order.
        assert_eq!(
            label_from_hashtag_footprint([("music", 2), ("texas", 2)], &table, 2),
            Some(Category::Organizations)
        );
        assert_eq!(
            label_from_hashtag_footprint([("music", 3), ("texas", 2)], &table, 2),
            Some(Category::DefaultIndividuals)
        );
    }

    #[test]
    fn footprint_conflicts_rejected() {
        let err = HashtagFootprintTable::read_csv("hashtag,category\n#News,FakeNews\nnews,Organizations\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, LabelError::FootprintConflict { .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn non_matching_rule_order_is_irrelevant(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
                let filler = ["zebra", "re:\\bquark\\b", "lighthouse", "re:^xyz", "okapi", "narwhal"];
                let mut rules: Vec<DescriptionRule> = perm
                    .iter()
                    .map(|&i| DescriptionRule::new(filler[i], Category::Organizations).unwrap())
                    .collect();
                rules.insert(3, DescriptionRule::new("news", Category::FakeNews).unwrap());
                rules.push(DescriptionRule::new("re:\\S", Category::DefaultIndividuals).unwrap());
                let set = RuleSet { rules };
                prop_assert_eq!(label_from_description("Daily news for Ohio", &set), Some(Category::FakeNews));
                prop_assert_eq!(label_from_description("just me", &set), Some(Category::DefaultIndividuals));
            }
        }
    }
}
