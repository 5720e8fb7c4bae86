//! News items, text cleaning, attribute extraction and dataset splitting.
//!
//! Items are stored one per line as JSON:
//!
//! ```text
//! {"id": "t1", "text": "...", "label": "real", "attributes": {"domain": ["news.sky"]}}
//! ```
//!
//! Attribute kinds with no values are omitted from the `attributes` object.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Username,
    Domain,
    Author,
    Source,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 4] = [
        AttributeKind::Username,
        AttributeKind::Domain,
        AttributeKind::Author,
        AttributeKind::Source,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Username => "username",
            AttributeKind::Domain => "domain",
            AttributeKind::Author => "author",
            AttributeKind::Source => "source",
        }
    }

    /// Normalize a raw attribute value for this kind.
    pub fn normalize(self, raw: &str) -> String {
        let v = raw.trim().to_lowercase();
        match self {
            AttributeKind::Username => v.trim_start_matches('@').to_string(),
            AttributeKind::Domain | AttributeKind::Source => {
                let mut host = v.as_str();
                while let Some(rest) = host.strip_prefix("www.") {
                    host = rest;
                }
                host.to_string()
            }
            AttributeKind::Author => v,
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "username" => Ok(AttributeKind::Username),
            "domain" => Ok(AttributeKind::Domain),
            "author" => Ok(AttributeKind::Author),
            "source" => Ok(AttributeKind::Source),
            other => Err(Error::invalid(format!("unknown attribute kind {other:?}"))),
        }
    }
}

/// Parse a comma-separated list of attribute kinds.
pub fn parse_kinds(s: &str) -> Result<Vec<AttributeKind>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(AttributeKind::from_str)
        .collect()
}

pub type Attributes = BTreeMap<AttributeKind, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub id: String,
    pub text: String,
    pub label: Option<ClassLabel>,
    #[serde(default)]
    pub attributes: Attributes,
}

impl LabeledItem {
    pub fn values(&self, kind: AttributeKind) -> &[String] {
        self.attributes.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Unsplit,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<LabeledItem>,
    split: SplitTag,
}

impl Dataset {
    /// Build a dataset, rejecting duplicate ids.
    pub fn new(items: Vec<LabeledItem>, split: SplitTag) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        for it in &items {
            if !seen.insert(it.id.as_str()) {
                return Err(Error::invalid(format!("duplicate item id {:?}", it.id)));
            }
        }
        Ok(Dataset { items, split })
    }

    pub fn items(&self) -> &[LabeledItem] {
        &self.items
    }

    pub fn into_items(self) -> Vec<LabeledItem> {
        self.items
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Gold labels, failing if any item is unlabeled.
    pub fn labels(&self) -> Result<Vec<ClassLabel>> {
        self.items
            .iter()
            .map(|it| {
                it.label
                    .ok_or_else(|| Error::invalid(format!("item {} has no label", it.id)))
            })
            .collect()
    }

    pub fn read_jsonl(path: impl AsRef<Path>, split: SplitTag) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let item: LabeledItem = serde_json::from_str(&line).map_err(|e| {
                Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            items.push(item);
        }
        Dataset::new(items, split)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_items_jsonl(&self.items, path)
    }
}

pub fn write_items_jsonl(items: &[LabeledItem], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Tweet,
    Article,
}

impl FromStr for ItemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tweet" => Ok(ItemKind::Tweet),
            "article" => Ok(ItemKind::Article),
            other => Err(Error::invalid(format!("unknown item kind {other:?}"))),
        }
    }
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(^|[^\w])@(\w+)").unwrap())
}

const SOCIAL_HOSTS: &[&str] = &[
    "twitter.com",
    "t.co",
    "x.com",
    "facebook.com",
    "fb.com",
    "instagram.com",
    "youtube.com",
    "youtu.be",
    "tiktok.com",
    "reddit.com",
    "linkedin.com",
    "pinterest.com",
];

fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x00A9 | 0x00AE
        | 0x200D
        | 0x20E3
        | 0x2300..=0x23FF
        | 0x2600..=0x27BF
        | 0x2B00..=0x2BFF
        | 0xFE00..=0xFE0F
        | 0x1F000..=0x1FAFF
        | 0xE0020..=0xE007F)
}

fn strip_trailing_punct(s: &str) -> &str {
    s.trim_end_matches(['.', ',', ';', ':', '!', '?', ')', ']', '}', '\'', '"'])
}

fn parse_host(raw_url: &str) -> Option<String> {
    let candidate = strip_trailing_punct(raw_url);
    let with_scheme = if candidate.to_ascii_lowercase().starts_with("www.") {
        format!("http://{candidate}")
    } else {
        candidate.to_string()
    };
    let parsed = url::Url::parse(&with_scheme).ok()?;
    let host = parsed.host_str()?.trim_end_matches('.');
    if host.is_empty() {
        return None;
    }
    Some(AttributeKind::Domain.normalize(host))
}

fn is_social_host(host: &str) -> bool {
    SOCIAL_HOSTS
        .iter()
        .any(|s| host == *s || host.ends_with(&format!(".{s}")))
}

fn remove_mentions(s: &str) -> String {
    mention_re().replace_all(s, "$1").into_owned()
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Clean raw item text. Tweets lose URLs, @-mentions, `#` markers and emoji;
/// articles lose social-platform URLs and @-mentions. Whitespace is collapsed.
pub fn preprocess_text(raw: &str, kind: ItemKind) -> String {
    let mut s: String = match kind {
        ItemKind::Tweet => raw
            .chars()
            .filter(|c| !is_emoji(*c) && *c != '#')
            .collect(),
        ItemKind::Article => raw.to_string(),
    };
    // removing a mention can splice a URL together and vice versa
    loop {
        let next = match kind {
            ItemKind::Tweet => remove_mentions(&url_re().replace_all(&s, "")),
            ItemKind::Article => {
                let urls = url_re().replace_all(&s, |caps: &regex::Captures| {
                    let m = &caps[0];
                    match parse_host(m) {
                        Some(h) if is_social_host(&h) => String::new(),
                        _ => m.to_string(),
                    }
                });
                remove_mentions(&urls)
            }
        };
        if next == s {
            break;
        }
        s = next;
    }
    collapse_whitespace(&s)
}

/// Pull usernames and URL domains out of raw text, and author/source from
/// metadata. Values keep first-occurrence order; repeats are retained.
pub fn extract_attributes(raw: &str, metadata: &BTreeMap<String, String>) -> Attributes {
    let mut attrs = Attributes::new();

    let usernames: Vec<String> = mention_re()
        .captures_iter(raw)
        .map(|c| AttributeKind::Username.normalize(&c[2]))
        .filter(|u| !u.is_empty())
        .collect();
    if !usernames.is_empty() {
        attrs.insert(AttributeKind::Username, usernames);
    }

    let mut domains = Vec::new();
    for m in url_re().find_iter(raw) {
        match parse_host(m.as_str()) {
            Some(h) => domains.push(h),
            None => log::warn!("skipping malformed url {:?}", m.as_str()),
        }
    }
    if !domains.is_empty() {
        attrs.insert(AttributeKind::Domain, domains);
    }

    for kind in [AttributeKind::Author, AttributeKind::Source] {
        if let Some(v) = metadata.get(kind.as_str()) {
            let v = kind.normalize(v);
            if !v.is_empty() {
                attrs.insert(kind, vec![v]);
            }
        }
    }
    attrs
}

/// Input record accepted by ingestion. `attributes`, when given for a kind,
/// replace whatever extraction finds for that kind.
#[derive(Debug, Clone, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<ClassLabel>,
    #[serde(default)]
    pub attributes: Option<BTreeMap<AttributeKind, Vec<String>>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl RawRecord {
    pub fn into_item(self, kind: ItemKind) -> LabeledItem {
        let mut attributes = extract_attributes(&self.text, &self.metadata);
        if let Some(given) = self.attributes {
            for (k, vals) in given {
                let vals: Vec<String> = vals
                    .iter()
                    .map(|v| k.normalize(v))
                    .filter(|v| !v.is_empty())
                    .collect();
                if vals.is_empty() {
                    attributes.remove(&k);
                } else {
                    attributes.insert(k, vals);
                }
            }
        }
        LabeledItem {
            id: self.id,
            text: preprocess_text(&self.text, kind),
            label: self.label,
            attributes,
        }
    }
}

pub fn read_raw_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(out)
}

/// Clean and attribute-tag raw records into an unsplit dataset.
pub fn ingest(records: Vec<RawRecord>, kind: ItemKind) -> Result<Dataset> {
    let items = records.into_iter().map(|r| r.into_item(kind)).collect();
    Dataset::new(items, SplitTag::Unsplit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = SplitRatios {
            train,
            validation,
            test,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("split ratios must be positive"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Parse `"0.8,0.1,0.1"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad ratio {p:?}")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            [a, b, c] => SplitRatios::new(*a, *b, *c),
            _ => Err(Error::invalid("expected three comma-separated ratios")),
        }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

/// Shuffle with `seed` and cut into train/validation/test. Items keep their
/// original relative order inside each split.
pub fn split_dataset(
    d: &Dataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    ratios.validate()?;
    let n = d.len();
    if n < 3 {
        return Err(Error::DatasetTooSmall { needed: 3, got: n });
    }
    let n_train = (n as f64 * ratios.train).round() as usize;
    let n_val = ((n as f64 * ratios.validation).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));

    let mut tags = vec![SplitTag::Test; n];
    for &i in &order[..n_train] {
        tags[i] = SplitTag::Train;
    }
    for &i in &order[n_train..n_train + n_val] {
        tags[i] = SplitTag::Validation;
    }

    let pick = |tag: SplitTag| -> Dataset {
        let items = d
            .items
            .iter()
            .zip(&tags)
            .filter(|(_, t)| **t == tag)
            .map(|(it, _)| it.clone())
            .collect();
        Dataset { items, split: tag }
    };
    Ok((
        pick(SplitTag::Train),
        pick(SplitTag::Validation),
        pick(SplitTag::Test),
    ))
}
