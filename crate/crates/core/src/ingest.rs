//! Post corpus ingestion: line-delimited JSON records, engagement labels and
//! corpus-level statistics.
//!
//! One record per line. Recognised keys: `id`, `timestamp` (epoch seconds or
//! RFC 3339), `lang`, `text`, `author`, `favorite_count`, `retweet_count`,
//! `has_media`, `official_source`, `verified`, `followers`, `following`,
//! `n_tweets`, `hashtags` (comma-separated), `n_mentions`, `emojis`.
//! Only `id` and `timestamp` are required; everything else defaults to
//! zero / false / empty. Records whose `lang` is not `en` are dropped.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// A single post together with the profile counters of its author.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TweetRecord {
    pub id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub text: String,
    pub emojis: u32,
    pub author: String,
    pub has_media: bool,
    pub favorite_count: u64,
    pub retweet_count: u64,
    pub official_source: bool,
    pub hashtags: BTreeSet<String>,
    pub n_mentions: u32,
    pub verified_user: bool,
    pub followers: u64,
    pub following: u64,
    pub n_tweets: u64,
}

impl TweetRecord {
    /// Record with the given id and timestamp and every other field at its default.
    pub fn new(id: impl Into<String>, timestamp: i64) -> Self {
        TweetRecord {
            id: id.into(),
            timestamp,
            text: String::new(),
            emojis: 0,
            author: String::new(),
            has_media: false,
            favorite_count: 0,
            retweet_count: 0,
            official_source: false,
            hashtags: BTreeSet::new(),
            n_mentions: 0,
            verified_user: false,
            followers: 0,
            following: 0,
            n_tweets: 0,
        }
    }

    pub fn length_of_post(&self) -> usize {
        self.text.chars().count()
    }

    pub fn n_hashtags(&self) -> usize {
        self.hashtags.len()
    }

    pub fn engagement(&self) -> u64 {
        compute_engagement(self)
    }

    pub fn label(&self) -> u8 {
        assign_label(self.engagement())
    }

    /// Replace the hashtag set, normalising each tag.
    pub fn with_hashtags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.hashtags = tags
            .into_iter()
            .filter_map(|t| normalize_hashtag(t.as_ref()))
            .collect();
        self
    }
}

/// Favorites plus retweets.
pub fn compute_engagement(record: &TweetRecord) -> u64 {
    record.favorite_count + record.retweet_count
}

pub fn assign_label(engagement: u64) -> u8 {
    u8::from(engagement > 0)
}

/// Strip a leading `#`, trim and case-fold. Empty tags yield `None`.
pub fn normalize_hashtag(tag: &str) -> Option<String> {
    let tag = tag.trim();
    let tag = tag.strip_prefix('#').unwrap_or(tag).trim();
    if tag.is_empty() {
        None
    } else {
        Some(tag.to_lowercase())
    }
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub records: Vec<TweetRecord>,
    /// Lines that could not be parsed into a record.
    pub malformed: usize,
    /// Well-formed lines dropped by the language filter.
    pub non_english: usize,
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<ParsedCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

/// Parse a line-delimited corpus, keeping English records in file order.
pub fn parse_corpus(reader: impl BufRead) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(Some(record)) => out.records.push(record),
            Ok(None) => out.non_english += 1,
            Err(reason) => {
                log::warn!("skipping malformed line {}: {}", lineno + 1, reason);
                out.malformed += 1;
            }
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<Option<TweetRecord>, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("line is not a JSON object")?;

    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing id".into()),
    };
    let timestamp = match obj.get("timestamp") {
        Some(v) => parse_timestamp(v)?,
        None => return Err("missing timestamp".into()),
    };

    let lang = obj.get("lang").and_then(Value::as_str).unwrap_or("");
    if lang != "en" {
        return Ok(None);
    }

    let hashtags: BTreeSet<String> = match obj.get("hashtags") {
        None | Some(Value::Null) => BTreeSet::new(),
        Some(Value::String(s)) => s.split(',').filter_map(normalize_hashtag).collect(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().ok_or("non-string hashtag"))
            .collect::<std::result::Result<Vec<_>, _>>()?
            .into_iter()
            .filter_map(normalize_hashtag)
            .collect(),
        Some(_) => return Err("hashtags must be a string".into()),
    };

    Ok(Some(TweetRecord {
        id,
        timestamp,
        text: get_str(obj, "text")?,
        emojis: get_count(obj, "emojis")? as u32,
        author: get_str(obj, "author")?,
        has_media: get_flag(obj, "has_media")?,
        favorite_count: get_count(obj, "favorite_count")?,
        retweet_count: get_count(obj, "retweet_count")?,
        official_source: get_flag(obj, "official_source")?,
        hashtags,
        n_mentions: get_count(obj, "n_mentions")? as u32,
        verified_user: get_flag(obj, "verified")?,
        followers: get_count(obj, "followers")?,
        following: get_count(obj, "following")?,
        n_tweets: get_count(obj, "n_tweets")?,
    }))
}

fn parse_timestamp(v: &Value) -> std::result::Result<i64, String> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .ok_or_else(|| format!("timestamp {n} is not an integer")),
        Value::String(s) => {
            let s = s.trim();
            if let Ok(secs) = s.parse::<i64>() {
                return Ok(secs);
            }
            if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                return Ok(dt.timestamp());
            }
            NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
                .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
                .map(|dt| dt.and_utc().timestamp())
                .map_err(|_| format!("unparseable timestamp {s:?}"))
        }
        _ => Err("timestamp must be a number or string".into()),
    }
}

fn get_str(obj: &Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("{key} must be a string")),
    }
}

fn get_count(obj: &Map<String, Value>, key: &str) -> std::result::Result<u64, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(0),
        Some(Value::Number(n)) => n
            .as_u64()
            .ok_or_else(|| format!("{key} must be a non-negative integer")),
        Some(Value::String(s)) => s
            .trim()
            .parse()
            .map_err(|_| format!("{key} must be a non-negative integer")),
        Some(_) => Err(format!("{key} must be a non-negative integer")),
    }
}

fn get_flag(obj: &Map<String, Value>, key: &str) -> std::result::Result<bool, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(0) => Ok(false),
            Some(1) => Ok(true),
            _ => Err(format!("{key} must be 0 or 1")),
        },
        Some(Value::String(s)) => match s.trim() {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            _ => Err(format!("{key} must be 0 or 1")),
        },
        Some(_) => Err(format!("{key} must be 0 or 1")),
    }
}

/// Wire form of a record; field order is the on-disk key order.
#[derive(Serialize)]
struct WireRecord<'a> {
    id: &'a str,
    timestamp: i64,
    lang: &'a str,
    text: &'a str,
    author: &'a str,
    favorite_count: u64,
    retweet_count: u64,
    has_media: u8,
    official_source: u8,
    verified: u8,
    followers: u64,
    following: u64,
    n_tweets: u64,
    hashtags: String,
    n_mentions: u32,
    emojis: u32,
}

pub fn record_to_line(record: &TweetRecord) -> String {
    let wire = WireRecord {
        id: &record.id,
        timestamp: record.timestamp,
        lang: "en",
        text: &record.text,
        author: &record.author,
        favorite_count: record.favorite_count,
        retweet_count: record.retweet_count,
        has_media: record.has_media.into(),
        official_source: record.official_source.into(),
        verified: record.verified_user.into(),
        followers: record.followers,
        following: record.following,
        n_tweets: record.n_tweets,
        hashtags: record
            .hashtags
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(","),
        n_mentions: record.n_mentions,
        emojis: record.emojis,
    };
    serde_json::to_string(&wire).expect("record serialization cannot fail")
}

pub fn write_corpus(records: &[TweetRecord], writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        writeln!(w, "{}", record_to_line(r))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_days: u64,
    pub n_users: usize,
    pub n_posts: usize,
    pub mean_posts_per_day: f64,
    pub n_unique_hashtags: usize,
    pub median_posts_per_user: f64,
    pub max_posts_per_user: usize,
}

/// Corpus statistics. `n_days` counts UTC calendar days from the first to the
/// last post, inclusive.
pub fn dataset_stats(records: &[TweetRecord]) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let day = |t: i64| t.div_euclid(86_400);
    let first = records.iter().map(|r| day(r.timestamp)).min().unwrap();
    let last = records.iter().map(|r| day(r.timestamp)).max().unwrap();
    let n_days = (last - first + 1) as u64;

    let mut per_user: HashMap<&str, usize> = HashMap::new();
    let mut tags: HashSet<&str> = HashSet::new();
    for r in records {
        *per_user.entry(r.author.as_str()).or_default() += 1;
        tags.extend(r.hashtags.iter().map(String::as_str));
    }
    let mut counts: Vec<usize> = per_user.into_values().collect();
    counts.sort_unstable();
    let mid = counts.len() / 2;
    let median = if counts.len() % 2 == 1 {
        counts[mid] as f64
    } else {
        (counts[mid - 1] + counts[mid]) as f64 / 2.0
    };

    Ok(DatasetStats {
        n_days,
        n_users: counts.len(),
        n_posts: records.len(),
        mean_posts_per_day: records.len() as f64 / n_days as f64,
        n_unique_hashtags: tags.len(),
        median_posts_per_user: median,
        max_posts_per_user: *counts.last().unwrap(),
    })
}

/// Records with `start <= timestamp < end`, order preserved.
pub fn filter_window(records: &[TweetRecord], start: i64, end: i64) -> Result<Vec<TweetRecord>> {
    if start >= end {
        return Err(Error::InvalidArgument(format!(
            "window start {start} must precede end {end}"
        )));
    }
    Ok(records
        .iter()
        .filter(|r| (start..end).contains(&r.timestamp))
        .cloned()
        .collect())
}

/// Per-node engagement and binary label, aligned with corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub id: String,
    pub engagement: u64,
    pub label: u8,
}

pub fn label_rows(records: &[TweetRecord]) -> Vec<LabelRow> {
    records
        .iter()
        .map(|r| LabelRow {
            id: r.id.clone(),
            engagement: r.engagement(),
            label: r.label(),
        })
        .collect()
}

pub fn write_labels(rows: &[LabelRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "index,id,engagement,label")?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i, r.id, r.engagement, r.label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}: bad label line {}", path.display(), lineno + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        let index: usize = fields[0].parse().map_err(|_| bad())?;
        if index != rows.len() {
            return Err(bad());
        }
        let label: u8 = fields[3].parse().map_err(|_| bad())?;
        if label > 1 {
            return Err(bad());
        }
        rows.push(LabelRow {
            id: fields[1].to_string(),
            engagement: fields[2].parse().map_err(|_| bad())?,
            label,
        });
    }
    Ok(rows)
}
