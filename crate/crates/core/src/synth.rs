//! Synthetic corpora with planted hashtag homophily.
//!
//! Posts arrive in bursts of roughly an hour. Each burst holds two
//! concurrent events, one per class; an event's class fixes the engagement
//! label of all its posts, and the event owns a small private hashtag pool.
//! Each hashtag of a post comes from its event's pool with probability
//! `homophily`, otherwise from a large generic pool. Since both classes are
//! always active together, time alone says nothing about the label: the
//! δ-graph links same-class posts when homophily is high and is unrelated to
//! the labels when it is zero. Author and post features, and the text, carry
//! only a weak per-post class signal.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TweetRecord;

/// 2021-11-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_635_724_800;
const WEEK: i64 = 7 * 24 * 3600;
const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "be", "da", "fo", "gu", "ha", "je", "ko", "la", "mo", "ni",
    "pa", "re", "si", "tu", "wa", "zo",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_posts: usize,
    pub homophily: f64,
    pub seed: u64,
    pub start: i64,
    /// Posts per event are uniform in this inclusive range.
    pub event_size: (usize, usize),
    pub event_span_secs: i64,
    pub event_tags: usize,
    pub generic_tags: usize,
    /// Probability that a text token is drawn from the class vocabulary.
    pub class_word_rate: f64,
    /// Shift of the log-follower mean for the engaged class.
    pub follower_shift: f64,
}

impl SynthConfig {
    pub fn new(n_posts: usize, homophily: f64, seed: u64) -> Self {
        SynthConfig {
            n_posts,
            homophily,
            seed,
            start: DEFAULT_START,
            event_size: (15, 45),
            event_span_secs: 3600,
            event_tags: 3,
            generic_tags: 400,
            class_word_rate: 0.006,
            follower_shift: 0.35,
        }
    }
}

fn word(index: usize, syllables: usize) -> String {
    let mut w = String::new();
    let mut k = index;
    for _ in 0..syllables {
        w.push_str(SYLLABLES[k % SYLLABLES.len()]);
        k /= SYLLABLES.len();
    }
    w
}

struct Vocabulary {
    common: Vec<String>,
    class: [Vec<String>; 2],
}

impl Vocabulary {
    fn new() -> Self {
        // two-syllable common words, three-syllable class words
        let common = (0..300).map(|i| word(i, 2)).collect();
        let class = [
            (0..40).map(|i| word(1000 + 2 * i, 3)).collect(),
            (0..40).map(|i| word(1001 + 2 * i, 3)).collect(),
        ];
        Vocabulary { common, class }
    }
}

/// Generate a corpus sorted by timestamp. Ids are sequential.
pub fn generate(config: &SynthConfig) -> Result<Vec<TweetRecord>> {
    if config.n_posts < 10 {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus needs at least 10 posts, got {}",
            config.n_posts
        )));
    }
    if !(0.0..=1.0).contains(&config.homophily) {
        return Err(Error::InvalidArgument(format!(
            "homophily {} outside [0, 1]",
            config.homophily
        )));
    }
    let (lo, hi) = config.event_size;
    if lo == 0 || hi < lo || config.event_tags == 0 || config.generic_tags == 0 || config.event_span_secs <= 0 {
        return Err(Error::InvalidArgument("invalid event shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = Vocabulary::new();
    let followers_dist = [
        LogNormal::new(6.0, 1.5).expect("valid"),
        LogNormal::new(6.0 + config.follower_shift, 1.5).expect("valid"),
    ];
    let n_tweets_dist = LogNormal::new(8.0, 1.2).expect("valid");
    let following_dist = LogNormal::new(5.5, 1.2).expect("valid");
    let mentions = [Poisson::new(0.5).expect("valid"), Poisson::new(0.65).expect("valid")];
    let emojis = [Poisson::new(0.4).expect("valid"), Poisson::new(0.55).expect("valid")];
    let fav = Poisson::new(3.0).expect("valid");
    let n_authors = (config.n_posts / 3).max(1);

    let mut records = Vec::with_capacity(config.n_posts);
    let mut event = 0usize;
    while records.len() < config.n_posts {
        let begin = config.start + rng.random_range(0..WEEK - config.event_span_secs);
        // both events of a burst have the same size so that graph structure
        // alone cannot tell them apart
        let size = rng.random_range(lo..=hi);
        for class in [0u8, 1] {
            for _ in 0..size.min(config.n_posts - records.len()) {
                let mut r = TweetRecord::new(String::new(), begin + rng.random_range(0..config.event_span_secs));
                let n_tags = 1 + usize::from(rng.random_bool(0.5)) + usize::from(rng.random_bool(0.2));
                for _ in 0..n_tags {
                    let tag = if rng.random_bool(config.homophily) {
                        format!("ev{event}t{}", rng.random_range(0..config.event_tags))
                    } else {
                        format!("topic{}", rng.random_range(0..config.generic_tags))
                    };
                    r.hashtags.insert(tag);
                }
                let n_words = rng.random_range(6..=18);
                let words: Vec<&str> = (0..n_words)
                    .map(|_| {
                        let list = if rng.random_bool(config.class_word_rate) {
                            &vocab.class[class as usize]
                        } else {
                            &vocab.common
                        };
                        list.choose(&mut rng).expect("non-empty vocabulary").as_str()
                    })
                    .collect();
                r.text = words.join(" ");
                r.author = format!("user{}", rng.random_range(0..n_authors));
                r.followers = followers_dist[class as usize].sample(&mut rng) as u64;
                r.n_tweets = n_tweets_dist.sample(&mut rng) as u64;
                r.following = following_dist.sample(&mut rng) as u64;
                r.n_mentions = mentions[class as usize].sample(&mut rng) as u32;
                r.emojis = emojis[class as usize].sample(&mut rng) as u32;
                r.official_source = rng.random_bool(0.6);
                r.has_media = rng.random_bool(if class == 1 { 0.3 } else { 0.22 });
                r.verified_user = rng.random_bool(0.05);
                if class == 1 {
                    r.favorite_count = 1 + fav.sample(&mut rng) as u64;
                    r.retweet_count = rng.random_range(0..3);
                }
                records.push(r);
            }
            event += 1;
        }
    }
    records.sort_by_key(|r| r.timestamp);
    for (i, r) in records.iter_mut().enumerate() {
        r.id = format!("{}", 1_455_000_000_000_000_000u64 + i as u64);
    }
    Ok(records)
}
