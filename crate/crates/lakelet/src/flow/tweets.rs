//! Deterministic tweet-stream source standing in for the live Twitter API.
//!
//! Given the same `(seed, n, weights)` the generator emits byte-identical
//! JSON lines, which is what makes the demo and the crash-replay tests
//! reproducible. The per-tweet draw order below is frozen; pinned regression
//! fixtures depend on it.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LakeError, Result};
use crate::text::DEFAULT_BRANDS;

/// One tweet; the field set and order match the ingested JSON exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tweet {
    pub tweet_id: i64,
    pub created_unixtime: i64,
    pub created_time: String,
    pub lang: String,
    pub location: String,
    pub displayname: String,
    pub time_zone: String,
    pub msg: String,
}

impl Tweet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tweet serializes")
    }
}

const LANGS: [&str; 5] = ["es", "fr", "de", "pt", "nl"];

const LOCATIONS: [&str; 10] = [
    "",
    "Brooklyn",
    "Austin",
    "",
    "Toronto",
    "Kingston",
    "",
    "Detroit",
    "Seattle",
    "Phoenix",
];

const TIME_ZONES: [&str; 4] = [
    "Eastern Time (US & Canada)",
    "Pacific Time (US & Canada)",
    "Central Time (US & Canada)",
    "Atlantic Time (Canada)",
];

const HANDLES: [&str; 20] = [
    "TurboTalker",
    "GearGuru42",
    "OdometerOtto",
    "PistonPat",
    "HighwayHolly",
    "TorqueTess",
    "LugnutLarry",
    "CamshaftCleo",
    "DipstickDan",
    "RevRhonda",
    "ChassisChuck",
    "SpoilerSam",
    "MufflerMae",
    "AxleAbe",
    "IgnitionIvy",
    "ClutchCarl",
    "FenderFay",
    "ThrottleTheo",
    "SedanSue",
    "WagonWill",
];

// Filler vocabulary for message bodies. Deliberately free of brand tokens;
// seeded with a few polarity words so sentiment reports have signal.
const FILLER: [&str; 64] = [
    "looking", "at", "the", "new", "lineup", "today", "test", "drive", "was", "so", "smooth",
    "my", "old", "coupe", "finally", "got", "a", "recall", "notice", "dealer", "quoted", "me",
    "way", "too", "much", "for", "brakes", "love", "this", "turbo", "engine", "great", "mileage",
    "on", "highway", "trip", "rusty", "tailgate", "needs", "work", "noisy", "cabin", "but",
    "reliable", "overall", "shopping", "used", "sedan", "market", "prices", "keep", "climbing",
    "electric", "charging", "station", "queue", "again", "weekend", "road", "adventure", "with",
    "family", "hauler", "lemon",
];

/// Weight 1.0 for each of the ten canonical brands.
pub fn uniform_brand_weights() -> BTreeMap<String, f64> {
    DEFAULT_BRANDS
        .iter()
        .map(|b| (b.to_string(), 1.0))
        .collect()
}

pub struct TweetGenerator {
    rng: ChaCha8Rng,
    weights: Vec<(String, f64)>,
    total_weight: f64,
    unixtime: i64,
    tweet_id: i64,
}

impl TweetGenerator {
    pub fn new(seed: u64, brand_weights: &BTreeMap<String, f64>) -> Result<Self> {
        let mut total = 0.0;
        for w in brand_weights.values() {
            if *w < 0.0 || !w.is_finite() {
                return Err(LakeError::InvalidWeights);
            }
            total += *w;
        }
        if brand_weights.is_empty() || total <= 0.0 {
            return Err(LakeError::InvalidWeights);
        }
        Ok(TweetGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            weights: brand_weights
                .iter()
                .filter(|(_, w)| **w > 0.0)
                .map(|(b, w)| (b.clone(), *w))
                .collect(),
            total_weight: total,
            // Starting points in the era of the sampled stream.
            unixtime: 1_553_324_443_000,
            tweet_id: 1_109_349_236_000_000_000,
        })
    }

    fn pick_brand(&mut self) -> String {
        let mut r = self.rng.random_range(0.0..self.total_weight);
        for (brand, w) in &self.weights {
            if r < *w {
                return brand.clone();
            }
            r -= *w;
        }
        self.weights.last().unwrap().0.clone()
    }

    fn build_msg(&mut self, brands: &[String]) -> String {
        let filler_count = self.rng.random_range(4..=12);
        let mut words: Vec<String> = (0..filler_count)
            .map(|_| FILLER[self.rng.random_range(0..FILLER.len())].to_string())
            .collect();
        for brand in brands {
            let pos = self.rng.random_range(0..=words.len());
            let styled = match self.rng.random_range(0..100) {
                0..=77 => brand.clone(),
                78..=89 => brand.to_lowercase(),
                _ => brand.to_uppercase(),
            };
            words.insert(pos, styled);
        }
        let mut msg = words.join(" ");
        if self.rng.random_range(0..100) < 40 {
            let tail: String = (0..8)
                .map(|_| {
                    let chars = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
                    chars[self.rng.random_range(0..chars.len())] as char
                })
                .collect();
            msg.push_str(" https://tco/");
            msg.push_str(&tail);
        }
        msg
    }

    pub fn next_tweet(&mut self) -> Tweet {
        self.unixtime += self.rng.random_range(150..=2500);
        self.tweet_id += self.rng.random_range(1_000_000..=4_000_000_000i64);
        let lang = if self.rng.random_range(0..100) < 92 {
            "en".to_string()
        } else {
            LANGS[self.rng.random_range(0..LANGS.len())].to_string()
        };
        let location = LOCATIONS[self.rng.random_range(0..LOCATIONS.len())].to_string();
        let displayname = HANDLES[self.rng.random_range(0..HANDLES.len())].to_string();
        let time_zone = if self.rng.random_range(0..100) < 75 {
            String::new()
        } else {
            TIME_ZONES[self.rng.random_range(0..TIME_ZONES.len())].to_string()
        };
        let brand_count = match self.rng.random_range(0..100) {
            0..=17 => 0,
            18..=63 => 1,
            64..=87 => 2,
            _ => 3,
        };
        let brands: Vec<String> = (0..brand_count).map(|_| self.pick_brand()).collect();
        let msg = self.build_msg(&brands);
        let created_time = format_twitter_time(self.unixtime);
        Tweet {
            tweet_id: self.tweet_id,
            created_unixtime: self.unixtime,
            created_time,
            lang,
            location,
            displayname,
            time_zone,
            msg,
        }
    }
}

/// `Sat Mar 23 07:00:43 +0000 2019`-style timestamp for an epoch-ms value.
pub fn format_twitter_time(unix_ms: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(unix_ms)
        .unwrap_or_else(|| DateTime::<Utc>::from_timestamp_millis(0).unwrap())
        .format("%a %b %d %H:%M:%S %z %Y")
        .to_string()
}

/// Deterministic sequence of `n` tweets.
pub fn generate_tweets(
    seed: u64,
    n: u64,
    brand_weights: &BTreeMap<String, f64>,
) -> Result<TweetStream> {
    Ok(TweetStream {
        generator: TweetGenerator::new(seed, brand_weights)?,
        remaining: n,
    })
}

pub struct TweetStream {
    generator: TweetGenerator,
    remaining: u64,
}

impl Iterator for TweetStream {
    type Item = Tweet;

    fn next(&mut self) -> Option<Tweet> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.generator.next_tweet())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_count_yields_empty_sequence() {
        let tweets: Vec<_> = generate_tweets(1, 0, &uniform_brand_weights())
            .unwrap()
            .collect();
        assert!(tweets.is_empty());
    }

    #[test]
    fn same_inputs_give_byte_identical_json() {
        let run = || -> Vec<String> {
            generate_tweets(42, 200, &uniform_brand_weights())
                .unwrap()
                .map(|t| t.to_json())
                .collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn english_dominates() {
        let tweets: Vec<_> = generate_tweets(42, 2000, &uniform_brand_weights())
            .unwrap()
            .collect();
        let en = tweets.iter().filter(|t| t.lang == "en").count();
        assert!(en as f64 >= 0.9 * tweets.len() as f64);
        assert!(tweets.iter().all(|t| t.lang.len() == 2));
    }

    #[test]
    fn invalid_weights_rejected() {
        let zero: BTreeMap<String, f64> = [("Ford".to_string(), 0.0)].into();
        assert!(matches!(
            generate_tweets(1, 5, &zero),
            Err(LakeError::InvalidWeights)
        ));
        let negative: BTreeMap<String, f64> =
            [("Ford".to_string(), 1.0), ("Audi".to_string(), -1.0)].into();
        assert!(matches!(
            generate_tweets(1, 5, &negative),
            Err(LakeError::InvalidWeights)
        ));
    }

    #[test]
    fn created_time_round_trips_through_twitter_format() {
        let tweets: Vec<_> = generate_tweets(7, 50, &uniform_brand_weights())
            .unwrap()
            .collect();
        for t in tweets {
            let parsed =
                DateTime::parse_from_str(&t.created_time, "%a %b %d %H:%M:%S %z %Y").unwrap();
            assert_eq!(parsed.timestamp(), t.created_unixtime / 1000);
            assert!(t.created_time.contains("+0000"));
        }
    }

    #[test]
    fn ids_and_times_increase_monotonically() {
        let tweets: Vec<_> = generate_tweets(3, 100, &uniform_brand_weights())
            .unwrap()
            .collect();
        for pair in tweets.windows(2) {
            assert!(pair[1].tweet_id > pair[0].tweet_id);
            assert!(pair[1].created_unixtime > pair[0].created_unixtime);
        }
    }

    #[test]
    fn weighted_brands_skew_mentions() {
        use crate::text::{extract_brands, tokenize, BrandLexicon};
        let mut weights = BTreeMap::new();
        weights.insert("Ford".to_string(), 10.0);
        weights.insert("Audi".to_string(), 0.0);
        let lex = BrandLexicon::default();
        let mut ford = 0u32;
        let mut audi = 0u32;
        for t in generate_tweets(5, 500, &weights).unwrap() {
            let brands = extract_brands(&tokenize(&t.msg), &lex);
            ford += u32::from(brands.contains("Ford"));
            audi += u32::from(brands.contains("Audi"));
        }
        assert!(ford > 0);
        assert_eq!(audi, 0, "zero-weight brand must never be drawn");
    }
}
