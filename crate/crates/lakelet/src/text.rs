//! Tokenization, brand-mention extraction, and lexicon-based sentiment
//! scoring over tweet messages.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::catalog::Format;
use crate::error::{LakeError, Result};
use crate::schema::{infer_schema, open_reader, ReadMode, Value};
use crate::store::{LakeStore, Zone};

/// Case-folds and splits on any non-alphanumeric run; empty tokens removed,
/// order preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Canonical car-brand tokens. Matching is token-exact and case-insensitive;
/// multi-word brand names are unsupported.
#[derive(Debug, Clone)]
pub struct BrandLexicon {
    brands: Vec<String>,
    folded: HashMap<String, String>,
}

/// The ten brands of the canonical lexicon.
pub const DEFAULT_BRANDS: [&str; 10] = [
    "Ford",
    "Chevrolet",
    "Dodge",
    "Toyota",
    "GMC",
    "Mitsubishi",
    "Mazda",
    "Audi",
    "Benz",
    "Volkswagen",
];

impl BrandLexicon {
    pub fn new<S: AsRef<str>>(brands: &[S]) -> Result<Self> {
        if brands.is_empty() {
            return Err(LakeError::InvalidLexicon("brand list is empty".into()));
        }
        let mut canonical = Vec::new();
        let mut folded = HashMap::new();
        for b in brands {
            let name = b.as_ref().trim();
            let tokens = tokenize(name);
            if tokens.len() != 1 {
                return Err(LakeError::InvalidLexicon(format!(
                    "brand {name:?} is not a single token"
                )));
            }
            if folded.insert(tokens[0].clone(), name.to_string()).is_some() {
                return Err(LakeError::InvalidLexicon(format!(
                    "brand {name:?} duplicated (case-insensitive)"
                )));
            }
            canonical.push(name.to_string());
        }
        Ok(BrandLexicon {
            brands: canonical,
            folded,
        })
    }

    /// One token per line, `#` comments and blank lines skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(&parse_lexicon_lines(text))
    }

    pub fn brands(&self) -> &[String] {
        &self.brands
    }
}

impl Default for BrandLexicon {
    fn default() -> Self {
        BrandLexicon::new(&DEFAULT_BRANDS).expect("default brand lexicon is valid")
    }
}

/// Disjoint positive/negative token sets, matched case-insensitively.
#[derive(Debug, Clone)]
pub struct SentimentLexicon {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl SentimentLexicon {
    pub fn new<S: AsRef<str>>(positive: &[S], negative: &[S]) -> Result<Self> {
        let fold = |words: &[S]| -> HashSet<String> {
            words
                .iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect()
        };
        let positive = fold(positive);
        let negative = fold(negative);
        if let Some(both) = positive.intersection(&negative).next() {
            return Err(LakeError::InvalidLexicon(format!(
                "token {both:?} appears in both polarity sets"
            )));
        }
        Ok(SentimentLexicon { positive, negative })
    }

    pub fn from_texts(positive: &str, negative: &str) -> Result<Self> {
        Self::new(
            &parse_lexicon_lines(positive),
            &parse_lexicon_lines(negative),
        )
    }

    /// Same lexicon with polarities exchanged.
    pub fn swapped(&self) -> Self {
        SentimentLexicon {
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

fn parse_lexicon_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Brands whose case-folded token appears in `tokens`; set semantics.
pub fn extract_brands(tokens: &[String], lexicon: &BrandLexicon) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for t in tokens {
        if let Some(canonical) = lexicon.folded.get(t) {
            out.insert(canonical.clone());
        }
    }
    out
}

/// Polarity ratio `(P - N) / (P + N)` in `[-1, +1]`; 0 when no lexicon hits.
pub fn sentiment_score(tokens: &[String], lexicon: &SentimentLexicon) -> f64 {
    let mut pos = 0u64;
    let mut neg = 0u64;
    for t in tokens {
        if lexicon.positive.contains(t) {
            pos += 1;
        } else if lexicon.negative.contains(t) {
            neg += 1;
        }
    }
    if pos + neg == 0 {
        0.0
    } else {
        (pos as f64 - neg as f64) / (pos + neg) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrandSentiment {
    pub tweets: u64,
    /// Mean polarity over tweets mentioning the brand; null when none do.
    pub mean_score: Option<f64>,
}

/// Per-brand tweet count and mean sentiment over deduped tweets. A tweet
/// mentioning several brands contributes to each of their means.
pub fn brand_sentiment(
    store: &LakeStore,
    dataset: &str,
    zone: Zone,
    brand_lex: &BrandLexicon,
    sent_lex: &SentimentLexicon,
) -> Result<BTreeMap<String, BrandSentiment>> {
    let msgs = deduped_messages(store, dataset, zone)?;
    Ok(brand_sentiment_over(msgs.iter().map(String::as_str), brand_lex, sent_lex))
}

/// Pure aggregation core of [`brand_sentiment`].
pub fn brand_sentiment_over<'a>(
    msgs: impl IntoIterator<Item = &'a str>,
    brand_lex: &BrandLexicon,
    sent_lex: &SentimentLexicon,
) -> BTreeMap<String, BrandSentiment> {
    let mut counts: BTreeMap<String, (u64, f64)> = brand_lex
        .brands()
        .iter()
        .map(|b| (b.clone(), (0, 0.0)))
        .collect();
    for msg in msgs {
        let tokens = tokenize(msg);
        let brands = extract_brands(&tokens, brand_lex);
        if brands.is_empty() {
            continue;
        }
        let score = sentiment_score(&tokens, sent_lex);
        for b in brands {
            let entry = counts.get_mut(&b).expect("extracted brand is in lexicon");
            entry.0 += 1;
            entry.1 += score;
        }
    }
    counts
        .into_iter()
        .map(|(brand, (n, sum))| {
            let mean_score = (n > 0).then(|| sum / n as f64);
            (brand, BrandSentiment { tweets: n, mean_score })
        })
        .collect()
}

/// `msg` strings of a jsonl tweet dataset, deduped by `_uuid` (first record
/// per uuid wins; records without a uuid are kept).
pub fn deduped_messages(store: &LakeStore, dataset: &str, zone: Zone) -> Result<Vec<String>> {
    let schema = infer_schema(store, Format::Jsonl, dataset, zone, None, ReadMode::Lenient)?;
    let Some(msg_idx) = schema.field_index("msg") else {
        return Err(LakeError::PlanError(format!(
            "dataset {zone}/{dataset} has no msg field"
        )));
    };
    let uuid_idx = schema.field_index("_uuid");
    let mut reader = open_reader(store, Format::Jsonl, dataset, zone, &schema, ReadMode::Lenient)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut msgs = Vec::new();
    while let Some(row) = reader.next_row()? {
        if let Some(idx) = uuid_idx {
            if let Value::Str(u) = &row[idx] {
                if !seen.insert(u.clone()) {
                    continue;
                }
            }
        }
        if let Value::Str(m) = &row[msg_idx] {
            msgs.push(m.clone());
        } else {
            msgs.push(String::new());
        }
    }
    Ok(msgs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_non_alphanumeric_runs() {
        assert_eq!(
            tokenize("Chevrolet lineup https://tco/J"),
            vec!["chevrolet", "lineup", "https", "tco", "j"]
        );
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("EVO-10 LANCER!"), vec!["evo", "10", "lancer"]);
    }

    #[test]
    fn brand_extraction_is_token_exact_and_set_valued() {
        let lex = BrandLexicon::default();
        let one = |msg: &str| extract_brands(&tokenize(msg), &lex);
        assert_eq!(
            one("TechnaFit Stainless 4 Brake Lines Blue for 200816 Mitsubishi EVO 10 LANCER https://tco/li30a9qfhI"),
            BTreeSet::from(["Mitsubishi".to_string()])
        );
        assert_eq!(one("ford ford FORD"), BTreeSet::from(["Ford".to_string()]));
        assert!(one("fordable cars").is_empty());
    }

    #[test]
    fn extraction_is_casing_invariant() {
        let lex = BrandLexicon::default();
        let msg = "New Toyota and audi models!";
        assert_eq!(
            extract_brands(&tokenize(msg), &lex),
            extract_brands(&tokenize(&msg.to_uppercase()), &lex)
        );
    }

    #[test]
    fn score_formula_and_bounds() {
        let lex = SentimentLexicon::new(&["good", "great"], &["bad", "awful"]).unwrap();
        assert_eq!(sentiment_score(&tokenize("nothing matches here"), &lex), 0.0);
        assert_eq!(sentiment_score(&tokenize("good great good"), &lex), 1.0);
        // P=1, N=3
        assert_eq!(sentiment_score(&tokenize("good bad awful bad"), &lex), -0.5);
    }

    #[test]
    fn swap_antisymmetry() {
        let lex = SentimentLexicon::new(&["good"], &["bad"]).unwrap();
        let tokens = tokenize("good bad bad words everywhere");
        assert_eq!(
            sentiment_score(&tokens, &lex),
            -sentiment_score(&tokens, &lex.swapped())
        );
    }

    #[test]
    fn lexicon_validation() {
        assert!(matches!(
            BrandLexicon::new(&["Alfa Romeo"]),
            Err(LakeError::InvalidLexicon(_))
        ));
        assert!(matches!(
            BrandLexicon::new(&["Ford", "ford"]),
            Err(LakeError::InvalidLexicon(_))
        ));
        assert!(matches!(
            BrandLexicon::new(&[] as &[&str]),
            Err(LakeError::InvalidLexicon(_))
        ));
        assert!(matches!(
            SentimentLexicon::new(&["fine"], &["fine"]),
            Err(LakeError::InvalidLexicon(_))
        ));
    }

    #[test]
    fn comments_and_blanks_skipped_in_lexicon_files() {
        let lex = BrandLexicon::from_text("# brands\nFord\n\nAudi\n").unwrap();
        assert_eq!(lex.brands(), &["Ford".to_string(), "Audi".to_string()]);
    }

    #[test]
    fn multi_brand_tweet_counts_once_per_brand() {
        let brand_lex = BrandLexicon::default();
        let sent_lex = SentimentLexicon::new(&["great"], &["bad"]).unwrap();
        let out = brand_sentiment_over(
            ["great Ford and Audi", "bad Ford"],
            &brand_lex,
            &sent_lex,
        );
        assert_eq!(out["Ford"].tweets, 2);
        assert_eq!(out["Ford"].mean_score, Some(0.0));
        assert_eq!(out["Audi"].tweets, 1);
        assert_eq!(out["Audi"].mean_score, Some(1.0));
        assert_eq!(out["Toyota"].tweets, 0);
        assert_eq!(out["Toyota"].mean_score, None);
    }
}
