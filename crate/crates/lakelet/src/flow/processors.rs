//! Built-in processor kinds and the traits the runtime drives them through.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

use crate::error::{LakeError, Result};
use crate::flow::record::{FlowRecord, ProvenanceKind, ProvenanceLog};
use crate::flow::tweets::{uniform_brand_weights, TweetGenerator};
use crate::store::{LakeStore, ObjectKey, Zone};

/// What a transform does with one consumed record.
pub(crate) enum Action {
    Emit {
        port: &'static str,
        record: FlowRecord,
        event: Option<(ProvenanceKind, String)>,
    },
    DropRecord {
        uuid: Uuid,
        detail: String,
    },
}

pub(crate) trait RecordSource: Send {
    /// `None` signals end of stream; infinite sources never return it.
    fn next_record(&mut self) -> Result<Option<FlowRecord>>;
}

pub(crate) trait RecordTransform: Send {
    fn apply(&mut self, record: FlowRecord) -> Result<Vec<Action>>;
}

/// Shared services handed to sinks by the runtime.
pub(crate) struct SinkCtx<'a> {
    pub store: &'a LakeStore,
    pub provenance: &'a ProvenanceLog,
    pub run_id: &'a str,
    pub sink_name: &'a str,
    pub files_committed: &'a AtomicUsize,
    /// sink name -> (zone, dataset, files committed by that sink)
    pub sink_commits: &'a Mutex<BTreeMap<String, (Zone, String, usize)>>,
}

pub(crate) trait RecordSink: Send {
    fn accept(&mut self, record: FlowRecord, ctx: &SinkCtx<'_>) -> Result<()>;
    /// Called when the input has been idle for the flush interval.
    fn tick(&mut self, ctx: &SinkCtx<'_>) -> Result<()>;
    /// End-of-stream: force a final flush.
    fn finish(&mut self, ctx: &SinkCtx<'_>) -> Result<()>;
    fn flush_interval(&self) -> Duration;
    fn target(&self) -> (Zone, String);
}

pub(crate) enum ProcessorInstance {
    Source(Box<dyn RecordSource>),
    Transform(Box<dyn RecordTransform>),
    Sink(Box<dyn RecordSink>),
}

impl ProcessorInstance {
    pub(crate) fn role_name(&self) -> &'static str {
        match self {
            ProcessorInstance::Source(_) => "source",
            ProcessorInstance::Transform(_) => "transform",
            ProcessorInstance::Sink(_) => "sink",
        }
    }
}

type Params = serde_json::Map<String, serde_json::Value>;

fn param_u64(params: &Params, key: &str) -> Result<Option<u64>> {
    match params.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| {
            LakeError::InvalidFlowSpec(format!("param {key:?} must be a non-negative integer"))
        }),
    }
}

fn param_str(params: &Params, key: &str) -> Result<Option<String>> {
    match params.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(LakeError::InvalidFlowSpec(format!(
            "param {key:?} must be a string"
        ))),
    }
}

fn param_weights(params: &Params, key: &str) -> Result<Option<BTreeMap<String, f64>>> {
    match params.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::Object(map)) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let w = v.as_f64().ok_or_else(|| {
                    LakeError::InvalidFlowSpec(format!("weight for {k:?} must be a number"))
                })?;
                out.insert(k.clone(), w);
            }
            Ok(Some(out))
        }
        Some(_) => Err(LakeError::InvalidFlowSpec(format!(
            "param {key:?} must be an object of brand weights"
        ))),
    }
}

/// Builds a processor from its spec entry. `seed_override` takes precedence
/// over any `seed` param of generator sources.
pub(crate) fn instantiate(
    kind: &str,
    params: &Params,
    seed_override: Option<u64>,
) -> Result<(ProcessorInstance, &'static [&'static str])> {
    match kind {
        "tweet_source" => {
            let seed = seed_override
                .or(param_u64(params, "seed")?)
                .ok_or_else(|| {
                    LakeError::InvalidFlowSpec(
                        "tweet_source requires a seed (param or --seed)".into(),
                    )
                })?;
            let weights = param_weights(params, "brands")?.unwrap_or_else(uniform_brand_weights);
            let source = TweetSourceProc::new(seed, &weights)?;
            Ok((ProcessorInstance::Source(Box::new(source)), &["out"]))
        }
        "static_source" => {
            let lines = match params.get("lines") {
                Some(serde_json::Value::Array(items)) => items
                    .iter()
                    .map(|v| {
                        v.as_str().map(str::to_string).ok_or_else(|| {
                            LakeError::InvalidFlowSpec("lines must be strings".into())
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
                _ => {
                    return Err(LakeError::InvalidFlowSpec(
                        "static_source requires a lines array".into(),
                    ))
                }
            };
            let seed = seed_override.or(param_u64(params, "seed")?).unwrap_or(0);
            Ok((
                ProcessorInstance::Source(Box::new(StaticSourceProc::new(lines, seed))),
                &["out"],
            ))
        }
        "parse_tweet" => Ok((
            ProcessorInstance::Transform(Box::new(ParseTweetProc)),
            &["out", "quarantine"],
        )),
        "filter_lang" => {
            let keep = param_str(params, "keep")?.ok_or_else(|| {
                LakeError::InvalidFlowSpec("filter_lang requires a keep language".into())
            })?;
            Ok((
                ProcessorInstance::Transform(Box::new(FilterLangProc { keep })),
                &["out"],
            ))
        }
        "passthrough" => {
            let delay_ms = param_u64(params, "delay_ms")?.unwrap_or(0);
            Ok((
                ProcessorInstance::Transform(Box::new(PassthroughProc { delay_ms })),
                &["out"],
            ))
        }
        "micro_batch_sink" => {
            let zone: Zone = param_str(params, "zone")?
                .unwrap_or_else(|| "raw".to_string())
                .parse()?;
            let dataset = param_str(params, "dataset")?.ok_or_else(|| {
                LakeError::InvalidFlowSpec("micro_batch_sink requires a dataset".into())
            })?;
            let sink = MicroBatchSinkProc {
                zone,
                dataset,
                batch_max: param_u64(params, "batch_max")?.unwrap_or(500).max(1) as usize,
                flush_interval: Duration::from_millis(
                    param_u64(params, "flush_interval_ms")?.unwrap_or(1000).max(1),
                ),
                delay_ms: param_u64(params, "delay_ms")?.unwrap_or(0),
                fail_after_records: param_u64(params, "fail_after_records")?,
                pending: Vec::new(),
                batch_seq: 0,
                accepted: 0,
                last_flush: Instant::now(),
            };
            Ok((ProcessorInstance::Sink(Box::new(sink)), &[]))
        }
        other => Err(LakeError::UnknownProcessorKind(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Sources
// ---------------------------------------------------------------------------

/// Endless seeded tweets. Record uuids come from a separate rng stream so the
/// tweet sequence stays identical to [`generate_tweets`](crate::flow::generate_tweets)
/// with the same seed.
struct TweetSourceProc {
    generator: TweetGenerator,
    uuid_rng: ChaCha8Rng,
}

impl TweetSourceProc {
    fn new(seed: u64, weights: &BTreeMap<String, f64>) -> Result<Self> {
        Ok(TweetSourceProc {
            generator: TweetGenerator::new(seed, weights)?,
            uuid_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        })
    }
}

fn next_uuid(rng: &mut ChaCha8Rng) -> Uuid {
    uuid::Builder::from_random_bytes(rng.random::<[u8; 16]>()).into_uuid()
}

impl RecordSource for TweetSourceProc {
    fn next_record(&mut self) -> Result<Option<FlowRecord>> {
        let tweet = self.generator.next_tweet();
        let uuid = next_uuid(&mut self.uuid_rng);
        Ok(Some(FlowRecord::new(
            uuid,
            tweet.to_json().into_bytes(),
        )))
    }
}

/// Fixed list of payload lines; ends when exhausted.
struct StaticSourceProc {
    lines: std::vec::IntoIter<String>,
    uuid_rng: ChaCha8Rng,
}

impl StaticSourceProc {
    fn new(lines: Vec<String>, seed: u64) -> Self {
        StaticSourceProc {
            lines: lines.into_iter(),
            uuid_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }
}

impl RecordSource for StaticSourceProc {
    fn next_record(&mut self) -> Result<Option<FlowRecord>> {
        Ok(self.lines.next().map(|line| {
            FlowRecord::new(next_uuid(&mut self.uuid_rng), line.into_bytes())
        }))
    }
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// Extracts `tweet_id`, `lang`, `msg` attributes from a JSON tweet payload;
/// non-JSON payloads are routed to the quarantine port with DROP provenance.
struct ParseTweetProc;

impl RecordTransform for ParseTweetProc {
    fn apply(&mut self, record: FlowRecord) -> Result<Vec<Action>> {
        let parsed: Option<serde_json::Map<String, serde_json::Value>> =
            serde_json::from_slice::<serde_json::Value>(&record.payload)
                .ok()
                .and_then(|v| match v {
                    serde_json::Value::Object(map) => Some(map),
                    _ => None,
                });
        let Some(map) = parsed else {
            return Ok(vec![Action::Emit {
                port: "quarantine",
                record,
                event: Some((ProvenanceKind::Drop, "malformed-json".to_string())),
            }]);
        };
        let mut out = record;
        let mut set = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.attributes.insert(key.to_string(), v);
            }
        };
        set(
            "tweet_id",
            map.get("tweet_id").map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            }),
        );
        set(
            "lang",
            map.get("lang").and_then(|v| v.as_str()).map(str::to_string),
        );
        set(
            "msg",
            map.get("msg").and_then(|v| v.as_str()).map(str::to_string),
        );
        Ok(vec![Action::Emit {
            port: "out",
            record: out,
            event: Some((ProvenanceKind::Transform, "parse_tweet".to_string())),
        }])
    }
}

/// Passes records whose `lang` attribute equals `keep`; drops the rest.
struct FilterLangProc {
    keep: String,
}

impl RecordTransform for FilterLangProc {
    fn apply(&mut self, record: FlowRecord) -> Result<Vec<Action>> {
        match record.attributes.get("lang") {
            Some(lang) if *lang == self.keep => Ok(vec![Action::Emit {
                port: "out",
                record,
                event: Some((ProvenanceKind::Route, format!("pass:lang={}", self.keep))),
            }]),
            Some(lang) => Ok(vec![Action::DropRecord {
                uuid: record.uuid,
                detail: format!("lang={lang}"),
            }]),
            None => Ok(vec![Action::DropRecord {
                uuid: record.uuid,
                detail: "missing-attribute".to_string(),
            }]),
        }
    }
}

/// 1:1 no-op, optionally slowed for back-pressure tests.
struct PassthroughProc {
    delay_ms: u64,
}

impl RecordTransform for PassthroughProc {
    fn apply(&mut self, record: FlowRecord) -> Result<Vec<Action>> {
        if self.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.delay_ms));
        }
        Ok(vec![Action::Emit {
            port: "out",
            record,
            event: None,
        }])
    }
}

// ---------------------------------------------------------------------------
// Sinks
// ---------------------------------------------------------------------------

/// Micro-batched JSON-lines sink: one part file and one manifest commit per
/// batch. Lines keep the original payload bytes with a sibling `_uuid` field
/// spliced in for query-time dedup.
struct MicroBatchSinkProc {
    zone: Zone,
    dataset: String,
    batch_max: usize,
    flush_interval: Duration,
    delay_ms: u64,
    /// Fault injection for crash tests: error on the record after this many.
    fail_after_records: Option<u64>,
    pending: Vec<FlowRecord>,
    batch_seq: usize,
    accepted: u64,
    last_flush: Instant,
}

impl MicroBatchSinkProc {
    fn flush(&mut self, ctx: &SinkCtx<'_>) -> Result<()> {
        self.last_flush = Instant::now();
        if self.pending.is_empty() {
            return Ok(());
        }
        let mut lines = String::new();
        for rec in &self.pending {
            lines.push_str(&jsonl_line(&rec.payload, rec.uuid));
            lines.push('\n');
        }
        let key = ObjectKey::new(
            self.zone,
            &self.dataset,
            ctx.run_id,
            &format!("part-{:05}.jsonl", self.batch_seq),
        )?;
        let object = ctx
            .store
            .put_object(&key, lines.as_bytes())?
            .with_record_count(self.pending.len() as u64);
        // commit failure: one retry, then the flow halts
        if let Err(first) = ctx
            .store
            .commit_manifest(&self.dataset, self.zone, vec![object.clone()])
        {
            drop(first);
            ctx.store
                .commit_manifest(&self.dataset, self.zone, vec![object])?;
        }
        for rec in &self.pending {
            ctx.provenance.log(
                rec.uuid,
                ctx.sink_name,
                ProvenanceKind::Send,
                &format!("{}/{}", self.zone, self.dataset),
            );
        }
        ctx.files_committed.fetch_add(1, Ordering::SeqCst);
        let mut commits = ctx.sink_commits.lock().unwrap();
        let entry = commits
            .entry(ctx.sink_name.to_string())
            .or_insert_with(|| (self.zone, self.dataset.clone(), 0));
        entry.2 += 1;
        self.pending.clear();
        self.batch_seq += 1;
        Ok(())
    }
}

impl RecordSink for MicroBatchSinkProc {
    fn accept(&mut self, record: FlowRecord, ctx: &SinkCtx<'_>) -> Result<()> {
        if self.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.delay_ms));
        }
        if let Some(k) = self.fail_after_records {
            if self.accepted >= k {
                return Err(LakeError::FlowFailed {
                    processor: ctx.sink_name.to_string(),
                    reason: "injected sink failure".to_string(),
                });
            }
        }
        self.accepted += 1;
        self.pending.push(record);
        if self.pending.len() >= self.batch_max
            || self.last_flush.elapsed() >= self.flush_interval
        {
            self.flush(ctx)?;
        }
        Ok(())
    }

    fn tick(&mut self, ctx: &SinkCtx<'_>) -> Result<()> {
        if self.last_flush.elapsed() >= self.flush_interval {
            self.flush(ctx)?;
        }
        Ok(())
    }

    fn finish(&mut self, ctx: &SinkCtx<'_>) -> Result<()> {
        self.flush(ctx)
    }

    fn flush_interval(&self) -> Duration {
        self.flush_interval
    }

    fn target(&self) -> (Zone, String) {
        (self.zone, self.dataset.clone())
    }
}

/// Original payload with `"_uuid"` spliced in before the closing brace;
/// non-object payloads (quarantined garbage) are wrapped instead.
fn jsonl_line(payload: &[u8], uuid: Uuid) -> String {
    if let Ok(text) = std::str::from_utf8(payload) {
        let trimmed = text.trim();
        let is_object = trimmed.starts_with('{')
            && trimmed.ends_with('}')
            && serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(trimmed)
                .is_ok();
        if is_object {
            let body = trimmed[..trimmed.len() - 1].trim_end();
            let comma = if body == "{" { "" } else { "," };
            return format!("{body}{comma}\"_uuid\":\"{uuid}\"}}");
        }
    }
    serde_json::json!({
        "_raw": String::from_utf8_lossy(payload),
        "_uuid": uuid.to_string(),
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uuid_splice_keeps_original_payload_prefix() {
        let uuid = Uuid::from_u128(5);
        let payload = br#"{"tweet_id":1,"msg":"hi"}"#;
        let line = jsonl_line(payload, uuid);
        assert!(line.starts_with(r#"{"tweet_id":1,"msg":"hi","#));
        assert!(line.ends_with(&format!(r#""_uuid":"{uuid}"}}"#)));
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed["tweet_id"], 1);
        assert_eq!(parsed["_uuid"], uuid.to_string());
    }

    #[test]
    fn uuid_splice_handles_empty_and_garbage() {
        let uuid = Uuid::from_u128(6);
        let line = jsonl_line(b"{}", uuid);
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed["_uuid"], uuid.to_string());

        let line = jsonl_line(b"not json", uuid);
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed["_raw"], "not json");
        assert_eq!(parsed["_uuid"], uuid.to_string());
    }

    #[test]
    fn parse_tweet_extracts_attributes() {
        let mut proc = ParseTweetProc;
        let payload = br#"{"tweet_id":1109349236406140929,"lang":"en","msg":"Mitsubishi EVO 10 LANCER"}"#;
        let record = FlowRecord::new(Uuid::from_u128(1), payload.to_vec());
        let actions = proc.apply(record).unwrap();
        let Action::Emit { port, record, .. } = &actions[0] else {
            panic!("expected emit");
        };
        assert_eq!(*port, "out");
        assert_eq!(record.attributes["tweet_id"], "1109349236406140929");
        assert_eq!(record.attributes["lang"], "en");
        assert!(record.attributes["msg"].contains("Mitsubishi EVO 10 LANCER"));
        // payload untouched
        assert_eq!(record.payload, payload);
    }

    #[test]
    fn parse_tweet_quarantines_garbage_and_keeps_empty_msg() {
        let mut proc = ParseTweetProc;
        let record = FlowRecord::new(Uuid::from_u128(2), b"not json".to_vec());
        let actions = proc.apply(record).unwrap();
        let Action::Emit { port, event, .. } = &actions[0] else {
            panic!("expected emit");
        };
        assert_eq!(*port, "quarantine");
        assert!(matches!(event, Some((ProvenanceKind::Drop, _))));

        let record = FlowRecord::new(Uuid::from_u128(3), br#"{"msg":""}"#.to_vec());
        let actions = proc.apply(record).unwrap();
        let Action::Emit { record, port, .. } = &actions[0] else {
            panic!("expected emit");
        };
        assert_eq!(*port, "out");
        assert_eq!(record.attributes["msg"], "");
    }

    #[test]
    fn filter_lang_pass_drop_and_missing() {
        let mut proc = FilterLangProc { keep: "en".into() };
        let mut record = FlowRecord::new(Uuid::from_u128(4), vec![]);
        record.attributes.insert("lang".into(), "en".into());
        assert!(matches!(
            proc.apply(record).unwrap()[0],
            Action::Emit { port: "out", .. }
        ));

        let mut record = FlowRecord::new(Uuid::from_u128(5), vec![]);
        record.attributes.insert("lang".into(), "es".into());
        match &proc.apply(record).unwrap()[0] {
            Action::DropRecord { detail, .. } => assert_eq!(detail, "lang=es"),
            _ => panic!("expected drop"),
        }

        let record = FlowRecord::new(Uuid::from_u128(6), vec![]);
        match &proc.apply(record).unwrap()[0] {
            Action::DropRecord { detail, .. } => assert_eq!(detail, "missing-attribute"),
            _ => panic!("expected drop"),
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!(
            instantiate("teleport", &serde_json::Map::new(), None),
            Err(LakeError::UnknownProcessorKind(_))
        ));
    }
}
