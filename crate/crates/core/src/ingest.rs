//! Chat log ingestion: JSONL/CSV parsing, stream statistics and the
//! engagement histogram.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("failed to read chat log: {0}")]
    Io(#[from] std::io::Error),
    #[error("chat log contains no valid messages ({malformed} malformed records skipped)")]
    EmptyDataset { malformed: usize },
    #[error("invalid engagement buckets: {0}")]
    Buckets(String),
}

/// Input encoding of a chat log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    #[default]
    Jsonl,
    Csv,
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(LogFormat::Jsonl),
            "csv" => Ok(LogFormat::Csv),
            other => Err(format!("unknown log format `{other}` (expected jsonl or csv)")),
        }
    }
}

/// One chat line from one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub timestamp: DateTime<Utc>,
    pub user_display: String,
    pub user_key: String,
    pub text: String,
}

impl ChatMessage {
    /// Builds a message, enforcing the key and single-line invariants.
    /// Returns `None` when the user name is empty.
    pub fn new(timestamp: DateTime<Utc>, user: &str, text: &str) -> Option<Self> {
        let user_key = user.to_lowercase();
        if user_key.trim().is_empty() {
            return None;
        }
        Some(ChatMessage {
            timestamp: truncate_to_millis(timestamp),
            user_display: user.to_string(),
            user_key,
            text: flatten_line_breaks(text),
        })
    }
}

/// Result of parsing a log: the valid messages in file order plus the number
/// of records that were skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLog {
    pub messages: Vec<ChatMessage>,
    pub malformed: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    ts: String,
    user: String,
    text: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    ts: String,
    user: &'a str,
    text: &'a str,
}

fn truncate_to_millis(ts: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(ts.timestamp_millis()).unwrap_or(ts)
}

/// Replaces every line break (`\r\n`, `\n`, `\r`, NEL, LS, PS) with one space.
pub fn flatten_line_breaks(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push(' ');
            }
            '\n' | '\u{0085}' | '\u{2028}' | '\u{2029}' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(raw.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

fn record_to_message(rec: RawRecord) -> Option<ChatMessage> {
    let ts = parse_timestamp(&rec.ts)?;
    ChatMessage::new(ts, &rec.user, &rec.text)
}

/// Parses a chat log. Malformed records are skipped and counted; a log
/// without a single valid record is an error.
pub fn parse_chat_log<R: Read>(source: R, format: LogFormat) -> Result<ParsedLog, IngestError> {
    let (messages, malformed) = match format {
        LogFormat::Jsonl => parse_jsonl(source)?,
        LogFormat::Csv => parse_csv(source)?,
    };
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed chat log records");
    }
    if messages.is_empty() {
        return Err(IngestError::EmptyDataset { malformed });
    }
    Ok(ParsedLog {
        messages,
        malformed,
    })
}

fn parse_jsonl<R: Read>(source: R) -> Result<(Vec<ChatMessage>, usize), IngestError> {
    let mut messages = Vec::new();
    let mut malformed = 0;
    for line in BufReader::new(source).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(line)
            .ok()
            .and_then(record_to_message)
        {
            Some(msg) => messages.push(msg),
            None => malformed += 1,
        }
    }
    Ok((messages, malformed))
}

fn parse_csv<R: Read>(source: R) -> Result<(Vec<ChatMessage>, usize), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ts_col), Some(user_col), Some(text_col)) = (column("ts"), column("user"), column("text"))
    else {
        // no usable header: every data row is malformed
        let rows = reader.records().count();
        return Ok((Vec::new(), rows));
    };

    let mut messages = Vec::new();
    let mut malformed = 0;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(csv_error(e)),
            Err(_) => {
                malformed += 1;
                continue;
            }
        };
        let msg = match (record.get(ts_col), record.get(user_col), record.get(text_col)) {
            (Some(ts), Some(user), Some(text)) if record.len() == headers.len() => {
                record_to_message(RawRecord {
                    ts: ts.to_string(),
                    user: user.to_string(),
                    text: text.to_string(),
                })
            }
            _ => None,
        };
        match msg {
            Some(m) => messages.push(m),
            None => malformed += 1,
        }
    }
    Ok((messages, malformed))
}

fn csv_error(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => IngestError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{other:?}"),
        )),
    }
}

/// Writes messages as canonical JSONL (`ts` with millisecond precision).
pub fn write_jsonl<W: Write>(messages: &[ChatMessage], mut out: W) -> std::io::Result<()> {
    for m in messages {
        let rec = RecordOut {
            ts: m.timestamp.to_rfc3339_opts(SecondsFormat::Millis, true),
            user: &m.user_display,
            text: &m.text,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Stream-level size figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub messages: usize,
    pub chatters: usize,
    /// Last timestamp minus first timestamp, in milliseconds.
    pub length_ms: i64,
}

impl DatasetSummary {
    /// Human form of the stream length: `4h 31m`, `10m`, `42s`.
    pub fn length_label(&self) -> String {
        format_duration_ms(self.length_ms)
    }
}

pub fn format_duration_ms(ms: i64) -> String {
    let secs = ms.max(0) / 1000;
    let (h, m, s) = (secs / 3600, (secs % 3600) / 60, secs % 60);
    if h > 0 {
        format!("{h}h {m}m")
    } else if m > 0 {
        format!("{m}m")
    } else {
        format!("{s}s")
    }
}

pub fn dataset_summary(messages: &[ChatMessage]) -> Result<DatasetSummary, IngestError> {
    let first = messages
        .first()
        .ok_or(IngestError::EmptyDataset { malformed: 0 })?;
    let (mut lo, mut hi) = (first.timestamp, first.timestamp);
    let mut users = HashSet::new();
    for m in messages {
        lo = lo.min(m.timestamp);
        hi = hi.max(m.timestamp);
        users.insert(m.user_key.as_str());
    }
    Ok(DatasetSummary {
        messages: messages.len(),
        chatters: users.len(),
        length_ms: (hi - lo).num_milliseconds(),
    })
}

/// A message-count range `[lo, hi]`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketRange {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl BucketRange {
    pub fn contains(&self, count: usize) -> bool {
        count >= self.lo && self.hi.is_none_or(|hi| count <= hi)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("{}-{}", self.lo, hi),
            None => format!("{}+", self.lo),
        }
    }
}

/// Validated, contiguous bucket layout covering `[1, ∞)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketSpec(Vec<BucketRange>);

impl BucketSpec {
    pub fn new(ranges: Vec<BucketRange>) -> Result<Self, IngestError> {
        let err = |m: String| Err(IngestError::Buckets(m));
        let Some(first) = ranges.first() else {
            return err("no buckets given".into());
        };
        if first.lo != 1 {
            return err(format!("first bucket must start at 1, got {}", first.lo));
        }
        for (i, r) in ranges.iter().enumerate() {
            let last = i + 1 == ranges.len();
            match r.hi {
                Some(hi) if hi < r.lo => return err(format!("bucket {} is empty", r.label())),
                Some(hi) if last => {
                    return err(format!("last bucket must be unbounded, ends at {hi}"))
                }
                Some(hi) => {
                    let next = ranges[i + 1].lo;
                    if next <= hi {
                        return err(format!("buckets overlap at {next}"));
                    }
                    if next > hi + 1 {
                        return err(format!("gap between {hi} and {next}"));
                    }
                }
                None if !last => {
                    return err(format!("unbounded bucket {} must be last", r.label()))
                }
                None => {}
            }
        }
        Ok(BucketSpec(ranges))
    }

    pub fn ranges(&self) -> &[BucketRange] {
        &self.0
    }
}

impl Default for BucketSpec {
    fn default() -> Self {
        let r = |lo, hi| BucketRange { lo, hi };
        BucketSpec(vec![
            r(1, Some(10)),
            r(11, Some(20)),
            r(21, Some(50)),
            r(51, Some(100)),
            r(101, None),
        ])
    }
}

impl FromStr for BucketSpec {
    type Err = IngestError;

    /// Parses `1-10,11-20,21+`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |p: &str| IngestError::Buckets(format!("cannot parse bucket `{p}`"));
        let mut ranges = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let range = if let Some(lo) = part.strip_suffix('+') {
                BucketRange {
                    lo: lo.trim().parse().map_err(|_| bad(part))?,
                    hi: None,
                }
            } else {
                let (lo, hi) = part.split_once('-').ok_or_else(|| bad(part))?;
                BucketRange {
                    lo: lo.trim().parse().map_err(|_| bad(part))?,
                    hi: Some(hi.trim().parse().map_err(|_| bad(part))?),
                }
            };
            ranges.push(range);
        }
        BucketSpec::new(ranges)
    }
}

impl fmt::Display for BucketSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.0.iter().map(BucketRange::label).collect();
        f.write_str(&labels.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub label: String,
    pub lo: usize,
    pub hi: Option<usize>,
    pub chatters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementHistogram {
    pub buckets: Vec<HistogramBucket>,
}

/// Per-user message counts keyed by `user_key`.
pub fn message_counts(messages: &[ChatMessage]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for m in messages {
        *counts.entry(m.user_key.as_str()).or_insert(0) += 1;
    }
    counts
}

pub fn engagement_histogram(messages: &[ChatMessage], spec: &BucketSpec) -> EngagementHistogram {
    let mut buckets: Vec<HistogramBucket> = spec
        .ranges()
        .iter()
        .map(|r| HistogramBucket {
            label: r.label(),
            lo: r.lo,
            hi: r.hi,
            chatters: 0,
        })
        .collect();
    for count in message_counts(messages).into_values() {
        // a validated spec covers every count >= 1
        if let Some(i) = spec.ranges().iter().position(|r| r.contains(count)) {
            buckets[i].chatters += 1;
        }
    }
    EngagementHistogram { buckets }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(min: u32) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(&format!("2024-08-01T12:{min:02}:00Z"))
            .unwrap()
            .with_timezone(&Utc)
    }

    fn msg(min: u32, user: &str) -> ChatMessage {
        ChatMessage::new(ts(min), user, "x").unwrap()
    }

    #[test]
    fn parses_jsonl_record() {
        let src = r#"{"ts":"2024-08-01T12:00:00Z","user":"PikaFan","text":"hi"}"#;
        let log = parse_chat_log(src.as_bytes(), LogFormat::Jsonl).unwrap();
        assert_eq!(log.messages.len(), 1);
        let m = &log.messages[0];
        assert_eq!(m.user_key, "pikafan");
        assert_eq!(m.user_display, "PikaFan");
        assert_eq!(m.text, "hi");
        assert_eq!(m.timestamp, ts(0));
    }

    #[test]
    fn embedded_newline_becomes_space() {
        let src = r#"{"ts":"2024-08-01T12:00:00Z","user":"a","text":"a\nb"}"#;
        let log = parse_chat_log(src.as_bytes(), LogFormat::Jsonl).unwrap();
        assert_eq!(log.messages[0].text, "a b");
        assert_eq!(flatten_line_breaks("x\r\ny\rz\u{2028}w"), "x y z w");
    }

    #[test]
    fn malformed_lines_are_counted() {
        let src = concat!(
            r#"{"ts":"2024-08-01T12:00:00Z","user":"a","text":"one"}"#,
            "\n",
            r#"{"ts":"2024-08-01T12:01:00Z","text":"no user"}"#,
            "\n\n",
            r#"{"ts":"2024-08-01T12:02:00Z","user":"b","text":"two"}"#,
            "\n"
        );
        let log = parse_chat_log(src.as_bytes(), LogFormat::Jsonl).unwrap();
        assert_eq!(log.messages.len(), 2);
        assert_eq!(log.malformed, 1);
    }

    #[test]
    fn bad_timestamp_and_empty_user_are_malformed() {
        let src = concat!(
            r#"{"ts":"yesterday","user":"a","text":"one"}"#,
            "\n",
            r#"{"ts":"2024-08-01T12:00:00Z","user":"","text":"two"}"#,
            "\n",
            r#"{"ts":"2024-08-01T12:00:00+02:00","user":"c","text":"three"}"#,
        );
        let log = parse_chat_log(src.as_bytes(), LogFormat::Jsonl).unwrap();
        assert_eq!(log.malformed, 2);
        assert_eq!(log.messages[0].timestamp.to_rfc3339(), "2024-08-01T10:00:00+00:00");
    }

    #[test]
    fn empty_log_is_an_error() {
        let err = parse_chat_log("garbage\n".as_bytes(), LogFormat::Jsonl).unwrap_err();
        assert!(matches!(err, IngestError::EmptyDataset { malformed: 1 }));
        let err = parse_chat_log("".as_bytes(), LogFormat::Jsonl).unwrap_err();
        assert!(matches!(err, IngestError::EmptyDataset { malformed: 0 }));
    }

    #[test]
    fn parses_csv_with_quoting() {
        let src = "ts,user,text\n\
                   2024-08-01T12:00:00Z,Ann,\"hello, \"\"world\"\"\"\n\
                   2024-08-01T12:01:00Z,Bob,\"multi\nline\"\n\
                   2024-08-01T12:02:00Z,Cy\n";
        let log = parse_chat_log(src.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.messages.len(), 2);
        assert_eq!(log.malformed, 1);
        assert_eq!(log.messages[0].text, "hello, \"world\"");
        assert_eq!(log.messages[1].text, "multi line");
    }

    #[test]
    fn summary_counts_distinct_keys() {
        let msgs = vec![msg(0, "A"), msg(5, "b"), msg(10, "a")];
        let s = dataset_summary(&msgs).unwrap();
        assert_eq!(
            s,
            DatasetSummary {
                messages: 3,
                chatters: 2,
                length_ms: 10 * 60 * 1000
            }
        );
        assert_eq!(s.length_label(), "10m");
    }

    #[test]
    fn summary_single_message() {
        let s = dataset_summary(&[msg(3, "x")]).unwrap();
        assert_eq!((s.messages, s.chatters, s.length_ms), (1, 1, 0));
        assert!(dataset_summary(&[]).is_err());
    }

    #[test]
    fn duration_labels() {
        assert_eq!(format_duration_ms((4 * 3600 + 31 * 60 + 12) * 1000), "4h 31m");
        assert_eq!(format_duration_ms(45_000), "45s");
        assert_eq!(format_duration_ms(0), "0s");
    }

    fn user_with(n: usize, user: &str) -> Vec<ChatMessage> {
        (0..n).map(|_| msg(0, user)).collect()
    }

    #[test]
    fn histogram_boundaries() {
        let spec = BucketSpec::default();
        let mut msgs = user_with(7, "a");
        msgs.extend(user_with(10, "b"));
        msgs.extend(user_with(11, "c"));
        let h = engagement_histogram(&msgs, &spec);
        assert_eq!(h.buckets[0].label, "1-10");
        assert_eq!(h.buckets[0].chatters, 2);
        assert_eq!(h.buckets[1].label, "11-20");
        assert_eq!(h.buckets[1].chatters, 1);
    }

    #[test]
    fn histogram_hand_counted() {
        let mut msgs = user_with(3, "a");
        msgs.extend(user_with(15, "b"));
        msgs.extend(user_with(40, "c"));
        let h = engagement_histogram(&msgs, &BucketSpec::default());
        let counts: Vec<usize> = h.buckets.iter().map(|b| b.chatters).collect();
        assert_eq!(counts, vec![1, 1, 1, 0, 0]);
        assert_eq!(h.buckets[4].label, "101+");
    }

    #[test]
    fn bucket_spec_validation() {
        assert_eq!(
            "1-10,11-20,21-50,51-100,101+".parse::<BucketSpec>().unwrap(),
            BucketSpec::default()
        );
        assert_eq!(BucketSpec::default().to_string(), "1-10,11-20,21-50,51-100,101+");
        for bad in ["1-10,10-20,21+", "1-10,12-20,21+", "2-10,11+", "1-10,11-20", "1+,5+", "", "1-x"] {
            assert!(bad.parse::<BucketSpec>().is_err(), "{bad} should be rejected");
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let src = concat!(
            r#"{"ts":"2024-08-01T12:00:00.123Z","user":"Ann","text":"a\nb \"q\""}"#,
            "\n",
            r#"{"ts":"2024-08-01T13:00:00Z","user":"bob","text":"ü 🎉"}"#,
        );
        let first = parse_chat_log(src.as_bytes(), LogFormat::Jsonl).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&first.messages, &mut buf).unwrap();
        let second = parse_chat_log(buf.as_slice(), LogFormat::Jsonl).unwrap();
        assert_eq!(first.messages, second.messages);
    }
}
