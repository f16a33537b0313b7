//! Per-chatter documents.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ingest::ChatMessage;

/// Minimum number of messages a chatter needs to be clustered.
pub const DEFAULT_MIN_MESSAGES: usize = 20;

/// All messages of one chatter joined by `\n`, in stream order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatterProfile {
    pub user_key: String,
    pub user_display: String,
    pub message_count: usize,
    pub document: String,
}

impl ChatterProfile {
    pub fn messages(&self) -> impl Iterator<Item = &str> {
        self.document.split('\n')
    }
}

/// Builds one profile per distinct `user_key`, sorted by key. The display
/// name is the first spelling seen in the stream.
pub fn build_profiles(messages: &[ChatMessage]) -> Vec<ChatterProfile> {
    let mut by_key: BTreeMap<&str, ChatterProfile> = BTreeMap::new();
    for m in messages {
        by_key
            .entry(m.user_key.as_str())
            .and_modify(|p| {
                p.message_count += 1;
                p.document.push('\n');
                p.document.push_str(&m.text);
            })
            .or_insert_with(|| ChatterProfile {
                user_key: m.user_key.clone(),
                user_display: m.user_display.clone(),
                message_count: 1,
                document: m.text.clone(),
            });
    }
    by_key.into_values().collect()
}

/// Keeps chatters with at least `min_messages` messages.
pub fn filter_by_activity(profiles: Vec<ChatterProfile>, min_messages: usize) -> Vec<ChatterProfile> {
    profiles
        .into_iter()
        .filter(|p| p.message_count >= min_messages)
        .collect()
}

/// Inspection record written by the `profiles` command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub user: String,
    pub count: usize,
    pub document: String,
}

impl From<&ChatterProfile> for ProfileRecord {
    fn from(p: &ChatterProfile) -> Self {
        ProfileRecord {
            user: p.user_display.clone(),
            count: p.message_count,
            document: p.document.clone(),
        }
    }
}

impl From<ProfileRecord> for ChatterProfile {
    fn from(r: ProfileRecord) -> Self {
        ChatterProfile {
            user_key: r.user.to_lowercase(),
            user_display: r.user,
            message_count: r.count,
            document: r.document,
        }
    }
}

pub fn write_profiles<W: Write>(profiles: &[ChatterProfile], mut out: W) -> std::io::Result<()> {
    for p in profiles {
        serde_json::to_writer(&mut out, &ProfileRecord::from(p))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_profiles<R: BufRead>(input: R) -> std::io::Result<Vec<ChatterProfile>> {
    let mut profiles = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ProfileRecord = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("profile record {}: {e}", i + 1),
            )
        })?;
        profiles.push(rec.into());
    }
    Ok(profiles)
}
