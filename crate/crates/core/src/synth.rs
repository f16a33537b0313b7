//! Seeded planted-partition chat corpora for tests and demos.
//!
//! Each archetype talks with its own vocabulary, built from a disjoint slice
//! of the alphabet, so its members share character n-grams with each other
//! and almost none with other archetypes.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::ChatMessage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtraUser {
    pub name: String,
    pub archetype: usize,
    pub messages: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedCorpusSpec {
    pub seed: u64,
    pub archetypes: usize,
    pub users_per_archetype: usize,
    pub messages_per_user: usize,
    /// Users with fewer messages than the activity threshold.
    pub low_activity_users: usize,
    pub low_activity_max: usize,
    pub extra_users: Vec<ExtraUser>,
}

impl Default for PlantedCorpusSpec {
    fn default() -> Self {
        PlantedCorpusSpec {
            seed: 7,
            archetypes: 3,
            users_per_archetype: 15,
            messages_per_user: 25,
            low_activity_users: 5,
            low_activity_max: 19,
            extra_users: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    /// Interleaved stream, timestamps ascending.
    pub messages: Vec<ChatMessage>,
    /// Archetype of every user, keyed by `user_key`.
    pub labels: BTreeMap<String, usize>,
    /// Keys of the users generated below the activity threshold.
    pub low_activity: Vec<String>,
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwx";

fn vocabulary(rng: &mut ChaCha8Rng, letters: &[u8], size: usize) -> Vec<String> {
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let len = rng.gen_range(3..=7);
        let w: String = (0..len)
            .map(|_| letters[rng.gen_range(0..letters.len())] as char)
            .collect();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

fn message(rng: &mut ChaCha8Rng, vocab: &[String]) -> String {
    let n = rng.gen_range(2..=6);
    (0..n)
        .map(|_| vocab[rng.gen_range(0..vocab.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generates a corpus. Panics if `archetypes` is 0 or exceeds 8 (the
/// alphabet is split into equal disjoint slices of at least three letters).
pub fn planted_corpus(spec: &PlantedCorpusSpec) -> PlantedCorpus {
    assert!(
        (1..=8).contains(&spec.archetypes),
        "between 1 and 8 archetypes supported"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per = ALPHABET.len() / spec.archetypes;
    let vocabularies: Vec<Vec<String>> = (0..spec.archetypes)
        .map(|a| vocabulary(&mut rng, &ALPHABET[a * per..(a + 1) * per], 30))
        .collect();

    let mut labels = BTreeMap::new();
    let mut lines: Vec<(String, String)> = Vec::new();
    let mut add_user = |rng: &mut ChaCha8Rng, name: String, archetype: usize, count: usize| {
        labels.insert(name.to_lowercase(), archetype);
        for _ in 0..count {
            lines.push((name.clone(), message(rng, &vocabularies[archetype])));
        }
    };

    for a in 0..spec.archetypes {
        for u in 0..spec.users_per_archetype {
            add_user(&mut rng, format!("Viewer{a}x{u:02}"), a, spec.messages_per_user);
        }
    }
    let mut low_activity = Vec::new();
    for u in 0..spec.low_activity_users {
        let a = rng.gen_range(0..spec.archetypes);
        let count = rng.gen_range(1..=spec.low_activity_max.max(1));
        let name = format!("Lurker{u:02}");
        low_activity.push(name.to_lowercase());
        add_user(&mut rng, name, a, count);
    }
    for extra in &spec.extra_users {
        add_user(&mut rng, extra.name.clone(), extra.archetype % spec.archetypes, extra.messages);
    }

    // interleave while keeping each user's messages in generation order
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut rng);
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (u, _)) in lines.iter().enumerate() {
        by_user.entry(u.as_str()).or_default().push(i);
    }
    let slots_user: Vec<&str> = order.iter().map(|&i| lines[i].0.as_str()).collect();
    let mut cursor: BTreeMap<&str, usize> = BTreeMap::new();
    let start = DateTime::parse_from_rfc3339("2024-08-01T12:00:00Z")
        .expect("valid literal")
        .with_timezone(&Utc);
    let messages = slots_user
        .iter()
        .enumerate()
        .map(|(slot, user)| {
            let c = cursor.entry(user).or_insert(0);
            let (name, text) = &lines[by_user[user][*c]];
            *c += 1;
            ChatMessage::new(start + Duration::seconds(3 * slot as i64), name, text)
                .expect("generated names are non-empty")
        })
        .collect();

    PlantedCorpus {
        messages,
        labels,
        low_activity,
    }
}
