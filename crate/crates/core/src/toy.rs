//! A small synthetic dataset whose ground truths are fixed by attributes.
//!
//! Twenty items form five groups of four. A session of group `g` browses
//! some of the group's first three items and ends on the group's target
//! item `4g + 3`; every item of group `g` carries the token `brand{g}`, so
//! the only unseen candidate sharing the history's brand is the target.
//! Fifty sessions fall in the first 22 days and ten in the last week, so a
//! 7-day split yields 50 train and 10 test sessions.

use std::path::Path;

use crate::autodiff::Rng;
use crate::error::{Error, Result};
use crate::ingest::CatalogRecord;
use crate::sessiongraph::{Event, Session};

pub const GROUPS: usize = 5;
pub const GROUP_SIZE: usize = 4;
pub const TRAIN_SESSIONS: usize = 50;
pub const TEST_SESSIONS: usize = 10;
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const CATALOG_FILE: &str = "catalog.jsonl";

const DAY: i64 = 86_400;

pub fn item_id(i: usize) -> String {
    format!("item{i:02}")
}

pub fn catalog() -> Vec<CatalogRecord> {
    (0..GROUPS * GROUP_SIZE)
        .map(|i| {
            let g = i / GROUP_SIZE;
            CatalogRecord {
                item: item_id(i),
                taxonomy: Some(vec![format!("root{}", g % 2), format!("group{g}"), format!("leaf{i:02}")]),
                labels: None,
                attributes: vec![format!("brand{g}"), format!("tok{i:02}")],
            }
        })
        .collect()
}

fn session(id: String, group: usize, start: i64, rng: &mut Rng) -> Session {
    let base = group * GROUP_SIZE;
    // at least two distinct browsed items
    let mut browsed: Vec<usize> = (base..base + GROUP_SIZE - 1).collect();
    rng.shuffle(&mut browsed);
    let mut items: Vec<usize> = browsed[..2].to_vec();
    for _ in 0..rng.below(3) {
        items.push(base + rng.below(GROUP_SIZE - 1));
    }
    items.push(base + GROUP_SIZE - 1);
    let events = items
        .iter()
        .enumerate()
        .map(|(k, &i)| Event {
            item: item_id(i),
            ts: start + 60 * k as i64,
        })
        .collect();
    Session {
        session_id: id,
        events,
    }
}

/// Sessions in ascending time order, train period first.
pub fn sessions(seed: u64) -> Vec<Session> {
    let mut rng = Rng::derive(seed, "toy", "");
    let mut out = Vec::with_capacity(TRAIN_SESSIONS + TEST_SESSIONS);
    for s in 0..TRAIN_SESSIONS {
        let start = (s as i64 * 22 * DAY) / TRAIN_SESSIONS as i64;
        out.push(session(format!("train{s:03}"), s % GROUPS, start, &mut rng));
    }
    for s in 0..TEST_SESSIONS {
        let start = 24 * DAY + (s as i64 * 6 * DAY) / (TEST_SESSIONS as i64 - 1) - 600;
        out.push(session(format!("test{s:03}"), s % GROUPS, start, &mut rng));
    }
    out
}

fn to_jsonl<T: serde::Serialize>(rows: &[T]) -> Result<String> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    Ok(text)
}

/// Writes `sessions.jsonl` and `catalog.jsonl` into `dir`.
pub fn write(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (SESSIONS_FILE, to_jsonl(&sessions(seed))?),
        (CATALOG_FILE, to_jsonl(&catalog())?),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
