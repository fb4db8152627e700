//! Catalog and session ingestion, taxonomy synthesis, attribute encoding,
//! the time-based split and processed dataset shards.

pub mod attributes;
pub mod catalog;
pub mod sessions;
pub mod shard;
pub mod taxonomy;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use attributes::{encode_attributes, AttributeEncoder, AttributeMode, CoverageReport, WordVectors};
pub use catalog::{CatalogItem, CatalogRecord, ItemCatalog, Vocab};
pub use sessions::{load_sessions, time_split, SessionLog, SplitTimestamp, TimeSplit};
pub use shard::{read_shard, write_shard};
pub use taxonomy::{build_taxonomy_tree, kmeanspp, KMeans, TaxonomyTree};

use crate::autodiff::Rng;
use crate::error::Result;
use crate::sessiongraph::{mask_ground_truth, Session};

/// A session after ground-truth masking, over catalog indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessedSession {
    pub session_id: String,
    pub history: Vec<usize>,
    pub ground_truth: usize,
    /// Timestamp of the ground-truth event.
    pub ts: i64,
    /// Event count before masking.
    pub length: usize,
}

impl SplitTimestamp for ProcessedSession {
    fn split_ts(&self) -> i64 {
        self.ts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub items: usize,
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub average_length: f64,
}

impl DatasetStats {
    pub fn to_csv(&self) -> String {
        format!(
            "Items,Train sessions,Test sessions,Average length\n{},{},{},{:.3}\n",
            self.items, self.train_sessions, self.test_sessions, self.average_length
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Sessions dropped because masking left no history.
    pub skipped: usize,
    /// Sessions whose events were re-sorted by timestamp.
    pub resorted: usize,
    pub taxonomy_warnings: Vec<String>,
    pub coverage: CoverageReport,
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    pub boundary_days: i64,
    pub level_sizes: [usize; 3],
    pub attribute_mode: AttributeMode,
    /// Explicit vectors for taxonomy labels.
    pub label_vectors: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            boundary_days: 7,
            level_sizes: [100, 50, 10],
            attribute_mode: AttributeMode::Trainable { dim: 32 },
            label_vectors: None,
            seed: 42,
        }
    }
}

/// A fully processed dataset, ready for training.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub catalog: ItemCatalog,
    pub train: Vec<ProcessedSession>,
    pub test: Vec<ProcessedSession>,
    pub boundary: i64,
    pub attributes: AttributeEncoder,
    pub report: IngestReport,
}

impl Dataset {
    /// Items eligible as candidates: every real catalog item.
    pub fn candidate_pool(&self) -> Vec<usize> {
        self.catalog.all_items().collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let all = self.train.iter().chain(&self.test);
        let n = self.train.len() + self.test.len();
        DatasetStats {
            items: self.catalog.item_count(),
            train_sessions: self.train.len(),
            test_sessions: self.test.len(),
            average_length: if n == 0 {
                0.0
            } else {
                all.map(|s| s.length as f64).sum::<f64>() / n as f64
            },
        }
    }
}

/// Runs the ingestion pipeline over parsed inputs.
pub fn prepare(log: SessionLog, records: &[CatalogRecord], opts: &PrepareOptions) -> Result<Dataset> {
    let mut report = IngestReport {
        resorted: log.resorted,
        ..Default::default()
    };

    let word_vectors = match (&opts.label_vectors, &opts.attribute_mode) {
        (Some(p), _) => Some(attributes::load_word_vectors(p)?),
        (None, AttributeMode::Pretrained { path }) => Some(attributes::load_word_vectors(path)?),
        _ => None,
    };

    // flat labels for items without a taxonomy
    let flat: BTreeMap<String, Vec<String>> = records
        .iter()
        .filter(|r| r.taxonomy.is_none())
        .filter_map(|r| r.labels.as_ref().map(|l| (r.item.clone(), l.clone())))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let synthesized = if flat.is_empty() {
        BTreeMap::new()
    } else {
        let dim = match &opts.attribute_mode {
            AttributeMode::Trainable { dim } => *dim,
            AttributeMode::Pretrained { .. } => 0,
        };
        let vectors = attributes::label_vectors(flat.values().flatten(), word_vectors.as_ref(), dim.max(1), opts.seed);
        let mut rng = Rng::derive(opts.seed, "taxonomy", "");
        let tree = build_taxonomy_tree(&flat, &vectors, opts.level_sizes, &mut rng)?;
        report.taxonomy_warnings = tree.warnings;
        tree.paths
    };

    let mut catalog = ItemCatalog::build(records, &synthesized)?;
    let encoder = match (&opts.attribute_mode, &word_vectors) {
        (AttributeMode::Pretrained { .. }, Some(wv)) => attributes::from_word_vectors(&catalog, wv)?,
        (mode, _) => encode_attributes(&catalog, mode)?,
    };
    for (item, bag) in catalog.items.iter_mut().zip(&encoder.bags) {
        item.attributes = bag.clone();
    }
    report.coverage = encoder.coverage.clone();

    let mut processed = Vec::with_capacity(log.sessions.len());
    for s in &log.sessions {
        let items = s
            .events
            .iter()
            .map(|e| catalog.index_of(&e.item))
            .collect::<Result<Vec<_>>>()?;
        match mask_ground_truth(&items) {
            Some((history, ground_truth)) => processed.push(ProcessedSession {
                session_id: s.session_id.clone(),
                history,
                ground_truth,
                ts: s.last_ts().unwrap_or_default(),
                length: s.events.len(),
            }),
            None => report.skipped += 1,
        }
    }
    if report.skipped > 0 {
        log::info!("{} sessions skipped: empty history after masking", report.skipped);
    }
    let split = time_split(processed, opts.boundary_days)?;

    Ok(Dataset {
        catalog,
        train: split.train,
        test: split.test,
        boundary: split.boundary,
        attributes: encoder,
        report,
    })
}

/// Convenience: parse raw sessions into a [`SessionLog`] without file IO.
pub fn session_log(sessions: Vec<Session>) -> SessionLog {
    SessionLog { sessions, resorted: 0 }
}
