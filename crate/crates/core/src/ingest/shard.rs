//! Processed dataset on disk: `shard.bin` (named-tensor container) next to
//! `index.json` (vocabularies, session ids and ingestion report).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attributes::AttributeEncoder;
use super::catalog::{CatalogItem, ItemCatalog, Vocab};
use super::{Dataset, DatasetStats, IngestReport, ProcessedSession};
use crate::autodiff::{checkpoint, Tensor};
use crate::error::{Error, Result};

pub const SHARD_FILE: &str = "shard.bin";
pub const INDEX_FILE: &str = "index.json";
const SHARD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ShardIndex {
    version: u32,
    items: Vocab,
    taxonomy_vocab: [Vocab; 3],
    attribute_vocab: Vocab,
    attribute_mode: String,
    attribute_dim: usize,
    boundary: i64,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
    stats: DatasetStats,
    report: IngestReport,
}

fn ints(v: impl IntoIterator<Item = usize>) -> Vec<f64> {
    v.into_iter().map(|x| x as f64).collect()
}

fn vec_tensor(data: Vec<f64>) -> Result<Tensor> {
    Tensor::from_vec(data)
}

fn split_tensors(prefix: &str, sessions: &[ProcessedSession]) -> Result<Vec<(String, Tensor)>> {
    let mut offsets = vec![0usize];
    let mut items = Vec::new();
    for s in sessions {
        items.extend_from_slice(&s.history);
        offsets.push(items.len());
    }
    Ok(vec![
        (format!("{prefix}.offsets"), vec_tensor(ints(offsets))?),
        (format!("{prefix}.items"), vec_tensor(ints(items))?),
        (format!("{prefix}.gt"), vec_tensor(ints(sessions.iter().map(|s| s.ground_truth)))?),
        (format!("{prefix}.ts"), vec_tensor(sessions.iter().map(|s| s.ts as f64).collect())?),
        (format!("{prefix}.length"), vec_tensor(ints(sessions.iter().map(|s| s.length)))?),
    ])
}

pub fn write_shard(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cat = &ds.catalog;
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    let tax: Vec<f64> = cat.items.iter().flat_map(|it| it.taxonomy.map(|t| t as f64)).collect();
    tensors.push(("catalog.taxonomy".into(), Tensor::new(vec![cat.len(), 3], tax)?));
    let mut offsets = vec![0usize];
    let mut toks = Vec::new();
    for it in &cat.items {
        toks.extend_from_slice(&it.attributes);
        offsets.push(toks.len());
    }
    tensors.push(("catalog.attr_offsets".into(), vec_tensor(ints(offsets))?));
    tensors.push(("catalog.attr_tokens".into(), vec_tensor(ints(toks))?));
    tensors.extend(split_tensors("train", &ds.train)?);
    tensors.extend(split_tensors("test", &ds.test)?);
    if let Some(f) = &ds.attributes.frozen {
        tensors.push(("attr.pretrained".into(), f.clone()));
    }
    let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let path = dir.join(SHARD_FILE);
    std::fs::write(&path, checkpoint::encode(&refs)).map_err(|e| Error::io(&path, e))?;

    let index = ShardIndex {
        version: SHARD_VERSION,
        items: cat.item_vocab.clone(),
        taxonomy_vocab: cat.taxonomy_vocab.clone(),
        attribute_vocab: cat.attribute_vocab.clone(),
        attribute_mode: if ds.attributes.frozen.is_some() { "pretrained" } else { "trainable" }.into(),
        attribute_dim: ds.attributes.dim,
        boundary: ds.boundary,
        train_ids: ds.train.iter().map(|s| s.session_id.clone()).collect(),
        test_ids: ds.test.iter().map(|s| s.session_id.clone()).collect(),
        stats: ds.stats(),
        report: ds.report.clone(),
    };
    let path = dir.join(INDEX_FILE);
    let mut json = serde_json::to_string_pretty(&index)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

struct Entries(Vec<(String, Tensor)>);

impl Entries {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Ingest(format!("shard is missing tensor {name}")))
    }

    fn ints(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self.get(name)?.data().iter().map(|&v| v as usize).collect())
    }
}

fn read_split(e: &Entries, prefix: &str, ids: &[String]) -> Result<Vec<ProcessedSession>> {
    let offsets = e.ints(&format!("{prefix}.offsets"))?;
    let items = e.ints(&format!("{prefix}.items"))?;
    let gt = e.ints(&format!("{prefix}.gt"))?;
    let ts = e.get(&format!("{prefix}.ts"))?.data().to_vec();
    let length = e.ints(&format!("{prefix}.length"))?;
    if offsets.len() != ids.len() + 1 || gt.len() != ids.len() {
        return Err(Error::Ingest(format!("{prefix} split: index and shard disagree on session count")));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| ProcessedSession {
            session_id: id.clone(),
            history: items[offsets[i]..offsets[i + 1]].to_vec(),
            ground_truth: gt[i],
            ts: ts[i] as i64,
            length: length[i],
        })
        .collect())
}

pub fn read_shard(dir: &Path) -> Result<Dataset> {
    let index_path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: ShardIndex =
        serde_json::from_str(&text).map_err(|e| Error::Ingest(format!("{}: {e}", index_path.display())))?;
    if index.version != SHARD_VERSION {
        return Err(Error::Ingest(format!("unsupported shard version {}", index.version)));
    }
    let entries = Entries(checkpoint::read_file(&dir.join(SHARD_FILE))?);

    let tax = entries.get("catalog.taxonomy")?;
    let offsets = entries.ints("catalog.attr_offsets")?;
    let toks = entries.ints("catalog.attr_tokens")?;
    if tax.dims2().0 != index.items.len() || offsets.len() != index.items.len() + 1 {
        return Err(Error::Ingest("catalog tensors do not match the item vocabulary".into()));
    }
    let items: Vec<CatalogItem> = index
        .items
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let row = tax.row(i);
            CatalogItem {
                id: id.clone(),
                taxonomy: [row[0] as usize, row[1] as usize, row[2] as usize],
                attributes: toks[offsets[i]..offsets[i + 1]].to_vec(),
            }
        })
        .collect();
    let catalog = ItemCatalog {
        items,
        item_vocab: index.items,
        taxonomy_vocab: index.taxonomy_vocab,
        attribute_vocab: index.attribute_vocab,
    };
    let frozen = match index.attribute_mode.as_str() {
        "pretrained" => Some(entries.get("attr.pretrained")?.clone()),
        "trainable" => None,
        other => return Err(Error::Ingest(format!("unknown attribute mode {other:?}"))),
    };
    let attributes = AttributeEncoder {
        bags: catalog.items.iter().map(|it| it.attributes.clone()).collect(),
        dim: index.attribute_dim,
        vocab_size: catalog.attribute_vocab.len(),
        frozen,
        coverage: index.report.coverage.clone(),
    };
    Ok(Dataset {
        train: read_split(&entries, "train", &index.train_ids)?,
        test: read_split(&entries, "test", &index.test_ids)?,
        catalog,
        boundary: index.boundary,
        attributes,
        report: index.report,
    })
}
