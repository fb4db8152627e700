use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::warn;

use super::catalog::ItemCatalog;
use crate::autodiff::{Rng, Tensor, Var};
use crate::error::{Error, Result};

/// Minimum share of catalog tokens a pretrained vector file must cover.
pub const MIN_COVERAGE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub enum AttributeMode {
    /// A token table of the given width learned with the model.
    Trainable { dim: usize },
    /// Frozen vectors read from a `token v1 … vd` text file.
    Pretrained { path: PathBuf },
}

#[derive(Clone, Debug, Default)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

pub fn load_word_vectors(path: &Path) -> Result<WordVectors> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text).map_err(|e| match e {
        Error::Ingest(msg) => Error::Ingest(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_word_vectors(text: &str) -> Result<WordVectors> {
    let mut out = WordVectors::default();
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Ingest(format!("line {}: bad value {f:?}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Ingest(format!("line {}: token {token:?} has no values", lineno + 1)));
        }
        if out.dim == 0 {
            out.dim = values.len();
        } else if values.len() != out.dim {
            return Err(Error::Ingest(format!(
                "line {}: dimension mismatch, expected {} values but found {}",
                lineno + 1,
                out.dim,
                values.len()
            )));
        }
        out.vectors.insert(token.to_string(), values);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoverageReport {
    pub tokens: usize,
    pub covered: usize,
    /// Items whose embedding falls back to the UNKNOWN vector.
    pub unknown_items: Vec<String>,
}

impl CoverageReport {
    pub fn ratio(&self) -> f64 {
        if self.tokens == 0 {
            1.0
        } else {
            self.covered as f64 / self.tokens as f64
        }
    }
}

/// Per-item token bags plus, in pretrained mode, the frozen token table.
#[derive(Clone, Debug)]
pub struct AttributeEncoder {
    /// Token indices per catalog item (index 0 is the UNKNOWN item).
    pub bags: Vec<Vec<usize>>,
    pub dim: usize,
    pub vocab_size: usize,
    pub frozen: Option<Tensor>,
    pub coverage: CoverageReport,
}

pub fn encode_attributes(catalog: &ItemCatalog, mode: &AttributeMode) -> Result<AttributeEncoder> {
    match mode {
        AttributeMode::Trainable { dim } => {
            if *dim == 0 {
                return Err(Error::Config("attribute dimension must be positive".into()));
            }
            let bags: Vec<Vec<usize>> = catalog.items.iter().map(|it| it.attributes.clone()).collect();
            let coverage = CoverageReport {
                tokens: catalog.attribute_vocab.len() - 1,
                covered: catalog.attribute_vocab.len() - 1,
                unknown_items: unknown_items(catalog, &bags),
            };
            Ok(AttributeEncoder {
                bags,
                dim: *dim,
                vocab_size: catalog.attribute_vocab.len(),
                frozen: None,
                coverage,
            })
        }
        AttributeMode::Pretrained { path } => {
            let wv = load_word_vectors(path)?;
            from_word_vectors(catalog, &wv)
        }
    }
}

/// Pretrained-mode encoder from already loaded vectors.
pub fn from_word_vectors(catalog: &ItemCatalog, wv: &WordVectors) -> Result<AttributeEncoder> {
    if wv.dim == 0 {
        return Err(Error::Ingest("pretrained vector file is empty".into()));
    }
    let vocab = &catalog.attribute_vocab;
    let mut table = vec![0.0; vocab.len() * wv.dim];
    let mut known = vec![false; vocab.len()];
    for (i, tok) in vocab.tokens().iter().enumerate().skip(1) {
        if let Some(v) = wv.vectors.get(tok) {
            table[i * wv.dim..(i + 1) * wv.dim].copy_from_slice(v);
            known[i] = true;
        }
    }
    let covered = known.iter().filter(|&&k| k).count();
    let bags: Vec<Vec<usize>> = catalog
        .items
        .iter()
        .map(|it| it.attributes.iter().map(|&t| if known[t] { t } else { 0 }).collect())
        .collect();
    let coverage = CoverageReport {
        tokens: vocab.len() - 1,
        covered,
        unknown_items: unknown_items(catalog, &bags),
    };
    if coverage.ratio() < MIN_COVERAGE {
        return Err(Error::Ingest(format!(
            "pretrained vectors cover {covered} of {} attribute tokens ({:.1}%), need at least {:.0}%",
            coverage.tokens,
            100.0 * coverage.ratio(),
            100.0 * MIN_COVERAGE
        )));
    }
    if !coverage.unknown_items.is_empty() {
        warn!("{} items have no known attribute tokens", coverage.unknown_items.len());
    }
    Ok(AttributeEncoder {
        bags,
        dim: wv.dim,
        vocab_size: vocab.len(),
        frozen: Some(Tensor::new(vec![vocab.len(), wv.dim], table)?),
        coverage,
    })
}

fn unknown_items(catalog: &ItemCatalog, bags: &[Vec<usize>]) -> Vec<String> {
    bags.iter()
        .enumerate()
        .skip(1)
        .filter(|(_, b)| b.iter().all(|&t| t == 0))
        .map(|(i, _)| catalog.items[i].id.clone())
        .collect()
}

impl AttributeEncoder {
    /// Mean token vector for every catalog item, one row each.
    pub fn embed_all<'t>(&self, table: Var<'t>) -> Result<Var<'t>> {
        table.segment_mean(&self.bags)
    }

    /// Mean token vector for the listed items.
    pub fn embed<'t>(&self, table: Var<'t>, items: &[usize]) -> Result<Var<'t>> {
        let bags = items
            .iter()
            .map(|&i| {
                self.bags
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Lookup(format!("item index {i} has no attribute bag")))
            })
            .collect::<Result<Vec<_>>>()?;
        table.segment_mean(&bags)
    }

    pub fn is_unknown(&self, item: usize) -> bool {
        self.bags.get(item).is_none_or(|b| b.iter().all(|&t| t == 0))
    }
}

/// Vectors for taxonomy labels: the mean of the label's word vectors when a
/// vector source covers any of its words, otherwise a seeded random vector
/// derived from the label text.
pub fn label_vectors<'a>(
    labels: impl IntoIterator<Item = &'a String>,
    source: Option<&WordVectors>,
    dim: usize,
    seed: u64,
) -> HashMap<String, Vec<f64>> {
    let mut out = HashMap::new();
    for label in labels {
        if out.contains_key(label) {
            continue;
        }
        let mut v = source.and_then(|wv| {
            let found: Vec<&Vec<f64>> = std::iter::once(label.as_str())
                .chain(label.split(|c: char| !c.is_alphanumeric()))
                .filter(|w| !w.is_empty())
                .filter_map(|w| wv.vectors.get(w).or_else(|| wv.vectors.get(&w.to_lowercase())))
                .collect();
            (!found.is_empty()).then(|| {
                let mut m = vec![0.0; wv.dim];
                for f in &found {
                    m.iter_mut().zip(f.iter()).for_each(|(a, b)| *a += b / found.len() as f64);
                }
                m
            })
        });
        if v.is_none() {
            let width = source.map_or(dim, |wv| wv.dim);
            let mut rng = Rng::derive(seed, "label-vector", label);
            v = Some((0..width).map(|_| rng.normal()).collect());
        }
        out.insert(label.clone(), v.unwrap());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::ingest::catalog::CatalogRecord;
    use std::collections::BTreeMap;

    fn catalog() -> ItemCatalog {
        let recs = vec![
            CatalogRecord {
                item: "a".into(),
                taxonomy: None,
                labels: None,
                attributes: vec!["u".into()],
            },
            CatalogRecord {
                item: "b".into(),
                taxonomy: None,
                labels: None,
                attributes: vec!["u".into(), "v".into()],
            },
            CatalogRecord {
                item: "c".into(),
                taxonomy: None,
                labels: None,
                attributes: vec![],
            },
        ];
        ItemCatalog::build(&recs, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn mean_of_token_vectors() {
        let cat = catalog();
        let wv = parse_word_vectors("u 1 2\nv 3 6\n").unwrap();
        let enc = from_word_vectors(&cat, &wv).unwrap();
        let tape = Tape::new();
        let table = tape.constant(enc.frozen.clone().unwrap());
        let out = enc.embed(table, &[1, 2, 3]).unwrap();
        let v = out.value();
        assert_eq!(v.row(0), &[1.0, 2.0]);
        assert_eq!(v.row(1), &[2.0, 4.0]);
        assert_eq!(v.row(2), &[0.0, 0.0]);
        assert_eq!(enc.coverage.unknown_items, vec!["c".to_string()]);
        assert!(enc.is_unknown(3));
    }

    #[test]
    fn dimension_mismatch_is_ingest_error() {
        assert!(matches!(parse_word_vectors("u 1 2\nv 3\n"), Err(Error::Ingest(_))));
    }

    #[test]
    fn low_coverage_rejected() {
        let cat = catalog();
        let wv = parse_word_vectors("u 1 2\n").unwrap();
        assert!(from_word_vectors(&cat, &wv).is_err());
    }

    #[test]
    fn trainable_bags() {
        let cat = catalog();
        let enc = encode_attributes(&cat, &AttributeMode::Trainable { dim: 4 }).unwrap();
        assert_eq!(enc.bags.len(), 4);
        assert_eq!(enc.vocab_size, 3);
        assert_eq!(enc.coverage.unknown_items, vec!["c".to_string()]);
    }

    #[test]
    fn label_vectors_are_deterministic() {
        let labels = vec!["Pizza".to_string(), "Coffee & Tea".to_string()];
        let a = label_vectors(&labels, None, 5, 9);
        let b = label_vectors(&labels, None, 5, 9);
        assert_eq!(a, b);
        let wv = parse_word_vectors("coffee 1 0\ntea 0 1\n").unwrap();
        let c = label_vectors(&labels, Some(&wv), 5, 9);
        assert_eq!(c["Coffee & Tea"], vec![0.5, 0.5]);
        assert_eq!(c["Pizza"].len(), 2);
    }
}
