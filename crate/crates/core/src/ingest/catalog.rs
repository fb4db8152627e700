use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNKNOWN: &str = "<unk>";

/// Dense string table; index 0 is always [`UNKNOWN`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_sorted(std::iter::empty::<String>())
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// UNKNOWN followed by the given tokens, deduplicated and sorted.
    pub fn from_sorted<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).filter(|t| t != UNKNOWN).collect();
        let mut all = vec![UNKNOWN.to_string()];
        all.extend(set);
        Vocab::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or 0 when unknown.
    pub fn get_or_unknown(&self, token: &str) -> usize {
        self.get(token).unwrap_or(0)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One line of the catalog file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub item: String,
    #[serde(default)]
    pub taxonomy: Option<Vec<String>>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub attributes: Vec<String>,
}

pub fn load_catalog(path: &Path) -> Result<Vec<CatalogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog(&text).map_err(|e| match e {
        Error::Ingest(msg) => Error::Ingest(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_catalog(text: &str) -> Result<Vec<CatalogRecord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rec: CatalogRecord =
            serde_json::from_str(line).map_err(|e| Error::Ingest(format!("line {}: {e}", lineno + 1)))?;
        if let Some(t) = &rec.taxonomy {
            if t.len() > 3 {
                return Err(Error::Ingest(format!(
                    "line {}: taxonomy of item {} has {} levels, at most 3 allowed",
                    lineno + 1,
                    rec.item,
                    t.len()
                )));
            }
        }
        if !seen.insert(rec.item.clone()) {
            return Err(Error::Ingest(format!("line {}: duplicate item {}", lineno + 1, rec.item)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: String,
    /// Node index per level, coarse to fine; 0 is UNKNOWN.
    pub taxonomy: [usize; 3],
    /// Attribute token indices; `[0]` when the item has none.
    pub attributes: Vec<usize>,
}

/// Items, taxonomy nodes and attribute tokens as dense vocabularies.
///
/// Item index 0 is the UNKNOWN item; real items follow in ascending id
/// order, so index order and id order agree.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemCatalog {
    pub items: Vec<CatalogItem>,
    pub item_vocab: Vocab,
    pub taxonomy_vocab: [Vocab; 3],
    pub attribute_vocab: Vocab,
}

impl ItemCatalog {
    /// Builds the catalog. Paths in `synthesized` are used for items whose
    /// record has no taxonomy.
    pub fn build(records: &[CatalogRecord], synthesized: &BTreeMap<String, [String; 3]>) -> Result<Self> {
        let mut paths: BTreeMap<&str, [Option<String>; 3]> = BTreeMap::new();
        for r in records {
            let path = match (&r.taxonomy, synthesized.get(&r.item)) {
                (Some(t), _) => {
                    // qualify by ancestors so equal names under different parents stay distinct
                    let mut p: [Option<String>; 3] = Default::default();
                    let mut prefix = String::new();
                    for (lvl, name) in t.iter().enumerate() {
                        if !prefix.is_empty() {
                            prefix.push_str(" > ");
                        }
                        prefix.push_str(name);
                        p[lvl] = Some(prefix.clone());
                    }
                    p
                }
                (None, Some(s)) => [Some(s[0].clone()), Some(s[1].clone()), Some(s[2].clone())],
                (None, None) => Default::default(),
            };
            paths.insert(&r.item, path);
        }
        let taxonomy_vocab: [Vocab; 3] = std::array::from_fn(|lvl| {
            Vocab::from_sorted(paths.values().filter_map(|p| p[lvl].clone()))
        });
        let attribute_vocab = Vocab::from_sorted(records.iter().flat_map(|r| r.attributes.iter().cloned()));
        let item_vocab = Vocab::from_sorted(records.iter().map(|r| r.item.clone()));

        let by_id: HashMap<&str, &CatalogRecord> = records.iter().map(|r| (r.item.as_str(), r)).collect();
        let mut items = vec![CatalogItem {
            id: UNKNOWN.into(),
            taxonomy: [0; 3],
            attributes: vec![0],
        }];
        for id in &item_vocab.tokens()[1..] {
            let rec = by_id[id.as_str()];
            let p = &paths[id.as_str()];
            let taxonomy = std::array::from_fn(|lvl| {
                p[lvl].as_deref().map_or(0, |n| taxonomy_vocab[lvl].get_or_unknown(n))
            });
            let mut attributes: Vec<usize> = rec.attributes.iter().map(|a| attribute_vocab.get_or_unknown(a)).collect();
            if attributes.is_empty() {
                attributes.push(0);
            }
            items.push(CatalogItem {
                id: id.clone(),
                taxonomy,
                attributes,
            });
        }
        Ok(ItemCatalog {
            items,
            item_vocab,
            taxonomy_vocab,
            attribute_vocab,
        })
    }

    /// Number of entries including the UNKNOWN item.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.len() <= 1
    }

    /// Number of real items.
    pub fn item_count(&self) -> usize {
        self.items.len() - 1
    }

    pub fn index_of(&self, item: &str) -> Result<usize> {
        match self.item_vocab.get(item) {
            Some(i) if i > 0 => Ok(i),
            _ => Err(Error::Ingest(format!("unknown item id {item:?} (absent from catalog)"))),
        }
    }

    pub fn id_of(&self, idx: usize) -> &str {
        &self.items[idx].id
    }

    pub fn item(&self, idx: usize) -> Result<&CatalogItem> {
        self.items
            .get(idx)
            .ok_or_else(|| Error::Lookup(format!("item index {idx} out of range")))
    }

    /// All real item indices in id order.
    pub fn all_items(&self) -> std::ops::Range<usize> {
        1..self.items.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(item: &str, tax: Option<&[&str]>, attrs: &[&str]) -> CatalogRecord {
        CatalogRecord {
            item: item.into(),
            taxonomy: tax.map(|t| t.iter().map(|s| s.to_string()).collect()),
            labels: None,
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn vocab_reserves_unknown() {
        let v = Vocab::from_sorted(["b", "a", "b"]);
        assert_eq!(v.tokens(), &["<unk>", "a", "b"]);
        assert_eq!(v.get_or_unknown("zzz"), 0);
    }

    #[test]
    fn builds_dense_indices() {
        let recs = vec![
            rec("z", Some(&["Food", "Drinks", "Water"]), &["brandA"]),
            rec("a", Some(&["Food", "Drinks"]), &[]),
            rec("m", None, &["brandA", "cheap"]),
        ];
        let cat = ItemCatalog::build(&recs, &BTreeMap::new()).unwrap();
        assert_eq!(cat.item_count(), 3);
        assert_eq!(cat.index_of("a").unwrap(), 1);
        assert_eq!(cat.index_of("z").unwrap(), 3);
        assert!(cat.index_of("nope").is_err());
        let a = cat.item(1).unwrap();
        assert_ne!(a.taxonomy[0], 0);
        assert_eq!(a.taxonomy[2], 0, "missing level falls back to UNKNOWN");
        assert_eq!(a.attributes, vec![0]);
        assert_eq!(cat.item(2).unwrap().taxonomy, [0, 0, 0]);
        // same coarse and middle node for a and z
        assert_eq!(cat.item(1).unwrap().taxonomy[..2], cat.item(3).unwrap().taxonomy[..2]);
    }

    #[test]
    fn synthesized_paths_fill_gaps() {
        let recs = vec![rec("a", None, &["x"])];
        let synth = BTreeMap::from([("a".to_string(), ["L1-0".to_string(), "L2-1".to_string(), "L3-2".to_string()])]);
        let cat = ItemCatalog::build(&recs, &synth).unwrap();
        assert!(cat.item(1).unwrap().taxonomy.iter().all(|&t| t > 0));
    }

    #[test]
    fn parse_rejects_duplicates() {
        let text = "{\"item\":\"a\",\"attributes\":[]}\n{\"item\":\"a\",\"attributes\":[]}";
        assert!(parse_catalog(text).is_err());
    }
}
