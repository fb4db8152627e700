//! The assembled recommender: parameters, forward pass, candidate scoring,
//! the joint loss and the training loop.

mod config;
mod train;

use std::collections::BTreeSet;
use std::path::Path;

pub use config::{parse_ks, Ablation, CandidateMode, TrainConfig};
pub use train::{train, train_model, EpochLog, StepLog, TrainOutcome};

use crate::autodiff::{checkpoint, Bound, ParamStore, Rng, Var};
use crate::encoder::{self, ITEM_TABLE};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ProcessedSession};
use crate::intent::{self, BetaMode};
use crate::sessiongraph::{build_graph, SessionGraph};
use crate::zeroshot;

pub const INTENT_PROJECTION: &str = "model.W_I";
pub const ATTR_TABLE: &str = "attr.tokens";

/// Cross-entropy probabilities are floored here before the log.
pub const PROB_FLOOR: f64 = 1e-300;

/// Everything one session contributes to the loss.
pub struct Forward<'t> {
    pub graph: SessionGraph,
    /// 1 × 2d intent row.
    pub intent: Var<'t>,
    /// Propagated item embeddings, one row per node.
    pub nodes: Var<'t>,
    pub taxonomy: Var<'t>,
    /// Summed Bhattacharyya distance between node embeddings and θ of
    /// their attributes.
    pub l_zero: Var<'t>,
    pub clamped: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters for a dataset, drawn from the config seed.
    pub fn init(ds: &Dataset, config: &TrainConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = Rng::derive(config.seed, "init", "");
        let mut params = ParamStore::new();
        encoder::register(&mut params, &ds.catalog, &config.encoder(), &mut rng)?;
        intent::register(&mut params, config.dim, &mut rng)?;
        let attr_dim = match &ds.attributes.frozen {
            Some(table) => {
                let d = table.dims2().1;
                params.insert(ATTR_TABLE, table.clone(), false)?;
                d
            }
            None => {
                let table = rng.normal_tensor(&[ds.attributes.vocab_size, config.attr_dim], 0.1);
                params.insert(ATTR_TABLE, table, true)?;
                config.attr_dim
            }
        };
        zeroshot::register(&mut params, attr_dim, config.hidden_width(), config.dim, &mut rng)?;
        let bound = 1.0 / (config.dim as f64).sqrt();
        params.insert(
            INTENT_PROJECTION,
            rng.uniform_tensor(&[2 * config.dim, config.dim], bound),
            true,
        )?;
        Ok(Model {
            config: config.clone(),
            params,
        })
    }

    /// Rebuilds a model from checkpoint entries. Every expected tensor must
    /// be present with the shape the dataset implies.
    pub fn from_entries(ds: &Dataset, config: &TrainConfig, entries: Vec<(String, crate::autodiff::Tensor)>) -> Result<Model> {
        let mut model = Model::init(ds, config)?;
        let expected: BTreeSet<String> = model.params.names().map(str::to_string).collect();
        let found: BTreeSet<String> = entries.iter().map(|(n, _)| n.clone()).collect();
        if expected != found {
            let missing: Vec<_> = expected.difference(&found).collect();
            let extra: Vec<_> = found.difference(&expected).collect();
            return Err(Error::Eval(format!(
                "checkpoint does not match the model: missing {missing:?}, unexpected {extra:?}"
            )));
        }
        for (name, tensor) in entries {
            let slot = model.params.get_mut(&name)?;
            if slot.shape() != tensor.shape() {
                return Err(Error::Eval(format!(
                    "checkpoint tensor {name} has shape {:?} but the dataset needs {:?} (vocabulary mismatch?)",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(model)
    }

    pub fn load(ds: &Dataset, config: &TrainConfig, path: &Path) -> Result<Model> {
        let entries = checkpoint::read_file(path).map_err(|e| match e {
            Error::Io { .. } => e,
            other => Error::Eval(other.to_string()),
        })?;
        Model::from_entries(ds, config, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_store(&self.params, path)
    }

    /// Encodes a session and computes its intent and alignment loss.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        ds: &Dataset,
        session: &ProcessedSession,
        mode: BetaMode<'_>,
    ) -> Result<Forward<'t>> {
        let graph = build_graph(&session.history)?;
        let (nodes, taxonomy) = encoder::embed_session(p, &ds.catalog, &graph, &self.config.encoder())?;
        let out = intent::session_intent(p, nodes, taxonomy, graph.last_index(), self.config.lambda, mode)?;
        let attrs = ds.attributes.embed(p.get(ATTR_TABLE)?, &graph.nodes)?;
        let l_zero = zeroshot::l_zero(nodes, zeroshot::theta(p, attrs)?)?;
        Ok(Forward {
            graph,
            intent: out.intent,
            nodes,
            taxonomy,
            l_zero,
            clamped: out.clamped,
        })
    }

    /// Logits `(I·W_I)·c` for each candidate, where `c` is inferred from
    /// the candidate's attributes. Returns a 1 × k row.
    pub fn candidate_logits<'t>(
        &self,
        p: &Bound<'t>,
        ds: &Dataset,
        intent: Var<'t>,
        candidates: &[usize],
    ) -> Result<Var<'t>> {
        if candidates.is_empty() {
            return Err(Error::domain("score_candidates", "empty candidate set"));
        }
        let inferred = zeroshot::infer_items(p, &ds.attributes, p.get(ATTR_TABLE)?, candidates)?;
        intent.matmul(p.get(INTENT_PROJECTION)?)?.matmul_t(inferred)
    }

    /// Weighted loss for one session given its candidate logits.
    /// Returns (loss, cross-entropy).
    pub fn loss<'t>(&self, logits: Var<'t>, gt_pos: usize, l_zero: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let ce = cross_entropy(logits, gt_pos)?;
        let gamma = self.config.gamma;
        let loss = if gamma >= 1.0 {
            ce
        } else {
            ce.scale(gamma)?.add(l_zero.scale(1.0 - gamma)?)?
        };
        Ok((loss, ce))
    }

    pub fn item_table_rows(&self) -> Result<usize> {
        Ok(self.params.get(ITEM_TABLE)?.dims2().0)
    }
}

/// `−ln max(softmax(logits)[gt], 1e-300)` as a scalar.
pub fn cross_entropy<'t>(logits: Var<'t>, gt_pos: usize) -> Result<Var<'t>> {
    logits
        .log_softmax()?
        .cols(&[gt_pos])?
        .clamp_min(PROB_FLOOR.ln())?
        .sum()?
        .neg()
}

/// Candidate items for a session, in ascending index order.
pub fn candidates(
    ds: &Dataset,
    session: &ProcessedSession,
    mode: CandidateMode,
    rng: &mut Rng,
) -> Vec<usize> {
    let history: BTreeSet<usize> = session.history.iter().copied().collect();
    let pool = ds.catalog.all_items().filter(|i| !history.contains(i));
    match mode {
        CandidateMode::FullVocab => pool.collect(),
        CandidateMode::Sampled(n) => {
            let mut negatives: Vec<usize> = pool.filter(|&i| i != session.ground_truth).collect();
            rng.shuffle(&mut negatives);
            negatives.truncate(n);
            negatives.push(session.ground_truth);
            negatives.sort_unstable();
            negatives
        }
    }
}
