//! Item and taxonomy embedding tables, taxonomy compression and the gated
//! graph network that propagates item embeddings over a session graph.
//!
//! GGNN weights are stored as `[out, in]` matrices and applied to row-major
//! node embeddings with `matmul_t`, so `H` has shape `d × 2d`.

use crate::autodiff::{Bound, ParamStore, Rng, Tensor, Var};
use crate::error::{Error, Result};
use crate::ingest::ItemCatalog;
use crate::sessiongraph::SessionGraph;

pub const ITEM_TABLE: &str = "enc.item_table";
pub const TAX_TABLES: [&str; 3] = ["enc.tax1", "enc.tax2", "enc.tax3"];
pub const W_TAX: &str = "enc.Wtax";
pub const W_TAX_BIAS: &str = "enc.Wtax_b";
pub const GGNN_NAMES: [&str; 8] = [
    "enc.ggnn.H",
    "enc.ggnn.b",
    "enc.ggnn.Wz",
    "enc.ggnn.Uz",
    "enc.ggnn.Wr",
    "enc.ggnn.Ur",
    "enc.ggnn.Wo",
    "enc.ggnn.Uo",
];

const TABLE_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    /// Propagation rounds per forward pass.
    pub steps: usize,
    /// Also run taxonomy embeddings through the session GGNN.
    pub tax_through_ggnn: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            steps: 1,
            tax_through_ggnn: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.steps == 0 {
            return Err(Error::Config(format!(
                "embedding dim and GGNN steps must be positive, got dim={} steps={}",
                self.dim, self.steps
            )));
        }
        Ok(())
    }
}

/// Registers encoder parameters. Weight matrices are uniform in
/// ±1/√d, embedding tables normal(0, 0.1).
pub fn register(store: &mut ParamStore, catalog: &ItemCatalog, cfg: &EncoderConfig, rng: &mut Rng) -> Result<()> {
    cfg.validate()?;
    let d = cfg.dim;
    let bound = 1.0 / (d as f64).sqrt();
    store.insert(ITEM_TABLE, rng.normal_tensor(&[catalog.len(), d], TABLE_STD), true)?;
    for (name, vocab) in TAX_TABLES.iter().zip(&catalog.taxonomy_vocab) {
        store.insert(name, rng.normal_tensor(&[vocab.len(), d], TABLE_STD), true)?;
    }
    store.insert(W_TAX, rng.uniform_tensor(&[3 * d, d], bound), true)?;
    store.insert(W_TAX_BIAS, rng.uniform_tensor(&[d], bound), true)?;
    let shapes: [&[usize]; 8] = [&[d, 2 * d], &[d], &[d, d], &[d, d], &[d, d], &[d, d], &[d, d], &[d, d]];
    for (name, shape) in GGNN_NAMES.iter().zip(shapes) {
        store.insert(name, rng.uniform_tensor(shape, bound), true)?;
    }
    Ok(())
}

/// GGNN parameters bound to one tape.
#[derive(Clone, Copy)]
pub struct GgnnWeights<'t> {
    pub h: Var<'t>,
    pub b: Var<'t>,
    pub w_z: Var<'t>,
    pub u_z: Var<'t>,
    pub w_r: Var<'t>,
    pub u_r: Var<'t>,
    pub w_o: Var<'t>,
    pub u_o: Var<'t>,
}

impl<'t> GgnnWeights<'t> {
    pub fn bind(p: &Bound<'t>) -> Result<Self> {
        let [h, b, w_z, u_z, w_r, u_r, w_o, u_o] = GGNN_NAMES;
        Ok(GgnnWeights {
            h: p.get(h)?,
            b: p.get(b)?,
            w_z: p.get(w_z)?,
            u_z: p.get(u_z)?,
            w_r: p.get(w_r)?,
            u_r: p.get(u_r)?,
            w_o: p.get(w_o)?,
            u_o: p.get(u_o)?,
        })
    }
}

/// Compressed taxonomy embedding `tanh([t1|t2|t3]·W + b)` for each item.
pub fn taxonomy_embed<'t>(p: &Bound<'t>, catalog: &ItemCatalog, items: &[usize]) -> Result<Var<'t>> {
    let mut parts = Vec::with_capacity(3);
    for (level, name) in TAX_TABLES.iter().enumerate() {
        let idx = items
            .iter()
            .map(|&i| catalog.item(i).map(|it| it.taxonomy[level]))
            .collect::<Result<Vec<_>>>()?;
        parts.push(p.get(name)?.rows(&idx)?);
    }
    let tape = parts[0].tape();
    tape.concat(&parts)?
        .matmul(p.get(W_TAX)?)?
        .add(p.get(W_TAX_BIAS)?)?
        .tanh()
}

/// `steps` rounds of gated propagation over the graph's normalized
/// adjacency, starting from `init` (one row per node).
pub fn ggnn_forward<'t>(
    adj_out: Var<'t>,
    adj_in: Var<'t>,
    init: Var<'t>,
    w: &GgnnWeights<'t>,
    steps: usize,
) -> Result<Var<'t>> {
    if steps == 0 {
        return Err(Error::Config("GGNN needs at least one step".into()));
    }
    let (n, _) = init.value().dims2();
    if adj_out.shape() != [n, n] || adj_in.shape() != [n, n] {
        return Err(Error::dim("ggnn_forward", &adj_out.shape(), &[n, n]));
    }
    let tape = init.tape();
    let mut v = init;
    for _ in 0..steps {
        let msg = tape.concat(&[adj_out.matmul(v)?, adj_in.matmul(v)?])?;
        let a = msg.matmul_t(w.h)?.add(w.b)?;
        let z = a.matmul_t(w.w_z)?.add(v.matmul_t(w.u_z)?)?.sigmoid()?;
        let r = a.matmul_t(w.w_r)?.add(v.matmul_t(w.u_r)?)?.sigmoid()?;
        let cand = a.matmul_t(w.w_o)?.add(r.mul(v)?.matmul_t(w.u_o)?)?.tanh()?;
        let keep = tape.scalar(1.0).sub(z)?;
        v = keep.mul(v)?.add(z.mul(cand)?)?;
    }
    Ok(v)
}

/// Per-node item embeddings (after propagation) and taxonomy embeddings.
/// Padded rows are zeroed.
pub fn embed_session<'t>(
    p: &Bound<'t>,
    catalog: &ItemCatalog,
    graph: &SessionGraph,
    cfg: &EncoderConfig,
) -> Result<(Var<'t>, Var<'t>)> {
    let table = p.get(ITEM_TABLE)?;
    let tape = table.tape();
    if let Some(&bad) = graph.nodes.iter().find(|&&i| i >= catalog.len()) {
        return Err(Error::Lookup(format!("item index {bad} is not in the catalog")));
    }
    let adj_out = tape.constant(graph.adj_out.clone());
    let adj_in = tape.constant(graph.adj_in.clone());
    let weights = GgnnWeights::bind(p)?;
    let v = ggnn_forward(adj_out, adj_in, table.rows(&graph.nodes)?, &weights, cfg.steps)?;
    let mut t = taxonomy_embed(p, catalog, &graph.nodes)?;
    if cfg.tax_through_ggnn {
        t = ggnn_forward(adj_out, adj_in, t, &weights, cfg.steps)?;
    }
    if graph.mask.iter().all(|&m| m) {
        return Ok((v, t));
    }
    let mask = Tensor::new(
        vec![graph.len(), 1],
        graph.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    let mask = tape.constant(mask);
    Ok((v.mul(mask)?, t.mul(mask)?))
}
