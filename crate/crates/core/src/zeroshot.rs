//! Attribute-to-embedding map θ, the Bhattacharyya alignment loss between
//! graph embeddings and θ outputs, and embedding inference for items the
//! session has never touched.

use crate::autodiff::{Bound, ParamStore, Reduction, Rng, Var};
use crate::error::{Error, Result};
use crate::ingest::AttributeEncoder;

pub const HIDDEN_W: &str = "zeroshot.theta.h_w";
pub const HIDDEN_B: &str = "zeroshot.theta.h_b";
pub const OUT_W: &str = "zeroshot.theta.o_w";
pub const OUT_B: &str = "zeroshot.theta.o_b";

/// Coefficients at or below this count as no overlap (distance 0).
pub const OVERLAP_FLOOR: f64 = 1e-12;

pub fn register(store: &mut ParamStore, attr_dim: usize, hidden: usize, dim: usize, rng: &mut Rng) -> Result<()> {
    if attr_dim == 0 || hidden == 0 || dim == 0 {
        return Err(Error::Config("theta dimensions must be positive".into()));
    }
    let hb = 1.0 / (attr_dim as f64).sqrt();
    let ob = 1.0 / (hidden as f64).sqrt();
    store.insert(HIDDEN_W, rng.uniform_tensor(&[attr_dim, hidden], hb), true)?;
    store.insert(HIDDEN_B, rng.uniform_tensor(&[hidden], hb), true)?;
    store.insert(OUT_W, rng.uniform_tensor(&[hidden, dim], ob), true)?;
    store.insert(OUT_B, rng.uniform_tensor(&[dim], ob), true)?;
    Ok(())
}

/// θ applied row-wise: `tanh(atr·Wh + bh)·Wo + bo`.
pub fn theta<'t>(p: &Bound<'t>, atr: Var<'t>) -> Result<Var<'t>> {
    atr.matmul(p.get(HIDDEN_W)?)?
        .add(p.get(HIDDEN_B)?)?
        .tanh()?
        .matmul(p.get(OUT_W)?)?
        .add(p.get(OUT_B)?)
}

/// Embeddings for `items` inferred from their attributes alone; the item
/// table is never consulted.
pub fn infer_items<'t>(p: &Bound<'t>, attrs: &AttributeEncoder, table: Var<'t>, items: &[usize]) -> Result<Var<'t>> {
    for &i in items {
        if attrs.is_unknown(i) {
            log::warn!("item index {i} has no known attribute tokens; using the unknown vector");
        }
    }
    theta(p, attrs.embed(table, items)?)
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Bhattacharyya coefficient of softmax(v) and softmax(w), capped at 1.
pub fn bc_coefficient(v: &[f64], w: &[f64]) -> f64 {
    let (lp, lq) = (log_softmax(v), log_softmax(w));
    lp.iter().zip(&lq).map(|(a, b)| (0.5 * (a + b)).exp()).sum::<f64>().min(1.0)
}

/// `−ln ρ` of the softmax distributions, or 0 when they do not overlap.
pub fn bhattacharyya(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() || v.is_empty() {
        return Err(Error::dim("bhattacharyya", &[v.len()], &[w.len()]));
    }
    let rho = bc_coefficient(v, w);
    Ok(if rho > OVERLAP_FLOOR { -rho.ln() } else { 0.0 })
}

/// Sum of row-wise Bhattacharyya distances between two n × d matrices.
/// Gradients flow into both operands.
pub fn l_zero<'t>(v: Var<'t>, v_star: Var<'t>) -> Result<Var<'t>> {
    if v.shape() != v_star.shape() {
        return Err(Error::dim("l_zero", &v.shape(), &v_star.shape()));
    }
    let rho = v
        .log_softmax()?
        .add(v_star.log_softmax()?)?
        .scale(0.5)?
        .exp()?
        .reduce(Reduction::Sum, Some(1))?
        // min(ρ, 1)
        .neg()?
        .clamp_min(-1.0)?
        .neg()?;
    let kept: Vec<usize> = rho
        .value()
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > OVERLAP_FLOOR)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Ok(v.tape().scalar(0.0));
    }
    rho.rows(&kept)?.log()?.neg()?.sum()
}
