//! User intent from the encoded session: a soft-attention head anchored on
//! the last item, a head weighted by Beta densities, and their convex
//! fusion.
//!
//! Node features are the rows of `X = [v | t]` (n × 2d). Attention weights
//! are scalars per node and every intent is a 1 × 2d row.

use crate::autodiff::{Bound, ParamStore, Rng, Tensor, Var};
use crate::error::{Error, Result};

pub const W1: &str = "intent.W1";
pub const W2: &str = "intent.W2";
pub const W3: &str = "intent.W3";

/// Guard added to the std of the Beta weights.
pub const STD_EPS: f64 = 1e-8;
/// Floor for Beta densities.
pub const PDF_FLOOR: f64 = 1e-300;

pub fn register(store: &mut ParamStore, dim: usize, rng: &mut Rng) -> Result<()> {
    let bound = 1.0 / (dim as f64).sqrt();
    for name in [W1, W2, W3] {
        store.insert(name, rng.uniform_tensor(&[2 * dim, 1], bound), true)?;
    }
    Ok(())
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// Where the Beta head evaluates its densities.
pub enum BetaMode<'r> {
    /// One draw per node from the given stream.
    Sample(&'r mut Rng),
    /// The distribution mean a/(a+c); deterministic.
    Mean,
    /// Caller-chosen points, one per node.
    At(&'r [f64]),
}

/// Soft attention: `g = σ(X·W1 + x_last·W2)`, `I_α = gᵀX`.
pub fn alpha_intent<'t>(x: Var<'t>, last: usize, w1: Var<'t>, w2: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let anchor = x.rows(&[last])?;
    let gates = x.matmul(w1)?.add(anchor.matmul(w2)?)?.sigmoid()?;
    Ok((gates.transpose()?.matmul(x)?, gates))
}

/// Beta shape parameters per node: softplus of the mean softplus
/// activation of `v` and of `t`.
pub fn beta_shapes<'t>(v: Var<'t>, t: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let shape = |e: Var<'t>| e.softplus()?.reduce(crate::autodiff::Reduction::Mean, Some(1))?.softplus();
    Ok((shape(v)?, shape(t)?))
}

/// Beta density of each node at one point per node, with gradients through
/// the shapes only. Returns the n × 1 weights and how many hit the floor.
pub fn beta_weights<'t>(v: Var<'t>, t: Var<'t>, mode: BetaMode<'_>) -> Result<(Var<'t>, usize)> {
    let (a, c) = beta_shapes(v, t)?;
    let (av, cv) = (a.value(), c.value());
    let points = match mode {
        BetaMode::Sample(rng) => av
            .data()
            .iter()
            .zip(cv.data())
            .map(|(&a, &c)| rng.sample_beta(a, c))
            .collect::<Result<Vec<_>>>()?,
        BetaMode::Mean => av.data().iter().zip(cv.data()).map(|(&a, &c)| a / (a + c)).collect(),
        BetaMode::At(points) => {
            if points.len() != av.numel() {
                return Err(Error::dim("beta_weights", &[points.len()], av.shape()));
            }
            if points.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return Err(Error::domain("beta_weights", "Beta points must lie in (0, 1)"));
            }
            points.to_vec()
        }
    };
    beta_density_at(a, c, &points)
}

/// `Γ(a+c)/(Γ(a)Γ(c)) · x^(a−1) · (1−x)^(c−1)` evaluated in log space.
pub fn beta_density_at<'t>(a: Var<'t>, c: Var<'t>, points: &[f64]) -> Result<(Var<'t>, usize)> {
    let tape = a.tape();
    let n = points.len();
    let ln_x = tape.constant(Tensor::new(vec![n, 1], points.iter().map(|x| x.ln()).collect())?);
    let ln_1mx = tape.constant(Tensor::new(vec![n, 1], points.iter().map(|x| (-x).ln_1p()).collect())?);
    let log_pdf = a
        .add(c)?
        .log_gamma()?
        .sub(a.log_gamma()?)?
        .sub(c.log_gamma()?)?
        .add(a.add_scalar(-1.0)?.mul(ln_x)?)?
        .add(c.add_scalar(-1.0)?.mul(ln_1mx)?)?;
    let pdf = log_pdf.exp()?;
    let clamped = pdf.value().data().iter().filter(|&&p| p < PDF_FLOOR).count();
    if clamped > 0 {
        log::debug!("{clamped} Beta densities clamped to {PDF_FLOOR}");
    }
    Ok((pdf.clamp_min(PDF_FLOOR)?, clamped))
}

/// Beta attention: recency-boosted weighted features standardized by the
/// spread of the weights, projected to one score per node.
pub fn beta_intent<'t>(x: Var<'t>, b: Var<'t>, last: usize, w3: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let weighted = b.mul(x)?;
    let boosted = weighted.add(b.rows(&[last])?.mul(x.rows(&[last])?)?)?;
    let centre = weighted.reduce(crate::autodiff::Reduction::Mean, Some(0))?;
    let spread = b.std_pop()?.add_scalar(STD_EPS)?;
    let scores = boosted.sub(centre)?.div(spread)?.matmul(w3)?;
    Ok((scores.transpose()?.matmul(x)?, scores))
}

pub fn fuse<'t>(alpha: Var<'t>, beta: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    check_lambda(lambda)?;
    alpha.scale(lambda)?.add(beta.scale(1.0 - lambda)?)
}

/// Intent vector plus per-node diagnostics.
pub struct IntentOutput<'t> {
    pub intent: Var<'t>,
    pub alpha: Option<Var<'t>>,
    pub beta: Option<Var<'t>>,
    pub gates: Option<Tensor>,
    pub beta_weights: Option<Tensor>,
    pub beta_scores: Option<Tensor>,
    pub clamped: usize,
}

/// Full intent for one session. `v` and `t` hold only real nodes. At λ = 1
/// the Beta head (and its sampler) is never touched; at λ = 0 the attention
/// head is skipped.
pub fn session_intent<'t>(
    p: &Bound<'t>,
    v: Var<'t>,
    t: Var<'t>,
    last: usize,
    lambda: f64,
    mode: BetaMode<'_>,
) -> Result<IntentOutput<'t>> {
    check_lambda(lambda)?;
    let x = v.tape().concat(&[v, t])?;
    let mut out = IntentOutput {
        intent: x,
        alpha: None,
        beta: None,
        gates: None,
        beta_weights: None,
        beta_scores: None,
        clamped: 0,
    };
    if lambda > 0.0 {
        let (ia, g) = alpha_intent(x, last, p.get(W1)?, p.get(W2)?)?;
        out.alpha = Some(ia);
        out.gates = Some((*g.value()).clone());
    }
    if lambda < 1.0 {
        let (b, clamped) = beta_weights(v, t, mode)?;
        let (ib, scores) = beta_intent(x, b, last, p.get(W3)?)?;
        out.beta = Some(ib);
        out.beta_weights = Some((*b.value()).clone());
        out.beta_scores = Some((*scores.value()).clone());
        out.clamped = clamped;
    }
    out.intent = match (out.alpha, out.beta) {
        (Some(a), Some(b)) => fuse(a, b, lambda)?,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("lambda lies in [0, 1]"),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_weights_give_half_gates() {
        let tape = Tape::new();
        let x = tape.constant(mat(&[vec![1.0, 2.0], vec![3.0, -1.0]]));
        let w = tape.constant(Tensor::zeros(&[2, 1]));
        let (ia, g) = alpha_intent(x, 1, w, w).unwrap();
        assert!(g.value().data().iter().all(|&v| v == 0.5));
        assert_eq!(ia.value().data(), &[2.0, 0.5]);
    }

    #[test]
    fn hand_value_density() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::full(&[1, 1], 2.0));
        let c = tape.constant(Tensor::full(&[1, 1], 3.0));
        let (b, clamped) = beta_density_at(a, c, &[0.5]).unwrap();
        assert!((b.item() - 1.5).abs() < 1e-10);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn uniform_beta_weight_is_one() {
        let tape = Tape::new();
        let one = tape.constant(Tensor::full(&[3, 1], 1.0));
        let (b, _) = beta_density_at(one, one, &[0.1, 0.5, 0.93]).unwrap();
        for &w in b.value().data() {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn density_floor() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::full(&[1, 1], 400.0));
        let c = tape.constant(Tensor::full(&[1, 1], 400.0));
        let (b, clamped) = beta_density_at(a, c, &[1e-6]).unwrap();
        assert_eq!(b.item(), PDF_FLOOR);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn equal_weights_and_zero_projection_vanish() {
        let tape = Tape::new();
        let x = tape.constant(mat(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]));
        let b = tape.constant(Tensor::full(&[3, 1], 0.7));
        let w3 = tape.constant(Tensor::zeros(&[2, 1]));
        let (ib, scores) = beta_intent(x, b, 2, w3).unwrap();
        assert!(scores.value().data().iter().all(|&v| v == 0.0));
        assert!(ib.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_stays_finite() {
        let tape = Tape::new();
        let x = tape.constant(mat(&[vec![0.3, -0.2]]));
        let b = tape.constant(Tensor::full(&[1, 1], 1.3));
        let w3 = tape.constant(Tensor::full(&[2, 1], 0.1));
        let (ib, _) = beta_intent(x, b, 0, w3).unwrap();
        assert!(ib.value().is_finite());
    }

    #[test]
    fn fuse_endpoints_and_midpoint() {
        let tape = Tape::new();
        let a = tape.constant(mat(&[vec![2.0, 0.0]]));
        let b = tape.constant(mat(&[vec![0.0, 2.0]]));
        assert_eq!(fuse(a, b, 1.0).unwrap().value().data(), a.value().data());
        assert_eq!(fuse(a, b, 0.0).unwrap().value().data(), b.value().data());
        assert_eq!(fuse(a, b, 0.5).unwrap().value().data(), &[1.0, 1.0]);
        assert!(fuse(a, b, 1.5).is_err());
        assert!(fuse(a, b, -0.1).is_err());
    }

    #[test]
    fn sampled_weights_are_reproducible() {
        let run = || {
            let tape = Tape::new();
            let v = tape.constant(mat(&[vec![0.1, 0.4], vec![-0.3, 0.2]]));
            let t = tape.constant(mat(&[vec![0.5, 0.0], vec![0.2, -0.1]]));
            let mut rng = Rng::new(11);
            let (b, _) = beta_weights(v, t, BetaMode::Sample(&mut rng)).unwrap();
            assert_eq!(rng.beta_draws(), 2);
            b.value().data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
