#![allow(dead_code)]

use std::collections::BTreeMap;

use nirrec::autodiff::special::beta_pdf;
use nirrec::autodiff::{Reduction, Rng, Tape, Tensor, Var};
use nirrec::ingest::{prepare, session_log, CatalogRecord, Dataset, PrepareOptions};
use nirrec::sessiongraph::{Event, Session};
use nirrec::intent::BetaMode;
use nirrec::model::{CandidateMode, Model, TrainConfig};
use nirrec::toy;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so vanishing gradients do not
/// divide by zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Worst relative error between the tape gradient of `sum(f(x) ⊙ w)` and
/// central differences, over every entry of `x`. `w` is a fixed random
/// weighting so the check sees every output entry.
pub fn op_grad_error(x: &Tensor, seed: u64, f: impl Fn(Var<'_>) -> Var<'_>) -> f64 {
    let loss = |input: &Tensor| -> f64 {
        let tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = f(v);
        let w = weights(&out.shape(), seed);
        out.mul(tape.constant(w)).unwrap().sum().unwrap().item()
    };
    let tape = Tape::new();
    let v = tape.param(std::sync::Arc::new(x.clone()));
    let out = f(v);
    let w = weights(&out.shape(), seed);
    let l = out.mul(tape.constant(w)).unwrap().sum().unwrap();
    let grads = tape.backward(l).unwrap();
    let g = grads.get_or_zeros(v);
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let numeric = central_difference(
            |xi| {
                let mut y = x.clone();
                y.data_mut()[i] = xi;
                loss(&y)
            },
            x.data()[i],
        );
        worst = worst.max(rel_err(g.data()[i], numeric));
    }
    worst
}

fn weights(shape: &[usize], seed: u64) -> Tensor {
    Rng::new(seed ^ 0x5eed).uniform_tensor(shape, 1.0)
}

pub fn toy_dataset(seed: u64) -> Dataset {
    prepare(session_log(toy::sessions(seed)), &toy::catalog(), &PrepareOptions::default()).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng, bound: f64) -> Tensor {
    rng.uniform_tensor(&[rows, cols], bound)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// ∫₀¹ x^(a−1)(1−x)^(c−1) dx by tanh-sinh quadrature, which copes with the
/// endpoint singularities of small shapes.
pub fn beta_integral(a: f64, c: f64) -> f64 {
    let h: f64 = 1.0 / 256.0;
    let mut total = 0.0;
    let mut k: f64 = -6.0 / h;
    while k <= 6.0 / h {
        let t = k * h;
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let ln_x = -softplus(-2.0 * s);
        let ln_1mx = -softplus(2.0 * s);
        let ln_dx = (std::f64::consts::PI * t.cosh()).ln() + ln_x + ln_1mx;
        total += ((a - 1.0) * ln_x + (c - 1.0) * ln_1mx + ln_dx).exp();
        k += 1.0;
    }
    total * h
}

/// Trapezoid rule with 10⁴ points in u, where x = (1 − cos πu)/2 crowds
/// the nodes towards both ends; x is kept inside (ε, 1−ε).
pub fn trapezoid_mass(a: f64, c: f64) -> f64 {
    let n = 10_000;
    let eps = 1e-12;
    let h = 1.0 / (n - 1) as f64;
    let integrand = |u: f64| {
        let x = (0.5 * (1.0 - (std::f64::consts::PI * u).cos())).clamp(eps, 1.0 - eps);
        let dx = std::f64::consts::FRAC_PI_2 * (std::f64::consts::PI * u).sin();
        beta_pdf(a, c, x).unwrap() * dx
    };
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            w * integrand(i as f64 * h)
        })
        .sum::<f64>()
        * h
}

/// Counts transitions item-by-item with no index bookkeeping shared with the
/// library.
pub fn brute_force(history: &[usize]) -> (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut nodes: Vec<usize> = Vec::new();
    for &h in history {
        if !nodes.contains(&h) {
            nodes.push(h);
        }
    }
    let n = nodes.len();
    let mut out = vec![vec![0.0; n]; n];
    let mut inc = vec![vec![0.0; n]; n];
    for (i, &a) in nodes.iter().enumerate() {
        for (j, &b) in nodes.iter().enumerate() {
            let edges = history.windows(2).filter(|w| w[0] == a && w[1] == b).count() as f64;
            let from_a = history.windows(2).filter(|w| w[0] == a).count() as f64;
            let into_a = history.windows(2).filter(|w| w[1] == a).count() as f64;
            let edges_in = history.windows(2).filter(|w| w[0] == b && w[1] == a).count() as f64;
            if from_a > 0.0 {
                out[i][j] = edges / from_a;
            }
            if into_a > 0.0 {
                inc[i][j] = edges_in / into_a;
            }
        }
    }
    (nodes, out, inc)
}

/// One random configuration: per session, integer scores (so ties occur)
/// and a ground-truth position.
pub fn random_case(rng: &mut Rng) -> Vec<(Vec<(usize, f64)>, usize)> {
    let sessions = 1 + rng.below(12);
    (0..sessions)
        .map(|_| {
            let n = 1 + rng.below(30);
            let scores: Vec<(usize, f64)> = (0..n).map(|i| (i * 3 + 1, rng.below(6) as f64)).collect();
            let gt = scores[rng.below(n)].0;
            (scores, gt)
        })
        .collect()
}

/// Rank by definition: one plus the candidates that beat the ground truth,
/// where equal scores are won by the smaller item index.
pub fn oracle_rank(scores: &[(usize, f64)], gt: usize) -> usize {
    let s_gt = scores.iter().find(|(i, _)| *i == gt).unwrap().1;
    1 + scores.iter().filter(|&&(i, s)| s > s_gt || (s == s_gt && i < gt)).count()
}

/// Loss of one toy session with Beta points pinned, as a function of the
/// parameter store.
fn session_loss(model: &Model, ds: &Dataset, idx: usize, cands: &[usize], points: &[f64]) -> (f64, BTreeMap<String, Tensor>) {
    let s = &ds.train[idx];
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let fwd = model.forward(&p, ds, s, BetaMode::At(points)).unwrap();
    let logits = model.candidate_logits(&p, ds, fwd.intent, cands).unwrap();
    let gt = cands.binary_search(&s.ground_truth).unwrap();
    let (loss, _) = model.loss(logits, gt, fwd.l_zero).unwrap();
    let grads = tape.backward(loss).unwrap();
    (loss.item(), p.gradients(&grads))
}

/// Analytic and numeric derivatives for 20 random reachable parameters of a
/// d=4 model on a three-node toy session scored against four candidates.
pub fn end_to_end_gradient_check() -> Vec<(String, f64, f64)> {
    let ds = toy_dataset(3);
    let idx = ds
        .train
        .iter()
        .position(|s| nirrec::sessiongraph::build_graph(&s.history).unwrap().len() == 3)
        .expect("a three-node session");
    let s = &ds.train[idx];
    let mut cands: Vec<usize> = ds.catalog.all_items().filter(|i| !s.history.contains(i) && *i != s.ground_truth).take(3).collect();
    cands.push(s.ground_truth);
    cands.sort_unstable();
    assert_eq!(cands.len(), 4);

    let cfg = TrainConfig {
        dim: 4,
        attr_dim: 3,
        hidden: 5,
        candidate_mode: CandidateMode::FullVocab,
        ..TrainConfig::default()
    };
    let model = Model::init(&ds, &cfg).unwrap();
    let points = [0.31, 0.58, 0.77];
    let (_, grads) = session_loss(&model, &ds, idx, &cands, &points);

    let trainable: Vec<(String, usize)> = model
        .params
        .iter()
        .filter(|p| p.requires_grad)
        .flat_map(|p| (0..p.value.numel()).map(move |i| (p.name.clone(), i)))
        .collect();
    // only entries the session can reach carry signal; keep those with a
    // non-zero analytic gradient and draw 20 of them
    let mut reachable: Vec<(String, usize)> = trainable
        .into_iter()
        .filter(|(name, i)| grads.get(name).map_or(false, |g| g.data()[*i] != 0.0))
        .collect();
    let mut rng = Rng::new(2024);
    rng.shuffle(&mut reachable);
    reachable.truncate(20);
    let mut checked = Vec::new();
    for (name, i) in reachable {
        let analytic = grads[&name].data()[i];
        let numeric = central_difference(
            |x| {
                let mut m = model.clone();
                m.params.get_mut(&name).unwrap().data_mut()[i] = x;
                session_loss(&m, &ds, idx, &cands, &points).0
            },
            model.params.get(&name).unwrap().data()[i],
        );
        checked.push((format!("{name}[{i}]"), analytic, numeric));
    }
    checked
}

fn op_input(rows: usize, cols: usize, seed: u64) -> Tensor {
    Rng::new(seed).uniform_tensor(&[rows, cols], 1.0)
}

fn op_positive(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut t = op_input(rows, cols, seed);
    t.data_mut().iter_mut().for_each(|v| *v = 0.5 + v.abs() * 2.0);
    t
}

/// Worst finite-difference error of every differentiable op, including
/// broadcasting forms and one composite chain.
pub fn op_gradient_errors() -> Vec<(String, f64)> {
    let x = op_input(3, 4, 1);
    let pos = op_positive(3, 4, 2);
    let row = op_input(1, 4, 32);
    let col = op_positive(3, 1, 33);
    let b = op_input(4, 2, 42);
    let c = op_input(5, 4, 43);
    let mut out: Vec<(String, f64)> = vec![
        ("neg".into(), op_grad_error(&x, 1, |v| v.neg().unwrap())),
        ("sigmoid".into(), op_grad_error(&x, 2, |v| v.sigmoid().unwrap())),
        ("tanh".into(), op_grad_error(&x, 3, |v| v.tanh().unwrap())),
        ("softplus".into(), op_grad_error(&x, 4, |v| v.softplus().unwrap())),
        ("exp".into(), op_grad_error(&x, 5, |v| v.exp().unwrap())),
        ("log".into(), op_grad_error(&pos, 6, |v| v.log().unwrap())),
        ("sqrt".into(), op_grad_error(&pos, 7, |v| v.sqrt().unwrap())),
        ("log_gamma".into(), op_grad_error(&pos, 8, |v| v.log_gamma().unwrap())),
        ("scale".into(), op_grad_error(&x, 9, |v| v.scale(-2.5).unwrap())),
        ("add_scalar".into(), op_grad_error(&x, 10, |v| v.add_scalar(0.7).unwrap())),
        ("clamp_min".into(), op_grad_error(&pos, 11, |v| v.clamp_min(0.0).unwrap())),
        ("transpose".into(), op_grad_error(&x, 12, |v| v.transpose().unwrap())),
        ("softmax".into(), op_grad_error(&x, 13, |v| v.softmax().unwrap())),
        ("log_softmax".into(), op_grad_error(&x, 14, |v| v.log_softmax().unwrap())),
        ("rows".into(), op_grad_error(&x, 15, |v| v.rows(&[2, 0, 2]).unwrap())),
        ("cols".into(), op_grad_error(&x, 16, |v| v.cols(&[3, 1]).unwrap())),
        ("segment_mean".into(), op_grad_error(&x, 17, |v| v.segment_mean(&[vec![0, 2], vec![1], vec![2, 2, 1]]).unwrap())),
        ("add lhs".into(), op_grad_error(&x, 18, |v| v.add(v.tape().constant(row.clone())).unwrap())),
        ("add rhs".into(), op_grad_error(&row, 19, |v| v.tape().constant(x.clone()).add(v).unwrap())),
        ("sub rhs".into(), op_grad_error(&col, 20, |v| v.tape().constant(x.clone()).sub(v).unwrap())),
        ("mul lhs".into(), op_grad_error(&x, 21, |v| v.mul(v.tape().constant(col.clone())).unwrap())),
        ("mul rhs".into(), op_grad_error(&col, 22, |v| v.tape().constant(x.clone()).mul(v).unwrap())),
        ("mul self".into(), op_grad_error(&x, 23, |v| v.mul(v).unwrap())),
        ("div lhs".into(), op_grad_error(&x, 24, |v| v.div(v.tape().constant(pos.clone())).unwrap())),
        ("div rhs".into(), op_grad_error(&pos, 25, |v| v.tape().constant(x.clone()).div(v).unwrap())),
        ("div scalar rhs".into(), op_grad_error(&op_positive(1, 1, 8), 26, |v| v.tape().constant(x.clone()).div(v).unwrap())),
        ("matmul lhs".into(), op_grad_error(&x, 27, |v| v.matmul(v.tape().constant(b.clone())).unwrap())),
        ("matmul rhs".into(), op_grad_error(&b, 28, |v| v.tape().constant(x.clone()).matmul(v).unwrap())),
        ("matmul_t lhs".into(), op_grad_error(&x, 29, |v| v.matmul_t(v.tape().constant(c.clone())).unwrap())),
        ("matmul_t rhs".into(), op_grad_error(&c, 30, |v| v.tape().constant(x.clone()).matmul_t(v).unwrap())),
        ("gram".into(), op_grad_error(&x, 31, |v| v.matmul_t(v).unwrap())),
        (
            "concat".into(),
            op_grad_error(&x, 32, |v| {
                let other = v.tape().constant(op_input(3, 2, 7));
                v.tape().concat(&[other, v, v]).unwrap()
            }),
        ),
        (
            "composite".into(),
            op_grad_error(&op_positive(2, 3, 51), 33, |v| {
                let s = v.log_gamma().unwrap().sub(v.log().unwrap().scale(0.5).unwrap()).unwrap();
                let n = s.reduce(Reduction::StdPop, Some(0)).unwrap().add_scalar(1e-8).unwrap();
                s.div(n).unwrap().tanh().unwrap().log_softmax().unwrap()
            }),
        ),
    ];
    for kind in [Reduction::Sum, Reduction::Mean, Reduction::StdPop, Reduction::Max] {
        for axis in [None, Some(0), Some(1)] {
            out.push((format!("{kind:?} axis {axis:?}"), op_grad_error(&x, 40, |v| v.reduce(kind, axis).unwrap())));
        }
    }
    out
}

/// A catalog with flat labels only, so ingestion has to synthesize the
/// taxonomy.
pub fn labelled_dataset() -> Dataset {
    let mut rng = Rng::new(17);
    let records: Vec<CatalogRecord> = (0..30)
        .map(|i| CatalogRecord {
            item: format!("p{i}"),
            taxonomy: None,
            labels: Some(vec![format!("label{}", i % 7)]),
            attributes: vec![format!("a{}", i % 5), format!("b{}", i % 3)],
        })
        .collect();
    let sessions: Vec<Session> = (0..80)
        .map(|s| {
            let start = s as i64 * 3600 * 3;
            let len = 2 + rng.below(6);
            Session {
                session_id: format!("u{s:03}"),
                events: (0..len)
                    .map(|e| Event {
                        item: format!("p{}", rng.below(30)),
                        ts: start + e as i64 * 60,
                    })
                    .collect(),
            }
        })
        .collect();
    let opts = PrepareOptions {
        level_sizes: [6, 3, 2],
        boundary_days: 7,
        ..PrepareOptions::default()
    };
    prepare(session_log(sessions), &records, &opts).unwrap()
}
