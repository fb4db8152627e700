mod common;

use nirrec::autodiff::{Adam, AdamConfig, ParamStore, Rng, Tape, Tensor};
use nirrec::zeroshot::{self, bc_coefficient, bhattacharyya, l_zero};
use proptest::prelude::{prop, ProptestConfig, Strategy};
use proptest::{prop_assert, proptest};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn coefficient_properties(
        (v, w) in (1usize..12).prop_flat_map(|d| (
            prop::collection::vec(-6.0f64..6.0, d),
            prop::collection::vec(-6.0f64..6.0, d),
        ))
    ) {
        let rho = bc_coefficient(&v, &w);
        prop_assert!(rho > 0.0 && rho <= 1.0);
        let vw = bhattacharyya(&v, &w).unwrap();
        let wv = bhattacharyya(&w, &v).unwrap();
        prop_assert!((vw - wv).abs() <= 1e-12);
        prop_assert!(vw >= 0.0);
        prop_assert!(bhattacharyya(&v, &v).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn hand_case() {
    // p = softmax([0,0]) = [0.5, 0.5]; q = [0.9, 0.1] from logits [ln 9, 0]
    let d = bhattacharyya(&[0.0, 0.0], &[9f64.ln(), 0.0]).unwrap();
    let want = -(0.45f64.sqrt() + 0.05f64.sqrt()).ln();
    assert!((d - want).abs() < 1e-12);
    assert!((d - 0.111_571_775_657_104_9).abs() < 1e-6);
}

#[test]
fn l_zero_is_the_termwise_sum() {
    let mut rng = Rng::new(6);
    let v = rng.uniform_tensor(&[3, 5], 2.0);
    let w = rng.uniform_tensor(&[3, 5], 2.0);
    let tape = Tape::new();
    let total = l_zero(tape.constant(v.clone()), tape.constant(w.clone())).unwrap().item();
    let want: f64 = (0..3).map(|i| bhattacharyya(v.row(i), w.row(i)).unwrap()).sum();
    assert!((total - want).abs() < 1e-12);
}

#[test]
fn alignment_training_shrinks_the_distance() {
    let (n, attr_dim, dim) = (6, 4, 5);
    let mut rng = Rng::new(10);
    let attrs = rng.uniform_tensor(&[n, attr_dim], 1.0);
    let targets = rng.uniform_tensor(&[n, dim], 2.0);
    let mut store = ParamStore::new();
    zeroshot::register(&mut store, attr_dim, 2 * dim, dim, &mut rng).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 1e-2,
        ..Default::default()
    });
    let loss_at = |store: &ParamStore| -> (f64, std::collections::BTreeMap<String, Tensor>) {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let inferred = zeroshot::theta(&p, tape.constant(attrs.clone())).unwrap();
        let loss = l_zero(tape.constant(targets.clone()), inferred).unwrap();
        let grads = tape.backward(loss).unwrap();
        (loss.item(), p.gradients(&grads))
    };
    let (start, _) = loss_at(&store);
    for _ in 0..100 {
        let (_, grads) = loss_at(&store);
        store.set_grads(grads);
        adam.step(&mut store).unwrap();
    }
    let (end, _) = loss_at(&store);
    assert!(end < 0.5 * start, "{start} -> {end}");
}
