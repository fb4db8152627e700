use std::collections::{BTreeMap, HashMap};

use nirrec::autodiff::Rng;
use nirrec::ingest::{build_taxonomy_tree, kmeanspp};

fn inertia(points: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = points.iter().zip(assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                return 0.0;
            }
            let centre: Vec<f64> = (0..dim).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
            members.iter().map(|p| p.iter().zip(&centre).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum()
        })
        .sum()
}

/// Smallest inertia over every split of the points into two non-empty
/// groups.
fn best_two_partition(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    (1..(1u32 << (n - 1)))
        .map(|mask| {
            let assign: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            inertia(points, &assign, 2)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn separated_pairs_reach_the_exhaustive_optimum() {
    let mut rng = Rng::new(12);
    for trial in 0..20 {
        let n = 4 + rng.below(9);
        let offset = 8.0 + 4.0 * rng.uniform();
        let points: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let shift = if i % 2 == 0 { 0.0 } else { offset };
                vec![shift + rng.uniform(), rng.uniform() - shift]
            })
            .collect();
        let km = kmeanspp(&points, 2, &mut Rng::new(trial), 100).unwrap();
        let best = best_two_partition(&points);
        assert!((km.inertia() - best).abs() < 1e-9 * best.max(1.0), "trial {trial}: {} vs {best}", km.inertia());
        assert!((inertia(&points, &km.assignments, 2) - km.inertia()).abs() < 1e-9);
    }
}

#[test]
fn planted_blobs_split_at_the_second_level() {
    let mut rng = Rng::new(99);
    let mut vectors = HashMap::new();
    let mut labels = BTreeMap::new();
    for i in 0..10 {
        let blob = i % 2;
        let centre = if blob == 0 { -20.0 } else { 20.0 };
        let label = format!("lab{i}");
        vectors.insert(label.clone(), vec![centre + rng.uniform(), centre + rng.uniform(), rng.uniform()]);
        labels.insert(format!("item{i}"), vec![label]);
    }
    let tree = build_taxonomy_tree(&labels, &vectors, [2, 2, 1], &mut Rng::new(5)).unwrap();
    assert_eq!(tree.paths.len(), 10);
    let root = &tree.paths["item0"][0];
    for i in 0..10 {
        let path = &tree.paths[&format!("item{i}")];
        assert_eq!(&path[0], root, "one root");
        let same_blob = &tree.paths[&format!("item{}", i % 2)];
        assert_eq!(path[1], same_blob[1], "blob members share a middle node");
        assert_eq!(path[2], same_blob[2]);
    }
    assert_ne!(tree.paths["item0"][1], tree.paths["item1"][1]);
}

#[test]
fn shared_fine_node_implies_shared_ancestors() {
    let mut rng = Rng::new(1);
    let mut vectors = HashMap::new();
    let mut labels = BTreeMap::new();
    for i in 0..40 {
        let label = format!("lab{}", i % 25);
        vectors.insert(label.clone(), vec![rng.normal() * 3.0, rng.normal() * 3.0]);
        labels.insert(format!("item{i:02}"), vec![label]);
    }
    let tree = build_taxonomy_tree(&labels, &vectors, [12, 5, 2], &mut Rng::new(3)).unwrap();
    let paths: Vec<&[String; 3]> = tree.paths.values().collect();
    for a in &paths {
        for b in &paths {
            if a[2] == b[2] {
                assert_eq!(a[1], b[1]);
            }
            if a[1] == b[1] {
                assert_eq!(a[0], b[0]);
            }
        }
    }
}
