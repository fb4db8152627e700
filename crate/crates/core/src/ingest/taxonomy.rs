//! Three-level taxonomy synthesis for catalogs that only carry flat labels.
//!
//! Labels are clustered into `k1` groups, those group centroids into `k2`,
//! and those into `k3`. An item's path is the chain of clusters reached from
//! its primary label, coarse to fine, so the result is a tree by
//! construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;

use crate::autodiff::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment pass.
    pub inertia_trace: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or `max_iters` passes have run.
pub fn kmeanspp(points: &[Vec<f64>], k: usize, rng: &mut Rng, max_iters: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::domain("kmeanspp", "k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::domain(
            "kmeanspp",
            format!("{} points cannot form {k} clusters", points.len()),
        ));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::domain("kmeanspp", "points have unequal dimensions"));
    }

    // D² seeding
    let mut chosen = vec![rng.below(points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // every remaining point coincides with a center
            let free: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.below(free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();

    let mut assignments = vec![usize::MAX; points.len()];
    let mut inertia_trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        inertia_trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        inertia_trace,
    })
}

/// Per-item taxonomy paths (coarse, middle, fine node names).
#[derive(Clone, Debug, Default)]
pub struct TaxonomyTree {
    pub paths: BTreeMap<String, [String; 3]>,
    pub warnings: Vec<String>,
}

/// Builds three-level paths for items from their flat labels.
///
/// Each item is placed by its first label; items without labels get no path.
pub fn build_taxonomy_tree(
    flat_labels: &BTreeMap<String, Vec<String>>,
    vectors: &HashMap<String, Vec<f64>>,
    level_sizes: [usize; 3],
    rng: &mut Rng,
) -> Result<TaxonomyTree> {
    let [k1, k2, k3] = level_sizes;
    if !(k1 >= k2 && k2 >= k3 && k3 >= 1) {
        return Err(Error::Config(format!(
            "taxonomy level sizes must be non-increasing and positive, got {level_sizes:?}"
        )));
    }
    let labels: Vec<String> = flat_labels
        .values()
        .filter_map(|ls| ls.first().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut tree = TaxonomyTree::default();
    if labels.is_empty() {
        return Ok(tree);
    }
    let points = labels
        .iter()
        .map(|l| {
            vectors
                .get(l)
                .cloned()
                .ok_or_else(|| Error::Ingest(format!("no vector for taxonomy label {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut clamp = |k: usize, available: usize, level: usize| {
        if k > available {
            let msg = format!("level {level}: {k} clusters requested but only {available} inputs; using {available}");
            warn!("{msg}");
            tree.warnings.push(msg);
            available
        } else {
            k
        }
    };
    let k1 = clamp(k1, points.len(), 3);
    let fine = kmeanspp(&points, k1, rng, 300)?;
    let k2 = clamp(k2, k1, 2);
    let mid = kmeanspp(&fine.centroids, k2, rng, 300)?;
    let k3 = clamp(k3, k2, 1);
    let coarse = kmeanspp(&mid.centroids, k3, rng, 300)?;

    let label_pos: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    for (item, ls) in flat_labels {
        let Some(first) = ls.first() else { continue };
        let c_fine = fine.assignments[label_pos[first.as_str()]];
        let c_mid = mid.assignments[c_fine];
        let c_coarse = coarse.assignments[c_mid];
        tree.paths.insert(
            item.clone(),
            [
                format!("L1-{c_coarse}"),
                format!("L2-{c_mid}"),
                format!("L3-{c_fine}"),
            ],
        );
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    fn blobs() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(vec![0.1 * i as f64, -0.05 * i as f64]);
            pts.push(vec![10.0 + 0.1 * i as f64, 10.0 + 0.07 * i as f64]);
        }
        pts
    }

    #[test]
    fn k_equals_points_has_zero_inertia() {
        let pts = blobs();
        let km = kmeanspp(&pts, pts.len(), &mut Rng::new(1), 50).unwrap();
        assert_eq!(km.inertia(), 0.0);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let pts = blobs();
        let km = kmeanspp(&pts, 1, &mut Rng::new(1), 50).unwrap();
        let mean_x = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let mean_y = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
        assert!((km.centroids[0][0] - mean_x).abs() < 1e-12);
        assert!((km.centroids[0][1] - mean_y).abs() < 1e-12);
    }

    #[test]
    fn invalid_k() {
        assert!(kmeanspp(&blobs(), 0, &mut Rng::new(1), 10).is_err());
        assert!(kmeanspp(&blobs()[..2], 3, &mut Rng::new(1), 10).is_err());
    }

    #[test]
    fn forced_single_root() {
        let labels: BTreeMap<String, Vec<String>> = [("a", "x"), ("b", "y"), ("c", "z"), ("d", "x")]
            .iter()
            .map(|(i, l)| (i.to_string(), vec![l.to_string()]))
            .collect();
        let vectors: HashMap<String, Vec<f64>> = [("x", 0.0), ("y", 1.0), ("z", 5.0)]
            .iter()
            .map(|(l, v)| (l.to_string(), vec![*v]))
            .collect();
        let tree = build_taxonomy_tree(&labels, &vectors, [3, 2, 1], &mut Rng::new(3)).unwrap();
        let roots: BTreeSet<&String> = tree.paths.values().map(|p| &p[0]).collect();
        assert_eq!(roots.len(), 1);
        assert_eq!(tree.paths["a"], tree.paths["d"]);
    }

    #[test]
    fn clamps_when_too_few_labels() {
        let labels: BTreeMap<String, Vec<String>> =
            [("a".to_string(), vec!["x".to_string()]), ("b".to_string(), vec!["y".to_string()])].into();
        let vectors: HashMap<String, Vec<f64>> = [("x".to_string(), vec![0.0]), ("y".to_string(), vec![1.0])].into();
        let tree = build_taxonomy_tree(&labels, &vectors, [100, 50, 10], &mut Rng::new(3)).unwrap();
        assert!(!tree.warnings.is_empty());
        assert_eq!(tree.paths.len(), 2);
    }

    #[test]
    fn rejects_growing_or_zero_sizes() {
        let empty = BTreeMap::new();
        assert!(build_taxonomy_tree(&empty, &HashMap::new(), [5, 6, 1], &mut Rng::new(0)).is_err());
        assert!(build_taxonomy_tree(&empty, &HashMap::new(), [5, 2, 0], &mut Rng::new(0)).is_err());
    }

    proptest! {
        #[test]
        fn inertia_never_increases(
            seed in 0u64..1000,
            k in 1usize..5,
            raw in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6..30),
        ) {
            let pts: Vec<Vec<f64>> = raw.iter().map(|(x, y)| vec![*x, *y]).collect();
            let km = kmeanspp(&pts, k, &mut Rng::new(seed), 100).unwrap();
            for w in km.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }
}
