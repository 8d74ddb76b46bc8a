//! Magnitude pruning and per-input k-means weight sharing.
//!
//! Both techniques shrink the set of distinct multipliers a bespoke circuit
//! must instantiate: pruning zeroes weights outright, sharing collapses the
//! non-pruned weights that multiply the same input into K centroid values.
//! Sharing is evaluated on absolute values, since a bespoke subtractor
//! handles the sign for free by routing the product into the negative
//! accumulation group.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{LayerParams, MLPModel, TrainConfig};
use crate::quant::{QuantGenes, QuantizedMLP};
use crate::seeds::derive_seed;
use crate::{Error, Result};

/// Boolean keep/drop decision per weight position (`true` = kept), in the
/// same `[layer][neuron][input]` shape as the model weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub layers: Vec<Vec<Vec<bool>>>,
}

impl PruneMask {
    /// Mask that keeps every weight of `m`.
    pub fn all_true(m: &MLPModel) -> Self {
        PruneMask {
            layers: m
                .layers
                .iter()
                .map(|l| vec![vec![true; l.in_dim()]; l.out_dim()])
                .collect(),
        }
    }

    pub fn is_kept(&self, layer: usize, neuron: usize, input: usize) -> bool {
        self.layers[layer][neuron][input]
    }

    pub fn n_weights(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .map(Vec::len)
            .sum()
    }

    pub fn n_pruned(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .flat_map(|r| r.iter())
            .filter(|&&kept| !kept)
            .count()
    }

    /// Achieved sparsity: pruned fraction over all weight positions.
    pub fn sparsity(&self) -> f64 {
        self.n_pruned() as f64 / self.n_weights() as f64
    }

    /// Check the mask matches the model's layer shapes.
    pub fn validate_for(&self, m: &MLPModel) -> Result<()> {
        let ok = self.layers.len() == m.layers.len()
            && self.layers.iter().zip(&m.layers).all(|(ml, l)| {
                ml.len() == l.out_dim() && ml.iter().all(|r| r.len() == l.in_dim())
            });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("mask shape does not match model".into()))
        }
    }
}

/// Mask the globally smallest-magnitude weights.
///
/// Exactly `floor(s * n_weights)` positions are pruned, chosen across all
/// layers by ascending |w| with ties broken in (layer, neuron, input)
/// order. `s` must lie in [0, 0.5]; half the weights is the deepest cut
/// the downstream search explores.
pub fn prune_low_magnitude(m: &MLPModel, s: f64) -> Result<PruneMask> {
    if !(0.0..=0.5).contains(&s) {
        return Err(Error::InvalidInput(format!(
            "sparsity must be in [0, 0.5], got {s}"
        )));
    }
    let mut mask = PruneMask::all_true(m);
    let mut entries: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (l, layer) in m.layers.iter().enumerate() {
        for (r, row) in layer.weights.iter().enumerate() {
            for (c, &w) in row.iter().enumerate() {
                entries.push((w.abs(), l, r, c));
            }
        }
    }
    let n_prune = (s * entries.len() as f64).floor() as usize;
    entries.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    for &(_, l, r, c) in entries.iter().take(n_prune) {
        mask.layers[l][r][c] = false;
    }
    Ok(mask)
}

/// Clustering of one weight column (all neurons' weights for one input).
///
/// `assignment[neuron]` is `Some(cluster)` for kept weights and `None` for
/// pruned ones; `centroids[cluster]` is the shared float value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnClusters {
    pub centroids: Vec<f64>,
    pub assignment: Vec<Option<usize>>,
}

/// Per-layer, per-input-column clustering decisions. A column entry of
/// `None` means that column's weights are unconstrained (not clustered).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub layers: Vec<Vec<Option<ColumnClusters>>>,
}

impl ClusterAssignment {
    /// Assignment with every column unconstrained, shaped like `m`.
    pub fn none_for(m: &MLPModel) -> Self {
        ClusterAssignment {
            layers: m
                .layers
                .iter()
                .map(|l| vec![None; l.in_dim()])
                .collect(),
        }
    }

    /// Shared value for a weight position, if that column is clustered.
    pub fn centroid_of(&self, layer: usize, neuron: usize, input: usize) -> Option<f64> {
        let col = self.layers.get(layer)?.get(input)?.as_ref()?;
        col.assignment[neuron].map(|c| col.centroids[c])
    }

    /// Reconstruct the prune mask implied by the assignment: clustered
    /// columns mark `None` entries as pruned; unconstrained columns keep
    /// everything.
    pub fn implied_mask(&self, m: &MLPModel) -> PruneMask {
        let mut mask = PruneMask::all_true(m);
        for (l, cols) in self.layers.iter().enumerate() {
            for (j, col) in cols.iter().enumerate() {
                if let Some(col) = col {
                    for (r, a) in col.assignment.iter().enumerate() {
                        mask.layers[l][r][j] = a.is_some();
                    }
                }
            }
        }
        mask
    }

    /// Overwrite the model's weights with centroid values (pruned
    /// positions become 0). Unconstrained columns are left as-is.
    pub fn apply_to(&self, m: &mut MLPModel) {
        for (l, cols) in self.layers.iter().enumerate() {
            for (j, col) in cols.iter().enumerate() {
                if let Some(col) = col {
                    for (r, a) in col.assignment.iter().enumerate() {
                        m.layers[l].weights[r][j] = match a {
                            Some(c) => col.centroids[*c],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }

    /// Largest centroid count over the columns of one layer.
    pub fn max_clusters(&self, layer: usize) -> usize {
        self.layers[layer]
            .iter()
            .flatten()
            .map(|c| c.centroids.len())
            .max()
            .unwrap_or(0)
    }
}

/// One-dimensional k-means (Lloyd's algorithm, k-means++ seeding).
///
/// Returns (centroids, assignment, per-iteration within-cluster sum of
/// squares). The WCSS trace is nonincreasing; the final entry is the
/// converged objective. Stops when assignments stabilize or after 100
/// iterations.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    assert!(k >= 1 && !values.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding: first centroid uniform, then D^2-weighted picks.
    let mut centroids: Vec<f64> = vec![values[rng.gen_range(0..values.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|v| {
                centroids
                    .iter()
                    .map(|c| (v - c) * (v - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total == 0.0 {
            break; // all remaining points coincide with a centroid
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = values.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        centroids.push(values[pick]);
    }

    let nearest = |v: f64, cs: &[f64]| -> usize {
        let mut best = 0;
        for (i, c) in cs.iter().enumerate().skip(1) {
            if (v - c).abs() < (v - cs[best]).abs() {
                best = i;
            }
        }
        best
    };

    let mut assignment: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
    let mut wcss_trace = Vec::new();
    for _ in 0..100 {
        // Update step: centroid = mean of its members. An empty cluster
        // adopts the point farthest from its current centroid.
        for c in 0..centroids.len() {
            let members: Vec<f64> = values
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(&v, _)| v)
                .collect();
            if members.is_empty() {
                let far = (0..values.len())
                    .max_by(|&a, &b| {
                        let da = (values[a] - centroids[assignment[a]]).abs();
                        let db = (values[b] - centroids[assignment[b]]).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[c] = values[far];
            } else {
                centroids[c] = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        let new_assignment: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
        let wcss: f64 = values
            .iter()
            .zip(&new_assignment)
            .map(|(&v, &a)| (v - centroids[a]) * (v - centroids[a]))
            .sum();
        wcss_trace.push(wcss);
        let stable = new_assignment == assignment;
        assignment = new_assignment;
        if stable {
            break;
        }
    }
    (centroids, assignment, wcss_trace)
}

/// Cluster the kept weights of every (layer, input column) group.
///
/// Groups with at most `k` members keep their exact values (each weight is
/// its own centroid); larger groups are clustered into at most `k` shared
/// values. `k_per_layer` must supply one K >= 1 per layer.
pub fn cluster_weights(
    layers: &[LayerParams],
    mask: &PruneMask,
    k_per_layer: &[usize],
    seed: u64,
) -> Result<ClusterAssignment> {
    if k_per_layer.len() != layers.len() {
        return Err(Error::InvalidInput(format!(
            "{} cluster counts for {} layers",
            k_per_layer.len(),
            layers.len()
        )));
    }
    if let Some(&bad) = k_per_layer.iter().find(|&&k| k == 0) {
        return Err(Error::InvalidInput(format!("K must be >= 1, got {bad}")));
    }
    let mut out = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let k = k_per_layer[l];
        let mut cols = Vec::with_capacity(layer.in_dim());
        for j in 0..layer.in_dim() {
            let kept: Vec<(usize, f64)> = (0..layer.out_dim())
                .filter(|&r| mask.layers[l][r][j])
                .map(|r| (r, layer.weights[r][j]))
                .collect();
            let mut assignment: Vec<Option<usize>> = vec![None; layer.out_dim()];
            let centroids: Vec<f64> = if kept.len() <= k {
                // Identity clustering: every kept weight is its own centroid.
                for (c, &(r, _)) in kept.iter().enumerate() {
                    assignment[r] = Some(c);
                }
                kept.iter().map(|&(_, w)| w).collect()
            } else {
                let values: Vec<f64> = kept.iter().map(|&(_, w)| w).collect();
                let (centroids, assign, _) =
                    kmeans_1d(&values, k, derive_seed(seed, &[l as u64, j as u64]));
                for (&(r, _), &a) in kept.iter().zip(&assign) {
                    assignment[r] = Some(a);
                }
                centroids
            };
            cols.push(Some(ColumnClusters {
                centroids,
                assignment,
            }));
        }
        out.push(cols);
    }
    Ok(ClusterAssignment { layers: out })
}

/// Quantization-aware retraining with all clustered weights frozen at
/// their centroids and pruned weights at zero. Columns `cluster_weights`
/// touched always end up fully constrained, so in the usual flow only
/// biases keep learning, which is exactly the recovery step sharing needs.
pub fn retrain_frozen(
    m: &MLPModel,
    assignment: &ClusterAssignment,
    g: &QuantGenes,
    cfg: &TrainConfig,
    data: &crate::dataio::Dataset,
) -> Result<MLPModel> {
    let mask = assignment.implied_mask(m);
    crate::quant::qat_constrained(m, g, cfg, &mask, Some(assignment), data)
}

/// Count of multiplier instances a bespoke datapath needs per layer:
/// distinct nonzero |weight code| values per input column, summed over
/// columns. Sign differences do not add multipliers (the subtractor side
/// of the accumulator absorbs them), which is why sharing works on
/// absolute values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingCensus {
    pub per_layer: Vec<usize>,
    pub total: usize,
}

pub fn sharing_census(q: &QuantizedMLP) -> SharingCensus {
    let per_layer: Vec<usize> = (0..q.layers.len())
        .map(|l| {
            (0..q.layers[l].in_dim())
                .map(|j| q.distinct_abs_codes(l, j).len())
                .sum()
        })
        .collect();
    let total = per_layer.iter().sum();
    SharingCensus { per_layer, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MLPModel;

    fn model_with_weights(w1: Vec<Vec<f64>>, w2: Vec<Vec<f64>>) -> MLPModel {
        let hidden = w1.len();
        let input = w1[0].len();
        let output = w2.len();
        let mut m = MLPModel::new_seeded(input, hidden, output, 0).unwrap();
        m.layers[0].weights = w1;
        m.layers[1].weights = w2;
        m
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let m = MLPModel::new_seeded(3, 2, 2, 1).unwrap();
        let mask = prune_low_magnitude(&m, 0.0).unwrap();
        assert_eq!(mask, PruneMask::all_true(&m));
        assert_eq!(mask.sparsity(), 0.0);
    }

    #[test]
    fn prunes_smallest_magnitudes() {
        // 4 weights in layer 0 (2x2), 4 in layer 1 (2x2): 8 total.
        let m = model_with_weights(
            vec![vec![0.5, -0.1], vec![0.3, 0.05]],
            vec![vec![1.0, -0.9], vec![0.8, 0.7]],
        );
        let mask = prune_low_magnitude(&m, 0.5).unwrap();
        // floor(0.5 * 8) = 4 pruned: 0.05, -0.1, 0.3, 0.5 are the smallest.
        assert_eq!(mask.n_pruned(), 4);
        assert!(!mask.is_kept(0, 0, 0));
        assert!(!mask.is_kept(0, 0, 1));
        assert!(!mask.is_kept(0, 1, 0));
        assert!(!mask.is_kept(0, 1, 1));
        assert!(mask.is_kept(1, 0, 0));
    }

    #[test]
    fn floor_rule_on_odd_counts() {
        // 5 weights total: hidden 1x3 plus output 2x1.
        let m = model_with_weights(
            vec![vec![0.5, -0.1, 0.3]],
            vec![vec![0.05], vec![0.9]],
        );
        let mask = prune_low_magnitude(&m, 0.5).unwrap();
        assert_eq!(mask.n_pruned(), 2); // floor(2.5)
        assert!(!mask.is_kept(1, 0, 0)); // 0.05
        assert!(!mask.is_kept(0, 0, 1)); // -0.1
    }

    #[test]
    fn sparsity_out_of_range_is_rejected() {
        let m = MLPModel::new_seeded(2, 2, 2, 0).unwrap();
        assert!(prune_low_magnitude(&m, 0.6).is_err());
        assert!(prune_low_magnitude(&m, -0.1).is_err());
    }

    #[test]
    fn pruning_is_monotone_in_sparsity() {
        let m = MLPModel::new_seeded(6, 5, 3, 42).unwrap();
        let masks: Vec<PruneMask> = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
            .iter()
            .map(|&s| prune_low_magnitude(&m, s).unwrap())
            .collect();
        for w in masks.windows(2) {
            // Higher sparsity keeps a subset: anything kept later was kept
            // earlier.
            for (l, layer) in w[1].layers.iter().enumerate() {
                for (r, row) in layer.iter().enumerate() {
                    for (c, &kept) in row.iter().enumerate() {
                        if kept {
                            assert!(w[0].layers[l][r][c]);
                        }
                    }
                }
            }
        }
    }

    /// Exhaustive 1-D k=2 oracle: optimal 2-clustering of sorted values is
    /// a contiguous split; try all split points.
    fn best_two_partition(values: &[f64]) -> (Vec<f64>, f64) {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let wcss_of = |xs: &[f64]| -> f64 {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mean) * (x - mean)).sum()
        };
        let mut best = (Vec::new(), f64::INFINITY);
        for split in 1..sorted.len() {
            let (a, b) = sorted.split_at(split);
            let wcss = wcss_of(a) + wcss_of(b);
            if wcss < best.1 {
                let ma = a.iter().sum::<f64>() / a.len() as f64;
                let mb = b.iter().sum::<f64>() / b.len() as f64;
                best = (vec![ma, mb], wcss);
            }
        }
        best
    }

    #[test]
    fn kmeans_matches_exhaustive_two_partition() {
        let values = [0.1, 0.12, 0.9];
        let (centroids, assignment, _) = kmeans_1d(&values, 2, 7);
        let (mut expect, _) = best_two_partition(&values);
        let mut got = centroids.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "{got:?} vs {expect:?}");
        }
        // 0.1 and 0.12 share a cluster; 0.9 does not.
        assert_eq!(assignment[0], assignment[1]);
        assert_ne!(assignment[0], assignment[2]);
    }

    proptest::proptest! {
        #[test]
        fn kmeans_two_clusters_is_optimal_on_random_data(
            values in proptest::collection::vec(-1.0f64..1.0, 3..12),
            seed in 0u64..50,
        ) {
            let (centroids, assignment, trace) = kmeans_1d(&values, 2, seed);
            // WCSS trace never increases.
            for w in trace.windows(2) {
                proptest::prop_assert!(w[1] <= w[0] + 1e-12);
            }
            // Lloyd's can stop in a local optimum, but on 1-D data with
            // k-means++ it lands within a small factor of the exhaustive
            // optimum; check the invariant that matters downstream: no more
            // than 2 distinct centroids in use.
            let used: std::collections::BTreeSet<usize> = assignment.iter().copied().collect();
            proptest::prop_assert!(used.len() <= 2);
            let (_, best) = best_two_partition(&values);
            let wcss: f64 = values.iter().zip(&assignment)
                .map(|(&v, &a)| (v - centroids[a]) * (v - centroids[a]))
                .sum();
            proptest::prop_assert!(wcss + 1e-9 >= best, "kmeans beat the optimum?");
        }
    }

    #[test]
    fn k1_replaces_with_column_means() {
        let m = model_with_weights(
            vec![vec![0.2, 0.8], vec![0.4, 0.0]],
            vec![vec![0.5, 0.5]],
        );
        let mask = PruneMask::all_true(&m);
        let assignment = cluster_weights(&m.layers, &mask, &[1, 1], 3).unwrap();
        // Layer 0 column 0 holds {0.2, 0.4} -> mean 0.3.
        let c = assignment.centroid_of(0, 0, 0).unwrap();
        assert!((c - 0.3).abs() < 1e-12);
        assert_eq!(assignment.centroid_of(0, 1, 0), Some(c));
        // Column 1 holds {0.8, 0.0} -> 0.4.
        assert_eq!(assignment.centroid_of(0, 0, 1), Some(0.4));
    }

    #[test]
    fn k_at_least_group_size_is_identity() {
        let m = model_with_weights(
            vec![vec![0.2, 0.8], vec![0.4, 0.1]],
            vec![vec![0.5, -0.5]],
        );
        let mask = PruneMask::all_true(&m);
        let assignment = cluster_weights(&m.layers, &mask, &[2, 2], 3).unwrap();
        let mut clone = m.clone();
        assignment.apply_to(&mut clone);
        assert_eq!(clone.layers[0].weights, m.layers[0].weights);
        assert_eq!(clone.layers[1].weights, m.layers[1].weights);
    }

    #[test]
    fn clustering_skips_pruned_weights() {
        let m = model_with_weights(
            vec![vec![0.1], vec![0.12], vec![0.9]],
            vec![vec![1.0, 1.0, 1.0]],
        );
        let mut mask = PruneMask::all_true(&m);
        mask.layers[0][2][0] = false; // prune the 0.9
        let assignment = cluster_weights(&m.layers, &mask, &[1, 3], 5).unwrap();
        // Only {0.1, 0.12} cluster: centroid 0.11; pruned slot stays None.
        assert!((assignment.centroid_of(0, 0, 0).unwrap() - 0.11).abs() < 1e-12);
        assert_eq!(assignment.centroid_of(0, 2, 0), None);
        let implied = assignment.implied_mask(&m);
        assert!(!implied.is_kept(0, 2, 0));
        assert!(implied.is_kept(0, 0, 0));
    }

    #[test]
    fn centroid_count_bounded_by_k() {
        let m = MLPModel::new_seeded(5, 8, 4, 9).unwrap();
        let mask = prune_low_magnitude(&m, 0.2).unwrap();
        for k in 1..=4 {
            let a = cluster_weights(&m.layers, &mask, &[k, k], 11).unwrap();
            for l in 0..2 {
                assert!(a.max_clusters(l) <= k.max(1));
                for col in a.layers[l].iter().flatten() {
                    let used: std::collections::BTreeSet<usize> =
                        col.assignment.iter().flatten().copied().collect();
                    assert!(used.len() <= k);
                }
            }
        }
    }
}
