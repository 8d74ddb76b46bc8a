//! Synthetic datasets and a hand-built quantized network for tests,
//! examples and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compress::PruneMask;
use crate::dataio::Dataset;
use crate::model::MLPModel;
use crate::quant::{
    quantize_model, FixedPointFormat, QuantGenes, QuantLayer, QuantizedMLP,
};
use crate::seeds::derive_seed;
use crate::Result;

/// Gaussian blob classification dataset.
///
/// Class `c` is centered on a point whose every coordinate sits near
/// `(c + 0.5) / n_classes`, with per-feature jitter so no single feature is
/// sufficient on its own. Row `i` belongs to class `i % n_classes`, so the
/// dataset is balanced. Larger `separation` shrinks the noise relative to
/// the center spacing; `separation >= 3` is comfortably linearly separable.
///
/// Features are raw (roughly inside [0, 1] but not exactly); run them
/// through normalization like any other dataset.
pub fn make_blobs(
    n_classes: usize,
    n_features: usize,
    n_rows: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    assert!(n_classes >= 2, "need at least two classes");
    assert!(n_features >= 1 && n_rows >= n_classes);
    assert!(separation > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let spacing = 1.0 / n_classes as f64;
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            (0..n_features)
                .map(|_| {
                    let base = (c as f64 + 0.5) * spacing;
                    base + (rng.gen::<f64>() - 0.5) * spacing * 0.4
                })
                .collect()
        })
        .collect();

    let sigma = spacing / (2.0 * separation);
    let gauss = move |rng: &mut ChaCha8Rng| -> f64 {
        // Box-Muller; one draw per call keeps the stream layout simple.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };

    let mut features = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let class = i % n_classes;
        let row: Vec<f64> = (0..n_features)
            .map(|f| (centers[class][f] + sigma * gauss(&mut rng)).clamp(0.0, 1.0))
            .collect();
        features.push(row);
        labels.push(class);
    }
    let names = (0..n_features).map(|f| format!("f{f}")).collect();
    Dataset::new(features, labels, names, n_classes).expect("blob dataset is well formed")
}

/// Hand-built 2-feature, 2-hidden, 2-class quantized network with fully
/// known codes, used for hand-verified examples across modules.
///
/// Formats: weights and biases signed 4-bit with 1 integer bit, inputs
/// unsigned 3-bit with 1 integer bit, activations unsigned 4-bit with 2
/// integer bits. Layer 0 column 0 carries codes +3 and -3, so one shared
/// multiplier feeds both hidden neurons; layer 1 column 1 shares |2|
/// across signs the same way. Accumulator widths cover the whole input
/// space (not just a training profile), so exhaustive sweeps never trip
/// the overflow sentinel.
pub fn reference_net() -> QuantizedMLP {
    let fmt = |total, integer, signed| FixedPointFormat {
        total_bits: total,
        integer_bits: integer,
        signed,
    };
    QuantizedMLP {
        genes: QuantGenes {
            weights: fmt(4, 1, true),
            biases: fmt(4, 1, true),
            activations: fmt(4, 2, false),
            inputs: fmt(3, 1, false),
            sparsity: 0.0,
        },
        layers: vec![
            QuantLayer {
                weights: vec![vec![3, 2], vec![-3, 5]],
                biases: vec![4, -6],
            },
            QuantLayer {
                weights: vec![vec![1, -2], vec![2, 2]],
                biases: vec![1, 0],
            },
        ],
        mask: PruneMask {
            layers: vec![vec![vec![true; 2]; 2], vec![vec![true; 2]; 2]],
        },
        clusters: None,
        // Exhaustive |accumulator| maxima over all 3-bit input pairs:
        // layer 0: 3x+2y+16 peaks at 51, |-3x+5y-24| at 45;
        // layer 1 (activations in [0,15]): |a-2b+4| peaks at 26, 2a+2b at 60.
        profiled_abs_max: vec![vec![51, 45], vec![26, 60]],
        acc_magnitude_bits: vec![vec![7, 7], vec![6, 7]],
        qrelu_input_int_bits: vec![3, 3],
    }
}

/// Small random quantized network: random (untrained) float weights,
/// random feasible formats and sparsity, quantized against a synthetic
/// profiling set. Deterministic in `seed`; used by property tests that
/// need varied netlists cheaply.
pub fn random_net(seed: u64) -> Result<QuantizedMLP> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xF1C5]));
    let n_features = rng.gen_range(2..=6);
    let hidden = rng.gen_range(2..=5);
    let n_classes = rng.gen_range(2..=4);
    let mut m = MLPModel::new_seeded(n_features, hidden, n_classes, derive_seed(seed, &[1]))?;
    for layer in &mut m.layers {
        for row in &mut layer.weights {
            for w in row {
                *w = rng.gen_range(-1.5..1.5);
            }
        }
        for b in &mut layer.biases {
            *b = rng.gen_range(-0.5..0.5);
        }
    }

    // Formats sampled so the activation grid is always reachable from
    // the accumulator grid (F_act <= F_in + F_w).
    let p_in = rng.gen_range(2..=4u32);
    let i_in = rng.gen_range(0..=1u32.min(p_in - 1));
    let p_w = rng.gen_range(4..=8u32);
    let i_w = rng.gen_range(0..=2u32.min(p_w - 2));
    let f_acc = (p_in - i_in) + (p_w - 1 - i_w);
    let p_a = rng.gen_range(3..=8u32);
    let i_a = rng.gen_range(p_a.saturating_sub(f_acc)..=p_a);
    let p_b = rng.gen_range(4..=8u32);
    let i_b = rng.gen_range(0..=3u32.min(p_b - 1));
    let genes = QuantGenes {
        weights: FixedPointFormat::new_signed(p_w, i_w)?,
        biases: FixedPointFormat::new_signed(p_b, i_b)?,
        activations: FixedPointFormat::new_unsigned(p_a, i_a)?,
        inputs: FixedPointFormat::new_unsigned(p_in, i_in)?,
        sparsity: rng.gen_range(0..=5) as f64 * 0.1,
    };
    let profile = make_blobs(n_classes, n_features, 30, 3.0, derive_seed(seed, &[2]));
    let profile = crate::dataio::normalize(&profile, &profile)?;
    let mask = crate::compress::prune_low_magnitude(&m, genes.sparsity)?;
    quantize_model(&m, &genes, &mask, None, &profile, derive_seed(seed, &[3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::sharing_census;
    use crate::quant::fixed_point_inference;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let d = make_blobs(3, 4, 90, 4.0, 7);
        assert_eq!(d.n_rows(), 90);
        assert_eq!(d.n_features(), 4);
        assert_eq!(d.class_counts(), vec![30, 30, 30]);
        let d2 = make_blobs(3, 4, 90, 4.0, 7);
        assert_eq!(d, d2);
        let d3 = make_blobs(3, 4, 90, 4.0, 8);
        assert_ne!(d, d3);
    }

    #[test]
    fn reference_net_is_valid_and_bit_stable() {
        let q = reference_net();
        q.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.json");
        q.save(&p).unwrap();
        let back = QuantizedMLP::load(&p).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn reference_net_census_golden() {
        let q = reference_net();
        let census = sharing_census(&q);
        // Column code sets: layer 0 {3}, {2,5}; layer 1 {1,2}, {2}.
        assert_eq!(census.per_layer, vec![3, 3]);
        assert_eq!(census.total, 6);
    }

    #[test]
    fn reference_net_forward_hand_trace() {
        let q = reference_net();
        // Input codes [4, 4]:
        // hidden acc0 = 3*4 + 2*4 + 16 = 36 -> QRelu: 36 >> 2 = 9
        // hidden acc1 = -3*4 + 5*4 - 24 = -16 -> 0
        // out acc0 = 1*9 - 2*0 + 4 = 13; out acc1 = 2*9 + 2*0 + 0 = 18
        let (class, accs) = fixed_point_inference(&q, &[4, 4]).unwrap();
        assert_eq!(accs, vec![vec![36, -16], vec![13, 18]]);
        assert_eq!(class, 1);
        // Saturation path: [7, 7] drives acc0 to 3*7+2*7+16 = 51,
        // 51 >> 2 = 12; acc1 = -21+35-24 = -10 -> 0.
        let (_, accs) = fixed_point_inference(&q, &[7, 7]).unwrap();
        assert_eq!(accs[0], vec![51, -10]);
    }

    #[test]
    fn reference_net_area_golden() {
        // Frozen once from the gate-level oracles at the default library.
        let lib = crate::hwcost::GateLibrary::default();
        let report = crate::hwcost::oracle_area(&reference_net(), &lib).unwrap();
        assert_eq!(report.census.total, 6);
        assert!((report.total - AREA_GOLDEN).abs() < 1e-9, "oracle area {}", report.total);
    }

    /// 95 multiplier units (only |3| and |5| need adders; 1, 2 and the
    /// shared column entries are wiring), 339 accumulator units, 2 QRelu
    /// blocks of 9. Computed once by the gate-level oracles.
    const AREA_GOLDEN: f64 = 452.0;

    #[test]
    fn reference_net_mask_edit_propagates_to_census() {
        let mut q = reference_net();
        // Pruning the code-2 weight on layer 0 column 1 leaves {5} there.
        q.mask.layers[0][0][1] = false;
        q.layers[0].weights[0][1] = 0;
        q.validate().unwrap();
        let census = sharing_census(&q);
        assert_eq!(census.per_layer, vec![2, 3]);
        assert_eq!(census.total, 5);
    }

    #[test]
    fn random_nets_are_deterministic_and_valid() {
        for seed in 0..10 {
            let a = random_net(seed).unwrap();
            let b = random_net(seed).unwrap();
            assert_eq!(a, b);
            a.validate().unwrap();
        }
        assert_ne!(random_net(1).unwrap(), random_net(2).unwrap());
    }

    #[test]
    fn classes_are_geometrically_separated() {
        let d = make_blobs(2, 3, 200, 4.0, 1);
        // Per-class centroid distance should dwarf within-class spread.
        let mut sums = vec![vec![0.0; 3]; 2];
        let counts = d.class_counts();
        for (row, &l) in d.features.iter().zip(&d.labels) {
            for (j, &v) in row.iter().enumerate() {
                sums[l][j] += v;
            }
        }
        let centroids: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s.iter().map(|v| v / c as f64).collect())
            .collect();
        let dist: f64 = centroids[0]
            .iter()
            .zip(&centroids[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 0.5, "centroid distance {dist}");
    }
}
