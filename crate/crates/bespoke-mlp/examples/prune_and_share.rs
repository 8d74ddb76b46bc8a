//! Magnitude pruning followed by k-means weight sharing: show how the
//! distinct-multiplicand census shrinks while retraining recovers the
//! accuracy.

use bespoke_mlp::compress::{cluster_weights, prune_low_magnitude, retrain_frozen, PruneMask};
use bespoke_mlp::compress::sharing_census;
use bespoke_mlp::dataio::{normalize, split, SplitSpec};
use bespoke_mlp::fixtures::make_blobs;
use bespoke_mlp::model::{accuracy, profile_activations, train, TrainConfig};
use bespoke_mlp::quant::{qat_retrain, quantize_model, quantized_accuracy, QuantGenes};

fn main() -> bespoke_mlp::Result<()> {
    let raw = make_blobs(3, 4, 240, 3.5, 5);
    let (train_raw, test_raw) = split(&raw, &SplitSpec::default())?;
    let train_set = normalize(&train_raw, &train_raw)?;
    let test_set = normalize(&test_raw, &train_raw)?;

    let cfg = TrainConfig { epochs: 200, seed: 5, ..TrainConfig::default() };
    let model = train(&train_set, 5, &cfg)?;
    println!("float test accuracy: {:.4}", accuracy(&model, &test_set)?);

    let profile = profile_activations(&model, &train_set)?;
    let genes = QuantGenes::reference_for(&model, &profile)?;
    let tune = TrainConfig { epochs: 60, seed: 5, ..TrainConfig::default() };

    let dense_mask = PruneMask::all_true(&model);
    let dense = quantize_model(&model, &genes, &dense_mask, None, &train_set, 5)?;
    let census = sharing_census(&dense);
    println!(
        "dense 8-bit: census {:?} (total {} multipliers), accuracy {:.4}",
        census.per_layer,
        census.total,
        quantized_accuracy(&dense, &test_set)?.accuracy
    );

    println!("\nmagnitude pruning + quantization-aware recovery:");
    for sparsity in [0.2, 0.4] {
        let mask = prune_low_magnitude(&model, sparsity)?;
        let tuned = qat_retrain(&model, &genes, &tune, &mask, &train_set)?;
        let qm = quantize_model(&tuned, &genes, &mask, None, &train_set, 5)?;
        let census = sharing_census(&qm);
        println!(
            "  sparsity {:.1}: kept {}/{} weights, census {:?} (total {}), accuracy {:.4}",
            sparsity,
            mask.n_weights() - mask.n_pruned(),
            mask.n_weights(),
            census.per_layer,
            census.total,
            quantized_accuracy(&qm, &test_set)?.accuracy
        );
    }

    // Weight sharing on top of moderate pruning: collapse each input
    // column to at most k centroid magnitudes, then retrain with the
    // surviving weights frozen at their centroids so the biases adapt.
    let mask = prune_low_magnitude(&model, 0.4)?;
    let pruned = qat_retrain(&model, &genes, &tune, &mask, &train_set)?;
    println!("\nk-means weight sharing on the 0.4-sparse model:");
    for k in [4, 3, 2] {
        let assignment = cluster_weights(&pruned.layers, &mask, &[k, k], 5)?;
        let shared = retrain_frozen(&pruned, &assignment, &genes, &tune, &train_set)?;
        let qm = quantize_model(&shared, &genes, &mask, Some(&assignment), &train_set, 5)?;
        let census = sharing_census(&qm);
        println!(
            "  k={k}: census {:?} (total {}), accuracy {:.4}",
            census.per_layer,
            census.total,
            quantized_accuracy(&qm, &test_set)?.accuracy
        );
    }
    Ok(())
}
