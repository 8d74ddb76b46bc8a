//! Load a dataset, train the float MLP and measure where it stands
//! before any hardware-aware minimization.

use bespoke_mlp::dataio::{normalize, split, SplitSpec};
use bespoke_mlp::fixtures::make_blobs;
use bespoke_mlp::model::{accuracy, profile_activations, train, TrainConfig};

fn main() -> bespoke_mlp::Result<()> {
    // Synthetic stand-in for a labelled CSV; dataio::load_csv ingests
    // real files the same way.
    let raw = make_blobs(3, 4, 240, 4.0, 7);
    let (train_raw, test_raw) = split(&raw, &SplitSpec::default())?;

    // Min/max statistics come from the training split only; the test
    // split reuses them so nothing leaks.
    let train_set = normalize(&train_raw, &train_raw)?;
    let test_set = normalize(&test_raw, &train_raw)?;
    println!(
        "dataset: {} train / {} test rows, {} features, {} classes",
        train_set.n_rows(),
        test_set.n_rows(),
        train_set.n_features(),
        train_set.n_classes
    );

    let cfg = TrainConfig {
        epochs: 150,
        seed: 7,
        ..TrainConfig::default()
    };
    let model = train(&train_set, 4, &cfg)?;
    println!(
        "trained 1 hidden layer of {} ReLU neurons ({} epochs, Adam)",
        model.hidden_dim, cfg.epochs
    );
    println!("train accuracy: {:.4}", accuracy(&model, &train_set)?);
    println!("test accuracy:  {:.4}", accuracy(&model, &test_set)?);

    // The activation profile feeds later stages: fixed-point formats
    // must cover these ranges.
    let profile = profile_activations(&model, &train_set)?;
    println!(
        "hidden activations peak at {:.3}, output |score| at {:.3}",
        profile
            .hidden_post_max
            .iter()
            .fold(0.0f64, |a, &v| a.max(v)),
        profile
            .output_abs_max
            .iter()
            .fold(0.0f64, |a, &v| a.max(v)),
    );
    Ok(())
}
