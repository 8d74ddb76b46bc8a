//! Hardware-aware architecture search: sample training configurations,
//! cross-validate them, and among the accurate ones keep the model whose
//! bespoke circuit would be smallest at reference precision.

use bespoke_mlp::compress::PruneMask;
use bespoke_mlp::dataio::{normalize, split, SplitSpec};
use bespoke_mlp::fixtures::make_blobs;
use bespoke_mlp::hwcost::{AreaEstimator, GateLibrary, PIPELINE_Z_SET};
use bespoke_mlp::model::{accuracy, nas_search, profile_activations, MLPModel, NasOptions};
use bespoke_mlp::quant::{quantize_model, QuantGenes};

fn main() -> bespoke_mlp::Result<()> {
    let raw = make_blobs(3, 4, 180, 3.5, 11);
    let (train_raw, test_raw) = split(&raw, &SplitSpec::default())?;
    let train_set = normalize(&train_raw, &train_raw)?;
    let test_set = normalize(&test_raw, &train_raw)?;

    let lib = GateLibrary::default();
    let estimator = AreaEstimator::build(&lib, &PIPELINE_Z_SET, 100, 0, None)?;

    // The selection signal is estimated gate area of the candidate,
    // quantized at reference precision with nothing pruned.
    let price = |m: &MLPModel| -> bespoke_mlp::Result<f64> {
        let profile = profile_activations(m, &train_set)?;
        let genes = QuantGenes::reference_for(m, &profile)?;
        let q = quantize_model(m, &genes, &PruneMask::all_true(m), None, &train_set, 11)?;
        Ok(estimator.estimate(&q, &lib)?.total)
    };

    let opts = NasOptions {
        budget: 10,
        ..NasOptions::default()
    };
    let outcome = nas_search(&train_set, &opts, &price, 11)?;

    println!("candidate  hidden  cv_accuracy  est_area");
    for c in &outcome.candidates {
        let marker = if c.index == outcome.winner { "  <- winner" } else { "" };
        match (c.cv_accuracy, c.estimated_area) {
            (Some(acc), Some(area)) => {
                println!("{:>9}  {:>6}  {acc:>11.4}  {area:>8.1}{marker}", c.index, c.hidden_dim)
            }
            (Some(acc), None) => println!(
                "{:>9}  {:>6}  {acc:>11.4}  (outside accuracy band)",
                c.index, c.hidden_dim
            ),
            _ => println!("{:>9}  {:>6}     diverged", c.index, c.hidden_dim),
        }
    }
    println!(
        "\nwinner: hidden_dim {} with test accuracy {:.4}",
        outcome.model.hidden_dim,
        accuracy(&outcome.model, &test_set)?
    );
    Ok(())
}
