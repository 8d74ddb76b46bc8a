//! Walk a single sample through the integer datapath of the hand-built
//! reference network and show every intermediate value, then check that
//! a quantized trained model keeps its accuracy.

use bespoke_mlp::compress::PruneMask;
use bespoke_mlp::dataio::{normalize, split, SplitSpec};
use bespoke_mlp::fixtures::{make_blobs, reference_net};
use bespoke_mlp::model::{accuracy, profile_activations, train, TrainConfig};
use bespoke_mlp::quant::{
    fixed_point_inference, quantize_model, quantized_accuracy, QuantGenes,
};

fn main() -> bespoke_mlp::Result<()> {
    let q = reference_net();
    println!(
        "reference net formats: weights {}, biases {}, activations {}, inputs {}",
        q.genes.weights, q.genes.biases, q.genes.activations, q.genes.inputs
    );

    // Input codes are unsigned Q1.2: code 4 means 1.0.
    let row = vec![4, 4];
    let (class, accs) = fixed_point_inference(&q, &row)?;
    println!("\ninput codes {row:?}");
    for (l, layer) in accs.iter().enumerate() {
        println!("layer {l} accumulators: {layer:?}");
    }
    println!("predicted class: {class}");
    // Everything above is exact integer arithmetic: 3*4 + 2*4 + 16 = 36,
    // QRelu drops two fraction bits (36 >> 2 = 9), and so on.

    // The same machinery on a trained model: quantize at a searched-like
    // format and compare against the float accuracy.
    let raw = make_blobs(3, 4, 200, 4.0, 3);
    let (train_raw, test_raw) = split(&raw, &SplitSpec::default())?;
    let train_set = normalize(&train_raw, &train_raw)?;
    let test_set = normalize(&test_raw, &train_raw)?;
    let model = train(&train_set, 4, &TrainConfig { epochs: 200, seed: 1, ..TrainConfig::default() })?;

    let profile = profile_activations(&model, &train_set)?;
    let genes = QuantGenes::reference_for(&model, &profile)?;
    let mask = PruneMask::all_true(&model);
    let qm = quantize_model(&model, &genes, &mask, None, &train_set, 3)?;
    let eval = quantized_accuracy(&qm, &test_set)?;
    println!(
        "\ntrained model: float accuracy {:.4}, 8-bit integer accuracy {:.4} ({} overflow rows)",
        accuracy(&model, &test_set)?,
        eval.accuracy,
        eval.overflow_rows
    );
    Ok(())
}
