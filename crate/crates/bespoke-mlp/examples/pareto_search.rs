//! Small multi-objective search over the quantization/pruning chromosome,
//! followed by the weight-sharing sweep, printing the accuracy/area front
//! it discovers.

use bespoke_mlp::dataio::{normalize, split, SplitSpec};
use bespoke_mlp::fixtures::make_blobs;
use bespoke_mlp::hwcost::{AreaEstimator, GateLibrary, PIPELINE_Z_SET};
use bespoke_mlp::model::{train, TrainConfig};
use bespoke_mlp::optsearch::{cluster_sweep, search_front, Nsga2Config, ParetoFront, PipelineCtx};

fn show(front: &ParetoFront, title: &str) {
    println!("\n{title} ({} designs):", front.members.len());
    println!("  {:<10} {:<10} {:>9} {:>12} {:<10}", "loss", "accuracy", "area", "reduction", "clusters");
    for m in &front.members {
        let clusters = match m.cluster_k {
            Some([h, o]) => format!("[{h}, {o}]"),
            None => "-".into(),
        };
        println!(
            "  {:<10.4} {:<10.4} {:>9.1} {:>11.2}x {:<10}",
            m.accuracy_loss,
            m.accuracy,
            m.estimated_area,
            front.baseline_area / m.estimated_area,
            clusters
        );
    }
}

fn main() -> bespoke_mlp::Result<()> {
    let raw = make_blobs(3, 4, 150, 4.0, 2);
    let (train_raw, test_raw) = split(&raw, &SplitSpec::default())?;
    let train_set = normalize(&train_raw, &train_raw)?;
    let test_set = normalize(&test_raw, &train_raw)?;
    let model = train(&train_set, 3, &TrainConfig { epochs: 120, seed: 2, ..TrainConfig::default() })?;

    let lib = GateLibrary::default();
    let estimator = AreaEstimator::build(&lib, &PIPELINE_Z_SET, 100, 0, None)?;
    // Short retraining budgets keep the example quick; the command line
    // tool uses longer ones.
    let ctx = PipelineCtx::new(model, train_set, test_set, lib, estimator, 10, 5, 2)?;
    println!(
        "baseline: accuracy {:.4}, area {:.1} (8-bit dense reference design)",
        ctx.baseline_accuracy, ctx.baseline_area
    );

    let cfg = Nsga2Config {
        pop_size: 12,
        generations: 6,
        seed: 2,
        ..Nsga2Config::default()
    };
    let front = search_front(&ctx, &cfg, 4, None, None)?;
    show(&front, "front after precision/sparsity search");

    let swept = cluster_sweep(&ctx, &front)?;
    show(&swept, "front after weight-sharing sweep");
    Ok(())
}
