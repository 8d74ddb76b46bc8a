//! The whole flow end to end, as the command line tool runs it but in
//! miniature: train, search the accuracy/area front, pick a design inside
//! a loss budget, choose the supply voltage for a latency target, and
//! emit Verilog plus golden vectors.

use bespoke_mlp::codegen::{emit_golden_vectors, emit_verilog, plan_netlist};
use bespoke_mlp::dataio::{normalize, split, SplitSpec};
use bespoke_mlp::fixtures::make_blobs;
use bespoke_mlp::hwcost::{min_voltage, AreaEstimator, GateLibrary, PIPELINE_Z_SET};
use bespoke_mlp::model::{train, TrainConfig};
use bespoke_mlp::optsearch::{cluster_sweep, materialize, search_front, Nsga2Config, PipelineCtx};

fn main() -> bespoke_mlp::Result<()> {
    let raw = make_blobs(3, 4, 150, 4.0, 9);
    let (train_raw, test_raw) = split(&raw, &SplitSpec::default())?;
    let train_set = normalize(&train_raw, &train_raw)?;
    let test_set = normalize(&test_raw, &train_raw)?;
    let model = train(&train_set, 3, &TrainConfig { epochs: 120, seed: 9, ..TrainConfig::default() })?;

    let lib = GateLibrary::default();
    let estimator = AreaEstimator::build(&lib, &PIPELINE_Z_SET, 100, 0, None)?;
    let ctx = PipelineCtx::new(model, train_set, test_set, lib, estimator, 10, 5, 9)?;
    println!(
        "baseline: accuracy {:.4}, area {:.1}",
        ctx.baseline_accuracy, ctx.baseline_area
    );

    let cfg = Nsga2Config { pop_size: 12, generations: 5, seed: 9, ..Nsga2Config::default() };
    let front = cluster_sweep(&ctx, &search_front(&ctx, &cfg, 4, None, None)?)?;
    println!("front holds {} designs", front.members.len());

    // Cheapest design losing at most 2 accuracy points.
    let max_loss = 0.02;
    let pick = front
        .members
        .iter()
        .filter(|m| m.accuracy_loss <= max_loss)
        .min_by(|a, b| a.estimated_area.total_cmp(&b.estimated_area))
        .expect("front always contains a near-baseline design");
    println!(
        "picked: loss {:.4}, area {:.1} ({:.2}x smaller than baseline), clusters {:?}",
        pick.accuracy_loss,
        pick.estimated_area,
        front.baseline_area / pick.estimated_area,
        pick.cluster_k
    );

    let q = materialize(&ctx, pick)?;
    let delay_budget_s = 0.2;
    let volts = min_voltage(&q, &ctx.lib, delay_budget_s)?;
    println!("supply voltage for a {:.0} ms budget: {volts:.2} V", delay_budget_s * 1e3);

    let plan = plan_netlist(&q)?;
    let verilog = emit_verilog(&plan, "blob_classifier");
    let vectors = emit_golden_vectors(&q, &ctx.test, 8)?;
    println!(
        "\nemitted module 'blob_classifier': {} multipliers, {} lines of Verilog",
        plan.multiplier_count(),
        verilog.lines().count()
    );
    println!("first golden vectors:");
    for line in vectors.lines().take(6) {
        println!("  {line}");
    }
    Ok(())
}
