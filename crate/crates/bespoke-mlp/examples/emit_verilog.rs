//! Turn the hand-built reference network into a combinational Verilog
//! module plus golden test vectors, and double-check the netlist plan
//! against the integer interpreter on every possible input.

use bespoke_mlp::codegen::{emit_golden_vectors, emit_verilog, eval_plan, plan_netlist};
use bespoke_mlp::dataio::Dataset;
use bespoke_mlp::fixtures::reference_net;
use bespoke_mlp::quant::fixed_point_inference;

fn main() -> bespoke_mlp::Result<()> {
    let q = reference_net();
    let plan = plan_netlist(&q)?;
    println!(
        "netlist plan: {} multipliers, {} input bits, {} output bits",
        plan.multiplier_count(),
        plan.total_input_bits(),
        plan.class_bits
    );

    // Cross-check plan vs interpreter over the full 6-bit input space.
    let bits = q.genes.inputs.total_bits;
    let max = q.genes.inputs.max_code();
    let mut agree = 0usize;
    for a in 0..=max {
        for b in 0..=max {
            let row = vec![a, b];
            let plan_out = eval_plan(&plan, &row);
            let interp_out = fixed_point_inference(&q, &row).map(|(c, _)| c);
            match (plan_out, interp_out) {
                (Ok(x), Ok(y)) if x == y => agree += 1,
                (Err(_), Err(_)) => agree += 1,
                (p, i) => panic!("disagreement on {row:?}: plan {p:?}, interpreter {i:?}"),
            }
        }
    }
    println!(
        "plan and interpreter agree on all {agree} vectors ({bits}-bit features, exhaustive)"
    );

    let verilog = emit_verilog(&plan, "reference_net");
    println!("\n--- reference_net.v ---");
    print!("{verilog}");

    // Golden vectors for a handful of in-range sample points. Input codes
    // are unsigned Q1.2, so feature values live in [0, 1.75].
    let rows = Dataset::new(
        vec![
            vec![0.25, 0.75],
            vec![1.0, 1.0],
            vec![1.75, 0.0],
            vec![0.5, 1.5],
        ],
        vec![0, 0, 0, 0],
        vec!["x0".into(), "x1".into()],
        2,
    )?;
    let vectors = emit_golden_vectors(&q, &rows, 4)?;
    println!("--- reference_net_vectors.txt ---");
    print!("{vectors}");
    Ok(())
}
