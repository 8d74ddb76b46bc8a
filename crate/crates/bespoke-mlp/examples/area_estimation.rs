//! Build the gate-level area estimator from a gate library, inspect its
//! learned accumulator cost model, and price a few networks against the
//! exact oracle.

use bespoke_mlp::fixtures::{random_net, reference_net};
use bespoke_mlp::hwcost::{
    critical_path_delay, min_voltage, oracle_area, AreaEstimator, GateLibrary, PIPELINE_Z_SET,
};

fn main() -> bespoke_mlp::Result<()> {
    let lib = GateLibrary::default();
    println!(
        "gate library: FA {} area units / {:.0} us, HA {} / {:.0} us, XOR2 {} / {:.0} us",
        lib.area.fa,
        lib.delay_s.fa * 1e6,
        lib.area.ha,
        lib.delay_s.ha * 1e6,
        lib.area.xor2,
        lib.delay_s.xor2 * 1e6,
    );

    let estimator = AreaEstimator::build(&lib, &PIPELINE_Z_SET, 200, 0, None)?;
    println!("\naccumulator regressions (features: summand count, total bits, max bits):");
    for (z, reg) in &estimator.regressors {
        println!(
            "  z={z}: area = {:.1} + {:.2}*count + {:.2}*total + {:.2}*max   (R^2 {:.3} on {} samples)",
            reg.intercept, reg.coef[0], reg.coef[1], reg.coef[2], reg.r_squared, reg.n_samples
        );
    }

    let q = reference_net();
    let est = estimator.estimate(&q, &lib)?;
    let oracle = oracle_area(&q, &lib)?;
    println!("\nreference net:");
    println!(
        "  estimate {:.1} (multipliers {:.1}, accumulators {:.1}, rectifiers {:.1})",
        est.total, est.multipliers, est.accumulator, est.qrelu
    );
    println!(
        "  oracle   {:.1} (multipliers {:.1}, accumulators {:.1}, rectifiers {:.1})",
        oracle.total, oracle.multipliers, oracle.accumulator, oracle.qrelu
    );

    println!("\nrandom nets, estimate vs oracle:");
    let mut worst_rel = 0.0f64;
    for seed in 0..8 {
        let net = random_net(seed)?;
        let est = estimator.estimate(&net, &lib)?.total;
        let exact = oracle_area(&net, &lib)?.total;
        let rel = (est - exact).abs() / exact.max(1.0);
        worst_rel = worst_rel.max(rel);
        println!("  seed {seed}: estimate {est:>8.1}  oracle {exact:>8.1}  rel err {rel:.3}");
    }
    println!("worst relative error over 8 nets: {worst_rel:.3}");

    // Delay scales with supply voltage; the emitter picks the lowest
    // voltage that still meets the latency budget.
    println!("\ncritical path of the reference net across supply voltages:");
    for v in [1.0, 0.8, 0.6] {
        let delay = critical_path_delay(&q, &lib, v)?;
        println!("  {v:.2} V -> {:.2} ms", delay * 1e3);
    }
    let budget = 0.2;
    println!(
        "lowest voltage meeting a {:.0} ms budget: {:.2} V",
        budget * 1e3,
        min_voltage(&q, &lib, budget)?
    );
    Ok(())
}
