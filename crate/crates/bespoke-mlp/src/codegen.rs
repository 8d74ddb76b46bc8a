//! Netlist planning and Verilog emission for quantized networks.
//!
//! [`plan_netlist`] lowers a [`QuantizedMLP`] into the same circuit
//! structure the area estimator prices: one shared shift-add multiplier
//! per distinct |weight code| per input column, per-neuron positive and
//! negative operand groups joined by a single subtract, bit-select
//! QRelu, and an argmax comparator tree. [`eval_plan`] interprets that
//! plan directly (an independent check against the integer inference
//! path), [`emit_verilog`] prints it as one combinational module, and
//! [`emit_golden_vectors`] writes simulator stimulus with expected
//! class ids.

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::hwcost::csd;
use crate::quant::{quantize_inputs, QuantizedMLP};
use crate::{Error, Result};

/// One shared multiplier instance: everything needed to print or
/// evaluate `|code| * x` as a canonical signed-digit shift-add chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplierPlan {
    pub abs_code: u64,
    /// Canonical signed-digit decomposition, positions ascending.
    pub digits: Vec<(u32, i8)>,
    /// Product width: input bits + magnitude bits of the code.
    pub output_bits: u32,
}

/// Reference to a shared multiplier output within the same layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandRef {
    pub column: usize,
    pub abs_code: u64,
}

/// Bit-select activation of one hidden neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QreluPlan {
    /// Right shift aligning accumulator fraction bits to the output grid.
    pub shift: u32,
    pub out_bits: u32,
    /// Saturation ceiling (the all-ones output code).
    pub max_code: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronPlan {
    /// Multiplier outputs accumulated with positive sign.
    pub pos: Vec<OperandRef>,
    /// Multiplier outputs accumulated on the subtracted side.
    pub neg: Vec<OperandRef>,
    /// Bias constant, already on the accumulator grid.
    pub bias: i64,
    /// Magnitude bits W; the accumulator value lives in [-2^W, 2^W - 1].
    pub acc_magnitude_bits: u32,
    /// Present on hidden neurons, absent on output scores.
    pub qrelu: Option<QreluPlan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    /// Width of each code feeding this layer.
    pub input_bits: u32,
    /// `columns[j]` lists the shared multipliers on input `j`, distinct
    /// |codes| ascending. Zero codes never appear; power-of-two codes
    /// appear but print as pure shifts (wiring).
    pub columns: Vec<Vec<MultiplierPlan>>,
    pub neurons: Vec<NeuronPlan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetlistPlan {
    pub layers: Vec<LayerPlan>,
    pub n_features: usize,
    pub n_classes: usize,
    /// Bits of the winning-class output port.
    pub class_bits: u32,
}

impl NetlistPlan {
    /// Shared multiplier instances in the whole plan; equals the
    /// sharing census of the source network.
    pub fn multiplier_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.columns.iter().map(Vec::len).sum::<usize>())
            .sum()
    }

    pub fn total_input_bits(&self) -> u32 {
        self.layers[0].input_bits * self.n_features as u32
    }
}

fn ceil_log2(n: usize) -> u32 {
    (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1)
}

/// Lower a quantized network into an explicit netlist plan.
pub fn plan_netlist(q: &QuantizedMLP) -> Result<NetlistPlan> {
    q.validate()?;
    let mut layers = Vec::with_capacity(q.n_layers());
    for l in 0..q.n_layers() {
        let in_bits = q.input_bits(l);
        let in_dim = q.layers[l].in_dim();
        let columns: Vec<Vec<MultiplierPlan>> = (0..in_dim)
            .map(|j| {
                q.distinct_abs_codes(l, j)
                    .into_iter()
                    .map(|a| MultiplierPlan {
                        abs_code: a,
                        digits: csd(a),
                        output_bits: in_bits + (64 - a.leading_zeros()),
                    })
                    .collect()
            })
            .collect();
        let neurons = (0..q.layers[l].out_dim())
            .map(|n| {
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                for (j, &w) in q.layers[l].weights[n].iter().enumerate() {
                    let r = OperandRef {
                        column: j,
                        abs_code: w.unsigned_abs(),
                    };
                    if w > 0 {
                        pos.push(r);
                    } else if w < 0 {
                        neg.push(r);
                    }
                }
                let qrelu = (l == 0).then(|| QreluPlan {
                    shift: q.acc_frac_bits(0) - q.genes.activations.frac_bits(),
                    out_bits: q.genes.activations.total_bits,
                    max_code: q.genes.activations.max_code(),
                });
                NeuronPlan {
                    pos,
                    neg,
                    bias: q.aligned_bias(l, n),
                    acc_magnitude_bits: q.acc_magnitude_bits[l][n],
                    qrelu,
                }
            })
            .collect();
        layers.push(LayerPlan {
            input_bits: in_bits,
            columns,
            neurons,
        });
    }
    let n_classes = q.layers[1].out_dim();
    Ok(NetlistPlan {
        layers,
        n_features: q.layers[0].in_dim(),
        n_classes,
        class_bits: ceil_log2(n_classes),
    })
}

/// Interpret the plan on one row of input codes.
///
/// This walks the plan's own structure (shift-add digit chains, group
/// sums, one subtract, bit-select QRelu, comparator-tree argmax) rather
/// than delegating to the quantized-inference path, and must agree with
/// it everywhere, including the overflow sentinel.
pub fn eval_plan(plan: &NetlistPlan, row: &[i64]) -> Result<usize> {
    if row.len() != plan.n_features {
        return Err(Error::InvalidInput(format!(
            "row has {} codes, plan expects {}",
            row.len(),
            plan.n_features
        )));
    }
    let in_max = (1i64 << plan.layers[0].input_bits) - 1;
    if let Some(&x) = row.iter().find(|&&x| x < 0 || x > in_max) {
        return Err(Error::InvalidInput(format!(
            "input code {x} outside [0, {in_max}]"
        )));
    }
    let mut values: Vec<i64> = row.to_vec();
    for (li, layer) in plan.layers.iter().enumerate() {
        let mut products: Vec<Vec<(u64, i64)>> = Vec::with_capacity(layer.columns.len());
        for (j, col) in layer.columns.iter().enumerate() {
            let x = values[j];
            products.push(
                col.iter()
                    .map(|m| {
                        let p = m
                            .digits
                            .iter()
                            .map(|&(pos, s)| s as i64 * (x << pos))
                            .sum::<i64>();
                        (m.abs_code, p)
                    })
                    .collect(),
            );
        }
        let fetch = |r: &OperandRef| -> i64 {
            products[r.column]
                .iter()
                .find(|&&(a, _)| a == r.abs_code)
                .map(|&(_, p)| p)
                .expect("operand references an instantiated multiplier")
        };
        let mut out = Vec::with_capacity(layer.neurons.len());
        for (n, neuron) in layer.neurons.iter().enumerate() {
            let pos: i64 = neuron.pos.iter().map(&fetch).sum();
            let neg: i64 = neuron.neg.iter().map(&fetch).sum();
            let acc = pos - neg + neuron.bias;
            let w = neuron.acc_magnitude_bits;
            if acc < -(1i64 << w) || acc > (1i64 << w) - 1 {
                return Err(Error::Overflow {
                    layer: li,
                    neuron: n,
                    value: acc,
                    magnitude_bits: w,
                });
            }
            out.push(match neuron.qrelu {
                Some(qr) => {
                    if acc < 0 {
                        0
                    } else {
                        (acc >> qr.shift).min(qr.max_code)
                    }
                }
                None => acc,
            });
        }
        values = out;
    }
    // Comparator tree, lowest index wins ties.
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Two's-complement encoding of `v` in `bits` bits, for literals.
fn encode_literal(v: i64, bits: u32) -> u64 {
    (v as u64) & if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 }
}

const VERILOG_KEYWORDS: [&str; 10] = [
    "module", "endmodule", "input", "output", "wire", "assign", "signed", "begin", "end", "reg",
];

fn sanitize_module_name(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() || !(s.starts_with('_') || s.chars().next().unwrap().is_ascii_alphabetic()) {
        s.insert(0, 'm');
    }
    if VERILOG_KEYWORDS.contains(&s.as_str()) {
        s.push_str("_m");
    }
    s
}

/// Print the plan as one combinational Verilog-2001 module.
///
/// The input port packs all feature codes, feature 0 in the least
/// significant bits; the output is the winning class index with ties to
/// the lowest index. Text is fully determined by the plan and name, so
/// repeated emission is byte-identical.
pub fn emit_verilog(plan: &NetlistPlan, module_name: &str) -> String {
    use std::fmt::Write;
    let name = sanitize_module_name(module_name);
    let total = plan.total_input_bits();
    let in_bits = plan.layers[0].input_bits;
    let cb = plan.class_bits;
    let mut v = String::new();
    let _ = writeln!(v, "// {name}: bespoke combinational MLP classifier.");
    let _ = writeln!(
        v,
        "// in_bus packs {} unsigned {}-bit feature codes, feature 0 in the"
        , plan.n_features, in_bits
    );
    let _ = writeln!(v, "// least significant bits. class_id is the argmax of the output");
    let _ = writeln!(v, "// scores; ties resolve to the lowest class index.");
    let _ = writeln!(v, "// Accumulators use profiled two's-complement widths; inputs far");
    let _ = writeln!(v, "// outside the profiled envelope may wrap (golden vectors avoid them).");
    let _ = writeln!(v, "module {name} (");
    let _ = writeln!(v, "    input  wire [{}:0] in_bus,", total - 1);
    let _ = writeln!(v, "    output wire [{}:0] class_id", cb - 1);
    let _ = writeln!(v, ");");

    // Which layer-0 features and hidden activations have fan-out.
    let used_feature: Vec<bool> = (0..plan.n_features)
        .map(|j| !plan.layers[0].columns[j].is_empty())
        .collect();
    let used_act: Vec<bool> = (0..plan.layers[1].columns.len())
        .map(|j| !plan.layers[1].columns[j].is_empty())
        .collect();

    let _ = writeln!(v, "\n  // feature taps");
    for j in 0..plan.n_features {
        if used_feature[j] {
            let lo = j as u32 * in_bits;
            let _ = writeln!(
                v,
                "  wire [{}:0] x{j} = in_bus[{}:{}];",
                in_bits - 1,
                lo + in_bits - 1,
                lo
            );
        }
    }

    for (li, layer) in plan.layers.iter().enumerate() {
        let input_name = |j: usize| -> String {
            if li == 0 {
                format!("x{j}")
            } else {
                format!("l0_a{j}")
            }
        };
        let _ = writeln!(v, "\n  // layer {li}: shared multipliers (one per distinct |code| per column)");
        for (j, col) in layer.columns.iter().enumerate() {
            for m in col {
                let x = input_name(j);
                let mut expr = String::new();
                for (k, &(pos, s)) in m.digits.iter().rev().enumerate() {
                    let term = if pos == 0 {
                        x.clone()
                    } else {
                        format!("({x} << {pos})")
                    };
                    if k == 0 {
                        expr.push_str(&term);
                    } else if s > 0 {
                        let _ = write!(expr, " + {term}");
                    } else {
                        let _ = write!(expr, " - {term}");
                    }
                }
                let _ = writeln!(
                    v,
                    "  wire [{}:0] l{li}_c{j}_m{} = {expr};",
                    m.output_bits - 1,
                    m.abs_code
                );
            }
        }
        let _ = writeln!(v, "\n  // layer {li}: accumulators (positive group - negative group)");
        for (n, neuron) in layer.neurons.iter().enumerate() {
            let w = neuron.acc_magnitude_bits; // wires are W+1 bits
            let mut pos_terms: Vec<String> = neuron
                .pos
                .iter()
                .map(|r| format!("l{li}_c{}_m{}", r.column, r.abs_code))
                .collect();
            let mut neg_terms: Vec<String> = neuron
                .neg
                .iter()
                .map(|r| format!("l{li}_c{}_m{}", r.column, r.abs_code))
                .collect();
            if neuron.bias >= 0 {
                pos_terms.push(format!("{}'d{}", w + 1, encode_literal(neuron.bias, w + 1)));
            } else {
                neg_terms.push(format!("{}'d{}", w + 1, encode_literal(-neuron.bias, w + 1)));
            }
            let join = |terms: &[String], width: u32| -> String {
                if terms.is_empty() {
                    format!("{width}'d0")
                } else {
                    terms.join(" + ")
                }
            };
            let _ = writeln!(v, "  wire [{w}:0] l{li}_n{n}_pos = {};", join(&pos_terms, w + 1));
            let _ = writeln!(v, "  wire [{w}:0] l{li}_n{n}_neg = {};", join(&neg_terms, w + 1));
            let _ = writeln!(
                v,
                "  wire [{w}:0] l{li}_n{n}_acc = l{li}_n{n}_pos - l{li}_n{n}_neg;"
            );
            if let Some(qr) = neuron.qrelu {
                // Negative -> 0; else drop `shift` fraction bits and
                // saturate to the all-ones output code.
                let tw = (w + 1).max(qr.out_bits + 1);
                let _ = writeln!(
                    v,
                    "  wire [{}:0] l{li}_n{n}_t = l{li}_n{n}_acc >> {};",
                    tw - 1,
                    qr.shift
                );
                let _ = writeln!(
                    v,
                    "  wire l{li}_n{n}_sat = |l{li}_n{n}_t[{}:{}];",
                    tw - 1,
                    qr.out_bits
                );
                let dead = if used_act[n] { "" } else { " // unused: all fan-out weights pruned" };
                let _ = writeln!(
                    v,
                    "  wire [{}:0] l{li}_a{n} = l{li}_n{n}_acc[{w}] ? {}'d0 : (l{li}_n{n}_sat ? {}'d{} : l{li}_n{n}_t[{}:0]);{dead}",
                    qr.out_bits - 1,
                    qr.out_bits,
                    qr.out_bits,
                    qr.max_code,
                    qr.out_bits - 1
                );
            }
        }
    }

    // Argmax over signed scores, comparator tree, left (lower index)
    // wins ties. Excluded from area estimates by design.
    let out_layer = plan.layers.last().expect("two layers");
    let cw = out_layer
        .neurons
        .iter()
        .map(|n| n.acc_magnitude_bits + 1)
        .max()
        .unwrap_or(2);
    let _ = writeln!(v, "\n  // argmax comparator tree");
    for k in 0..plan.n_classes {
        let _ = writeln!(
            v,
            "  wire signed [{}:0] s{k} = $signed(l1_n{k}_acc);",
            cw - 1
        );
    }
    let mut level = 0usize;
    let mut nodes: Vec<(String, String)> = (0..plan.n_classes)
        .map(|k| (format!("s{k}"), format!("{cb}'d{k}")))
        .collect();
    while nodes.len() > 1 {
        let mut next = Vec::with_capacity(nodes.len().div_ceil(2));
        for (i, pair) in nodes.chunks(2).enumerate() {
            if pair.len() == 1 {
                next.push(pair[0].clone());
                continue;
            }
            let (av, ai) = &pair[0];
            let (bv, bi) = &pair[1];
            let _ = writeln!(v, "  wire am_c_{level}_{i} = ({av} >= {bv});");
            let _ = writeln!(
                v,
                "  wire signed [{}:0] am_v_{level}_{i} = am_c_{level}_{i} ? {av} : {bv};",
                cw - 1
            );
            let _ = writeln!(
                v,
                "  wire [{}:0] am_i_{level}_{i} = am_c_{level}_{i} ? {ai} : {bi};",
                cb - 1
            );
            next.push((format!("am_v_{level}_{i}"), format!("am_i_{level}_{i}")));
        }
        nodes = next;
        level += 1;
    }
    // The root value wire has no reader; mark it for the lint rule.
    if plan.n_classes > 1 {
        let last = v.rfind("  wire signed").expect("root value wire");
        let line_end = v[last..].find('\n').expect("newline") + last;
        v.insert_str(line_end, " // unused: argmax root keeps only the index");
    }
    let _ = writeln!(v, "\n  assign class_id = {};", nodes[0].1);
    let _ = writeln!(v, "\nendmodule");
    v
}

/// Hex encoding of one input row on the module's input bus (feature 0
/// in the least significant bits).
pub fn encode_input_hex(row: &[i64], bits_per_feature: u32) -> Result<String> {
    let total = row.len() as u32 * bits_per_feature;
    if total == 0 || total > 128 {
        return Err(Error::InvalidInput(format!(
            "input bus of {total} bits not supported by the hex encoding"
        )));
    }
    let mut bus: u128 = 0;
    for (j, &x) in row.iter().enumerate() {
        if x < 0 || x >= (1i64 << bits_per_feature) {
            return Err(Error::InvalidInput(format!(
                "code {x} does not fit {bits_per_feature} bits"
            )));
        }
        bus |= (x as u128) << (j as u32 * bits_per_feature);
    }
    let digits = total.div_ceil(4) as usize;
    Ok(format!("{bus:0width$x}", width = digits))
}

/// Parse a golden-vector file back into (input codes, expected class).
pub fn parse_golden_vectors(
    text: &str,
    n_features: usize,
    bits_per_feature: u32,
) -> Result<Vec<(Vec<i64>, usize)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (hex, class) = line.split_once(' ').ok_or_else(|| Error::Parse {
            row: ln + 1,
            column: 0,
            message: "expected '<hex> <class>'".into(),
        })?;
        let bus = u128::from_str_radix(hex, 16).map_err(|e| Error::Parse {
            row: ln + 1,
            column: 0,
            message: format!("bad hex '{hex}': {e}"),
        })?;
        let class: usize = class.trim().parse().map_err(|e| Error::Parse {
            row: ln + 1,
            column: 0,
            message: format!("bad class id: {e}"),
        })?;
        let mask = (1u128 << bits_per_feature) - 1;
        let row = (0..n_features)
            .map(|j| ((bus >> (j as u32 * bits_per_feature)) & mask) as i64)
            .collect();
        out.push((row, class));
    }
    Ok(out)
}

/// Write golden test vectors: the first `n` dataset rows quantized onto
/// the input grid, with expected classes from the integer inference
/// path. Rows outside the profiled accumulator envelope are skipped
/// with a comment so a testbench never checks wrapped arithmetic.
pub fn emit_golden_vectors(q: &QuantizedMLP, rows: &Dataset, n: usize) -> Result<String> {
    use std::fmt::Write;
    q.validate()?;
    if n > rows.n_rows() {
        return Err(Error::InvalidInput(format!(
            "asked for {n} vectors from {} rows",
            rows.n_rows()
        )));
    }
    let bits = q.genes.inputs.total_bits;
    let n_feat = q.layers[0].in_dim();
    let mut text = String::new();
    let _ = writeln!(text, "# golden vectors: <hex input bus> <expected class id>");
    let _ = writeln!(
        text,
        "# input bus: {n_feat} features x {bits} bits, feature 0 in the least significant bits"
    );
    let _ = writeln!(text, "# classes: {}", q.layers[1].out_dim());
    let codes = quantize_inputs(rows, &q.genes.inputs);
    for (i, row) in codes.iter().take(n).enumerate() {
        match crate::quant::fixed_point_inference(q, row) {
            Ok((class, _)) => {
                let _ = writeln!(text, "{} {class}", encode_input_hex(row, bits)?);
            }
            Err(Error::Overflow { .. }) => {
                let _ = writeln!(text, "# row {i} skipped: accumulator overflow");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::sharing_census;
    use crate::fixtures::{make_blobs, random_net, reference_net};
    use crate::quant::fixed_point_inference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn shared_column_uses_one_multiplier_both_signs() {
        // Reference net layer 0 column 0 has codes +3 and -3.
        let q = reference_net();
        let plan = plan_netlist(&q).unwrap();
        assert_eq!(plan.layers[0].columns[0].len(), 1);
        assert_eq!(plan.layers[0].columns[0][0].abs_code, 3);
        let n0 = &plan.layers[0].neurons[0];
        let n1 = &plan.layers[0].neurons[1];
        assert!(n0.pos.contains(&OperandRef { column: 0, abs_code: 3 }));
        assert!(n1.neg.contains(&OperandRef { column: 0, abs_code: 3 }));
    }

    #[test]
    fn all_zero_neuron_reduces_to_bias() {
        let mut q = reference_net();
        for j in 0..q.layers[1].in_dim() {
            q.layers[1].weights[0][j] = 0;
            q.mask.layers[1][0][j] = false;
        }
        let plan = plan_netlist(&q).unwrap();
        let n = &plan.layers[1].neurons[0];
        assert!(n.pos.is_empty() && n.neg.is_empty());
        assert_eq!(n.bias, q.aligned_bias(1, 0));
        // The interpreter then scores that class with the bare bias.
        let row = vec![0, 0];
        let (_, accs) = fixed_point_inference(&q, &row).unwrap();
        assert_eq!(accs[1][0], n.bias);
        assert_eq!(eval_plan(&plan, &row).unwrap(), {
            let (c, _) = fixed_point_inference(&q, &row).unwrap();
            c
        });
    }

    #[test]
    fn plan_multiplier_count_matches_census() {
        for seed in 0..20 {
            let q = random_net(seed).unwrap();
            let plan = plan_netlist(&q).unwrap();
            assert_eq!(plan.multiplier_count(), sharing_census(&q).total);
        }
    }

    /// Exhaustive plan/inference agreement when the input space is small
    /// enough, seeded random probing otherwise.
    fn assert_equivalent(q: &QuantizedMLP, seed: u64) {
        let plan = plan_netlist(q).unwrap();
        let bits = plan.total_input_bits();
        let n = plan.n_features;
        let per = plan.layers[0].input_bits;
        let rows: Vec<Vec<i64>> = if bits <= 12 {
            (0..1u64 << bits)
                .map(|bus| {
                    (0..n)
                        .map(|j| ((bus >> (j as u32 * per)) & ((1 << per) - 1)) as i64)
                        .collect()
                })
                .collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000)
                .map(|_| (0..n).map(|_| rng.gen_range(0..1i64 << per)).collect())
                .collect()
        };
        for row in rows {
            let plan_out = eval_plan(&plan, &row);
            let inf_out = fixed_point_inference(q, &row);
            match (plan_out, inf_out) {
                (Ok(a), Ok((b, _))) => assert_eq!(a, b, "class mismatch on {row:?}"),
                (
                    Err(Error::Overflow { layer: la, neuron: na, value: va, .. }),
                    Err(Error::Overflow { layer: lb, neuron: nb, value: vb, .. }),
                ) => assert_eq!((la, na, va), (lb, nb, vb), "overflow mismatch on {row:?}"),
                (a, b) => panic!("disagreement on {row:?}: plan {a:?} vs inference {b:?}"),
            }
        }
    }

    #[test]
    fn interpreter_matches_inference_exhaustively_on_reference() {
        // 2 features x 3 bits: 64 vectors, swept completely.
        assert_equivalent(&reference_net(), 0);
    }

    #[test]
    fn interpreter_matches_inference_on_random_nets() {
        for seed in 0..8 {
            assert_equivalent(&random_net(seed).unwrap(), seed ^ 0x5eed);
        }
    }

    #[test]
    fn emission_is_byte_identical() {
        let q = random_net(3).unwrap();
        let plan = plan_netlist(&q).unwrap();
        assert_eq!(emit_verilog(&plan, "net"), emit_verilog(&plan, "net"));
    }

    #[test]
    fn module_names_are_sanitized() {
        assert_eq!(sanitize_module_name("my-net.v2"), "my_net_v2");
        assert_eq!(sanitize_module_name("2fast"), "m2fast");
        assert_eq!(sanitize_module_name("module"), "module_m");
        assert_eq!(sanitize_module_name(""), "m");
    }

    #[test]
    fn zero_weight_net_emits_constant_module() {
        let mut q = reference_net();
        for l in 0..2 {
            for r in 0..q.layers[l].out_dim() {
                for c in 0..q.layers[l].in_dim() {
                    q.layers[l].weights[r][c] = 0;
                    q.mask.layers[l][r][c] = false;
                }
            }
        }
        let plan = plan_netlist(&q).unwrap();
        assert_eq!(plan.multiplier_count(), 0);
        let text = emit_verilog(&plan, "constant_net");
        assert!(!text.contains("_m3"), "no multiplier wires expected");
        verilog_smoke_lint(&text);
        // Every input maps to the bias-determined class.
        let fixed = eval_plan(&plan, &[0, 0]).unwrap();
        assert_eq!(eval_plan(&plan, &[7, 5]).unwrap(), fixed);
    }

    /// Grammar smoke-check: balanced module/endmodule, every declared
    /// net referenced again (unless marked unused), every used
    /// identifier declared.
    fn verilog_smoke_lint(text: &str) {
        assert_eq!(text.matches("\nmodule ").count() + usize::from(text.starts_with("module ")), 1);
        assert_eq!(text.matches("endmodule").count(), 1);
        let mut declared: BTreeSet<String> = BTreeSet::new();
        let mut exempt: BTreeSet<String> = BTreeSet::new();
        for line in text.lines() {
            let t = line.trim();
            for prefix in ["wire ", "input  wire ", "output wire "] {
                if let Some(rest) = t.strip_prefix(prefix) {
                    let rest = rest.trim_start();
                    let rest = rest
                        .strip_prefix("signed ")
                        .unwrap_or(rest)
                        .trim_start();
                    let rest = if rest.starts_with('[') {
                        &rest[rest.find(']').expect("close bracket") + 1..]
                    } else {
                        rest
                    };
                    let name: String = rest
                        .trim_start()
                        .chars()
                        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                        .collect();
                    assert!(!name.is_empty(), "unparsable declaration: {line}");
                    assert!(declared.insert(name.clone()), "duplicate net {name}");
                    if t.contains("// unused") {
                        exempt.insert(name);
                    }
                }
            }
        }
        // Strip literals, comments and the module header before counting.
        let mut body = String::new();
        for line in text.lines() {
            if line.starts_with("//") || line.trim_start().starts_with("module ") {
                continue;
            }
            let line = line.split("//").next().unwrap();
            body.push_str(line);
            body.push('\n');
        }
        let stripped = regex_lite_strip_literals(&body);
        let keywords: BTreeSet<&str> = super::VERILOG_KEYWORDS.into_iter().collect();
        let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
        let bytes = stripped.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_alphabetic() || c == '_' {
                let mut token = (i, i + 1);
                while token.1 < bytes.len()
                    && ((bytes[token.1] as char).is_ascii_alphanumeric()
                        || bytes[token.1] == b'_')
                {
                    token.1 += 1;
                }
                let word = &stripped[token.0..token.1];
                if !keywords.contains(word) && word != "$signed" {
                    *counts.entry(word).or_default() += 1;
                    assert!(
                        declared.contains(word),
                        "identifier {word} used but never declared"
                    );
                }
                i = token.1;
            } else {
                i += 1;
            }
        }
        for name in &declared {
            if exempt.contains(name) || name == "class_id" || name == "in_bus" {
                continue;
            }
            assert!(
                counts.get(name.as_str()).copied().unwrap_or(0) >= 2,
                "net {name} declared but never used"
            );
        }
    }

    /// Remove sized literals like 8'd16 so their base letter does not
    /// look like an identifier. Digits inside identifiers stay.
    fn regex_lite_strip_literals(s: &str) -> String {
        let mut out = String::with_capacity(s.len());
        let b = s.as_bytes();
        let mut i = 0;
        while i < b.len() {
            let prev_ident = i > 0 && ((b[i - 1] as char).is_ascii_alphanumeric() || b[i - 1] == b'_');
            if b[i].is_ascii_digit() && !prev_ident {
                let mut j = i;
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                if j < b.len() && b[j] == b'\'' {
                    j += 2; // skip base letter
                    while j < b.len() && (b[j] as char).is_ascii_alphanumeric() {
                        j += 1;
                    }
                }
                i = j;
                out.push(' ');
            } else {
                out.push(b[i] as char);
                i += 1;
            }
        }
        out
    }

    #[test]
    fn emitted_text_passes_smoke_lint() {
        verilog_smoke_lint(&emit_verilog(&plan_netlist(&reference_net()).unwrap(), "ref_net"));
        for seed in [1, 4, 9] {
            let q = random_net(seed).unwrap();
            verilog_smoke_lint(&emit_verilog(&plan_netlist(&q).unwrap(), "rnd"));
        }
    }

    #[test]
    fn multiplier_wires_in_text_match_census() {
        let q = random_net(6).unwrap();
        let plan = plan_netlist(&q).unwrap();
        let text = emit_verilog(&plan, "counted");
        // Declared names of the form l<layer>_c<col>_m<code>.
        let wires = text
            .lines()
            .filter_map(|l| {
                let t = l.trim_start().strip_prefix("wire ")?;
                let name = t[t.find(']')? + 1..]
                    .trim_start()
                    .split(' ')
                    .next()?
                    .to_string();
                let mut parts = name.split('_');
                (parts.next()?.starts_with('l')
                    && parts.next()?.starts_with('c')
                    && parts.next()?.starts_with('m'))
                .then_some(())
            })
            .count();
        assert_eq!(wires, sharing_census(&q).total);
    }

    #[test]
    fn hex_round_trip_hand_case() {
        // x0=3, x1=10 on 4-bit features: bus = 0xa3.
        assert_eq!(encode_input_hex(&[3, 10], 4).unwrap(), "a3");
        let parsed = parse_golden_vectors("a3 1\n", 2, 4).unwrap();
        assert_eq!(parsed, vec![(vec![3, 10], 1)]);
        // 6-bit bus pads to two hex digits.
        assert_eq!(encode_input_hex(&[7, 1], 3).unwrap(), "0f");
    }

    #[test]
    fn golden_vectors_round_trip_through_interpreter() {
        let q = reference_net();
        let rows = make_blobs(2, 2, 40, 4.0, 5);
        let rows = crate::dataio::normalize(&rows, &rows).unwrap();
        let text = emit_golden_vectors(&q, &rows, 40).unwrap();
        let plan = plan_netlist(&q).unwrap();
        let vectors = parse_golden_vectors(&text, 2, q.genes.inputs.total_bits).unwrap();
        assert!(!vectors.is_empty());
        for (row, class) in &vectors {
            assert!(*class < 2);
            assert_eq!(eval_plan(&plan, row).unwrap(), *class);
        }
    }

    #[test]
    fn zero_vector_request_yields_header_only() {
        let q = reference_net();
        let rows = make_blobs(2, 2, 10, 4.0, 5);
        let rows = crate::dataio::normalize(&rows, &rows).unwrap();
        let text = emit_golden_vectors(&q, &rows, 0).unwrap();
        assert!(text.lines().all(|l| l.starts_with('#')));
        assert!(text.lines().count() >= 2);
        assert!(emit_golden_vectors(&q, &rows, 11).is_err());
    }
}
