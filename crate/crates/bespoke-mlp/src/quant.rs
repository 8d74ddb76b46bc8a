//! Fixed-point formats, rounding, the saturating QRelu activation,
//! whole-model quantization, quantization-aware retraining and a bit-exact
//! integer inference interpreter.
//!
//! Format conventions (these drive every width computation downstream):
//! a signed format `Q<I>.<F>` spans `[-2^I, 2^I - 2^-F]` in steps of
//! `2^-F` using `P = I + F + 1` bits (two's complement); an unsigned
//! `UQ<I>.<F>` spans `[0, 2^I - 2^-F]` using `P = I + F` bits. Codes are
//! plain integers: `value = code * 2^-F`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compress::{ClusterAssignment, PruneMask};
use crate::dataio::Dataset;
use crate::model::{softmax, MLPModel, TrainConfig};
use crate::seeds::derive_seed;
use crate::{Error, Result};

/// Hard cap on any single format width; bespoke datapaths beyond this are
/// outside the design space.
pub const MAX_TOTAL_BITS: u32 = 8;

/// A fixed-point number format; see the module docs for the conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub total_bits: u32,
    pub integer_bits: u32,
    pub signed: bool,
}

impl FixedPointFormat {
    pub fn new_signed(total_bits: u32, integer_bits: u32) -> Result<Self> {
        let f = FixedPointFormat {
            total_bits,
            integer_bits,
            signed: true,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn new_unsigned(total_bits: u32, integer_bits: u32) -> Result<Self> {
        let f = FixedPointFormat {
            total_bits,
            integer_bits,
            signed: false,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let sign_bit = self.signed as u32;
        if self.total_bits == 0 || self.total_bits > MAX_TOTAL_BITS {
            return Err(Error::InvalidFormat(format!(
                "total bits must be in [1, {MAX_TOTAL_BITS}], got {}",
                self.total_bits
            )));
        }
        if self.integer_bits + sign_bit > self.total_bits {
            return Err(Error::InvalidFormat(format!(
                "{self} leaves no room for fraction bits"
            )));
        }
        Ok(())
    }

    pub fn frac_bits(&self) -> u32 {
        self.total_bits - self.integer_bits - self.signed as u32
    }

    /// Quantization step 2^-F.
    pub fn step(&self) -> f64 {
        (self.frac_bits() as f64).exp2().recip()
    }

    pub fn max_code(&self) -> i64 {
        if self.signed {
            (1i64 << (self.total_bits - 1)) - 1
        } else {
            (1i64 << self.total_bits) - 1
        }
    }

    pub fn min_code(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn max_value(&self) -> f64 {
        self.code_to_value(self.max_code())
    }

    pub fn min_value(&self) -> f64 {
        self.code_to_value(self.min_code())
    }

    pub fn code_to_value(&self, code: i64) -> f64 {
        code as f64 * self.step()
    }

    pub fn contains_code(&self, code: i64) -> bool {
        (self.min_code()..=self.max_code()).contains(&code)
    }

    /// Smallest-integer-bits signed format of `total_bits` that covers
    /// `[-abs_max, abs_max]`, or the widest-range one if nothing does
    /// (quantization then saturates).
    pub fn signed_covering(total_bits: u32, abs_max: f64) -> Result<Self> {
        for integer_bits in 0..total_bits {
            let f = FixedPointFormat::new_signed(total_bits, integer_bits)?;
            if abs_max <= f.max_value() {
                return Ok(f);
            }
        }
        FixedPointFormat::new_signed(total_bits, total_bits - 1)
    }

    /// Unsigned analog of [`FixedPointFormat::signed_covering`].
    pub fn unsigned_covering(total_bits: u32, max: f64) -> Result<Self> {
        for integer_bits in 0..=total_bits {
            let f = FixedPointFormat::new_unsigned(total_bits, integer_bits)?;
            if max <= f.max_value() {
                return Ok(f);
            }
        }
        FixedPointFormat::new_unsigned(total_bits, total_bits)
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}Q{}.{}",
            if self.signed { "" } else { "U" },
            self.integer_bits,
            self.frac_bits()
        )
    }
}

/// Rounding behavior of [`quantize_value`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundMode {
    /// Floor plus a Bernoulli(fractional remainder) increment; unbiased in
    /// expectation. Used for weights and biases.
    Stochastic,
    /// Round to nearest, ties away from zero. Used for shared centroids.
    Nearest,
    /// Floor toward negative infinity; what a hardware wire slice does.
    /// Used for activations and inputs (always nonnegative here).
    Truncate,
}

/// Quantize a real number, saturating to the format range.
/// Returns (integer code, dequantized value).
pub fn quantize_value(
    x: f64,
    fmt: &FixedPointFormat,
    mode: RoundMode,
    rng: &mut impl Rng,
) -> (i64, f64) {
    let scaled = x * (fmt.frac_bits() as f64).exp2();
    let code = match mode {
        RoundMode::Truncate => scaled.floor(),
        RoundMode::Nearest => scaled.round(),
        RoundMode::Stochastic => {
            let f = scaled.floor();
            let frac = scaled - f;
            if frac > 0.0 && rng.gen::<f64>() < frac {
                f + 1.0
            } else {
                f
            }
        }
    };
    let code = (code as i64).clamp(fmt.min_code(), fmt.max_code());
    (code, fmt.code_to_value(code))
}

/// Saturating rectifier on accumulator codes.
///
/// The input is an accumulator value with `in_int_bits` integer and
/// `in_frac_bits` fractional bits; the output format must be unsigned with
/// no more fractional bits and no more integer bits than the input.
/// Negative inputs clamp to 0; otherwise the low `in_frac_bits - F_r` bits
/// are truncated away and, if any of the discarded high magnitude bits are
/// set, the result saturates to the max code. In gates this is one
/// inverter on the sign, an OR chain over the high bits and an AND mask on
/// the kept bits.
pub fn qrelu(
    acc: i64,
    in_int_bits: u32,
    in_frac_bits: u32,
    out: &FixedPointFormat,
) -> Result<i64> {
    if out.signed {
        return Err(Error::InvalidFormat(
            "qrelu output format must be unsigned".into(),
        ));
    }
    if out.frac_bits() > in_frac_bits || out.integer_bits > in_int_bits {
        return Err(Error::InvalidFormat(format!(
            "qrelu output {out} wider than input Q{in_int_bits}.{in_frac_bits}"
        )));
    }
    if acc < 0 {
        return Ok(0);
    }
    let t = acc >> (in_frac_bits - out.frac_bits());
    Ok(t.min(out.max_code()))
}

/// The quantization decision vector explored by the search: one signed
/// format for all weights, one for biases, unsigned formats for inputs and
/// hidden activations, and a pruning sparsity level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantGenes {
    pub weights: FixedPointFormat,
    pub biases: FixedPointFormat,
    pub activations: FixedPointFormat,
    pub inputs: FixedPointFormat,
    pub sparsity: f64,
}

impl QuantGenes {
    pub fn validate(&self) -> Result<()> {
        for (fmt, want_signed, max_bits, what) in [
            (&self.weights, true, 8u32, "weight"),
            (&self.biases, true, 8, "bias"),
            (&self.activations, false, 8, "activation"),
            (&self.inputs, false, 4, "input"),
        ] {
            fmt.validate()?;
            if fmt.signed != want_signed {
                return Err(Error::InvalidFormat(format!(
                    "{what} format must be {}",
                    if want_signed { "signed" } else { "unsigned" }
                )));
            }
            if fmt.total_bits > max_bits {
                return Err(Error::InvalidFormat(format!(
                    "{what} format limited to {max_bits} bits, got {}",
                    fmt.total_bits
                )));
            }
        }
        let s = self.sparsity;
        let on_grid = (0..=5).any(|k| (s - k as f64 * 0.1).abs() < 1e-9);
        if !on_grid {
            return Err(Error::InvalidInput(format!(
                "sparsity must be one of 0.0..0.5 in 0.1 steps, got {s}"
            )));
        }
        Ok(())
    }

    /// Reference precision used to price NAS candidates and as the
    /// un-minimized baseline: 8-bit weights and biases (integer bits
    /// covering the model's actual ranges), 4-bit inputs, 8-bit
    /// activations covering the profiled hidden maxima, no pruning.
    pub fn reference_for(
        m: &MLPModel,
        profile: &crate::model::ActivationProfile,
    ) -> Result<QuantGenes> {
        let w_max = m
            .layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .flat_map(|r| r.iter())
            .fold(0.0f64, |a, &w| a.max(w.abs()));
        let b_max = m
            .layers
            .iter()
            .flat_map(|l| l.biases.iter())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let h_max = profile
            .hidden_post_max
            .iter()
            .fold(0.0f64, |a, &v| a.max(v));
        Ok(QuantGenes {
            weights: FixedPointFormat::signed_covering(8, w_max)?,
            biases: FixedPointFormat::signed_covering(8, b_max)?,
            activations: FixedPointFormat::unsigned_covering(8, h_max)?,
            inputs: FixedPointFormat::new_unsigned(4, 1)?,
            sparsity: 0.0,
        })
    }
}

/// Integer weights and biases of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantLayer {
    pub weights: Vec<Vec<i64>>,
    pub biases: Vec<i64>,
}

impl QuantLayer {
    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

/// A fully quantized network: the contract consumed by the area estimator
/// and the netlist generator. Serializes to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMLP {
    pub genes: QuantGenes,
    pub layers: Vec<QuantLayer>,
    pub mask: PruneMask,
    pub clusters: Option<ClusterAssignment>,
    /// Per-node magnitude bits W of the accumulator, profiled over the
    /// training set plus one guard bit; the hardware register is W + 1
    /// bits (two's complement).
    pub acc_magnitude_bits: Vec<Vec<u32>>,
    /// Integer bits of the accumulator as seen by each hidden neuron's
    /// QRelu: max(W - F_acc, activation integer bits).
    pub qrelu_input_int_bits: Vec<u32>,
    /// Profiled max |accumulator| per node (codes, pre-guard).
    pub profiled_abs_max: Vec<Vec<i64>>,
}

impl QuantizedMLP {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Width of the codes feeding layer `l`.
    pub fn input_bits(&self, l: usize) -> u32 {
        if l == 0 {
            self.genes.inputs.total_bits
        } else {
            self.genes.activations.total_bits
        }
    }

    /// Fractional bits of the codes feeding layer `l`.
    pub fn input_frac_bits(&self, l: usize) -> u32 {
        if l == 0 {
            self.genes.inputs.frac_bits()
        } else {
            self.genes.activations.frac_bits()
        }
    }

    /// Fractional bits of a product (and of the accumulator) in layer `l`.
    pub fn acc_frac_bits(&self, l: usize) -> u32 {
        self.input_frac_bits(l) + self.genes.weights.frac_bits()
    }

    /// Bias code moved onto the layer's accumulator grid. A coarser bias
    /// grid shifts left; a finer one shifts arithmetically right (floor),
    /// losing the bits the hardware never wires up.
    pub fn aligned_bias(&self, l: usize, neuron: usize) -> i64 {
        let code = self.layers[l].biases[neuron];
        let shift = self.acc_frac_bits(l) as i64 - self.genes.biases.frac_bits() as i64;
        if shift >= 0 {
            code << shift
        } else {
            code >> (-shift)
        }
    }

    /// Distinct nonzero |weight| codes multiplying input `col` of layer
    /// `l`, ascending. One bespoke multiplier is instantiated per entry.
    pub fn distinct_abs_codes(&self, l: usize, col: usize) -> Vec<u64> {
        let set: BTreeSet<u64> = self.layers[l]
            .weights
            .iter()
            .map(|row| row[col].unsigned_abs())
            .filter(|&a| a != 0)
            .collect();
        set.into_iter().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let q: QuantizedMLP = serde_json::from_str(&text).map_err(Error::from)?;
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        self.genes.validate()?;
        if self.layers.len() != 2 {
            return Err(Error::InvalidInput("expected 2 quantized layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (r, row) in layer.weights.iter().enumerate() {
                for (c, &w) in row.iter().enumerate() {
                    if !self.mask.is_kept(l, r, c) && w != 0 {
                        return Err(Error::InvalidInput(format!(
                            "pruned weight ({l},{r},{c}) has nonzero code {w}"
                        )));
                    }
                    if !self.genes.weights.contains_code(w) {
                        return Err(Error::InvalidInput(format!(
                            "weight code {w} outside format {}",
                            self.genes.weights
                        )));
                    }
                }
            }
            for &b in &layer.biases {
                if !self.genes.biases.contains_code(b) {
                    return Err(Error::InvalidInput(format!(
                        "bias code {b} outside format {}",
                        self.genes.biases
                    )));
                }
            }
        }
        for (l, widths) in self.acc_magnitude_bits.iter().enumerate() {
            for (n, &w) in widths.iter().enumerate() {
                let need = bits_for(self.profiled_abs_max[l][n].unsigned_abs()) + 1;
                if w < need {
                    return Err(Error::InvalidInput(format!(
                        "accumulator ({l},{n}) declared {w} bits, profile needs {need}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bits needed to represent a magnitude: 0 for 0, else floor(log2) + 1.
pub(crate) fn bits_for(x: u64) -> u32 {
    64 - x.leading_zeros()
}

/// Quantize a normalized dataset's rows into input codes by truncation.
pub fn quantize_inputs(data: &Dataset, fmt: &FixedPointFormat) -> Vec<Vec<i64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // truncation draws nothing
    data.features
        .iter()
        .map(|row| {
            row.iter()
                .map(|&x| quantize_value(x, fmt, RoundMode::Truncate, &mut rng).0)
                .collect()
        })
        .collect()
}

/// Quantize a trained model into integer codes and size every accumulator
/// from a profiling pass over `data` (the training split).
///
/// Weights and biases use one seeded stochastic-rounding draw; shared
/// cluster centroids are instead rounded to nearest once and reused for
/// every member so sharing survives quantization. Pruned weights are
/// exactly 0.
pub fn quantize_model(
    m: &MLPModel,
    genes: &QuantGenes,
    mask: &PruneMask,
    clusters: Option<&ClusterAssignment>,
    data: &Dataset,
    seed: u64,
) -> Result<QuantizedMLP> {
    genes.validate()?;
    m.validate()?;
    mask.validate_for(m)?;
    if genes.activations.frac_bits() > genes.inputs.frac_bits() + genes.weights.frac_bits() {
        return Err(Error::InvalidFormat(format!(
            "activation format {} has more fraction bits than the layer-0 accumulator grid",
            genes.activations
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut layers = Vec::with_capacity(m.layers.len());
    for (l, layer) in m.layers.iter().enumerate() {
        let mut weights = vec![vec![0i64; layer.in_dim()]; layer.out_dim()];
        // Pre-quantize each clustered column's centroids (nearest, no rng).
        let centroid_codes: Vec<Option<Vec<i64>>> = (0..layer.in_dim())
            .map(|j| {
                clusters
                    .and_then(|ca| ca.layers[l][j].as_ref())
                    .map(|col| {
                        col.centroids
                            .iter()
                            .map(|&c| {
                                quantize_value(c, &genes.weights, RoundMode::Nearest, &mut rng).0
                            })
                            .collect()
                    })
            })
            .collect();
        for r in 0..layer.out_dim() {
            for j in 0..layer.in_dim() {
                if !mask.is_kept(l, r, j) {
                    continue;
                }
                weights[r][j] = match (&centroid_codes[j], clusters) {
                    (Some(codes), Some(ca)) => {
                        match ca.layers[l][j].as_ref().unwrap().assignment[r] {
                            Some(cluster) => codes[cluster],
                            None => 0, // pruned within the clustered column
                        }
                    }
                    _ => {
                        quantize_value(
                            layer.weights[r][j],
                            &genes.weights,
                            RoundMode::Stochastic,
                            &mut rng,
                        )
                        .0
                    }
                };
            }
        }
        let biases: Vec<i64> = layer
            .biases
            .iter()
            .map(|&b| quantize_value(b, &genes.biases, RoundMode::Stochastic, &mut rng).0)
            .collect();
        layers.push(QuantLayer { weights, biases });
    }

    let mut q = QuantizedMLP {
        genes: *genes,
        layers,
        mask: mask.clone(),
        clusters: clusters.cloned(),
        acc_magnitude_bits: m
            .layers
            .iter()
            .map(|l| vec![0u32; l.out_dim()])
            .collect(),
        qrelu_input_int_bits: vec![0; m.hidden_dim],
        profiled_abs_max: m.layers.iter().map(|l| vec![0i64; l.out_dim()]).collect(),
    };

    // Profile accumulators over the training rows (exact i64 arithmetic;
    // widths here are unbounded, the declared widths come after).
    let rows = quantize_inputs(data, &genes.inputs);
    for row in &rows {
        let mut codes = row.clone();
        for l in 0..q.layers.len() {
            let mut next = Vec::with_capacity(q.layers[l].out_dim());
            for n in 0..q.layers[l].out_dim() {
                let acc = raw_accumulate(&q, l, n, &codes);
                let entry = &mut q.profiled_abs_max[l][n];
                *entry = (*entry).max(acc.abs());
                if l == 0 {
                    // The output view is not width-limited during
                    // profiling; saturation only depends on the format.
                    let act = qrelu(
                        acc,
                        u32::MAX / 2, // effectively unbounded integer view
                        q.acc_frac_bits(0),
                        &genes.activations,
                    )?;
                    next.push(act);
                }
            }
            if l == 0 {
                codes = next;
            }
        }
    }
    for l in 0..q.layers.len() {
        for n in 0..q.layers[l].out_dim() {
            q.acc_magnitude_bits[l][n] = bits_for(q.profiled_abs_max[l][n].unsigned_abs()) + 1;
        }
    }
    let f_acc0 = q.acc_frac_bits(0);
    for n in 0..m.hidden_dim {
        let w = q.acc_magnitude_bits[0][n];
        q.qrelu_input_int_bits[n] = w.saturating_sub(f_acc0).max(genes.activations.integer_bits);
    }
    Ok(q)
}

/// Positive-group minus negative-group accumulation of one neuron, plus
/// the aligned bias: exactly the sum a bespoke adder tree computes.
fn raw_accumulate(q: &QuantizedMLP, l: usize, n: usize, inputs: &[i64]) -> i64 {
    let mut pos = 0i64;
    let mut neg = 0i64;
    for (j, &x) in inputs.iter().enumerate() {
        let w = q.layers[l].weights[n][j];
        let p = w.unsigned_abs() as i64 * x;
        if w > 0 {
            pos += p;
        } else if w < 0 {
            neg += p;
        }
    }
    pos - neg + q.aligned_bias(l, n)
}

/// Run one quantized input row through the integer datapath.
///
/// Returns the predicted class and every accumulator value per layer
/// (hidden accumulators pre-QRelu, output accumulators raw). Errors with
/// [`Error::Overflow`] if any accumulator exceeds its declared width; the
/// declared widths carry one guard bit over the training profile, so this
/// fires only on inputs well outside the profiled envelope.
pub fn fixed_point_inference(q: &QuantizedMLP, row: &[i64]) -> Result<(usize, Vec<Vec<i64>>)> {
    if row.len() != q.layers[0].in_dim() {
        return Err(Error::InvalidInput(format!(
            "row has {} codes, model expects {}",
            row.len(),
            q.layers[0].in_dim()
        )));
    }
    for &x in row {
        if !q.genes.inputs.contains_code(x) {
            return Err(Error::InvalidInput(format!(
                "input code {x} outside format {}",
                q.genes.inputs
            )));
        }
    }
    let mut accumulators = Vec::with_capacity(q.layers.len());
    let mut codes: Vec<i64> = row.to_vec();
    for l in 0..q.layers.len() {
        let mut accs = Vec::with_capacity(q.layers[l].out_dim());
        let mut next = Vec::with_capacity(q.layers[l].out_dim());
        for n in 0..q.layers[l].out_dim() {
            let acc = raw_accumulate(q, l, n, &codes);
            let w = q.acc_magnitude_bits[l][n];
            if acc < -(1i64 << w) || acc > (1i64 << w) - 1 {
                return Err(Error::Overflow {
                    layer: l,
                    neuron: n,
                    value: acc,
                    magnitude_bits: w,
                });
            }
            accs.push(acc);
            if l == 0 {
                next.push(qrelu(
                    acc,
                    q.qrelu_input_int_bits[n],
                    q.acc_frac_bits(0),
                    &q.genes.activations,
                )?);
            }
        }
        accumulators.push(accs);
        if l == 0 {
            codes = next;
        }
    }
    let class = argmax_i64(accumulators.last().expect("two layers"));
    Ok((class, accumulators))
}

/// Argmax over integer accumulators, ties to the lowest index.
pub(crate) fn argmax_i64(xs: &[i64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Outcome of evaluating a quantized model over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantEval {
    pub accuracy: f64,
    /// Rows rejected by the overflow sentinel; they count as
    /// misclassified so accuracy stays comparable across designs.
    pub overflow_rows: usize,
}

/// Accuracy of the integer datapath on a normalized dataset.
pub fn quantized_accuracy(q: &QuantizedMLP, data: &Dataset) -> Result<QuantEval> {
    if data.n_rows() == 0 {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let rows = quantize_inputs(data, &q.genes.inputs);
    let mut correct = 0usize;
    let mut overflow_rows = 0usize;
    for (row, &label) in rows.iter().zip(&data.labels) {
        match fixed_point_inference(q, row) {
            Ok((class, _)) => {
                if class == label {
                    correct += 1;
                }
            }
            Err(Error::Overflow { .. }) => overflow_rows += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(QuantEval {
        accuracy: correct as f64 / data.n_rows() as f64,
        overflow_rows,
    })
}

/// Quantization-aware retraining.
///
/// Each batch evaluates the loss at stochastically quantized weights and
/// truncation-quantized activations (the QRelu simulation), and the
/// gradients flow straight through the quantizers: identity inside the
/// representable range, zero outside (saturated weights and saturated or
/// negative activations stop learning for that step). Updates apply to the
/// latent float weights; pruned positions are pinned at zero.
pub fn qat_retrain(
    m: &MLPModel,
    genes: &QuantGenes,
    cfg: &TrainConfig,
    mask: &PruneMask,
    data: &Dataset,
) -> Result<MLPModel> {
    qat_constrained(m, genes, cfg, mask, None, data)
}

/// [`qat_retrain`] with an additional freeze: clustered weights stay at
/// their centroid values for the whole run (their quantized forward value
/// is the nearest-rounded centroid code, matching [`quantize_model`]).
pub(crate) fn qat_constrained(
    m: &MLPModel,
    genes: &QuantGenes,
    cfg: &TrainConfig,
    mask: &PruneMask,
    clusters: Option<&ClusterAssignment>,
    data: &Dataset,
) -> Result<MLPModel> {
    genes.validate()?;
    mask.validate_for(m)?;
    if genes.activations.frac_bits() > genes.inputs.frac_bits() + genes.weights.frac_bits() {
        return Err(Error::InvalidFormat(format!(
            "activation format {} has more fraction bits than the layer-0 accumulator grid",
            genes.activations
        )));
    }
    let mut model = m.clone();
    model.meta = None;
    let pin = |mm: &mut MLPModel| {
        for (l, layer) in mm.layers.iter_mut().enumerate() {
            for (r, row) in layer.weights.iter_mut().enumerate() {
                for (j, w) in row.iter_mut().enumerate() {
                    if !mask.is_kept(l, r, j) {
                        *w = 0.0;
                    } else if let Some(c) =
                        clusters.and_then(|ca| ca.centroid_of(l, r, j))
                    {
                        *w = c;
                    }
                }
            }
        }
    };
    pin(&mut model);

    // Pre-quantize the inputs once; their codes are fixed by the format.
    let mut qdata = data.clone();
    let input_rows = quantize_inputs(data, &genes.inputs);
    for (row, codes) in qdata.features.iter_mut().zip(&input_rows) {
        for (v, &c) in row.iter_mut().zip(codes) {
            *v = genes.inputs.code_to_value(c);
        }
    }

    let mut qrng = ChaCha8Rng::seed_from_u64(cfg.seed);
    qrng.set_stream(2); // streams 0 and 1 belong to init and shuffling
    let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed);
    srng.set_stream(1);
    let mut adam_state = None;
    let mut order: Vec<usize> = (0..qdata.n_rows()).collect();

    use rand::seq::SliceRandom;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut srng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            // Fake-quantize weights and biases for this step.
            let mut fq = model.clone();
            for (l, layer) in fq.layers.iter_mut().enumerate() {
                for (r, row) in layer.weights.iter_mut().enumerate() {
                    for (j, w) in row.iter_mut().enumerate() {
                        if !mask.is_kept(l, r, j) {
                            *w = 0.0;
                        } else if clusters.and_then(|ca| ca.centroid_of(l, r, j)).is_some() {
                            *w = quantize_value(*w, &genes.weights, RoundMode::Nearest, &mut qrng)
                                .1;
                        } else {
                            *w = quantize_value(
                                *w,
                                &genes.weights,
                                RoundMode::Stochastic,
                                &mut qrng,
                            )
                            .1;
                        }
                    }
                }
                for b in layer.biases.iter_mut() {
                    *b = quantize_value(*b, &genes.biases, RoundMode::Stochastic, &mut qrng).1;
                }
            }

            let xs: Vec<&[f64]> = chunk.iter().map(|&i| qdata.features[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| qdata.labels[i]).collect();
            let (loss, grads) = qat_loss_and_grad(&fq, genes, &xs, &ys, cfg.l1_lambda, &model)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            apply_qat_update(&mut model, &grads, cfg, &mut adam_state);
            pin(&mut model);
        }
    }
    Ok(model)
}

/// Loss and latent-weight gradients of one QAT step. `fq` holds the
/// fake-quantized parameters the forward pass uses; `latent` is consulted
/// for the straight-through clip (a latent weight outside the format range
/// receives zero gradient) and the L1 term.
fn qat_loss_and_grad(
    fq: &MLPModel,
    genes: &QuantGenes,
    xs: &[&[f64]],
    ys: &[usize],
    l1: f64,
    latent: &MLPModel,
) -> Result<(f64, Vec<crate::model::LayerParams>)> {
    use crate::model::LayerParams;
    let n = xs.len() as f64;
    let step_r = genes.activations.step();
    let max_r = genes.activations.max_value();
    let mut loss = 0.0;
    let mut grads: Vec<LayerParams> = fq
        .layers
        .iter()
        .map(|l| LayerParams::zeros(l.out_dim(), l.in_dim()))
        .collect();
    for (x, &y) in xs.iter().zip(ys) {
        let l0 = &fq.layers[0];
        let pre: Vec<f64> = l0
            .weights
            .iter()
            .zip(&l0.biases)
            .map(|(w, b)| w.iter().zip(*x).map(|(wi, xi)| wi * xi).sum::<f64>() + b)
            .collect();
        // QRelu simulation: clamp negatives, truncate to the activation
        // grid, saturate at the format max. Gradient is 1 only in the
        // pass-through region.
        let mut h = vec![0.0; pre.len()];
        let mut dmask = vec![0.0; pre.len()];
        for (j, &p) in pre.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let t = (p / step_r).floor() * step_r;
            if t >= max_r {
                h[j] = max_r;
            } else {
                h[j] = t;
                dmask[j] = 1.0;
            }
        }
        let l1p = &fq.layers[1];
        let logits: Vec<f64> = l1p
            .weights
            .iter()
            .zip(&l1p.biases)
            .map(|(w, b)| w.iter().zip(&h).map(|(wi, hi)| wi * hi).sum::<f64>() + b)
            .collect();
        let p = softmax(&logits);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        let dlogits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(k, &pk)| pk - if k == y { 1.0 } else { 0.0 })
            .collect();
        for (o, &dl) in dlogits.iter().enumerate() {
            for (j, &hj) in h.iter().enumerate() {
                grads[1].weights[o][j] += dl * hj;
            }
            grads[1].biases[o] += dl;
        }
        for j in 0..pre.len() {
            if dmask[j] == 0.0 {
                continue;
            }
            let dh: f64 = dlogits
                .iter()
                .enumerate()
                .map(|(o, &dl)| dl * l1p.weights[o][j])
                .sum();
            for (k, &xk) in x.iter().enumerate() {
                grads[0].weights[j][k] += dh * xk;
            }
            grads[0].biases[j] += dh;
        }
    }
    loss /= n;
    let (wmin, wmax) = (genes.weights.min_value(), genes.weights.max_value());
    let (bmin, bmax) = (genes.biases.min_value(), genes.biases.max_value());
    for (l, g) in grads.iter_mut().enumerate() {
        for (r, row) in g.weights.iter_mut().enumerate() {
            for (j, gv) in row.iter_mut().enumerate() {
                *gv /= n;
                let lw = latent.layers[l].weights[r][j];
                if lw < wmin || lw > wmax {
                    *gv = 0.0; // straight-through clip at saturation
                }
                if l1 > 0.0 && lw != 0.0 {
                    *gv += l1 * lw.signum();
                }
            }
        }
        for (r, gb) in g.biases.iter_mut().enumerate() {
            *gb /= n;
            let lb = latent.layers[l].biases[r];
            if lb < bmin || lb > bmax {
                *gb = 0.0;
            }
        }
    }
    if l1 > 0.0 {
        loss += l1
            * latent
                .layers
                .iter()
                .flat_map(|l| l.weights.iter())
                .flat_map(|r| r.iter())
                .map(|w| w.abs())
                .sum::<f64>();
    }
    Ok((loss, grads))
}

/// One optimizer step on the latent parameters.
fn apply_qat_update(
    model: &mut MLPModel,
    grads: &[crate::model::LayerParams],
    cfg: &TrainConfig,
    adam: &mut Option<(Vec<crate::model::LayerParams>, Vec<crate::model::LayerParams>, u64)>,
) {
    use crate::model::{LayerParams, Solver};
    match cfg.solver {
        Solver::Sgd => {
            for (ml, gl) in model.layers.iter_mut().zip(grads) {
                for (mr, gr) in ml.weights.iter_mut().zip(&gl.weights) {
                    for (mw, gw) in mr.iter_mut().zip(gr) {
                        *mw -= cfg.learning_rate * gw;
                    }
                }
                for (mb, gb) in ml.biases.iter_mut().zip(&gl.biases) {
                    *mb -= cfg.learning_rate * gb;
                }
            }
        }
        Solver::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            let (ms, vs, t) = adam.get_or_insert_with(|| {
                let zeros: Vec<LayerParams> = model
                    .layers
                    .iter()
                    .map(|l| LayerParams::zeros(l.out_dim(), l.in_dim()))
                    .collect();
                (zeros.clone(), zeros, 0)
            });
            *t += 1;
            let c1 = 1.0 - B1.powi(*t as i32);
            let c2 = 1.0 - B2.powi(*t as i32);
            for (l, gl) in grads.iter().enumerate() {
                for (r, gr) in gl.weights.iter().enumerate() {
                    for (j, &g) in gr.iter().enumerate() {
                        let m1 = &mut ms[l].weights[r][j];
                        *m1 = B1 * *m1 + (1.0 - B1) * g;
                        let v1 = &mut vs[l].weights[r][j];
                        *v1 = B2 * *v1 + (1.0 - B2) * g * g;
                        let mhat = ms[l].weights[r][j] / c1;
                        let vhat = vs[l].weights[r][j] / c2;
                        model.layers[l].weights[r][j] -=
                            cfg.learning_rate * mhat / (vhat.sqrt() + EPS);
                    }
                }
                for (r, &g) in gl.biases.iter().enumerate() {
                    let m1 = &mut ms[l].biases[r];
                    *m1 = B1 * *m1 + (1.0 - B1) * g;
                    let v1 = &mut vs[l].biases[r];
                    *v1 = B2 * *v1 + (1.0 - B2) * g * g;
                    let mhat = ms[l].biases[r] / c1;
                    let vhat = vs[l].biases[r] / c2;
                    model.layers[l].biases[r] -= cfg.learning_rate * mhat / (vhat.sqrt() + EPS);
                }
            }
        }
    }
}
