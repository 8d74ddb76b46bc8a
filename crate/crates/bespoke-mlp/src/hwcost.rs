//! Gate-level cost models for bespoke combinational MLPs: a canonical
//! signed-digit multiplier oracle and its lookup table, a balanced adder
//! tree oracle and the linear regressor trained on it, the closed-form
//! rectifier area, critical-path delay and supply-voltage search.
//!
//! Everything here is a deterministic surrogate for EDA synthesis: the
//! oracles define ground truth, the LUT + regression estimator
//! approximates them cheaply enough to sit inside a search loop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compress::{sharing_census, SharingCensus};
use crate::quant::{bits_for, QuantizedMLP};
use crate::seeds::derive_seed;
use crate::{Error, Result};

/// Per-gate-type values (area units or seconds, depending on context).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateValues {
    pub inv: f64,
    pub and2: f64,
    pub or2: f64,
    pub xor2: f64,
    pub ha: f64,
    pub fa: f64,
}

impl GateValues {
    fn all_positive(&self) -> bool {
        [self.inv, self.and2, self.or2, self.xor2, self.ha, self.fa]
            .iter()
            .all(|&v| v > 0.0 && v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltagePoint {
    pub volts: f64,
    pub delay_scale: f64,
}

/// Technology characterization: gate areas, gate delays at nominal
/// voltage, and how delay scales as the supply drops.
///
/// The shipped defaults are configuration, not measurements: unit-ish
/// areas in the usual INV < AND2 < XOR2 < HA < FA ordering and
/// sub-millisecond gate delays typical of low-voltage printed logic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateLibrary {
    pub area: GateValues,
    pub delay_s: GateValues,
    pub voltage_delay_table: Vec<VoltagePoint>,
}

impl Default for GateLibrary {
    fn default() -> Self {
        GateLibrary {
            area: GateValues {
                inv: 1.0,
                and2: 2.0,
                or2: 2.0,
                xor2: 3.0,
                ha: 5.0,
                fa: 9.0,
            },
            delay_s: GateValues {
                inv: 1e-4,
                and2: 2e-4,
                or2: 2e-4,
                xor2: 3e-4,
                ha: 3e-4,
                fa: 5e-4,
            },
            voltage_delay_table: vec![
                VoltagePoint {
                    volts: 0.6,
                    delay_scale: 3.0,
                },
                VoltagePoint {
                    volts: 0.8,
                    delay_scale: 1.6,
                },
                VoltagePoint {
                    volts: 1.0,
                    delay_scale: 1.0,
                },
            ],
        }
    }
}

impl GateLibrary {
    pub fn validate(&self) -> Result<()> {
        if !self.area.all_positive() || !self.delay_s.all_positive() {
            return Err(Error::InvalidInput(
                "gate areas and delays must all be positive".into(),
            ));
        }
        let t = &self.voltage_delay_table;
        if t.len() < 2 {
            return Err(Error::InvalidInput(
                "voltage table needs at least two points".into(),
            ));
        }
        for w in t.windows(2) {
            if w[1].volts <= w[0].volts {
                return Err(Error::InvalidInput(
                    "voltage table must be sorted ascending by voltage".into(),
                ));
            }
            if w[1].delay_scale >= w[0].delay_scale {
                return Err(Error::InvalidInput(
                    "delay scale must strictly decrease with voltage".into(),
                ));
            }
        }
        let has = |v: f64| t.iter().any(|p| (p.volts - v).abs() < 1e-9);
        if !has(0.6) || !has(1.0) {
            return Err(Error::InvalidInput(
                "voltage table must include 0.6 V and 1.0 V".into(),
            ));
        }
        if t.iter().any(|p| p.delay_scale <= 0.0) {
            return Err(Error::InvalidInput("delay scales must be positive".into()));
        }
        Ok(())
    }

    /// Load from a `.toml` or `.json` file (by extension).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lib: GateLibrary = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(Error::from)?,
            _ => toml::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?,
        };
        lib.validate()?;
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::to_string_pretty(self).map_err(Error::from)?,
            _ => toml::to_string_pretty(self)
                .map_err(|e| Error::Internal(format!("toml serialize: {e}")))?,
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Stable fingerprint used to key the estimator cache.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("library serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Delay multiplier at a supply voltage, linearly interpolated
    /// between table rows. Voltages outside the table range are an error.
    pub fn delay_scale_at(&self, volts: f64) -> Result<f64> {
        let t = &self.voltage_delay_table;
        let (lo, hi) = (t[0].volts, t[t.len() - 1].volts);
        if volts < lo - 1e-9 || volts > hi + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "voltage {volts:.3} V outside characterized range [{lo:.2}, {hi:.2}]"
            )));
        }
        let v = volts.clamp(lo, hi);
        for w in t.windows(2) {
            if v <= w[1].volts + 1e-12 {
                let f = (v - w[0].volts) / (w[1].volts - w[0].volts);
                return Ok(w[0].delay_scale + f * (w[1].delay_scale - w[0].delay_scale));
            }
        }
        Ok(t[t.len() - 1].delay_scale)
    }
}

/// Canonical signed-digit form of a nonnegative integer, as (bit position,
/// digit) pairs with digits in {-1, +1}, ascending by position.
///
/// Canonical means no two adjacent positions are nonzero, which also
/// minimizes the nonzero-digit count over all signed-digit forms; each
/// nonzero digit beyond the first is one add/subtract stage in a bespoke
/// constant multiplier.
pub fn csd(w: u64) -> Vec<(u32, i8)> {
    let mut v = w as u128;
    let mut pos = 0u32;
    let mut out = Vec::new();
    while v != 0 {
        if v & 1 == 1 {
            let d: i8 = if v & 3 == 3 { -1 } else { 1 };
            out.push((pos, d));
            if d == 1 {
                v -= 1;
            } else {
                v += 1;
            }
        }
        v >>= 1;
        pos += 1;
    }
    out
}

/// Gate area of a bespoke multiply-by-|w| of a `z`-bit unsigned input.
///
/// The circuit is the shift-add network over the canonical signed-digit
/// form, evaluated from the most significant digit down: the leading
/// digit is pure wiring (a shift), and every further digit is one
/// ripple-carry add or subtract stage. A stage of width `W` costs `W` full
/// adders; subtraction adds `W` inverters (two's-complement negation with
/// the carry-in absorbed by the chain). Adding widens the running value by
/// one bit; subtracting a smaller term cannot, since every prefix of a
/// canonical form evaluated high-to-low stays positive.
pub fn multiplier_oracle(w_abs: u64, z: u32, lib: &GateLibrary) -> f64 {
    let digits = csd(w_abs);
    if digits.len() <= 1 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut acc_width = z + digits.last().expect("nonempty").0;
    for &(p, d) in digits.iter().rev().skip(1) {
        let w = acc_width.max(z + p);
        area += w as f64 * lib.area.fa;
        if d < 0 {
            area += w as f64 * lib.area.inv;
        } else {
            acc_width = w + 1;
        }
    }
    area
}

/// Multiplier areas for every (input precision, |weight code|) pair in
/// the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierCostTable {
    pub max_code: u32,
    /// `entries[z][w]` in area units, `w` indexed 0..=max_code.
    pub entries: BTreeMap<u32, Vec<f64>>,
}

pub const MULTIPLIER_MAX_CODE: u32 = 128;

/// Populate the table from [`multiplier_oracle`] for each precision in
/// `z_set` and all |codes| 0..=128.
pub fn build_multiplier_lut(lib: &GateLibrary, z_set: &[u32]) -> MultiplierCostTable {
    let mut entries = BTreeMap::new();
    for &z in z_set {
        let row: Vec<f64> = (0..=MULTIPLIER_MAX_CODE)
            .map(|w| multiplier_oracle(w as u64, z, lib))
            .collect();
        entries.insert(z, row);
    }
    MultiplierCostTable {
        max_code: MULTIPLIER_MAX_CODE,
        entries,
    }
}

impl MultiplierCostTable {
    pub fn lookup(&self, z: u32, w_abs: u64) -> Result<f64> {
        let row = self.entries.get(&z).ok_or_else(|| {
            Error::InvalidInput(format!("multiplier table has no entries for {z}-bit inputs"))
        })?;
        if w_abs > self.max_code as u64 {
            return Err(Error::InvalidInput(format!(
                "weight code {w_abs} exceeds table limit {}",
                self.max_code
            )));
        }
        Ok(row[w_abs as usize])
    }
}

/// Gate area of the accumulator that sums the given product widths plus
/// one bias operand.
///
/// A balanced binary adder tree over the summands: at every level the
/// operand widths are sorted ascending and paired up, so the area is
/// invariant to summand order. A two-operand adder of widths `a <= b`
/// costs `a` full adders plus `b - a` half adders (the overhang only
/// propagates a carry) and produces `b + 1` bits. Zero-width summands
/// (pruned products, absent bias) vanish; fewer than two summands need no
/// adder at all.
pub fn accumulator_oracle(product_widths: &[u32], bias_width: u32, lib: &GateLibrary) -> f64 {
    let mut widths: Vec<u32> = product_widths
        .iter()
        .copied()
        .chain(std::iter::once(bias_width))
        .filter(|&w| w > 0)
        .collect();
    let mut area = 0.0;
    while widths.len() > 1 {
        widths.sort_unstable();
        let mut next = Vec::with_capacity(widths.len() / 2 + 1);
        let mut it = widths.chunks_exact(2);
        for pair in &mut it {
            let (a, b) = (pair[0], pair[1]);
            area += a as f64 * lib.area.fa + (b - a) as f64 * lib.area.ha;
            next.push(b + 1);
        }
        next.extend_from_slice(it.remainder());
        widths = next;
    }
    area
}

/// The three regression features describing a neuron's summand multiset:
/// summand count, total product bits, max product bits.
pub(crate) fn accumulator_features(product_widths: &[u32]) -> [f64; 3] {
    let nz: Vec<u32> = product_widths.iter().copied().filter(|&w| w > 0).collect();
    [
        nz.len() as f64,
        nz.iter().sum::<u32>() as f64,
        nz.iter().max().copied().unwrap_or(0) as f64,
    ]
}

/// Linear model of accumulator area for one input precision.
///
/// Coefficients are forced nonnegative (over the best-fitting feature
/// subset) so that removing a summand can never raise the prediction;
/// that keeps the whole area estimate monotone under pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulatorRegressor {
    pub z: u32,
    /// One coefficient per feature of [`accumulator_features`]; excluded
    /// features carry 0.
    pub coef: [f64; 3],
    pub intercept: f64,
    pub n_samples: usize,
    pub r_squared: f64,
    pub mean_fallback: bool,
}

impl AccumulatorRegressor {
    /// Predicted accumulator area, clamped at zero.
    pub fn predict(&self, product_widths: &[u32]) -> f64 {
        let x = accumulator_features(product_widths);
        let y = self.intercept + (0..3).map(|i| self.coef[i] * x[i]).sum::<f64>();
        y.max(0.0)
    }
}

/// Fit the per-precision accumulator regressor on randomly sampled
/// neurons: lengths 1..=16, codes in [-128, 128], areas from
/// [`accumulator_oracle`].
pub fn fit_accumulator_lr(
    z: u32,
    lib: &GateLibrary,
    n_samples: usize,
    seed: u64,
) -> Result<AccumulatorRegressor> {
    if n_samples < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 regression samples, got {n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[z as u64]));
    let mut rows = Vec::with_capacity(n_samples);
    let mut ys = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let widths = sample_neuron_widths(z, &mut rng);
        rows.push(accumulator_features(&widths));
        ys.push(accumulator_oracle(&widths, 0, lib));
    }
    let (coef, intercept, r_squared, mean_fallback) = fit_best_subset(&rows, &ys);
    if mean_fallback {
        log::warn!("accumulator regression for z={z} degenerated to a mean predictor");
    }
    Ok(AccumulatorRegressor {
        z,
        coef,
        intercept,
        n_samples,
        r_squared,
        mean_fallback,
    })
}

pub(crate) fn sample_neuron_widths(z: u32, rng: &mut impl Rng) -> Vec<u32> {
    let len = rng.gen_range(1..=16);
    (0..len)
        .map(|_| {
            let code: i64 = rng.gen_range(-128..=128);
            if code == 0 {
                0
            } else {
                z + bits_for(code.unsigned_abs())
            }
        })
        .collect()
}

/// Ordinary least squares over every subset of the three features,
/// keeping only fits whose coefficients are all nonnegative; the best
/// in-sample R-squared wins. The empty subset (a mean predictor) always
/// qualifies, so this cannot fail; it returns (coef, intercept,
/// r_squared, used_mean_fallback).
pub(crate) fn fit_best_subset(rows: &[[f64; 3]], ys: &[f64]) -> ([f64; 3], f64, f64, bool) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sst: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2_of = |ssr: f64| if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };

    // Mean predictor baseline (subset = {}).
    let ssr_mean: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    let mut best = ([0.0; 3], mean, r2_of(ssr_mean), true);

    for mask in 1u8..8 {
        let feats: Vec<usize> = (0..3).filter(|i| mask >> i & 1 == 1).collect();
        let d = feats.len() + 1; // + intercept
        let mut ata = vec![vec![0.0; d]; d];
        let mut atb = vec![0.0; d];
        for (row, &y) in rows.iter().zip(ys) {
            let x: Vec<f64> = feats.iter().map(|&i| row[i]).chain([1.0]).collect();
            for a in 0..d {
                for b in 0..d {
                    ata[a][b] += x[a] * x[b];
                }
                atb[a] += x[a] * y;
            }
        }
        let Some(sol) = solve_linear(ata, atb) else {
            continue; // singular for this subset
        };
        if sol[..feats.len()].iter().any(|&c| c < -1e-9) {
            continue; // would break pruning monotonicity
        }
        let mut coef = [0.0; 3];
        for (k, &i) in feats.iter().enumerate() {
            coef[i] = sol[k].max(0.0);
        }
        let intercept = sol[d - 1];
        let ssr: f64 = rows
            .iter()
            .zip(ys)
            .map(|(row, &y)| {
                let pred = intercept + (0..3).map(|i| coef[i] * row[i]).sum::<f64>();
                (y - pred) * (y - pred)
            })
            .sum();
        let r2 = r2_of(ssr);
        if r2 > best.2 + 1e-12 {
            best = (coef, intercept, r2, false);
        }
    }
    best
}

/// Gauss-Jordan with partial pivoting; None on a (near-)singular system.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-9 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Closed-form rectifier area: one inverter on the sign, a 2-input AND
/// per output bit, and an OR chain over the discarded high magnitude
/// bits: INV + (I_r + F_r)·AND2 + max(I_i - I_r - 1, 0)·OR2.
pub fn qrelu_area(i_in: u32, f_in: u32, i_out: u32, f_out: u32, lib: &GateLibrary) -> Result<f64> {
    if f_out > f_in || i_out > i_in {
        return Err(Error::InvalidFormat(format!(
            "rectifier output Q{i_out}.{f_out} wider than input Q{i_in}.{f_in}"
        )));
    }
    let or_gates = (i_in - i_out).saturating_sub(1);
    Ok(lib.area.inv
        + (i_out + f_out) as f64 * lib.area.and2
        + or_gates as f64 * lib.area.or2)
}

/// Gate kinds a rectifier instantiates; used by the enumeration
/// cross-check and by the netlist emitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QreluGate {
    Inv,
    And2,
    Or2,
}

/// Construct the rectifier gate by gate: invert the sign, OR-reduce the
/// `I_i - I_r` high magnitude bits into a saturate signal (k bits need
/// k - 1 two-input ORs; one bit is already a signal), and mask each of
/// the `I_r + F_r` output bits with one AND. This enumeration is the
/// independent route the closed form is checked against, and the exact
/// shape the Verilog emitter instantiates.
pub fn qrelu_gate_list(i_in: u32, f_in: u32, i_out: u32, f_out: u32) -> Result<Vec<QreluGate>> {
    if f_out > f_in || i_out > i_in {
        return Err(Error::InvalidFormat(format!(
            "rectifier output Q{i_out}.{f_out} wider than input Q{i_in}.{f_in}"
        )));
    }
    let mut gates = vec![QreluGate::Inv];
    let high_bits = i_in - i_out;
    for _ in 1..high_bits.max(1) {
        gates.push(QreluGate::Or2);
    }
    for _ in 0..(i_out + f_out) {
        gates.push(QreluGate::And2);
    }
    Ok(gates)
}

/// Area of a gate list under a library.
pub fn gate_list_area(gates: &[QreluGate], lib: &GateLibrary) -> f64 {
    gates
        .iter()
        .map(|g| match g {
            QreluGate::Inv => lib.area.inv,
            QreluGate::And2 => lib.area.and2,
            QreluGate::Or2 => lib.area.or2,
        })
        .sum()
}

/// Area breakdown of one neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronArea {
    pub multipliers: f64,
    pub accumulator: f64,
    pub qrelu: f64,
}

impl NeuronArea {
    pub fn total(&self) -> f64 {
        self.multipliers + self.accumulator + self.qrelu
    }
}

/// Whole-network area report: per-neuron breakdown, component totals and
/// the shared-multiplier census. Total is the plain sum of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub per_neuron: Vec<Vec<NeuronArea>>,
    pub multipliers: f64,
    pub accumulator: f64,
    pub qrelu: f64,
    pub total: f64,
    pub census: SharingCensus,
}

fn report_from_breakdown(per_neuron: Vec<Vec<NeuronArea>>, census: SharingCensus) -> AreaReport {
    let mut m = 0.0;
    let mut a = 0.0;
    let mut q = 0.0;
    for layer in &per_neuron {
        for n in layer {
            m += n.multipliers;
            a += n.accumulator;
            q += n.qrelu;
        }
    }
    AreaReport {
        per_neuron,
        multipliers: m,
        accumulator: a,
        qrelu: q,
        total: m + a + q,
        census,
    }
}

/// Product widths of a neuron's kept nonzero weights at input width `z`.
fn neuron_product_widths(q: &QuantizedMLP, l: usize, n: usize, z: u32) -> Vec<u32> {
    q.layers[l].weights[n]
        .iter()
        .filter(|&&w| w != 0)
        .map(|&w| z + bits_for(w.unsigned_abs()))
        .collect()
}

/// Fast area estimate: LUT for multipliers (first occurrence of each
/// |code| per input column only, later uses are shared), regression for
/// accumulators, closed form for rectifiers.
pub fn estimate_area(
    q: &QuantizedMLP,
    lut: &MultiplierCostTable,
    regressors: &BTreeMap<u32, AccumulatorRegressor>,
    lib: &GateLibrary,
) -> Result<AreaReport> {
    let mut per_neuron = Vec::with_capacity(q.n_layers());
    for l in 0..q.n_layers() {
        let z = q.input_bits(l);
        let reg = regressors.get(&z).ok_or_else(|| {
            Error::InvalidInput(format!("no accumulator regressor for {z}-bit inputs"))
        })?;
        let in_dim = q.layers[l].in_dim();
        let mut seen: Vec<std::collections::BTreeSet<u64>> = vec![Default::default(); in_dim];
        let mut layer = Vec::with_capacity(q.layers[l].out_dim());
        for n in 0..q.layers[l].out_dim() {
            let mut mult = 0.0;
            for j in 0..in_dim {
                let w = q.layers[l].weights[n][j].unsigned_abs();
                if w != 0 && seen[j].insert(w) {
                    mult += lut.lookup(z, w)?;
                }
            }
            let acc = reg.predict(&neuron_product_widths(q, l, n, z));
            let qr = if l == 0 {
                qrelu_area(
                    q.qrelu_input_int_bits[n],
                    q.acc_frac_bits(0),
                    q.genes.activations.integer_bits,
                    q.genes.activations.frac_bits(),
                    lib,
                )?
            } else {
                0.0
            };
            layer.push(NeuronArea {
                multipliers: mult,
                accumulator: acc,
                qrelu: qr,
            });
        }
        per_neuron.push(layer);
    }
    Ok(report_from_breakdown(per_neuron, sharing_census(q)))
}

/// Ground-truth area: same sharing rule, but multipliers and accumulators
/// costed by their oracles (bias operand included) and rectifiers by gate
/// enumeration. This is what the estimator is judged against, and what a
/// synthesized netlist would actually cost under the library.
pub fn oracle_area(q: &QuantizedMLP, lib: &GateLibrary) -> Result<AreaReport> {
    let mut per_neuron = Vec::with_capacity(q.n_layers());
    for l in 0..q.n_layers() {
        let z = q.input_bits(l);
        let in_dim = q.layers[l].in_dim();
        let mut seen: Vec<std::collections::BTreeSet<u64>> = vec![Default::default(); in_dim];
        let mut layer = Vec::with_capacity(q.layers[l].out_dim());
        for n in 0..q.layers[l].out_dim() {
            let mut mult = 0.0;
            for j in 0..in_dim {
                let w = q.layers[l].weights[n][j].unsigned_abs();
                if w != 0 && seen[j].insert(w) {
                    mult += multiplier_oracle(w, z, lib);
                }
            }
            let bias_width = bits_for(q.aligned_bias(l, n).unsigned_abs());
            let acc =
                accumulator_oracle(&neuron_product_widths(q, l, n, z), bias_width, lib);
            let qr = if l == 0 {
                let gates = qrelu_gate_list(
                    q.qrelu_input_int_bits[n],
                    q.acc_frac_bits(0),
                    q.genes.activations.integer_bits,
                    q.genes.activations.frac_bits(),
                )?;
                gate_list_area(&gates, lib)
            } else {
                0.0
            };
            layer.push(NeuronArea {
                multipliers: mult,
                accumulator: acc,
                qrelu: qr,
            });
        }
        per_neuron.push(layer);
    }
    Ok(report_from_breakdown(per_neuron, sharing_census(q)))
}

/// Longest combinational path through the network, in seconds at the
/// given supply voltage.
///
/// Per neuron: the deepest multiplier stage chain, plus the adder tree
/// (depth ceil(log2 summands), each level a ripple of the accumulator
/// width), plus the rectifier level on hidden neurons. A neuron with no
/// kept weights is constant and folds away entirely. Layer delays are the
/// max over their neurons; the network is the sum over layers.
pub fn critical_path_delay(q: &QuantizedMLP, lib: &GateLibrary, voltage: f64) -> Result<f64> {
    let scale = lib.delay_scale_at(voltage)?;
    let mut total = 0.0;
    for l in 0..q.n_layers() {
        let z = q.input_bits(l);
        let mut worst: f64 = 0.0;
        for n in 0..q.layers[l].out_dim() {
            let kept: Vec<u64> = q.layers[l].weights[n]
                .iter()
                .filter(|&&w| w != 0)
                .map(|&w| w.unsigned_abs())
                .collect();
            if kept.is_empty() {
                continue;
            }
            let mult = kept
                .iter()
                .map(|&w| multiplier_delay(w, z, lib))
                .fold(0.0f64, f64::max);
            let summands = kept.len() + usize::from(q.aligned_bias(l, n) != 0);
            let depth = ceil_log2(summands);
            let ripple = (q.acc_magnitude_bits[l][n] + 1) as f64;
            let tree = depth as f64 * ripple * lib.delay_s.fa;
            let qr = if l == 0 {
                let or_chain =
                    (q.qrelu_input_int_bits[n] - q.genes.activations.integer_bits)
                        .saturating_sub(1);
                lib.delay_s.inv + or_chain as f64 * lib.delay_s.or2 + lib.delay_s.and2
            } else {
                0.0
            };
            worst = worst.max(mult + tree + qr);
        }
        total += worst;
    }
    Ok(total * scale)
}

/// Serial delay through one constant multiplier's stage chain.
fn multiplier_delay(w_abs: u64, z: u32, lib: &GateLibrary) -> f64 {
    let digits = csd(w_abs);
    if digits.len() <= 1 {
        return 0.0;
    }
    let mut delay = 0.0;
    let mut acc_width = z + digits.last().expect("nonempty").0;
    for &(p, d) in digits.iter().rev().skip(1) {
        let w = acc_width.max(z + p);
        delay += w as f64 * lib.delay_s.fa;
        if d < 0 {
            delay += lib.delay_s.inv;
        } else {
            acc_width = w + 1;
        }
    }
    delay
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        (n - 1).ilog2() + 1
    }
}

/// Minimum supply voltage on a 10 mV grid meeting a delay constraint.
///
/// Delay decreases monotonically with voltage, so a binary search over
/// the grid between the table's lowest and highest voltages finds the
/// smallest feasible step. Errors if even the highest voltage misses the
/// constraint, reporting what was achievable.
pub fn min_voltage(q: &QuantizedMLP, lib: &GateLibrary, delay_constraint: f64) -> Result<f64> {
    let t = &lib.voltage_delay_table;
    let base = (t[0].volts * 100.0).round();
    let steps = ((t[t.len() - 1].volts - t[0].volts) * 100.0).round() as u32;
    let volts_at = |k: u32| (base + k as f64) / 100.0;
    let at_max = critical_path_delay(q, lib, volts_at(steps))?;
    if at_max > delay_constraint {
        return Err(Error::Infeasible {
            achievable_s: at_max,
            at_voltage: volts_at(steps),
            constraint_s: delay_constraint,
        });
    }
    let (mut lo, mut hi) = (0u32, steps);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if critical_path_delay(q, lib, volts_at(mid))? <= delay_constraint {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(volts_at(lo))
}

/// LUT + regressions + library bundled behind a cache.
///
/// Building the regressions is the only nontrivial cost, so the bundle
/// persists to `area_model_<libraryhash>.json` in the cache directory and
/// reloads when the library hash and build parameters match. Immutable
/// once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimator {
    pub library_hash: String,
    pub z_set: Vec<u32>,
    pub lr_samples: usize,
    pub seed: u64,
    pub lut: MultiplierCostTable,
    pub regressors: BTreeMap<u32, AccumulatorRegressor>,
}

/// Input precisions the full pipeline can encounter: layer 0 sees input
/// codes (at most 4 bits), layer 1 sees activation codes (at most 8).
pub const PIPELINE_Z_SET: [u32; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

impl AreaEstimator {
    pub fn build(
        lib: &GateLibrary,
        z_set: &[u32],
        lr_samples: usize,
        seed: u64,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        lib.validate()?;
        let hash = lib.content_hash();
        let cache_path = cache_dir.map(|d| d.join(format!("area_model_{hash}.json")));
        if let Some(p) = &cache_path {
            if let Ok(text) = std::fs::read_to_string(p) {
                match serde_json::from_str::<AreaEstimator>(&text) {
                    Ok(est)
                        if est.library_hash == hash
                            && est.z_set == z_set
                            && est.lr_samples == lr_samples
                            && est.seed == seed =>
                    {
                        return Ok(est);
                    }
                    Ok(_) => log::warn!("stale area model cache at {}", p.display()),
                    Err(e) => log::warn!("unreadable area model cache {}: {e}", p.display()),
                }
            }
        }
        let lut = build_multiplier_lut(lib, z_set);
        let mut regressors = BTreeMap::new();
        for &z in z_set {
            regressors.insert(z, fit_accumulator_lr(z, lib, lr_samples, seed)?);
        }
        let est = AreaEstimator {
            library_hash: hash,
            z_set: z_set.to_vec(),
            lr_samples,
            seed,
            lut,
            regressors,
        };
        if let Some(p) = &cache_path {
            let text = serde_json::to_string(&est).map_err(Error::from)?;
            if let Err(e) = std::fs::write(p, text) {
                log::warn!("could not write area model cache {}: {e}", p.display());
            }
        }
        Ok(est)
    }

    pub fn estimate(&self, q: &QuantizedMLP, lib: &GateLibrary) -> Result<AreaReport> {
        estimate_area(q, &self.lut, &self.regressors, lib)
    }
}
