//! Command-line shell over the library pipeline.
//!
//! Four commands mirror the four framework steps: `nas` trains and
//! selects a float model, `minimize` runs the accuracy/area search plus
//! the weight-sharing sweep, `emit` materializes one front member as
//! Verilog with golden vectors and a report, and `pareto-export` dumps
//! the front as a normalized CSV for plotting. Every command is
//! deterministic given its seed flags. Exit codes: 0 ok, 2 input error,
//! 3 infeasible constraint, 4 internal error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::dataio::{
    load_csv, split, DatasetManifest, Delimiter, LabelColumn, LoadOptions, NormStats, SplitSpec,
};
use crate::hwcost::{critical_path_delay, min_voltage, AreaEstimator, GateLibrary, PIPELINE_Z_SET};
use crate::model::{accuracy, nas_search, profile_activations, MLPModel, NasOptions};
use crate::optsearch::{
    cluster_sweep, load_last_checkpoint, materialize, search_front, EvaluatedDesign, Nsga2Config,
    ParetoFront, PipelineCtx,
};
use crate::quant::{quantize_model, QuantGenes};
use crate::{Error, Result};

/// Quantization-aware retraining budget per evaluated design.
const QAT_EPOCHS: usize = 30;
/// Bias-only retraining budget per cluster-sweep variant.
const CLUSTER_EPOCHS: usize = 15;
/// Accumulator-regression sample count for the cached area estimator.
const LR_SAMPLES: usize = 100;

#[derive(Parser, Debug)]
#[command(name = "bespoke-mlp", version, about = "Bespoke MLP circuit co-design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train candidate MLPs and keep the smallest accurate one.
    Nas(NasCmd),
    /// Search quantization/pruning/sharing designs for a Pareto front.
    Minimize(MinimizeCmd),
    /// Emit Verilog, golden vectors and a report for one front member.
    Emit(EmitCmd),
    /// Export the front as a CSV normalized against the baseline.
    ParetoExport(ExportCmd),
}

/// Flags shared by every command; a TOML config file can set the same
/// keys, with explicit flags taking precedence.
#[derive(Args, Debug, Clone, Default)]
pub struct CommonOpts {
    /// TOML file mirroring these flags (seed, pop, gens, sparsity_max,
    /// delay_ms, gate_lib, out)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for every randomized stage
    #[arg(long)]
    pub seed: Option<u64>,
    /// Search population size (even, >= 4)
    #[arg(long)]
    pub pop: Option<usize>,
    /// Search generations
    #[arg(long)]
    pub gens: Option<usize>,
    /// Largest pruning sparsity explored, 0.0..=0.5
    #[arg(long)]
    pub sparsity_max: Option<f64>,
    /// Critical-path delay constraint in milliseconds
    #[arg(long)]
    pub delay_ms: Option<f64>,
    /// Gate library file (TOML or JSON); built-in defaults when absent
    #[arg(long)]
    pub gate_lib: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    pop: Option<usize>,
    gens: Option<usize>,
    sparsity_max: Option<f64>,
    delay_ms: Option<f64>,
    gate_lib: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub seed: u64,
    pub pop: usize,
    pub gens: usize,
    pub sparsity_max: f64,
    pub delay_ms: f64,
    pub gate_lib: Option<PathBuf>,
    pub out: PathBuf,
}

impl CommonOpts {
    /// Merge flags over the config file over the documented defaults
    /// (population 40, 50 generations, sparsity up to 0.5, 200 ms).
    pub fn resolve(&self) -> Result<Resolved> {
        let file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let r = Resolved {
            seed: self.seed.or(file.seed).unwrap_or(0),
            pop: self.pop.or(file.pop).unwrap_or(40),
            gens: self.gens.or(file.gens).unwrap_or(50),
            sparsity_max: self.sparsity_max.or(file.sparsity_max).unwrap_or(0.5),
            delay_ms: self.delay_ms.or(file.delay_ms).unwrap_or(200.0),
            gate_lib: self.gate_lib.clone().or(file.gate_lib),
            out: self.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
        };
        if !(0.0..=0.5).contains(&r.sparsity_max) {
            return Err(Error::InvalidInput(format!(
                "sparsity_max must be in [0, 0.5], got {}",
                r.sparsity_max
            )));
        }
        if r.delay_ms <= 0.0 {
            return Err(Error::InvalidInput("delay_ms must be positive".into()));
        }
        Ok(r)
    }
}

impl Resolved {
    fn gate_library(&self) -> Result<GateLibrary> {
        match &self.gate_lib {
            Some(p) => GateLibrary::load(p),
            None => Ok(GateLibrary::default()),
        }
    }

    fn sparsity_max_idx(&self) -> i64 {
        ((self.sparsity_max / 0.1) + 1e-9).floor() as i64
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn estimator(&self, lib: &GateLibrary) -> Result<AreaEstimator> {
        // The fitted regression depends only on the library, so it is
        // cached under the output directory and shared across commands.
        AreaEstimator::build(lib, &PIPELINE_Z_SET, LR_SAMPLES, 0, Some(&self.out))
    }
}

#[derive(Args, Debug)]
pub struct NasCmd {
    /// Labelled CSV dataset (label in the last column by default)
    #[arg(long)]
    pub data: PathBuf,
    /// Candidate configurations to sample
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    /// Zero-based label column index; default is the last column
    #[arg(long)]
    pub label_col: Option<usize>,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct MinimizeCmd {
    /// Model JSON written by `nas`
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset manifest; defaults to manifest.json beside the model
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Continue from the last checkpoint in the output directory
    #[arg(long)]
    pub resume: bool,
    /// Skip the weight-sharing sweep after the format/sparsity search
    #[arg(long)]
    pub skip_sweep: bool,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct EmitCmd {
    /// Front JSON written by `minimize`
    #[arg(long)]
    pub front: PathBuf,
    /// Model JSON written by `nas`
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset manifest; defaults to manifest.json beside the model
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Pick this front index instead of the accuracy-threshold rule
    #[arg(long)]
    pub index: Option<usize>,
    /// Accuracy-loss ceiling for the default pick rule
    #[arg(long, default_value_t = 0.05)]
    pub max_loss: f64,
    /// Module name for the emitted Verilog
    #[arg(long, default_value = "net")]
    pub name: String,
    /// Golden vectors to emit (capped at the test-set size)
    #[arg(long, default_value_t = 64)]
    pub vectors: usize,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct ExportCmd {
    /// Front JSON written by `minimize`
    #[arg(long)]
    pub front: PathBuf,
    /// CSV file name inside the output directory
    #[arg(long, default_value = "pareto.csv")]
    pub csv: String,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Nas(c) => run_nas(&c),
        Command::Minimize(c) => run_minimize(&c),
        Command::Emit(c) => run_emit(&c),
        Command::ParetoExport(c) => run_export(&c),
    }
}

/// Header detection result for the manifest: `load_csv` auto-detects,
/// so replay the detection by attempting a headerless parse.
fn detect_header(path: &Path, opts: &LoadOptions, auto_rows: usize) -> bool {
    let forced = LoadOptions {
        has_header: Some(false),
        ..opts.clone()
    };
    match load_csv(path, &forced) {
        Ok((d, _)) => d.n_rows() != auto_rows,
        Err(_) => true,
    }
}

fn run_nas(cmd: &NasCmd) -> Result<()> {
    let r = cmd.common.resolve()?;
    r.ensure_out()?;
    let lib = r.gate_library()?;
    let opts = LoadOptions {
        label_column: match cmd.label_col {
            Some(i) => LabelColumn::Index(i),
            None => LabelColumn::Last,
        },
        ..LoadOptions::default()
    };
    let (dataset, label_map) = load_csv(&cmd.data, &opts)?;
    let split_spec = SplitSpec {
        seed: r.seed,
        ..SplitSpec::default()
    };
    let (train_raw, test_raw) = split(&dataset, &split_spec)?;
    let stats = NormStats::fit(&train_raw);
    let train = stats.apply(&train_raw)?;
    let test = stats.apply(&test_raw)?;

    let estimator = r.estimator(&lib)?;
    let price = |m: &MLPModel| -> Result<f64> {
        let profile = profile_activations(m, &train)?;
        let genes = QuantGenes::reference_for(m, &profile)?;
        let mask = crate::compress::PruneMask::all_true(m);
        let q = quantize_model(m, &genes, &mask, None, &train, r.seed)?;
        Ok(estimator.estimate(&q, &lib)?.total)
    };
    let nas_opts = NasOptions {
        budget: cmd.budget,
        ..NasOptions::default()
    };
    let outcome = nas_search(&train, &nas_opts, &price, r.seed)?;
    let test_accuracy = accuracy(&outcome.model, &test)?;

    let model_path = r.out.join("model.json");
    outcome.model.save(&model_path)?;
    let data_abs = std::fs::canonicalize(&cmd.data).map_err(|e| Error::io(&cmd.data, e))?;
    let manifest = DatasetManifest {
        dataset_path: data_abs.to_string_lossy().into_owned(),
        delimiter: match LoadOptions::default().delimiter {
            Delimiter::Char(c) => c.to_string(),
            Delimiter::Whitespace => "whitespace".into(),
        },
        label_column: opts.label_column.clone(),
        has_header: detect_header(&cmd.data, &opts, dataset.n_rows()),
        attribute_names: dataset.attribute_names.clone(),
        label_map,
        n_classes: dataset.n_classes,
        normalization: stats,
        split: split_spec,
    };
    manifest.save(&r.out.join("manifest.json"))?;
    let report = serde_json::json!({
        "winner": outcome.winner,
        "hidden_dim": outcome.model.hidden_dim,
        "test_accuracy": test_accuracy,
        "candidates": outcome.candidates,
    });
    write_json(&r.out.join("nas_report.json"), &report)?;
    println!(
        "nas: hidden_dim={} test_accuracy={:.4} ({} candidates) -> {}",
        outcome.model.hidden_dim,
        test_accuracy,
        outcome.candidates.len(),
        model_path.display()
    );
    Ok(())
}

fn manifest_beside(model: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        model
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("manifest.json")
    })
}

fn build_ctx(model_path: &Path, manifest_path: &Path, r: &Resolved) -> Result<PipelineCtx> {
    let model = MLPModel::load(model_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let (train, test) = manifest.prepare(base)?;
    let lib = r.gate_library()?;
    let estimator = r.estimator(&lib)?;
    PipelineCtx::new(
        model,
        train,
        test,
        lib,
        estimator,
        QAT_EPOCHS,
        CLUSTER_EPOCHS,
        r.seed,
    )
}

fn run_minimize(cmd: &MinimizeCmd) -> Result<()> {
    let r = cmd.common.resolve()?;
    r.ensure_out()?;
    let manifest_path = manifest_beside(&cmd.model, &cmd.manifest);
    let ctx = build_ctx(&cmd.model, &manifest_path, &r)?;
    let cfg = Nsga2Config {
        pop_size: r.pop,
        generations: r.gens,
        seed: r.seed,
        ..Nsga2Config::default()
    };
    let ckpt = r.out.join("checkpoints.jsonl");
    let resume_rec = if cmd.resume && ckpt.exists() {
        Some(load_last_checkpoint(&ckpt)?)
    } else {
        None
    };
    let mut front = search_front(
        &ctx,
        &cfg,
        r.sparsity_max_idx(),
        Some(&ckpt),
        resume_rec.as_ref(),
    )?;
    if !cmd.skip_sweep {
        front = cluster_sweep(&ctx, &front)?;
    }
    let front_path = r.out.join("front.json");
    front.save(&front_path)?;
    println!(
        "minimize: {} members, baseline accuracy {:.4}, baseline area {:.1} -> {}",
        front.members.len(),
        front.baseline_accuracy,
        front.baseline_area,
        front_path.display()
    );
    Ok(())
}

/// The documented pick rule: cheapest member whose accuracy loss stays
/// within the ceiling.
pub fn pick_member<'f>(front: &'f ParetoFront, max_loss: f64) -> Result<&'f EvaluatedDesign> {
    front
        .members
        .iter()
        .filter(|m| m.accuracy_loss <= max_loss)
        .min_by(|a, b| a.estimated_area.total_cmp(&b.estimated_area))
        .ok_or_else(|| {
            let best = front
                .members
                .iter()
                .map(|m| m.accuracy_loss)
                .fold(f64::INFINITY, f64::min);
            Error::InvalidInput(format!(
                "no front member within accuracy loss {max_loss}; best is {best}"
            ))
        })
}

fn run_emit(cmd: &EmitCmd) -> Result<()> {
    let r = cmd.common.resolve()?;
    r.ensure_out()?;
    let front = ParetoFront::load(&cmd.front)?;
    let member = match cmd.index {
        Some(i) => front.members.get(i).ok_or_else(|| {
            Error::InvalidInput(format!(
                "front index {i} out of range ({} members)",
                front.members.len()
            ))
        })?,
        None => pick_member(&front, cmd.max_loss)?,
    };
    let manifest_path = manifest_beside(&cmd.model, &cmd.manifest);
    let ctx = build_ctx(&cmd.model, &manifest_path, &r)?;
    let q = materialize(&ctx, member)?;

    let constraint_s = r.delay_ms / 1e3;
    let voltage = min_voltage(&q, &ctx.lib, constraint_s)?;
    let delay_s = critical_path_delay(&q, &ctx.lib, voltage)?;
    let area = ctx.estimator.estimate(&q, &ctx.lib)?;

    let plan = crate::codegen::plan_netlist(&q)?;
    let verilog = crate::codegen::emit_verilog(&plan, &cmd.name);
    let n_vec = cmd.vectors.min(ctx.test.n_rows());
    let vectors = crate::codegen::emit_golden_vectors(&q, &ctx.test, n_vec)?;

    let v_path = r.out.join(format!("{}.v", cmd.name));
    let vec_path = r.out.join(format!("{}_vectors.txt", cmd.name));
    std::fs::write(&v_path, &verilog).map_err(|e| Error::io(&v_path, e))?;
    std::fs::write(&vec_path, &vectors).map_err(|e| Error::io(&vec_path, e))?;
    let report = serde_json::json!({
        "chromosome": member.chromosome,
        "cluster_k": member.cluster_k,
        "accuracy": member.accuracy,
        "accuracy_loss": member.accuracy_loss,
        "baseline_accuracy": front.baseline_accuracy,
        "voltage": voltage,
        "delay_s": delay_s,
        "delay_constraint_s": constraint_s,
        "area": {
            "multipliers": area.multipliers,
            "accumulators": area.accumulator,
            "qrelu": area.qrelu,
            "total": area.total,
        },
        "multiplier_census": area.census,
        // Names, not paths: report bytes must not depend on --out.
        "files": {
            "verilog": format!("{}.v", cmd.name),
            "vectors": format!("{}_vectors.txt", cmd.name),
        },
    });
    write_json(&r.out.join("report.json"), &report)?;
    println!(
        "emit: area {:.1} at {voltage:.2} V (delay {delay_s:.3e} s) -> {}",
        area.total,
        v_path.display()
    );
    Ok(())
}

/// CSV rows for a front, normalized against the baseline design
/// (accuracy and area both 1.0 at the baseline by construction).
pub fn export_csv(front: &ParetoFront) -> String {
    let mut out = String::from(
        "accuracy_norm,area_norm,weight_bits,weight_int,bias_bits,bias_int,\
         act_bits,act_int,in_bits,in_int,sparsity_idx,k_hidden,k_output\n",
    );
    for m in &front.members {
        let acc_n = m.accuracy / front.baseline_accuracy;
        let area_n = m.estimated_area / front.baseline_area;
        let genes: Vec<String> = m.chromosome.iter().map(|g| g.to_string()).collect();
        let (kh, ko) = match m.cluster_k {
            Some([h, o]) => (h.to_string(), o.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{acc_n},{area_n},{},{kh},{ko}\n",
            genes.join(",")
        ));
    }
    out
}

fn run_export(cmd: &ExportCmd) -> Result<()> {
    let r = cmd.common.resolve()?;
    r.ensure_out()?;
    let front = ParetoFront::load(&cmd.front)?;
    let csv = export_csv(&front);
    let path = r.out.join(&cmd.csv);
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    println!("pareto-export: {} rows -> {}", front.members.len(), path.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
