//! Multi-objective search over quantization and pruning decisions: a
//! small generic NSGA-II core over integer gene vectors, the
//! accuracy-loss/area evaluation pipeline it drives, and the per-layer
//! cluster-count sweep applied to the resulting front.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compress::{cluster_weights, prune_low_magnitude, retrain_frozen};
use crate::dataio::Dataset;
use crate::hwcost::{AreaEstimator, GateLibrary};
use crate::model::{accuracy, profile_activations, MLPModel, TrainConfig};
use crate::quant::{qat_retrain, quantize_model, quantized_accuracy, QuantGenes};
use crate::seeds::derive_seed;
use crate::{Error, Result};

/// Finite stand-in for "worst possible area" so failed evaluations stay
/// JSON-serializable and strictly dominated by every real design.
pub const WORST_AREA: f64 = 1e30;

/// Inclusive per-gene bounds of an integer search space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSpace {
    pub bounds: Vec<(i64, i64)>,
}

impl GeneSpace {
    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() || self.bounds.iter().any(|&(lo, hi)| lo > hi) {
            return Err(Error::InvalidInput("malformed gene bounds".into()));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<i64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect()
    }

    fn clamp(&self, genes: &[i64]) -> Vec<i64> {
        self.bounds
            .iter()
            .zip(genes)
            .map(|(&(lo, hi), &g)| g.clamp(lo, hi))
            .collect()
    }
}

pub type Objectives = [f64; 2];

/// True iff `a` is at least as good on both objectives and strictly
/// better on one (minimization).
pub fn dominates(a: Objectives, b: Objectives) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Pareto ranks: rank 0 is the non-dominated set, rank k the set that
/// becomes non-dominated once ranks below k are removed.
pub fn nondominated_sort(points: &[Objectives]) -> Vec<usize> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n]; // how many dominate i
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates(points[i], points[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut ranks = vec![0usize; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut rank = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            ranks[i] = rank;
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        rank += 1;
        current = next;
    }
    ranks
}

/// Crowding distance within one front: boundary points are infinite,
/// interior points sum their normalized neighbor gaps per objective.
pub fn crowding_distance(points: &[Objectives]) -> Vec<f64> {
    let n = points.len();
    let mut dist = vec![0.0f64; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for k in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[a][k].total_cmp(&points[b][k]).then(a.cmp(&b)));
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = points[order[n - 1]][k] - points[order[0]][k];
        if range > 0.0 {
            for w in 0..n - 2 {
                let i = order[w + 1];
                dist[i] += (points[order[w + 2]][k] - points[order[w]][k]) / range;
            }
        }
    }
    dist
}

/// O(n^2) audit that no member strictly dominates another. Equal
/// objective pairs pass: strict domination requires an actual gap.
pub fn is_mutually_nondominated(points: &[Objectives]) -> bool {
    points
        .iter()
        .all(|&a| points.iter().all(|&b| !dominates(a, b)))
}

/// Dominated hypervolume of a 2-objective minimization front against a
/// reference point worse than every member.
pub fn hypervolume_2d(points: &[Objectives], reference: Objectives) -> f64 {
    let mut front: Vec<Objectives> = points
        .iter()
        .copied()
        .filter(|&p| p[0] < reference[0] && p[1] < reference[1])
        .collect();
    let ranks = nondominated_sort(&front);
    let mut nd: Vec<Objectives> = front
        .drain(..)
        .zip(ranks)
        .filter(|&(_, r)| r == 0)
        .map(|(p, _)| p)
        .collect();
    nd.sort_by(|a, b| a[0].total_cmp(&b[0]).then(b[1].total_cmp(&a[1])));
    nd.dedup();
    let mut hv = 0.0;
    let mut prev_f2 = reference[1];
    for p in nd {
        if p[1] < prev_f2 {
            hv += (reference[0] - p[0]) * (prev_f2 - p[1]);
            prev_f2 = p[1];
        }
    }
    hv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGenes {
    pub genes: Vec<i64>,
    pub objectives: Objectives,
}

/// One generation's full population; the unit of the JSONL checkpoint
/// stream and of resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub generation: usize,
    pub population: Vec<ScoredGenes>,
}

impl CheckpointRecord {
    /// Rank-0 members of the stored population.
    pub fn front(&self) -> Vec<ScoredGenes> {
        let objs: Vec<Objectives> = self.population.iter().map(|s| s.objectives).collect();
        let ranks = nondominated_sort(&objs);
        finalize_front(
            self.population
                .iter()
                .zip(&ranks)
                .filter(|&(_, &r)| r == 0)
                .map(|(s, _)| s.clone())
                .collect(),
        )
    }
}

/// Read the last record of a JSONL checkpoint stream.
pub fn load_last_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let last = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .next_back()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty checkpoint", path.display())))?;
    serde_json::from_str(last).map_err(Error::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nsga2Config {
    pub pop_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub gene_swap_prob: f64,
    pub seed: u64,
}

impl Default for Nsga2Config {
    fn default() -> Self {
        Nsga2Config {
            pop_size: 40,
            generations: 50,
            crossover_rate: 0.9,
            gene_swap_prob: 0.5,
            seed: 0,
        }
    }
}

/// Elitist NSGA-II over an integer gene space, minimizing two objectives.
///
/// Standard loop: fast non-dominated sorting, crowding distance, binary
/// tournament selection, uniform crossover, per-gene uniform-reset
/// mutation at rate 1/n_genes, then elitist truncation of the combined
/// parent+offspring pool. `seeds` are injected (clamped) into the initial
/// population ahead of random fill. Every generation's RNG is derived
/// independently from the config seed, so a run resumed from a
/// `CheckpointRecord` continues bit-identically to an uninterrupted one.
/// Returns the deduplicated rank-0 front of the final population.
pub fn nsga2(
    space: &GeneSpace,
    cfg: &Nsga2Config,
    seeds: &[Vec<i64>],
    resume: Option<&CheckpointRecord>,
    eval: &mut dyn FnMut(&[i64]) -> Objectives,
    on_generation: &mut dyn FnMut(&CheckpointRecord) -> Result<()>,
) -> Result<Vec<ScoredGenes>> {
    space.validate()?;
    if cfg.pop_size < 4 || cfg.pop_size % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "population size must be even and at least 4, got {}",
            cfg.pop_size
        )));
    }
    let n_genes = space.bounds.len();

    let (mut population, start_gen) = match resume {
        Some(rec) => {
            if rec.population.len() != cfg.pop_size {
                return Err(Error::InvalidInput(format!(
                    "checkpoint population {} does not match configured size {}",
                    rec.population.len(),
                    cfg.pop_size
                )));
            }
            (rec.population.clone(), rec.generation + 1)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX]));
            let mut pop: Vec<ScoredGenes> = Vec::with_capacity(cfg.pop_size);
            for s in seeds.iter().take(cfg.pop_size) {
                let genes = space.clamp(s);
                let objectives = eval(&genes);
                pop.push(ScoredGenes { genes, objectives });
            }
            while pop.len() < cfg.pop_size {
                let genes = space.sample(&mut rng);
                let objectives = eval(&genes);
                pop.push(ScoredGenes { genes, objectives });
            }
            let rec = CheckpointRecord {
                generation: 0,
                population: pop.clone(),
            };
            on_generation(&rec)?;
            (pop, 1)
        }
    };

    for gen in start_gen..=cfg.generations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[gen as u64]));
        let objs: Vec<Objectives> = population.iter().map(|s| s.objectives).collect();
        let ranks = nondominated_sort(&objs);
        let crowd = crowding_by_front(&objs, &ranks);

        let tournament = |rng: &mut ChaCha8Rng| -> usize {
            let a = rng.gen_range(0..population.len());
            let b = rng.gen_range(0..population.len());
            if ranks[a] < ranks[b] || (ranks[a] == ranks[b] && crowd[a] > crowd[b]) {
                a
            } else {
                b
            }
        };

        let mut offspring: Vec<ScoredGenes> = Vec::with_capacity(cfg.pop_size);
        while offspring.len() < cfg.pop_size {
            let pa = tournament(&mut rng);
            let pb = tournament(&mut rng);
            let mut c1 = population[pa].genes.clone();
            let mut c2 = population[pb].genes.clone();
            if rng.gen::<f64>() < cfg.crossover_rate {
                for g in 0..n_genes {
                    if rng.gen::<f64>() < cfg.gene_swap_prob {
                        std::mem::swap(&mut c1[g], &mut c2[g]);
                    }
                }
            }
            for child in [&mut c1, &mut c2] {
                for g in 0..n_genes {
                    if rng.gen::<f64>() < 1.0 / n_genes as f64 {
                        let (lo, hi) = space.bounds[g];
                        child[g] = rng.gen_range(lo..=hi);
                    }
                }
            }
            for genes in [c1, c2] {
                let objectives = eval(&genes);
                offspring.push(ScoredGenes { genes, objectives });
            }
        }

        // Elitist environmental selection over parents + offspring.
        let mut pool = population;
        pool.append(&mut offspring);
        let pool_objs: Vec<Objectives> = pool.iter().map(|s| s.objectives).collect();
        let pool_ranks = nondominated_sort(&pool_objs);
        let pool_crowd = crowding_by_front(&pool_objs, &pool_ranks);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| {
            pool_ranks[a]
                .cmp(&pool_ranks[b])
                .then(pool_crowd[b].total_cmp(&pool_crowd[a]))
                .then(a.cmp(&b))
        });
        population = order[..cfg.pop_size]
            .iter()
            .map(|&i| pool[i].clone())
            .collect();

        let rec = CheckpointRecord {
            generation: gen,
            population: population.clone(),
        };
        on_generation(&rec)?;
    }

    let objs: Vec<Objectives> = population.iter().map(|s| s.objectives).collect();
    let ranks = nondominated_sort(&objs);
    Ok(finalize_front(
        population
            .into_iter()
            .zip(ranks)
            .filter(|&(_, r)| r == 0)
            .map(|(s, _)| s)
            .collect(),
    ))
}

/// Crowding distances computed per front, as NSGA-II requires.
fn crowding_by_front(objs: &[Objectives], ranks: &[usize]) -> Vec<f64> {
    let mut crowd = vec![0.0f64; objs.len()];
    let max_rank = ranks.iter().copied().max().unwrap_or(0);
    for r in 0..=max_rank {
        let idx: Vec<usize> = (0..objs.len()).filter(|&i| ranks[i] == r).collect();
        let pts: Vec<Objectives> = idx.iter().map(|&i| objs[i]).collect();
        for (&i, d) in idx.iter().zip(crowding_distance(&pts)) {
            crowd[i] = d;
        }
    }
    crowd
}

/// Sort by objectives then genes, dropping duplicate gene vectors.
fn finalize_front(mut front: Vec<ScoredGenes>) -> Vec<ScoredGenes> {
    front.sort_by(|a, b| {
        a.objectives[0]
            .total_cmp(&b.objectives[0])
            .then(a.objectives[1].total_cmp(&b.objectives[1]))
            .then(a.genes.cmp(&b.genes))
    });
    front.dedup_by(|a, b| a.genes == b.genes);
    front
}

// ---------------------------------------------------------------------
// The quantization/pruning chromosome and its evaluation pipeline.
// ---------------------------------------------------------------------

/// Chromosome layout: [P_w, I_w, P_b, I_b, P_a, I_a, P_in, I_in, s_idx]
/// (total and integer bits of the weight, bias, activation and input
/// formats, then the sparsity step index, 0.1 per step).
pub const CHROMOSOME_LEN: usize = 9;

/// Search bounds for the chromosome; `sparsity_max_idx` caps the pruning
/// gene (2 means sparsities {0.0, 0.1, 0.2}).
pub fn chromosome_space(sparsity_max_idx: i64) -> GeneSpace {
    GeneSpace {
        bounds: vec![
            (2, 8), // weight total bits (sign + at least one magnitude bit)
            (0, 7), // weight integer bits
            (2, 8), // bias total bits
            (0, 7), // bias integer bits
            (1, 8), // activation total bits
            (0, 8), // activation integer bits
            (1, 4), // input total bits
            (0, 4), // input integer bits
            (0, sparsity_max_idx.clamp(0, 5)),
        ],
    }
}

/// Decode a raw chromosome into formats, clamping integer bits into each
/// format's feasible range. Returns the canonical (clamped) chromosome
/// alongside; memoization keys on the canonical form so aliased raw
/// vectors share one evaluation.
pub fn decode_chromosome(raw: &[i64]) -> Result<(Vec<i64>, QuantGenes)> {
    if raw.len() != CHROMOSOME_LEN {
        return Err(Error::InvalidInput(format!(
            "chromosome must have {CHROMOSOME_LEN} genes, got {}",
            raw.len()
        )));
    }
    let p_w = raw[0].clamp(2, 8) as u32;
    let i_w = raw[1].clamp(0, p_w as i64 - 1) as u32;
    let p_b = raw[2].clamp(2, 8) as u32;
    let i_b = raw[3].clamp(0, p_b as i64 - 1) as u32;
    let p_a = raw[4].clamp(1, 8) as u32;
    let i_a = raw[5].clamp(0, p_a as i64) as u32;
    let p_in = raw[6].clamp(1, 4) as u32;
    let i_in = raw[7].clamp(0, p_in as i64) as u32;
    let s_idx = raw[8].clamp(0, 5);
    let genes = QuantGenes {
        weights: crate::quant::FixedPointFormat::new_signed(p_w, i_w)?,
        biases: crate::quant::FixedPointFormat::new_signed(p_b, i_b)?,
        activations: crate::quant::FixedPointFormat::new_unsigned(p_a, i_a)?,
        inputs: crate::quant::FixedPointFormat::new_unsigned(p_in, i_in)?,
        sparsity: s_idx as f64 * 0.1,
    };
    let canonical = vec![
        p_w as i64, i_w as i64, p_b as i64, i_b as i64, p_a as i64, i_a as i64, p_in as i64,
        i_in as i64, s_idx,
    ];
    Ok((canonical, genes))
}

/// Encode formats back into a canonical chromosome.
pub fn encode_chromosome(genes: &QuantGenes) -> Vec<i64> {
    vec![
        genes.weights.total_bits as i64,
        genes.weights.integer_bits as i64,
        genes.biases.total_bits as i64,
        genes.biases.integer_bits as i64,
        genes.activations.total_bits as i64,
        genes.activations.integer_bits as i64,
        genes.inputs.total_bits as i64,
        genes.inputs.integer_bits as i64,
        (genes.sparsity / 0.1).round() as i64,
    ]
}

/// One evaluated point of the design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedDesign {
    pub chromosome: Vec<i64>,
    pub genes: QuantGenes,
    /// Cluster counts (hidden layer, output layer) when the design went
    /// through the weight-sharing sweep.
    pub cluster_k: Option<[usize; 2]>,
    /// Test accuracy of the integer datapath.
    pub accuracy: f64,
    /// Baseline (float NAS model) test accuracy minus design accuracy.
    pub accuracy_loss: f64,
    pub estimated_area: f64,
    pub overflow_rows: usize,
    pub evaluation_seed: u64,
}

impl EvaluatedDesign {
    pub fn objectives(&self) -> Objectives {
        [self.accuracy_loss, self.estimated_area]
    }
}

/// Accuracy/area front, sorted by estimated area ascending, together
/// with the un-minimized baseline it is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub baseline_accuracy: f64,
    pub baseline_area: f64,
    pub members: Vec<EvaluatedDesign>,
}

impl ParetoFront {
    pub fn validate(&self) -> Result<()> {
        let objs: Vec<Objectives> = self.members.iter().map(|m| m.objectives()).collect();
        if !is_mutually_nondominated(&objs) {
            return Err(Error::InvalidInput("front members dominate each other".into()));
        }
        if self
            .members
            .windows(2)
            .any(|w| w[0].estimated_area > w[1].estimated_area)
        {
            return Err(Error::InvalidInput("front not sorted by area".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let front: ParetoFront = serde_json::from_str(&text).map_err(Error::from)?;
        front.validate()?;
        Ok(front)
    }
}

/// Keep the non-dominated subset, dedup exact repeats, sort by area.
pub fn pareto_filter(mut designs: Vec<EvaluatedDesign>) -> Vec<EvaluatedDesign> {
    designs.sort_by(|a, b| {
        a.estimated_area
            .total_cmp(&b.estimated_area)
            .then(a.accuracy_loss.total_cmp(&b.accuracy_loss))
            .then(a.chromosome.cmp(&b.chromosome))
    });
    designs.dedup_by(|a, b| a.chromosome == b.chromosome && a.cluster_k == b.cluster_k);
    let objs: Vec<Objectives> = designs.iter().map(|d| d.objectives()).collect();
    let ranks = nondominated_sort(&objs);
    let mut front: Vec<EvaluatedDesign> = designs
        .into_iter()
        .zip(ranks)
        .filter(|&(_, r)| r == 0)
        .map(|(d, _)| d)
        .collect();
    // Identical objective pairs are mutually non-dominated; keep one.
    front.dedup_by(|a, b| a.objectives() == b.objectives());
    front
}

/// Everything an evaluation needs: the trained float model, splits, the
/// area estimator and the retraining budget. Evaluations memoize on the
/// canonical chromosome under a lock, so they are safe to share.
pub struct PipelineCtx {
    pub model: MLPModel,
    pub train: Dataset,
    pub test: Dataset,
    pub lib: GateLibrary,
    pub estimator: AreaEstimator,
    pub baseline_accuracy: f64,
    pub baseline_area: f64,
    pub reference_genes: QuantGenes,
    pub qat_epochs: usize,
    pub cluster_epochs: usize,
    pub seed: u64,
    memo: Mutex<BTreeMap<Vec<i64>, EvaluatedDesign>>,
}

impl PipelineCtx {
    /// Build the context and price the un-minimized baseline: the float
    /// model quantized at reference precision (8-bit weights/biases,
    /// 4-bit inputs, 8-bit activations, no pruning, no retraining).
    pub fn new(
        model: MLPModel,
        train: Dataset,
        test: Dataset,
        lib: GateLibrary,
        estimator: AreaEstimator,
        qat_epochs: usize,
        cluster_epochs: usize,
        seed: u64,
    ) -> Result<Self> {
        let baseline_accuracy = accuracy(&model, &test)?;
        let profile = profile_activations(&model, &train)?;
        let reference_genes = QuantGenes::reference_for(&model, &profile)?;
        let mask = crate::compress::PruneMask::all_true(&model);
        let baseline_q = quantize_model(&model, &reference_genes, &mask, None, &train, seed)?;
        let baseline_area = estimator.estimate(&baseline_q, &lib)?.total;
        Ok(PipelineCtx {
            model,
            train,
            test,
            lib,
            estimator,
            baseline_accuracy,
            baseline_area,
            reference_genes,
            qat_epochs,
            cluster_epochs,
            seed,
            memo: Mutex::new(BTreeMap::new()),
        })
    }

    fn qat_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        }
    }

    /// prune -> quantization-aware retrain -> quantize -> score.
    /// Also returns the retrained float model for the sharing sweep.
    fn run_pipeline(
        &self,
        canonical: &[i64],
        genes: &QuantGenes,
    ) -> Result<(EvaluatedDesign, MLPModel)> {
        let eval_seed = derive_seed(
            self.seed,
            &canonical.iter().map(|&g| g as u64).collect::<Vec<_>>(),
        );
        self.run_pipeline_seeded(canonical, genes, eval_seed)
    }

    /// Same pipeline with the evaluation seed pinned. Replaying a
    /// recorded member must reproduce it exactly, whatever seed the
    /// replaying context was built with.
    fn run_pipeline_seeded(
        &self,
        canonical: &[i64],
        genes: &QuantGenes,
        eval_seed: u64,
    ) -> Result<(EvaluatedDesign, MLPModel)> {
        let mask = prune_low_magnitude(&self.model, genes.sparsity)?;
        let cfg = self.qat_config(self.qat_epochs, eval_seed);
        let retrained = qat_retrain(&self.model, genes, &cfg, &mask, &self.train)?;
        let q = quantize_model(&retrained, genes, &mask, None, &self.train, eval_seed)?;
        let eval = quantized_accuracy(&q, &self.test)?;
        let area = self.estimator.estimate(&q, &self.lib)?.total;
        Ok((
            EvaluatedDesign {
                chromosome: canonical.to_vec(),
                genes: *genes,
                cluster_k: None,
                accuracy: eval.accuracy,
                accuracy_loss: self.baseline_accuracy - eval.accuracy,
                estimated_area: area,
                overflow_rows: eval.overflow_rows,
                evaluation_seed: eval_seed,
            },
            retrained,
        ))
    }

    /// Memoized evaluation; any pipeline failure (infeasible format
    /// combination, divergence) becomes worst-case fitness instead of
    /// aborting the search.
    pub fn evaluate(&self, raw: &[i64]) -> EvaluatedDesign {
        let (canonical, genes) = match decode_chromosome(raw) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("undecodable chromosome {raw:?}: {e}");
                return self.worst_case(raw.to_vec());
            }
        };
        if let Some(hit) = self.memo.lock().expect("memo lock").get(&canonical) {
            return hit.clone();
        }
        let design = match self.run_pipeline(&canonical, &genes) {
            Ok((d, _)) => d,
            Err(e) => {
                log::warn!("chromosome {canonical:?} failed: {e}");
                let mut d = self.worst_case(canonical.clone());
                d.genes = genes;
                d
            }
        };
        self.memo
            .lock()
            .expect("memo lock")
            .insert(canonical, design.clone());
        design
    }

    fn worst_case(&self, chromosome: Vec<i64>) -> EvaluatedDesign {
        EvaluatedDesign {
            chromosome,
            genes: self.reference_genes,
            cluster_k: None,
            accuracy: 0.0,
            accuracy_loss: 1.0,
            estimated_area: WORST_AREA,
            overflow_rows: 0,
            evaluation_seed: 0,
        }
    }

    /// Warm-start chromosomes: the reference precision at every sparsity
    /// level in range. Seeding them guarantees the search's front starts
    /// at least as good as quantization-only and pruning-only designs.
    pub fn warm_start(&self, sparsity_max_idx: i64) -> Vec<Vec<i64>> {
        let mut base = encode_chromosome(&self.reference_genes);
        let mut out = Vec::new();
        for s in 0..=sparsity_max_idx.clamp(0, 5) {
            base[8] = s;
            out.push(base.clone());
        }
        out
    }
}

/// NSGA-II over the quantization/pruning chromosome, with optional JSONL
/// checkpointing and resumption.
pub fn search_front(
    ctx: &PipelineCtx,
    cfg: &Nsga2Config,
    sparsity_max_idx: i64,
    checkpoint_path: Option<&Path>,
    resume: Option<&CheckpointRecord>,
) -> Result<ParetoFront> {
    let space = chromosome_space(sparsity_max_idx);
    let seeds = ctx.warm_start(sparsity_max_idx);
    let mut sink: Box<dyn FnMut(&CheckpointRecord) -> Result<()>> = match checkpoint_path {
        Some(p) => {
            use std::io::Write;
            let mut file = if resume.is_some() {
                std::fs::OpenOptions::new()
                    .append(true)
                    .create(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?
            } else {
                std::fs::File::create(p).map_err(|e| Error::io(p, e))?
            };
            let p = p.to_path_buf();
            Box::new(move |rec: &CheckpointRecord| {
                let line = serde_json::to_string(rec).map_err(Error::from)?;
                writeln!(file, "{line}").map_err(|e| Error::io(&p, e))
            })
        }
        None => Box::new(|_| Ok(())),
    };
    let front = nsga2(
        &space,
        cfg,
        &seeds,
        resume,
        &mut |genes| {
            let d = ctx.evaluate(genes);
            d.objectives()
        },
        &mut sink,
    )?;
    let members = pareto_filter(front.iter().map(|s| ctx.evaluate(&s.genes)).collect());
    Ok(ParetoFront {
        baseline_accuracy: ctx.baseline_accuracy,
        baseline_area: ctx.baseline_area,
        members,
    })
}

/// Weight-sharing sweep over a front: for every member and every
/// feasible per-layer cluster-count pair, cluster the retrained weights,
/// retrain the biases with the shared weights frozen, re-quantize and
/// re-score; merge with the originals and keep the non-dominated set.
///
/// Cluster counts range over 1..=min(9, largest same-input weight group
/// of the layer); pairs that would be identity clustering in both layers
/// reproduce the original design and are skipped.
pub fn cluster_sweep(ctx: &PipelineCtx, front: &ParetoFront) -> Result<ParetoFront> {
    let mut pool: Vec<EvaluatedDesign> = front.members.clone();
    for member in &front.members {
        if member.estimated_area >= WORST_AREA {
            continue;
        }
        let (canonical, genes) = decode_chromosome(&member.chromosome)?;
        let Ok((_, retrained)) =
            ctx.run_pipeline_seeded(&canonical, &genes, member.evaluation_seed)
        else {
            continue;
        };
        let mask = prune_low_magnitude(&ctx.model, genes.sparsity)?;
        let cap = |l: usize| -> usize {
            let layer = &retrained.layers[l];
            (0..layer.in_dim())
                .map(|j| (0..layer.out_dim()).filter(|&r| mask.is_kept(l, r, j)).count())
                .max()
                .unwrap_or(0)
                .min(9)
        };
        let (cap_h, cap_o) = (cap(0).max(1), cap(1).max(1));
        for k_h in 1..=cap_h {
            for k_o in 1..=cap_o {
                if k_h == cap_h && k_o == cap_o && cap_h <= 9 && cap_o <= 9 {
                    // Identity clustering in both layers: the variant is
                    // the original design.
                    continue;
                }
                match sweep_variant(ctx, member, &retrained, &mask, &genes, k_h, k_o) {
                    Ok(d) => pool.push(d),
                    Err(e) => log::warn!(
                        "cluster variant K=({k_h},{k_o}) of {:?} failed: {e}",
                        member.chromosome
                    ),
                }
            }
        }
    }
    Ok(ParetoFront {
        baseline_accuracy: front.baseline_accuracy,
        baseline_area: front.baseline_area,
        members: pareto_filter(pool),
    })
}

fn sweep_variant(
    ctx: &PipelineCtx,
    member: &EvaluatedDesign,
    retrained: &MLPModel,
    mask: &crate::compress::PruneMask,
    genes: &QuantGenes,
    k_h: usize,
    k_o: usize,
) -> Result<EvaluatedDesign> {
    // The clustering stage reseeds from the base evaluation seed and the
    // cluster pair; the member records the base seed so materialize can
    // replay both stages from it.
    let stage_seed = derive_seed(member.evaluation_seed, &[k_h as u64, k_o as u64]);
    let assignment = cluster_weights(&retrained.layers, mask, &[k_h, k_o], stage_seed)?;
    let cfg = ctx.qat_config(ctx.cluster_epochs, stage_seed);
    let frozen = retrain_frozen(retrained, &assignment, genes, &cfg, &ctx.train)?;
    let q = quantize_model(&frozen, genes, mask, Some(&assignment), &ctx.train, stage_seed)?;
    let eval = quantized_accuracy(&q, &ctx.test)?;
    let area = ctx.estimator.estimate(&q, &ctx.lib)?.total;
    Ok(EvaluatedDesign {
        chromosome: member.chromosome.clone(),
        genes: *genes,
        cluster_k: Some([k_h, k_o]),
        accuracy: eval.accuracy,
        accuracy_loss: ctx.baseline_accuracy - eval.accuracy,
        estimated_area: area,
        overflow_rows: eval.overflow_rows,
        evaluation_seed: member.evaluation_seed,
    })
}

/// Rebuild the quantized network for a front member (the emit path needs
/// the artifact, not just the scores).
pub fn materialize(ctx: &PipelineCtx, d: &EvaluatedDesign) -> Result<crate::quant::QuantizedMLP> {
    let (canonical, genes) = decode_chromosome(&d.chromosome)?;
    // Replay from the recorded evaluation seed, never from ctx.seed: the
    // front may be reloaded by a command run with a different seed flag,
    // and the rebuilt network must still match the recorded scores.
    let (_, retrained) = ctx.run_pipeline_seeded(&canonical, &genes, d.evaluation_seed)?;
    let mask = prune_low_magnitude(&ctx.model, genes.sparsity)?;
    match d.cluster_k {
        None => quantize_model(
            &retrained,
            &genes,
            &mask,
            None,
            &ctx.train,
            d.evaluation_seed,
        ),
        Some([k_h, k_o]) => {
            let stage_seed = derive_seed(d.evaluation_seed, &[k_h as u64, k_o as u64]);
            let assignment = cluster_weights(&retrained.layers, &mask, &[k_h, k_o], stage_seed)?;
            let cfg = ctx.qat_config(ctx.cluster_epochs, stage_seed);
            let frozen = retrain_frozen(&retrained, &assignment, &genes, &cfg, &ctx.train)?;
            quantize_model(
                &frozen,
                &genes,
                &mask,
                Some(&assignment),
                &ctx.train,
                stage_seed,
            )
        }
    }
}
