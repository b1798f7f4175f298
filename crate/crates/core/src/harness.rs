//! Simulation studies: sources with known or data-driven ideal p-values,
//! misclassification metrics, and drivers for method comparisons, scaling
//! in `m` and effort-versus-undecided curves.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    mcfdr_run, naive_run, ActiveEstimate, BaselineOutcome, McfdrConfig, NaiveConfig,
};
use crate::engine::{forced_classification, EngineConfig, Mmctest, RunTrace};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::procedures::{PValues, RejectionSet};
use crate::source::{CountingSource, IndicatorStream, SampleSource};

/// Mixes a master seed with stream coordinates (SplitMix64 finalizer).
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Bernoulli indicators with known success probabilities `p*`.
///
/// Hypothesis `i` reads ChaCha8 stream `i` under the master seed, one
/// 64-bit word per indicator, so its sequence is fixed regardless of
/// batching and can be fast-forwarded in O(1).
#[derive(Debug, Clone)]
pub struct BernoulliOracle {
    pstar: Arc<PValues>,
    seed: u64,
}

impl BernoulliOracle {
    pub fn new(pstar: PValues, seed: u64) -> Self {
        Self {
            pstar: Arc::new(pstar),
            seed,
        }
    }

    pub fn pstar(&self) -> &PValues {
        &self.pstar
    }
}

#[derive(Debug, Clone)]
pub struct BernoulliStream {
    rng: ChaCha8Rng,
    // p * 2^53: an indicator is one iff the top 53 bits of a word fall below it.
    threshold: f64,
}

impl IndicatorStream for BernoulliStream {
    fn draw(&mut self, count: u64) -> Result<u64> {
        let mut hits = 0u64;
        for _ in 0..count {
            hits += u64::from(((self.rng.next_u64() >> 11) as f64) < self.threshold);
        }
        Ok(hits)
    }

    fn skip(&mut self, count: u64) -> Result<()> {
        let pos = self.rng.get_word_pos() + 2 * u128::from(count);
        self.rng.set_word_pos(pos);
        Ok(())
    }
}

impl SampleSource for BernoulliOracle {
    type Stream = BernoulliStream;

    fn len(&self) -> usize {
        self.pstar.len()
    }

    fn stream(&self, hypothesis: usize) -> BernoulliStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(hypothesis as u64);
        BernoulliStream {
            rng,
            threshold: self.pstar[hypothesis] * (1u64 << 53) as f64,
        }
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

/// Two-sample permutation tests on a data matrix.
///
/// Each row holds one hypothesis's measurements across the observations;
/// `groups[j]` assigns observation `j` to one of two groups. The statistic
/// is the absolute difference of group means; an indicator is one when a
/// random relabelling produces a statistic at least as large as the
/// observed one.
#[derive(Debug, Clone)]
pub struct PermutationSource {
    data: Arc<Vec<Vec<f64>>>,
    groups: Arc<Vec<bool>>,
    observed: Arc<Vec<f64>>,
    seed: u64,
}

fn mean_difference(row: &[f64], groups: &[bool]) -> f64 {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&x, &g) in row.iter().zip(groups) {
        if g {
            s1 += x;
            n1 += 1;
        } else {
            s0 += x;
            n0 += 1;
        }
    }
    (s1 / n1 as f64 - s0 / n0 as f64).abs()
}

impl PermutationSource {
    pub fn new(data: Vec<Vec<f64>>, groups: Vec<bool>, seed: u64) -> Result<Self> {
        let n1 = groups.iter().filter(|&&g| g).count();
        if n1 == 0 || n1 == groups.len() {
            return Err(invalid("both groups need at least one observation"));
        }
        if let Some(i) = data.iter().position(|row| row.len() != groups.len()) {
            return Err(invalid(format!(
                "row {} has {} values, expected {}",
                i + 1,
                data[i].len(),
                groups.len()
            )));
        }
        let observed = data
            .iter()
            .map(|row| mean_difference(row, &groups))
            .collect();
        Ok(Self {
            data: Arc::new(data),
            groups: Arc::new(groups),
            observed: Arc::new(observed),
            seed,
        })
    }

    pub fn observed_statistics(&self) -> &[f64] {
        &self.observed
    }
}

pub struct PermutationStream {
    data: Arc<Vec<Vec<f64>>>,
    hypothesis: usize,
    labels: Vec<bool>,
    threshold: f64,
    rng: ChaCha8Rng,
}

impl IndicatorStream for PermutationStream {
    fn draw(&mut self, count: u64) -> Result<u64> {
        use rand::seq::SliceRandom;
        let row = &self.data[self.hypothesis];
        let mut hits = 0;
        for _ in 0..count {
            self.labels.shuffle(&mut self.rng);
            hits += u64::from(mean_difference(row, &self.labels) >= self.threshold);
        }
        Ok(hits)
    }
}

impl SampleSource for PermutationSource {
    type Stream = PermutationStream;

    fn len(&self) -> usize {
        self.data.len()
    }

    fn stream(&self, hypothesis: usize) -> PermutationStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(hypothesis as u64);
        let t = self.observed[hypothesis];
        PermutationStream {
            data: Arc::clone(&self.data),
            hypothesis,
            labels: self.groups.to_vec(),
            // absorb rounding differences between equivalent relabellings
            threshold: t - 1e-12 * t.abs().max(1.0),
            rng,
        }
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

/// Draws `m_new` values uniformly with replacement from `pstar`.
pub fn resample_pvalues(pstar: &[f64], m_new: usize, seed: u64) -> Result<PValues> {
    if pstar.is_empty() {
        return Err(Error::EmptySource);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PValues::new(
        (0..m_new)
            .map(|_| pstar[rng.random_range(0..pstar.len())])
            .collect(),
    )
}

/// Size of the symmetric difference between a result and the ideal set.
pub fn misclassifications(result: &RejectionSet, ideal: &RejectionSet) -> usize {
    result.symmetric_difference_len(ideal)
}

pub const DEFAULT_RC_THRESHOLD: f64 = 0.1;

/// Rejection frequency of each hypothesis across runs.
pub fn rejection_frequencies(runs: &[RejectionSet], m: usize) -> Vec<f64> {
    let mut counts = vec![0usize; m];
    for run in runs {
        for i in run.iter() {
            counts[i] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / runs.len() as f64)
        .collect()
}

/// Hypotheses whose rejection frequency `f` satisfies
/// `min(f, 1 - f) > threshold`.
pub fn randomly_classified(runs: &[RejectionSet], m: usize, threshold: f64) -> usize {
    if runs.is_empty() {
        return 0;
    }
    count_random(&rejection_frequencies(runs, m), threshold)
}

pub fn count_random(frequencies: &[f64], threshold: f64) -> usize {
    frequencies
        .iter()
        .filter(|&&f| f.min(1.0 - f) > threshold)
        .count()
}

/// Nearest-rank quantiles: the value at sorted position `ceil(q * n)`
/// (1-based, clamped to `1..=n`).
pub fn effort_quantiles(efforts: &[u64], probs: &[f64]) -> Vec<u64> {
    assert!(!efforts.is_empty(), "quantiles of an empty sample");
    let mut sorted = efforts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    probs
        .iter()
        .map(|&q| {
            let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
            sorted[rank - 1]
        })
        .collect()
}

pub const DEFAULT_PROBS: [f64; 3] = [0.5, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Competitor {
    Naive {
        samples: u64,
    },
    Mcfdr {
        exceedances: u64,
        round_batch: u64,
        #[serde(default)]
        active_estimate: ActiveEstimate,
    },
}

impl Competitor {
    pub fn name(&self) -> &'static str {
        match self {
            Competitor::Naive { .. } => "naive",
            Competitor::Mcfdr { .. } => "mcfdr",
        }
    }

    pub fn parameter(&self) -> u64 {
        match *self {
            Competitor::Naive { samples } => samples,
            Competitor::Mcfdr { exceedances, .. } => exceedances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub engine: EngineConfig,
    pub competitors: Vec<Competitor>,
    pub runs: usize,
    pub seed: u64,
    pub rc_threshold: f64,
}

/// One paired run: a competitor, then the engine limited to the
/// competitor's realized effort on the same indicator streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub competitor: BaselineOutcome,
    pub mis: usize,
    pub engine_effort: u64,
    pub undecided: usize,
    pub forced: RejectionSet,
    pub forced_mis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub competitor: Competitor,
    pub mis: f64,
    pub rc: usize,
    pub effort: f64,
    pub undecided: f64,
    pub forced_mis: f64,
    pub forced_rc: usize,
    pub engine_effort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub ideal: RejectionSet,
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<Vec<RunRecord>>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn summarize(
    competitor: Competitor,
    runs: &[RunRecord],
    m: usize,
    rc_threshold: f64,
) -> ComparisonRow {
    let competitor_sets: Vec<RejectionSet> =
        runs.iter().map(|r| r.competitor.rejected.clone()).collect();
    let forced_sets: Vec<RejectionSet> = runs.iter().map(|r| r.forced.clone()).collect();
    ComparisonRow {
        competitor,
        mis: mean(runs.iter().map(|r| r.mis as f64)),
        rc: randomly_classified(&competitor_sets, m, rc_threshold),
        effort: mean(runs.iter().map(|r| r.competitor.effort as f64)),
        undecided: mean(runs.iter().map(|r| r.undecided as f64)),
        forced_mis: mean(runs.iter().map(|r| r.forced_mis as f64)),
        forced_rc: randomly_classified(&forced_sets, m, rc_threshold),
        engine_effort: mean(runs.iter().map(|r| r.engine_effort as f64)),
    }
}

fn paired_run(
    competitor: Competitor,
    cfg: &CompareConfig,
    pstar: &PValues,
    ideal: &RejectionSet,
    seed: u64,
) -> Result<RunRecord> {
    let procedure = cfg.engine.procedure;
    let counted = CountingSource::new(BernoulliOracle::new(pstar.clone(), seed));
    let outcome = match competitor {
        Competitor::Naive { samples } => {
            naive_run(&NaiveConfig::new(samples, procedure)?, &counted)?
        }
        Competitor::Mcfdr {
            exceedances,
            round_batch,
            active_estimate,
        } => {
            let mut mc = McfdrConfig::new(exceedances, procedure)?;
            mc.round_batch = round_batch;
            mc.active_estimate = active_estimate;
            mcfdr_run(&mc, &counted)?
        }
    };
    debug_assert_eq!(outcome.effort, counted.drawn());
    let effort = counted.drawn();

    let counted = CountingSource::new(counted.into_inner());
    let run = Mmctest::new(cfg.engine, &counted)?.run_within(effort)?;
    debug_assert_eq!(run.state.effort, counted.drawn());
    let forced = forced_classification(&run.state, &cfg.engine);

    Ok(RunRecord {
        mis: misclassifications(&outcome.rejected, ideal),
        competitor: BaselineOutcome {
            rejected: outcome.rejected,
            effort,
        },
        engine_effort: counted.drawn(),
        undecided: run.classification.undecided_count(),
        forced_mis: misclassifications(&forced, ideal),
        forced,
    })
}

/// Runs every competitor `runs` times against the engine at matched effort.
///
/// Within a run both methods read the same indicator streams. The engine
/// never starts an iteration that would take it past the competitor's
/// effort, and its result is reported both as a guaranteed classification
/// (via the undecided count) and as a forced one.
pub fn compare_methods(pstar: &PValues, cfg: &CompareConfig) -> Result<ComparisonTable> {
    if cfg.runs == 0 {
        return Err(invalid("at least one run is required"));
    }
    cfg.engine.validate()?;
    let ideal = cfg.engine.procedure.classify(pstar);
    let mut rows = Vec::with_capacity(cfg.competitors.len());
    let mut all_runs = Vec::with_capacity(cfg.competitors.len());
    for (j, &competitor) in cfg.competitors.iter().enumerate() {
        let runs = par::map_range(cfg.runs, |r| {
            paired_run(
                competitor,
                cfg,
                pstar,
                &ideal,
                derive_seed(cfg.seed, j as u64, r as u64),
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        rows.push(summarize(competitor, &runs, pstar.len(), cfg.rc_threshold));
        all_runs.push(runs);
    }
    Ok(ComparisonTable {
        ideal,
        rows,
        runs: all_runs,
    })
}

/// Runs the engine `runs` times on `pstar`, keeping each trace.
pub fn collect_traces(
    pstar: &PValues,
    engine: &EngineConfig,
    runs: usize,
    seed: u64,
) -> Result<Vec<RunTrace>> {
    par::map_range(runs, |r| {
        let source = BernoulliOracle::new(pstar.clone(), derive_seed(seed, 0, r as u64));
        Mmctest::new(*engine, &source)?.run().map(|o| o.trace)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub undecided: usize,
    pub quantiles: Vec<u64>,
}

/// Effort needed to reach each undecided count `c`, for one trace.
///
/// `result[c]` is the effort of the first iteration that ended with `c`
/// undecided hypotheses. Counts skipped because several hypotheses were
/// classified in one iteration take the effort of the largest smaller
/// count that was observed. Counts below the final one are `None`.
pub fn effort_by_undecided(trace: &RunTrace, m: usize) -> Vec<Option<u64>> {
    let mut first = vec![None; m + 1];
    for rec in &trace.records {
        first[rec.undecided].get_or_insert(rec.effort);
    }
    let mut filled = vec![None; m + 1];
    let mut carry = None;
    for c in 0..=m {
        if first[c].is_some() {
            carry = first[c];
        }
        filled[c] = carry;
    }
    filled
}

/// Quantiles across runs of the effort to reach each undecided count.
/// Only counts reached by every run appear in the output, in increasing
/// order.
pub fn trace_effort_vs_undecided(traces: &[RunTrace], m: usize, probs: &[f64]) -> Vec<CurvePoint> {
    let curves: Vec<Vec<Option<u64>>> = traces
        .iter()
        .filter(|t| !t.records.is_empty())
        .map(|t| effort_by_undecided(t, m))
        .collect();
    if curves.is_empty() {
        return Vec::new();
    }
    (0..=m)
        .filter_map(|c| {
            let efforts: Option<Vec<u64>> = curves.iter().map(|curve| curve[c]).collect();
            efforts.map(|e| CurvePoint {
                undecided: c,
                quantiles: effort_quantiles(&e, probs),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub engine: EngineConfig,
    pub m_grid: Vec<usize>,
    /// Runs stop at `floor(c_fraction * m)` undecided hypotheses.
    pub c_fraction: f64,
    pub runs: usize,
    pub seed: u64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub m: usize,
    pub c: usize,
    pub quantiles: Vec<u64>,
    pub efforts: Vec<u64>,
}

/// For each `m`, resamples a fresh population per run and records the
/// effort to classify all but `floor(c_fraction * m)` hypotheses.
pub fn scaling_study(population: &[f64], cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if population.is_empty() {
        return Err(Error::EmptySource);
    }
    if !(0.0..=1.0).contains(&cfg.c_fraction) {
        return Err(invalid(format!(
            "c fraction must lie in [0, 1], got {}",
            cfg.c_fraction
        )));
    }
    if cfg.runs == 0 {
        return Err(invalid("at least one run is required"));
    }
    cfg.m_grid
        .iter()
        .map(|&m| {
            let c = (cfg.c_fraction * m as f64).floor() as usize;
            let engine = EngineConfig {
                max_undecided: c,
                ..cfg.engine
            };
            let efforts = par::map_range(cfg.runs, |r| {
                let pstar =
                    resample_pvalues(population, m, derive_seed(cfg.seed, m as u64, 2 * r as u64))?;
                let source =
                    BernoulliOracle::new(pstar, derive_seed(cfg.seed, m as u64, 2 * r as u64 + 1));
                Mmctest::new(engine, &source)?.run().map(|o| o.state.effort)
            })
            .into_iter()
            .collect::<Result<Vec<u64>>>()?;
            Ok(ScalingRow {
                m,
                c,
                quantiles: effort_quantiles(&efforts, &cfg.probs),
                efforts,
            })
        })
        .collect()
}
