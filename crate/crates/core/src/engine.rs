//! The sequential classification engine.
//!
//! Each iteration grows the batch size geometrically, draws a fresh batch
//! for every hypothesis that is still undecided, refines its confidence
//! interval (intersected with the previous one, so intervals are nested) and
//! re-applies the testing procedure to the interval endpoints:
//!
//! * `a_lower = h(upper endpoints)`: rejected even in the least favourable
//!   case.
//! * `a_upper = h(lower endpoints)`: rejected in the most favourable case.
//!
//! With a monotonic procedure `a_lower ⊆ h(p*) ⊆ a_upper` whenever every
//! interval covers its ideal p-value, which happens jointly with probability
//! at least `1 - epsilon`. Hypotheses outside `a_upper \ a_lower` are final
//! and are never sampled again.

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use crate::confidence::{interval_fn, Interval, SpendingConfig};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::procedures::{ProcedureSpec, RejectionSet};
use crate::source::{IndicatorStream, SampleSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Initial batch size; the first batch drawn is `floor(growth * delta0)`.
    pub delta0: u64,
    /// Geometric batch growth factor.
    pub growth: f64,
    /// Stop once at most this many hypotheses are undecided.
    pub max_undecided: usize,
    /// Stop once the total effort exceeds this (checked before each iteration).
    pub max_effort: Option<u64>,
    pub epsilon: f64,
    pub r: f64,
    pub procedure: ProcedureSpec,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            delta0: 10,
            growth: 1.25,
            max_undecided: 0,
            max_effort: None,
            epsilon: 0.01,
            r: 10_000.0,
            procedure: ProcedureSpec::benjamini_hochberg(0.1).expect("valid default"),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta0 == 0 {
            return Err(invalid("delta0 must be at least 1"));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(invalid(format!(
                "growth factor must be >= 1, got {}",
                self.growth
            )));
        }
        SpendingConfig::new(self.epsilon, self.r, 1).map(drop)
    }

    pub fn spending(&self, m: usize) -> Result<SpendingConfig> {
        SpendingConfig::new(self.epsilon, self.r, m)
    }

    /// `floor(growth * delta)`, never rounded.
    pub fn next_delta(&self, delta: u64) -> u64 {
        (self.growth * delta as f64).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingState {
    pub exceedances: Vec<u64>,
    pub samples: Vec<u64>,
    pub intervals: Vec<Interval>,
    /// Batch size of the most recent iteration (`delta0` before the first).
    pub delta: u64,
    pub iteration: u64,
    /// Total effort, the sum of `samples`.
    pub effort: u64,
    /// Set when a fresh interval missed the previous one entirely.
    pub coverage_violation: bool,
}

impl SamplingState {
    pub fn new(m: usize, delta0: u64) -> Self {
        Self {
            exceedances: vec![0; m],
            samples: vec![0; m],
            intervals: vec![Interval::UNIT; m],
            delta: delta0,
            iteration: 0,
            effort: 0,
            coverage_violation: false,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn upper_endpoints(&self) -> Vec<f64> {
        self.intervals.iter().map(|i| i.hi).collect()
    }

    pub fn lower_endpoints(&self) -> Vec<f64> {
        self.intervals.iter().map(|i| i.lo).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub a_lower: RejectionSet,
    pub a_upper: RejectionSet,
}

impl Classification {
    pub fn initial(m: usize) -> Self {
        Self {
            a_lower: RejectionSet::empty(),
            a_upper: RejectionSet::full(m),
        }
    }

    pub fn from_intervals(procedure: &ProcedureSpec, state: &SamplingState) -> Self {
        Self {
            a_lower: procedure.classify(&state.upper_endpoints()),
            a_upper: procedure.classify(&state.lower_endpoints()),
        }
    }

    pub fn undecided(&self) -> RejectionSet {
        self.a_upper.difference(&self.a_lower)
    }

    pub fn undecided_count(&self) -> usize {
        self.a_upper.len() - self.a_lower.len()
    }
}

/// Rejected, non-rejected and not-yet-classified hypotheses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuaranteedReport {
    pub rejected: RejectionSet,
    pub non_rejected: RejectionSet,
    pub undecided: RejectionSet,
}

pub fn guaranteed_report(classification: &Classification, m: usize) -> GuaranteedReport {
    GuaranteedReport {
        rejected: classification.a_lower.clone(),
        non_rejected: classification.a_upper.complement(m),
        undecided: classification.undecided(),
    }
}

/// Applies the procedure to the estimates `(S_i + 1) / (k_i + 1)`.
///
/// The result carries no correctness guarantee.
pub fn forced_classification(state: &SamplingState, cfg: &EngineConfig) -> RejectionSet {
    cfg.procedure.classify(&point_estimates(state))
}

pub fn point_estimates(state: &SamplingState) -> Vec<f64> {
    state
        .exceedances
        .iter()
        .zip(&state.samples)
        .map(|(&s, &k)| (s as f64 + 1.0) / (k as f64 + 1.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub delta: u64,
    pub effort: u64,
    pub lower: usize,
    pub upper: usize,
    pub undecided: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Classified,
    EffortLimit,
    SourceExhausted { hypothesis: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub stop: Option<StopReason>,
}

/// Per-hypothesis part of a [`Snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSnapshot {
    pub s: u64,
    pub k: u64,
    pub lo: f64,
    pub hi: f64,
}

/// Serializable engine state from which a run can be resumed. Interval
/// endpoints are written in shortest round-trip form, so a reloaded
/// snapshot reproduces them bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub seed: Option<u64>,
    pub config: EngineConfig,
    pub n: u64,
    pub delta: u64,
    pub coverage_violation: bool,
    pub hypotheses: Vec<HypothesisSnapshot>,
}

impl Snapshot {
    pub const VERSION: u32 = 1;

    pub fn capture(state: &SamplingState, config: EngineConfig, seed: Option<u64>) -> Self {
        Self {
            version: Self::VERSION,
            seed,
            config,
            n: state.iteration,
            delta: state.delta,
            coverage_violation: state.coverage_violation,
            hypotheses: (0..state.len())
                .map(|i| HypothesisSnapshot {
                    s: state.exceedances[i],
                    k: state.samples[i],
                    lo: state.intervals[i].lo,
                    hi: state.intervals[i].hi,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub classification: Classification,
    pub state: SamplingState,
    pub trace: RunTrace,
}

impl RunOutcome {
    pub fn report(&self) -> GuaranteedReport {
        guaranteed_report(&self.classification, self.state.len())
    }
}

/// An in-progress run holding one indicator stream per hypothesis.
pub struct Mmctest<S: SampleSource> {
    cfg: EngineConfig,
    spending: SpendingConfig,
    streams: Vec<S::Stream>,
    state: SamplingState,
    classification: Classification,
    trace: RunTrace,
}

impl<S: SampleSource> Mmctest<S> {
    pub fn new(cfg: EngineConfig, source: &S) -> Result<Self> {
        cfg.validate()?;
        let m = source.len();
        let spending = cfg.spending(m)?;
        Ok(Self {
            cfg,
            spending,
            streams: (0..m).map(|i| source.stream(i)).collect(),
            state: SamplingState::new(m, cfg.delta0),
            classification: Classification::initial(m),
            trace: RunTrace::default(),
        })
    }

    /// Restores a run from a snapshot, fast-forwarding every stream past the
    /// indicators already consumed.
    pub fn resume(snapshot: &Snapshot, source: &S) -> Result<Self> {
        let cfg = snapshot.config;
        cfg.validate()?;
        let m = source.len();
        if snapshot.hypotheses.len() != m {
            return Err(Error::SnapshotMismatch(format!(
                "snapshot holds {} hypotheses, source has {m}",
                snapshot.hypotheses.len()
            )));
        }
        if let (Some(a), Some(b)) = (snapshot.seed, source.seed()) {
            if a != b {
                return Err(Error::SnapshotMismatch(format!(
                    "snapshot seed {a} != source seed {b}"
                )));
            }
        }
        let mut state = SamplingState::new(m, snapshot.delta);
        state.iteration = snapshot.n;
        state.coverage_violation = snapshot.coverage_violation;
        let mut streams = Vec::with_capacity(m);
        for (i, h) in snapshot.hypotheses.iter().enumerate() {
            if h.s > h.k {
                return Err(invalid(format!(
                    "hypothesis {}: S = {} exceeds k = {}",
                    i + 1,
                    h.s,
                    h.k
                )));
            }
            state.exceedances[i] = h.s;
            state.samples[i] = h.k;
            state.intervals[i] = Interval::new(h.lo, h.hi)?;
            let mut stream = source.stream(i);
            stream.skip(h.k)?;
            streams.push(stream);
        }
        state.effort = state.samples.iter().sum();
        let classification = Classification::from_intervals(&cfg.procedure, &state);
        Ok(Self {
            cfg,
            spending: cfg.spending(m)?,
            streams,
            state,
            classification,
            trace: RunTrace::default(),
        })
    }

    pub fn snapshot(&self, seed: Option<u64>) -> Snapshot {
        Snapshot::capture(&self.state, self.cfg, seed)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SamplingState {
        &self.state
    }

    pub fn classification(&self) -> &Classification {
        &self.classification
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    /// The loop guard: more than `max_undecided` undecided hypotheses and
    /// effort not yet above `max_effort`.
    pub fn should_continue(&self) -> bool {
        self.classification.undecided_count() > self.cfg.max_undecided
            && self
                .cfg
                .max_effort
                .is_none_or(|limit| self.state.effort <= limit)
    }

    /// Number of indicators the next iteration would draw.
    pub fn next_batch_cost(&self) -> u64 {
        self.cfg.next_delta(self.state.delta) * self.classification.undecided_count() as u64
    }

    pub fn forced_classification(&self) -> RejectionSet {
        forced_classification(&self.state, &self.cfg)
    }

    /// Runs one iteration. On error the state is left as it was before the
    /// call, although the streams of the affected batch have advanced.
    pub fn step(&mut self) -> Result<&Classification> {
        let delta = self.cfg.next_delta(self.state.delta);
        let active = self.classification.undecided().to_mask(self.state.len());
        let spending = &self.spending;
        let state = &self.state;

        let updates = par::map_indexed_mut(
            &mut self.streams,
            |i, stream| -> Result<Option<(u64, u64, Interval)>> {
                if !active[i] {
                    return Ok(None);
                }
                let hits = stream.draw(delta)?;
                let s = state.exceedances[i] + hits;
                let k = state.samples[i] + delta;
                let fresh = interval_fn(s, k, delta, spending)?;
                Ok(Some((s, k, fresh)))
            },
        );

        let mut staged = Vec::with_capacity(updates.len());
        for (i, update) in updates.into_iter().enumerate() {
            if let Some(u) = update? {
                staged.push((i, u));
            }
        }

        let previous = std::mem::replace(&mut self.classification, Classification::initial(0));
        for (i, (s, k, fresh)) in staged {
            let old = self.state.intervals[i];
            self.state.intervals[i] = match fresh.intersect(&old) {
                Some(refined) => refined,
                None => {
                    // Keep nestedness: collapse onto the old endpoint nearest the new interval.
                    self.state.coverage_violation = true;
                    let point = if fresh.lo > old.hi { old.hi } else { old.lo };
                    debug!(
                        "hypothesis {} interval missed its predecessor; clamped to {point}",
                        i + 1
                    );
                    Interval {
                        lo: point,
                        hi: point,
                    }
                }
            };
            self.state.effort += k - self.state.samples[i];
            self.state.exceedances[i] = s;
            self.state.samples[i] = k;
        }
        self.state.delta = delta;
        self.state.iteration += 1;
        self.classification = Classification::from_intervals(&self.cfg.procedure, &self.state);
        debug_assert!(previous.a_lower.is_subset(&self.classification.a_lower));
        debug_assert!(self.classification.a_upper.is_subset(&previous.a_upper));

        let record = TraceRecord {
            iteration: self.state.iteration,
            delta,
            effort: self.state.effort,
            lower: self.classification.a_lower.len(),
            upper: self.classification.a_upper.len(),
            undecided: self.classification.undecided_count(),
        };
        trace!("{record:?}");
        self.trace.records.push(record);
        Ok(&self.classification)
    }

    /// Iterates until the loop guard fails or the source runs dry.
    pub fn run(self) -> Result<RunOutcome> {
        self.drive(None)
    }

    /// Like [`run`](Self::run), but never starts an iteration whose batch
    /// would take the total effort above `budget`.
    pub fn run_within(self, budget: u64) -> Result<RunOutcome> {
        self.drive(Some(budget))
    }

    fn drive(mut self, budget: Option<u64>) -> Result<RunOutcome> {
        while self.should_continue() {
            if budget.is_some_and(|b| self.state.effort + self.next_batch_cost() > b) {
                self.trace.stop = Some(StopReason::EffortLimit);
                return Ok(self.finish());
            }
            match self.step() {
                Ok(_) => {}
                Err(Error::SourceExhausted { hypothesis, .. }) => {
                    self.trace.stop = Some(StopReason::SourceExhausted { hypothesis });
                    return Ok(self.finish());
                }
                Err(e) => return Err(e),
            }
        }
        self.trace.stop = Some(
            if self.classification.undecided_count() <= self.cfg.max_undecided {
                StopReason::Classified
            } else {
                StopReason::EffortLimit
            },
        );
        Ok(self.finish())
    }

    fn finish(self) -> RunOutcome {
        debug!(
            "stopped after {} iterations, effort {}, {} undecided",
            self.state.iteration,
            self.state.effort,
            self.classification.undecided_count()
        );
        RunOutcome {
            classification: self.classification,
            state: self.state,
            trace: self.trace,
        }
    }
}

/// Runs the engine from scratch on `source`.
pub fn run<S: SampleSource>(cfg: EngineConfig, source: &S) -> Result<RunOutcome> {
    Mmctest::new(cfg, source)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{ConstantSource, FiniteSource};

    fn set(one_based: &[usize]) -> RejectionSet {
        RejectionSet::from_indices(one_based.iter().map(|i| i - 1))
    }

    #[test]
    fn first_batch_is_grown_before_sampling() {
        let src = ConstantSource::new(vec![false, true]);
        let mut engine = Mmctest::new(EngineConfig::default(), &src).unwrap();
        engine.step().unwrap();
        assert_eq!(engine.state().delta, 12);
        assert_eq!(engine.state().samples, vec![12, 12]);
        engine.step().unwrap();
        // floor(1.25 * 12) = 15
        assert_eq!(engine.state().delta, 15);
        // the all-ones hypothesis left a_upper after one batch (lower limit > 0.1)
        assert_eq!(engine.state().samples, vec![27, 12]);
        assert_eq!(engine.trace().records[1].effort, 39);
    }

    #[test]
    fn all_zero_stream_is_rejected() {
        let out = run(EngineConfig::default(), &ConstantSource::new(vec![false])).unwrap();
        assert_eq!(out.classification.a_lower, set(&[1]));
        assert_eq!(out.classification.a_upper, set(&[1]));
        assert_eq!(out.trace.stop, Some(StopReason::Classified));
    }

    #[test]
    fn all_one_stream_is_not_rejected() {
        let out = run(EngineConfig::default(), &ConstantSource::new(vec![true])).unwrap();
        assert!(out.classification.a_lower.is_empty());
        assert!(out.classification.a_upper.is_empty());
    }

    #[test]
    fn two_deterministic_hypotheses() {
        let out = run(
            EngineConfig::default(),
            &ConstantSource::new(vec![false, true]),
        )
        .unwrap();
        assert_eq!(out.classification.a_lower, set(&[1]));
        assert_eq!(out.classification.a_upper, set(&[1]));
        let report = out.report();
        assert_eq!(report.rejected, set(&[1]));
        assert_eq!(report.non_rejected, set(&[2]));
        assert!(report.undecided.is_empty());
    }

    #[test]
    fn loose_stop_returns_without_sampling() {
        let cfg = EngineConfig {
            max_undecided: 3,
            ..Default::default()
        };
        let out = run(cfg, &ConstantSource::new(vec![false, true, false])).unwrap();
        assert!(out.trace.records.is_empty());
        assert!(out.classification.a_lower.is_empty());
        assert_eq!(out.classification.a_upper, RejectionSet::full(3));
        assert_eq!(out.state.effort, 0);
    }

    #[test]
    fn zero_effort_cap_allows_exactly_one_iteration() {
        let cfg = EngineConfig {
            max_effort: Some(0),
            ..Default::default()
        };
        let out = run(cfg, &ConstantSource::new(vec![false, true])).unwrap();
        assert_eq!(out.trace.records.len(), 1);
        assert_eq!(out.state.effort, 24);
        assert_eq!(out.trace.stop, Some(StopReason::EffortLimit));
    }

    #[test]
    fn strict_budget_never_overshoots() {
        let src = ConstantSource::new(vec![false, true, false]);
        let out = Mmctest::new(EngineConfig::default(), &src)
            .unwrap()
            .run_within(0)
            .unwrap();
        assert_eq!(out.state.effort, 0);
        assert_eq!(out.classification.undecided_count(), 3);
        let out = Mmctest::new(EngineConfig::default(), &src)
            .unwrap()
            .run_within(200)
            .unwrap();
        assert!(out.state.effort <= 200);
    }

    #[test]
    fn exhausted_source_stops_cleanly() {
        // Undecided for long: the single hypothesis sits on alpha.
        let seq: Vec<bool> = (0..100).map(|j| j % 10 == 0).collect();
        let out = run(EngineConfig::default(), &FiniteSource::new(vec![seq])).unwrap();
        assert_eq!(
            out.trace.stop,
            Some(StopReason::SourceExhausted { hypothesis: 0 })
        );
        assert_eq!(out.state.effort, out.state.samples.iter().sum::<u64>());
        assert!(out.state.effort <= 100);
    }

    #[test]
    fn forced_classification_estimates() {
        let mut state = SamplingState::new(3, 10);
        state.exceedances = vec![3, 0, 0];
        state.samples = vec![9, 0, 0];
        assert_eq!(point_estimates(&state), vec![0.4, 1.0, 1.0]);

        state.exceedances = vec![1, 3, 89];
        state.samples = vec![99, 99, 99];
        // estimates 0.02, 0.04, 0.9
        assert_eq!(
            forced_classification(&state, &EngineConfig::default()),
            set(&[1, 2])
        );
    }

    #[test]
    fn report_partitions() {
        let c = Classification {
            a_lower: set(&[1]),
            a_upper: set(&[1, 2]),
        };
        let r = guaranteed_report(&c, 3);
        assert_eq!(
            (r.rejected, r.non_rejected, r.undecided),
            (set(&[1]), set(&[3]), set(&[2]))
        );

        let c = Classification {
            a_lower: set(&[]),
            a_upper: set(&[]),
        };
        let r = guaranteed_report(&c, 2);
        assert_eq!(
            (r.rejected, r.non_rejected, r.undecided),
            (set(&[]), set(&[1, 2]), set(&[]))
        );

        let c = Classification {
            a_lower: set(&[1, 2]),
            a_upper: set(&[1, 2]),
        };
        let r = guaranteed_report(&c, 2);
        assert_eq!(
            (r.rejected, r.non_rejected, r.undecided),
            (set(&[1, 2]), set(&[]), set(&[]))
        );
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig {
            delta0: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EngineConfig {
            growth: 0.9,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EngineConfig {
            epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EngineConfig {
            r: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(
            EngineConfig {
                growth: 1.0,
                ..Default::default()
            }
            .next_delta(10),
            10
        );
    }
}
