//! Sequential Monte Carlo multiple testing.
//!
//! Classifies `m` hypotheses, each tested by Monte Carlo simulation, into
//! rejected, non-rejected and undecided sets such that, with probability at
//! least `1 - epsilon`, every classified hypothesis agrees with the decision
//! the testing procedure would make on the ideal (infinite-simulation)
//! p-values.
//!
//! * [`procedures`]: Benjamini-Hochberg and Bonferroni.
//! * [`confidence`]: Clopper-Pearson intervals under an error-spending schedule.
//! * [`engine`]: the sequential classifier.
//! * [`baselines`]: fixed-sample and MCFDR competitors.
//! * [`harness`]: simulation sources, metrics and study drivers.

pub mod baselines;
pub mod confidence;
pub mod engine;
pub mod error;
pub mod harness;
mod par;
pub mod procedures;
pub mod source;

pub use confidence::{Interval, SpendingConfig};
pub use engine::{
    guaranteed_report, Classification, EngineConfig, GuaranteedReport, Mmctest, RunOutcome,
    RunTrace, SamplingState, Snapshot, StopReason,
};
pub use error::{Error, Result};
pub use procedures::{PValues, ProcedureKind, ProcedureSpec, RejectionSet};
pub use source::{IndicatorStream, SampleSource};
