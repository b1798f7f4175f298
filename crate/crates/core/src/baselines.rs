//! Competitor methods run on the same [`SampleSource`] abstraction as the
//! engine, so effort can be matched run by run.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par;
use crate::procedures::{ProcedureSpec, RejectionSet};
use crate::source::{IndicatorStream, SampleSource};

/// Fixed number of samples per hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveConfig {
    pub samples: u64,
    pub procedure: ProcedureSpec,
}

impl NaiveConfig {
    pub fn new(samples: u64, procedure: ProcedureSpec) -> Result<Self> {
        if samples == 0 {
            return Err(invalid(
                "naive method needs at least one sample per hypothesis",
            ));
        }
        Ok(Self { samples, procedure })
    }
}

/// Estimate used for hypotheses that have not yet reached `u` hits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveEstimate {
    /// `(S + 1) / (k + 1)`
    #[default]
    Smoothed,
    /// `S / k`
    Raw,
}

/// Stop a hypothesis after `exceedances` hits; stop everything once all
/// still-active hypotheses are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McfdrConfig {
    pub exceedances: u64,
    pub procedure: ProcedureSpec,
    /// Indicators drawn per active hypothesis per round.
    pub round_batch: u64,
    /// Abort with an error after this many rounds.
    pub max_rounds: Option<u64>,
    #[serde(default)]
    pub active_estimate: ActiveEstimate,
}

impl McfdrConfig {
    pub fn new(exceedances: u64, procedure: ProcedureSpec) -> Result<Self> {
        let cfg = Self {
            exceedances,
            procedure,
            round_batch: 1,
            max_rounds: None,
            active_estimate: ActiveEstimate::Smoothed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.exceedances == 0 {
            return Err(invalid("MCFDR exceedance threshold u must be at least 1"));
        }
        if self.round_batch == 0 {
            return Err(invalid("MCFDR round batch must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub rejected: RejectionSet,
    pub effort: u64,
}

/// Draws exactly `samples` indicators per hypothesis and applies the
/// procedure to `(S + 1) / (samples + 1)`.
pub fn naive_run<S: SampleSource>(cfg: &NaiveConfig, source: &S) -> Result<BaselineOutcome> {
    if cfg.samples == 0 {
        return Err(invalid(
            "naive method needs at least one sample per hypothesis",
        ));
    }
    let mut streams: Vec<S::Stream> = (0..source.len()).map(|i| source.stream(i)).collect();
    let hits = par::map_indexed_mut(&mut streams, |_, stream| stream.draw(cfg.samples));
    let denom = cfg.samples as f64 + 1.0;
    let estimates = hits
        .into_iter()
        .map(|h| h.map(|s| (s as f64 + 1.0) / denom))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineOutcome {
        rejected: cfg.procedure.classify(&estimates),
        effort: cfg.samples * source.len() as u64,
    })
}

struct McfdrHypothesis<T> {
    stream: T,
    hits: u64,
    samples: u64,
    finished: bool,
}

impl<T: IndicatorStream> McfdrHypothesis<T> {
    /// Draws one at a time so that a hypothesis stops exactly at `u` hits.
    fn advance(&mut self, round_batch: u64, u: u64) -> Result<()> {
        for _ in 0..round_batch {
            self.hits += self.stream.draw(1)?;
            self.samples += 1;
            if self.hits == u {
                self.finished = true;
                break;
            }
        }
        Ok(())
    }

    fn estimate(&self, active: ActiveEstimate) -> f64 {
        match (self.finished, active) {
            (true, _) | (false, ActiveEstimate::Raw) => self.hits as f64 / self.samples as f64,
            (false, ActiveEstimate::Smoothed) => {
                (self.hits as f64 + 1.0) / (self.samples as f64 + 1.0)
            }
        }
    }
}

/// Round-based MCFDR.
///
/// Finished hypotheses use the estimate `u / k`; active ones use
/// `cfg.active_estimate`. The run ends after the first round in which every
/// active hypothesis is rejected.
pub fn mcfdr_run<S: SampleSource>(cfg: &McfdrConfig, source: &S) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let mut hyps: Vec<McfdrHypothesis<S::Stream>> = (0..source.len())
        .map(|i| McfdrHypothesis {
            stream: source.stream(i),
            hits: 0,
            samples: 0,
            finished: false,
        })
        .collect();
    let mut rounds = 0u64;
    loop {
        if cfg.max_rounds.is_some_and(|cap| rounds >= cap) {
            return Err(crate::Error::RoundCap(rounds));
        }
        let results = par::map_indexed_mut(&mut hyps, |_, h| {
            if h.finished {
                Ok(())
            } else {
                h.advance(cfg.round_batch, cfg.exceedances)
            }
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
        rounds += 1;

        let estimates: Vec<f64> = hyps
            .iter()
            .map(|h| h.estimate(cfg.active_estimate))
            .collect();
        let rejected = cfg.procedure.classify(&estimates);
        let done = hyps
            .iter()
            .enumerate()
            .all(|(i, h)| h.finished || rejected.contains(i));
        if done {
            return Ok(BaselineOutcome {
                rejected,
                effort: hyps.iter().map(|h| h.samples).sum(),
            });
        }
    }
}
