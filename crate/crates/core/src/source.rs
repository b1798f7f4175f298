//! Streams of exceedance indicators.
//!
//! A [`SampleSource`] hands out one independent [`IndicatorStream`] per
//! hypothesis. Each stream is a fixed sequence determined by the source's
//! seed and the hypothesis index, so the values drawn never depend on how
//! draws are batched or on which thread performs them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

pub trait IndicatorStream: Send {
    /// Draws `count` fresh indicators and returns how many of them are one.
    fn draw(&mut self, count: u64) -> Result<u64>;

    /// Advances past `count` indicators without reporting them.
    fn skip(&mut self, count: u64) -> Result<()> {
        self.draw(count).map(drop)
    }
}

pub trait SampleSource: Sync {
    type Stream: IndicatorStream;

    /// Number of hypotheses `m`.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Opens the stream for `hypothesis`, positioned at its first indicator.
    fn stream(&self, hypothesis: usize) -> Self::Stream;

    /// Master seed, when the source is seeded.
    fn seed(&self) -> Option<u64> {
        None
    }
}

/// Every indicator of hypothesis `i` equals `values[i]`.
#[derive(Debug, Clone)]
pub struct ConstantSource {
    values: Vec<bool>,
}

impl ConstantSource {
    pub fn new(values: Vec<bool>) -> Self {
        Self { values }
    }
}

#[derive(Debug, Clone)]
pub struct ConstantStream(bool);

impl IndicatorStream for ConstantStream {
    fn draw(&mut self, count: u64) -> Result<u64> {
        Ok(if self.0 { count } else { 0 })
    }
}

impl SampleSource for ConstantSource {
    type Stream = ConstantStream;

    fn len(&self) -> usize {
        self.values.len()
    }

    fn stream(&self, hypothesis: usize) -> ConstantStream {
        ConstantStream(self.values[hypothesis])
    }
}

/// Finite, explicitly listed indicator sequences.
#[derive(Debug, Clone)]
pub struct FiniteSource {
    sequences: Arc<Vec<Vec<bool>>>,
}

impl FiniteSource {
    pub fn new(sequences: Vec<Vec<bool>>) -> Self {
        Self {
            sequences: Arc::new(sequences),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteStream {
    sequences: Arc<Vec<Vec<bool>>>,
    hypothesis: usize,
    position: usize,
}

impl IndicatorStream for FiniteStream {
    fn draw(&mut self, count: u64) -> Result<u64> {
        let seq = &self.sequences[self.hypothesis];
        let end = self.position as u64 + count;
        if end > seq.len() as u64 {
            return Err(Error::SourceExhausted {
                hypothesis: self.hypothesis,
                requested: count,
            });
        }
        let hits = seq[self.position..end as usize]
            .iter()
            .filter(|&&x| x)
            .count();
        self.position = end as usize;
        Ok(hits as u64)
    }
}

impl SampleSource for FiniteSource {
    type Stream = FiniteStream;

    fn len(&self) -> usize {
        self.sequences.len()
    }

    fn stream(&self, hypothesis: usize) -> FiniteStream {
        FiniteStream {
            sequences: Arc::clone(&self.sequences),
            hypothesis,
            position: 0,
        }
    }
}

/// Wraps a source and tallies every indicator drawn through it.
pub struct CountingSource<S> {
    inner: S,
    drawn: Arc<AtomicU64>,
}

impl<S: SampleSource> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            drawn: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn drawn(&self) -> u64 {
        self.drawn.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

pub struct CountingStream<T> {
    inner: T,
    drawn: Arc<AtomicU64>,
}

impl<T: IndicatorStream> IndicatorStream for CountingStream<T> {
    fn draw(&mut self, count: u64) -> Result<u64> {
        let hits = self.inner.draw(count)?;
        self.drawn.fetch_add(count, Ordering::Relaxed);
        Ok(hits)
    }

    // Skipped indicators were drawn in an earlier session; they are not counted again.
    fn skip(&mut self, count: u64) -> Result<()> {
        self.inner.skip(count)
    }
}

impl<S: SampleSource> SampleSource for CountingSource<S> {
    type Stream = CountingStream<S::Stream>;

    fn len(&self) -> usize {
        self.inner.len()
    }

    fn stream(&self, hypothesis: usize) -> Self::Stream {
        CountingStream {
            inner: self.inner.stream(hypothesis),
            drawn: Arc::clone(&self.drawn),
        }
    }

    fn seed(&self) -> Option<u64> {
        self.inner.seed()
    }
}
