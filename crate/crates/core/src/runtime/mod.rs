//! Pricing executors: serial, an in-process thread pool, and remote workers.
//!
//! Every executor returns candidates in edge order and computes each one
//! with the same arithmetic, so results are bit-identical across them.

pub mod protocol;
mod remote;

use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::decomposition::{price_subprogram, Candidate, DecompositionError, Duals, EdgeSubproblem, Pricer, PricingRound, TieRule};

pub use protocol::ProtocolError;
pub use remote::{run_worker, Coordinator, RemotePricer, WorkerOptions, WorkerStats};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker {worker}: {message}")]
    Worker { worker: usize, message: String },
    #[error("no live worker left to price edges {edges:?}")]
    Unpriceable { edges: Vec<usize> },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
}

impl From<RuntimeError> for DecompositionError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Decomposition(d) => d,
            other => DecompositionError::Pricing(other.to_string()),
        }
    }
}

/// Contiguous edge-id blocks, one per worker, balanced by table size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkPartition {
    blocks: Vec<Range<usize>>,
}

impl WorkPartition {
    pub fn balanced(subs: &[EdgeSubproblem], workers: usize) -> Self {
        let workers = workers.max(1);
        let total: usize = subs.iter().map(EdgeSubproblem::size).sum();
        let mut blocks = Vec::with_capacity(workers);
        let mut start = 0;
        let mut acc = 0usize;
        for w in 0..workers {
            let target = total as u128 * (w as u128 + 1) / workers as u128;
            let mut end = start;
            while end < subs.len() && (acc as u128) < target {
                acc += subs[end].size();
                end += 1;
            }
            if w + 1 == workers {
                end = subs.len();
            }
            blocks.push(start..end);
            start = end;
        }
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn num_workers(&self) -> usize {
        self.blocks.len()
    }

    pub fn worker_of(&self, edge: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&edge))
    }
}

fn price_block(subs: &[EdgeSubproblem], duals: &Duals, tie: TieRule, iteration: usize) -> Result<Vec<Candidate>, DecompositionError> {
    subs.iter().map(|s| price_subprogram(s, duals, tie, iteration)).collect()
}

/// Prices every edge on the calling thread.
pub struct SerialPricer {
    subs: Arc<[EdgeSubproblem]>,
}

impl SerialPricer {
    pub fn new(subs: Arc<[EdgeSubproblem]>) -> Self {
        Self { subs }
    }
}

impl Pricer for SerialPricer {
    fn name(&self) -> &str {
        "serial"
    }

    fn price_all(&mut self, iteration: usize, duals: &Duals, tie: TieRule) -> Result<PricingRound, DecompositionError> {
        Ok(PricingRound { candidates: price_block(&self.subs, duals, tie, iteration)?, ..Default::default() })
    }
}

/// Prices partition blocks concurrently on a private thread pool.
pub struct PoolPricer {
    subs: Arc<[EdgeSubproblem]>,
    partition: WorkPartition,
    pool: rayon::ThreadPool,
}

impl PoolPricer {
    pub fn new(subs: Arc<[EdgeSubproblem]>, threads: usize) -> Result<Self, RuntimeError> {
        let threads = threads.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("pricer-{i}"))
            .build()
            .map_err(|e| RuntimeError::Pool(e.to_string()))?;
        let partition = WorkPartition::balanced(&subs, threads);
        Ok(Self { subs, partition, pool })
    }

    pub fn partition(&self) -> &WorkPartition {
        &self.partition
    }
}

impl Pricer for PoolPricer {
    fn name(&self) -> &str {
        "pool"
    }

    fn price_all(&mut self, iteration: usize, duals: &Duals, tie: TieRule) -> Result<PricingRound, DecompositionError> {
        let subs = &self.subs;
        let blocks = self.partition.blocks();
        let parts: Vec<Vec<Candidate>> = self.pool.install(|| {
            blocks
                .par_iter()
                .map(|b| price_block(&subs[b.clone()], duals, tie, iteration))
                .collect::<Result<_, _>>()
        })?;
        Ok(PricingRound { candidates: parts.into_iter().flatten().collect(), ..Default::default() })
    }
}
