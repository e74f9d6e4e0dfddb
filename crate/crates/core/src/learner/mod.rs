//! Active learning of Mealy machines in the minimally adequate teacher setting.
//!
//! The learner fills an observation table with output queries, builds a
//! hypothesis once the table is closed and consistent, and asks an equivalence
//! oracle for a counterexample. Counterexamples refine the table's suffix set
//! until the oracle finds none.

mod cache;
mod table;

use std::fmt;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use cache::{CachedSul, Phase, QueryCounters};
pub use table::{Hypothesis, ObservationTable, RepairSummary, Word};

use crate::automata::{AutomataError, MealyMachine};
use crate::oracles::{EquivalenceOracle, OracleError};
use crate::sul::{NondeterminismWitness, Sul, SulError};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("the system under learning has an empty input alphabet")]
    EmptyAlphabet,
    #[error(transparent)]
    Sul(#[from] SulError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("counterexample {0:?} is answered identically by the SUL and the hypothesis")]
    SpuriousCounterexample(Vec<String>),
    #[error(transparent)]
    Automata(#[from] AutomataError),
    #[error("internal learner error: {0}")]
    Internal(String),
}

impl LearnError {
    pub fn nondeterminism(&self) -> Option<&NondeterminismWitness> {
        match self {
            LearnError::Sul(SulError::Nondeterminism(w))
            | LearnError::Oracle(OracleError::Sul(SulError::Nondeterminism(w))) => Some(w),
            _ => None,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            LearnError::Sul(SulError::Transport(_))
                | LearnError::Oracle(OracleError::Sul(SulError::Transport(_)))
        )
    }
}

/// Budget for a learning experiment. `None` means unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LearnLimits {
    pub max_rounds: Option<usize>,
    pub max_queries: Option<u64>,
}

/// Per-experiment counters. Queries and symbols count only what reached the
/// SUL; cache hits are free.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnStatistics {
    pub states: usize,
    pub mq_queries: u64,
    pub mq_symbols: u64,
    pub ct_queries: u64,
    pub ct_symbols: u64,
    pub eq_queries: u64,
    pub mq_time: Duration,
    pub ct_time: Duration,
}

impl LearnStatistics {
    /// Flat `key: value` lines using the keys of the experiment report.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.report_fields() {
            out.push_str(&format!("{key}: {value}\n"));
        }
        out
    }

    pub fn report_fields(&self) -> [(&'static str, String); 6] {
        [
            ("states", self.states.to_string()),
            ("mq_time_s", format!("{:.3}", self.mq_time.as_secs_f64())),
            ("mq_queries", self.mq_queries.to_string()),
            ("ct_time_s", format!("{:.3}", self.ct_time.as_secs_f64())),
            ("ct_queries", self.ct_queries.to_string()),
            ("eq_queries", self.eq_queries.to_string()),
        ]
    }
}

impl fmt::Display for LearnStatistics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_report())
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub machine: MealyMachine,
    pub statistics: LearnStatistics,
    /// False when a budget in [`LearnLimits`] ran out before the oracle accepted.
    pub verified: bool,
    /// State count of each hypothesis, in round order.
    pub hypothesis_sizes: Vec<usize>,
}

/// Learns a Mealy machine of `sul` using `oracle` for equivalence queries.
///
/// All queries go through a [`CachedSul`], so the same word never reaches the
/// SUL twice and contradicting answers abort with a nondeterminism error.
pub fn learn<S: Sul>(
    sul: S,
    oracle: &mut dyn EquivalenceOracle,
    limits: &LearnLimits,
) -> Result<LearnOutcome, LearnError> {
    let inputs = sul.inputs().to_vec();
    if inputs.is_empty() {
        return Err(LearnError::EmptyAlphabet);
    }
    let mut cache = CachedSul::new(sul);
    let mut table = ObservationTable::new(inputs);
    let mut stats = LearnStatistics::default();
    let mut sizes = Vec::new();

    loop {
        cache.set_phase(Phase::Learning);
        let started = Instant::now();
        table.close_and_make_consistent(&mut cache)?;
        let hypothesis = table.hypothesis()?;
        stats.mq_time += started.elapsed();
        sizes.push(hypothesis.machine.num_states());
        if let Some(previous) = sizes.iter().rev().nth(1) {
            if *previous >= hypothesis.machine.num_states() {
                return Err(LearnError::Internal(format!(
                    "hypothesis did not grow: {previous} -> {} states",
                    hypothesis.machine.num_states()
                )));
            }
        }

        cache.set_phase(Phase::Testing);
        let started = Instant::now();
        stats.eq_queries += 1;
        let counterexample = oracle.find_counterexample(&mut cache, &hypothesis.machine);
        stats.ct_time += started.elapsed();
        let counterexample = counterexample?;

        let learning = cache.counters(Phase::Learning);
        let testing = cache.counters(Phase::Testing);
        stats.mq_queries = learning.queries;
        stats.mq_symbols = learning.symbols;
        stats.ct_queries = testing.queries;
        stats.ct_symbols = testing.symbols;
        stats.states = hypothesis.machine.num_states();

        let Some(counterexample) = counterexample else {
            return Ok(LearnOutcome {
                machine: hypothesis.machine,
                statistics: stats,
                verified: true,
                hypothesis_sizes: sizes,
            });
        };

        let rounds_exhausted = limits
            .max_rounds
            .is_some_and(|max| stats.eq_queries as usize >= max);
        let queries_exhausted = limits
            .max_queries
            .is_some_and(|max| stats.mq_queries + stats.ct_queries >= max);
        if rounds_exhausted || queries_exhausted {
            return Ok(LearnOutcome {
                machine: hypothesis.machine,
                statistics: stats,
                verified: false,
                hypothesis_sizes: sizes,
            });
        }

        cache.set_phase(Phase::Learning);
        let started = Instant::now();
        table.process_counterexample(&counterexample, &mut cache)?;
        stats.mq_time += started.elapsed();
    }
}
