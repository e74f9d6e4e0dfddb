//! Learning-based differential testing of reactive protocol implementations.
//!
//! Models of black-box implementations are learned as Mealy machines
//! ([`learner`]), with equivalence queries approximated by conformance testing
//! ([`oracles`]). Learned models are then cross-checked pairwise
//! ([`crosscheck`]) and every difference is a candidate bug to replay against
//! the implementations. The [`mqtt`] module instantiates the approach for MQTT
//! 3.1.1 brokers, including simulated brokers with seeded bugs.

pub mod automata;
pub mod crosscheck;
pub mod learner;
pub mod mqtt;
pub mod oracles;
pub mod sul;

pub use automata::{AutomataError, MealyMachine, StateId};
pub use crosscheck::{apply_filters, confirm, cross_check, Diff, FilterPattern, Verdict};
pub use learner::{learn, LearnError, LearnLimits, LearnOutcome, LearnStatistics};
pub use oracles::{EquivalenceOracle, RandomWalkConfig};
pub use sul::{abstract_output, Sul, SulError};
