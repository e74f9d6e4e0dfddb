//! Equivalence queries approximated by conformance testing.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::automata::MealyMachine;
use crate::sul::{NondeterminismWitness, Sul, SulError};

/// Name of the generator behind [`RandomWalkOracle`], for reports.
pub const RNG_ALGORITHM: &str = "ChaCha8";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("hypothesis alphabet {hypothesis:?} differs from SUL alphabet {sul:?}")]
    AlphabetMismatch {
        sul: Vec<String>,
        hypothesis: Vec<String>,
    },
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sul(#[from] SulError),
}

pub trait EquivalenceOracle {
    /// Searches for an input word on which `sul` and `hypothesis` disagree.
    /// A returned word has been replayed and confirmed on `sul`.
    fn find_counterexample(
        &mut self,
        sul: &mut dyn Sul,
        hypothesis: &MealyMachine,
    ) -> Result<Option<Vec<String>>, OracleError>;

    /// Oracle name and parameters as report key/value pairs.
    fn describe(&self) -> Vec<(&'static str, String)>;
}

fn check_alphabet(sul: &dyn Sul, hypothesis: &MealyMachine) -> Result<(), OracleError> {
    if sul.inputs() != hypothesis.inputs() {
        return Err(OracleError::AlphabetMismatch {
            sul: sul.inputs().to_vec(),
            hypothesis: hypothesis.inputs().to_vec(),
        });
    }
    Ok(())
}

/// Replays a candidate counterexample from a fresh reset. `observed` is what the
/// SUL produced the first time.
fn confirm_counterexample(
    sul: &mut dyn Sul,
    hypothesis: &MealyMachine,
    word: Vec<String>,
    observed: Vec<String>,
) -> Result<Option<Vec<String>>, OracleError> {
    let replayed = sul.query(&word)?;
    if replayed != observed {
        return Err(SulError::Nondeterminism(NondeterminismWitness {
            inputs: word,
            first: observed,
            second: replayed,
        })
        .into());
    }
    let expected = hypothesis.run(&word).map_err(|e| {
        OracleError::InvalidConfig(format!("hypothesis cannot run counterexample: {e}"))
    })?;
    Ok((expected != replayed).then_some(word))
}

/// Inputs and outputs of a test run.
type Run = (Vec<String>, Vec<String>);

/// Runs one test word, stopping at the first output that differs from the
/// hypothesis. Returns the prefix up to and including that output.
fn execute_test(
    sul: &mut dyn Sul,
    hypothesis: &MealyMachine,
    word: &[usize],
) -> Result<Option<Run>, OracleError> {
    sul.reset()?;
    let mut state = hypothesis.initial();
    let mut inputs = Vec::with_capacity(word.len());
    let mut outputs = Vec::with_capacity(word.len());
    for &i in word {
        let input = &hypothesis.inputs()[i];
        let observed = sul.step(input)?;
        let (next, expected) = hypothesis.step_index(state, i);
        inputs.push(input.clone());
        let differs = observed != expected;
        outputs.push(observed);
        if differs {
            return Ok(Some((inputs, outputs)));
        }
        state = next;
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkConfig {
    pub reset_probability: f64,
    pub max_steps: u64,
    pub reset_on_ce: bool,
    pub seed: u64,
}

impl Default for RandomWalkConfig {
    fn default() -> Self {
        RandomWalkConfig {
            reset_probability: 0.05,
            max_steps: 10_000,
            reset_on_ce: true,
            seed: 1,
        }
    }
}

impl RandomWalkConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(0.0..=1.0).contains(&self.reset_probability) {
            return Err(OracleError::InvalidConfig(format!(
                "reset probability {} outside [0, 1]",
                self.reset_probability
            )));
        }
        if self.max_steps == 0 {
            return Err(OracleError::InvalidConfig(
                "max steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Random walks over the input alphabet, executed on the SUL and the hypothesis
/// in lockstep. Inputs are drawn uniformly.
#[derive(Debug, Clone)]
pub struct RandomWalkOracle {
    config: RandomWalkConfig,
    rng: ChaCha8Rng,
    steps: u64,
}

impl RandomWalkOracle {
    pub fn new(config: RandomWalkConfig) -> Result<Self, OracleError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(RandomWalkOracle {
            config,
            rng,
            steps: 0,
        })
    }

    pub fn config(&self) -> &RandomWalkConfig {
        &self.config
    }

    /// Steps consumed from the current budget.
    pub fn steps_taken(&self) -> u64 {
        self.steps
    }
}

impl EquivalenceOracle for RandomWalkOracle {
    fn find_counterexample(
        &mut self,
        sul: &mut dyn Sul,
        hypothesis: &MealyMachine,
    ) -> Result<Option<Vec<String>>, OracleError> {
        check_alphabet(sul, hypothesis)?;
        if self.config.reset_on_ce {
            self.steps = 0;
        }
        let alphabet = hypothesis.inputs().len();
        sul.reset()?;
        let mut state = hypothesis.initial();
        let mut walk = Vec::new();
        let mut observed = Vec::new();
        while self.steps < self.config.max_steps {
            let i = self.rng.gen_range(0..alphabet);
            let input = &hypothesis.inputs()[i];
            let output = sul.step(input)?;
            self.steps += 1;
            let (next, expected) = hypothesis.step_index(state, i);
            walk.push(input.clone());
            let differs = output != expected;
            observed.push(output);
            if differs {
                if let Some(ce) = confirm_counterexample(sul, hypothesis, walk, observed)? {
                    return Ok(Some(ce));
                }
                return Err(OracleError::InvalidConfig(
                    "walk diverged but replay agreed with the hypothesis".into(),
                ));
            }
            state = next;
            if self.rng.gen::<f64>() < self.config.reset_probability {
                sul.reset()?;
                state = hypothesis.initial();
                walk.clear();
                observed.clear();
            }
        }
        Ok(None)
    }

    fn describe(&self) -> Vec<(&'static str, String)> {
        vec![
            ("oracle", "random-walk".into()),
            ("reset_prob", self.config.reset_probability.to_string()),
            ("max_steps", self.config.max_steps.to_string()),
            ("reset_on_ce", self.config.reset_on_ce.to_string()),
            ("seed", self.config.seed.to_string()),
            ("rng", RNG_ALGORITHM.into()),
        ]
    }
}

/// One random-walk equivalence query with a freshly seeded generator.
pub fn random_walk(
    sul: &mut dyn Sul,
    hypothesis: &MealyMachine,
    config: &RandomWalkConfig,
) -> Result<Option<Vec<String>>, OracleError> {
    RandomWalkOracle::new(config.clone())?.find_counterexample(sul, hypothesis)
}

/// A set of suffixes (as input indices) that pairwise distinguishes all
/// inequivalent states of `machine`.
///
/// Built by partition refinement: whenever two states share a signature under
/// the current set but differ on some input's output or on their successors'
/// signatures, the separating word is added.
pub fn characterizing_set(machine: &MealyMachine) -> Vec<Vec<usize>> {
    let n = machine.num_states();
    let k = machine.inputs().len();
    let mut suffixes: Vec<Vec<usize>> = Vec::new();
    let response = |q, word: &[usize]| -> Vec<usize> {
        let mut state = q;
        word.iter()
            .map(|&i| {
                let (next, out) = machine.step_index(state, i);
                state = next;
                machine.outputs().iter().position(|o| o == out).unwrap()
            })
            .collect()
    };

    loop {
        let mut ids: HashMap<Vec<Vec<usize>>, usize> = HashMap::new();
        let block: Vec<usize> = (0..n)
            .map(|q| {
                let sig: Vec<Vec<usize>> = suffixes.iter().map(|w| response(q, w)).collect();
                let next = ids.len();
                *ids.entry(sig).or_insert(next)
            })
            .collect();

        let mut split = None;
        'search: for q1 in 0..n {
            for q2 in q1 + 1..n {
                if block[q1] != block[q2] {
                    continue;
                }
                for i in 0..k {
                    let (n1, o1) = machine.step_index(q1, i);
                    let (n2, o2) = machine.step_index(q2, i);
                    if o1 != o2 {
                        split = Some(vec![i]);
                        break 'search;
                    }
                    if block[n1] != block[n2] {
                        let w = suffixes
                            .iter()
                            .find(|w| response(n1, w) != response(n2, w))
                            .expect("different blocks are separated by some suffix");
                        let mut word = vec![i];
                        word.extend_from_slice(w);
                        split = Some(word);
                        break 'search;
                    }
                }
            }
        }
        match split {
            Some(word) => suffixes.push(word),
            None => return suffixes,
        }
    }
}

/// All words over `k` inputs of length at most `depth`, shortest first.
fn words_up_to(k: usize, depth: usize) -> Vec<Vec<usize>> {
    let mut all = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..depth {
        layer = layer
            .iter()
            .flat_map(|w: &Vec<usize>| {
                (0..k).map(move |i| {
                    let mut next = w.clone();
                    next.push(i);
                    next
                })
            })
            .collect();
        all.extend(layer.iter().cloned());
    }
    all
}

/// The pieces of the W-method suite `P · I^{≤depth} · W`.
struct WSuite {
    cover: Vec<Vec<usize>>,
    middle: Vec<Vec<usize>>,
    suffixes: Vec<Vec<usize>>,
}

impl WSuite {
    fn new(hypothesis: &MealyMachine, depth: usize) -> Self {
        let k = hypothesis.inputs().len();
        let mut cover = vec![Vec::new()];
        for access in hypothesis.access_sequences() {
            for i in 0..k {
                let mut word = access.clone();
                word.push(i);
                cover.push(word);
            }
        }
        let mut suffixes = characterizing_set(hypothesis);
        if suffixes.is_empty() {
            suffixes.push(Vec::new());
        }
        WSuite {
            cover,
            middle: words_up_to(k, depth),
            suffixes,
        }
    }

    fn tests(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.cover.iter().flat_map(move |p| {
            self.middle.iter().flat_map(move |m| {
                self.suffixes.iter().map(move |w| {
                    let mut word = Vec::with_capacity(p.len() + m.len() + w.len());
                    word.extend_from_slice(p);
                    word.extend_from_slice(m);
                    word.extend_from_slice(w);
                    word
                })
            })
        })
    }
}

/// The full W-method test suite as input-index words, in execution order.
pub fn w_method_suite(hypothesis: &MealyMachine, depth: usize) -> Vec<Vec<usize>> {
    WSuite::new(hypothesis, depth).tests().collect()
}

/// Executes the W-method suite for `depth` extra states on `sul`.
pub fn w_method(
    sul: &mut dyn Sul,
    hypothesis: &MealyMachine,
    depth: usize,
) -> Result<Option<Vec<String>>, OracleError> {
    check_alphabet(sul, hypothesis)?;
    let suite = WSuite::new(hypothesis, depth);
    for test in suite.tests() {
        if let Some((word, observed)) = execute_test(sul, hypothesis, &test)? {
            if let Some(ce) = confirm_counterexample(sul, hypothesis, word, observed)? {
                return Ok(Some(ce));
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WMethodOracle {
    pub depth: usize,
}

impl WMethodOracle {
    pub fn new(depth: usize) -> Self {
        WMethodOracle { depth }
    }
}

impl EquivalenceOracle for WMethodOracle {
    fn find_counterexample(
        &mut self,
        sul: &mut dyn Sul,
        hypothesis: &MealyMachine,
    ) -> Result<Option<Vec<String>>, OracleError> {
        w_method(sul, hypothesis, self.depth)
    }

    fn describe(&self) -> Vec<(&'static str, String)> {
        vec![
            ("oracle", "w-method".into()),
            ("depth", self.depth.to_string()),
        ]
    }
}

/// Exact equivalence queries against a known target machine, answered with a
/// shortest distinguishing word. For experiments where the target is available.
#[derive(Debug, Clone)]
pub struct PerfectOracle {
    target: MealyMachine,
}

impl PerfectOracle {
    pub fn new(target: MealyMachine) -> Self {
        PerfectOracle { target }
    }
}

impl EquivalenceOracle for PerfectOracle {
    fn find_counterexample(
        &mut self,
        sul: &mut dyn Sul,
        hypothesis: &MealyMachine,
    ) -> Result<Option<Vec<String>>, OracleError> {
        check_alphabet(sul, hypothesis)?;
        hypothesis
            .distinguishing_word(&self.target)
            .map_err(|e| OracleError::InvalidConfig(e.to_string()))
    }

    fn describe(&self) -> Vec<(&'static str, String)> {
        vec![("oracle", "perfect".into())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sul::MachineSul;

    fn syms(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn target3() -> MealyMachine {
        MealyMachine::new(
            syms(&["a", "b"]),
            0,
            vec![
                vec![(1, "0".into()), (0, "r".into())],
                vec![(2, "0".into()), (0, "r".into())],
                vec![(2, "1".into()), (0, "r".into())],
            ],
        )
        .unwrap()
    }

    /// `target3` with states 1 and 2 merged.
    fn merged2() -> MealyMachine {
        MealyMachine::new(
            syms(&["a", "b"]),
            0,
            vec![
                vec![(1, "0".into()), (0, "r".into())],
                vec![(1, "0".into()), (0, "r".into())],
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_machines_use_full_budget() {
        let m = target3();
        let mut sul = MachineSul::new("m", m.clone());
        let config = RandomWalkConfig {
            max_steps: 500,
            ..Default::default()
        };
        let mut oracle = RandomWalkOracle::new(config).unwrap();
        assert_eq!(oracle.find_counterexample(&mut sul, &m).unwrap(), None);
        assert_eq!(oracle.steps_taken(), 500);
    }

    #[test]
    fn random_walk_is_reproducible() {
        let mut sul = MachineSul::new("m", target3());
        let hyp = merged2();
        let config = RandomWalkConfig::default();
        let a = random_walk(&mut sul, &hyp, &config).unwrap();
        let b = random_walk(&mut sul, &hyp, &config).unwrap();
        assert!(a.is_some());
        assert_eq!(a, b);
        let ce = a.unwrap();
        assert_ne!(sul.query(&ce).unwrap(), hyp.run(&ce).unwrap());
    }

    #[test]
    fn budget_carries_over_without_reset_on_ce() {
        let m = target3();
        let mut sul = MachineSul::new("m", m.clone());
        let config = RandomWalkConfig {
            max_steps: 100,
            reset_on_ce: false,
            ..Default::default()
        };
        let mut oracle = RandomWalkOracle::new(config).unwrap();
        assert_eq!(oracle.find_counterexample(&mut sul, &m).unwrap(), None);
        // Budget exhausted: a wrong hypothesis now goes unnoticed.
        assert_eq!(
            oracle.find_counterexample(&mut sul, &merged2()).unwrap(),
            None
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        for config in [
            RandomWalkConfig {
                reset_probability: 1.5,
                ..Default::default()
            },
            RandomWalkConfig {
                max_steps: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                RandomWalkOracle::new(config),
                Err(OracleError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn alphabet_mismatch_rejected() {
        let mut sul = MachineSul::new("m", target3());
        let other = MealyMachine::constant(syms(&["a", "c"]), "x").unwrap();
        assert!(matches!(
            w_method(&mut sul, &other, 0),
            Err(OracleError::AlphabetMismatch { .. })
        ));
        assert!(matches!(
            random_walk(&mut sul, &other, &RandomWalkConfig::default()),
            Err(OracleError::AlphabetMismatch { .. })
        ));
    }

    #[test]
    fn w_method_accepts_equal_machine() {
        let m = target3();
        let mut sul = MachineSul::new("m", m.clone());
        assert_eq!(w_method(&mut sul, &m, 0).unwrap(), None);
    }

    #[test]
    fn w_method_finds_merged_state() {
        let mut sul = MachineSul::new("m", target3());
        let hyp = merged2();
        let ce = w_method(&mut sul, &hyp, 1)
            .unwrap()
            .expect("counterexample");
        assert_ne!(target3().run(&ce).unwrap(), hyp.run(&ce).unwrap());
    }

    #[test]
    fn characterizing_set_separates_states() {
        let m = target3();
        let w = characterizing_set(&m);
        for q1 in m.states() {
            for q2 in q1 + 1..m.num_states() {
                assert!(w.iter().any(|word| {
                    let names: Vec<&str> = word.iter().map(|&i| m.inputs()[i].as_str()).collect();
                    m.run_from(q1, &names).unwrap().1 != m.run_from(q2, &names).unwrap().1
                }));
            }
        }
        // Suffix-closed.
        for word in &w {
            for k in 1..word.len() {
                assert!(w.contains(&word[k..].to_vec()));
            }
        }
    }

    #[test]
    fn suite_size_matches_formula() {
        let rows = (0..3)
            .map(|q| {
                (0..7)
                    .map(|i| ((q + i) % 3, if i == q { "x" } else { "y" }.to_string()))
                    .collect()
            })
            .collect();
        let inputs: Vec<String> = (0..7).map(|i| format!("i{i}")).collect();
        let m = MealyMachine::new(inputs, 0, rows).unwrap();
        assert_eq!(m.num_states(), 3);
        let w = characterizing_set(&m).len().max(1);
        let cover = 1 + m.num_states() * 7;
        assert_eq!(w_method_suite(&m, 1).len(), cover * (1 + 7) * w);
        assert_eq!(w_method_suite(&m, 0).len(), cover * w);
    }
}
