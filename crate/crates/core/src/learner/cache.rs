use std::collections::HashMap;

use crate::sul::{NondeterminismWitness, Sul, SulError};

/// Which part of the learning loop is issuing queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Output queries filling the observation table.
    Learning,
    /// Conformance tests answering equivalence queries.
    Testing,
}

/// Queries and symbols that actually reached the wrapped SUL.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryCounters {
    pub queries: u64,
    pub symbols: u64,
}

#[derive(Debug, Default)]
struct Node {
    // input -> (output, child node)
    children: HashMap<String, (String, usize)>,
}

/// Prefix-tree cache in front of a SUL.
///
/// Steps whose input word is already known are answered from the tree. On a miss
/// the wrapped SUL is reset (lazily, only when it cannot simply continue) and the
/// current word replayed. Replayed outputs are checked against the tree, so any
/// divergence surfaces as [`SulError::Nondeterminism`] with both observations.
#[derive(Debug)]
pub struct CachedSul<S> {
    inner: S,
    nodes: Vec<Node>,
    cursor: usize,
    word: Vec<String>,
    outputs: Vec<String>,
    // Trie nodes along `word`; `path[0]` is the root.
    path: Vec<usize>,
    // (depth, node) the inner SUL has reached since its last reset.
    inner_at: Option<(usize, usize)>,
    phase: Phase,
    learning: QueryCounters,
    testing: QueryCounters,
}

impl<S: Sul> CachedSul<S> {
    pub fn new(inner: S) -> Self {
        CachedSul {
            inner,
            nodes: vec![Node::default()],
            cursor: 0,
            word: Vec::new(),
            outputs: Vec::new(),
            path: vec![0],
            inner_at: None,
            phase: Phase::Learning,
            learning: QueryCounters::default(),
            testing: QueryCounters::default(),
        }
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn counters(&self, phase: Phase) -> QueryCounters {
        match phase {
            Phase::Learning => self.learning,
            Phase::Testing => self.testing,
        }
    }

    /// Number of distinct input words stored (excluding the empty word).
    pub fn cached_words(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn into_inner(self) -> S {
        self.inner
    }

    fn counters_mut(&mut self) -> &mut QueryCounters {
        match self.phase {
            Phase::Learning => &mut self.learning,
            Phase::Testing => &mut self.testing,
        }
    }

    fn inner_step(&mut self, input: &str) -> Result<String, SulError> {
        self.counters_mut().symbols += 1;
        self.inner.step(input)
    }

    /// Brings the inner SUL to the end of `self.word`, continuing from where it
    /// is when that is a prefix of the current word.
    fn sync_inner(&mut self) -> Result<(), SulError> {
        let start = match self.inner_at {
            Some((depth, node)) if self.path.get(depth) == Some(&node) => depth,
            _ => {
                self.inner.reset()?;
                self.counters_mut().queries += 1;
                0
            }
        };
        for k in start..self.word.len() {
            let input = self.word[k].clone();
            let observed = self.inner_step(&input)?;
            if observed != self.outputs[k] {
                self.inner_at = None;
                let mut second = self.outputs[..k].to_vec();
                second.push(observed);
                return Err(SulError::Nondeterminism(NondeterminismWitness {
                    inputs: self.word[..=k].to_vec(),
                    first: self.outputs[..=k].to_vec(),
                    second,
                }));
            }
        }
        self.inner_at = Some((self.word.len(), self.cursor));
        Ok(())
    }
}

impl<S: Sul> Sul for CachedSul<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn inputs(&self) -> &[String] {
        self.inner.inputs()
    }

    fn reset(&mut self) -> Result<(), SulError> {
        self.cursor = 0;
        self.word.clear();
        self.outputs.clear();
        self.path.truncate(1);
        Ok(())
    }

    fn step(&mut self, input: &str) -> Result<String, SulError> {
        if let Some((output, child)) = self.nodes[self.cursor].children.get(input) {
            let output = output.clone();
            self.cursor = *child;
            self.path.push(*child);
            self.word.push(input.to_string());
            self.outputs.push(output.clone());
            return Ok(output);
        }
        self.sync_inner()?;
        let output = match self.inner_step(input) {
            Ok(output) => output,
            Err(err) => {
                self.inner_at = None;
                return Err(err);
            }
        };
        let child = self.nodes.len();
        self.nodes.push(Node::default());
        self.nodes[self.cursor]
            .children
            .insert(input.to_string(), (output.clone(), child));
        self.cursor = child;
        self.path.push(child);
        self.word.push(input.to_string());
        self.outputs.push(output.clone());
        self.inner_at = Some((self.word.len(), child));
        Ok(output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::MealyMachine;
    use crate::sul::MachineSul;

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn counter_machine() -> MealyMachine {
        MealyMachine::new(
            words(&["a", "b"]),
            0,
            vec![
                vec![(1, "0".into()), (0, "r".into())],
                vec![(2, "1".into()), (0, "r".into())],
                vec![(2, "2".into()), (0, "r".into())],
            ],
        )
        .unwrap()
    }

    /// Counts resets and steps reaching the wrapped machine.
    struct Counting {
        inner: MachineSul,
        resets: usize,
        steps: usize,
    }

    impl Sul for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn inputs(&self) -> &[String] {
            self.inner.inputs()
        }
        fn reset(&mut self) -> Result<(), SulError> {
            self.resets += 1;
            self.inner.reset()
        }
        fn step(&mut self, input: &str) -> Result<String, SulError> {
            self.steps += 1;
            self.inner.step(input)
        }
    }

    #[test]
    fn repeated_queries_hit_the_cache() {
        let machine = counter_machine();
        let mut cache = CachedSul::new(Counting {
            inner: MachineSul::new("m", machine.clone()),
            resets: 0,
            steps: 0,
        });
        let w = words(&["a", "a", "b", "a"]);
        let first = cache.query(&w).unwrap();
        assert_eq!(first, machine.run(&w).unwrap());
        let second = cache.query(&w).unwrap();
        assert_eq!(first, second);
        let prefix = cache.query(&w[..2]).unwrap();
        assert_eq!(prefix, first[..2]);
        let inner = cache.into_inner();
        assert_eq!(inner.resets, 1);
        assert_eq!(inner.steps, 4);
    }

    #[test]
    fn extension_continues_without_reset() {
        let machine = counter_machine();
        let mut cache = CachedSul::new(Counting {
            inner: MachineSul::new("m", machine.clone()),
            resets: 0,
            steps: 0,
        });
        cache.query(&words(&["a"])).unwrap();
        // The inner SUL is still positioned after "a"; stepping on is free of resets.
        cache.reset().unwrap();
        cache.step("a").unwrap();
        cache.step("a").unwrap();
        assert_eq!(cache.counters(Phase::Learning).queries, 1);
        // A diverging word forces a fresh query.
        cache.query(&words(&["b"])).unwrap();
        assert_eq!(cache.counters(Phase::Learning).queries, 2);
        let inner = cache.into_inner();
        assert_eq!(inner.resets, 2);
    }

    /// Answers with the number of resets seen so far.
    struct Flaky {
        inputs: Vec<String>,
        resets: usize,
    }

    impl Sul for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn inputs(&self) -> &[String] {
            &self.inputs
        }
        fn reset(&mut self) -> Result<(), SulError> {
            self.resets += 1;
            Ok(())
        }
        fn step(&mut self, _input: &str) -> Result<String, SulError> {
            Ok(self.resets.to_string())
        }
    }

    #[test]
    fn conflicting_replay_is_nondeterminism() {
        let mut cache = CachedSul::new(Flaky {
            inputs: words(&["a", "b"]),
            resets: 0,
        });
        cache.query(&words(&["a"])).unwrap();
        cache.query(&words(&["b"])).unwrap();
        let err = cache.query(&words(&["a", "b"])).unwrap_err();
        let SulError::Nondeterminism(w) = err else {
            panic!("expected nondeterminism, got {err:?}");
        };
        assert_eq!(w.inputs, words(&["a"]));
        assert_eq!(w.first, words(&["1"]));
        assert_eq!(w.second, words(&["3"]));
    }

    #[test]
    fn counters_split_by_phase() {
        let mut cache = CachedSul::new(MachineSul::new("m", counter_machine()));
        cache.query(&words(&["a", "b"])).unwrap();
        cache.set_phase(Phase::Testing);
        cache.query(&words(&["b", "b"])).unwrap();
        cache.query(&words(&["a"])).unwrap();
        assert_eq!(
            cache.counters(Phase::Learning),
            QueryCounters {
                queries: 1,
                symbols: 2
            }
        );
        assert_eq!(
            cache.counters(Phase::Testing),
            QueryCounters {
                queries: 1,
                symbols: 2
            }
        );
    }
}
