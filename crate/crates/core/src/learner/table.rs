use std::collections::{HashMap, HashSet};

use super::LearnError;
use crate::automata::MealyMachine;
use crate::sul::{Sul, SulError};

pub type Word = Vec<String>;

/// A hypothesis together with the short prefix that accesses each of its states.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub machine: MealyMachine,
    pub access: Vec<Word>,
}

/// What a call to [`ObservationTable::close_and_make_consistent`] changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RepairSummary {
    pub promotions: usize,
    pub new_suffixes: usize,
}

/// Observation table for Mealy-machine L*.
///
/// Rows are indexed by prefixes in S ∪ S·I, columns by suffixes in E. A cell holds
/// the outputs the SUL produced for the suffix part of `prefix · suffix`.
#[derive(Debug, Clone)]
pub struct ObservationTable {
    inputs: Vec<String>,
    short_prefixes: Vec<Word>,
    suffixes: Vec<Word>,
    rows: HashMap<Word, Vec<Vec<String>>>,
}

impl ObservationTable {
    /// S = {ε}, E = every single input. Cells are empty until [`Self::fill`].
    pub fn new(inputs: Vec<String>) -> Self {
        let suffixes = inputs.iter().map(|i| vec![i.clone()]).collect();
        ObservationTable {
            inputs,
            short_prefixes: vec![Vec::new()],
            suffixes,
            rows: HashMap::new(),
        }
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn short_prefixes(&self) -> &[Word] {
        &self.short_prefixes
    }

    pub fn suffixes(&self) -> &[Word] {
        &self.suffixes
    }

    /// S·I in order: by short prefix, then by input.
    pub fn long_prefixes(&self) -> Vec<Word> {
        self.short_prefixes
            .iter()
            .flat_map(|s| {
                self.inputs.iter().map(move |i| {
                    let mut w = s.clone();
                    w.push(i.clone());
                    w
                })
            })
            .collect()
    }

    pub fn row(&self, prefix: &[String]) -> Option<&[Vec<String>]> {
        self.rows
            .get(prefix)
            .filter(|r| r.len() == self.suffixes.len())
            .map(Vec::as_slice)
    }

    /// Appends a suffix column unless already present. Returns whether it was new.
    pub fn add_suffix(&mut self, suffix: Word) -> bool {
        if suffix.is_empty() || self.suffixes.contains(&suffix) {
            return false;
        }
        self.suffixes.push(suffix);
        true
    }

    /// Moves a prefix into S unless already present. Returns whether it was new.
    pub fn add_short_prefix(&mut self, prefix: Word) -> bool {
        if self.short_prefixes.contains(&prefix) {
            return false;
        }
        self.short_prefixes.push(prefix);
        true
    }

    /// Issues output queries for every missing cell.
    pub fn fill(&mut self, sul: &mut dyn Sul) -> Result<(), SulError> {
        let mut prefixes = self.short_prefixes.clone();
        prefixes.extend(self.long_prefixes());
        for prefix in prefixes {
            let have = self.rows.get(&prefix).map_or(0, Vec::len);
            for e in have..self.suffixes.len() {
                let suffix = &self.suffixes[e];
                let mut word = prefix.clone();
                word.extend(suffix.iter().cloned());
                let outputs = sul.query(&word)?;
                let cell = outputs[prefix.len()..].to_vec();
                self.rows.entry(prefix.clone()).or_default().push(cell);
            }
        }
        Ok(())
    }

    /// First row of S·I that matches no row of S.
    pub fn find_unclosed(&self) -> Option<Word> {
        let short_rows: HashSet<&[Vec<String>]> = self
            .short_prefixes
            .iter()
            .filter_map(|s| self.row(s))
            .collect();
        self.long_prefixes()
            .into_iter()
            .find(|t| self.row(t).is_some_and(|r| !short_rows.contains(r)))
    }

    /// A suffix `a·e` exposing two equal S-rows whose `a`-successors differ on `e`.
    pub fn find_inconsistency(&self) -> Option<Word> {
        let mut representative: HashMap<&[Vec<String>], &Word> = HashMap::new();
        for s in &self.short_prefixes {
            let row = self.row(s)?;
            let Some(&rep) = representative.get(row) else {
                representative.insert(row, s);
                continue;
            };
            for input in &self.inputs {
                let (mut a, mut b) = (rep.clone(), s.clone());
                a.push(input.clone());
                b.push(input.clone());
                let (ra, rb) = (self.row(&a)?, self.row(&b)?);
                if let Some(e) = (0..self.suffixes.len()).find(|&e| ra[e] != rb[e]) {
                    let mut suffix = vec![input.clone()];
                    suffix.extend(self.suffixes[e].iter().cloned());
                    return Some(suffix);
                }
            }
        }
        None
    }

    pub fn is_closed(&self) -> bool {
        self.find_unclosed().is_none()
    }

    pub fn is_consistent(&self) -> bool {
        self.find_inconsistency().is_none()
    }

    /// Fills the table, then promotes unclosed rows and adds separating suffixes
    /// until the table is closed and consistent. Never removes rows or columns.
    pub fn close_and_make_consistent(
        &mut self,
        sul: &mut dyn Sul,
    ) -> Result<RepairSummary, SulError> {
        let mut summary = RepairSummary::default();
        loop {
            self.fill(sul)?;
            if let Some(prefix) = self.find_unclosed() {
                self.short_prefixes.push(prefix);
                summary.promotions += 1;
                continue;
            }
            if let Some(suffix) = self.find_inconsistency() {
                if self.add_suffix(suffix) {
                    summary.new_suffixes += 1;
                    continue;
                }
            }
            return Ok(summary);
        }
    }

    /// Builds the hypothesis induced by a closed and consistent table. States are
    /// the distinct rows of S; the first short prefix with a row represents it.
    pub fn hypothesis(&self) -> Result<Hypothesis, LearnError> {
        let mut state_of: HashMap<&[Vec<String>], usize> = HashMap::new();
        let mut representatives: Vec<&Word> = Vec::new();
        for s in &self.short_prefixes {
            let row = self
                .row(s)
                .ok_or_else(|| LearnError::Internal("table has unfilled rows".into()))?;
            if !state_of.contains_key(row) {
                state_of.insert(row, representatives.len());
                representatives.push(s);
            }
        }

        let single: Vec<usize> = self
            .inputs
            .iter()
            .map(|i| {
                self.suffixes
                    .iter()
                    .position(|e| e.len() == 1 && &e[0] == i)
                    .ok_or_else(|| {
                        LearnError::Internal(format!("single-input suffix {i:?} missing from E"))
                    })
            })
            .collect::<Result<_, _>>()?;

        let mut rows = Vec::with_capacity(representatives.len());
        for rep in &representatives {
            let row = self.row(rep).expect("checked above");
            let mut transitions = Vec::with_capacity(self.inputs.len());
            for (k, input) in self.inputs.iter().enumerate() {
                let mut next = (*rep).clone();
                next.push(input.clone());
                let next_row = self
                    .row(&next)
                    .ok_or_else(|| LearnError::Internal("table has unfilled rows".into()))?;
                let target = *state_of
                    .get(next_row)
                    .ok_or_else(|| LearnError::Internal("table is not closed".into()))?;
                transitions.push((target, row[single[k]][0].clone()));
            }
            rows.push(transitions);
        }

        let (machine, renaming) = MealyMachine::with_renaming(self.inputs.clone(), 0, rows)
            .map_err(|e| LearnError::Internal(e.to_string()))?;
        let mut access = vec![Vec::new(); machine.num_states()];
        for (old, rep) in representatives.iter().enumerate() {
            match renaming[old] {
                Some(new) => access[new] = (*rep).clone(),
                None => {
                    return Err(LearnError::Internal(
                        "hypothesis state unreachable from its access prefix".into(),
                    ))
                }
            }
        }
        Ok(Hypothesis { machine, access })
    }

    /// Incorporates a counterexample by Rivest–Schapire analysis: a binary search
    /// finds the split point where swapping the hypothesis' access prefix for the
    /// real one changes the SUL's answer, and the remaining suffix (with its own
    /// suffixes) is added to E.
    ///
    /// Returns the suffix that was added.
    pub fn process_counterexample(
        &mut self,
        counterexample: &[String],
        sul: &mut dyn Sul,
    ) -> Result<Word, LearnError> {
        let hyp = self.hypothesis()?;
        let observed = sul.query(counterexample)?;
        let predicted = hyp.machine.run(counterexample)?;
        let Some(mismatch) = (0..observed.len()).find(|&k| observed[k] != predicted[k]) else {
            return Err(LearnError::SpuriousCounterexample(counterexample.to_vec()));
        };
        let ce = &counterexample[..=mismatch];

        // agrees(i): SUL and hypothesis agree on ce[i..] after the access prefix of
        // the hypothesis state reached by ce[..i]. agrees(0) is false, agrees(len) true.
        let mut agrees = |i: usize| -> Result<bool, LearnError> {
            let (state, _) = hyp.machine.run_from(hyp.machine.initial(), &ce[..i])?;
            let mut word = hyp.access[state].clone();
            word.extend(ce[i..].iter().cloned());
            let outputs = sul.query(&word)?;
            let (_, expected) = hyp.machine.run_from(state, &ce[i..])?;
            Ok(outputs[outputs.len() - expected.len()..] == expected[..])
        };
        let (mut lo, mut hi) = (0, ce.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if agrees(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let suffix = ce[hi..].to_vec();
        if suffix.is_empty() {
            return Err(LearnError::Internal(
                "counterexample analysis produced an empty suffix".into(),
            ));
        }
        for start in (0..suffix.len()).rev() {
            self.add_suffix(suffix[start..].to_vec());
        }
        self.fill(sul)?;
        Ok(suffix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sul::MachineSul;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn syms(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    /// Outputs "1" on the third consecutive `a`, "0" otherwise; `b` resets.
    fn third_a() -> MealyMachine {
        MealyMachine::new(
            syms(&["a", "b"]),
            0,
            vec![
                vec![(1, "0".into()), (0, "0".into())],
                vec![(2, "0".into()), (0, "0".into())],
                vec![(0, "1".into()), (0, "0".into())],
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_sul_gives_one_state() {
        let m = MealyMachine::constant(syms(&["x", "y"]), "ok").unwrap();
        let mut sul = MachineSul::new("c", m.clone());
        let mut table = ObservationTable::new(m.inputs().to_vec());
        let summary = table.close_and_make_consistent(&mut sul).unwrap();
        assert_eq!(summary, RepairSummary::default());
        let hyp = table.hypothesis().unwrap();
        assert_eq!(hyp.machine, m);
        assert_eq!(hyp.access, vec![Vec::<String>::new()]);
    }

    #[test]
    fn closed_table_is_a_fixpoint() {
        let m = third_a();
        let mut sul = MachineSul::new("m", m);
        let mut table = ObservationTable::new(syms(&["a", "b"]));
        table.close_and_make_consistent(&mut sul).unwrap();
        let before = (table.short_prefixes().to_vec(), table.suffixes().to_vec());
        let summary = table.close_and_make_consistent(&mut sul).unwrap();
        assert_eq!(summary, RepairSummary::default());
        assert_eq!(
            before,
            (table.short_prefixes().to_vec(), table.suffixes().to_vec())
        );
    }

    #[test]
    fn unmatched_long_row_is_promoted() {
        // Two states separated by the output of `a`: state 1 answers "1".
        let m = MealyMachine::new(
            syms(&["a"]),
            0,
            vec![vec![(1, "0".into())], vec![(1, "1".into())]],
        )
        .unwrap();
        let mut sul = MachineSul::new("m", m);
        let mut table = ObservationTable::new(syms(&["a"]));
        table.fill(&mut sul).unwrap();
        assert_eq!(table.find_unclosed(), Some(syms(&["a"])));
        let summary = table.close_and_make_consistent(&mut sul).unwrap();
        assert_eq!(summary.promotions, 1);
        assert_eq!(table.short_prefixes(), &[vec![], syms(&["a"])]);
    }

    #[test]
    fn inconsistency_yields_extended_suffix() {
        let m = third_a();
        let mut sul = MachineSul::new("m", m);
        let mut table = ObservationTable::new(syms(&["a", "b"]));
        // ε and "b" have identical rows, so do ε and "a" under single suffixes;
        // force "a" into S alongside ε to create equal rows with different futures.
        table.add_short_prefix(syms(&["a"]));
        table.fill(&mut sul).unwrap();
        assert_eq!(table.row(&[]), table.row(&syms(&["a"])));
        assert_eq!(table.find_inconsistency(), Some(syms(&["a", "a"])));
        table.close_and_make_consistent(&mut sul).unwrap();
        assert!(table.is_consistent() && table.is_closed());
    }

    #[test]
    fn hypothesis_agrees_with_every_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let target = MealyMachine::random(&mut rng, 5, 3, 2);
            let mut sul = MachineSul::new("t", target.clone());
            let mut table = ObservationTable::new(target.inputs().to_vec());
            table.close_and_make_consistent(&mut sul).unwrap();
            let hyp = table.hypothesis().unwrap();
            let mut prefixes = table.short_prefixes().to_vec();
            prefixes.extend(table.long_prefixes());
            for p in &prefixes {
                for (e, suffix) in table.suffixes().iter().enumerate() {
                    let mut word = p.clone();
                    word.extend(suffix.iter().cloned());
                    let out = hyp.machine.run(&word).unwrap();
                    assert_eq!(out[p.len()..], table.row(p).unwrap()[e][..]);
                }
            }
        }
    }

    #[test]
    fn single_inputs_never_refute_a_filled_table() {
        // E starts with every single input, so each one-symbol word is already
        // answered by the table and cannot be a counterexample.
        let m = third_a();
        let mut sul = MachineSul::new("m", m);
        let mut table = ObservationTable::new(syms(&["a", "b"]));
        table.close_and_make_consistent(&mut sul).unwrap();
        for input in ["a", "b"] {
            let err = table
                .process_counterexample(&syms(&[input]), &mut sul)
                .unwrap_err();
            assert!(matches!(err, LearnError::SpuriousCounterexample(_)));
        }
    }

    #[test]
    fn spurious_counterexample_is_rejected() {
        let m = third_a();
        let mut sul = MachineSul::new("m", m);
        let mut table = ObservationTable::new(syms(&["a", "b"]));
        table.close_and_make_consistent(&mut sul).unwrap();
        // The initial hypothesis already predicts "b" correctly.
        let err = table
            .process_counterexample(&syms(&["b"]), &mut sul)
            .unwrap_err();
        assert!(matches!(err, LearnError::SpuriousCounterexample(_)));
    }

    #[test]
    fn counterexample_adds_a_state() {
        let m = third_a();
        let mut sul = MachineSul::new("m", m.clone());
        let mut table = ObservationTable::new(syms(&["a", "b"]));
        table.close_and_make_consistent(&mut sul).unwrap();
        let before = table.hypothesis().unwrap().machine.num_states();
        assert_eq!(before, 1);
        table
            .process_counterexample(&syms(&["a", "a", "a"]), &mut sul)
            .unwrap();
        table.close_and_make_consistent(&mut sul).unwrap();
        let after = table.hypothesis().unwrap().machine;
        assert!(after.num_states() > before);
        assert!(is_suffix_closed(table.suffixes()));
        assert!(is_prefix_closed(table.short_prefixes()));
    }

    #[test]
    fn repair_promotions_bounded_by_states_times_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let target = MealyMachine::random(&mut rng, 5, 3, 2);
            let mut sul = MachineSul::new("t", target.clone());
            let mut table = ObservationTable::new(target.inputs().to_vec());
            let summary = table.close_and_make_consistent(&mut sul).unwrap();
            assert!(
                summary.promotions <= target.num_states() * target.inputs().len(),
                "{summary:?}"
            );
            assert!(summary.promotions < target.num_states());
        }
    }

    pub(crate) fn is_suffix_closed(words: &[Word]) -> bool {
        words
            .iter()
            .all(|w| (1..w.len()).all(|k| words.contains(&w[k..].to_vec())))
    }

    pub(crate) fn is_prefix_closed(words: &[Word]) -> bool {
        words
            .iter()
            .all(|w| (0..w.len()).all(|k| words.contains(&w[..k].to_vec())))
    }
}
