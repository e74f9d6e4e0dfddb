//! Deterministic, input-enabled Mealy machines.
//!
//! Machines are kept in a canonical form: unreachable states are pruned and the
//! remaining states are numbered in breadth-first order from the initial state,
//! exploring inputs in alphabet order. Two minimal machines over the same
//! alphabet are therefore output-equivalent exactly when they compare equal.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

pub type StateId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutomataError {
    #[error("unknown state {0}")]
    UnknownState(StateId),
    #[error("input symbol {0:?} is not in the alphabet")]
    UnknownInput(String),
    #[error("state {state} has no transition for input {input:?}: machine is not input-enabled")]
    NotInputEnabled { state: String, input: String },
    #[error("transition from state {from} targets unknown state {to}")]
    DanglingTarget { from: String, to: String },
    #[error("input alphabet is empty")]
    EmptyAlphabet,
    #[error("input symbol {0:?} appears twice in the alphabet")]
    DuplicateInput(String),
    #[error("input alphabets differ: {left:?} vs {right:?}")]
    AlphabetMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A deterministic Mealy machine with a total transition function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MealyMachine {
    inputs: Vec<String>,
    outputs: Vec<String>,
    // Row-major: entry `q * inputs.len() + i` holds (successor, output index).
    transitions: Vec<(StateId, usize)>,
}

impl MealyMachine {
    /// Builds a machine from a per-state transition table.
    ///
    /// `rows[q][i]` is the successor and output of state `q` under input `i`.
    /// The result is pruned to the states reachable from `initial` and renumbered
    /// canonically.
    pub fn new(
        inputs: Vec<String>,
        initial: StateId,
        rows: Vec<Vec<(StateId, String)>>,
    ) -> Result<Self, AutomataError> {
        Self::with_renaming(inputs, initial, rows).map(|(m, _)| m)
    }

    /// Like [`MealyMachine::new`], also returning where each original state ended
    /// up (`None` for pruned states).
    pub fn with_renaming(
        inputs: Vec<String>,
        initial: StateId,
        rows: Vec<Vec<(StateId, String)>>,
    ) -> Result<(Self, Vec<Option<StateId>>), AutomataError> {
        if inputs.is_empty() {
            return Err(AutomataError::EmptyAlphabet);
        }
        let mut seen = BTreeSet::new();
        for input in &inputs {
            if !seen.insert(input.as_str()) {
                return Err(AutomataError::DuplicateInput(input.clone()));
            }
        }
        if initial >= rows.len() {
            return Err(AutomataError::UnknownState(initial));
        }
        for (q, row) in rows.iter().enumerate() {
            if row.len() != inputs.len() {
                let input = inputs
                    .get(row.len())
                    .cloned()
                    .unwrap_or_else(|| "<extra>".to_string());
                return Err(AutomataError::NotInputEnabled {
                    state: q.to_string(),
                    input,
                });
            }
            for (next, _) in row {
                if *next >= rows.len() {
                    return Err(AutomataError::DanglingTarget {
                        from: q.to_string(),
                        to: next.to_string(),
                    });
                }
            }
        }

        // Breadth-first renumbering from the initial state.
        let mut renaming = vec![None; rows.len()];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([initial]);
        renaming[initial] = Some(0);
        while let Some(q) = queue.pop_front() {
            order.push(q);
            for (next, _) in &rows[q] {
                if renaming[*next].is_none() {
                    renaming[*next] = Some(order.len() + queue.len());
                    queue.push_back(*next);
                }
            }
        }

        let outputs: Vec<String> = order
            .iter()
            .flat_map(|&q| rows[q].iter().map(|(_, o)| o.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let output_index: HashMap<&str, usize> = outputs
            .iter()
            .enumerate()
            .map(|(i, o)| (o.as_str(), i))
            .collect();

        let mut transitions = Vec::with_capacity(order.len() * inputs.len());
        for &q in &order {
            for (next, out) in &rows[q] {
                let next = renaming[*next].expect("successor of a reachable state is reachable");
                transitions.push((next, output_index[out.as_str()]));
            }
        }

        Ok((
            MealyMachine {
                inputs,
                outputs,
                transitions,
            },
            renaming,
        ))
    }

    /// A machine with a single state emitting `output` on every input.
    pub fn constant(inputs: Vec<String>, output: &str) -> Result<Self, AutomataError> {
        let row = inputs.iter().map(|_| (0, output.to_string())).collect();
        Self::new(inputs, 0, vec![row])
    }

    /// Generates a random machine with at most `states` states (unreachable
    /// states are pruned). Inputs are named `a0..`, outputs `o0..`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        states: usize,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        assert!(states > 0 && inputs > 0 && outputs > 0);
        let alphabet = (0..inputs).map(|i| format!("a{i}")).collect();
        let rows = (0..states)
            .map(|_| {
                (0..inputs)
                    .map(|_| {
                        (
                            rng.gen_range(0..states),
                            format!("o{}", rng.gen_range(0..outputs)),
                        )
                    })
                    .collect()
            })
            .collect();
        Self::new(alphabet, 0, rows).expect("random table is well-formed")
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn num_states(&self) -> usize {
        self.transitions.len() / self.inputs.len()
    }

    pub fn initial(&self) -> StateId {
        0
    }

    pub fn states(&self) -> std::ops::Range<StateId> {
        0..self.num_states()
    }

    pub fn input_index(&self, input: &str) -> Option<usize> {
        self.inputs.iter().position(|i| i == input)
    }

    /// Successor and output for an input given by its alphabet index.
    pub fn step_index(&self, state: StateId, input: usize) -> (StateId, &str) {
        let (next, out) = self.transitions[state * self.inputs.len() + input];
        (next, &self.outputs[out])
    }

    pub fn step(&self, state: StateId, input: &str) -> Result<(StateId, &str), AutomataError> {
        if state >= self.num_states() {
            return Err(AutomataError::UnknownState(state));
        }
        let i = self
            .input_index(input)
            .ok_or_else(|| AutomataError::UnknownInput(input.to_string()))?;
        Ok(self.step_index(state, i))
    }

    pub fn run<S: AsRef<str>>(&self, word: &[S]) -> Result<Vec<String>, AutomataError> {
        self.run_from(self.initial(), word).map(|(_, out)| out)
    }

    /// Runs `word` from `state`, returning the reached state and the outputs.
    pub fn run_from<S: AsRef<str>>(
        &self,
        state: StateId,
        word: &[S],
    ) -> Result<(StateId, Vec<String>), AutomataError> {
        let mut q = state;
        let mut outputs = Vec::with_capacity(word.len());
        for input in word {
            let (next, out) = self.step(q, input.as_ref())?;
            outputs.push(out.to_string());
            q = next;
        }
        Ok((q, outputs))
    }

    /// Index-based run; panics on out-of-range indices.
    pub fn run_indices(&self, word: &[usize]) -> Vec<&str> {
        let mut q = self.initial();
        word.iter()
            .map(|&i| {
                let (next, out) = self.step_index(q, i);
                q = next;
                out
            })
            .collect()
    }

    pub fn check_same_alphabet(&self, other: &MealyMachine) -> Result<(), AutomataError> {
        if self.inputs != other.inputs {
            return Err(AutomataError::AlphabetMismatch {
                left: self.inputs.clone(),
                right: other.inputs.clone(),
            });
        }
        Ok(())
    }

    /// Shortest input word reaching each state, ties broken by alphabet order.
    pub fn access_sequences(&self) -> Vec<Vec<usize>> {
        let mut access: Vec<Option<Vec<usize>>> = vec![None; self.num_states()];
        access[self.initial()] = Some(Vec::new());
        let mut queue = VecDeque::from([self.initial()]);
        while let Some(q) = queue.pop_front() {
            for i in 0..self.inputs.len() {
                let (next, _) = self.step_index(q, i);
                if access[next].is_none() {
                    let mut word = access[q].clone().unwrap();
                    word.push(i);
                    access[next] = Some(word);
                    queue.push_back(next);
                }
            }
        }
        access.into_iter().map(|w| w.unwrap()).collect()
    }

    /// Partition refinement to the coarsest output-compatible partition, then the
    /// quotient in canonical form.
    pub fn minimize(&self) -> MealyMachine {
        let n = self.num_states();
        let k = self.inputs.len();

        let mut block = relabel((0..n).map(|q| {
            (0..k)
                .map(|i| self.transitions[q * k + i].1)
                .collect::<Vec<_>>()
        }));
        let mut count = block.iter().max().map_or(0, |b| b + 1);
        loop {
            let refined = relabel((0..n).map(|q| {
                let mut sig = Vec::with_capacity(k + 1);
                sig.push(block[q]);
                sig.extend((0..k).map(|i| block[self.transitions[q * k + i].0]));
                sig
            }));
            let refined_count = refined.iter().max().map_or(0, |b| b + 1);
            block = refined;
            if refined_count == count {
                break;
            }
            count = refined_count;
        }

        let mut rows: Vec<Option<Vec<(StateId, String)>>> = vec![None; count];
        for q in 0..n {
            if rows[block[q]].is_none() {
                rows[block[q]] = Some(
                    (0..k)
                        .map(|i| {
                            let (next, out) = self.step_index(q, i);
                            (block[next], out.to_string())
                        })
                        .collect(),
                );
            }
        }
        let rows = rows.into_iter().map(Option::unwrap).collect();
        MealyMachine::new(self.inputs.clone(), block[self.initial()], rows)
            .expect("quotient of a well-formed machine is well-formed")
    }

    /// Decides output equivalence by comparing canonical minimal forms.
    pub fn is_equivalent(&self, other: &MealyMachine) -> Result<bool, AutomataError> {
        self.check_same_alphabet(other)?;
        Ok(self.minimize() == other.minimize())
    }

    /// A shortest input word on which the two machines produce different
    /// outputs, or `None` if they are output-equivalent.
    pub fn distinguishing_word(
        &self,
        other: &MealyMachine,
    ) -> Result<Option<Vec<String>>, AutomataError> {
        self.check_same_alphabet(other)?;
        let k = self.inputs.len();
        type Pair = (StateId, StateId);
        let mut parent: HashMap<Pair, Option<(Pair, usize)>> = HashMap::new();
        let start = (self.initial(), other.initial());
        parent.insert(start, None);
        let mut queue = VecDeque::from([start]);
        while let Some((a, b)) = queue.pop_front() {
            for i in 0..k {
                let (na, oa) = self.step_index(a, i);
                let (nb, ob) = other.step_index(b, i);
                if oa != ob {
                    let mut word = vec![i];
                    let mut cur = (a, b);
                    while let Some(Some((prev, input))) = parent.get(&cur) {
                        word.push(*input);
                        cur = *prev;
                    }
                    word.reverse();
                    return Ok(Some(
                        word.into_iter().map(|i| self.inputs[i].clone()).collect(),
                    ));
                }
                if let std::collections::hash_map::Entry::Vacant(e) = parent.entry((na, nb)) {
                    e.insert(Some(((a, b), i)));
                    queue.push_back((na, nb));
                }
            }
        }
        Ok(None)
    }

    /// Line-based model file; see [`MealyMachine::deserialize`].
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "inputs: {}", join_symbols(&self.inputs));
        let _ = writeln!(out, "outputs: {}", join_symbols(&self.outputs));
        let _ = writeln!(out, "initial: q{}", self.initial());
        for q in self.states() {
            for (i, input) in self.inputs.iter().enumerate() {
                let (next, output) = self.step_index(q, i);
                let _ = writeln!(
                    out,
                    "q{q} -- {} / {} -> q{next}",
                    quote_symbol(input),
                    quote_symbol(output)
                );
            }
        }
        out
    }

    /// Parses a model file.
    ///
    /// ```text
    /// inputs: Connect,Disconnect
    /// outputs: C_Ack,ConnectionClosed
    /// initial: q0
    /// q0 -- Connect / C_Ack -> q1
    /// ```
    ///
    /// Symbols containing whitespace, commas or quotes are double-quoted with
    /// backslash escapes. Blank lines and lines starting with `#` are ignored.
    /// State names are arbitrary tokens.
    pub fn deserialize(text: &str) -> Result<Self, AutomataError> {
        let mut inputs: Option<Vec<String>> = None;
        let mut outputs: Option<Vec<String>> = None;
        let mut initial: Option<String> = None;
        let mut state_ids: HashMap<String, StateId> = HashMap::new();
        let mut state_names: Vec<String> = Vec::new();
        let mut partial: Vec<Vec<Option<(String, String)>>> = Vec::new();

        let parse_err = |line: usize, message: String| AutomataError::Parse { line, message };

        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("inputs:") {
                let list = split_symbol_list(rest).map_err(|m| parse_err(line_no, m))?;
                if list.is_empty() {
                    return Err(parse_err(line_no, "empty input alphabet".into()));
                }
                inputs = Some(list);
                continue;
            }
            if let Some(rest) = line.strip_prefix("outputs:") {
                outputs = Some(split_symbol_list(rest).map_err(|m| parse_err(line_no, m))?);
                continue;
            }
            if let Some(rest) = line.strip_prefix("initial:") {
                let tokens = tokenize(rest).map_err(|m| parse_err(line_no, m))?;
                match tokens.as_slice() {
                    [name] => initial = Some(name.clone()),
                    _ => return Err(parse_err(line_no, "expected a single initial state".into())),
                }
                continue;
            }

            let tokens = tokenize(line).map_err(|m| parse_err(line_no, m))?;
            let [from, arrow_in, input, slash, output, arrow_out, to] = tokens.as_slice() else {
                return Err(parse_err(
                    line_no,
                    "expected `state -- input / output -> state`".into(),
                ));
            };
            if arrow_in != "--" || slash != "/" || arrow_out != "->" {
                return Err(parse_err(
                    line_no,
                    "expected `state -- input / output -> state`".into(),
                ));
            }
            let alphabet = inputs
                .as_ref()
                .ok_or_else(|| parse_err(line_no, "transition before `inputs:` header".into()))?;
            let declared = outputs
                .as_ref()
                .ok_or_else(|| parse_err(line_no, "transition before `outputs:` header".into()))?;
            let i = alphabet
                .iter()
                .position(|s| s == input)
                .ok_or_else(|| parse_err(line_no, format!("unknown input symbol {input:?}")))?;
            if !declared.contains(output) {
                return Err(parse_err(
                    line_no,
                    format!("undeclared output symbol {output:?}"),
                ));
            }
            let mut intern = |name: &String| -> StateId {
                *state_ids.entry(name.clone()).or_insert_with(|| {
                    state_names.push(name.clone());
                    partial.push(vec![None; alphabet.len()]);
                    state_names.len() - 1
                })
            };
            let q = intern(from);
            intern(to);
            if partial[q][i].is_some() {
                return Err(parse_err(
                    line_no,
                    format!("duplicate transition for state {from} and input {input:?}"),
                ));
            }
            partial[q][i] = Some((to.clone(), output.clone()));
        }

        let inputs = inputs.ok_or_else(|| parse_err(0, "missing `inputs:` header".into()))?;
        outputs.ok_or_else(|| parse_err(0, "missing `outputs:` header".into()))?;
        let initial = initial.ok_or_else(|| parse_err(0, "missing `initial:` header".into()))?;
        let initial_id = *state_ids
            .get(&initial)
            .ok_or_else(|| parse_err(0, format!("initial state {initial} has no transitions")))?;

        let mut rows = Vec::with_capacity(partial.len());
        for (q, row) in partial.into_iter().enumerate() {
            let mut full = Vec::with_capacity(inputs.len());
            for (i, entry) in row.into_iter().enumerate() {
                let (to, output) = entry.ok_or_else(|| AutomataError::NotInputEnabled {
                    state: state_names[q].clone(),
                    input: inputs[i].clone(),
                })?;
                full.push((state_ids[&to], output));
            }
            rows.push(full);
        }
        MealyMachine::new(inputs, initial_id, rows)
    }

    /// Graphviz rendering with one edge per (state, input), labelled
    /// `input / output`.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph mealy {\n  rankdir=LR;\n  __start [shape=point];\n");
        for q in self.states() {
            let _ = writeln!(out, "  q{q} [shape=circle];");
        }
        let _ = writeln!(out, "  __start -> q{};", self.initial());
        for q in self.states() {
            for (i, input) in self.inputs.iter().enumerate() {
                let (next, output) = self.step_index(q, i);
                let label = format!("{input} / {output}");
                let _ = writeln!(out, "  q{q} -> q{next} [label=\"{}\"];", dot_escape(&label));
            }
        }
        out.push_str("}\n");
        out
    }
}

fn relabel<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> Vec<usize> {
    let mut ids = HashMap::new();
    keys.map(|key| {
        let next = ids.len();
        *ids.entry(key).or_insert(next)
    })
    .collect()
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || matches!(s, "--" | "/" | "->")
        || s.starts_with('#')
        || s.chars()
            .any(|c| c.is_whitespace() || c == ',' || c == '"' || c == '\\')
}

/// Quotes a symbol for the model and diff file formats when necessary.
pub fn quote_symbol(s: &str) -> String {
    if !needs_quotes(s) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn join_symbols(symbols: &[String]) -> String {
    symbols
        .iter()
        .map(|s| quote_symbol(s))
        .collect::<Vec<_>>()
        .join(",")
}

/// Splits a line into whitespace-separated tokens, honouring double quotes.
pub fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.peek() {
            None => return Ok(tokens),
            Some('"') => {
                chars.next();
                tokens.push(read_quoted(&mut chars)?);
                if chars.peek().is_some_and(|c| !c.is_whitespace()) {
                    return Err("unexpected character after closing quote".into());
                }
            }
            Some(_) => {
                let mut token = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    token.push(c);
                    chars.next();
                }
                tokens.push(token);
            }
        }
    }
}

fn read_quoted(chars: &mut std::iter::Peekable<std::str::Chars<'_>>) -> Result<String, String> {
    let mut token = String::new();
    loop {
        match chars.next() {
            None => return Err("unterminated quoted symbol".into()),
            Some('"') => return Ok(token),
            Some('\\') => match chars.next() {
                Some(c) => token.push(c),
                None => return Err("dangling escape".into()),
            },
            Some(c) => token.push(c),
        }
    }
}

fn split_symbol_list(text: &str) -> Result<Vec<String>, String> {
    let mut symbols = Vec::new();
    let mut chars = text.trim().chars().peekable();
    if chars.peek().is_none() {
        return Ok(symbols);
    }
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let quoted = chars.peek() == Some(&'"');
        let symbol = if quoted {
            chars.next();
            let s = read_quoted(&mut chars)?;
            while chars.peek().is_some_and(|c| c.is_whitespace()) {
                chars.next();
            }
            s
        } else {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c == ',' {
                    break;
                }
                s.push(c);
                chars.next();
            }
            s.trim().to_string()
        };
        if symbol.is_empty() && !quoted {
            return Err("empty symbol in list".into());
        }
        symbols.push(symbol);
        match chars.next() {
            None => return Ok(symbols),
            Some(',') => continue,
            Some(c) => return Err(format!("unexpected character {c:?} in symbol list")),
        }
    }
}
