//! Pairwise comparison of learned models.
//!
//! Two deterministic, complete Mealy machines are compared by a depth-first
//! search over their implicit product. Every trace reaching a pair of
//! transitions with different outputs is reported as a [`Diff`]. With
//! `max_diffs > 1` the search continues past a difference, so a second fault
//! behind the first one on the same path is still reached.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::automata::{quote_symbol, tokenize, AutomataError, MealyMachine};
use crate::sul::{Sul, SulError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrossCheckError {
    #[error(transparent)]
    Alphabet(#[from] AutomataError),
    #[error("maximum number of differences per trace must be at least 1")]
    ZeroMaxDiffs,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A trace on which two models disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diff {
    pub inputs: Vec<String>,
    pub outputs_a: Vec<String>,
    pub outputs_b: Vec<String>,
    /// Sorted indices `k` with `outputs_a[k] != outputs_b[k]`.
    pub divergences: Vec<usize>,
}

impl Diff {
    /// Builds a diff from two output sequences; `None` if they agree.
    pub fn from_outputs(
        inputs: Vec<String>,
        outputs_a: Vec<String>,
        outputs_b: Vec<String>,
    ) -> Option<Diff> {
        assert_eq!(inputs.len(), outputs_a.len());
        assert_eq!(inputs.len(), outputs_b.len());
        let divergences: Vec<usize> = (0..inputs.len())
            .filter(|&k| outputs_a[k] != outputs_b[k])
            .collect();
        if divergences.is_empty() {
            return None;
        }
        Some(Diff {
            inputs,
            outputs_a,
            outputs_b,
            divergences,
        })
    }

    /// Runs `inputs` on both machines; `None` if they agree on it.
    pub fn between<S: AsRef<str>>(
        a: &MealyMachine,
        b: &MealyMachine,
        inputs: &[S],
    ) -> Result<Option<Diff>, AutomataError> {
        let outputs_a = a.run(inputs)?;
        let outputs_b = b.run(inputs)?;
        let inputs = inputs.iter().map(|s| s.as_ref().to_string()).collect();
        Ok(Diff::from_outputs(inputs, outputs_a, outputs_b))
    }

    pub fn first_divergence(&self) -> usize {
        self.divergences[0]
    }
}

/// Depth-first search of the product of `a` and `b` for output differences.
///
/// Inputs are explored in alphabet order. The visited set is keyed by the state
/// pair and the number of differences accumulated on the way there, so a pair
/// reached again with a different count is explored again. A branch stops at
/// its `max_diffs`-th difference. Diffs are returned in discovery order; the
/// result is empty iff the machines are output-equivalent.
pub fn cross_check(
    a: &MealyMachine,
    b: &MealyMachine,
    max_diffs: usize,
) -> Result<Vec<Diff>, CrossCheckError> {
    a.check_same_alphabet(b)?;
    if max_diffs == 0 {
        return Err(CrossCheckError::ZeroMaxDiffs);
    }

    struct Frame {
        qa: usize,
        qb: usize,
        diffs: usize,
        next_input: usize,
    }

    let k = a.inputs().len();
    let mut diffs = Vec::new();
    let mut visited = HashSet::new();
    let mut trace: Vec<usize> = Vec::new();
    let mut outs_a: Vec<&str> = Vec::new();
    let mut outs_b: Vec<&str> = Vec::new();

    visited.insert((a.initial(), b.initial(), 0));
    let mut stack = vec![Frame {
        qa: a.initial(),
        qb: b.initial(),
        diffs: 0,
        next_input: 0,
    }];

    while let Some(top) = stack.last_mut() {
        if top.next_input == k {
            stack.pop();
            if !stack.is_empty() {
                trace.pop();
                outs_a.pop();
                outs_b.pop();
            }
            continue;
        }
        let i = top.next_input;
        top.next_input += 1;
        let (na, oa) = a.step_index(top.qa, i);
        let (nb, ob) = b.step_index(top.qb, i);
        let mut count = top.diffs;
        if oa != ob {
            count += 1;
            let inputs = trace
                .iter()
                .chain(std::iter::once(&i))
                .map(|&x| a.inputs()[x].clone())
                .collect();
            let collect = |prefix: &[&str], last: &str| -> Vec<String> {
                prefix
                    .iter()
                    .copied()
                    .chain(std::iter::once(last))
                    .map(str::to_string)
                    .collect()
            };
            diffs.push(
                Diff::from_outputs(inputs, collect(&outs_a, oa), collect(&outs_b, ob))
                    .expect("last outputs differ"),
            );
            if count >= max_diffs {
                continue;
            }
        }
        if visited.insert((na, nb, count)) {
            trace.push(i);
            outs_a.push(oa);
            outs_b.push(ob);
            stack.push(Frame {
                qa: na,
                qb: nb,
                diffs: count,
                next_input: 0,
            });
        }
    }
    Ok(diffs)
}

/// One element of a [`FilterPattern`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Literal(String),
    Any,
}

/// Hides diffs whose input trace contains a matching contiguous window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterPattern {
    matchers: Vec<Matcher>,
}

impl FilterPattern {
    pub fn new(matchers: Vec<Matcher>) -> Option<Self> {
        (!matchers.is_empty()).then_some(FilterPattern { matchers })
    }

    /// Whitespace-separated symbols; `*` matches any single symbol.
    pub fn parse(line: &str) -> Result<Self, String> {
        let matchers = tokenize(line)?
            .into_iter()
            .map(|t| {
                if t == "*" {
                    Matcher::Any
                } else {
                    Matcher::Literal(t)
                }
            })
            .collect();
        FilterPattern::new(matchers).ok_or_else(|| "empty filter pattern".to_string())
    }

    pub fn matchers(&self) -> &[Matcher] {
        &self.matchers
    }

    pub fn matches(&self, inputs: &[String]) -> bool {
        inputs.windows(self.matchers.len()).any(|window| {
            window.iter().zip(&self.matchers).all(|(sym, m)| match m {
                Matcher::Any => true,
                Matcher::Literal(lit) => lit == sym,
            })
        })
    }
}

/// Reads a filter file: one pattern per line, blank lines and `#` comments
/// ignored.
pub fn parse_filters(text: &str) -> Result<Vec<FilterPattern>, CrossCheckError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .map(|(n, l)| {
            FilterPattern::parse(l).map_err(|message| CrossCheckError::Parse {
                line: n + 1,
                message,
            })
        })
        .collect()
}

/// Keeps the diffs matched by no pattern, in their original order.
pub fn apply_filters(diffs: Vec<Diff>, patterns: &[FilterPattern]) -> Vec<Diff> {
    diffs
        .into_iter()
        .filter(|d| !patterns.iter().any(|p| p.matches(&d.inputs)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Both implementations behave as their models predict and differ.
    Confirmed,
    /// Implementation A disagrees with model A.
    SpuriousA,
    /// Implementation B disagrees with model B.
    SpuriousB,
    /// The implementations behave identically on the trace.
    Vanished,
    /// Replay failed.
    Inconclusive(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Confirmed => f.write_str("CONFIRMED"),
            Verdict::SpuriousA => f.write_str("SPURIOUS_A"),
            Verdict::SpuriousB => f.write_str("SPURIOUS_B"),
            Verdict::Vanished => f.write_str("VANISHED"),
            Verdict::Inconclusive(reason) => write!(f, "INCONCLUSIVE ({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfirmationReport {
    pub observed_a: Option<Vec<String>>,
    pub observed_b: Option<Vec<String>>,
    pub verdict: Verdict,
}

/// Replays a diff's inputs on both implementations from a reset.
pub fn confirm(diff: &Diff, sul_a: &mut dyn Sul, sul_b: &mut dyn Sul) -> ConfirmationReport {
    let replay = |sul: &mut dyn Sul| -> Result<Vec<String>, SulError> { sul.query(&diff.inputs) };
    let (observed_a, observed_b) = match (replay(sul_a), replay(sul_b)) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            let reason = [a.as_ref().err(), b.as_ref().err()]
                .into_iter()
                .flatten()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return ConfirmationReport {
                observed_a: a.ok(),
                observed_b: b.ok(),
                verdict: Verdict::Inconclusive(reason),
            };
        }
    };
    let verdict = if observed_a == observed_b {
        Verdict::Vanished
    } else if observed_a != diff.outputs_a {
        Verdict::SpuriousA
    } else if observed_b != diff.outputs_b {
        Verdict::SpuriousB
    } else {
        Verdict::Confirmed
    };
    ConfirmationReport {
        observed_a: Some(observed_a),
        observed_b: Some(observed_b),
        verdict,
    }
}

/// Renders diffs as aligned blocks:
///
/// ```text
/// diff #1
///   in: Connect  Connect
///    A: C_Ack    ConnectionClosed
///    B: C_Ack    Empty
///                ^
/// ```
pub fn format_report(diffs: &[Diff]) -> String {
    let mut out = String::new();
    for (n, diff) in diffs.iter().enumerate() {
        let columns: Vec<[String; 3]> = (0..diff.inputs.len())
            .map(|k| {
                [
                    quote_symbol(&diff.inputs[k]),
                    quote_symbol(&diff.outputs_a[k]),
                    quote_symbol(&diff.outputs_b[k]),
                ]
            })
            .collect();
        let widths: Vec<usize> = columns
            .iter()
            .map(|c| c.iter().map(|s| s.chars().count()).max().unwrap_or(0))
            .collect();
        let _ = writeln!(out, "diff #{}", n + 1);
        for (row, label) in ["  in:", "   A:", "   B:"].iter().enumerate() {
            let mut line = label.to_string();
            for (col, width) in columns.iter().zip(&widths) {
                let _ = write!(line, " {:<width$} ", col[row], width = width);
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        let mut carets = " ".repeat(5);
        for (k, width) in widths.iter().enumerate() {
            let mark = if diff.divergences.contains(&k) {
                "^"
            } else {
                " "
            };
            let _ = write!(carets, " {:<width$} ", mark, width = width);
        }
        let _ = writeln!(out, "{}", carets.trim_end());
    }
    out
}

/// Parses the output of [`format_report`]. Caret lines are ignored; divergences
/// are recomputed from the outputs.
pub fn parse_report(text: &str) -> Result<Vec<Diff>, CrossCheckError> {
    let mut diffs = Vec::new();
    let mut current: Option<(usize, [Option<Vec<String>>; 3])> = None;
    let err = |line: usize, message: &str| CrossCheckError::Parse {
        line,
        message: message.to_string(),
    };

    let finish = |block: Option<(usize, [Option<Vec<String>>; 3])>,
                  diffs: &mut Vec<Diff>|
     -> Result<(), CrossCheckError> {
        let Some((line, [inputs, a, b])) = block else {
            return Ok(());
        };
        let (Some(inputs), Some(a), Some(b)) = (inputs, a, b) else {
            return Err(err(line, "diff block needs `in:`, `A:` and `B:` lines"));
        };
        if inputs.len() != a.len() || inputs.len() != b.len() {
            return Err(err(line, "input and output lines differ in length"));
        }
        let diff = Diff::from_outputs(inputs, a, b)
            .ok_or_else(|| err(line, "outputs A and B do not differ"))?;
        diffs.push(diff);
        Ok(())
    };

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.chars().all(|c| c == '^' || c.is_whitespace()) {
            continue;
        }
        if line.starts_with("diff #") {
            finish(current.take(), &mut diffs)?;
            current = Some((line_no, [None, None, None]));
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (slot, rest) = if let Some(rest) = line.strip_prefix("in:") {
            (0, rest)
        } else if let Some(rest) = line.strip_prefix("A:") {
            (1, rest)
        } else if let Some(rest) = line.strip_prefix("B:") {
            (2, rest)
        } else {
            return Err(err(line_no, "expected `diff #N`, `in:`, `A:` or `B:`"));
        };
        let Some((_, fields)) = current.as_mut() else {
            return Err(err(line_no, "line outside a `diff #N` block"));
        };
        let tokens = tokenize(rest).map_err(|m| err(line_no, &m))?;
        fields[slot] = Some(tokens);
    }
    finish(current, &mut diffs)?;
    Ok(diffs)
}
