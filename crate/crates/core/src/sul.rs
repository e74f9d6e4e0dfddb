//! Systems under learning and the mapper layer between abstract symbols and
//! concrete multi-client protocol actions.

use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::automata::{MealyMachine, StateId};

/// Output of a client that received nothing within its receive timeout.
pub const EMPTY: &str = "Empty";
/// Label for a connection that was found closed.
pub const CONNECTION_CLOSED: &str = "ConnectionClosed";
/// Separator between the sorted messages of one client.
pub const MESSAGE_SEPARATOR: &str = "__";
/// Separator between client tokens in an abstract output.
pub const CLIENT_SEPARATOR: &str = " | ";

/// Receive timeouts (milliseconds) used against real broker implementations.
pub const BROKER_TIMEOUTS_MS: [(&str, u64); 5] = [
    ("activemq", 300),
    ("emqttd", 25),
    ("hbmqtt", 100),
    ("mosquitto", 100),
    ("vernemq", 300),
];

pub fn broker_timeout(implementation: &str) -> Option<Duration> {
    let name = implementation.to_ascii_lowercase();
    BROKER_TIMEOUTS_MS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ms)| Duration::from_millis(*ms))
}

/// Two executions of the same input word that produced different outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NondeterminismWitness {
    pub inputs: Vec<String>,
    pub first: Vec<String>,
    pub second: Vec<String>,
}

impl fmt::Display for NondeterminismWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "inputs:  {}", self.inputs.join(" · "))?;
        writeln!(f, "outputs: {}", self.first.join(" · "))?;
        write!(f, "outputs: {}", self.second.join(" · "))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SulError {
    #[error("input {0:?} is not in the alphabet of the system under learning")]
    UnknownInput(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("nondeterministic behaviour observed:\n{0}")]
    Nondeterminism(NondeterminismWitness),
}

impl From<std::io::Error> for SulError {
    fn from(err: std::io::Error) -> Self {
        SulError::Transport(err.to_string())
    }
}

/// The reset/step contract a learner talks to. One query in flight at a time.
pub trait Sul {
    fn name(&self) -> &str;
    fn inputs(&self) -> &[String];
    fn reset(&mut self) -> Result<(), SulError>;
    fn step(&mut self, input: &str) -> Result<String, SulError>;

    /// Output query: reset, then execute `word`.
    fn query(&mut self, word: &[String]) -> Result<Vec<String>, SulError> {
        self.reset()?;
        word.iter().map(|i| self.step(i)).collect()
    }
}

impl<S: Sul + ?Sized> Sul for &mut S {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn inputs(&self) -> &[String] {
        (**self).inputs()
    }
    fn reset(&mut self) -> Result<(), SulError> {
        (**self).reset()
    }
    fn step(&mut self, input: &str) -> Result<String, SulError> {
        (**self).step(input)
    }
}

impl<S: Sul + ?Sized> Sul for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn inputs(&self) -> &[String] {
        (**self).inputs()
    }
    fn reset(&mut self) -> Result<(), SulError> {
        (**self).reset()
    }
    fn step(&mut self, input: &str) -> Result<String, SulError> {
        (**self).step(input)
    }
}

/// A Mealy machine acting as a black box.
#[derive(Debug, Clone)]
pub struct MachineSul {
    name: String,
    machine: MealyMachine,
    state: StateId,
}

impl MachineSul {
    pub fn new(name: impl Into<String>, machine: MealyMachine) -> Self {
        let state = machine.initial();
        MachineSul {
            name: name.into(),
            machine,
            state,
        }
    }

    pub fn machine(&self) -> &MealyMachine {
        &self.machine
    }
}

impl Sul for MachineSul {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> &[String] {
        self.machine.inputs()
    }

    fn reset(&mut self) -> Result<(), SulError> {
        self.state = self.machine.initial();
        Ok(())
    }

    fn step(&mut self, input: &str) -> Result<String, SulError> {
        let (next, out) = self
            .machine
            .step(self.state, input)
            .map_err(|_| SulError::UnknownInput(input.to_string()))?;
        self.state = next;
        Ok(out.to_string())
    }
}

/// Folds the messages each client received during one step into a single
/// abstract output symbol.
///
/// Each client's labels are sorted by byte order and joined with `__`; a client
/// that received nothing contributes `Empty`. Client tokens are joined in client
/// order with ` | `.
pub fn abstract_output<S: AsRef<str>>(per_client: &[Vec<S>]) -> String {
    per_client
        .iter()
        .map(|messages| {
            if messages.is_empty() {
                EMPTY.to_string()
            } else {
                let mut labels: Vec<&str> = messages.iter().map(AsRef::as_ref).collect();
                labels.sort_unstable();
                labels.join(MESSAGE_SEPARATOR)
            }
        })
        .collect::<Vec<_>>()
        .join(CLIENT_SEPARATOR)
}

/// Last will registered by a connecting client.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WillSpec {
    pub topic: String,
    pub payload: Vec<u8>,
    pub retain: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Connect {
        will: Option<WillSpec>,
    },
    Disconnect,
    TcpClose,
    Subscribe {
        topic: String,
    },
    Unsubscribe {
        topic: String,
    },
    Publish {
        topic: String,
        payload: Vec<u8>,
        retain: bool,
    },
}

/// One concrete action performed by one managed client.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConcreteAction {
    pub client: usize,
    pub kind: ActionKind,
}

impl ConcreteAction {
    pub fn new(client: usize, kind: ActionKind) -> Self {
        ConcreteAction { client, kind }
    }
}

/// A static abstraction: a named alphabet where every abstract input maps to one
/// concrete action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mapper {
    name: String,
    client_count: usize,
    alphabet: Vec<(String, ConcreteAction)>,
}

impl Mapper {
    pub fn new(
        name: impl Into<String>,
        client_count: usize,
        alphabet: Vec<(String, ConcreteAction)>,
    ) -> Self {
        assert!(client_count >= 1, "a mapper manages at least one client");
        assert!(
            alphabet.iter().all(|(_, a)| a.client < client_count),
            "action refers to an unmanaged client"
        );
        Mapper {
            name: name.into(),
            client_count,
            alphabet,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn client_count(&self) -> usize {
        self.client_count
    }

    pub fn inputs(&self) -> Vec<String> {
        self.alphabet.iter().map(|(name, _)| name.clone()).collect()
    }

    pub fn concretize(&self, input: &str) -> Option<&ConcreteAction> {
        self.alphabet
            .iter()
            .find(|(name, _)| name == input)
            .map(|(_, action)| action)
    }

    /// Every concrete topic the mapper's actions touch, in first-use order.
    pub fn topics(&self) -> Vec<String> {
        let mut topics: Vec<String> = Vec::new();
        let mut add = |t: &String| {
            if !topics.contains(t) {
                topics.push(t.clone());
            }
        };
        for (_, action) in &self.alphabet {
            match &action.kind {
                ActionKind::Connect { will: Some(w) } => add(&w.topic),
                ActionKind::Subscribe { topic }
                | ActionKind::Unsubscribe { topic }
                | ActionKind::Publish { topic, .. } => add(topic),
                _ => {}
            }
        }
        topics
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapperConfig {
    pub mapper_name: String,
    pub receive_timeout: Duration,
    pub client_count: usize,
}

impl MapperConfig {
    pub fn new(mapper: &Mapper, receive_timeout: Duration) -> Self {
        assert!(
            !receive_timeout.is_zero(),
            "receive timeout must be positive"
        );
        MapperConfig {
            mapper_name: mapper.name().to_string(),
            receive_timeout,
            client_count: mapper.client_count(),
        }
    }
}

/// Executes concrete actions and reports what each managed client received.
pub trait Backend {
    fn reset(&mut self) -> Result<(), SulError>;

    /// Performs `action` and returns one (possibly empty) label list per client.
    fn perform(&mut self, action: &ConcreteAction) -> Result<Vec<Vec<String>>, SulError>;
}

/// A backend seen through a mapper: the SUL the learner actually queries.
pub struct MapperSul<B> {
    name: String,
    mapper: Mapper,
    inputs: Vec<String>,
    backend: B,
}

impl<B: Backend> MapperSul<B> {
    pub fn new(name: impl Into<String>, mapper: Mapper, backend: B) -> Self {
        let inputs = mapper.inputs();
        MapperSul {
            name: name.into(),
            mapper,
            inputs,
            backend,
        }
    }

    pub fn mapper(&self) -> &Mapper {
        &self.mapper
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }
}

impl<B: Backend> Sul for MapperSul<B> {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> &[String] {
        &self.inputs
    }

    fn reset(&mut self) -> Result<(), SulError> {
        self.backend.reset()
    }

    fn step(&mut self, input: &str) -> Result<String, SulError> {
        let action = self
            .mapper
            .concretize(input)
            .ok_or_else(|| SulError::UnknownInput(input.to_string()))?;
        let mut labels = self.backend.perform(action)?;
        labels.resize_with(self.mapper.client_count(), Vec::new);
        Ok(abstract_output(&labels))
    }
}

/// Where a SUL lives: `sim:<broker>` or `tcp://host:port`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Sim(String),
    Tcp(String),
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = s.strip_prefix("sim:") {
            if name.is_empty() {
                return Err("missing broker name after `sim:`".into());
            }
            Ok(Target::Sim(name.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err("missing address after `tcp://`".into());
            }
            Ok(Target::Tcp(addr.trim_end_matches('/').to_string()))
        } else {
            Err(format!(
                "unsupported target {s:?}; expected sim:<broker> or tcp://host:port"
            ))
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Sim(name) => write!(f, "sim:{name}"),
            Target::Tcp(addr) => write!(f, "tcp://{addr}"),
        }
    }
}
