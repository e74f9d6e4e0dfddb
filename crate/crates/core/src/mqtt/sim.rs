use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::automata::{AutomataError, MealyMachine};
use crate::sul::{abstract_output, Backend, ConcreteAction, Mapper, MapperSul, SulError};

use super::broker::{BrokerState, MutantId};

/// Abort threshold for [`extract_reference_model`].
pub const MAX_EXTRACTED_STATES: usize = 10_000;

/// Simulated broker behind a mapper. Reset restores the initial broker with one
/// fresh connection per managed client.
#[derive(Debug, Clone)]
pub struct SimBackend {
    mutant: MutantId,
    clients: usize,
    state: BrokerState,
}

impl SimBackend {
    pub fn new(mutant: MutantId, clients: usize) -> Self {
        SimBackend {
            mutant,
            clients,
            state: BrokerState::with_clients(mutant, clients),
        }
    }

    pub fn state(&self) -> &BrokerState {
        &self.state
    }
}

impl Backend for SimBackend {
    fn reset(&mut self) -> Result<(), SulError> {
        self.state = BrokerState::with_clients(self.mutant, self.clients);
        Ok(())
    }

    fn perform(&mut self, action: &ConcreteAction) -> Result<Vec<Vec<String>>, SulError> {
        Ok(self.state.apply(action))
    }
}

/// The in-process SUL for a simulated broker under `mapper`.
pub fn sim_sul(mutant: MutantId, mapper: Mapper) -> MapperSul<SimBackend> {
    let backend = SimBackend::new(mutant, mapper.client_count());
    MapperSul::new(format!("sim:{}", mutant.broker_name()), mapper, backend)
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("more than {MAX_EXTRACTED_STATES} reachable broker states")]
    TooManyStates,
    #[error(transparent)]
    Automata(#[from] AutomataError),
}

/// Brute-force model of a simulated broker: breadth-first exploration of every
/// reachable broker state under the mapper's alphabet, then minimization.
pub fn extract_reference_model(
    mutant: MutantId,
    mapper: &Mapper,
) -> Result<MealyMachine, ExtractError> {
    let inputs = mapper.inputs();
    let actions: Vec<&ConcreteAction> = inputs
        .iter()
        .map(|i| mapper.concretize(i).expect("mapper input"))
        .collect();
    let initial = BrokerState::with_clients(mutant, mapper.client_count());
    let mut index: HashMap<BrokerState, usize> = HashMap::from([(initial.clone(), 0)]);
    let mut queue = VecDeque::from([initial]);
    let mut rows = Vec::new();

    while let Some(state) = queue.pop_front() {
        let mut row = Vec::with_capacity(actions.len());
        for action in &actions {
            let (next, mut labels) = state.sim_step(action);
            labels.resize_with(mapper.client_count(), Vec::new);
            let output = abstract_output(&labels);
            let target = match index.get(&next) {
                Some(&id) => id,
                None => {
                    let id = index.len();
                    if id >= MAX_EXTRACTED_STATES {
                        return Err(ExtractError::TooManyStates);
                    }
                    index.insert(next.clone(), id);
                    queue.push_back(next);
                    id
                }
            };
            row.push((target, output));
        }
        rows.push(row);
    }
    Ok(MealyMachine::new(inputs, 0, rows)?.minimize())
}
