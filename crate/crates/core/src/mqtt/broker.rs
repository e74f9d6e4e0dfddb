//! In-process MQTT broker semantics, shared by the simulated backend and the
//! loopback server.
//!
//! The broker is a pure state machine over connections identified by a key.
//! [`BrokerState::receive`] handles one decoded packet and returns what every
//! connection gets in response; [`BrokerState::sim_step`] lifts that to the
//! client actions a mapper issues, including what the client side observes
//! about its own socket.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::sul::{ActionKind, ConcreteAction, WillSpec, CONNECTION_CLOSED};

use super::codec::MqttPacket;

/// Which seeded bug a simulated broker carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MutantId {
    Reference,
    /// A second CONNECT on a live connection is silently ignored.
    IgnoreSecondConnect,
    /// Retained messages are not re-sent when an existing subscription is renewed.
    NoRetainedResendOnResubscribe,
    /// A retained PUBLISH with an empty payload is dropped instead of clearing
    /// the retained message.
    DropEmptyRetained,
}

impl MutantId {
    pub const ALL: [MutantId; 4] = [
        MutantId::Reference,
        MutantId::IgnoreSecondConnect,
        MutantId::NoRetainedResendOnResubscribe,
        MutantId::DropEmptyRetained,
    ];

    /// Name used on the command line and in `sim:` targets.
    pub fn broker_name(self) -> &'static str {
        match self {
            MutantId::Reference => "reference",
            MutantId::IgnoreSecondConnect => "hbmqtt-bug",
            MutantId::NoRetainedResendOnResubscribe => "retained-will-bug",
            MutantId::DropEmptyRetained => "empty-retained-bug",
        }
    }
}

impl fmt::Display for MutantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.broker_name())
    }
}

impl FromStr for MutantId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MutantId::ALL
            .into_iter()
            .find(|m| m.broker_name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = MutantId::ALL.iter().map(|m| m.broker_name()).collect();
                format!("unknown broker {s:?}; known brokers: {}", known.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Connection {
    /// Socket open, no CONNECT seen yet.
    Fresh,
    Connected,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Session {
    pub connection: Connection,
    pub subscriptions: BTreeSet<String>,
    pub will: Option<WillSpec>,
}

impl Session {
    fn fresh() -> Self {
        Session {
            connection: Connection::Fresh,
            subscriptions: BTreeSet::new(),
            will: None,
        }
    }
}

/// Something the broker sends to, or does with, one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    ConnAck,
    SubAck {
        packet_id: u16,
    },
    UnsubAck {
        packet_id: u16,
    },
    Publish {
        topic: String,
        payload: Vec<u8>,
        retain: bool,
    },
    /// The broker closes the connection.
    Close,
}

impl Delivery {
    /// Abstract message label as seen by the receiving client.
    pub fn label(&self) -> String {
        match self {
            Delivery::ConnAck => "C_Ack".to_string(),
            Delivery::SubAck { .. } => "S_Ack".to_string(),
            Delivery::UnsubAck { .. } => "U_Ack".to_string(),
            Delivery::Publish { topic, payload, .. } => publish_label(topic, payload),
            Delivery::Close => CONNECTION_CLOSED.to_string(),
        }
    }

    /// The packet carrying this delivery, `None` for [`Delivery::Close`].
    pub fn packet(&self) -> Option<MqttPacket> {
        Some(match self {
            Delivery::ConnAck => MqttPacket::ConnAck {
                session_present: false,
                return_code: 0,
            },
            Delivery::SubAck { packet_id } => MqttPacket::SubAck {
                packet_id: *packet_id,
                granted_qos: 0,
            },
            Delivery::UnsubAck { packet_id } => MqttPacket::UnsubAck {
                packet_id: *packet_id,
            },
            Delivery::Publish {
                topic,
                payload,
                retain,
            } => MqttPacket::Publish {
                topic: topic.clone(),
                payload: payload.clone(),
                retain: *retain,
            },
            Delivery::Close => return None,
        })
    }
}

pub fn publish_label(topic: &str, payload: &[u8]) -> String {
    format!("Pub({topic},{})", String::from_utf8_lossy(payload))
}

/// Label of a packet a client receives; `None` for packets a broker never sends.
pub fn packet_label(packet: &MqttPacket) -> Option<String> {
    match packet {
        MqttPacket::ConnAck { .. } => Some("C_Ack".into()),
        MqttPacket::SubAck { .. } => Some("S_Ack".into()),
        MqttPacket::UnsubAck { .. } => Some("U_Ack".into()),
        MqttPacket::Publish { topic, payload, .. } => Some(publish_label(topic, payload)),
        _ => None,
    }
}

pub type Deliveries = Vec<(usize, Delivery)>;

/// Sessions, subscriptions and the retained store of one broker.
///
/// Every session uses clean-session semantics: its subscriptions and will go
/// away with its connection.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BrokerState {
    mutant: MutantId,
    sessions: BTreeMap<usize, Session>,
    retained: BTreeMap<String, Vec<u8>>,
}

impl BrokerState {
    pub fn new(mutant: MutantId) -> Self {
        BrokerState {
            mutant,
            sessions: BTreeMap::new(),
            retained: BTreeMap::new(),
        }
    }

    /// A broker with `clients` fresh connections keyed `0..clients`.
    pub fn with_clients(mutant: MutantId, clients: usize) -> Self {
        let mut state = BrokerState::new(mutant);
        for key in 0..clients {
            state.open(key);
        }
        state
    }

    pub fn mutant(&self) -> MutantId {
        self.mutant
    }

    pub fn session(&self, key: usize) -> Option<&Session> {
        self.sessions.get(&key)
    }

    pub fn retained(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.retained
    }

    /// Registers a new connection, replacing any previous session for `key`.
    pub fn open(&mut self, key: usize) {
        self.sessions.insert(key, Session::fresh());
    }

    /// Drops all state for `key`.
    pub fn forget(&mut self, key: usize) {
        self.sessions.remove(&key);
    }

    /// Handles one packet received on connection `key`.
    pub fn receive(&mut self, key: usize, packet: &MqttPacket) -> Deliveries {
        let Some(session) = self.sessions.get_mut(&key) else {
            return Vec::new();
        };
        match session.connection {
            Connection::Closed => Vec::new(),
            Connection::Fresh => match packet {
                MqttPacket::Connect { will, .. } => {
                    session.connection = Connection::Connected;
                    session.will = will.clone();
                    vec![(key, Delivery::ConnAck)]
                }
                // Anything before CONNECT is a protocol violation.
                _ => self.close(key, false),
            },
            Connection::Connected => self.receive_connected(key, packet),
        }
    }

    fn receive_connected(&mut self, key: usize, packet: &MqttPacket) -> Deliveries {
        let session = self.sessions.get_mut(&key).expect("caller checked");
        match packet {
            MqttPacket::Connect { .. } => {
                if self.mutant == MutantId::IgnoreSecondConnect {
                    Vec::new()
                } else {
                    self.close(key, true)
                }
            }
            MqttPacket::Subscribe {
                packet_id,
                topic_filter,
                ..
            } => {
                let renewed = !session.subscriptions.insert(topic_filter.clone());
                let mut out = vec![(
                    key,
                    Delivery::SubAck {
                        packet_id: *packet_id,
                    },
                )];
                let suppress = renewed && self.mutant == MutantId::NoRetainedResendOnResubscribe;
                if let Some(payload) = self.retained.get(topic_filter) {
                    if !suppress {
                        out.push((
                            key,
                            Delivery::Publish {
                                topic: topic_filter.clone(),
                                payload: payload.clone(),
                                retain: true,
                            },
                        ));
                    }
                }
                out
            }
            MqttPacket::Unsubscribe {
                packet_id,
                topic_filter,
            } => {
                session.subscriptions.remove(topic_filter);
                vec![(
                    key,
                    Delivery::UnsubAck {
                        packet_id: *packet_id,
                    },
                )]
            }
            MqttPacket::Publish {
                topic,
                payload,
                retain,
            } => self.publish(topic, payload, *retain),
            MqttPacket::Disconnect => {
                session.will = None;
                self.close(key, false)
                    .into_iter()
                    .filter(|(k, _)| *k != key)
                    .collect()
            }
            MqttPacket::ConnAck { .. }
            | MqttPacket::SubAck { .. }
            | MqttPacket::UnsubAck { .. } => self.close(key, true),
        }
    }

    /// The network connection of `key` went away without a DISCONNECT.
    pub fn connection_lost(&mut self, key: usize) -> Deliveries {
        match self.sessions.get(&key).map(|s| s.connection) {
            Some(Connection::Connected) => self
                .close(key, true)
                .into_iter()
                .filter(|(k, _)| *k != key)
                .collect(),
            Some(Connection::Fresh) => {
                self.close(key, false);
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// Closes `key`'s connection, publishing its will if asked to.
    fn close(&mut self, key: usize, publish_will: bool) -> Deliveries {
        let session = self.sessions.get_mut(&key).expect("known session");
        session.connection = Connection::Closed;
        session.subscriptions.clear();
        let will = session.will.take();
        let mut out = vec![(key, Delivery::Close)];
        if let (true, Some(will)) = (publish_will, will) {
            out.extend(self.publish(&will.topic, &will.payload, will.retain));
        }
        out
    }

    fn publish(&mut self, topic: &str, payload: &[u8], retain: bool) -> Deliveries {
        if retain {
            if payload.is_empty() {
                if self.mutant == MutantId::DropEmptyRetained {
                    return Vec::new();
                }
                self.retained.remove(topic);
            } else {
                self.retained.insert(topic.to_string(), payload.to_vec());
            }
        }
        self.sessions
            .iter()
            .filter(|(_, s)| {
                s.connection == Connection::Connected && s.subscriptions.contains(topic)
            })
            .map(|(&k, _)| {
                (
                    k,
                    Delivery::Publish {
                        topic: topic.to_string(),
                        payload: payload.to_vec(),
                        retain: false,
                    },
                )
            })
            .collect()
    }

    /// Applies one client action as a mapper issues it and returns the new
    /// state with the message labels each client observes.
    ///
    /// Client `c` is connection key `c`. Actions other than a connect on a
    /// closed connection observe `ConnectionClosed` and change nothing; a
    /// connect there opens a new connection first. A client never observes
    /// its own DISCONNECT or TCP close.
    pub fn sim_step(&self, action: &ConcreteAction) -> (BrokerState, Vec<Vec<String>>) {
        let mut next = self.clone();
        let labels = next.apply(action);
        (next, labels)
    }

    /// In-place form of [`BrokerState::sim_step`].
    pub fn apply(&mut self, action: &ConcreteAction) -> Vec<Vec<String>> {
        let c = action.client;
        if !self.sessions.contains_key(&c) {
            self.open(c);
        }
        let clients = self.sessions.keys().next_back().map_or(0, |k| k + 1);
        let mut labels = vec![Vec::new(); clients];

        let closed = self.sessions[&c].connection == Connection::Closed;
        let deliveries = match &action.kind {
            ActionKind::Connect { will } => {
                if closed {
                    self.open(c);
                }
                self.receive(
                    c,
                    &MqttPacket::Connect {
                        client_id: format!("client{c}"),
                        clean_session: true,
                        keep_alive: 0,
                        will: will.clone(),
                    },
                )
            }
            _ if closed => {
                labels[c].push(CONNECTION_CLOSED.to_string());
                return labels;
            }
            ActionKind::Disconnect => {
                let out = self.receive(c, &MqttPacket::Disconnect);
                self.sessions.get_mut(&c).expect("known").connection = Connection::Closed;
                out.into_iter().filter(|(k, _)| *k != c).collect()
            }
            ActionKind::TcpClose => self.connection_lost(c),
            ActionKind::Subscribe { topic } => self.receive(
                c,
                &MqttPacket::Subscribe {
                    packet_id: 1,
                    topic_filter: topic.clone(),
                    qos: 0,
                },
            ),
            ActionKind::Unsubscribe { topic } => self.receive(
                c,
                &MqttPacket::Unsubscribe {
                    packet_id: 1,
                    topic_filter: topic.clone(),
                },
            ),
            ActionKind::Publish {
                topic,
                payload,
                retain,
            } => self.receive(
                c,
                &MqttPacket::Publish {
                    topic: topic.clone(),
                    payload: payload.clone(),
                    retain: *retain,
                },
            ),
        };
        for (k, d) in deliveries {
            labels[k].push(d.label());
        }
        labels
    }
}
