//! MQTT 3.1.1 instantiation: wire codec, simulated brokers with seeded bugs,
//! the two mappers, a TCP backend and a loopback server.

pub mod broker;
pub mod codec;
pub mod mappers;
pub mod server;
pub mod sim;
pub mod tcp;

pub use broker::{BrokerState, Delivery, MutantId};
pub use codec::{DecodeError, EncodeError, MqttPacket};
pub use server::{serve, ServerHandle};
pub use sim::{extract_reference_model, sim_sul, ExtractError, SimBackend};
pub use tcp::{tcp_sul, TcpBackend};
