//! Mapper backend talking to a broker over TCP.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crate::sul::CONNECTION_CLOSED;
use crate::sul::{ActionKind, Backend, ConcreteAction, Mapper, MapperSul, SulError};

use super::broker::packet_label;
use super::codec::{frame_len, read_packet, MqttPacket};

/// How long reset waits for the broker during cleanup.
const CLEANUP_TIMEOUT: Duration = Duration::from_secs(5);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
const POLL_INTERVAL: Duration = Duration::from_micros(200);
const SYNC_TOPIC: &str = "mqlearn/sync";

static INSTANCES: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
enum Client {
    /// No socket yet; the first action opens one.
    Fresh,
    Open {
        stream: TcpStream,
        buffer: Vec<u8>,
    },
    Closed,
}

/// Drives real sockets, one per managed client.
///
/// Responses are collected until the broker is quiescent: up to `timeout` for
/// the first message of a step, then a quarter of it for stragglers. Reset
/// disconnects every client and clears retained messages on the mapper's
/// topics with a separate cleanup connection.
#[derive(Debug)]
pub struct TcpBackend {
    addr: SocketAddr,
    timeout: Duration,
    topics: Vec<String>,
    clients: Vec<Client>,
    id_prefix: String,
    generation: u64,
    packet_id: u16,
    dirty: bool,
}

impl TcpBackend {
    pub fn new(addr: &str, mapper: &Mapper, timeout: Duration) -> Result<Self, SulError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| SulError::Transport(format!("cannot resolve {addr}: {e}")))?
            .next()
            .ok_or_else(|| SulError::Transport(format!("{addr} resolves to nothing")))?;
        let instance = INSTANCES.fetch_add(1, Ordering::Relaxed);
        Ok(TcpBackend {
            addr,
            timeout,
            topics: mapper.topics(),
            clients: (0..mapper.client_count()).map(|_| Client::Fresh).collect(),
            id_prefix: format!("mqlearn-{}-{instance}", std::process::id()),
            generation: 0,
            packet_id: 0,
            dirty: true,
        })
    }

    fn connect(&self) -> Result<TcpStream, SulError> {
        let stream = TcpStream::connect_timeout(&self.addr, CONNECT_TIMEOUT)
            .map_err(|e| SulError::Transport(format!("connect to {}: {e}", self.addr)))?;
        stream.set_nodelay(true)?;
        Ok(stream)
    }

    fn client_id(&self, client: usize) -> String {
        format!("{}-{}-{client}", self.id_prefix, self.generation)
    }

    fn next_packet_id(&mut self) -> u16 {
        self.packet_id = self.packet_id.wrapping_add(1).max(1);
        self.packet_id
    }

    /// Clears retained messages on every mapper topic and waits until the
    /// broker has processed that.
    fn cleanup(&mut self) -> Result<(), SulError> {
        let mut stream = self.connect()?;
        stream.set_read_timeout(Some(CLEANUP_TIMEOUT))?;
        let id = format!("{}-{}-cleanup", self.id_prefix, self.generation);
        send(
            &mut stream,
            &MqttPacket::Connect {
                client_id: id,
                clean_session: true,
                keep_alive: 0,
                will: None,
            },
        )?;
        wait_for(&mut stream, |p| matches!(p, MqttPacket::ConnAck { .. }))?;
        for topic in self.topics.clone() {
            send(
                &mut stream,
                &MqttPacket::Publish {
                    topic,
                    payload: Vec::new(),
                    retain: true,
                },
            )?;
        }
        let packet_id = self.next_packet_id();
        send(
            &mut stream,
            &MqttPacket::Subscribe {
                packet_id,
                topic_filter: SYNC_TOPIC.into(),
                qos: 0,
            },
        )?;
        wait_for(&mut stream, |p| matches!(p, MqttPacket::SubAck { .. }))?;
        send(&mut stream, &MqttPacket::Disconnect)?;
        let _ = stream.shutdown(Shutdown::Both);
        Ok(())
    }

    fn open(&mut self, client: usize) -> Result<(), SulError> {
        let stream = self.connect()?;
        stream.set_nonblocking(true)?;
        self.clients[client] = Client::Open {
            stream,
            buffer: Vec::new(),
        };
        Ok(())
    }

    fn send_to(&mut self, client: usize, packet: &MqttPacket) -> Result<(), SulError> {
        if let Client::Open { stream, .. } = &mut self.clients[client] {
            // A broker that already closed the socket surfaces during collection.
            let _ = send(stream, packet);
        }
        Ok(())
    }

    fn close(&mut self, client: usize) {
        if let Client::Open { stream, .. } = &self.clients[client] {
            let _ = stream.shutdown(Shutdown::Both);
        }
        self.clients[client] = Client::Closed;
    }

    /// Collects labels from every open client until quiescence.
    fn collect(&mut self) -> Result<Vec<Vec<String>>, SulError> {
        let mut labels = vec![Vec::new(); self.clients.len()];
        let start = Instant::now();
        let mut deadline = start + self.timeout;
        let mut seen_any = false;
        loop {
            for (k, client) in self.clients.iter_mut().enumerate() {
                let Client::Open { stream, buffer } = client else {
                    continue;
                };
                match drain(stream, buffer, &mut labels[k]) {
                    Ok(true) => {}
                    Ok(false) | Err(_) => {
                        labels[k].push(CONNECTION_CLOSED.to_string());
                        let _ = stream.shutdown(Shutdown::Both);
                        *client = Client::Closed;
                    }
                }
            }
            if !seen_any && labels.iter().any(|l| !l.is_empty()) {
                seen_any = true;
                deadline = deadline.min(Instant::now() + self.timeout / 4);
            }
            if Instant::now() >= deadline {
                return Ok(labels);
            }
            thread::sleep(POLL_INTERVAL);
        }
    }
}

/// Reads whatever is available. Returns `Ok(false)` on end of stream.
fn drain(
    stream: &mut TcpStream,
    buffer: &mut Vec<u8>,
    labels: &mut Vec<String>,
) -> io::Result<bool> {
    let mut chunk = [0u8; 4096];
    let mut open = true;
    loop {
        match stream.read(&mut chunk) {
            Ok(0) => {
                open = false;
                break;
            }
            Ok(n) => buffer.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    while let Some(len) =
        frame_len(buffer).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?
    {
        let (packet, _) = MqttPacket::decode(&buffer[..len])
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        buffer.drain(..len);
        if let Some(label) = packet_label(&packet) {
            labels.push(label);
        }
    }
    Ok(open)
}

fn send(stream: &mut TcpStream, packet: &MqttPacket) -> Result<(), SulError> {
    let bytes = packet
        .encode()
        .map_err(|e| SulError::Transport(e.to_string()))?;
    let mut written = 0;
    while written < bytes.len() {
        match stream.write(&bytes[written..]) {
            Ok(0) => {
                return Err(SulError::Transport(
                    "connection closed while sending".into(),
                ))
            }
            Ok(n) => written += n,
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn wait_for(stream: &mut TcpStream, done: impl Fn(&MqttPacket) -> bool) -> Result<(), SulError> {
    loop {
        match read_packet(stream) {
            Ok(Some(p)) if done(&p) => return Ok(()),
            Ok(Some(_)) => {}
            Ok(None) => {
                return Err(SulError::Transport(
                    "broker closed the cleanup connection".into(),
                ))
            }
            Err(e) => return Err(SulError::Transport(format!("cleanup: {e}"))),
        }
    }
}

impl Backend for TcpBackend {
    fn reset(&mut self) -> Result<(), SulError> {
        for client in 0..self.clients.len() {
            // Unread data would turn our close into a reset, which the broker
            // may take as an abrupt disconnect and publish a will.
            if let Client::Open { stream, buffer } = &mut self.clients[client] {
                let _ = drain(stream, buffer, &mut Vec::new());
            }
            let _ = self.send_to(client, &MqttPacket::Disconnect);
            self.close(client);
            self.clients[client] = Client::Fresh;
        }
        if self.dirty {
            self.cleanup()?;
            self.dirty = false;
        }
        self.generation += 1;
        Ok(())
    }

    fn perform(&mut self, action: &ConcreteAction) -> Result<Vec<Vec<String>>, SulError> {
        let c = action.client;
        self.dirty = true;
        let is_connect = matches!(action.kind, ActionKind::Connect { .. });
        match self.clients[c] {
            Client::Closed if !is_connect => {
                let mut labels = vec![Vec::new(); self.clients.len()];
                labels[c].push(CONNECTION_CLOSED.to_string());
                return Ok(labels);
            }
            Client::Fresh if matches!(action.kind, ActionKind::TcpClose) => {
                self.clients[c] = Client::Closed;
                return Ok(vec![Vec::new(); self.clients.len()]);
            }
            Client::Fresh | Client::Closed => self.open(c)?,
            Client::Open { .. } => {}
        }
        match &action.kind {
            ActionKind::Connect { will } => {
                let client_id = self.client_id(c);
                self.send_to(
                    c,
                    &MqttPacket::Connect {
                        client_id,
                        clean_session: true,
                        keep_alive: 0,
                        will: will.clone(),
                    },
                )?;
            }
            ActionKind::Disconnect => {
                self.send_to(c, &MqttPacket::Disconnect)?;
                self.close(c);
            }
            ActionKind::TcpClose => self.close(c),
            ActionKind::Subscribe { topic } => {
                let packet_id = self.next_packet_id();
                self.send_to(
                    c,
                    &MqttPacket::Subscribe {
                        packet_id,
                        topic_filter: topic.clone(),
                        qos: 0,
                    },
                )?;
            }
            ActionKind::Unsubscribe { topic } => {
                let packet_id = self.next_packet_id();
                self.send_to(
                    c,
                    &MqttPacket::Unsubscribe {
                        packet_id,
                        topic_filter: topic.clone(),
                    },
                )?;
            }
            ActionKind::Publish {
                topic,
                payload,
                retain,
            } => self.send_to(
                c,
                &MqttPacket::Publish {
                    topic: topic.clone(),
                    payload: payload.clone(),
                    retain: *retain,
                },
            )?,
        }
        self.collect()
    }
}

impl Drop for TcpBackend {
    fn drop(&mut self) {
        for client in 0..self.clients.len() {
            let _ = self.send_to(client, &MqttPacket::Disconnect);
            self.close(client);
        }
    }
}

/// SUL for a broker reachable at `addr`.
pub fn tcp_sul(
    addr: &str,
    mapper: Mapper,
    timeout: Duration,
) -> Result<MapperSul<TcpBackend>, SulError> {
    let backend = TcpBackend::new(addr, &mapper, timeout)?;
    Ok(MapperSul::new(format!("tcp://{addr}"), mapper, backend))
}
