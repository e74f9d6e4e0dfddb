//! Serves a simulated broker over TCP.

use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use super::broker::{BrokerState, Deliveries, MutantId};
use super::codec::{read_packet, MqttPacket};

struct Shared {
    broker: BrokerState,
    writers: HashMap<usize, TcpStream>,
    next_key: usize,
}

impl Shared {
    fn dispatch(&mut self, deliveries: Deliveries) {
        for (key, delivery) in deliveries {
            match delivery.packet() {
                Some(packet) => {
                    if let (Some(w), Ok(bytes)) = (self.writers.get_mut(&key), packet.encode()) {
                        let _ = w.write_all(&bytes);
                    }
                }
                None => self.drop_connection(key),
            }
        }
    }

    fn drop_connection(&mut self, key: usize) {
        if let Some(w) = self.writers.remove(&key) {
            let _ = w.shutdown(Shutdown::Both);
        }
    }
}

/// A running server; dropping it stops the server and closes every connection.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn mutant(&self) -> MutantId {
        lock(&self.shared).broker.mutant()
    }

    /// Stops accepting, closes all connections and waits for the accept loop.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the server stops, which only happens on an accept error.
    pub fn wait(mut self) {
        if let Some(acceptor) = self.acceptor.take() {
            let _ = acceptor.join();
        }
    }

    fn stop_now(&mut self) {
        let Some(acceptor) = self.acceptor.take() else {
            return;
        };
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        let _ = acceptor.join();
        let mut shared = lock(&self.shared);
        let keys: Vec<usize> = shared.writers.keys().copied().collect();
        for key in keys {
            shared.drop_connection(key);
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn lock(shared: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    shared
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Starts serving `mutant` on `addr` (port 0 picks a free port).
///
/// Each connection is read by its own thread; all broker updates and the
/// writes they cause happen under one lock, so clients observe a
/// linearization of their packets.
pub fn serve(mutant: MutantId, addr: impl ToSocketAddrs) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Mutex::new(Shared {
        broker: BrokerState::new(mutant),
        writers: HashMap::new(),
        next_key: 0,
    }));
    let acceptor = {
        let stop = Arc::clone(&stop);
        let shared = Arc::clone(&shared);
        thread::spawn(move || accept_loop(listener, stop, shared))
    };
    Ok(ServerHandle {
        addr,
        stop,
        shared,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, shared: Arc<Mutex<Shared>>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else {
            continue;
        };
        let _ = stream.set_nodelay(true);
        let Ok(writer) = stream.try_clone() else {
            continue;
        };
        let key = {
            let mut s = lock(&shared);
            let key = s.next_key;
            s.next_key += 1;
            s.broker.open(key);
            s.writers.insert(key, writer);
            key
        };
        let shared = Arc::clone(&shared);
        thread::spawn(move || connection_loop(key, stream, shared));
    }
}

fn connection_loop(key: usize, mut stream: TcpStream, shared: Arc<Mutex<Shared>>) {
    loop {
        let packet = read_packet(&mut stream);
        let mut s = lock(&shared);
        match packet {
            Ok(Some(packet)) => {
                let deliveries = s.broker.receive(key, &packet);
                s.dispatch(deliveries);
                if packet == MqttPacket::Disconnect || !s.writers.contains_key(&key) {
                    break;
                }
            }
            // End of stream, socket error or malformed bytes.
            Ok(None) | Err(_) => {
                let deliveries = s.broker.connection_lost(key);
                s.dispatch(deliveries);
                break;
            }
        }
    }
    let mut s = lock(&shared);
    s.drop_connection(key);
    s.broker.forget(key);
}
