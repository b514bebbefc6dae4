//! Line-delimited JSON telemetry and command endpoint.
//!
//! Every connected client receives `{"type":"state", ...}` lines. Lines sent
//! by a client are parsed as commands; anything malformed or rejected is
//! answered with `{"type":"error","reason":...}` to that client only.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::thread;

use serde::Serialize;
use teleop_core::link::{Command, CommandAck, CommandError, Observation, OperatorInput, OperatorSource, TelemetryState};

pub const DEFAULT_PORT: u16 = 7421;

#[derive(Serialize)]
struct StateLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    state: &'a TelemetryState,
}

pub fn state_line(state: &TelemetryState) -> String {
    serde_json::to_string(&StateLine { kind: "state", state }).expect("telemetry serializes")
}

pub fn error_line(reason: &str) -> String {
    serde_json::json!({ "type": "error", "reason": reason }).to_string()
}

/// Parses one inbound line.
pub fn parse_command(line: &str) -> Result<Command, String> {
    serde_json::from_str(line).map_err(|e| format!("malformed command: {e}"))
}

type Clients = Arc<Mutex<Vec<(u64, Sender<String>)>>>;

pub struct TelemetryServer {
    addr: SocketAddr,
    clients: Clients,
    inbound: Receiver<(u64, Command)>,
}

impl TelemetryServer {
    /// Binds and starts accepting clients on a background thread.
    pub fn bind(addr: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let clients: Clients = Arc::default();
        let (tx, inbound) = mpsc::channel();
        let accept_clients = Arc::clone(&clients);
        thread::spawn(move || {
            let next_id = AtomicU64::new(1);
            for stream in listener.incoming().flatten() {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                if let Err(e) = attach(stream, id, &accept_clients, tx.clone()) {
                    eprintln!("telemetry: client {id}: {e}");
                }
            }
        });
        Ok(Self { addr, clients, inbound })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.clients.lock().map(|c| c.len()).unwrap_or(0)
    }

    /// Sends a line to every client, dropping those that have gone away.
    pub fn broadcast(&self, line: &str) {
        if let Ok(mut clients) = self.clients.lock() {
            clients.retain(|(_, tx)| tx.send(line.to_string()).is_ok());
        }
    }

    pub fn reply(&self, client: u64, line: &str) {
        if let Ok(clients) = self.clients.lock() {
            if let Some((_, tx)) = clients.iter().find(|(id, _)| *id == client) {
                let _ = tx.send(line.to_string());
            }
        }
    }

    /// Commands received since the last call, in arrival order.
    pub fn drain(&self) -> Vec<(u64, Command)> {
        self.inbound.try_iter().collect()
    }
}

fn attach(stream: TcpStream, id: u64, clients: &Clients, inbound: Sender<(u64, Command)>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let (out_tx, out_rx) = mpsc::channel::<String>();
    thread::spawn(move || {
        for line in out_rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    });
    let replies = out_tx.clone();
    clients.lock().map_err(|_| io::Error::other("client list poisoned"))?.push((id, out_tx));
    thread::spawn(move || {
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            match parse_command(&line) {
                Ok(cmd) => {
                    if inbound.send((id, cmd)).is_err() {
                        break;
                    }
                }
                Err(reason) => {
                    let _ = replies.send(error_line(&reason));
                }
            }
        }
    });
    Ok(())
}

/// Operator driven by telemetry clients. Commands apply on the next tick;
/// rejections are reported back to the client that sent them.
pub struct ConsoleOperator {
    server: Rc<TelemetryServer>,
    pending: VecDeque<u64>,
}

impl ConsoleOperator {
    pub fn new(server: Rc<TelemetryServer>) -> Self {
        Self { server, pending: VecDeque::new() }
    }
}

impl OperatorSource for ConsoleOperator {
    fn act(&mut self, _obs: &Observation<'_>) -> OperatorInput {
        let (clients, commands): (Vec<u64>, Vec<Command>) = self.server.drain().into_iter().unzip();
        self.pending = clients.into();
        OperatorInput { velocity: None, commands }
    }

    fn feedback(&mut self, results: &[Result<CommandAck, CommandError>]) {
        for result in results {
            let client = self.pending.pop_front();
            if let (Some(client), Err(e)) = (client, result) {
                self.server.reply(client, &error_line(&e.to_string()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::{Duration, Instant};
    use teleop_core::autonomy::Mode;

    #[test]
    fn command_parsing() {
        assert_eq!(parse_command(r#"{"type":"set_mode","mode":"semi"}"#), Ok(Command::SetMode { mode: Mode::SemiAuto }));
        assert_eq!(parse_command(r#"{"type":"execute"}"#), Ok(Command::Execute));
        assert_eq!(parse_command(r#"{"type":"camera"}"#), Ok(Command::Camera { delta: 1 }));
        assert!(parse_command(r#"{"type":"teleport"}"#).is_err());
        assert!(parse_command("{not json").is_err());
    }

    #[test]
    fn malformed_line_gets_error_reply() {
        let server = TelemetryServer::bind("127.0.0.1:0").unwrap();
        let mut stream = TcpStream::connect(server.local_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        stream.write_all(b"garbage\n{\"type\":\"recover\"}\n").unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "error");
        let deadline = Instant::now() + Duration::from_secs(5);
        let mut got = Vec::new();
        while got.is_empty() && Instant::now() < deadline {
            got = server.drain();
            thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].1, Command::Recover);
    }
}
