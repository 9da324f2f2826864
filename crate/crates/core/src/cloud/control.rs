use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::server::Shared;
use super::stats::CloudStats;
use crate::time::wall_now_ns;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Reset,
    Snapshot,
    Stop,
}

fn parse_command(line: &str) -> Result<Command, String> {
    let line = line.trim();
    let word = if line.starts_with('{') {
        let v: Value = serde_json::from_str(line).map_err(|e| format!("bad JSON: {e}"))?;
        v.get("cmd")
            .and_then(Value::as_str)
            .ok_or("missing \"cmd\"")?
            .to_string()
    } else {
        line.to_string()
    };
    match word.to_ascii_uppercase().as_str() {
        "RESET" => Ok(Command::Reset),
        "SNAPSHOT" => Ok(Command::Snapshot),
        "STOP" => Ok(Command::Stop),
        _ => Err(format!("unknown command `{word}`")),
    }
}

pub(crate) fn serve_control(listener: TcpListener, shared: Arc<Shared>) {
    let mut conns = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let sh = shared.clone();
                if let Ok(h) = thread::Builder::new()
                    .name("control-conn".into())
                    .spawn(move || control_conn(stream, &sh))
                {
                    conns.push(h);
                }
                conns.retain(|h: &thread::JoinHandle<()>| !h.is_finished());
            }
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
    for h in conns {
        let _ = h.join();
    }
}

fn control_conn(stream: TcpStream, shared: &Shared) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    while !shared.stop.load(Ordering::SeqCst) {
        // read_line keeps partial input in `line` across timeouts
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) => {}
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                continue
            }
            Err(_) => return,
        }
        if line.trim().is_empty() {
            line.clear();
            continue;
        }
        let cmd = parse_command(&line);
        line.clear();
        let reply = match cmd {
            Ok(Command::Reset) => {
                let epoch = wall_now_ns();
                shared.stats.reset(epoch);
                json!({ "epoch_ns": epoch })
            }
            Ok(Command::Snapshot) => {
                serde_json::to_value(shared.stats.snapshot(&shared.meta)).expect("stats serialize")
            }
            Ok(Command::Stop) => json!({ "ok": true }),
            Err(ref msg) => json!({ "error": msg }),
        };
        if writeln!(writer, "{reply}")
            .and_then(|_| writer.flush())
            .is_err()
        {
            return;
        }
        if let Ok(Command::Stop) = cmd {
            shared.stop.store(true, Ordering::SeqCst);
            return;
        }
    }
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("cloud control channel at {addr} unreachable")]
    Unreachable { addr: String, source: io::Error },
    #[error("control channel I/O")]
    Io(#[from] io::Error),
    #[error("malformed control reply: {0}")]
    Reply(String),
    #[error("cloud rejected command: {0}")]
    Rejected(String),
}

/// Client side of the control channel.
pub struct ControlClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl ControlClient {
    pub fn connect<A: ToSocketAddrs + std::fmt::Display>(addr: A) -> Result<Self, ControlError> {
        let unreachable = |source| ControlError::Unreachable {
            addr: addr.to_string(),
            source,
        };
        let resolved: Vec<SocketAddr> = addr.to_socket_addrs().map_err(unreachable)?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no address");
        for a in resolved {
            match TcpStream::connect_timeout(&a, Duration::from_secs(2)) {
                Ok(s) => {
                    s.set_read_timeout(Some(Duration::from_secs(10)))?;
                    let writer = s.try_clone()?;
                    return Ok(ControlClient {
                        reader: BufReader::new(s),
                        writer,
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(unreachable(last))
    }

    pub fn request(&mut self, line: &str) -> Result<Value, ControlError> {
        writeln!(self.writer, "{line}")?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(ControlError::Reply("connection closed".into()));
        }
        let v: Value =
            serde_json::from_str(&reply).map_err(|e| ControlError::Reply(e.to_string()))?;
        if let Some(err) = v.get("error") {
            return Err(ControlError::Rejected(err.to_string()));
        }
        Ok(v)
    }

    /// Zeroes the cloud's counters; returns the cloud's wall clock in ns.
    pub fn reset(&mut self) -> Result<u64, ControlError> {
        self.request("RESET")?
            .get("epoch_ns")
            .and_then(Value::as_u64)
            .ok_or_else(|| ControlError::Reply("RESET reply lacks epoch_ns".into()))
    }

    pub fn snapshot(&mut self) -> Result<CloudStats, ControlError> {
        let v = self.request("SNAPSHOT")?;
        serde_json::from_value(v).map_err(|e| ControlError::Reply(e.to_string()))
    }

    pub fn stop(&mut self) -> Result<(), ControlError> {
        self.request("STOP").map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_forms() {
        assert_eq!(parse_command("RESET\n"), Ok(Command::Reset));
        assert_eq!(parse_command("snapshot"), Ok(Command::Snapshot));
        assert_eq!(parse_command(r#"{"cmd":"STOP"}"#), Ok(Command::Stop));
        assert!(parse_command("FLY").is_err());
        assert!(parse_command("{\"x\":1}").is_err());
    }
}
