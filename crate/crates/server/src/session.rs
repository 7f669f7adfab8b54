//! Command execution against the engine and response framing.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use hybridcache::engine::DeleteOutcome;
use hybridcache::{Engine, Error as EngineError, Key, Timestamp};

use crate::protocol::{Command, Frame, TOO_LARGE};

pub const DEFAULT_TENANT: &str = "default";

/// Logical clock step in deterministic mode: one millisecond per command.
pub const LOGICAL_TICK_US: u64 = 1000;

/// Source of request timestamps.
#[derive(Debug)]
pub enum Clock {
    Wall(Instant),
    /// Advances by [`LOGICAL_TICK_US`] per reading, so runs are repeatable.
    Logical(AtomicU64),
}

impl Clock {
    pub fn new(deterministic: bool) -> Self {
        if deterministic {
            Clock::Logical(AtomicU64::new(0))
        } else {
            Clock::Wall(Instant::now())
        }
    }

    pub fn now(&self) -> Timestamp {
        match self {
            Clock::Wall(start) => Timestamp(start.elapsed().as_micros() as u64),
            Clock::Logical(t) => Timestamp(t.fetch_add(LOGICAL_TICK_US, Ordering::Relaxed)),
        }
    }
}

/// Tenant of a key: the part before the first `:`, or the default tenant.
pub fn tenant_of(key: &Key) -> String {
    match key.tenant() {
        [] => DEFAULT_TENANT.to_string(),
        t => String::from_utf8_lossy(t).into_owned(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Close,
}

/// Execute one decoded frame, appending the response to `out`.
pub fn execute(frame: Frame, engine: &mut Engine, now: Timestamp, out: &mut Vec<u8>) -> Control {
    let cmd = match frame {
        Frame::Error(line) => {
            out.extend_from_slice(line.as_bytes());
            return Control::Continue;
        }
        Frame::Command(c) => c,
    };
    match cmd {
        Command::Get { keys } => {
            for raw in keys {
                let Ok(key) = Key::new(raw) else { continue };
                match engine.get(&tenant_of(&key), &key, now) {
                    Ok(g) => {
                        if let Some(v) = g.value {
                            value_block(out, &key, &v);
                        }
                    }
                    Err(e) => {
                        server_error(out, &e);
                        return Control::Continue;
                    }
                }
            }
            out.extend_from_slice(b"END\r\n");
        }
        Command::Set { key, data, noreply, .. } => {
            let reply: &[u8] = match Key::new(key) {
                Err(_) => b"CLIENT_ERROR bad command line format\r\n",
                Ok(key) => match engine.set(&tenant_of(&key), key, data, now) {
                    Ok(_) => b"STORED\r\n",
                    Err(EngineError::Oversize { .. }) => TOO_LARGE.as_bytes(),
                    Err(e) => {
                        server_error(out, &e);
                        return Control::Continue;
                    }
                },
            };
            if !noreply {
                out.extend_from_slice(reply);
            }
        }
        Command::Delete { key, noreply } => {
            let reply: &[u8] = match Key::new(key) {
                Err(_) => b"CLIENT_ERROR bad command line format\r\n",
                Ok(key) => match engine.delete(&tenant_of(&key), &key, now) {
                    Ok(DeleteOutcome::Deleted) => b"DELETED\r\n",
                    Ok(DeleteOutcome::Absent) => b"NOT_FOUND\r\n",
                    Err(e) => {
                        server_error(out, &e);
                        return Control::Continue;
                    }
                },
            };
            if !noreply {
                out.extend_from_slice(reply);
            }
        }
        Command::Stats => stats_block(out, engine),
        Command::Version => {
            out.extend_from_slice(format!("VERSION {}\r\n", env!("CARGO_PKG_VERSION")).as_bytes());
        }
        Command::Quit => return Control::Close,
    }
    Control::Continue
}

/// Flags are not stored, so every value comes back with flags 0.
fn value_block(out: &mut Vec<u8>, key: &Key, value: &[u8]) {
    out.extend_from_slice(b"VALUE ");
    out.extend_from_slice(key.as_bytes());
    out.extend_from_slice(format!(" 0 {}\r\n", value.len()).as_bytes());
    out.extend_from_slice(value);
    out.extend_from_slice(b"\r\n");
}

fn server_error(out: &mut Vec<u8>, e: &EngineError) {
    log::warn!("request failed: {e}");
    let msg = e.to_string().replace(['\r', '\n'], " ");
    out.extend_from_slice(format!("SERVER_ERROR {msg}\r\n").as_bytes());
}

/// Every counter, then the derived ratios, in memcached `STAT` framing.
pub fn stats_block(out: &mut Vec<u8>, engine: &Engine) {
    let report = engine.report("flashield");
    for (name, value) in report.counters.pairs() {
        out.extend_from_slice(format!("STAT {name} {value}\r\n").as_bytes());
    }
    let d = report.derived;
    for (name, value) in [
        ("hit_rate", d.hit_rate),
        ("clwa", d.clwa),
        ("flash_reads_per_flash_hit", d.flash_reads_per_flash_hit),
        ("bytes_per_flash_object", d.bytes_per_flash_object),
        ("segment_utilization", d.segment_utilization),
    ] {
        out.extend_from_slice(format!("STAT {name} {value:.6}\r\n").as_bytes());
    }
    out.extend_from_slice(b"END\r\n");
}

/// A connection's protocol state: decode what arrives, execute, collect the
/// responses. Used by the network server and directly by tests.
#[derive(Debug)]
pub struct Session {
    decoder: crate::protocol::Decoder,
    closed: bool,
}

impl Session {
    pub fn new(engine: &Engine) -> Self {
        Session {
            decoder: crate::protocol::Decoder::new(engine.config().max_record_len() as usize),
            closed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Feed received bytes; returns the responses they produced.
    pub fn handle(&mut self, input: &[u8], engine: &mut Engine, clock: &Clock) -> Vec<u8> {
        let mut out = Vec::new();
        if self.closed {
            return out;
        }
        self.decoder.feed(input);
        while let Some(frame) = self.decoder.next_frame() {
            if execute(frame, engine, clock.now(), &mut out) == Control::Close {
                self.closed = true;
                break;
            }
        }
        out
    }
}
