//! memcached text protocol subset: `get`, `set`, `delete`, `stats`,
//! `version`, `quit`.
//!
//! The decoder is incremental: feed it whatever the socket produced and pull
//! frames until it needs more input. Malformed input yields an error frame
//! carrying the exact response line; the stream resynchronizes at the next
//! line so the connection survives.

use hybridcache::model::MAX_KEY_LEN;

/// Longest command line accepted (memcached uses 2048 as well).
pub const MAX_LINE_LEN: usize = 2048;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Get { keys: Vec<Vec<u8>> },
    Set {
        key: Vec<u8>,
        /// Parsed for framing only; the cache does not store flags.
        flags: u32,
        /// Parsed and ignored: entries never expire.
        exptime: i64,
        data: Vec<u8>,
        noreply: bool,
    },
    Delete { key: Vec<u8>, noreply: bool },
    Stats,
    Version,
    Quit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Command(Command),
    /// A complete response line (with `\r\n`) to send back as is.
    Error(&'static str),
}

pub const ERROR: &str = "ERROR\r\n";
pub const BAD_FORMAT: &str = "CLIENT_ERROR bad command line format\r\n";
pub const BAD_CHUNK: &str = "CLIENT_ERROR bad data chunk\r\n";
pub const LINE_TOO_LONG: &str = "CLIENT_ERROR line too long\r\n";
pub const TOO_LARGE: &str = "SERVER_ERROR object too large for cache\r\n";

#[derive(Debug)]
enum State {
    Line,
    /// Waiting for `len` data bytes plus `\r\n` of a `set`.
    Data {
        key: Vec<u8>,
        flags: u32,
        exptime: i64,
        len: usize,
        noreply: bool,
    },
    /// Discarding the payload of a rejected `set`.
    Swallow(usize),
    /// Discarding through the next `\n`.
    SkipLine,
}

#[derive(Debug)]
pub struct Decoder {
    buf: Vec<u8>,
    state: State,
    max_value_len: usize,
}

impl Decoder {
    pub fn new(max_value_len: usize) -> Self {
        Decoder {
            buf: Vec::new(),
            state: State::Line,
            max_value_len,
        }
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn next_frame(&mut self) -> Option<Frame> {
        loop {
            match std::mem::replace(&mut self.state, State::Line) {
                State::Line => {
                    let Some(nl) = self.buf.iter().position(|&b| b == b'\n') else {
                        if self.buf.len() > MAX_LINE_LEN {
                            self.buf.clear();
                            self.state = State::SkipLine;
                            return Some(Frame::Error(LINE_TOO_LONG));
                        }
                        return None;
                    };
                    let line: Vec<u8> = self.buf.drain(..=nl).collect();
                    if line.len() > MAX_LINE_LEN {
                        return Some(Frame::Error(LINE_TOO_LONG));
                    }
                    let line = line.strip_suffix(b"\n").unwrap_or(&line);
                    let line = line.strip_suffix(b"\r").unwrap_or(line);
                    match self.parse_line(line) {
                        Parsed::Done(frame) => return Some(frame),
                        Parsed::NeedData(state) => self.state = state,
                        Parsed::Reject { payload, response } => {
                            self.state = State::Swallow(payload + 2);
                            return Some(Frame::Error(response));
                        }
                    }
                }
                State::Data {
                    key,
                    flags,
                    exptime,
                    len,
                    noreply,
                } => {
                    if self.buf.len() < len + 2 {
                        self.state = State::Data {
                            key,
                            flags,
                            exptime,
                            len,
                            noreply,
                        };
                        return None;
                    }
                    if &self.buf[len..len + 2] != b"\r\n" {
                        // Drop the block and whatever follows up to the next
                        // line end.
                        self.buf.drain(..len);
                        self.state = State::SkipLine;
                        return Some(Frame::Error(BAD_CHUNK));
                    }
                    let data: Vec<u8> = self.buf.drain(..len).collect();
                    self.buf.drain(..2);
                    return Some(Frame::Command(Command::Set {
                        key,
                        flags,
                        exptime,
                        data,
                        noreply,
                    }));
                }
                State::Swallow(n) => {
                    if self.buf.len() < n {
                        let left = n - self.buf.len();
                        self.buf.clear();
                        self.state = State::Swallow(left);
                        return None;
                    }
                    self.buf.drain(..n);
                }
                State::SkipLine => match self.buf.iter().position(|&b| b == b'\n') {
                    Some(nl) => {
                        self.buf.drain(..=nl);
                    }
                    None => {
                        self.buf.clear();
                        self.state = State::SkipLine;
                        return None;
                    }
                },
            }
        }
    }

    fn parse_line(&self, line: &[u8]) -> Parsed {
        let mut words = line
            .split(|&b| b == b' ')
            .filter(|w| !w.is_empty());
        let Some(verb) = words.next() else {
            return Parsed::Done(Frame::Error(ERROR));
        };
        let args: Vec<&[u8]> = words.collect();
        let bad = Parsed::Done(Frame::Error(BAD_FORMAT));
        match verb {
            b"get" => {
                if args.is_empty() || !args.iter().all(|k| valid_key(k)) {
                    return bad;
                }
                Parsed::Done(Frame::Command(Command::Get {
                    keys: args.iter().map(|k| k.to_vec()).collect(),
                }))
            }
            b"set" => {
                let noreply = args.len() == 5 && args[4] == b"noreply";
                if args.len() != 4 && !noreply {
                    return bad;
                }
                let (Some(flags), Some(exptime), Some(len)) = (
                    number::<u32>(args[1]),
                    number::<i64>(args[2]),
                    number::<usize>(args[3]),
                ) else {
                    return bad;
                };
                if !valid_key(args[0]) {
                    // The payload still follows; skip it too.
                    return Parsed::Reject { payload: len, response: BAD_FORMAT };
                }
                if len > self.max_value_len {
                    return Parsed::Reject { payload: len, response: TOO_LARGE };
                }
                Parsed::NeedData(State::Data {
                    key: args[0].to_vec(),
                    flags,
                    exptime,
                    len,
                    noreply,
                })
            }
            b"delete" => {
                let noreply = args.len() == 2 && args[1] == b"noreply";
                if (args.len() != 1 && !noreply) || !valid_key(args[0]) {
                    return bad;
                }
                Parsed::Done(Frame::Command(Command::Delete {
                    key: args[0].to_vec(),
                    noreply,
                }))
            }
            b"stats" if args.is_empty() => Parsed::Done(Frame::Command(Command::Stats)),
            b"version" if args.is_empty() => Parsed::Done(Frame::Command(Command::Version)),
            b"quit" => Parsed::Done(Frame::Command(Command::Quit)),
            _ => Parsed::Done(Frame::Error(ERROR)),
        }
    }
}

enum Parsed {
    Done(Frame),
    NeedData(State),
    /// A `set` refused before its payload arrived; the payload is skipped.
    Reject { payload: usize, response: &'static str },
}

fn valid_key(k: &[u8]) -> bool {
    !k.is_empty() && k.len() <= MAX_KEY_LEN && k.iter().all(|&b| b > b' ' && b != 0x7f)
}

fn number<T: std::str::FromStr>(w: &[u8]) -> Option<T> {
    std::str::from_utf8(w).ok()?.parse().ok()
}
