use hybridcache::{Engine, EngineConfig};

pub fn engine() -> Engine {
    Engine::new(EngineConfig {
        dram_capacity: 1 << 20,
        flash_capacity: 8 << 20,
        segment_size: 256 << 10,
        ..EngineConfig::default()
    })
    .unwrap()
}

/// Request / exact response pairs, replayed in order on one connection.
pub fn golden() -> Vec<(Vec<u8>, Vec<u8>)> {
    let long_key = "x".repeat(251);
    let big = format!("set big 0 0 300000\r\n{}\r\n", "y".repeat(300_000));
    let pairs: Vec<(String, &str)> = vec![
        ("get missing\r\n".into(), "END\r\n"),
        ("set k1 42 0 5\r\nhello\r\n".into(), "STORED\r\n"),
        // Flags are not stored.
        ("get k1\r\n".into(), "VALUE k1 0 5\r\nhello\r\nEND\r\n"),
        // Payloads may contain CRLF; exptime is ignored.
        ("set t1:k2 0 3600 4\r\na\r\nb\r\n".into(), "STORED\r\n"),
        (
            "get k1 nope t1:k2\r\n".into(),
            "VALUE k1 0 5\r\nhello\r\nVALUE t1:k2 0 4\r\na\r\nb\r\nEND\r\n",
        ),
        ("set k3 0 0 0\r\n\r\n".into(), "STORED\r\n"),
        ("get k3\r\n".into(), "VALUE k3 0 0\r\n\r\nEND\r\n"),
        ("set k1 0 0 2\r\nabc\r\n".into(), "CLIENT_ERROR bad data chunk\r\n"),
        ("get k1\r\n".into(), "VALUE k1 0 5\r\nhello\r\nEND\r\n"),
        ("set k4 0 0 1 noreply\r\nz\r\n".into(), ""),
        ("get k4\r\n".into(), "VALUE k4 0 1\r\nz\r\nEND\r\n"),
        ("delete k4\r\n".into(), "DELETED\r\n"),
        ("delete k4\r\n".into(), "NOT_FOUND\r\n"),
        ("delete k1 noreply\r\n".into(), ""),
        ("get k1\r\n".into(), "END\r\n"),
        ("frobnicate x\r\n".into(), "ERROR\r\n"),
        ("set k5 0 0\r\n".into(), "CLIENT_ERROR bad command line format\r\n"),
        ("get\r\n".into(), "CLIENT_ERROR bad command line format\r\n"),
        (
            format!("set {long_key} 0 0 1\r\nq\r\n"),
            "CLIENT_ERROR bad command line format\r\n",
        ),
        (big, "SERVER_ERROR object too large for cache\r\n"),
        ("get big\r\n".into(), "END\r\n"),
        ("version\r\n".into(), concat!("VERSION ", env!("CARGO_PKG_VERSION"), "\r\n")),
        ("get t1:k2 k3\r\n".into(), "VALUE t1:k2 0 4\r\na\r\nb\r\nVALUE k3 0 0\r\n\r\nEND\r\n"),
    ];
    pairs
        .into_iter()
        .map(|(req, resp)| (req.into_bytes(), resp.as_bytes().to_vec()))
        .collect()
}
