use std::time::Duration;

use hybridcache::Engine;
use hybridcache_server::server::{self, Shared};
use hybridcache_server::{Clock, Session};
use proptest::prelude::*;
use tokio::io::{AsyncReadExt, AsyncWriteExt};

mod support;
use support::{engine, golden};

#[test]
fn golden_transcript_in_process() {
    let mut e = engine();
    let clock = Clock::new(true);
    let mut s = Session::new(&e);
    for (i, (req, want)) in golden().into_iter().enumerate() {
        let got = s.handle(&req, &mut e, &clock);
        assert_eq!(
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(&want),
            "exchange {i}: {:?}",
            String::from_utf8_lossy(&req[..req.len().min(60)])
        );
    }
    assert!(!s.is_closed());
    assert!(s.handle(b"quit\r\n", &mut e, &clock).is_empty());
    assert!(s.is_closed());
}

#[test]
fn stats_framing() {
    let mut e = engine();
    let clock = Clock::new(true);
    let mut s = Session::new(&e);
    s.handle(b"set a 0 0 3\r\nabc\r\nget a\r\nget b\r\ndelete a\r\n", &mut e, &clock);
    let out = String::from_utf8(s.handle(b"stats\r\n", &mut e, &clock)).unwrap();
    assert!(out.ends_with("STAT segment_utilization 0.000000\r\nEND\r\n"));
    let stats: Vec<(&str, &str)> = out
        .strip_suffix("END\r\n")
        .unwrap()
        .split_terminator("\r\n")
        .map(|l| {
            let mut w = l.split(' ');
            assert_eq!(w.next(), Some("STAT"), "{l}");
            let kv = (w.next().unwrap(), w.next().unwrap());
            assert!(w.next().is_none());
            kv
        })
        .collect();
    let get = |k: &str| stats.iter().find(|(n, _)| *n == k).unwrap().1;
    // record = 5-byte header + 1-byte key + 3-byte value
    assert_eq!(
        [get("gets"), get("dram_hits"), get("misses"), get("sets"), get("deletes"), get("client_bytes_written")],
        ["2", "1", "1", "1", "1", "9"]
    );
    assert_eq!(get("hit_rate"), "0.500000");
    assert_eq!(get("index_table_bytes"), (4 * (8u64 << 20) / 256).to_string());
}

#[test]
fn stats_counters_are_monotone() {
    let mut e = engine();
    let clock = Clock::new(true);
    let mut s = Session::new(&e);
    let gauges = ["index_table_bytes", "bloom_bytes", "live_flash_objects", "ghost_flash_objects"];
    let snapshot = |s: &mut Session, e: &mut Engine| -> Vec<(String, u64)> {
        String::from_utf8(s.handle(b"stats\r\n", e, &clock))
            .unwrap()
            .lines()
            .filter_map(|l| {
                let mut w = l.trim_end().split(' ').skip(1);
                let (k, v) = (w.next()?, w.next()?);
                Some((k.to_string(), v.parse::<u64>().ok()?))
            })
            .filter(|(k, _)| !gauges.contains(&k.as_str()))
            .collect()
    };
    let mut prev = snapshot(&mut s, &mut e);
    for round in 0..40u32 {
        let mut req = Vec::new();
        for i in 0..200u32 {
            let k = (round * 1931 + i * 7) % 9000;
            req.extend_from_slice(format!("set k{k} 0 0 200\r\n{}\r\nget k{}\r\n", "v".repeat(200), k / 2).as_bytes());
            if i % 9 == 0 {
                req.extend_from_slice(format!("delete k{}\r\n", k / 3).as_bytes());
            }
        }
        s.handle(&req, &mut e, &clock);
        let cur = snapshot(&mut s, &mut e);
        for ((k, a), (k2, b)) in prev.iter().zip(&cur) {
            assert_eq!(k, k2);
            assert!(b >= a, "{k} went from {a} to {b}");
        }
        prev = cur;
    }
    // The run pushed data through flash.
    assert!(prev.iter().any(|(k, v)| k == "segments_written" && *v > 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Responses do not depend on how the byte stream is split into reads.
    #[test]
    fn chunking_does_not_change_responses(cuts in proptest::collection::vec(1usize..400, 1..40)) {
        let stream: Vec<u8> = golden().into_iter().filter(|(r, _)| r.len() < 1000).flat_map(|(r, _)| r).collect();
        let expected: Vec<u8> = golden().into_iter().filter(|(r, _)| r.len() < 1000).flat_map(|(_, w)| w).collect();
        let mut e = engine();
        let clock = Clock::new(true);
        let mut s = Session::new(&e);
        let mut out = Vec::new();
        let mut pos = 0;
        let mut cut = cuts.iter().cycle();
        while pos < stream.len() {
            let end = (pos + cut.next().unwrap()).min(stream.len());
            out.extend(s.handle(&stream[pos..end], &mut e, &clock));
            pos = end;
        }
        prop_assert_eq!(String::from_utf8_lossy(&out), String::from_utf8_lossy(&expected));
    }
}

async fn exchange(stream: &mut tokio::net::TcpStream, req: &[u8], want: usize) -> Vec<u8> {
    stream.write_all(req).await.unwrap();
    let mut got = Vec::new();
    let mut buf = vec![0u8; 1 << 16];
    while got.len() < want {
        let n = tokio::time::timeout(Duration::from_secs(10), stream.read(&mut buf))
            .await
            .expect("response timed out")
            .unwrap();
        assert!(n > 0, "connection closed early");
        got.extend_from_slice(&buf[..n]);
    }
    got
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn golden_transcript_over_tcp() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let shared = Shared::new(engine(), true);
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let srv = tokio::spawn(server::run(listener, shared.clone(), Duration::from_millis(5), async {
        let _ = stop_rx.await;
    }));

    let mut c = tokio::net::TcpStream::connect(addr).await.unwrap();
    for (req, want) in golden() {
        let got = exchange(&mut c, &req, want.len()).await;
        assert_eq!(String::from_utf8_lossy(&got), String::from_utf8_lossy(&want));
    }

    // A second connection sees the first one's writes; values round-trip
    // byte-exact, including every byte value.
    let mut c2 = tokio::net::TcpStream::connect(addr).await.unwrap();
    let value: Vec<u8> = (0..=255u8).cycle().take(5000).collect();
    let mut req = b"set bin 0 0 5000\r\n".to_vec();
    req.extend_from_slice(&value);
    req.extend_from_slice(b"\r\n");
    assert_eq!(exchange(&mut c2, &req, 8).await, b"STORED\r\n");
    let mut want = b"VALUE bin 0 5000\r\n".to_vec();
    want.extend_from_slice(&value);
    want.extend_from_slice(b"\r\nEND\r\n");
    assert_eq!(exchange(&mut c, b"get bin\r\n", want.len()).await, want);

    // quit closes only that connection.
    c2.write_all(b"quit\r\n").await.unwrap();
    let mut buf = [0u8; 16];
    let n = tokio::time::timeout(Duration::from_secs(10), c2.read(&mut buf)).await.unwrap().unwrap();
    assert_eq!(n, 0);
    assert_eq!(exchange(&mut c, b"get k3\r\n", 19).await, b"VALUE k3 0 0\r\n\r\nEND\r\n");

    stop_tx.send(()).unwrap();
    srv.await.unwrap().unwrap();
    assert!(shared.engine.lock().unwrap().counters().gets > 0);
}
