//! TCP front end. One acceptor, one task per connection on a multi-threaded
//! runtime, and a cleaner task that runs engine maintenance on a timer. The
//! engine sits behind a mutex that is never held across an await.

use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use hybridcache::Engine;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

use crate::session::{Clock, Session};

/// Engine and clock shared by every connection.
#[derive(Debug)]
pub struct Shared {
    pub engine: Mutex<Engine>,
    pub clock: Clock,
}

impl Shared {
    pub fn new(engine: Engine, deterministic: bool) -> Arc<Self> {
        Arc::new(Shared {
            engine: Mutex::new(engine),
            clock: Clock::new(deterministic),
        })
    }

    fn engine(&self) -> std::sync::MutexGuard<'_, Engine> {
        // A panic while holding the lock leaves the engine usable for reads
        // of counters; keep serving.
        self.engine.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Serve until `shutdown` resolves. The cleaner runs every `cleaner_every`.
pub async fn run(
    listener: TcpListener,
    shared: Arc<Shared>,
    cleaner_every: Duration,
    shutdown: impl Future<Output = ()>,
) -> std::io::Result<()> {
    let cleaner = tokio::spawn(cleaner_loop(shared.clone(), cleaner_every));
    tokio::pin!(shutdown);
    let result = loop {
        tokio::select! {
            _ = &mut shutdown => break Ok(()),
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    let shared = shared.clone();
                    tokio::spawn(async move {
                        if let Err(e) = connection(stream, shared).await {
                            log::debug!("connection {peer}: {e}");
                        }
                    });
                }
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    tokio::time::sleep(Duration::from_millis(10)).await;
                }
            },
        }
    };
    cleaner.abort();
    result
}

async fn cleaner_loop(shared: Arc<Shared>, every: Duration) {
    let mut tick = tokio::time::interval(every);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tick.tick().await;
        let mut engine = shared.engine();
        let now = shared.clock.now();
        if let Err(e) = engine.maintain(now) {
            log::error!("cleaner: {e}");
        }
    }
}

async fn connection(mut stream: TcpStream, shared: Arc<Shared>) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut session = Session::new(&shared.engine());
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = stream.read(&mut buf).await?;
        if n == 0 {
            return Ok(());
        }
        let out = {
            let mut engine = shared.engine();
            session.handle(&buf[..n], &mut engine, &shared.clock)
        };
        if !out.is_empty() {
            stream.write_all(&out).await?;
        }
        if session.is_closed() {
            stream.shutdown().await.ok();
            return Ok(());
        }
    }
}
