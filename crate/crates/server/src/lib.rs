//! Bank verification service.
//!
//! One JSON message per line over TCP. Each connection carries any number of
//! consecutive Ver sessions. A malformed or out-of-order line closes that
//! connection and leaves every other connection untouched.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use qmoney_core::money::BankDb;
use qmoney_core::protocol::BankConnection;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tracing::{debug, info, warn};

/// Longest accepted line, newline included.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    pub seed: u64,
    pub read_timeout: Duration,
}

impl ServerConfig {
    pub fn new(seed: u64) -> Self {
        ServerConfig { seed, read_timeout: Duration::from_secs(30) }
    }
}

/// Why a connection ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Closed {
    /// peer hung up between messages
    Eof,
    Timeout,
    TooLong,
    /// the line could not be decoded or was out of order
    Rejected(String),
    Io(String),
}

/// Serves one connection until it closes. Connection `index` gets bank
/// randomness stream `index` under `config.seed`.
pub async fn handle_connection<S>(stream: S, db: &BankDb, config: ServerConfig, index: u64) -> Closed
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let (read, mut write) = tokio::io::split(stream);
    let mut reader = BufReader::new(read);
    let mut conn = BankConnection::new(db, config.seed, index);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let mut limited = (&mut reader).take(MAX_LINE as u64);
        let n = match tokio::time::timeout(config.read_timeout, limited.read_until(b'\n', &mut buf)).await {
            Err(_) => return Closed::Timeout,
            Ok(Err(e)) => return Closed::Io(e.to_string()),
            Ok(Ok(n)) => n,
        };
        if n == 0 {
            return Closed::Eof;
        }
        if buf.last() != Some(&b'\n') {
            return if n >= MAX_LINE { Closed::TooLong } else { Closed::Eof };
        }
        buf.pop();
        let Ok(line) = std::str::from_utf8(&buf) else {
            return Closed::Rejected("line is not UTF-8".into());
        };
        let reply = match conn.handle_line(line) {
            Ok(r) => r,
            Err(e) => return Closed::Rejected(e.to_string()),
        };
        if let Some((id, valid)) = reply.verdict {
            info!("coin={id} valid={valid}");
        }
        let mut out = reply.reply.into_bytes();
        out.push(b'\n');
        if let Err(e) = write.write_all(&out).await {
            return Closed::Io(e.to_string());
        }
    }
}

/// Accepts connections until `shutdown` resolves. Connections are numbered in
/// accept order starting at 0.
pub async fn serve_until<F>(listener: TcpListener, db: Arc<BankDb>, config: ServerConfig, shutdown: F) -> io::Result<()>
where
    F: Future<Output = ()>,
{
    tokio::pin!(shutdown);
    let mut index = 0u64;
    loop {
        let (stream, peer) = tokio::select! {
            _ = &mut shutdown => return Ok(()),
            accepted = listener.accept() => accepted?,
        };
        let db = Arc::clone(&db);
        let conn = index;
        index += 1;
        tokio::spawn(async move {
            match handle_connection(stream, &db, config, conn).await {
                Closed::Eof => debug!(%peer, conn, "connection closed"),
                reason => warn!(%peer, conn, ?reason, "connection dropped"),
            }
        });
    }
}

pub async fn serve(listener: TcpListener, db: Arc<BankDb>, config: ServerConfig) -> io::Result<()> {
    serve_until(listener, db, config, std::future::pending()).await
}

/// A server on its own thread and runtime, stopped on drop.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<io::Result<()>>>,
}

impl BackgroundServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(addr: SocketAddr, db: BankDb, config: ServerConfig) -> io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = thread::spawn(move || {
            runtime.block_on(serve_until(listener, Arc::new(db), config, async {
                let _ = stopped.await;
            }))
        });
        Ok(BackgroundServer { addr, stop: Some(stop), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qmoney_core::money::VerParams;
    use tokio::io::duplex;

    fn db() -> BankDb {
        let mut db = BankDb::new(VerParams::new(24, 6).unwrap());
        let mut rng = qmoney_core::seed::derive_rng(1, "mint", 0);
        db.mint(&mut rng).unwrap();
        db
    }

    async fn roundtrip(lines: &[&str]) -> (Vec<String>, Closed) {
        let db = db();
        let (client, server) = duplex(1 << 16);
        let (mut cr, mut cw) = tokio::io::split(client);
        let payload: String = lines.iter().map(|l| format!("{l}\n")).collect();
        let writer = async move {
            cw.write_all(payload.as_bytes()).await.unwrap();
            cw.shutdown().await.unwrap();
        };
        let (closed, _) = tokio::join!(handle_connection(server, &db, ServerConfig::new(0), 0), writer);
        let mut out = String::new();
        cr.read_to_string(&mut out).await.unwrap();
        (out.lines().map(str::to_owned).collect(), closed)
    }

    #[tokio::test]
    async fn unknown_coin_gets_negative_verdict() {
        let (replies, closed) = roundtrip(&[r#"{"type":"init","coin_id":"99"}"#]).await;
        assert_eq!(replies, vec![r#"{"type":"verdict","valid":false}"#]);
        assert_eq!(closed, Closed::Eof);
    }

    #[tokio::test]
    async fn known_coin_gets_challenge() {
        let (replies, _) = roundtrip(&[r#"{"type":"init","coin_id":"1"}"#]).await;
        assert!(replies[0].starts_with(r#"{"type":"challenge","positions":["#));
    }

    #[tokio::test]
    async fn garbage_closes_connection() {
        let (replies, closed) = roundtrip(&["hello", r#"{"type":"init","coin_id":"99"}"#]).await;
        assert!(replies.is_empty());
        assert!(matches!(closed, Closed::Rejected(_)));
    }

    #[tokio::test]
    async fn out_of_order_closes_connection() {
        let (replies, closed) = roundtrip(&[r#"{"type":"answers","pairs":[]}"#]).await;
        assert!(replies.is_empty());
        assert!(matches!(closed, Closed::Rejected(_)));
    }

    #[tokio::test]
    async fn timeout_closes_connection() {
        let db = db();
        let (_client, server) = duplex(64);
        let cfg = ServerConfig { seed: 0, read_timeout: Duration::from_millis(20) };
        assert_eq!(handle_connection(server, &db, cfg, 0).await, Closed::Timeout);
    }
}
