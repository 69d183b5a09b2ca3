//! Blocking TCP transport to a remote bank.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use qmoney_core::protocol::{Message, Transport, TransportError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    fn open(addr: SocketAddr, timeout: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Conn { reader: BufReader::new(stream.try_clone()?), writer: stream })
    }
}

/// One TCP connection at a time; `reset` reconnects.
pub struct TcpTransport {
    addr: SocketAddr,
    timeout: Duration,
    conn: Option<Conn>,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        Self::connect_timeout(addr, DEFAULT_TIMEOUT)
    }

    pub fn connect_timeout<A: ToSocketAddrs>(addr: A, timeout: Duration) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "address resolved to nothing"))?;
        let conn = Conn::open(addr, timeout)?;
        Ok(TcpTransport { addr, timeout, conn: Some(conn) })
    }

    pub fn peer(&self) -> SocketAddr {
        self.addr
    }

    /// Sends a raw line (no newline) and returns the raw reply, if any.
    pub fn exchange_raw(&mut self, line: &str) -> Result<String, TransportError> {
        let conn = self.conn.as_mut().ok_or(TransportError::Closed)?;
        let result = (|| {
            conn.writer.write_all(line.as_bytes())?;
            conn.writer.write_all(b"\n")?;
            conn.writer.flush()?;
            let mut reply = String::new();
            conn.reader.read_line(&mut reply)?;
            Ok::<_, io::Error>(reply)
        })();
        match result {
            Ok(reply) if reply.ends_with('\n') => Ok(reply.trim_end_matches('\n').to_owned()),
            Ok(_) => {
                self.conn = None;
                Err(TransportError::Aborted("bank closed the connection".into()))
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe) => {
                self.conn = None;
                Err(TransportError::Aborted("bank closed the connection".into()))
            }
            Err(e) => {
                self.conn = None;
                Err(TransportError::Io(e.to_string()))
            }
        }
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, msg: &Message) -> Result<Message, TransportError> {
        let reply = self.exchange_raw(&msg.encode())?;
        Ok(Message::decode(&reply)?)
    }

    fn reset(&mut self) -> Result<(), TransportError> {
        self.conn = None;
        self.conn = Some(Conn::open(self.addr, self.timeout).map_err(|e| TransportError::Io(e.to_string()))?);
        Ok(())
    }
}
