use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

use qmoney_client::TcpTransport;
use qmoney_core::protocol::{Message, Transport, TransportError};

/// Serves `conns` connections; each echoes one verdict line, then hangs up on the next.
fn flaky_bank(conns: usize) -> (std::net::SocketAddr, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        for stream in listener.incoming().take(conns) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            stream.write_all(b"{\"type\":\"verdict\",\"valid\":false}\n").unwrap();
            line.clear();
            let _ = reader.read_line(&mut line);
        }
    });
    (addr, handle)
}

#[test]
fn hangup_aborts_then_closes_until_reset() {
    let (addr, bank) = flaky_bank(2);
    let mut t = TcpTransport::connect(addr).unwrap();
    assert_eq!(t.peer(), addr);
    let init = Message::Init { coin_id: qmoney_core::money::CoinId(1) };
    assert_eq!(t.exchange(&init).unwrap(), Message::Verdict { valid: false });
    assert!(matches!(t.exchange(&init), Err(TransportError::Aborted(_))));
    assert!(matches!(t.exchange(&init), Err(TransportError::Closed)));
    t.reset().unwrap();
    assert_eq!(t.exchange(&init).unwrap(), Message::Verdict { valid: false });
    drop(t);
    bank.join().unwrap();
}

#[test]
fn refused_connection_is_an_io_error() {
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    assert!(TcpTransport::connect(addr).is_err());
}
