//! Thread-per-connection TCP server shared by the publisher and cache roles.

use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::wire::{read_message, write_message, Message};
use super::{ProtocolError, IO_TIMEOUT};

/// Maps one request from `peer` to one reply.
pub type Handler = Arc<dyn Fn(Message, SocketAddr) -> Message + Send + Sync>;

pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(listen: &str, handler: Handler) -> Result<Self, ProtocolError> {
        let listener = TcpListener::bind(listen)?;
        Self::spawn(listener, handler)
    }

    pub fn spawn(listener: TcpListener, handler: Handler) -> Result<Self, ProtocolError> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = stop.clone();
        let accept_thread = std::thread::Builder::new()
            .name(format!("accept-{addr}"))
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop2.load(Ordering::SeqCst) {
                        break;
                    }
                    match conn {
                        Ok(stream) => {
                            let handler = handler.clone();
                            std::thread::spawn(move || {
                                if let Err(e) = serve_connection(stream, &handler) {
                                    log::debug!("connection error: {e}");
                                }
                            });
                        }
                        Err(e) => log::warn!("accept failed: {e}"),
                    }
                }
            })?;
        log::info!("listening on {addr}");
        Ok(Self {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Stops accepting new connections. Connections already open finish
    /// their current request.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        if let Some(t) = self.accept_thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

fn serve_connection(stream: TcpStream, handler: &Handler) -> Result<(), ProtocolError> {
    let peer = stream.peer_addr()?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(ProtocolError::Codec(e)) => {
                let reply = Message::error(super::ErrorCode::BadRequest, e.clone());
                write_message(&mut writer, &reply)?;
                return Err(ProtocolError::Codec(e));
            }
            Err(e) => return Err(e),
        };
        let reply = handler(msg, peer);
        write_message(&mut writer, &reply)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::request;

    #[test]
    fn echo_and_shutdown() {
        let handler: Handler = Arc::new(|msg, _peer| match msg {
            Message::ChunkReply(mut v) => {
                v.reverse();
                Message::ChunkReply(v)
            }
            _ => Message::TokenAck { accepted: false },
        });
        let server = Server::bind("127.0.0.1:0", handler).unwrap();
        let addr = server.local_addr().to_string();
        let reply = request(&addr, &Message::ChunkReply(vec![1, 2, 3])).unwrap();
        assert_eq!(reply, Message::ChunkReply(vec![3, 2, 1]));
        server.shutdown();
        assert!(request(&addr, &Message::TokenAck { accepted: true }).is_err());
    }

    #[test]
    fn malformed_frame_gets_error_reply() {
        use std::io::Write;
        let handler: Handler = Arc::new(|_, _| Message::TokenAck { accepted: true });
        let server = Server::bind("127.0.0.1:0", handler).unwrap();
        let mut s = TcpStream::connect(server.local_addr()).unwrap();
        s.write_all(&[0, 0, 0, 1, 0x42]).unwrap();
        let reply = read_message(&mut s).unwrap().unwrap();
        assert!(matches!(reply, Message::Error { .. }));
    }
}
