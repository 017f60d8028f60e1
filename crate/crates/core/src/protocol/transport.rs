//! Classical channel transports. Every transport moves wire-encoded frames,
//! so the in-process loopback carries exactly the bytes a socket would.

use std::io::{ErrorKind, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};

use super::wire::{FrameDecoder, Message};
use super::ProtocolError;

pub trait Transport {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError>;
    /// Blocks for the next message; `TransportClosed` once the peer is gone.
    fn recv(&mut self) -> Result<Message, ProtocolError>;
    fn bytes_sent(&self) -> u64;
    fn bytes_received(&self) -> u64;
}

/// One end of an in-process byte pipe.
#[derive(Debug)]
pub struct Loopback {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    decoder: FrameDecoder,
    sent: u64,
    received: u64,
}

/// Two connected loopback endpoints.
pub fn loopback_pair() -> (Loopback, Loopback) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    let mk = |tx, rx| Loopback {
        tx,
        rx,
        decoder: FrameDecoder::new(),
        sent: 0,
        received: 0,
    };
    (mk(tx_a, rx_a), mk(tx_b, rx_b))
}

impl Transport for Loopback {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let bytes = msg.encode();
        self.sent += bytes.len() as u64;
        self.tx.send(bytes).map_err(|_| ProtocolError::TransportClosed)
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        loop {
            if let Some(m) = self.decoder.next_message()? {
                return Ok(m);
            }
            let chunk = self.rx.recv().map_err(|_| ProtocolError::TransportClosed)?;
            self.received += chunk.len() as u64;
            self.decoder.push(&chunk);
        }
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }

    fn bytes_received(&self) -> u64 {
        self.received
    }
}

/// Transport over any byte stream, typically a `TcpStream`.
#[derive(Debug)]
pub struct StreamTransport<S> {
    stream: S,
    decoder: FrameDecoder,
    buf: Vec<u8>,
    sent: u64,
    received: u64,
}

impl<S: Read + Write> StreamTransport<S> {
    pub fn new(stream: S) -> Self {
        Self {
            stream,
            decoder: FrameDecoder::new(),
            buf: vec![0; 64 * 1024],
            sent: 0,
            received: 0,
        }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

pub(crate) fn io_err(e: std::io::Error) -> ProtocolError {
    match e.kind() {
        ErrorKind::UnexpectedEof | ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted => {
            ProtocolError::TransportClosed
        }
        _ => ProtocolError::Io(e.to_string()),
    }
}

impl<S: Read + Write> Transport for StreamTransport<S> {
    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let bytes = msg.encode();
        self.stream.write_all(&bytes).map_err(io_err)?;
        self.stream.flush().map_err(io_err)?;
        self.sent += bytes.len() as u64;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        loop {
            if let Some(m) = self.decoder.next_message()? {
                return Ok(m);
            }
            let n = match self.stream.read(&mut self.buf) {
                Ok(n) => n,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(io_err(e)),
            };
            if n == 0 {
                return Err(ProtocolError::TransportClosed);
            }
            self.received += n as u64;
            self.decoder.push(&self.buf[..n]);
        }
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }

    fn bytes_received(&self) -> u64 {
        self.received
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::wire::FrameStatus;
    use std::net::{TcpListener, TcpStream};

    fn sample() -> Vec<Message> {
        vec![
            Message::SampleRequest { frame_id: 0, indices: vec![1, 5, 9] },
            Message::Report { frame_id: 0, status: FrameStatus::Ok, digest: 7 },
        ]
    }

    #[test]
    fn loopback_carries_wire_bytes() {
        let (mut a, mut b) = loopback_pair();
        for m in sample() {
            a.send(&m).unwrap();
            assert_eq!(b.recv().unwrap(), m);
        }
        let total: u64 = sample().iter().map(|m| m.encode().len() as u64).sum();
        assert_eq!(a.bytes_sent(), total);
        assert_eq!(b.bytes_received(), total);
        drop(a);
        assert_eq!(b.recv(), Err(ProtocolError::TransportClosed));
    }

    #[test]
    fn tcp_roundtrip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let h = std::thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut t = StreamTransport::new(s);
            let got: Vec<_> = (0..2).map(|_| t.recv().unwrap()).collect();
            for m in &got {
                t.send(m).unwrap();
            }
            got
        });
        let mut t = StreamTransport::new(TcpStream::connect(addr).unwrap());
        for m in sample() {
            t.send(&m).unwrap();
        }
        let echoed: Vec<_> = (0..2).map(|_| t.recv().unwrap()).collect();
        assert_eq!(h.join().unwrap(), sample());
        assert_eq!(echoed, sample());
        assert_eq!(t.recv(), Err(ProtocolError::TransportClosed));
    }
}
