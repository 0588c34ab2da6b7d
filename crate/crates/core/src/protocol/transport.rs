//! Point-to-point links between the server and each client.
//!
//! Two implementations: in-process channels, and TCP over loopback using the
//! framed wire format. Both deliver messages in order; a closed peer shows up
//! as `Ok(None)` from [`Link::recv`].

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use super::message::{read_frame, read_magic, write_frame, write_magic, RoundMessage};
use crate::error::{Error, Result};

pub trait Link: Send {
    fn send(&mut self, msg: &RoundMessage) -> Result<()>;
    /// Next message, or `None` once the peer has gone away.
    fn recv(&mut self) -> Result<Option<RoundMessage>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportKind {
    #[default]
    InProcess,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-process" | "channel" => Ok(TransportKind::InProcess),
            "tcp" | "socket" => Ok(TransportKind::Tcp),
            other => Err(Error::config(format!(
                "unknown transport {other:?} (in-process | tcp)"
            ))),
        }
    }
}

pub struct ChannelLink {
    tx: Sender<RoundMessage>,
    rx: Receiver<RoundMessage>,
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &RoundMessage) -> Result<()> {
        self.tx
            .send(msg.clone())
            .map_err(|_| Error::Protocol("peer channel closed".into()))
    }

    fn recv(&mut self) -> Result<Option<RoundMessage>> {
        Ok(self.rx.recv().ok())
    }
}

/// Two connected channel endpoints.
pub fn channel_pair() -> (ChannelLink, ChannelLink) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        ChannelLink { tx: tx_a, rx: rx_a },
        ChannelLink { tx: tx_b, rx: rx_b },
    )
}

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpLink {
    fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    fn send_magic(&mut self) -> Result<()> {
        write_magic(&mut self.writer)?;
        self.writer.flush()?;
        Ok(())
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &RoundMessage) -> Result<()> {
        write_frame(&mut self.writer, msg)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<RoundMessage>> {
        read_frame(&mut self.reader)
    }
}

/// `n` connected loopback pairs `(server end, client end)`. Client `i`
/// connects and is accepted before client `i + 1`, so ids match connection
/// order. Each side sends the magic and checks the peer's.
pub fn tcp_pairs(n: usize) -> Result<Vec<(TcpLink, TcpLink)>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let client = TcpStream::connect(addr)?;
        let (server, _) = listener.accept()?;
        let mut s = TcpLink::new(server)?;
        let mut c = TcpLink::new(client)?;
        s.send_magic()?;
        c.send_magic()?;
        read_magic(&mut s.reader)?;
        read_magic(&mut c.reader)?;
        pairs.push((s, c));
    }
    Ok(pairs)
}

pub type LinkSet = Vec<Box<dyn Link>>;

/// Server ends and client ends for `n` clients.
pub fn connect(kind: TransportKind, n: usize) -> Result<(LinkSet, LinkSet)> {
    let mut servers: Vec<Box<dyn Link>> = Vec::with_capacity(n);
    let mut clients: Vec<Box<dyn Link>> = Vec::with_capacity(n);
    match kind {
        TransportKind::InProcess => {
            for _ in 0..n {
                let (s, c) = channel_pair();
                servers.push(Box::new(s));
                clients.push(Box::new(c));
            }
        }
        TransportKind::Tcp => {
            for (s, c) in tcp_pairs(n)? {
                servers.push(Box::new(s));
                clients.push(Box::new(c));
            }
        }
    }
    Ok((servers, clients))
}
