use std::io::{BufReader, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

use super::transcript::{Phase, Role, TranscriptEntry};
use super::wire::{Message, MsgType};
use crate::error::{Error, Result};

enum Inner {
    Mem {
        tx: Sender<Vec<u8>>,
        rx: Receiver<Vec<u8>>,
    },
    Tcp {
        tx: Sender<Vec<u8>>,
        reader: BufReader<TcpStream>,
    },
}

/// A duplex connection to one peer. Sends never block: TCP writes go
/// through a detached writer thread, so two parties can push large messages
/// at each other at the same time, and the socket closes once that thread
/// has flushed everything queued.
pub(crate) struct Link {
    inner: Inner,
}

impl Link {
    pub fn mem_pair() -> (Link, Link) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        (
            Link {
                inner: Inner::Mem { tx: tx_a, rx: rx_a },
            },
            Link {
                inner: Inner::Mem { tx: tx_b, rx: rx_b },
            },
        )
    }

    pub fn tcp(stream: TcpStream) -> Result<Link> {
        stream.set_nodelay(true)?;
        let mut out = stream.try_clone()?;
        let (tx, rx) = channel::<Vec<u8>>();
        std::thread::spawn(move || {
            for frame in rx {
                if out.write_all(&frame).is_err() {
                    break;
                }
            }
            let _ = out.flush();
        });
        Ok(Link {
            inner: Inner::Tcp {
                tx,
                reader: BufReader::new(stream),
            },
        })
    }

    fn send_frame(&mut self, frame: Vec<u8>) -> bool {
        match &mut self.inner {
            Inner::Mem { tx, .. } => tx.send(frame).is_ok(),
            Inner::Tcp { tx, .. } => tx.send(frame).is_ok(),
        }
    }

    fn recv(&mut self) -> std::result::Result<Message, RecvError> {
        match &mut self.inner {
            Inner::Mem { rx, .. } => {
                let frame = rx.recv().map_err(|_| RecvError::Closed)?;
                Message::decode(&frame).map_err(RecvError::Framing)
            }
            Inner::Tcp { reader, .. } => match Message::read_from(reader) {
                Ok(m) => Ok(m),
                Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                    Err(RecvError::Closed)
                }
                Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::ConnectionReset => {
                    Err(RecvError::Closed)
                }
                Err(e) => Err(RecvError::Framing(e)),
            },
        }
    }
}

enum RecvError {
    Closed,
    Framing(Error),
}

/// Marks an error that was caused by a peer's abort rather than locally.
#[derive(Debug)]
pub(crate) struct Failure {
    pub phase: Phase,
    pub error: Error,
    pub relayed: bool,
}

/// One protocol party: its links to the other two endpoints, the schedule
/// position, and the log of everything it sent.
pub(crate) struct Endpoint {
    pub me: Role,
    links: [Option<Link>; 3],
    pub log: Vec<TranscriptEntry>,
    seq: usize,
    pub op: usize,
    pub phase: Phase,
    capture: bool,
    relayed: bool,
}

impl Endpoint {
    pub fn new(me: Role, capture: bool) -> Self {
        Endpoint {
            me,
            links: [None, None, None],
            log: Vec::new(),
            seq: 0,
            op: 0,
            phase: Phase::Setup,
            capture,
            relayed: false,
        }
    }

    pub fn connect(&mut self, peer: Role, link: Link) {
        self.links[peer as usize] = Some(link);
    }

    pub fn at(&mut self, op: usize, phase: Phase) {
        self.op = op;
        self.phase = phase;
    }

    fn lost(&mut self, peer: Role) -> Error {
        if peer == Role::Dealer {
            Error::DealerUnavailable { round: self.op }
        } else {
            self.relayed = true;
            Error::protocol(
                self.phase.name(),
                format!("connection to {} lost", peer.name()),
            )
        }
    }

    pub fn send(
        &mut self,
        to: Role,
        sub: usize,
        msg_type: MsgType,
        payload: Vec<u8>,
    ) -> Result<()> {
        let msg = Message::new(msg_type, payload);
        self.log.push(TranscriptEntry {
            op: self.op,
            sub,
            from: self.me,
            to,
            msg_type,
            phase: self.phase,
            payload_bytes: msg.payload.len(),
            wire_bytes: msg.wire_len(),
            payload: self.capture.then(|| msg.payload.clone()),
            seq: self.seq,
        });
        self.seq += 1;
        let sent = self.links[to as usize]
            .as_mut()
            .expect("link to peer")
            .send_frame(msg.encode());
        if !sent {
            return Err(self.lost(to));
        }
        Ok(())
    }

    /// Receives the next message from `from`, which must be of type `expect`.
    pub fn recv(&mut self, from: Role, expect: MsgType) -> Result<Vec<u8>> {
        let received = self.links[from as usize]
            .as_mut()
            .expect("link to peer")
            .recv();
        let msg = match received {
            Ok(m) => m,
            Err(RecvError::Closed) => return Err(self.lost(from)),
            Err(RecvError::Framing(e)) => return Err(e),
        };
        if msg.msg_type == MsgType::Abort {
            self.relayed = true;
            return Err(Error::protocol(
                self.phase.name(),
                format!(
                    "{} aborted: {}",
                    from.name(),
                    String::from_utf8_lossy(&msg.payload)
                ),
            ));
        }
        if msg.msg_type != expect {
            return Err(Error::protocol(
                self.phase.name(),
                format!(
                    "expected {expect} from {}, got {}",
                    from.name(),
                    msg.msg_type
                ),
            ));
        }
        Ok(msg.payload)
    }

    /// Tells every reachable peer that this endpoint is giving up.
    pub fn fail(&mut self, error: Error) -> Failure {
        let relayed = self.relayed;
        if !relayed {
            let reason = format!("{}: {error}", self.me.name());
            for link in self.links.iter_mut().flatten() {
                link.send_frame(Message::new(MsgType::Abort, reason.clone().into_bytes()).encode());
            }
        }
        Failure {
            phase: self.phase,
            error,
            relayed,
        }
    }

    /// Drops every link without a word, as a crashed process would.
    pub fn vanish(&mut self) {
        for l in &mut self.links {
            l.take();
        }
    }
}
