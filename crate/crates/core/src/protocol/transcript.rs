use serde::{Deserialize, Serialize};

use super::wire::MsgType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client = 0,
    Server = 1,
    Dealer = 2,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Server => "server",
            Role::Dealer => "dealer",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    Crypto,
    Reveal,
    Clear,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::Crypto => "crypto",
            Phase::Reveal => "reveal",
            Phase::Clear => "clear",
        }
    }
}

/// One sent message. `op` and `sub` locate it in the shared schedule, which
/// gives every run the same merged order regardless of thread timing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub op: usize,
    pub sub: usize,
    pub from: Role,
    pub to: Role,
    pub msg_type: MsgType,
    pub phase: Phase,
    pub payload_bytes: usize,
    pub wire_bytes: usize,
    #[serde(skip)]
    pub payload: Option<Vec<u8>>,
    #[serde(skip)]
    pub(crate) seq: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub setup: usize,
    pub crypto: usize,
    pub reveal: usize,
    pub clear: usize,
}

impl PhaseTotals {
    pub fn get(&self, p: Phase) -> usize {
        match p {
            Phase::Setup => self.setup,
            Phase::Crypto => self.crypto,
            Phase::Reveal => self.reveal,
            Phase::Clear => self.clear,
        }
    }

    fn slot(&mut self, p: Phase) -> &mut usize {
        match p {
            Phase::Setup => &mut self.setup,
            Phase::Crypto => &mut self.crypto,
            Phase::Reveal => &mut self.reveal,
            Phase::Clear => &mut self.clear,
        }
    }

    pub fn sum(&self) -> usize {
        self.setup + self.crypto + self.reveal + self.clear
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    /// Wire bytes (header included) per phase.
    pub bytes: PhaseTotals,
    pub messages: PhaseTotals,
    pub total_bytes: usize,
    /// Client/server flights in the crypto phase: a new round starts each
    /// time the direction between the two parties changes.
    pub rounds: usize,
}

impl Transcript {
    pub(crate) fn merge(mut entries: Vec<TranscriptEntry>) -> Self {
        entries.sort_by_key(|e| (e.op, e.sub, e.from, e.seq));
        let mut bytes = PhaseTotals::default();
        let mut messages = PhaseTotals::default();
        for e in &entries {
            *bytes.slot(e.phase) += e.wire_bytes;
            *messages.slot(e.phase) += 1;
        }
        let mut rounds = 0;
        let mut last = None;
        for e in entries
            .iter()
            .filter(|e| e.phase == Phase::Crypto && e.from != Role::Dealer && e.to != Role::Dealer)
        {
            if last != Some(e.from) {
                rounds += 1;
                last = Some(e.from);
            }
        }
        Transcript {
            total_bytes: bytes.sum(),
            entries,
            bytes,
            messages,
            rounds,
        }
    }

    pub fn phase_bytes(&self, p: Phase) -> usize {
        self.bytes.get(p)
    }

    /// Wire bytes sent from `from` to `to` in phase `p`.
    pub fn flow_bytes(&self, from: Role, to: Role, p: Phase) -> usize {
        self.entries
            .iter()
            .filter(|e| e.from == from && e.to == to && e.phase == p)
            .map(|e| e.wire_bytes)
            .sum()
    }

    /// Everything the server observes: messages it receives, in order.
    pub fn received_by(&self, r: Role) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.iter().filter(move |e| e.to == r)
    }
}
