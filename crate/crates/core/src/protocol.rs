//! The six-message classical verification dialogue.
//!
//! ```text
//! holder                          bank
//!   init{coin_id}        ──▶
//!                        ◀──  challenge{positions}   (t of k)
//!   subset{positions}    ──▶                         (2t/3 unmarked)
//!                        ◀──  queries{m}
//!   answers{pairs}       ──▶
//!                        ◀──  verdict{valid}
//! ```
//!
//! Both sides are explicit forward-only state machines. The bank keeps no state
//! between sessions; the only bank message that depends on the secret record is
//! the verdict.

use std::fmt;

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hmp::{answer_query, hmp_relation, Answer, Query};
use crate::money::{BankDb, Coin, CoinId, SecretRecord, VerParams};
use crate::seed::{derive_rng, StreamRng};

/// Stream domain for per-connection bank randomness.
pub const BANK_DOMAIN: &str = "bank";

/// Default number of attempts `run_ver` makes before giving up.
pub const DEFAULT_RETRY_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Init { coin_id: CoinId },
    Challenge { positions: Vec<usize> },
    Subset { positions: Vec<usize> },
    Queries { bits: Vec<bool> },
    Answers { pairs: Vec<Answer> },
    Verdict { valid: bool },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("message is not in canonical form")]
    NonCanonical,
    #[error("bit value {0} is not 0 or 1")]
    BadBit(u8),
    #[error("coin id is not a decimal u64")]
    BadCoinId,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Wire {
    Init { coin_id: String },
    Challenge { positions: Vec<u64> },
    Subset { positions: Vec<u64> },
    Queries { m: Vec<u8> },
    Answers { pairs: Vec<[u8; 2]> },
    Verdict { valid: bool },
}

fn bit(v: u8) -> Result<bool, WireError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(WireError::BadBit(other)),
    }
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Init { .. } => "init",
            Message::Challenge { .. } => "challenge",
            Message::Subset { .. } => "subset",
            Message::Queries { .. } => "queries",
            Message::Answers { .. } => "answers",
            Message::Verdict { .. } => "verdict",
        }
    }

    fn to_wire(&self) -> Wire {
        let pos = |p: &[usize]| p.iter().map(|&i| i as u64).collect();
        match self {
            Message::Init { coin_id } => Wire::Init { coin_id: coin_id.0.to_string() },
            Message::Challenge { positions } => Wire::Challenge { positions: pos(positions) },
            Message::Subset { positions } => Wire::Subset { positions: pos(positions) },
            Message::Queries { bits } => Wire::Queries { m: bits.iter().map(|&b| b as u8).collect() },
            Message::Answers { pairs } => Wire::Answers { pairs: pairs.iter().map(|p| [p.a as u8, p.b as u8]).collect() },
            Message::Verdict { valid } => Wire::Verdict { valid: *valid },
        }
    }

    /// One compact JSON object, fields in fixed order, no trailing newline.
    pub fn encode(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("wire messages always serialize")
    }

    /// Strict decoding: anything that does not re-encode to the identical bytes
    /// is rejected.
    pub fn decode(line: &str) -> Result<Message, WireError> {
        let wire: Wire = serde_json::from_str(line).map_err(|e| WireError::Malformed(e.to_string()))?;
        let pos = |p: Vec<u64>| {
            p.into_iter()
                .map(|i| usize::try_from(i).map_err(|_| WireError::Malformed("position overflow".into())))
                .collect::<Result<Vec<_>, _>>()
        };
        let msg = match wire {
            Wire::Init { coin_id } => {
                let id = coin_id.parse::<u64>().map_err(|_| WireError::BadCoinId)?;
                Message::Init { coin_id: CoinId(id) }
            }
            Wire::Challenge { positions } => Message::Challenge { positions: pos(positions)? },
            Wire::Subset { positions } => Message::Subset { positions: pos(positions)? },
            Wire::Queries { m } => Message::Queries { bits: m.into_iter().map(bit).collect::<Result<_, _>>()? },
            Wire::Answers { pairs } => Message::Answers {
                pairs: pairs
                    .into_iter()
                    .map(|[a, b]| Ok(Answer::new(bit(a)?, bit(b)?)))
                    .collect::<Result<_, WireError>>()?,
            },
            Wire::Verdict { valid } => Message::Verdict { valid },
        };
        if msg.encode() != line {
            return Err(WireError::NonCanonical);
        }
        Ok(msg)
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Strictly increasing, all `< bound`.
fn is_canonical_set(positions: &[usize], bound: usize) -> bool {
    positions.windows(2).all(|w| w[0] < w[1]) && positions.iter().all(|&p| p < bound)
}

fn is_subset_sorted(sub: &[usize], of: &[usize]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|o| o == s))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("unexpected {got} message in state {state:?}")]
    OutOfOrder { state: BankState, got: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankState {
    AwaitInit,
    AwaitSubset,
    AwaitAnswers,
    Done,
}

/// Bank side of one Ver run.
#[derive(Debug)]
pub struct BankSession<'db> {
    db: &'db BankDb,
    state: BankState,
    coin_id: Option<CoinId>,
    challenge: Vec<usize>,
    subset: Vec<usize>,
    queries: Vec<bool>,
    verdict: Option<bool>,
}

impl<'db> BankSession<'db> {
    pub fn new(db: &'db BankDb) -> Self {
        BankSession {
            db,
            state: BankState::AwaitInit,
            coin_id: None,
            challenge: Vec::new(),
            subset: Vec::new(),
            queries: Vec::new(),
            verdict: None,
        }
    }

    pub fn state(&self) -> BankState {
        self.state
    }

    pub fn coin_id(&self) -> Option<CoinId> {
        self.coin_id
    }

    pub fn verdict(&self) -> Option<bool> {
        self.verdict
    }

    fn finish(&mut self, valid: bool) -> Message {
        self.state = BankState::Done;
        self.verdict = Some(valid);
        Message::Verdict { valid }
    }

    fn expect(&self, state: BankState, got: &'static str) -> Result<(), ProtocolError> {
        if self.state != state {
            return Err(ProtocolError::OutOfOrder { state: self.state, got });
        }
        Ok(())
    }

    /// Step 2: a uniform `t`-subset of `[k]`, or a negative verdict for an unknown id.
    pub fn on_init<R: Rng + ?Sized>(&mut self, coin_id: CoinId, rng: &mut R) -> Result<Message, ProtocolError> {
        self.expect(BankState::AwaitInit, "init")?;
        self.coin_id = Some(coin_id);
        if self.db.record(coin_id).is_none() {
            return Ok(self.finish(false));
        }
        let p = self.db.params();
        let mut positions = index::sample(rng, p.k(), p.t()).into_vec();
        positions.sort_unstable();
        self.challenge = positions.clone();
        self.state = BankState::AwaitSubset;
        Ok(Message::Challenge { positions })
    }

    /// Step 4: one uniform query bit per played position.
    pub fn on_subset<R: Rng + ?Sized>(&mut self, positions: &[usize], rng: &mut R) -> Result<Message, ProtocolError> {
        self.expect(BankState::AwaitSubset, "subset")?;
        let played = self.db.params().played();
        if positions.len() != played
            || !is_canonical_set(positions, self.db.params().k())
            || !is_subset_sorted(positions, &self.challenge)
        {
            return Ok(self.finish(false));
        }
        self.subset = positions.to_vec();
        self.queries = (0..played).map(|_| rng.random::<bool>()).collect();
        self.state = BankState::AwaitAnswers;
        Ok(Message::Queries { bits: self.queries.clone() })
    }

    /// Step 6: accept iff every answer satisfies the relation for its register.
    pub fn on_answers(&mut self, pairs: &[Answer]) -> Result<Message, ProtocolError> {
        self.expect(BankState::AwaitAnswers, "answers")?;
        let record = self
            .coin_id
            .and_then(|id| self.db.record(id))
            .expect("session only reaches AwaitAnswers for known coins");
        let valid = check_answers(record, &self.subset, &self.queries, pairs);
        Ok(self.finish(valid))
    }

    pub fn handle<R: Rng + ?Sized>(&mut self, msg: &Message, rng: &mut R) -> Result<Message, ProtocolError> {
        match msg {
            Message::Init { coin_id } => self.on_init(*coin_id, rng),
            Message::Subset { positions } => self.on_subset(positions, rng),
            Message::Answers { pairs } => self.on_answers(pairs),
            other => Err(ProtocolError::OutOfOrder { state: self.state, got: other.kind() }),
        }
    }
}

fn check_answers(record: &SecretRecord, subset: &[usize], queries: &[bool], pairs: &[Answer]) -> bool {
    pairs.len() == subset.len()
        && queries.len() == subset.len()
        && subset
            .iter()
            .zip(queries)
            .zip(pairs)
            .all(|((&i, &m), &ans)| record.colorings().get(i).is_some_and(|&x| hmp_relation(x, Query(m), ans)))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConnectionError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// What the bank does with one line on one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineReply {
    pub reply: String,
    /// set when this reply closed a session
    pub verdict: Option<(CoinId, bool)>,
}

/// Bank side of one connection: a sequence of sessions sharing one RNG stream.
///
/// Any error means the connection must be closed.
pub struct BankConnection<'db> {
    db: &'db BankDb,
    rng: StreamRng,
    session: Option<BankSession<'db>>,
}

impl<'db> BankConnection<'db> {
    pub fn new(db: &'db BankDb, seed: u64, connection: u64) -> Self {
        BankConnection { db, rng: derive_rng(seed, BANK_DOMAIN, connection), session: None }
    }

    pub fn handle_line(&mut self, line: &str) -> Result<LineReply, ConnectionError> {
        let msg = Message::decode(line)?;
        let db = self.db;
        let session = match &mut self.session {
            Some(s) if s.state() != BankState::Done => s,
            slot => slot.insert(BankSession::new(db)),
        };
        let reply = session.handle(&msg, &mut self.rng)?;
        let verdict = match (&reply, session.coin_id()) {
            (Message::Verdict { valid }, Some(id)) => Some((id, *valid)),
            _ => None,
        };
        Ok(LineReply { reply: reply.encode(), verdict })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("connection closed by peer")]
    Closed,
    #[error("bank aborted the session: {0}")]
    Aborted(String),
    #[error("bad message from bank: {0}")]
    Wire(#[from] WireError),
}

/// The holder's view of a channel to the bank.
pub trait Transport {
    /// Sends one message and waits for the bank's reply.
    fn exchange(&mut self, msg: &Message) -> Result<Message, TransportError>;
    /// Drops the current connection; the next exchange starts on a fresh one.
    fn reset(&mut self) -> Result<(), TransportError>;
}

/// Both ends in one process; messages still cross as encoded lines.
pub struct InProcessTransport<'db> {
    db: &'db BankDb,
    seed: u64,
    connection: u64,
    conn: Option<BankConnection<'db>>,
}

impl<'db> InProcessTransport<'db> {
    pub fn new(db: &'db BankDb, seed: u64) -> Self {
        InProcessTransport { db, seed, connection: 0, conn: Some(BankConnection::new(db, seed, 0)) }
    }

    pub fn connection_index(&self) -> u64 {
        self.connection
    }
}

impl Transport for InProcessTransport<'_> {
    fn exchange(&mut self, msg: &Message) -> Result<Message, TransportError> {
        let conn = self.conn.as_mut().ok_or(TransportError::Closed)?;
        match conn.handle_line(&msg.encode()) {
            Ok(r) => Ok(Message::decode(&r.reply)?),
            Err(e) => {
                self.conn = None;
                Err(TransportError::Aborted(e.to_string()))
            }
        }
    }

    fn reset(&mut self) -> Result<(), TransportError> {
        self.connection += 1;
        self.conn = Some(BankConnection::new(self.db, self.seed, self.connection));
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HolderError {
    #[error("coin is retired and must be returned to the bank")]
    Retired,
    #[error("only {unmarked} unmarked positions in the challenge, need {needed}")]
    InsufficientUnmarked { unmarked: usize, needed: usize },
    #[error("malformed {0} from bank")]
    Malformed(&'static str),
    #[error("unexpected {0} in holder state")]
    OutOfOrder(&'static str),
}

/// Whatever stands in the holder's seat: an honest coin owner or a counterfeiter.
pub trait Responder {
    fn coin_id(&self) -> CoinId;
    fn register_count(&self) -> usize;
    fn ready(&self) -> Result<(), HolderError> {
        Ok(())
    }
    /// Step 3. Returns strictly increasing positions drawn from `challenge`.
    fn choose_subset(&mut self, challenge: &[usize], played: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>, HolderError>;
    /// Step 5. One answer per subset position, in order.
    fn answer(&mut self, subset: &[usize], queries: &[bool], rng: &mut dyn RngCore) -> Vec<Answer>;
    fn observe_verdict(&mut self, _valid: bool) {}
}

/// Follows the protocol: plays unmarked registers, marks them, measures honestly.
pub struct HonestHolder<'c> {
    coin: &'c mut Coin,
}

impl<'c> HonestHolder<'c> {
    pub fn new(coin: &'c mut Coin) -> Self {
        HonestHolder { coin }
    }
}

impl Responder for HonestHolder<'_> {
    fn coin_id(&self) -> CoinId {
        self.coin.id
    }

    fn register_count(&self) -> usize {
        self.coin.k()
    }

    fn ready(&self) -> Result<(), HolderError> {
        if self.coin.is_retired() {
            return Err(HolderError::Retired);
        }
        Ok(())
    }

    fn choose_subset(&mut self, challenge: &[usize], played: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>, HolderError> {
        let unmarked: Vec<usize> = challenge.iter().copied().filter(|&i| !self.coin.usage[i]).collect();
        if unmarked.len() < played {
            return Err(HolderError::InsufficientUnmarked { unmarked: unmarked.len(), needed: played });
        }
        let mut chosen: Vec<usize> = index::sample(rng, unmarked.len(), played).into_iter().map(|j| unmarked[j]).collect();
        chosen.sort_unstable();
        for &i in &chosen {
            self.coin.usage[i] = true;
        }
        Ok(chosen)
    }

    fn answer(&mut self, subset: &[usize], queries: &[bool], rng: &mut dyn RngCore) -> Vec<Answer> {
        subset
            .iter()
            .zip(queries)
            .map(|(&i, &m)| {
                let (ans, collapsed) = answer_query(&self.coin.registers[i], Query(m), rng);
                self.coin.registers[i] = collapsed;
                ans
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HolderState {
    Start,
    AwaitChallenge,
    AwaitQueries,
    AwaitVerdict,
    Done,
}

/// Holder side of one Ver run, wrapping a [`Responder`] with framing checks on
/// everything the bank sends.
pub struct HolderSession<'r, R: Responder + ?Sized> {
    responder: &'r mut R,
    state: HolderState,
    subset: Vec<usize>,
}

impl<'r, R: Responder + ?Sized> HolderSession<'r, R> {
    pub fn new(responder: &'r mut R) -> Self {
        HolderSession { responder, state: HolderState::Start, subset: Vec::new() }
    }

    pub fn state(&self) -> HolderState {
        self.state
    }

    /// Step 1.
    pub fn start(&mut self) -> Result<Message, HolderError> {
        if self.state != HolderState::Start {
            return Err(HolderError::OutOfOrder("start"));
        }
        self.responder.ready()?;
        self.state = HolderState::AwaitChallenge;
        Ok(Message::Init { coin_id: self.responder.coin_id() })
    }

    /// Step 3.
    pub fn on_challenge(&mut self, positions: &[usize], rng: &mut dyn RngCore) -> Result<Message, HolderError> {
        if self.state != HolderState::AwaitChallenge {
            return Err(HolderError::OutOfOrder("challenge"));
        }
        let k = self.responder.register_count();
        if positions.is_empty() || !positions.len().is_multiple_of(3) || !is_canonical_set(positions, k) {
            self.state = HolderState::Done;
            return Err(HolderError::Malformed("challenge"));
        }
        let played = 2 * positions.len() / 3;
        match self.responder.choose_subset(positions, played, rng) {
            Ok(subset) => {
                self.subset = subset.clone();
                self.state = HolderState::AwaitQueries;
                Ok(Message::Subset { positions: subset })
            }
            Err(e) => {
                self.state = HolderState::Done;
                Err(e)
            }
        }
    }

    /// Step 5.
    pub fn on_queries(&mut self, bits: &[bool], rng: &mut dyn RngCore) -> Result<Message, HolderError> {
        if self.state != HolderState::AwaitQueries {
            return Err(HolderError::OutOfOrder("queries"));
        }
        if bits.len() != self.subset.len() {
            self.state = HolderState::Done;
            return Err(HolderError::Malformed("queries"));
        }
        let pairs = self.responder.answer(&self.subset, bits, rng);
        self.state = HolderState::AwaitVerdict;
        Ok(Message::Answers { pairs })
    }

    /// The verdict may arrive at any point after `init`.
    pub fn on_verdict(&mut self, valid: bool) -> Result<bool, HolderError> {
        if matches!(self.state, HolderState::Start | HolderState::Done) {
            return Err(HolderError::OutOfOrder("verdict"));
        }
        self.state = HolderState::Done;
        self.responder.observe_verdict(valid);
        Ok(valid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HolderToBank,
    BankToHolder,
}

/// Ordered record of one Ver run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub messages: Vec<(Direction, Message)>,
    pub verdict: Option<bool>,
}

impl Transcript {
    fn push(&mut self, d: Direction, m: Message) {
        if let Message::Verdict { valid } = m {
            self.verdict = Some(valid);
        }
        self.messages.push((d, m));
    }

    fn find<'a, T>(&'a self, dir: Direction, pick: impl Fn(&'a Message) -> Option<T>) -> Option<T> {
        self.messages.iter().filter(|(d, _)| *d == dir).find_map(|(_, m)| pick(m))
    }

    /// `H <line>` / `B <line>` per message.
    pub fn to_text(&self) -> String {
        self.messages
            .iter()
            .map(|(d, m)| {
                let tag = match d {
                    Direction::HolderToBank => 'H',
                    Direction::BankToHolder => 'B',
                };
                format!("{tag} {}\n", m.encode())
            })
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, WireError> {
        let mut t = Transcript::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (d, body) = match line.split_at_checked(2) {
                Some(("H ", body)) => (Direction::HolderToBank, body),
                Some(("B ", body)) => (Direction::BankToHolder, body),
                _ => return Err(WireError::Malformed("transcript line needs H/B prefix".into())),
            };
            t.push(d, Message::decode(body)?);
        }
        Ok(t)
    }
}

/// Recomputes the bank's verdict from a transcript and the coin's record.
pub fn replay_verdict(record: &SecretRecord, params: &VerParams, transcript: &Transcript) -> bool {
    use Direction::*;
    let challenge = transcript.find(BankToHolder, |m| match m {
        Message::Challenge { positions } => Some(positions),
        _ => None,
    });
    let subset = transcript.find(HolderToBank, |m| match m {
        Message::Subset { positions } => Some(positions),
        _ => None,
    });
    let queries = transcript.find(BankToHolder, |m| match m {
        Message::Queries { bits } => Some(bits),
        _ => None,
    });
    let answers = transcript.find(HolderToBank, |m| match m {
        Message::Answers { pairs } => Some(pairs),
        _ => None,
    });
    let (Some(challenge), Some(subset), Some(queries), Some(answers)) = (challenge, subset, queries, answers) else {
        return false;
    };
    subset.len() == params.played()
        && is_canonical_set(subset, params.k())
        && is_subset_sorted(subset, challenge)
        && check_answers(record, subset, queries, answers)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Holder(#[from] HolderError),
    #[error("no attempt found enough unmarked positions ({0} attempts)")]
    RetryCapHit(usize),
    #[error("bank sent {0} out of turn")]
    Unexpected(&'static str),
}

#[derive(Debug, Clone)]
pub struct VerOutcome {
    pub valid: bool,
    pub transcript: Transcript,
    pub attempts: usize,
}

/// Drives complete Ver runs until one reaches a verdict.
///
/// A run abandoned for lack of unmarked positions is retried on a fresh
/// connection, up to `retry_cap` attempts in total.
pub fn run_ver<T, H>(transport: &mut T, holder: &mut H, rng: &mut dyn RngCore, retry_cap: usize) -> Result<VerOutcome, VerError>
where
    T: Transport + ?Sized,
    H: Responder + ?Sized,
{
    use Direction::*;
    for attempt in 1..=retry_cap.max(1) {
        let mut session = HolderSession::new(holder);
        let mut transcript = Transcript::default();
        let mut outgoing = session.start()?;
        loop {
            transcript.push(HolderToBank, outgoing.clone());
            let reply = transport.exchange(&outgoing)?;
            transcript.push(BankToHolder, reply.clone());
            let next = match &reply {
                Message::Verdict { valid } => {
                    let valid = session.on_verdict(*valid)?;
                    return Ok(VerOutcome { valid, transcript, attempts: attempt });
                }
                Message::Challenge { positions } => session.on_challenge(positions, rng),
                Message::Queries { bits } => session.on_queries(bits, rng),
                other => return Err(VerError::Unexpected(other.kind())),
            };
            match next {
                Ok(msg) => outgoing = msg,
                Err(HolderError::InsufficientUnmarked { .. }) => {
                    transport.reset()?;
                    break;
                }
                Err(HolderError::OutOfOrder(kind)) => return Err(VerError::Unexpected(kind)),
                Err(e) => {
                    let _ = transport.reset();
                    return Err(e.into());
                }
            }
        }
    }
    Err(VerError::RetryCapHit(retry_cap.max(1)))
}
