//! Coins, secret records and the bank's static database.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::hmp::{hmp_state, Coloring};
use crate::qsim::{StateVec, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoneyError {
    #[error("invalid parameters k={k}, t={t}: {reason}")]
    InvalidParams { k: usize, t: usize, reason: &'static str },
    #[error("coin id space exhausted")]
    IdsExhausted,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn parse_err(line: usize, reason: impl Into<String>) -> MoneyError {
    MoneyError::Parse { line, reason: reason.into() }
}

/// Register count `k` and challenge size `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerParams {
    k: usize,
    t: usize,
}

impl VerParams {
    /// Requires `3 | t`, `t ≤ k` and `8t ≤ 3k` (so a coin survives at least one run).
    pub fn new(k: usize, t: usize) -> Result<Self, MoneyError> {
        let bad = |reason| Err(MoneyError::InvalidParams { k, t, reason });
        if t == 0 || !t.is_multiple_of(3) {
            return bad("t must be a positive multiple of 3");
        }
        if t > k {
            return bad("t must not exceed k");
        }
        if 8 * t > 3 * k {
            return bad("8t must not exceed 3k");
        }
        Ok(VerParams { k, t })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Registers played per run, `2t/3`.
    pub fn played(&self) -> usize {
        2 * self.t / 3
    }

    /// Marks at which a coin must go back to the bank, `⌈k/4⌉`.
    pub fn retirement_marks(&self) -> usize {
        self.k.div_ceil(4)
    }
}

/// Number of Ver runs a fresh coin supports, `⌊3k / 8t⌋`.
pub fn lifespan(params: &VerParams) -> usize {
    3 * params.k / (8 * params.t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoinId(pub u64);

impl fmt::Display for CoinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The bank's hidden description of one coin: `k` colorings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretRecord(Vec<Coloring>);

impl SecretRecord {
    pub fn new(colorings: Vec<Coloring>) -> Self {
        SecretRecord(colorings)
    }

    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        SecretRecord((0..k).map(|_| Coloring::random(rng)).collect())
    }

    pub fn colorings(&self) -> &[Coloring] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `4k` characters, `x₁` of the first register leftmost.
    pub fn to_bits(&self) -> String {
        self.0.iter().map(|c| c.to_string()).collect()
    }

    pub fn from_bits(bits: &str) -> Option<Self> {
        if bits.is_empty() || !bits.len().is_multiple_of(4) || !bits.is_ascii() {
            return None;
        }
        let cs = (0..bits.len() / 4).map(|i| bits[4 * i..4 * i + 4].parse().ok()).collect::<Option<Vec<_>>>()?;
        Some(SecretRecord(cs))
    }
}

/// A circulating coin: `k` registers plus the holder-maintained usage register.
#[derive(Debug, Clone, PartialEq)]
pub struct Coin {
    pub id: CoinId,
    pub registers: Vec<StateVec>,
    pub usage: Vec<bool>,
}

impl Coin {
    pub fn fresh(id: CoinId, record: &SecretRecord) -> Self {
        Coin {
            id,
            registers: record.colorings().iter().map(|&x| hmp_state(x)).collect(),
            usage: vec![false; record.len()],
        }
    }

    pub fn k(&self) -> usize {
        self.registers.len()
    }

    pub fn marked(&self) -> usize {
        self.usage.iter().filter(|&&u| u).count()
    }

    /// At least `⌈k/4⌉` positions marked.
    pub fn is_retired(&self) -> bool {
        self.marked() >= self.k().div_ceil(4)
    }

    /// Text form: `coin <id>`, `usage <bits>`, then one `reg` line of eight
    /// floats `re im` per amplitude at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("coin {}\nusage ", self.id);
        out.extend(self.usage.iter().map(|&u| if u { '1' } else { '0' }));
        out.push('\n');
        for r in &self.registers {
            out.push_str("reg");
            for a in r.amplitudes() {
                let _ = write!(out, " {:.16e} {:.16e}", a.re, a.im);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MoneyError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, first) = lines.next().ok_or_else(|| parse_err(1, "empty coin file"))?;
        let id = first
            .strip_prefix("coin ")
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| parse_err(n, "expected `coin <id>`"))?;
        let (n, second) = lines.next().ok_or_else(|| parse_err(2, "missing usage line"))?;
        let usage = second
            .strip_prefix("usage ")
            .ok_or_else(|| parse_err(n, "expected `usage <bits>`"))?
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(parse_err(n, "usage must be 0/1")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut registers = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let rest = line.strip_prefix("reg ").ok_or_else(|| parse_err(n, "expected `reg`"))?;
            let vals = rest
                .split(' ')
                .map(f64::from_str)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(n, e.to_string()))?;
            if vals.len() != 8 {
                return Err(parse_err(n, "register needs 8 floats"));
            }
            let amps = std::array::from_fn(|i| C64::new(vals[2 * i], vals[2 * i + 1]));
            registers.push(StateVec::new(amps).map_err(|e| parse_err(n, e.to_string()))?);
        }
        if registers.len() != usage.len() || registers.is_empty() {
            return Err(parse_err(2, "usage length must equal register count"));
        }
        Ok(Coin { id: CoinId(id), registers, usage })
    }
}

/// The bank's lookup table. Verification only ever reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct BankDb {
    params: VerParams,
    records: BTreeMap<CoinId, SecretRecord>,
    next_id: u64,
}

impl BankDb {
    pub fn new(params: VerParams) -> Self {
        BankDb { params, records: BTreeMap::new(), next_id: 1 }
    }

    pub fn params(&self) -> &VerParams {
        &self.params
    }

    pub fn record(&self, id: CoinId) -> Option<&SecretRecord> {
        self.records.get(&id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = CoinId> + '_ {
        self.records.keys().copied()
    }

    /// Inserts a record under an explicit id; later mints continue above it.
    pub fn insert(&mut self, id: CoinId, record: SecretRecord) -> Result<(), MoneyError> {
        if record.len() != self.params.k {
            return Err(parse_err(0, format!("record has {} registers, expected {}", record.len(), self.params.k)));
        }
        self.next_id = self.next_id.max(id.0.saturating_add(1));
        self.records.insert(id, record);
        Ok(())
    }

    /// Draws `k` uniform colorings, stores them under a fresh id and hands out
    /// the matching fresh coin.
    pub fn mint<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Coin, MoneyError> {
        if self.next_id == u64::MAX {
            return Err(MoneyError::IdsExhausted);
        }
        let id = CoinId(self.next_id);
        self.next_id += 1;
        let record = SecretRecord::random(self.params.k, rng);
        let coin = Coin::fresh(id, &record);
        self.records.insert(id, record);
        Ok(coin)
    }

    /// One line per coin: `<id> <4k bits>`, ascending id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, rec) in &self.records {
            let _ = writeln!(out, "{} {}", id, rec.to_bits());
        }
        out
    }

    pub fn from_text(text: &str, params: VerParams) -> Result<Self, MoneyError> {
        let mut db = BankDb::new(params);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, bits) = line.split_once(' ').ok_or_else(|| parse_err(i + 1, "expected `<id> <bits>`"))?;
            let id = id.parse::<u64>().map_err(|e| parse_err(i + 1, e.to_string()))?;
            let rec = SecretRecord::from_bits(bits).ok_or_else(|| parse_err(i + 1, "record must be 0/1 in groups of 4"))?;
            if rec.len() != params.k {
                return Err(parse_err(i + 1, format!("record has {} registers, expected {}", rec.len(), params.k)));
            }
            if db.records.contains_key(&CoinId(id)) {
                return Err(parse_err(i + 1, format!("duplicate coin id {id}")));
            }
            db.insert(CoinId(id), rec)?;
        }
        Ok(db)
    }

    /// Like [`BankDb::from_text`] but reads `k` off the first record.
    pub fn from_text_infer_k(text: &str, t: usize) -> Result<Self, MoneyError> {
        let first = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| parse_err(1, "empty database"))?;
        let bits = first.split_once(' ').map(|(_, b)| b).unwrap_or("");
        let k = bits.len() / 4;
        BankDb::from_text(text, VerParams::new(k, t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::HermitianOp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn params_validation() {
        assert!(VerParams::new(24, 6).is_ok());
        assert!(VerParams::new(23, 6).is_ok());
        assert!(VerParams::new(12, 6).is_err());
        assert!(VerParams::new(24, 4).is_err());
        assert!(VerParams::new(24, 0).is_err());
        assert!(VerParams::new(2, 3).is_err());
        assert!(VerParams::new(8, 3).is_ok());
    }

    #[test]
    fn lifespan_examples() {
        assert_eq!(lifespan(&VerParams::new(24, 6).unwrap()), 1);
        assert_eq!(lifespan(&VerParams::new(160, 6).unwrap()), 10);
        assert_eq!(lifespan(&VerParams::new(8, 3).unwrap()), 1);
    }

    #[test]
    fn mint_shapes_and_fresh_validity() {
        let mut db = BankDb::new(VerParams::new(8, 3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coin = db.mint(&mut rng).unwrap();
        assert_eq!(coin.usage, vec![false; 8]);
        let rec = db.record(coin.id).unwrap();
        assert_eq!(rec.to_bits().len(), 32);
        for (x, reg) in rec.colorings().iter().zip(&coin.registers) {
            let p = HermitianOp::projector(&hmp_state(*x));
            assert!((p.expectation(reg) - 1.0).abs() < 1e-12);
        }
        assert!(!coin.is_retired());
    }

    #[test]
    fn single_register_coin() {
        let rec = SecretRecord::new(vec![Coloring::from_index(5)]);
        let coin = Coin::fresh(CoinId(3), &rec);
        assert_eq!(coin.registers, vec![hmp_state(Coloring::from_index(5))]);
        assert_eq!(coin.usage, vec![false]);
    }

    #[test]
    fn ids_are_unique() {
        let mut db = BankDb::new(VerParams::new(24, 6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids: HashSet<_> = (0..10_000).map(|_| db.mint(&mut rng).unwrap().id).collect();
        assert_eq!(ids.len(), 10_000);
        assert_eq!(db.len(), 10_000);
    }

    #[test]
    fn retirement_threshold() {
        let rec = SecretRecord::new(vec![Coloring::from_index(0); 24]);
        let mut coin = Coin::fresh(CoinId(1), &rec);
        for i in 0..5 {
            coin.usage[i] = true;
        }
        assert!(!coin.is_retired());
        coin.usage[5] = true;
        assert!(coin.is_retired());
    }

    #[test]
    fn db_text_roundtrip() {
        let params = VerParams::new(8, 3).unwrap();
        let mut db = BankDb::new(params);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            db.mint(&mut rng).unwrap();
        }
        let text = db.to_text();
        assert!(text.lines().all(|l| l.split(' ').nth(1).unwrap().len() == 32));
        let back = BankDb::from_text(&text, params).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(BankDb::from_text_infer_k(&text, 3).unwrap().to_text(), text);
        let mut back = back;
        let next = back.mint(&mut rng).unwrap();
        assert_eq!(next.id, CoinId(6));
    }

    #[test]
    fn db_parse_errors() {
        let p = VerParams::new(8, 3).unwrap();
        assert!(BankDb::from_text("1 0101", p).is_err());
        assert!(BankDb::from_text("x 01010101010101010101010101010101", p).is_err());
        assert!(BankDb::from_text("1 0101010101010101010101010101010a", p).is_err());
        let dup = "1 01010101010101010101010101010101\n1 01010101010101010101010101010101\n";
        assert!(BankDb::from_text(dup, p).is_err());
    }

    #[test]
    fn coin_text_roundtrip_is_exact() {
        let mut db = BankDb::new(VerParams::new(8, 3).unwrap());
        let mut coin = db.mint(&mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        coin.usage[2] = true;
        coin.registers[1] = StateVec::random(&mut ChaCha8Rng::seed_from_u64(1));
        let text = coin.to_text();
        let back = Coin::from_text(&text).unwrap();
        assert_eq!(back, coin);
        assert_eq!(back.to_text(), text);
        assert!(text.starts_with("coin 1\nusage 00100000\nreg "));
    }

    #[test]
    fn coin_parse_errors() {
        assert!(Coin::from_text("").is_err());
        assert!(Coin::from_text("coin 1\nusage 0\n").is_err());
        assert!(Coin::from_text("coin 1\nusage 0\nreg 1 0 0 0 0 0 0\n").is_err());
        assert!(Coin::from_text("coin 1\nusage 0\nreg 1 0 1 0 0 0 0 0\n").is_err());
        assert!(Coin::from_text("coin 1\nusage 0\nreg 1 0 0 0 0 0 0 0\n").is_ok());
    }
}
