//! Binary ledger file format, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes  "HISOLDG\0"
//! version        u32      1
//! dim            u64
//! steps          u32
//! perturbations  u32
//! root seed      u64
//! round count    u64
//! per round:     round u64, steps * perturbations f64 (row-major by step)
//! client count   u64
//! per client:    id u32, last participation round u64
//! ```

use std::collections::BTreeMap;

use super::{ClientId, Ledger, LedgerError, LedgerHeader, RoundLog};
use crate::rng::Seed;

pub const MAGIC: [u8; 8] = *b"HISOLDG\0";
pub const VERSION: u32 = 1;

pub fn serialize(ledger: &Ledger) -> Vec<u8> {
    let h = ledger.header();
    let per_round = 8 + 8 * (h.steps as usize) * (h.perturbations as usize);
    let mut out = Vec::with_capacity(44 + ledger.logs().len() * per_round + 12 * ledger.last_participation().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&h.dim.to_le_bytes());
    out.extend_from_slice(&h.steps.to_le_bytes());
    out.extend_from_slice(&h.perturbations.to_le_bytes());
    out.extend_from_slice(&h.root_seed.0.to_le_bytes());
    out.extend_from_slice(&(ledger.logs().len() as u64).to_le_bytes());
    for log in ledger.logs() {
        out.extend_from_slice(&log.round().to_le_bytes());
        for v in log.scalars() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out.extend_from_slice(&(ledger.last_participation().len() as u64).to_le_bytes());
    for (&client, &round) in ledger.last_participation() {
        out.extend_from_slice(&client.to_le_bytes());
        out.extend_from_slice(&round.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, LedgerError> {
        Err(LedgerError::Parse {
            offset: self.offset,
            reason: reason.into(),
        })
    }

    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], LedgerError> {
        match self.bytes.get(self.offset..self.offset + N) {
            Some(s) => {
                self.offset += N;
                Ok(s.try_into().expect("slice length"))
            }
            None => self.fail(format!("truncated while reading {what}")),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, LedgerError> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64, LedgerError> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }
}

/// Parses a complete ledger. Nothing is returned unless the whole stream is valid.
pub fn deserialize(bytes: &[u8]) -> Result<Ledger, LedgerError> {
    let mut rd = Reader { bytes, offset: 0 };
    if rd.take::<8>("magic")? != MAGIC {
        rd.offset = 0;
        return rd.fail("bad magic");
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        rd.offset -= 4;
        return rd.fail(format!("unsupported version {version}"));
    }
    let dim = rd.u64("dimension")?;
    let steps = rd.u32("steps")?;
    let perturbations = rd.u32("perturbations")?;
    let root_seed = Seed(rd.u64("root seed")?);
    if steps == 0 || perturbations == 0 {
        return rd.fail("steps and perturbations must be positive");
    }
    let header = LedgerHeader {
        dim,
        steps,
        perturbations,
        root_seed,
    };
    let rounds = rd.u64("round count")?;
    let cells = steps as usize * perturbations as usize;
    let remaining = (bytes.len() - rd.offset) as u64;
    if rounds.saturating_mul(8 + 8 * cells as u64) > remaining {
        return rd.fail(format!("round count {rounds} exceeds remaining {remaining} bytes"));
    }
    let mut logs = Vec::with_capacity(rounds as usize);
    for expected in 0..rounds {
        let start = rd.offset;
        let round = rd.u64("round index")?;
        if round != expected {
            rd.offset = start;
            return rd.fail(format!("round {round} where {expected} was expected"));
        }
        let mut scalars = Vec::with_capacity(cells);
        for _ in 0..cells {
            let v = f64::from_bits(rd.u64("scalar")?);
            if !v.is_finite() {
                rd.offset -= 8;
                return rd.fail("non-finite scalar");
            }
            scalars.push(v);
        }
        logs.push(RoundLog::new(round, steps as usize, perturbations as usize, scalars)?);
    }
    let clients = rd.u64("client count")?;
    let mut last_participation: BTreeMap<ClientId, u64> = BTreeMap::new();
    for _ in 0..clients {
        let start = rd.offset;
        let client = rd.u32("client id")?;
        let round = rd.u64("participation round")?;
        if round >= rounds {
            rd.offset = start;
            return rd.fail(format!("client {client} participated in unrecorded round {round}"));
        }
        if last_participation.insert(client, round).is_some() {
            rd.offset = start;
            return rd.fail(format!("duplicate client {client}"));
        }
    }
    if rd.offset != bytes.len() {
        return rd.fail(format!("{} trailing bytes", bytes.len() - rd.offset));
    }
    Ok(Ledger::from_parts(header, logs, last_participation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(steps: u32, perturbations: u32) -> LedgerHeader {
        LedgerHeader {
            dim: 77,
            steps,
            perturbations,
            root_seed: Seed(0xDEAD_BEEF_0123_4567),
        }
    }

    fn sample_ledger(rounds: u64) -> Ledger {
        let mut l = Ledger::new(header(3, 2));
        for r in 0..rounds {
            let scalars = (0..6).map(|i| (r as f64 + 1.0).ln() * (i as f64 - 2.5) * 1e-3).collect();
            l.record_round(RoundLog::new(r, 3, 2, scalars).unwrap(), &[(r % 4) as u32, 9])
                .unwrap();
        }
        l
    }

    #[test]
    fn empty_ledger_round_trips() {
        let l = Ledger::new(header(1, 1));
        assert_eq!(deserialize(&serialize(&l)).unwrap(), l);
    }

    #[test]
    fn ten_rounds_round_trip_bit_exactly() {
        let l = sample_ledger(10);
        let bytes = serialize(&l);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, l);
        for (a, b) in back.logs().iter().zip(l.logs()) {
            let bits = |log: &RoundLog| log.scalars().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(serialize(&back), bytes);
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = serialize(&sample_ledger(4));
        for cut in [0, 5, 8, 20, 43, 60, bytes.len() - 1] {
            match deserialize(&bytes[..cut]) {
                Err(LedgerError::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_fields_report_offsets() {
        let mut bytes = serialize(&sample_ledger(2));
        bytes[0] = b'X';
        assert!(matches!(deserialize(&bytes), Err(LedgerError::Parse { offset: 0, .. })));

        let mut bytes = serialize(&sample_ledger(2));
        // second round index lives after the 44-byte header and first 56-byte record
        bytes[44 + 56] = 5;
        assert!(matches!(deserialize(&bytes), Err(LedgerError::Parse { offset: 100, .. })));

        let mut bytes = serialize(&sample_ledger(2));
        bytes.push(0);
        assert!(matches!(deserialize(&bytes), Err(LedgerError::Parse { .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_ledgers_round_trip(
            steps in 1u32..4,
            perturbations in 1u32..4,
            rounds in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 16), 0..12),
            clients in prop::collection::vec(0u32..20, 0..6),
        ) {
            let cells = (steps * perturbations) as usize;
            let mut l = Ledger::new(header(steps, perturbations));
            for (r, values) in rounds.iter().enumerate() {
                let log = RoundLog::new(r as u64, steps as usize, perturbations as usize, values[..cells].to_vec()).unwrap();
                l.record_round(log, &clients).unwrap();
            }
            prop_assert_eq!(deserialize(&serialize(&l)).unwrap(), l);
        }
    }
}
