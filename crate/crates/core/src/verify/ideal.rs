//! Simulated ideal functionality: a trusted evaluator that receives both
//! parties' inputs and reveals only the final match bit.
//!
//! The client's query points reach the evaluator sealed with a ChaCha20
//! keystream keyed by a secret the client shares with the evaluator; the
//! session id selects the stream. The owner process hosts the evaluator but
//! only ever handles the sealed bytes.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{SecureBackend, SecureBit, SecureCounter, SecureSession, VerifyError};
use crate::quantize::{point_within, QPoint, QSegment};

pub const DEFAULT_SEAL_KEY: [u8; 32] = *b"ftm-simulated-ideal-default-key!";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    /// Bytes a real protocol would exchange per secure point-segment test.
    pub bytes_per_comparison: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            bytes_per_comparison: 16,
        }
    }
}

fn keystream(key: &[u8; 32], session: u64, len: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::from_seed(*key);
    rng.set_stream(session);
    let mut ks = vec![0u8; len];
    rng.fill_bytes(&mut ks);
    ks
}

pub fn seal(key: &[u8; 32], session: u64, points: &[QPoint]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(points.len() * QPoint::ENCODED_LEN);
    for p in points {
        p.encode(&mut buf);
    }
    let ks = keystream(key, session, buf.len());
    for (b, k) in buf.iter_mut().zip(ks) {
        *b ^= k;
    }
    buf
}

pub fn unseal(key: &[u8; 32], session: u64, sealed: &[u8]) -> Result<Vec<QPoint>, VerifyError> {
    if sealed.len() % QPoint::ENCODED_LEN != 0 {
        return Err(VerifyError::Payload("sealed input is not a whole number of points"));
    }
    let plain: Vec<u8> = sealed
        .iter()
        .zip(keystream(key, session, sealed.len()))
        .map(|(b, k)| b ^ k)
        .collect();
    Ok(plain
        .chunks_exact(QPoint::ENCODED_LEN)
        .map(|c| QPoint::decode(c).expect("chunk is a full point"))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SimulatedIdeal {
    pub key: [u8; 32],
    pub cost: CostModel,
}

impl Default for SimulatedIdeal {
    fn default() -> Self {
        Self {
            key: DEFAULT_SEAL_KEY,
            cost: CostModel::default(),
        }
    }
}

impl SecureBackend for SimulatedIdeal {
    fn name(&self) -> &'static str {
        "simulated-ideal"
    }

    fn seal_query(&self, session: u64, query: &[QPoint]) -> Vec<u8> {
        seal(&self.key, session, query)
    }

    fn open(&self, session: u64, sealed: &[u8]) -> Result<Box<dyn SecureSession>, VerifyError> {
        Ok(Box::new(IdealSession {
            query: unseal(&self.key, session, sealed)?,
            bits: Vec::new(),
            counters: Vec::new(),
            comparisons: 0,
            cost: self.cost,
        }))
    }
}

struct IdealSession {
    query: Vec<QPoint>,
    bits: Vec<bool>,
    counters: Vec<u64>,
    comparisons: u64,
    cost: CostModel,
}

impl IdealSession {
    fn bit(&self, b: SecureBit) -> Result<bool, VerifyError> {
        self.bits.get(b.0 as usize).copied().ok_or(VerifyError::BadHandle)
    }

    fn counter(&self, c: SecureCounter) -> Result<u64, VerifyError> {
        self.counters.get(c.0 as usize).copied().ok_or(VerifyError::BadHandle)
    }

    fn new_bit(&mut self, v: bool) -> SecureBit {
        self.bits.push(v);
        SecureBit(self.bits.len() as u32 - 1)
    }

    fn new_counter(&mut self, v: u64) -> SecureCounter {
        self.counters.push(v);
        SecureCounter(self.counters.len() as u32 - 1)
    }
}

impl SecureSession for IdealSession {
    fn query_len(&self) -> usize {
        self.query.len()
    }

    fn false_bit(&mut self) -> SecureBit {
        self.new_bit(false)
    }

    fn zero_counter(&mut self) -> SecureCounter {
        self.new_counter(0)
    }

    fn threshold_test(
        &mut self,
        query_index: usize,
        segment: &QSegment,
        tau_eff: i64,
        acc: SecureBit,
    ) -> Result<SecureBit, VerifyError> {
        let q = *self.query.get(query_index).ok_or(VerifyError::BadHandle)?;
        let prev = self.bit(acc)?;
        // evaluated unconditionally so the work is independent of the inputs
        let hit = point_within(&q, segment, tau_eff);
        self.comparisons += 1;
        Ok(self.new_bit(prev | hit))
    }

    fn increment(&mut self, counter: SecureCounter, bit: SecureBit) -> Result<SecureCounter, VerifyError> {
        let v = self.counter(counter)? + self.bit(bit)? as u64;
        Ok(self.new_counter(v))
    }

    fn count_equals(&mut self, counter: SecureCounter, len: usize) -> Result<bool, VerifyError> {
        Ok(self.counter(counter)? == len as u64)
    }

    fn comparisons(&self) -> u64 {
        self.comparisons
    }

    fn cost_bytes(&self) -> usize {
        (self.comparisons as usize).saturating_mul(self.cost.bytes_per_comparison as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_round_trips_and_hides_plaintext() {
        let pts = vec![QPoint { ts: 4000, x: 3000, y: 3000 }, QPoint { ts: 6000, x: 4000, y: 2000 }];
        let sealed = seal(&DEFAULT_SEAL_KEY, 5, &pts);
        assert_eq!(sealed.len(), 48);
        let mut plain = Vec::new();
        pts.iter().for_each(|p| p.encode(&mut plain));
        assert_ne!(sealed, plain);
        assert_eq!(unseal(&DEFAULT_SEAL_KEY, 5, &sealed).unwrap(), pts);
        // a different session uses a different stream
        assert_ne!(seal(&DEFAULT_SEAL_KEY, 6, &pts), sealed);
        assert!(unseal(&DEFAULT_SEAL_KEY, 5, &sealed[..47]).is_err());
    }

    #[test]
    fn stale_handles_are_rejected() {
        let backend = SimulatedIdeal::default();
        let mut s = backend.open(0, &backend.seal_query(0, &[QPoint { ts: 0, x: 0, y: 0 }])).unwrap();
        assert!(s.count_equals(SecureCounter(3), 1).is_err());
        let seg = QSegment {
            o: QPoint { ts: 0, x: 0, y: 0 },
            d: QPoint { ts: 0, x: 0, y: 0 },
        };
        assert!(s.threshold_test(1, &seg, 10, SecureBit(0)).is_err());
    }
}
