//! Session payload layouts. All integers are little-endian.
//!
//! ```text
//! Open    (owner -> client): session u64 | role u8 | tau_eff i64 | owner_len u32 | n_query u32
//! Input   (client -> owner): session u64 | n u32 | n x 24 sealed bytes
//! Outcome (owner -> client): session u64 | matched u8 | comparisons u64 | filler_len u32 | filler
//! ```

use super::{Role, VerifyError};
use crate::quantize::QPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOpen {
    pub session: u64,
    pub role: Role,
    pub tau_eff: i64,
    pub owner_len: u32,
    pub n_query: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionInput {
    pub session: u64,
    pub sealed: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOutcome {
    pub session: u64,
    pub matched: bool,
    pub comparisons: u64,
    pub filler: Vec<u8>,
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], VerifyError> {
        if self.0.len() < n {
            return Err(VerifyError::Payload("truncated session payload"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, VerifyError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, VerifyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, VerifyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn finish(self) -> Result<(), VerifyError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(VerifyError::Payload("trailing bytes in session payload"))
        }
    }
}

impl SessionOpen {
    pub const LEN: usize = 8 + 1 + 8 + 4 + 4;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.session.to_le_bytes());
        out.push(self.role as u8);
        out.extend_from_slice(&self.tau_eff.to_le_bytes());
        out.extend_from_slice(&self.owner_len.to_le_bytes());
        out.extend_from_slice(&self.n_query.to_le_bytes());
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, VerifyError> {
        let mut r = Reader(b);
        let session = r.u64()?;
        let role = Role::from_u8(r.u8()?).ok_or(VerifyError::Payload("unknown session role"))?;
        let tau_eff = r.u64()? as i64;
        let owner_len = r.u32()?;
        let n_query = r.u32()?;
        r.finish()?;
        Ok(Self {
            session,
            role,
            tau_eff,
            owner_len,
            n_query,
        })
    }
}

impl SessionInput {
    pub fn encode(&self) -> Vec<u8> {
        let n = self.sealed.len() / QPoint::ENCODED_LEN;
        let mut out = Vec::with_capacity(12 + self.sealed.len());
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&self.sealed);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, VerifyError> {
        let mut r = Reader(b);
        let session = r.u64()?;
        let n = r.u32()? as usize;
        let len = n
            .checked_mul(QPoint::ENCODED_LEN)
            .ok_or(VerifyError::Payload("query length overflow"))?;
        let sealed = r.take(len)?.to_vec();
        r.finish()?;
        Ok(Self { session, sealed })
    }

    pub fn n_points(&self) -> usize {
        self.sealed.len() / QPoint::ENCODED_LEN
    }
}

impl SessionOutcome {
    pub const HEADER_LEN: usize = 8 + 1 + 8 + 4;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::HEADER_LEN + self.filler.len());
        out.extend_from_slice(&self.session.to_le_bytes());
        out.push(self.matched as u8);
        out.extend_from_slice(&self.comparisons.to_le_bytes());
        out.extend_from_slice(&(self.filler.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.filler);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, VerifyError> {
        let mut r = Reader(b);
        let session = r.u64()?;
        let matched = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(VerifyError::Payload("match bit out of range")),
        };
        let comparisons = r.u64()?;
        let n = r.u32()? as usize;
        let filler = r.take(n)?.to_vec();
        r.finish()?;
        Ok(Self {
            session,
            matched,
            comparisons,
            filler,
        })
    }
}
