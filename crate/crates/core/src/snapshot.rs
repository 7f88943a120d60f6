//! Binary state snapshots and state digests.
//!
//! Blob layout: one version byte, a little-endian `u32` payload length, then
//! the payload. All integers are little-endian.

use std::hash::Hasher;

use fnv::FnvHasher;
use thiserror::Error;

use crate::engine::{Engine, GameState};
use crate::world::{Location, ObjectId, RoomId};

pub const BLOB_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlobError {
    #[error("blob truncated")]
    Truncated,
    #[error("unsupported blob version {0}")]
    Version(u8),
    #[error("blob has {0} trailing bytes")]
    Trailing(usize),
    #[error("invalid blob: {0}")]
    Invalid(String),
}

/// Opaque encoded [`GameState`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateBlob(pub Vec<u8>);

impl StateBlob {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// 64-bit FNV-1a digest of `bytes`.
pub fn digest(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn encode_payload(s: &GameState, with_steps: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend(s.room.0.to_le_bytes());
    out.extend((s.inventory.len() as u16).to_le_bytes());
    for o in &s.inventory {
        out.extend(o.0.to_le_bytes());
    }
    out.extend((s.locations.len() as u16).to_le_bytes());
    for loc in &s.locations {
        let (tag, id) = match loc {
            Location::Room(r) => (0u8, r.0),
            Location::Inventory => (1, 0),
            Location::Inside(o) => (2, o.0),
        };
        out.push(tag);
        out.extend(id.to_le_bytes());
    }
    out.extend((s.flags.len() as u16).to_le_bytes());
    out.extend(s.flags.iter().map(|f| *f as u8));
    out.extend(s.score.to_le_bytes());
    if with_steps {
        out.extend(s.steps.to_le_bytes());
    }
    out.push(s.alive as u8);
    out.extend((s.fired.len() as u16).to_le_bytes());
    out.extend(s.fired.iter().map(|f| *f as u8));
    out
}

/// Digest of every state field except the step counter.
pub fn state_hash(s: &GameState) -> u64 {
    digest(&encode_payload(s, false))
}

pub fn snapshot(s: &GameState) -> StateBlob {
    let payload = encode_payload(s, true);
    let mut out = Vec::with_capacity(payload.len() + 5);
    out.push(BLOB_VERSION);
    out.extend((payload.len() as u32).to_le_bytes());
    out.extend(payload);
    StateBlob(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BlobError> {
        if self.buf.len() < n {
            return Err(BlobError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, BlobError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, BlobError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, BlobError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, BlobError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bool(&mut self) -> Result<bool, BlobError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(BlobError::Invalid(format!("bad boolean byte {b}"))),
        }
    }

    fn bools(&mut self) -> Result<Vec<bool>, BlobError> {
        let n = self.u16()?;
        (0..n).map(|_| self.bool()).collect()
    }
}

/// Decodes a blob. Structural only; see [`Engine::restore`] for checks
/// against a world.
pub fn restore(blob: &StateBlob) -> Result<GameState, BlobError> {
    let mut r = Reader { buf: &blob.0 };
    let version = r.u8()?;
    if version != BLOB_VERSION {
        return Err(BlobError::Version(version));
    }
    let len = r.u32()? as usize;
    let payload = r.take(len)?;
    if !r.buf.is_empty() {
        return Err(BlobError::Trailing(r.buf.len()));
    }
    let mut r = Reader { buf: payload };
    let room = RoomId(r.u16()?);
    let n = r.u16()?;
    let inventory = (0..n)
        .map(|_| r.u16().map(ObjectId))
        .collect::<Result<Vec<_>, _>>()?;
    let n = r.u16()?;
    let mut locations = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let tag = r.u8()?;
        let id = r.u16()?;
        locations.push(match tag {
            0 => Location::Room(RoomId(id)),
            1 => Location::Inventory,
            2 => Location::Inside(ObjectId(id)),
            t => return Err(BlobError::Invalid(format!("bad location tag {t}"))),
        });
    }
    let flags = r.bools()?;
    let score = r.i64()?;
    let steps = r.u32()?;
    let alive = r.bool()?;
    let fired = r.bools()?;
    if !r.buf.is_empty() {
        return Err(BlobError::Trailing(r.buf.len()));
    }
    Ok(GameState {
        room,
        inventory,
        locations,
        flags,
        score,
        steps,
        alive,
        fired,
    })
}

impl Engine {
    pub fn snapshot(&self, s: &GameState) -> StateBlob {
        snapshot(s)
    }

    /// Decodes a blob and checks that it fits this engine's world.
    pub fn restore(&self, blob: &StateBlob) -> Result<GameState, BlobError> {
        let s = restore(blob)?;
        let w = self.world();
        let bad = |m: &str| Err(BlobError::Invalid(m.to_string()));
        if s.room.0 as usize >= w.rooms.len() {
            return bad("room out of range");
        }
        if s.locations.len() != w.objects.len()
            || s.flags.len() != w.flags.len()
            || s.fired.len() != w.rewards.len()
        {
            return bad("shape does not match world");
        }
        for loc in &s.locations {
            let ok = match loc {
                Location::Room(r) => (r.0 as usize) < w.rooms.len(),
                Location::Inventory => true,
                Location::Inside(o) => (o.0 as usize) < w.objects.len(),
            };
            if !ok {
                return bad("location out of range");
            }
        }
        let carried = s
            .locations
            .iter()
            .filter(|l| **l == Location::Inventory)
            .count();
        if carried != s.inventory.len()
            || s
                .inventory
                .iter()
                .any(|o| s.locations.get(o.0 as usize) != Some(&Location::Inventory))
        {
            return bad("inventory disagrees with object locations");
        }
        Ok(s)
    }
}
