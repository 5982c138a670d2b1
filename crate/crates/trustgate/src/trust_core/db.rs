//! Per-principal trust database and its versioned `TGDB` snapshot format.
//!
//! The snapshot layout is frozen by golden-file tests:
//!
//! ```text
//! magic            4 bytes, b"TGDB"
//! version          u16 LE (currently 1)
//! principal_count  u32 LE
//! then per principal, in ascending principal-id byte order:
//!   id               u32 LE length + UTF-8 bytes
//!   negatives        u64 LE
//!   total            u64 LE
//!   history_len      u32 LE
//!   per history record:
//!     kind           u8 (0 positive, 1 wrong, 2 malicious)
//!     weight         f64, IEEE-754 bits LE
//!     seq            u64 LE
//!   value            f64, IEEE-754 bits LE
//!   class            u8 (0 trusted, 1 innocent, 2 non-trusted)
//!   malicious_streak u32 LE
//!   removed          u8 (0 or 1)
//! ```
//!
//! Encoding is canonical: principals are emitted in sorted order, so equal
//! databases produce identical snapshots and `load(save(db)) == db` holds
//! bit-exactly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bytesio::{ReadError, Reader, Writer};

use super::{ActionKind, ActionRecord, TrustClass, TrustLedger, TrustParams, TrustState};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"TGDB";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("bad magic bytes; not a TGDB snapshot")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u16),
}

impl From<ReadError> for SnapshotError {
    fn from(e: ReadError) -> Self {
        SnapshotError::Corrupt(e.to_string())
    }
}

/// Ledger plus current state for one principal.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRecord {
    pub ledger: TrustLedger,
    pub state: TrustState,
}

impl TrustRecord {
    pub fn initial(params: &TrustParams) -> Self {
        TrustRecord { ledger: TrustLedger::new(), state: TrustState::initial(params) }
    }
}

/// The knowledge base of a trust agent: one record per principal id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustDb {
    records: BTreeMap<String, TrustRecord>,
}

impl TrustDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&TrustRecord> {
        self.records.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut TrustRecord> {
        self.records.get_mut(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, record: TrustRecord) {
        self.records.insert(id.into(), record);
    }

    /// Fetches the record for `id`, registering a fresh principal at
    /// `initial_trust` on first contact.
    pub fn get_or_register(&mut self, id: &str, params: &TrustParams) -> &mut TrustRecord {
        self.records.entry(id.to_string()).or_insert_with(|| TrustRecord::initial(params))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TrustRecord)> {
        self.records.iter()
    }

    /// Serializes the whole database into a `TGDB` snapshot.
    pub fn save(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_raw(SNAPSHOT_MAGIC);
        w.put_u16(SNAPSHOT_VERSION);
        w.put_u32(self.records.len() as u32);
        for (id, rec) in &self.records {
            w.put_str(id);
            w.put_u64(rec.ledger.negatives);
            w.put_u64(rec.ledger.total);
            w.put_u32(rec.ledger.history.len() as u32);
            for r in &rec.ledger.history {
                w.put_u8(kind_tag(r.kind));
                w.put_f64(r.weight);
                w.put_u64(r.seq);
            }
            w.put_f64(rec.state.value);
            w.put_u8(class_tag(rec.state.class));
            w.put_u32(rec.state.malicious_streak);
            w.put_bool(rec.state.removed);
        }
        w.into_bytes()
    }

    /// Parses a `TGDB` snapshot, validating structure and ledger invariants.
    pub fn load(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = Reader::new(bytes);
        if r.get_raw(4).map_err(|_| SnapshotError::BadMagic)? != SNAPSHOT_MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = r.get_u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::UnsupportedVersion(version));
        }
        let count = r.get_u32()?;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let id = r.get_str()?;
            let negatives = r.get_u64()?;
            let total = r.get_u64()?;
            let history_len = r.get_u32()?;
            let mut history = Vec::with_capacity(history_len.min(4096) as usize);
            for _ in 0..history_len {
                let kind = kind_from_tag(r.get_u8()?, r.pos())?;
                let weight = r.get_f64()?;
                let seq = r.get_u64()?;
                history.push(ActionRecord { kind, weight, seq });
            }
            let ledger = TrustLedger { negatives, total, history };
            if !ledger.invariants_hold() {
                return Err(SnapshotError::Corrupt(format!(
                    "ledger invariants violated for principal `{id}`"
                )));
            }
            let value = r.get_f64()?;
            let class = class_from_tag(r.get_u8()?, r.pos())?;
            let malicious_streak = r.get_u32()?;
            let removed = r.get_bool()?;
            let state = TrustState { value, class, malicious_streak, removed };
            if !state.invariants_hold() {
                return Err(SnapshotError::Corrupt(format!(
                    "state invariants violated for principal `{id}`"
                )));
            }
            if records.insert(id.clone(), TrustRecord { ledger, state }).is_some() {
                return Err(SnapshotError::Corrupt(format!("duplicate principal `{id}`")));
            }
        }
        r.finish()?;
        Ok(TrustDb { records })
    }
}

fn kind_tag(kind: ActionKind) -> u8 {
    match kind {
        ActionKind::Positive => 0,
        ActionKind::Wrong => 1,
        ActionKind::Malicious => 2,
    }
}

fn kind_from_tag(tag: u8, offset: usize) -> Result<ActionKind, SnapshotError> {
    match tag {
        0 => Ok(ActionKind::Positive),
        1 => Ok(ActionKind::Wrong),
        2 => Ok(ActionKind::Malicious),
        _ => Err(SnapshotError::Corrupt(format!("invalid action kind tag {tag} at {offset}"))),
    }
}

fn class_tag(class: TrustClass) -> u8 {
    match class {
        TrustClass::Trusted => 0,
        TrustClass::Innocent => 1,
        TrustClass::NonTrusted => 2,
    }
}

fn class_from_tag(tag: u8, offset: usize) -> Result<TrustClass, SnapshotError> {
    match tag {
        0 => Ok(TrustClass::Trusted),
        1 => Ok(TrustClass::Innocent),
        2 => Ok(TrustClass::NonTrusted),
        _ => Err(SnapshotError::Corrupt(format!("invalid class tag {tag} at {offset}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trust_core::{apply_action, record_action};

    fn sample_db() -> TrustDb {
        let params = TrustParams::default();
        let mut db = TrustDb::new();
        let rec = db.get_or_register("alice", &params);
        let mut state = rec.state.clone();
        for kind in [ActionKind::Positive, ActionKind::Wrong, ActionKind::Positive] {
            state = apply_action(&mut rec.ledger, &state, kind, &params).unwrap();
        }
        rec.state = state;
        db
    }

    #[test]
    fn empty_roundtrip() {
        let db = TrustDb::new();
        assert_eq!(TrustDb::load(&db.save()).unwrap(), db);
    }

    #[test]
    fn populated_roundtrip() {
        let db = sample_db();
        let loaded = TrustDb::load(&db.save()).unwrap();
        assert_eq!(loaded, db);
        assert_eq!(loaded.get("alice").unwrap().ledger.total, 3);
    }

    #[test]
    fn truncated_snapshot_is_corrupt() {
        let bytes = sample_db().save();
        for cut in [0, 3, 7, bytes.len() / 2, bytes.len() - 1] {
            let err = TrustDb::load(&bytes[..cut]);
            assert!(
                matches!(err, Err(SnapshotError::Corrupt(_)) | Err(SnapshotError::BadMagic)),
                "cut at {cut} gave {err:?}"
            );
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample_db().save();
        bytes[0] = b'X';
        assert_eq!(TrustDb::load(&bytes), Err(SnapshotError::BadMagic));
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = TrustDb::new().save();
        bytes[4] = 0xFF;
        assert_eq!(TrustDb::load(&bytes), Err(SnapshotError::UnsupportedVersion(0xFF)));
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = sample_db().save();
        bytes.push(0);
        assert!(matches!(TrustDb::load(&bytes), Err(SnapshotError::Corrupt(_))));
    }

    #[test]
    fn counter_tampering_detected() {
        // flip the negatives counter so it disagrees with the history
        let db = sample_db();
        let mut bytes = db.save();
        // magic(4) + version(2) + count(4) + id len(4) + "alice"(5) → negatives at 19
        bytes[19] = 9;
        assert!(matches!(TrustDb::load(&bytes), Err(SnapshotError::Corrupt(_))));
    }

    #[test]
    fn encoding_is_canonical() {
        let a = sample_db();
        let b = sample_db();
        assert_eq!(a.save(), b.save());
    }

    #[test]
    fn record_action_keeps_invariants() {
        let params = TrustParams::default();
        let mut ledger = TrustLedger::new();
        for kind in [ActionKind::Malicious, ActionKind::Positive, ActionKind::Wrong] {
            record_action(&mut ledger, kind, &params);
            assert!(ledger.invariants_hold());
        }
    }
}
