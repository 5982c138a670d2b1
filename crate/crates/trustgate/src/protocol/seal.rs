//! Keyed integrity seal standing in for the secure channel between agents.
//!
//! The simulator runs in one process, so confidentiality is not modeled; what
//! the protocol needs observable is that a tampered or mis-keyed message is
//! detected and dropped by its receiver. The tag is a keyed digest over the
//! canonical payload bytes.

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("seal does not verify; payload or key was altered")]
pub struct SealViolation;

/// 256-bit channel key shared by the two ends of a link. Keys are provisioned
/// per directed endpoint pair when a scenario is built, standing in for the
/// secure-connection establishment between agents.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct ChannelKey(pub [u8; 32]);

impl ChannelKey {
    /// Deterministic key derivation from a scenario seed and a label, so the
    /// same scenario always provisions the same keys.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"trustgate-channel-key");
        h.update(seed.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        ChannelKey(h.finalize().into())
    }
}

impl std::fmt::Debug for ChannelKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ChannelKey(..)")
    }
}

/// Integrity tag attached to every envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SealTag(pub [u8; 32]);

/// Seals a payload under a channel key.
pub fn seal(payload: &[u8], key: &ChannelKey) -> SealTag {
    let mut h = Sha256::new();
    h.update(b"trustgate-seal");
    h.update(key.0);
    h.update((payload.len() as u64).to_le_bytes());
    h.update(payload);
    SealTag(h.finalize().into())
}

/// Verifies a tag; succeeds iff both the payload and the key are unmodified.
pub fn open(payload: &[u8], tag: &SealTag, key: &ChannelKey) -> Result<(), SealViolation> {
    if seal(payload, key) == *tag {
        Ok(())
    } else {
        Err(SealViolation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_same_key() {
        let key = ChannelKey::derive(7, "a->b");
        let tag = seal(b"payload", &key);
        assert!(open(b"payload", &tag, &key).is_ok());
    }

    #[test]
    fn different_key_fails() {
        let k1 = ChannelKey::derive(7, "a->b");
        let k2 = ChannelKey::derive(7, "a->c");
        let tag = seal(b"payload", &k1);
        assert_eq!(open(b"payload", &tag, &k2), Err(SealViolation));
    }

    #[test]
    fn mutated_payload_fails() {
        let key = ChannelKey::derive(7, "a->b");
        let tag = seal(b"payload", &key);
        assert_eq!(open(b"paYload", &tag, &key), Err(SealViolation));
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let key = ChannelKey::derive(3, "x");
        let payload = b"gate this request".to_vec();
        let tag = seal(&payload, &key);
        for byte in 0..payload.len() {
            for bit in 0..8 {
                let mut mutated = payload.clone();
                mutated[byte] ^= 1 << bit;
                assert_eq!(open(&mutated, &tag, &key), Err(SealViolation));
            }
        }
        for byte in 0..32 {
            for bit in 0..8 {
                let mut bad_tag = tag;
                bad_tag.0[byte] ^= 1 << bit;
                assert_eq!(open(&payload, &bad_tag, &key), Err(SealViolation));
            }
        }
    }
}
