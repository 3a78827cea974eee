//! Keys, entries and the tombstone convention.
//!
//! Keys are 64-bit unsigned integers whose most significant bit is reserved
//! as a deletion flag. Setting the flag "masks" a key in place: the slot keeps
//! its position (so a model trained over the array stays valid) while the
//! entry stops being visible. All ordering is done on the flag-cleared value.

use crate::error::{HireError, Result};

/// The tombstone bit.
pub const MASK_BIT: u64 = 1 << 63;

/// Largest key a live entry may carry.
pub const MAX_KEY: u64 = MASK_BIT - 1;

/// A key in the 63-bit domain, possibly carrying the tombstone flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Key(u64);

impl Key {
    /// Wraps a live key, rejecting values that collide with the flag bit.
    pub fn new(raw: u64) -> Result<Self> {
        if raw & MASK_BIT != 0 {
            return Err(HireError::OutOfDomain(raw));
        }
        Ok(Key(raw))
    }

    /// Wraps a raw word as-is (flag bit allowed).
    pub const fn from_raw(raw: u64) -> Self {
        Key(raw)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    /// The key with the flag bit cleared.
    pub const fn value(self) -> u64 {
        self.0 & !MASK_BIT
    }

    pub const fn is_masked(self) -> bool {
        self.0 & MASK_BIT != 0
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.value().cmp(&other.value())
    }
}

/// Sets the tombstone flag. Fails if the key is already masked.
pub fn mask_key(k: Key) -> Result<Key> {
    if k.is_masked() {
        return Err(HireError::AlreadyMasked(k.raw()));
    }
    Ok(Key(k.0 | MASK_BIT))
}

pub fn is_masked(k: Key) -> bool {
    k.is_masked()
}

#[inline(always)]
pub(crate) const fn cleared(raw: u64) -> u64 {
    raw & !MASK_BIT
}

#[inline(always)]
pub(crate) const fn masked(raw: u64) -> bool {
    raw & MASK_BIT != 0
}

/// A key/value pair. Keys stored in entries handed out by the index are
/// always live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Entry {
    pub key: u64,
    pub value: u64,
}

impl Entry {
    pub const fn new(key: u64, value: u64) -> Self {
        Entry { key, value }
    }
}

impl From<(u64, u64)> for Entry {
    fn from((key, value): (u64, u64)) -> Self {
        Entry { key, value }
    }
}

pub(crate) fn check_live(key: u64) -> Result<()> {
    if key & MASK_BIT != 0 {
        Err(HireError::OutOfDomain(key))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mask_sets_flag() {
        assert_eq!(
            mask_key(Key::new(5).unwrap()).unwrap().raw(),
            (1u64 << 63) + 5
        );
        assert_eq!(mask_key(Key::new(0).unwrap()).unwrap().raw(), 1u64 << 63);
    }

    #[test]
    fn double_mask_is_rejected() {
        let once = mask_key(Key::new(5).unwrap()).unwrap();
        assert_eq!(mask_key(once), Err(HireError::AlreadyMasked(once.raw())));
    }

    #[test]
    fn is_masked_examples() {
        assert!(!is_masked(Key::from_raw(5)));
        assert!(is_masked(Key::from_raw((1u64 << 63) + 5)));
        assert!(!is_masked(Key::from_raw((1u64 << 63) - 1)));
    }

    #[test]
    fn new_rejects_flagged_values() {
        assert!(Key::new(MASK_BIT).is_err());
        assert!(Key::new(MAX_KEY).is_ok());
    }

    proptest! {
        #[test]
        fn masking_preserves_order(a in 0..MASK_BIT, b in 0..MASK_BIT) {
            let (ka, kb) = (Key::new(a).unwrap(), Key::new(b).unwrap());
            let (ma, mb) = (mask_key(ka).unwrap(), mask_key(kb).unwrap());
            prop_assert_eq!(ka.cmp(&kb), ma.cmp(&mb));
            prop_assert_eq!(ma.cmp(&kb), ka.cmp(&kb));
        }

        #[test]
        fn masked_is_detected(k in 0..MASK_BIT) {
            prop_assert!(is_masked(mask_key(Key::new(k).unwrap()).unwrap()));
        }
    }
}
