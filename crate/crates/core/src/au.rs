//! Action-unit channels and binarized label records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AU_COUNT: usize = 12;

/// FACS action-unit numbers in channel order.
pub const AU_IDS: [u8; AU_COUNT] = [1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26];

/// Intensities strictly above this value count as an active AU.
pub const POSITIVE_ABOVE: u8 = 1;

pub const MAX_INTENSITY: u8 = 5;

/// Channel position of an AU number, if it is one of the twelve annotated units.
pub fn channel_of(au: u8) -> Option<usize> {
    AU_IDS.iter().position(|&a| a == au)
}

/// Twelve AU intensities plus their binarized form.
///
/// The binary vector is always derived from the intensities and can't be
/// set independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u8; AU_COUNT]", into = "[u8; AU_COUNT]")]
pub struct AuRecord {
    intensities: [u8; AU_COUNT],
    binary: [bool; AU_COUNT],
}

impl AuRecord {
    pub fn new(intensities: [u8; AU_COUNT]) -> Result<Self> {
        if let Some(bad) = intensities.iter().find(|&&v| v > MAX_INTENSITY) {
            return Err(Error::InvalidConfig(format!(
                "AU intensity {bad} outside 0..={MAX_INTENSITY}"
            )));
        }
        let mut binary = [false; AU_COUNT];
        for (b, &v) in binary.iter_mut().zip(&intensities) {
            *b = v > POSITIVE_ABOVE;
        }
        Ok(Self {
            intensities,
            binary,
        })
    }

    pub fn zeros() -> Self {
        Self {
            intensities: [0; AU_COUNT],
            binary: [false; AU_COUNT],
        }
    }

    pub fn intensities(&self) -> &[u8; AU_COUNT] {
        &self.intensities
    }

    pub fn binary(&self) -> &[bool; AU_COUNT] {
        &self.binary
    }

    pub fn is_active(&self, channel: usize) -> bool {
        self.binary[channel]
    }
}

impl TryFrom<[u8; AU_COUNT]> for AuRecord {
    type Error = Error;

    fn try_from(value: [u8; AU_COUNT]) -> Result<Self> {
        AuRecord::new(value)
    }
}

impl From<AuRecord> for [u8; AU_COUNT] {
    fn from(r: AuRecord) -> Self {
        r.intensities
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarizes_above_one() {
        let r = AuRecord::new([0, 1, 2, 3, 4, 5, 0, 0, 0, 0, 1, 2]).unwrap();
        assert_eq!(
            r.binary(),
            &[false, false, true, true, true, true, false, false, false, false, false, true]
        );
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(AuRecord::new([6; AU_COUNT]).is_err());
    }

    #[test]
    fn serde_validates() {
        let ok: AuRecord = serde_json::from_str("[0,0,0,0,0,0,3,0,0,0,0,0]").unwrap();
        assert!(ok.is_active(6));
        assert!(serde_json::from_str::<AuRecord>("[0,0,0,0,0,0,9,0,0,0,0,0]").is_err());
    }

    proptest! {
        #[test]
        fn binarization_is_monotone(base in proptest::array::uniform12(0u8..=5), ch in 0usize..12, bump in 0u8..=5) {
            let lo = AuRecord::new(base).unwrap();
            let mut raised = base;
            raised[ch] = (raised[ch] + bump).min(MAX_INTENSITY);
            let hi = AuRecord::new(raised).unwrap();
            for i in 0..AU_COUNT {
                prop_assert!(!lo.is_active(i) || hi.is_active(i));
                prop_assert_eq!(lo.is_active(i), lo.intensities()[i] > 1);
            }
        }
    }
}
