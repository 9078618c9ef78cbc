//! Modulation and coding scheme table.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest MCS index; used to normalize the conditioning plane of the
/// detection network.
pub const MAX_MCS_INDEX: u32 = 15;

/// One MCS entry: bits per symbol and target code rate `gamma = num/den`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: u32,
    pub bits_per_symbol: usize,
    pub rate_num: u32,
    pub rate_den: u32,
    pub label: String,
}

impl McsEntry {
    pub fn new(index: u32, bits_per_symbol: usize, rate_num: u32, rate_den: u32, label: &str) -> Result<Self> {
        let e = McsEntry {
            index,
            bits_per_symbol,
            rate_num,
            rate_den,
            label: label.to_string(),
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.bits_per_symbol, 2 | 4 | 6) {
            return Err(Error::InvalidParameter(format!(
                "MCS {}: bits per symbol must be 2, 4 or 6, got {}",
                self.index, self.bits_per_symbol
            )));
        }
        if self.rate_num == 0 || self.rate_den == 0 || self.rate_num >= self.rate_den {
            return Err(Error::InvalidParameter(format!(
                "MCS {}: code rate {}/{} outside (0, 1)",
                self.index, self.rate_num, self.rate_den
            )));
        }
        if self.index > MAX_MCS_INDEX {
            return Err(Error::InvalidParameter(format!(
                "MCS index {} exceeds {}",
                self.index, MAX_MCS_INDEX
            )));
        }
        Ok(())
    }

    pub fn rate(&self) -> f64 {
        self.rate_num as f64 / self.rate_den as f64
    }

    /// Value written into the MCS conditioning plane.
    pub fn conditioning(&self) -> f64 {
        self.index as f64 / MAX_MCS_INDEX as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl Default for McsTable {
    fn default() -> Self {
        McsTable {
            entries: vec![
                McsEntry::new(3, 2, 449, 1024, "QPSK").unwrap(),
                McsEntry::new(7, 4, 490, 1024, "16QAM").unwrap(),
                McsEntry::new(14, 6, 719, 1024, "64QAM").unwrap(),
            ],
        }
    }
}

impl McsTable {
    pub fn new(entries: Vec<McsEntry>) -> Result<Self> {
        for e in &entries {
            e.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        if !entries.iter().all(|e| seen.insert(e.index)) {
            return Err(Error::InvalidParameter("duplicate MCS index".into()));
        }
        Ok(McsTable { entries })
    }

    /// Adds or replaces an entry.
    pub fn insert(&mut self, entry: McsEntry) -> Result<()> {
        entry.validate()?;
        self.entries.retain(|e| e.index != entry.index);
        self.entries.push(entry);
        self.entries.sort_by_key(|e| e.index);
        Ok(())
    }

    pub fn get(&self, index: u32) -> Result<&McsEntry> {
        self.entries
            .iter()
            .find(|e| e.index == index)
            .ok_or(Error::UnknownMcs(index))
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn max_bits_per_symbol(&self) -> usize {
        self.entries.iter().map(|e| e.bits_per_symbol).max().unwrap_or(2)
    }
}
