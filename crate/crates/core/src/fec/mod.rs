//! Forward error correction: LDPC coding and CRC-16 transport-block checks.

pub mod crc;
pub mod ldpc;

pub use crc::{crc16, crc16_attach, crc16_check, CRC_LEN};
pub use ldpc::{DecodeOutput, LdpcCode, ParityCheckMatrix};

/// Hard bits are stored one per byte, values 0 or 1.
pub type Bit = u8;
