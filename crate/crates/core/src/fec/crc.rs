//! CRC-16/CCITT (polynomial 0x1021, initial value 0xFFFF, MSB first).

use super::Bit;
use crate::{Error, Result};

pub const CRC_LEN: usize = 16;
const POLY: u16 = 0x1021;

pub fn crc16(bits: &[Bit]) -> u16 {
    let mut reg: u16 = 0xFFFF;
    for &b in bits {
        let top = ((reg >> 15) as u8) ^ (b & 1);
        reg <<= 1;
        if top == 1 {
            reg ^= POLY;
        }
    }
    reg
}

/// Returns `payload || crc`.
pub fn crc16_attach(payload: &[Bit]) -> Result<Vec<Bit>> {
    if payload.is_empty() {
        return Err(Error::InvalidParameter("CRC over an empty payload".into()));
    }
    let crc = crc16(payload);
    let mut out = payload.to_vec();
    out.extend((0..CRC_LEN).rev().map(|i| ((crc >> i) & 1) as Bit));
    Ok(out)
}

/// Checks a block produced by [`crc16_attach`].
pub fn crc16_check(block: &[Bit]) -> Result<bool> {
    if block.len() <= CRC_LEN {
        return Err(Error::InvalidParameter(format!(
            "block of {} bits is too short to carry a CRC",
            block.len()
        )));
    }
    let (payload, tail) = block.split_at(block.len() - CRC_LEN);
    let crc = crc16(payload);
    Ok(tail
        .iter()
        .enumerate()
        .all(|(i, &b)| b == ((crc >> (CRC_LEN - 1 - i)) & 1) as Bit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_to_bits(bytes: &[u8]) -> Vec<Bit> {
        bytes
            .iter()
            .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1))
            .collect()
    }

    #[test]
    fn standard_check_value() {
        // CRC-16/CCITT-FALSE check value for "123456789".
        assert_eq!(crc16(&bytes_to_bits(b"123456789")), 0x29B1);
    }

    #[test]
    fn attach_then_check() {
        let payload: Vec<Bit> = (0..101).map(|i| ((i * 7 + 3) % 5 % 2) as Bit).collect();
        let block = crc16_attach(&payload).unwrap();
        assert_eq!(block.len(), payload.len() + CRC_LEN);
        assert!(crc16_check(&block).unwrap());
    }

    #[test]
    fn any_single_flip_detected() {
        let payload: Vec<Bit> = (0..64).map(|i| (i % 3 == 0) as Bit).collect();
        let block = crc16_attach(&payload).unwrap();
        for i in 0..block.len() {
            let mut bad = block.clone();
            bad[i] ^= 1;
            assert!(!crc16_check(&bad).unwrap(), "flip at {i} undetected");
        }
    }

    #[test]
    fn empty_payload_rejected() {
        assert!(crc16_attach(&[]).is_err());
        assert!(crc16_check(&[0; 16]).is_err());
    }
}
