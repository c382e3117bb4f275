//! Base58Check encoding for legacy Bitcoin addresses.
//!
//! `encode_check(version, payload)` renders `version ‖ payload ‖ checksum`
//! where the checksum is the first 4 bytes of the double-SHA256 of
//! `version ‖ payload`. Leading zero bytes map to leading '1' characters.

use crate::error::Error;
use crate::model::double_sha256;

const ALPHABET: &[u8; 58] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

fn encode(data: &[u8]) -> String {
    // big-endian base conversion over a little buffer of base-58 digits
    let mut digits: Vec<u8> = Vec::with_capacity(data.len() * 138 / 100 + 1);
    for &byte in data {
        let mut carry = byte as u32;
        for digit in digits.iter_mut() {
            carry += (*digit as u32) << 8;
            *digit = (carry % 58) as u8;
            carry /= 58;
        }
        while carry > 0 {
            digits.push((carry % 58) as u8);
            carry /= 58;
        }
    }
    let leading_zeros = data.iter().take_while(|&&b| b == 0).count();
    let mut out = String::with_capacity(leading_zeros + digits.len());
    for _ in 0..leading_zeros {
        out.push('1');
    }
    for &digit in digits.iter().rev() {
        out.push(ALPHABET[digit as usize] as char);
    }
    out
}

fn decode(s: &str) -> Result<Vec<u8>, Error> {
    let mut bytes: Vec<u8> = Vec::with_capacity(s.len());
    for c in s.chars() {
        let value = ALPHABET
            .iter()
            .position(|&a| a as char == c)
            .ok_or_else(|| Error::Base58(format!("invalid character {c:?}")))? as u32;
        let mut carry = value;
        for b in bytes.iter_mut() {
            carry += (*b as u32) * 58;
            *b = (carry & 0xFF) as u8;
            carry >>= 8;
        }
        while carry > 0 {
            bytes.push((carry & 0xFF) as u8);
            carry >>= 8;
        }
    }
    let leading_ones = s.chars().take_while(|&c| c == '1').count();
    bytes.extend(std::iter::repeat_n(0u8, leading_ones));
    bytes.reverse();
    Ok(bytes)
}

pub fn encode_check(version: u8, payload: &[u8]) -> String {
    let mut data = Vec::with_capacity(payload.len() + 5);
    data.push(version);
    data.extend_from_slice(payload);
    let checksum = double_sha256(&data);
    data.extend_from_slice(&checksum.as_bytes()[..4]);
    encode(&data)
}

pub fn decode_check(s: &str) -> Result<(u8, Vec<u8>), Error> {
    let data = decode(s)?;
    if data.len() < 5 {
        return Err(Error::Base58(format!("too short: {} bytes", data.len())));
    }
    let (body, checksum) = data.split_at(data.len() - 4);
    let expected = double_sha256(body);
    if checksum != &expected.as_bytes()[..4] {
        return Err(Error::Base58("checksum mismatch".to_string()));
    }
    Ok((body[0], body[1..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_payload_address() {
        assert_eq!(encode_check(0x00, &[0u8; 20]), "1111111111111111111114oLvT2");
    }

    #[test]
    fn round_trip() {
        let payload: Vec<u8> = (0u8..20).collect();
        let s = encode_check(0x05, &payload);
        assert_eq!(decode_check(&s).unwrap(), (0x05, payload));
    }

    #[test]
    fn checksum_detects_corruption() {
        let s = encode_check(0x00, &[7u8; 20]);
        let mut corrupted = s.clone().into_bytes();
        let replacement = if corrupted[5] == b'2' { b'3' } else { b'2' };
        corrupted[5] = replacement;
        let corrupted = String::from_utf8(corrupted).unwrap();
        assert!(decode_check(&corrupted).is_err());
    }

    #[test]
    fn rejects_non_alphabet_characters() {
        assert!(decode_check("10O").is_err()); // 'O' and '0' are not base58
        assert!(decode_check("abc l").is_err());
    }
}
