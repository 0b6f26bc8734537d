//! Fixed-length bit strings (indexed 1-based like qubits), used for the
//! selector strings k, i, j, i′, j′ and measured outcome registers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A bit string `b₁b₂…b_len`, stored little-endian: bit r lives at value
/// bit r-1. Displayed with b₁ leftmost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bits {
    len: usize,
    value: u64,
}

impl Bits {
    pub fn zero(len: usize) -> Self {
        assert!(len <= 64);
        Self { len, value: 0 }
    }

    pub fn from_value(value: u64, len: usize) -> Self {
        assert!(len <= 64);
        assert!(len == 64 || value < (1u64 << len), "value exceeds bit length");
        Self { len, value }
    }

    /// The single-bit-set string e_r.
    pub fn unit(r: usize, len: usize) -> Self {
        assert!(r >= 1 && r <= len);
        Self::from_value(1 << (r - 1), len)
    }

    pub fn from_bools(bools: &[bool]) -> Self {
        let mut value = 0u64;
        for (i, &b) in bools.iter().enumerate() {
            if b {
                value |= 1 << i;
            }
        }
        Self {
            len: bools.len(),
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    /// Bit r for r in 1..=len.
    pub fn get(&self, r: usize) -> bool {
        debug_assert!(r >= 1 && r <= self.len);
        self.value >> (r - 1) & 1 == 1
    }

    pub fn with_bit(&self, r: usize, v: bool) -> Self {
        debug_assert!(r >= 1 && r <= self.len);
        let mask = 1u64 << (r - 1);
        Self {
            len: self.len,
            value: if v { self.value | mask } else { self.value & !mask },
        }
    }

    pub fn popcount(&self) -> u32 {
        self.value.count_ones()
    }

    /// Parity of the AND: `⊕_r a_r·b_r`.
    pub fn parity_and(&self, other: &Bits) -> bool {
        debug_assert_eq!(self.len, other.len);
        (self.value & other.value).count_ones() % 2 == 1
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        debug_assert_eq!(self.len, other.len);
        Bits {
            len: self.len,
            value: self.value ^ other.value,
        }
    }

    /// All 2^len strings in counting order.
    pub fn all(len: usize) -> impl Iterator<Item = Bits> {
        assert!(len < 63, "enumeration over 2^{len} strings is not sensible");
        (0..(1u64 << len)).map(move |v| Bits::from_value(v, len))
    }

    /// Concatenation: `self` supplies the low (leading) bits.
    pub fn concat(&self, tail: &Bits) -> Bits {
        assert!(self.len + tail.len <= 64);
        Bits {
            len: self.len + tail.len,
            value: self.value | (tail.value << self.len),
        }
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 1..=self.len {
            write!(f, "{}", self.get(r) as u8)?;
        }
        Ok(())
    }
}

impl FromStr for Bits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() > 64 {
            return Err(Error::parse("bit string longer than 64"));
        }
        let mut value = 0u64;
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => value |= 1 << i,
                _ => return Err(Error::parse(format!("bad bit character {ch:?}"))),
            }
        }
        Ok(Bits {
            len: s.len(),
            value,
        })
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_puts_first_bit_leftmost() {
        let b = Bits::from_value(0b01, 2); // b₁=1, b₂=0
        assert_eq!(b.to_string(), "10");
        assert_eq!("10".parse::<Bits>().unwrap(), b);
    }

    #[test]
    fn parity_and_counts_common_ones() {
        let a = Bits::from_value(0b1011, 4);
        let b = Bits::from_value(0b1110, 4);
        // Common ones at positions 2 and 4 → even parity.
        assert!(!a.parity_and(&b));
        let c = Bits::from_value(0b0010, 4);
        assert!(a.parity_and(&c));
    }

    #[test]
    fn concat_orders_low_then_high() {
        let a = Bits::from_value(0b01, 2);
        let b = Bits::from_value(0b1, 1);
        let c = a.concat(&b);
        assert_eq!(c.to_string(), "101");
        assert_eq!(c.value(), 0b101);
    }
}
