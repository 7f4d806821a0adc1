//! Measured qubit strings.
//!
//! A basis index stores qubit `j` in bit `j`. The text form lists qubit 0
//! first, so `"10"` is index 1 on two qubits. Ordering is lexicographic on
//! the text form.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bitstring {
    index: u64,
    len: u32,
}

impl Bitstring {
    pub fn new(index: u64, len: usize) -> Self {
        assert!(len <= 64, "bitstrings longer than 64 qubits are not supported");
        assert!(
            len == 64 || index >> len == 0,
            "index {index} does not fit in {len} qubits"
        );
        Self {
            index,
            len: len as u32,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let index = bits
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &b)| acc | ((b as u64) << j));
        Self::new(index, bits.len())
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(0, len)
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, qubit: usize) -> bool {
        debug_assert!(qubit < self.len());
        (self.index >> qubit) & 1 == 1
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len()).map(|j| self.bit(j)).collect()
    }

    /// Key whose numeric order matches the lexicographic order of the text form.
    pub fn lex_key(&self) -> u64 {
        lex_key(self.index, self.len())
    }
}

pub(crate) fn lex_key(index: u64, len: usize) -> u64 {
    if len == 0 {
        0
    } else {
        index.reverse_bits() >> (64 - len)
    }
}

impl Ord for Bitstring {
    fn cmp(&self, other: &Self) -> Ordering {
        // Equal lengths compare as numbers with qubit 0 most significant; for
        // unequal lengths fall back to the text comparison.
        if self.len == other.len {
            self.lex_key().cmp(&other.lex_key())
        } else {
            self.to_string().cmp(&other.to_string())
        }
    }
}

impl PartialOrd for Bitstring {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.len() {
            f.write_str(if self.bit(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid bitstring {0:?}")]
pub struct ParseBitstringError(String);

impl FromStr for Bitstring {
    type Err = ParseBitstringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() > 64 {
            return Err(ParseBitstringError(s.to_string()));
        }
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(ParseBitstringError(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_bits(&bits))
    }
}

impl Serialize for Bitstring {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bitstring {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_lists_qubit_zero_first() {
        let b = Bitstring::new(0b01, 2);
        assert_eq!(b.to_string(), "10");
        assert_eq!("10".parse::<Bitstring>().unwrap(), b);
        assert_eq!(Bitstring::new(0b110, 3).to_string(), "011");
    }

    #[test]
    fn ordering_is_lexicographic() {
        let a: Bitstring = "01".parse().unwrap();
        let b: Bitstring = "10".parse().unwrap();
        assert!(a < b);
        assert!(a.index() > b.index());
        let mut all: Vec<Bitstring> = (0..8).map(|i| Bitstring::new(i, 3)).collect();
        all.sort();
        let text: Vec<String> = all.iter().map(|b| b.to_string()).collect();
        let mut sorted = text.clone();
        sorted.sort();
        assert_eq!(text, sorted);
    }

    #[test]
    fn rejects_garbage() {
        assert!("0120".parse::<Bitstring>().is_err());
    }
}
