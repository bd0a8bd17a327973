use std::collections::HashMap;

use crate::error::{invalid, Error, Result};

/// Ordered set of recognizable characters. The CTC blank is implicit and
/// takes index `len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Charset {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Charset {
    pub fn new(chars: &str) -> Result<Self> {
        let mut index = HashMap::new();
        let mut list = Vec::new();
        for c in chars.chars() {
            if c.is_control() {
                return Err(invalid(format!("control character {c:?} in charset")));
            }
            if index.insert(c, list.len()).is_some() {
                return Err(invalid(format!("duplicate character {c:?} in charset")));
            }
            list.push(c);
        }
        if list.is_empty() {
            return Err(invalid("charset is empty"));
        }
        Ok(Self { chars: list, index })
    }

    /// Digits, upper and lower case letters, space and period (64 symbols).
    pub fn alphanumeric() -> Self {
        Self::new("0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz .").expect("valid")
    }

    /// Sixteen symbols: digits, the letters of "CLASS AT", and space.
    pub fn compact() -> Self {
        Self::new("0123456789ACLST ").expect("valid")
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Index of the CTC blank.
    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(Error::UnknownCharacter(c)))
            .collect()
    }

    /// Maps labels back to characters; out-of-range labels (including the
    /// blank) are skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().filter_map(|&l| self.chars.get(l)).collect()
    }
}
