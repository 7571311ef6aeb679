use crate::{Error, Result};

/// Character vocabulary: id 0 is the word separator, id 1 the unknown
/// symbol, then lowercase letters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<char>,
}

pub const SPACE: u32 = 0;
pub const UNK: u32 = 1;
const UNK_CHAR: char = '#';

impl Vocab {
    pub fn letters(n: usize) -> Result<Self> {
        if n == 0 || n > 26 {
            return Err(Error::Spec(format!("letter count must be in 1..=26, got {n}")));
        }
        let mut symbols = vec![' ', UNK_CHAR];
        symbols.extend((0..n as u8).map(|i| (b'a' + i) as char));
        Ok(Vocab { symbols })
    }

    /// Inverse of [`Vocab::size`].
    pub fn with_size(size: usize) -> Result<Self> {
        Self::letters(size.saturating_sub(2))
    }

    /// Total token count including separator and unknown.
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn num_letters(&self) -> usize {
        self.symbols.len() - 2
    }

    /// Letter ids (excluding separator and unknown).
    pub fn letter_ids(&self) -> std::ops::Range<u32> {
        2..self.symbols.len() as u32
    }

    pub fn symbol(&self, id: u32) -> Option<char> {
        self.symbols.get(id as usize).copied()
    }

    pub fn id(&self, c: char) -> u32 {
        let c = c.to_ascii_lowercase();
        if c.is_whitespace() {
            return SPACE;
        }
        self.symbols
            .iter()
            .skip(2)
            .position(|&s| s == c)
            .map_or(UNK, |p| p as u32 + 2)
    }

    /// Map text to ids; whitespace runs collapse to one separator and
    /// unknown characters map to the unknown id.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out = Vec::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                out.push(SPACE);
            }
            out.extend(w.chars().map(|c| self.id(c)));
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.symbol(i).unwrap_or(UNK_CHAR)).collect()
    }
}
