use std::fmt;

use crate::error::{Error, Result};

/// Class index of the blank symbol in the extended label set.
pub const BLANK: u32 = 0;

/// Character printed for the blank when rendering paths.
pub const BLANK_CHAR: char = '-';

/// The label set, mapped onto class indices `1..=len()`; index 0 is the blank.
#[derive(Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    case_insensitive: bool,
}

/// A sequence of class indices over the alphabet, never containing the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSequence(Vec<u32>);

impl Alphabet {
    pub fn new(symbols: &str, case_insensitive: bool) -> Result<Self> {
        let symbols: Vec<char> = if case_insensitive {
            symbols.chars().flat_map(char::to_lowercase).collect()
        } else {
            symbols.chars().collect()
        };
        if symbols.is_empty() {
            return Err(Error::Alphabet("empty alphabet".into()));
        }
        for (i, &ch) in symbols.iter().enumerate() {
            if ch == BLANK_CHAR || ch.is_whitespace() || ch.is_control() {
                return Err(Error::Alphabet(format!("symbol {ch:?} is reserved")));
            }
            if symbols[..i].contains(&ch) {
                return Err(Error::Alphabet(format!("duplicate symbol {ch:?}")));
            }
        }
        Ok(Alphabet {
            symbols,
            case_insensitive,
        })
    }

    pub fn digits() -> Self {
        Self::new("0123456789", false).expect("valid alphabet")
    }

    /// Digits and case-folded Latin letters.
    pub fn alphanumeric() -> Self {
        Self::new("0123456789abcdefghijklmnopqrstuvwxyz", true).expect("valid alphabet")
    }

    /// `digits`, `alnum`, or a literal symbol list (case-sensitive).
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "digits" => Ok(Self::digits()),
            "alnum" => Ok(Self::alphanumeric()),
            other => Self::new(other, false),
        }
    }

    /// Canonical text form, accepted back by [`Alphabet::parse`] together
    /// with the case flag.
    pub fn symbols(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn is_case_insensitive(&self) -> bool {
        self.case_insensitive
    }

    /// |L|, excluding the blank.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// |L′| = |L| + 1.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn class_of(&self, ch: char) -> Result<u32> {
        let ch = if self.case_insensitive {
            ch.to_lowercase().next().unwrap_or(ch)
        } else {
            ch
        };
        self.symbols
            .iter()
            .position(|&s| s == ch)
            .map(|i| i as u32 + 1)
            .ok_or_else(|| Error::Alphabet(format!("symbol {ch:?} not in alphabet")))
    }

    pub fn symbol_of(&self, class: u32) -> Result<char> {
        if class == BLANK {
            return Ok(BLANK_CHAR);
        }
        self.symbols
            .get(class as usize - 1)
            .copied()
            .ok_or_else(|| Error::Alphabet(format!("class {class} outside alphabet")))
    }

    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        text.chars()
            .map(|c| self.class_of(c))
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence)
    }

    pub fn decode(&self, labels: &LabelSequence) -> String {
        labels
            .0
            .iter()
            .map(|&c| self.symbol_of(c).unwrap_or('?'))
            .collect()
    }

    /// Parses a frame path where `-` denotes the blank.
    pub fn parse_path(&self, path: &str) -> Result<Vec<u32>> {
        path.chars()
            .map(|c| if c == BLANK_CHAR { Ok(BLANK) } else { self.class_of(c) })
            .collect()
    }

    pub fn validate(&self, labels: &LabelSequence) -> Result<()> {
        match labels.0.iter().find(|&&c| c == BLANK || c as usize > self.len()) {
            Some(c) => Err(Error::Alphabet(format!("class {c} outside alphabet of {}", self.len()))),
            None => Ok(()),
        }
    }
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Alphabet({:?}", self.symbols())?;
        if self.case_insensitive {
            write!(f, ", case-insensitive")?;
        }
        write!(f, ")")
    }
}

impl LabelSequence {
    /// Wraps class indices; fails on the blank.
    pub fn new(classes: Vec<u32>) -> Result<Self> {
        if classes.contains(&BLANK) {
            return Err(Error::Alphabet("label sequence contains the blank".into()));
        }
        Ok(LabelSequence(classes))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fewest frames any alignment of this sequence needs: one per label,
    /// plus a separating blank between equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

impl From<LabelSequence> for Vec<u32> {
    fn from(l: LabelSequence) -> Self {
        l.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_is_class_zero_and_extends_the_set() {
        let a = Alphabet::alphanumeric();
        assert_eq!(a.len(), 36);
        assert_eq!(a.num_classes(), 37);
        assert_eq!(a.class_of('0').unwrap(), 1);
        assert_eq!(a.class_of('Z').unwrap(), a.class_of('z').unwrap());
        assert_eq!(a.symbol_of(BLANK).unwrap(), '-');
    }

    #[test]
    fn encode_decode_round_trip() {
        let a = Alphabet::alphanumeric();
        let l = a.encode("Hello42").unwrap();
        assert_eq!(a.decode(&l), "hello42");
        assert!(matches!(a.encode("a b"), Err(Error::Alphabet(_))));
    }

    #[test]
    fn reserved_and_duplicate_symbols_are_rejected() {
        assert!(Alphabet::new("ab-", false).is_err());
        assert!(Alphabet::new("aba", false).is_err());
        assert!(Alphabet::new("aA", true).is_err());
        assert!(Alphabet::new("", false).is_err());
        assert!(LabelSequence::new(vec![1, 0]).is_err());
    }

    #[test]
    fn min_frames_counts_repeat_separators() {
        let a = Alphabet::alphanumeric();
        assert_eq!(a.encode("hello").unwrap().min_frames(), 6);
        assert_eq!(a.encode("").unwrap().min_frames(), 0);
        assert_eq!(a.encode("aaa").unwrap().min_frames(), 5);
    }
}
