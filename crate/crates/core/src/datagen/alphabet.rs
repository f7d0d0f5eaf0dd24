use serde::{Deserialize, Serialize};

use super::font;
use super::DatagenError;

pub const PAD_ID: usize = 0;
pub const START_ID: usize = 1;
pub const END_ID: usize = 2;
/// Id of the first alphabet character.
pub const FIRST_CHAR_ID: usize = 3;

pub const DEFAULT_CHARS: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// Recognizable characters plus the `[P]`, `[S]`, `[E]` specials.
///
/// Ids are contiguous: `[P]=0`, `[S]=1`, `[E]=2`, then characters in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Alphabet {
    pub fn new(chars: &str) -> Result<Self, DatagenError> {
        let chars: Vec<char> = chars.chars().collect();
        if chars.is_empty() {
            return Err(DatagenError::Spec("alphabet is empty".into()));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(DatagenError::Spec(format!("duplicate character {c:?}")));
            }
            if !font::has_glyph(*c) {
                return Err(DatagenError::Spec(format!("no glyph for character {c:?}")));
            }
        }
        Ok(Self { chars })
    }

    /// The first `n` characters of the default alphabet.
    pub fn default_prefix(n: usize) -> Result<Self, DatagenError> {
        Self::new(&DEFAULT_CHARS.chars().take(n).collect::<String>())
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn vocab_size(&self) -> usize {
        self.chars.len() + FIRST_CHAR_ID
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + FIRST_CHAR_ID)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(FIRST_CHAR_ID).and_then(|i| self.chars.get(i).copied())
    }

    /// `[S] chars… [E] [P]…`, padded to exactly `max_len` ids.
    pub fn encode(&self, label: &str, max_len: usize) -> Result<LabelSequence, DatagenError> {
        let n = label.chars().count();
        if n == 0 || n + 2 > max_len {
            return Err(DatagenError::Spec(format!(
                "label {label:?} has {n} chars; must be 1..={}",
                max_len.saturating_sub(2)
            )));
        }
        let mut ids = Vec::with_capacity(max_len);
        ids.push(START_ID);
        for c in label.chars() {
            ids.push(
                self.id_of(c)
                    .ok_or_else(|| DatagenError::Spec(format!("{c:?} not in alphabet")))?,
            );
        }
        ids.push(END_ID);
        ids.resize(max_len, PAD_ID);
        Ok(LabelSequence(ids))
    }

    /// Reads characters until the first `[E]`, skipping `[S]`/`[P]`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != END_ID)
            .filter_map(|&id| self.char_of(id))
            .collect()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::new(DEFAULT_CHARS).expect("default alphabet is valid")
    }
}

impl TryFrom<String> for Alphabet {
    type Error = DatagenError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(&s)
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.chars.into_iter().collect()
    }
}

/// Fixed-length token ids for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSequence(pub Vec<usize>);

impl LabelSequence {
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Next-token targets: the sequence shifted left by one, `[P]`-filled.
    pub fn shifted_targets(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.0[1..].to_vec();
        t.push(PAD_ID);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first_and_ids_are_contiguous() {
        let a = Alphabet::default();
        assert_eq!(a.vocab_size(), 39);
        assert_eq!(a.id_of('a'), Some(3));
        assert_eq!(a.id_of('9'), Some(38));
        assert_eq!(a.char_of(PAD_ID), None);
    }

    #[test]
    fn tokenization_contract() {
        let a = Alphabet::default();
        let seq = a.encode("cat", 10).unwrap();
        let (c, at, t) = (a.id_of('c').unwrap(), a.id_of('a').unwrap(), a.id_of('t').unwrap());
        assert_eq!(seq.ids(), &[START_ID, c, at, t, END_ID, 0, 0, 0, 0, 0]);
        assert_eq!(a.decode(seq.ids()), "cat");
        assert_eq!(seq.shifted_targets(), vec![c, at, t, END_ID, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_bad_labels_and_alphabets() {
        let a = Alphabet::default();
        assert!(a.encode("", 10).is_err());
        assert!(a.encode("abcdefghi", 10).is_err());
        assert!(a.encode("abcdefgh", 10).is_ok());
        assert!(a.encode("aB", 10).is_err());
        assert!(Alphabet::new("abca").is_err());
        assert!(Alphabet::new("ab-").is_err());
        assert!(Alphabet::new("aA").is_ok());
    }

    #[test]
    fn decode_stops_at_first_end() {
        let a = Alphabet::default();
        assert_eq!(a.decode(&[END_ID, 3, 4]), "");
        assert_eq!(a.decode(&[3, PAD_ID, 4, END_ID, 5]), "ab");
    }
}
