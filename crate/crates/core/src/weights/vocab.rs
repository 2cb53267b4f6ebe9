//! Token-id → display-string decoding for GPT-2's byte-level vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// GPT-2's reversible byte ↔ printable-char table (`Ġ` stands for a space).
fn byte_decoder() -> HashMap<char, u8> {
    let mut bytes: Vec<u32> = (u32::from(b'!')..=u32::from(b'~'))
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars = bytes.clone();
    let mut extra = 0;
    for b in 0..256u32 {
        if !bytes.contains(&b) {
            bytes.push(b);
            chars.push(256 + extra);
            extra += 1;
        }
    }
    bytes
        .into_iter()
        .zip(chars)
        .map(|(b, c)| (char::from_u32(c).expect("valid char"), b as u8))
        .collect()
}

/// Decoded vocabulary; ids are dense `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    display: Vec<String>,
}

impl Vocab {
    /// Build from raw byte-level token strings.
    pub fn from_token_map(map: &HashMap<String, u32>) -> Result<Self> {
        let ordered: BTreeMap<u32, &String> = map.iter().map(|(k, v)| (*v, k)).collect();
        for (expect, id) in ordered.keys().enumerate() {
            if *id as usize != expect {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary ids are not contiguous: missing id {expect}"
                )));
            }
        }
        let dec = byte_decoder();
        let display = ordered
            .values()
            .map(|tok| {
                let mut bytes = Vec::with_capacity(tok.len());
                for ch in tok.chars() {
                    match dec.get(&ch) {
                        Some(&b) => bytes.push(b),
                        None => bytes.extend_from_slice(ch.to_string().as_bytes()),
                    }
                }
                String::from_utf8_lossy(&bytes).into_owned()
            })
            .collect();
        Ok(Self { display })
    }

    pub fn len(&self) -> usize {
        self.display.len()
    }

    pub fn is_empty(&self) -> bool {
        self.display.is_empty()
    }

    pub fn decode(&self, id: u32) -> Result<&str> {
        self.display
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::UnknownToken(id))
    }

    /// First id whose display string equals `text`.
    pub fn find(&self, text: &str) -> Option<u32> {
        self.display.iter().position(|t| t == text).map(|i| i as u32)
    }
}

/// Read a `token → id` JSON vocabulary (GPT-2 `vocab.json` / `encoder.json`).
pub fn load_vocab_decode(path: impl AsRef<Path>) -> Result<Vocab> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::VocabMissing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: HashMap<String, u32> = serde_json::from_str(&text)?;
    Vocab::from_token_map(&map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_table_is_a_bijection() {
        let dec = byte_decoder();
        assert_eq!(dec.len(), 256);
        assert_eq!(dec[&'Ġ'], b' ');
        assert_eq!(dec[&'!'], b'!');
    }

    #[test]
    fn decodes_visible_space_and_rejects_unknown() {
        let map = HashMap::from([
            ("!".to_string(), 0),
            ("Ġsaid".to_string(), 1),
            ("Ċ".to_string(), 2),
        ]);
        let v = Vocab::from_token_map(&map).unwrap();
        assert_eq!(v.decode(0).unwrap(), "!");
        assert_eq!(v.decode(1).unwrap(), " said");
        assert_eq!(v.decode(2).unwrap(), "\n");
        assert_eq!(v.find(" said"), Some(1));
        assert!(matches!(v.decode(3), Err(Error::UnknownToken(3))));
    }

    #[test]
    fn missing_file_is_reported() {
        assert!(matches!(
            load_vocab_decode("/nonexistent/vocab.json"),
            Err(Error::VocabMissing(_))
        ));
    }

    #[test]
    fn gaps_are_rejected() {
        let map = HashMap::from([("a".to_string(), 0), ("b".to_string(), 2)]);
        assert!(Vocab::from_token_map(&map).is_err());
    }
}
