use serde::{Deserialize, Serialize};

/// Dense token identifier in `0..V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Ten digits, three markers (`+`, `=`, end-of-sequence) and an optional
/// block of connector tokens that carry no answer content.
///
/// Layout is fixed: digits `0..=9` occupy ids `0..10`, then `PLUS`, `EQUALS`,
/// `EOS`, then the connectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    glyphs: Vec<String>,
}

const CONNECTOR_GLYPHS: [&str; 16] = [
    "so", "but", "wait", "then", "thus", "hmm", "now", "next", "also", "hence", "check", "well",
    "okay", "right", "first", "recall",
];

impl Vocabulary {
    pub const DIGITS: u32 = 10;
    pub const PLUS: TokenId = TokenId(10);
    pub const EQUALS: TokenId = TokenId(11);
    pub const EOS: TokenId = TokenId(12);
    pub const MIN_SIZE: usize = 13;

    /// Digits and markers plus `connectors` connector tokens.
    pub fn with_connectors(connectors: usize) -> Self {
        let mut glyphs: Vec<String> = (0..10).map(|d| d.to_string()).collect();
        glyphs.push("+".into());
        glyphs.push("=".into());
        glyphs.push("<eos>".into());
        for i in 0..connectors {
            let g = match CONNECTOR_GLYPHS.get(i) {
                Some(g) => (*g).to_string(),
                None => format!("c{i}"),
            };
            glyphs.push(g);
        }
        Self { glyphs }
    }

    /// The minimal 13-token vocabulary.
    pub fn minimal() -> Self {
        Self::with_connectors(0)
    }

    pub fn size(&self) -> usize {
        self.glyphs.len()
    }

    pub fn digit(&self, d: u32) -> TokenId {
        assert!(d < Self::DIGITS, "digit out of range: {d}");
        TokenId(d)
    }

    pub fn is_digit(&self, t: TokenId) -> bool {
        t.0 < Self::DIGITS
    }

    pub fn digit_value(&self, t: TokenId) -> Option<u32> {
        self.is_digit(t).then_some(t.0)
    }

    pub fn connectors(&self) -> impl Iterator<Item = TokenId> {
        (Self::MIN_SIZE as u32..self.glyphs.len() as u32).map(TokenId)
    }

    pub fn glyph(&self, t: TokenId) -> &str {
        &self.glyphs[t.index()]
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.glyph(t)).collect::<Vec<_>>().join(" ")
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::with_connectors(8)
    }
}
