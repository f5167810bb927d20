/// Splits text into chunks that BPE merges never cross.
pub trait PreTokenizer: Send + Sync {
    fn chunks<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

/// Cuts before every whitespace run that follows non-whitespace, so each
/// run of whitespace leads the chunk after it: `"ab  cd"` → `["ab", "  cd"]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePreTokenizer;

impl PreTokenizer for WhitespacePreTokenizer {
    fn chunks<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut prev_ws = true;
        for (i, c) in text.char_indices() {
            let ws = c.is_whitespace();
            if ws && !prev_ws && i > start {
                out.push(&text[start..i]);
                start = i;
            }
            prev_ws = ws;
        }
        if start < text.len() {
            out.push(&text[start..]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_whitespace_attaches_forward() {
        let p = WhitespacePreTokenizer;
        assert_eq!(p.chunks("ab ab ab"), vec!["ab", " ab", " ab"]);
        assert_eq!(p.chunks("ab  cd"), vec!["ab", "  cd"]);
        assert_eq!(p.chunks("  x"), vec!["  x"]);
        assert_eq!(p.chunks("x \n"), vec!["x", " \n"]);
        assert_eq!(p.chunks("আমি ভাত খাই"), vec!["আমি", " ভাত", " খাই"]);
        assert!(p.chunks("").is_empty());
    }
}
