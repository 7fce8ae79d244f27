use super::{CorpusError, Document, Token};

pub const DEFAULT_MAX_SEQ_LEN: usize = 512;

/// Joins title and abstract into the document text.
pub const TITLE_SEPARATOR: &str = " ";

/// Anything that is neither alphanumeric nor whitespace.
pub fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Whitespace split, then each chunk is split into maximal runs of punctuation and
/// non-punctuation characters. Tokens past `max_len` are dropped from the end.
pub fn tokenize(
    doc_id: &str,
    title: &str,
    abstract_text: &str,
    max_len: usize,
) -> Result<Document, CorpusError> {
    let text = format!("{title}{TITLE_SEPARATOR}{abstract_text}");
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut current_punct = false;

    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token {
                surface: std::mem::take(current),
                char_start: start,
                char_end: end,
            });
        }
    };

    let mut last = 0;
    for (i, c) in text.chars().enumerate() {
        last = i + 1;
        if c.is_whitespace() {
            flush(&mut current, start, i, &mut tokens);
            continue;
        }
        let punct = is_punctuation(c);
        if !current.is_empty() && punct != current_punct {
            flush(&mut current, start, i, &mut tokens);
        }
        if current.is_empty() {
            start = i;
            current_punct = punct;
        }
        current.push(c);
    }
    flush(&mut current, start, last, &mut tokens);

    if tokens.is_empty() {
        return Err(CorpusError::EmptyDocument(doc_id.to_string()));
    }
    let truncated = tokens.len() > max_len;
    tokens.truncate(max_len);
    Ok(Document {
        doc_id: doc_id.to_string(),
        title: title.to_string(),
        abstract_text: abstract_text.to_string(),
        tokens,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(doc: &Document) -> Vec<&str> {
        doc.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    #[test]
    fn splits_trailing_punctuation() {
        let doc = tokenize("d", "A b.", "", DEFAULT_MAX_SEQ_LEN).unwrap();
        assert_eq!(surfaces(&doc), ["A", "b", "."]);
        let spans: Vec<_> = doc.tokens.iter().map(|t| (t.char_start, t.char_end)).collect();
        assert_eq!(spans, [(0, 1), (2, 3), (3, 4)]);
    }

    #[test]
    fn empty_title_is_allowed() {
        let doc = tokenize("d", "", "x", DEFAULT_MAX_SEQ_LEN).unwrap();
        assert_eq!(surfaces(&doc), ["x"]);
    }

    #[test]
    fn splits_internal_hyphen() {
        let doc = tokenize("d", "Aspirin-induced asthma", "", DEFAULT_MAX_SEQ_LEN).unwrap();
        assert_eq!(surfaces(&doc), ["Aspirin", "-", "induced", "asthma"]);
    }

    #[test]
    fn rejects_empty_input() {
        assert!(matches!(tokenize("d", "", "", 10), Err(CorpusError::EmptyDocument(_))));
        assert!(tokenize("d", "  ", " ", 10).is_err());
    }

    #[test]
    fn truncates_from_the_end() {
        let doc = tokenize("d", "one two", "three four five", 3).unwrap();
        assert_eq!(surfaces(&doc), ["one", "two", "three"]);
        assert!(doc.truncated);
    }

    #[test]
    fn spans_index_the_text() {
        let doc = tokenize("d", "Héllo, wörld", "(x)--y", 100).unwrap();
        let chars: Vec<char> = doc.text().chars().collect();
        let mut prev_end = 0;
        for t in &doc.tokens {
            assert!(t.char_start >= prev_end && t.char_start < t.char_end);
            let s: String = chars[t.char_start..t.char_end].iter().collect();
            assert_eq!(s, t.surface);
            prev_end = t.char_end;
        }
        assert_eq!(surfaces(&doc), ["Héllo", ",", "wörld", "(", "x", ")--", "y"]);
    }
}
