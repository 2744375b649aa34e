//! Text normalization and tokenization shared by hashing, lexical scoring
//! and gazetteer lookup.

/// Lowercases and collapses every whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercase Unicode-alphanumeric word segmentation, no stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but",
    "by", "can", "could", "do", "does", "for", "from", "had", "has", "have", "here", "i", "if",
    "in", "into", "is", "it", "its", "just", "like", "me", "more", "most", "my", "no", "not",
    "of", "on", "or", "our", "so", "some", "than", "that", "the", "their", "them", "then",
    "there", "these", "they", "this", "those", "to", "too", "very", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "will", "with", "would", "you",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Number of tokens that are not stopwords.
pub fn content_word_count(tokens: &[String]) -> usize {
    tokens.iter().filter(|t| !is_stopword(t)).count()
}

/// Returns the index of `phrase` (a token sequence) in `tokens`, if present.
pub fn find_phrase(tokens: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return None;
    }
    tokens.windows(phrase.len()).position(|w| w == phrase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn normalize_collapses_whitespace_and_case() {
        assert_eq!(normalize("  Hello\t  World \n"), "hello world");
        assert_eq!(normalize("X "), normalize("x"));
    }

    #[test]
    fn tokenize_splits_on_punctuation() {
        assert_eq!(tokenize("Left-hand traffic, Camí!"), vec!["left", "hand", "traffic", "camí"]);
        assert!(tokenize("  --  ").is_empty());
    }

    #[test]
    fn phrase_lookup() {
        let toks = tokenize("hmm, not sure what this is");
        assert_eq!(find_phrase(&toks, &tokenize("not sure")), Some(1));
        assert_eq!(find_phrase(&toks, &tokenize("sure not")), None);
        assert_eq!(content_word_count(&toks), 2);
    }
}
