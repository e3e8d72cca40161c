use std::collections::HashSet;
use std::sync::OnceLock;

/// Lower-cased tokens split on any non-alphanumeric character. Digits are kept
/// so response codes stay searchable.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| ENGLISH_STOPWORDS.iter().copied().collect())
}

/// Tokenizer configuration carried by an index so queries are analysed the
/// same way as documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Analyzer {
    pub remove_stopwords: bool,
}

impl Analyzer {
    pub fn analyze(&self, text: &str) -> Vec<String> {
        let mut tokens = tokenize(text);
        if self.remove_stopwords {
            let stop = stopwords();
            tokens.retain(|t| !stop.contains(t.as_str()));
        }
        tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(
            tokenize("What is his current job?"),
            ["what", "is", "his", "current", "job"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("1, yes | 2, no"), ["1", "yes", "2", "no"]);
        assert_eq!(tokenize("don't know"), ["don", "t", "know"]);
        assert_eq!(tokenize("ring(s) ONLY"), ["ring", "s", "only"]);
    }

    #[test]
    fn stopword_removal_is_opt_in() {
        let text = "Is there a gas cooker in the house? 1, yes | 2, no";
        assert_eq!(Analyzer::default().analyze(text), tokenize(text));
        let filtered = Analyzer {
            remove_stopwords: true,
        }
        .analyze(text);
        assert_eq!(filtered, ["gas", "cooker", "house", "1", "yes", "2"]);
    }
}
