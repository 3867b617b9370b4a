//! Text normalization shared by the text metrics and dataset statistics.

/// Lowercases, drops punctuation and splits on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Whitespace-delimited token count, used for dataset statistics.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// True when `needle` occurs in `haystack` ignoring ASCII case.
pub fn contains_ignore_case(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_tokens("The cat, sat-on THE mat!"),
            vec!["the", "cat", "sat", "on", "the", "mat"]
        );
        assert!(normalize_tokens(" ,.; ").is_empty());
    }

    #[test]
    fn whitespace_count() {
        assert_eq!(whitespace_tokens("Segment the bear"), 3);
        assert_eq!(whitespace_tokens("  "), 0);
    }
}
