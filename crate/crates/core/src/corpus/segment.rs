//! Sentence segmentation and word tokenization.

/// Abbreviations that never end a sentence. Fixed list, compared
/// case-insensitively against the word ending at a period.
const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "st.", "vs.", "etc.", "e.g.", "i.e.",
];

/// Splits text into sentences on sentence-final `.`, `!` or `?` followed by
/// whitespace, guarding a fixed abbreviation list. A trailing fragment
/// without terminal punctuation is kept as a final sentence. Never emits
/// empty strings.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if (c == '.' || c == '!' || c == '?')
            && chars.get(i + 1).is_some_and(|n| n.is_whitespace())
        {
            let guard = c == '.' && ends_with_abbreviation(&chars[start..=i]);
            if !guard {
                let sentence: String = chars[start..=i].iter().collect();
                let trimmed = sentence.trim();
                if !trimmed.is_empty() {
                    sentences.push(trimmed.to_string());
                }
                start = i + 1;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let trimmed = tail.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }
    sentences
}

fn ends_with_abbreviation(span: &[char]) -> bool {
    // The word ending at the final '.' — scan back to the previous whitespace.
    let mut word_start = span.len();
    for (idx, &c) in span.iter().enumerate().rev().skip(1) {
        if c.is_whitespace() {
            word_start = idx + 1;
            break;
        }
        if idx == 0 {
            word_start = 0;
        }
    }
    let word: String = span[word_start..].iter().collect::<String>().to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Lowercased whitespace-and-punctuation tokenization: tokens are maximal
/// runs of alphanumeric characters; everything else is a separator.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
