//! Shared text normalization helpers.
//!
//! Two normalizers are used throughout the toolkit:
//!
//! * [`normalize_whitespace`] — collapse whitespace runs to single spaces and
//!   trim the ends. This is the length unit for trace character counts and
//!   for the truncation scores (both T and T-hat are measured on the
//!   whitespace-normalized trace).
//! * [`normalize_text`] — case-fold, replace punctuation with spaces, then
//!   collapse whitespace. Answer scoring builds on this.

/// Collapse every run of whitespace to a single space and trim both ends.
pub fn normalize_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = true; // leading whitespace is dropped
    for ch in s.chars() {
        if ch.is_whitespace() {
            if !in_ws {
                out.push(' ');
                in_ws = true;
            }
        } else {
            out.push(ch);
            in_ws = false;
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Number of chars in the whitespace-normalized form of `s`.
pub fn normalized_char_count(s: &str) -> usize {
    normalize_whitespace(s).chars().count()
}

/// Case-fold, map punctuation (any non-alphanumeric, non-whitespace char) to a
/// space, and collapse whitespace. Articles are kept; see
/// `metrics::normalize_answer` for the full answer normalizer.
pub fn normalize_text(s: &str) -> String {
    let mut lowered = String::with_capacity(s.len());
    for ch in s.chars() {
        if ch.is_alphanumeric() || ch.is_whitespace() {
            for c in ch.to_lowercase() {
                lowered.push(c);
            }
        } else {
            lowered.push(' ');
        }
    }
    normalize_whitespace(&lowered)
}
