//! Token-level spam heuristic over URLs, hashtags and emoji.
//!
//! Text is split on whitespace. Each token is classified at most once, in
//! the order URL, hashtag, emoji, and contributes that class's weight. The
//! score is the summed weight divided by the token count.

use regex::Regex;
use std::sync::LazyLock;

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z][A-Za-z0-9+.\-]*://").unwrap());
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^#\w+").unwrap());
static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[\x{1F000}-\x{1FAFF}\x{2600}-\x{27BF}\x{2B00}-\x{2BFF}\x{1F1E6}-\x{1F1FF}\x{FE0F}]").unwrap()
});

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibberishConfig {
    pub url_weight: f64,
    pub hashtag_weight: f64,
    pub emoji_weight: f64,
    /// Text scoring strictly above this is discarded.
    pub threshold: f64,
}

impl Default for GibberishConfig {
    fn default() -> Self {
        Self {
            url_weight: 1.0,
            hashtag_weight: 1.0,
            emoji_weight: 1.0,
            threshold: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Url,
    Hashtag,
    Emoji,
}

pub fn classify_token(tok: &str) -> Option<TokenClass> {
    if URL.is_match(tok) {
        Some(TokenClass::Url)
    } else if HASHTAG.is_match(tok) {
        Some(TokenClass::Hashtag)
    } else if EMOJI.is_match(tok) {
        Some(TokenClass::Emoji)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibberishScore {
    pub score: f64,
    pub tokens: usize,
    pub urls: usize,
    pub hashtags: usize,
    pub emoji: usize,
    pub discard: bool,
}

pub fn gibberish_score(text: &str, cfg: &GibberishConfig) -> GibberishScore {
    let (mut tokens, mut urls, mut hashtags, mut emoji) = (0, 0, 0, 0);
    for tok in text.split_whitespace() {
        tokens += 1;
        match classify_token(tok) {
            Some(TokenClass::Url) => urls += 1,
            Some(TokenClass::Hashtag) => hashtags += 1,
            Some(TokenClass::Emoji) => emoji += 1,
            None => {}
        }
    }
    let score = if tokens == 0 {
        0.0
    } else {
        let w = urls as f64 * cfg.url_weight + hashtags as f64 * cfg.hashtag_weight + emoji as f64 * cfg.emoji_weight;
        (w / tokens as f64).clamp(0.0, 1.0)
    };
    GibberishScore {
        score,
        tokens,
        urls,
        hashtags,
        emoji,
        discard: score > cfg.threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        assert_eq!(classify_token("https://x.org/a"), Some(TokenClass::Url));
        assert_eq!(classify_token("(ftp://host)"), Some(TokenClass::Url));
        assert_eq!(classify_token("#sale"), Some(TokenClass::Hashtag));
        assert_eq!(classify_token("#"), None);
        assert_eq!(classify_token("🔥🔥"), Some(TokenClass::Emoji));
        assert_eq!(classify_token("café"), None);
        assert_eq!(classify_token("C#"), None);
    }

    #[test]
    fn plain_prose_scores_zero() {
        let s = gibberish_score("The committee met on Tuesday to review the budget.", &GibberishConfig::default());
        assert_eq!(s.score, 0.0);
        assert!(!s.discard);
    }

    #[test]
    fn empty_text_scores_zero() {
        assert_eq!(gibberish_score("   ", &GibberishConfig::default()).score, 0.0);
    }

    #[test]
    fn weights_apply_per_class() {
        let cfg = GibberishConfig {
            url_weight: 0.5,
            hashtag_weight: 0.25,
            emoji_weight: 0.0,
            threshold: 0.3,
        };
        let s = gibberish_score("a http://b #c 😀", &cfg);
        assert_eq!(s.score, (0.5 + 0.25) / 4.0);
    }
}
