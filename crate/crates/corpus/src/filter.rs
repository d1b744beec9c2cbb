//! Document filtering rules, applied in this order:
//!
//! 1. language: the document must be English according to the language hook
//! 2. interspersed: it must contain at least one image and some text
//! 3. image quality: images under 64×64 or single-coloured are removed
//! 4. gibberish: text segments scoring above the threshold are removed
//! 5. image cap: only the first five surviving images are kept
//! 6. single-image down-sampling: half of one-image documents are dropped
//!
//! A document is discarded as soon as a rule leaves it without images or
//! text. Reasons are recorded only for discarded documents.

use crate::gibberish::{gibberish_score, GibberishConfig};
use crate::raw::RawDocument;
use mmlm_core::image::ImageTensor;
use mmlm_core::stream::{MultimodalDocument, Segment};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    NotEnglish,
    NoInterspersedImages,
    ImageTooSmall,
    ImageSingleColor,
    GibberishText,
    NoImagesLeft,
    NoTextLeft,
    SingleImageDrop,
}

impl Rule {
    pub const ALL: [Rule; 8] = [
        Rule::NotEnglish,
        Rule::NoInterspersedImages,
        Rule::ImageTooSmall,
        Rule::ImageSingleColor,
        Rule::GibberishText,
        Rule::NoImagesLeft,
        Rule::NoTextLeft,
        Rule::SingleImageDrop,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Rule::NotEnglish => "not-english",
            Rule::NoInterspersedImages => "no-interspersed-images",
            Rule::ImageTooSmall => "image-too-small",
            Rule::ImageSingleColor => "image-single-color",
            Rule::GibberishText => "gibberish-text",
            Rule::NoImagesLeft => "no-images-left",
            Rule::NoTextLeft => "no-text-left",
            Rule::SingleImageDrop => "single-image-drop",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Decides whether a document is English. The default trusts the tag.
pub type LanguageHook = fn(&RawDocument) -> bool;

pub fn trust_language_tag(doc: &RawDocument) -> bool {
    doc.lang.as_deref().is_some_and(|l| l.eq_ignore_ascii_case("en") || l.to_ascii_lowercase().starts_with("en-"))
}

#[derive(Clone, Debug)]
pub struct FilterConfig {
    pub min_side: usize,
    /// An image whose every channel has variance below this is single-coloured.
    pub single_color_variance: f64,
    pub max_images: usize,
    pub single_image_drop: f64,
    pub gibberish: GibberishConfig,
    pub language: LanguageHook,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_side: 64,
            single_color_variance: 1e-4,
            max_images: 5,
            single_image_drop: 0.5,
            gibberish: GibberishConfig::default(),
            language: trust_language_tag,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Discard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterDecision {
    pub verdict: Verdict,
    /// Rule ids, nonempty exactly when the document is discarded.
    pub reasons: Vec<Rule>,
    /// Indices into the document's images (0-based among image segments).
    pub kept_images: Vec<usize>,
    /// Indices into the document's segments of text that survived.
    pub kept_text: Vec<usize>,
    /// Every removal made along the way, as (segment index, rule).
    pub removals: Vec<(usize, Rule)>,
}

impl FilterDecision {
    pub fn is_kept(&self) -> bool {
        self.verdict == Verdict::Keep
    }

    /// The kept document, or `None` when discarded.
    pub fn apply(&self, doc: &RawDocument) -> Option<MultimodalDocument> {
        if !self.is_kept() {
            return None;
        }
        let mut img = 0;
        let mut out = Vec::new();
        for (i, s) in doc.segments.iter().enumerate() {
            match s {
                Segment::Text(_) if self.kept_text.contains(&i) => out.push(s.clone()),
                Segment::Image(_) => {
                    if self.kept_images.contains(&img) {
                        out.push(s.clone());
                    }
                    img += 1;
                }
                _ => {}
            }
        }
        MultimodalDocument::new(out).ok()
    }
}

pub fn image_quality(img: &ImageTensor, cfg: &FilterConfig) -> Option<Rule> {
    if img.height() < cfg.min_side || img.width() < cfg.min_side {
        Some(Rule::ImageTooSmall)
    } else if img.max_channel_variance() < cfg.single_color_variance {
        Some(Rule::ImageSingleColor)
    } else {
        None
    }
}

/// The rng for document `index`: a counter-based stream, so decisions do not
/// depend on which other documents were filtered or in what order.
pub fn document_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn has_text(t: &str) -> bool {
    !t.trim().is_empty()
}

pub fn filter_document(doc: &RawDocument, cfg: &FilterConfig, seed: u64, index: u64) -> FilterDecision {
    let mut removals = Vec::new();
    let discard = |mut reasons: Vec<Rule>, removals: Vec<(usize, Rule)>| {
        reasons.dedup();
        FilterDecision {
            verdict: Verdict::Discard,
            reasons,
            kept_images: Vec::new(),
            kept_text: Vec::new(),
            removals,
        }
    };
    if !(cfg.language)(doc) {
        return discard(vec![Rule::NotEnglish], removals);
    }
    let texts: Vec<usize> = doc
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, Segment::Text(t) if has_text(t)))
        .map(|(i, _)| i)
        .collect();
    if texts.is_empty() || doc.image_count() == 0 {
        return discard(vec![Rule::NoInterspersedImages], removals);
    }

    let mut images = Vec::new();
    let mut image_rules = Vec::new();
    let mut k = 0;
    for (i, s) in doc.segments.iter().enumerate() {
        if let Segment::Image(img) = s {
            match image_quality(img, cfg) {
                Some(rule) => {
                    removals.push((i, rule));
                    if !image_rules.contains(&rule) {
                        image_rules.push(rule);
                    }
                }
                None => images.push(k),
            }
            k += 1;
        }
    }
    if images.is_empty() {
        image_rules.push(Rule::NoImagesLeft);
        return discard(image_rules, removals);
    }

    let mut kept_text = Vec::new();
    for &i in &texts {
        let Segment::Text(t) = &doc.segments[i] else { unreachable!() };
        if gibberish_score(t, &cfg.gibberish).discard {
            removals.push((i, Rule::GibberishText));
        } else {
            kept_text.push(i);
        }
    }
    if kept_text.is_empty() {
        return discard(vec![Rule::GibberishText, Rule::NoTextLeft], removals);
    }

    images.truncate(cfg.max_images);
    if images.len() == 1 && document_rng(seed, index).random_bool(cfg.single_image_drop) {
        return discard(vec![Rule::SingleImageDrop], removals);
    }
    FilterDecision {
        verdict: Verdict::Keep,
        reasons: Vec::new(),
        kept_images: images,
        kept_text,
        removals,
    }
}
