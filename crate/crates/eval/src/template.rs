//! Prompt templates and few-shot prompt assembly.
//!
//! A template is literal text with `{name}` holes. Every template except the
//! chain-of-thought first stage ends its task text with an `{answer}` hole:
//! demonstrations fill it with the gold answer, and the query stops just
//! before it (trailing spaces trimmed), leaving the answer to the model.
//!
//! Prompts are a list of segments. Each example contributes its image (if
//! any) followed by its filled text; demonstrations end with a newline.

use crate::error::{EvalError, Result};
use mmlm_core::image::ImageTensor;
use mmlm_core::stream::{encode_prompt, Context, Segment};
use std::collections::BTreeMap;

pub const ANSWER: &str = "answer";

/// Placeholder for an image when a prompt is rendered as text.
pub const IMAGE_MARKER: &str = "<image>";

/// Separator written after every demonstration.
pub const DEMO_SEPARATOR: &str = "\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    Beam(usize),
    /// Beam search restricted to a label set.
    Constrained(usize),
    /// Pick the option whose continuation scores highest.
    CloseEnded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stop {
    Eos,
    /// End of sequence or the first newline, whichever comes first.
    EosOrNewline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: &'static str,
    pub text: &'static str,
    pub decoding: Decoding,
    pub stop: Stop,
}

pub const CAPTION: PromptTemplate = PromptTemplate {
    task: "caption",
    text: "An image of {answer}",
    decoding: Decoding::Beam(5),
    stop: Stop::EosOrNewline,
};

pub const VQA: PromptTemplate = PromptTemplate {
    task: "vqa",
    text: "Question: {question} Answer: {answer}",
    decoding: Decoding::Greedy,
    stop: Stop::EosOrNewline,
};

pub const SST2: PromptTemplate = PromptTemplate {
    task: "sst2",
    text: "Question: what is the sentiment of the opinion? Answer: {answer}",
    decoding: Decoding::CloseEnded,
    stop: Stop::Eos,
};

pub const HATEFUL: PromptTemplate = PromptTemplate {
    task: "hateful",
    text: "Question: does this picture contain real hate speech? Answer: {answer}",
    decoding: Decoding::CloseEnded,
    stop: Stop::Eos,
};

/// The misspelled "Qusestion" is deliberate: it is the published prompt.
pub const WEBSRC: PromptTemplate = PromptTemplate {
    task: "websrc",
    text: "Given the context below from web page, extract the answer from the given text like this: \
           Qusestion: Who is the publisher of this book? Answer: Penguin Books Ltd. \
           Context: {WebText} Q: {question} A: {answer} ",
    decoding: Decoding::Greedy,
    stop: Stop::EosOrNewline,
};

pub const IMAGENET: PromptTemplate = PromptTemplate {
    task: "imagenet",
    text: "The photo of the {answer}",
    decoding: Decoding::Constrained(2),
    stop: Stop::Eos,
};

pub const CUB: PromptTemplate = PromptTemplate {
    task: "cub",
    text: "Question:what is the name of {general category} in the picture? Answer: {answer}",
    decoding: Decoding::CloseEnded,
    stop: Stop::Eos,
};

pub const COT_RATIONALE: PromptTemplate = PromptTemplate {
    task: "cot-rationale",
    text: "Introduce this picture in detail:",
    decoding: Decoding::Greedy,
    stop: Stop::EosOrNewline,
};

pub const COT_ANSWER: PromptTemplate = PromptTemplate {
    task: "cot-answer",
    text: "{rationale} Question: what is the sentiment of the opinion? Answer: {answer}",
    decoding: Decoding::CloseEnded,
    stop: Stop::Eos,
};

pub const OBJECT_SIZE: PromptTemplate = PromptTemplate {
    task: "object-size",
    text: "Is {Item1} larger than {Item2}? {answer}",
    decoding: Decoding::CloseEnded,
    stop: Stop::Eos,
};

pub const OBJECT_COLOR: PromptTemplate = PromptTemplate {
    task: "object-color",
    text: "The color of {Object} is? {answer}",
    decoding: Decoding::CloseEnded,
    stop: Stop::Eos,
};

/// Generic close-ended language task: a context followed by an option.
pub const LANGUAGE: PromptTemplate = PromptTemplate {
    task: "lang",
    text: "{context} {answer}",
    decoding: Decoding::CloseEnded,
    stop: Stop::Eos,
};

pub const RAVEN_INTRO: [&str; 3] = ["Here are three images:", "Here are four images:", "Here are eight images:"];
pub const RAVEN_FOLLOWING: &str = "The following image is:";
pub const RAVEN_QUESTION: &str = "Is it correct?";
pub const RAVEN_YES: &str = "Yes";

pub const ALL: [PromptTemplate; 12] = [
    CAPTION,
    VQA,
    SST2,
    HATEFUL,
    WEBSRC,
    IMAGENET,
    CUB,
    COT_RATIONALE,
    COT_ANSWER,
    OBJECT_SIZE,
    OBJECT_COLOR,
    LANGUAGE,
];

enum Piece<'a> {
    Lit(&'a str),
    Hole(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').expect("templates close every hole");
        if open > 0 {
            out.push(Piece::Lit(&rest[..open]));
        }
        out.push(Piece::Hole(&rest[open + 1..close]));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Piece::Lit(rest));
    }
    out
}

impl PromptTemplate {
    /// Hole names in order of appearance, `answer` included.
    pub fn holes(&self) -> Vec<&'static str> {
        pieces(self.text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Hole(h) => Some(h),
                Piece::Lit(_) => None,
            })
            .collect()
    }

    /// Fills every hole. `which` names the example in errors.
    pub fn render(&self, values: &BTreeMap<String, String>, which: &str) -> Result<String> {
        let holes = self.holes();
        if let Some(k) = values.keys().find(|k| !holes.contains(&k.as_str())) {
            return Err(EvalError::UnknownHole(k.clone()));
        }
        let mut out = String::new();
        for p in pieces(self.text) {
            match p {
                Piece::Lit(s) => out.push_str(s),
                Piece::Hole(h) => out.push_str(values.get(h).ok_or_else(|| EvalError::MissingHole {
                    hole: h.to_string(),
                    which: which.to_string(),
                })?),
            }
        }
        Ok(out)
    }

    /// The text up to the answer hole with trailing spaces removed, and the
    /// literal text between that point and the hole.
    fn split_at_answer<'a>(&self, filled_prefix: &'a str) -> (&'a str, &'a str) {
        let query = filled_prefix.trim_end_matches(' ');
        (query, &filled_prefix[query.len()..])
    }

    fn prefix_template(&self) -> PromptTemplate {
        let end = self.text.find("{answer}").unwrap_or(self.text.len());
        PromptTemplate {
            text: &self.text[..end],
            ..*self
        }
    }

    /// Query text: everything before the answer hole, trailing spaces
    /// trimmed. `values` must not contain `answer`.
    pub fn render_query(&self, values: &BTreeMap<String, String>, which: &str) -> Result<String> {
        if values.contains_key(ANSWER) {
            return Err(EvalError::InvalidExample(format!("{which}: a query must not carry an answer")));
        }
        let prefix = self.prefix_template().render(values, which)?;
        Ok(self.split_at_answer(&prefix).0.to_string())
    }

    /// What follows the query text when the answer is `answer`, e.g.
    /// `" positive"` for `"... Answer: {answer}"`.
    pub fn continuation(&self, answer: &str) -> String {
        let lit = self.prefix_template().text;
        let (q, gap) = self.split_at_answer(lit);
        debug_assert!(q.len() + gap.len() == lit.len());
        format!("{gap}{answer}")
    }
}

/// One solved or unsolved example.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Example {
    pub image: Option<ImageTensor>,
    /// Hole values other than the answer.
    pub fields: BTreeMap<String, String>,
    pub answer: Option<String>,
}

impl Example {
    pub fn new(image: Option<ImageTensor>) -> Self {
        Self {
            image,
            ..Self::default()
        }
    }

    pub fn field(mut self, k: &str, v: &str) -> Self {
        self.fields.insert(k.into(), v.into());
        self
    }

    pub fn answer(mut self, a: &str) -> Self {
        self.answer = Some(a.into());
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prompt {
    pub segments: Vec<Segment>,
}

impl Prompt {
    pub fn push_text(&mut self, t: &str) {
        if t.is_empty() {
            return;
        }
        if let Some(Segment::Text(last)) = self.segments.last_mut() {
            last.push_str(t);
        } else {
            self.segments.push(Segment::Text(t.to_string()));
        }
    }

    pub fn push_image(&mut self, img: ImageTensor) {
        self.segments.push(Segment::Image(img));
    }

    pub fn extend(&mut self, other: Prompt) {
        for s in other.segments {
            match s {
                Segment::Text(t) => self.push_text(&t),
                Segment::Image(i) => self.push_image(i),
            }
        }
    }

    /// Text with [`IMAGE_MARKER`] in place of each image.
    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.as_str(),
                Segment::Image(_) => IMAGE_MARKER,
            })
            .collect()
    }

    pub fn image_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Image(_))).count()
    }

    /// Model input: BOS, then the segments with `v` slots per image.
    pub fn context(&self, v: usize) -> Context {
        encode_prompt(&self.segments, v)
    }
}

/// Demonstrations first, in order, each with its gold answer and a trailing
/// newline; then the query with its answer hole left open.
pub fn build_prompt(template: &PromptTemplate, query: &Example, demos: &[Example]) -> Result<Prompt> {
    let mut p = Prompt::default();
    for (i, d) in demos.iter().enumerate() {
        let which = format!("demonstration {}", i + 1);
        let answer = d.answer.as_ref().ok_or_else(|| EvalError::MissingHole {
            hole: ANSWER.into(),
            which: which.clone(),
        })?;
        let mut values = d.fields.clone();
        values.insert(ANSWER.into(), answer.clone());
        if let Some(img) = &d.image {
            p.push_image(img.clone());
        }
        p.push_text(&template.render(&values, &which)?);
        p.push_text(DEMO_SEPARATOR);
    }
    if let Some(img) = &query.image {
        p.push_image(img.clone());
    }
    p.push_text(&template.render_query(&query.fields, "query")?);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holes_in_order() {
        assert_eq!(WEBSRC.holes(), vec!["WebText", "question", "answer"]);
        assert_eq!(CUB.holes(), vec!["general category", "answer"]);
        assert!(COT_RATIONALE.holes().is_empty());
    }

    #[test]
    fn continuation_keeps_the_gap() {
        assert_eq!(SST2.continuation("positive"), " positive");
        assert_eq!(IMAGENET.continuation("dog"), " dog");
        assert_eq!(COT_RATIONALE.continuation("x"), "x");
    }

    #[test]
    fn unknown_holes_rejected() {
        let q = Example::new(None).field("nope", "x");
        assert!(matches!(build_prompt(&CAPTION, &q, &[]), Err(EvalError::UnknownHole(h)) if h == "nope"));
    }
}
