//! Pre-extracted web documents in JSON Lines form.
//!
//! One document per line:
//! `{"lang": "en", "segments": [{"type": "text", "text": "..."}, {"type": "image", "png_base64": "..."}]}`.
//! `lang` may be absent or null for an unknown language.

use crate::error::{CorpusError, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use mmlm_core::image::ImageTensor;
use mmlm_core::stream::Segment;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// An unfiltered document. Images keep whatever size and content they
/// arrived with.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDocument {
    pub lang: Option<String>,
    pub segments: Vec<Segment>,
}

impl RawDocument {
    pub fn new(lang: Option<&str>, segments: impl IntoIterator<Item = Segment>) -> Self {
        Self {
            lang: lang.map(str::to_string),
            segments: segments.into_iter().collect(),
        }
    }

    pub fn image_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Image(_))).count()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum JsonSegment {
    Text { text: String },
    Image { png_base64: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDocument {
    #[serde(default)]
    lang: Option<String>,
    segments: Vec<JsonSegment>,
}

pub fn parse_line(line: &str, line_no: usize) -> Result<RawDocument> {
    let bad = |msg: String| CorpusError::Input { line: line_no, msg };
    let doc: JsonDocument = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let mut segments = Vec::with_capacity(doc.segments.len());
    for (i, s) in doc.segments.into_iter().enumerate() {
        segments.push(match s {
            JsonSegment::Text { text } => Segment::Text(text),
            JsonSegment::Image { png_base64 } => {
                let bytes = STANDARD
                    .decode(png_base64.trim())
                    .map_err(|e| bad(format!("segment {i}: base64: {e}")))?;
                let img = ImageTensor::from_png_bytes(&bytes).map_err(|e| bad(format!("segment {i}: {e}")))?;
                Segment::Image(img)
            }
        });
    }
    Ok(RawDocument { lang: doc.lang, segments })
}

/// Reads every non-blank line. Errors name the 1-based line number.
pub fn read_jsonl(r: impl BufRead) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_line(&line, n + 1)?);
    }
    Ok(docs)
}

pub fn to_json_line(doc: &RawDocument) -> String {
    let segments = doc
        .segments
        .iter()
        .map(|s| match s {
            Segment::Text(t) => JsonSegment::Text { text: t.clone() },
            Segment::Image(img) => JsonSegment::Image {
                png_base64: STANDARD.encode(img.to_png_bytes()),
            },
        })
        .collect();
    let doc = JsonDocument {
        lang: doc.lang.clone(),
        segments,
    };
    serde_json::to_string(&doc).expect("documents always serialize")
}

pub fn write_jsonl(mut w: impl Write, docs: &[RawDocument]) -> Result<()> {
    for d in docs {
        writeln!(w, "{}", to_json_line(d))?;
    }
    Ok(())
}
