//! JSON Lines datasets, one item per line. Images are base64 PNG strings.
//!
//! | task | fields |
//! |---|---|
//! | caption | `image`, `captions` |
//! | vqa | `image`, `question`, `answers` |
//! | sst2 | `image`, `label` (`positive`/`negative`), optional `text` |
//! | hateful | `image`, `label` (`yes`/`no`), optional `text` |
//! | websrc | `image`, `context`, `question`, `answer` |
//! | imagenet | `image`, `label` |
//! | cub | `image`, `general_category`, `options` (`name`, `description`), `label` |
//! | raven | `given` (3, 4 or 8 images), `candidates` (6 images), `answer_index` |
//! | lang | `context`, `options`, `answer` (option index) |

use crate::error::{EvalError, Result};
use mmlm_core::image::ImageTensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const TASKS: [&str; 9] = ["caption", "vqa", "sst2", "hateful", "websrc", "imagenet", "cub", "raven", "lang"];

mod png_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use mmlm_core::image::ImageTensor;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn encode(img: &ImageTensor) -> String {
        STANDARD.encode(img.to_png_bytes())
    }

    pub fn decode(s: &str) -> Result<ImageTensor, String> {
        let bytes = STANDARD.decode(s.trim()).map_err(|e| format!("base64: {e}"))?;
        ImageTensor::from_png_bytes(&bytes).map_err(|e| e.to_string())
    }

    pub fn serialize<S: Serializer>(img: &ImageTensor, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(img))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ImageTensor, D::Error> {
        decode(&String::deserialize(d)?).map_err(de::Error::custom)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(imgs: &[ImageTensor], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(imgs.len()))?;
            for img in imgs {
                seq.serialize_element(&encode(img))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ImageTensor>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| decode(s).map_err(de::Error::custom))
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionItem {
    #[serde(with = "png_b64")]
    pub image: ImageTensor,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaItem {
    #[serde(with = "png_b64")]
    pub image: ImageTensor,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextImageItem {
    #[serde(with = "png_b64")]
    pub image: ImageTensor,
    /// The text drawn in the image, for reference only.
    #[serde(default)]
    pub text: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebItem {
    #[serde(with = "png_b64")]
    pub image: ImageTensor,
    pub context: String,
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassItem {
    #[serde(with = "png_b64")]
    pub image: ImageTensor,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionItem {
    pub name: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubItem {
    #[serde(with = "png_b64")]
    pub image: ImageTensor,
    pub general_category: String,
    pub options: Vec<OptionItem>,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RavenItem {
    #[serde(with = "png_b64::vec")]
    pub given: Vec<ImageTensor>,
    #[serde(with = "png_b64::vec")]
    pub candidates: Vec<ImageTensor>,
    pub answer_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangItem {
    pub context: String,
    pub options: Vec<String>,
    pub answer: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Caption(Vec<CaptionItem>),
    Vqa(Vec<VqaItem>),
    Sst2(Vec<TextImageItem>),
    Hateful(Vec<TextImageItem>),
    WebSrc(Vec<WebItem>),
    ImageNet(Vec<ClassItem>),
    Cub(Vec<CubItem>),
    Raven(Vec<RavenItem>),
    Lang(Vec<LangItem>),
}

fn read_items<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Input {
            line: n + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_items<T: Serialize>(mut w: impl Write, items: &[T]) -> Result<()> {
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it).expect("items always serialize"))?;
    }
    Ok(())
}

impl Dataset {
    pub fn read(task: &str, r: impl BufRead) -> Result<Self> {
        Ok(match task {
            "caption" => Dataset::Caption(read_items(r)?),
            "vqa" => Dataset::Vqa(read_items(r)?),
            "sst2" => Dataset::Sst2(read_items(r)?),
            "hateful" => Dataset::Hateful(read_items(r)?),
            "websrc" => Dataset::WebSrc(read_items(r)?),
            "imagenet" => Dataset::ImageNet(read_items(r)?),
            "cub" => Dataset::Cub(read_items(r)?),
            "raven" => Dataset::Raven(read_items(r)?),
            "lang" => Dataset::Lang(read_items(r)?),
            other => return Err(EvalError::Usage(format!("unknown task `{other}`"))),
        })
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        match self {
            Dataset::Caption(v) => write_items(w, v),
            Dataset::Vqa(v) => write_items(w, v),
            Dataset::Sst2(v) | Dataset::Hateful(v) => write_items(w, v),
            Dataset::WebSrc(v) => write_items(w, v),
            Dataset::ImageNet(v) => write_items(w, v),
            Dataset::Cub(v) => write_items(w, v),
            Dataset::Raven(v) => write_items(w, v),
            Dataset::Lang(v) => write_items(w, v),
        }
    }

    pub fn task(&self) -> &'static str {
        match self {
            Dataset::Caption(_) => "caption",
            Dataset::Vqa(_) => "vqa",
            Dataset::Sst2(_) => "sst2",
            Dataset::Hateful(_) => "hateful",
            Dataset::WebSrc(_) => "websrc",
            Dataset::ImageNet(_) => "imagenet",
            Dataset::Cub(_) => "cub",
            Dataset::Raven(_) => "raven",
            Dataset::Lang(_) => "lang",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Caption(v) => v.len(),
            Dataset::Vqa(v) => v.len(),
            Dataset::Sst2(v) | Dataset::Hateful(v) => v.len(),
            Dataset::WebSrc(v) => v.len(),
            Dataset::ImageNet(v) => v.len(),
            Dataset::Cub(v) => v.len(),
            Dataset::Raven(v) => v.len(),
            Dataset::Lang(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_task() {
        for task in TASKS {
            let d = crate::synth::dataset(task, 4, 0).unwrap();
            let mut buf = Vec::new();
            d.write(&mut buf).unwrap();
            let back = Dataset::read(task, buf.as_slice()).unwrap();
            assert_eq!(back.len(), 4);
            // Re-encoding decoded PNGs is stable.
            let mut again = Vec::new();
            back.write(&mut again).unwrap();
            assert_eq!(buf, again, "{task}");
        }
    }

    #[test]
    fn bad_lines_are_reported() {
        let err = Dataset::read("lang", "{\"context\":\"x\"}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1:"), "{err}");
    }
}
