//! A small raw corpus of shape documents with deliberate junk mixed in, for
//! exercising the pipeline end to end.

use crate::raw::RawDocument;
use mmlm_core::image::ImageTensor;
use mmlm_core::stream::Segment;
use mmlm_core::synth::{caption, render, CAPTION_PREFIX, COLORS, SHAPES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Edge of the rendered shape images, at the filter's size floor.
pub const SIDE: usize = 64;

fn en(segments: Vec<Segment>) -> RawDocument {
    RawDocument::new(Some("en"), segments)
}

fn pick(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.random_range(0..SHAPES.len()), r.random_range(0..COLORS.len()))
}

/// `n` documents; of every eight, five are `[Look:, image, caption]`, one
/// shows two shapes, one is junk the filter removes (too small, not
/// English, gibberish or a blank image) and one has no image at all.
pub fn raw_corpus(n: usize, seed: u64) -> Vec<RawDocument> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| match i % 8 {
            5 => {
                let (a, b) = (pick(&mut r), pick(&mut r));
                en(vec![
                    Segment::Text(CAPTION_PREFIX.into()),
                    Segment::Image(render(a.0, a.1, SIDE, 0.6)),
                    Segment::Text(format!("{} Then:", caption(a.0, a.1))),
                    Segment::Image(render(b.0, b.1, SIDE, 0.6)),
                    Segment::Text(caption(b.0, b.1)),
                ])
            }
            6 => {
                let (s, c) = pick(&mut r);
                let shape = |side| Segment::Image(render(s, c, side, 0.6));
                let text = Segment::Text(caption(s, c));
                match (i / 8) % 4 {
                    0 => en(vec![Segment::Text(CAPTION_PREFIX.into()), shape(SIDE / 2), text]),
                    1 => RawDocument::new(Some("fr"), vec![Segment::Text("Regarde :".into()), shape(SIDE), text]),
                    2 => en(vec![
                        Segment::Text("#shapes #art http://example.com/x \u{1F600}".into()),
                        shape(SIDE),
                    ]),
                    _ => en(vec![
                        Segment::Text(CAPTION_PREFIX.into()),
                        Segment::Image(ImageTensor::filled(SIDE, SIDE, COLORS[c].1).expect("valid size")),
                        text,
                    ]),
                }
            }
            7 => {
                let (s, c) = pick(&mut r);
                en(vec![Segment::Text(format!("The {} is {}.", SHAPES[s], COLORS[c].0))])
            }
            _ => {
                let (s, c) = pick(&mut r);
                en(vec![
                    Segment::Text(CAPTION_PREFIX.into()),
                    Segment::Image(render(s, c, SIDE, 0.6)),
                    Segment::Text(caption(s, c)),
                ])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::FilterConfig;
    use crate::pipeline::run_pipeline;

    #[test]
    fn junk_is_filtered_and_the_rest_survives() {
        let docs = raw_corpus(64, 3);
        assert_eq!(docs, raw_corpus(64, 3));
        let out = run_pipeline(&docs, &FilterConfig::default(), 0);
        let r = &out.report;
        assert_eq!(r.discard_reasons["not-english"], 2);
        assert_eq!(r.discard_reasons["image-too-small"], 2);
        assert_eq!(r.discard_reasons["image-single-color"], 2);
        assert_eq!(r.discard_reasons["gibberish-text"], 2);
        assert_eq!(r.discard_reasons["no-interspersed-images"], 8);
        // The two-image documents are never randomly dropped.
        assert!(r.kept_documents >= 8);
    }
}
