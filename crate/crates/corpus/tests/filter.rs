use mmlm_core::image::ImageTensor;
use mmlm_core::stream::Segment;
use mmlm_corpus::filter::{filter_document, FilterConfig, Rule, Verdict};
use mmlm_corpus::gibberish::{gibberish_score, GibberishConfig};
use mmlm_corpus::pipeline::run_pipeline;
use mmlm_corpus::raw::RawDocument;
use proptest::prelude::*;

fn checker(h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, |y, x| if (x / 4 + y / 4) % 2 == 0 { [0.9, 0.2, 0.1] } else { [0.1, 0.3, 0.8] }).unwrap()
}

fn doc(images: impl IntoIterator<Item = ImageTensor>) -> RawDocument {
    let mut segs = vec![Segment::Text("An ordinary opening paragraph.".into())];
    for (i, img) in images.into_iter().enumerate() {
        segs.push(Segment::Image(img));
        segs.push(Segment::Text(format!("Paragraph {i} about the picture.")));
    }
    RawDocument::new(Some("en"), segs)
}

fn cfg() -> FilterConfig {
    FilterConfig::default()
}

/// A seed whose coin flip keeps one-image document 0, so the other rules can
/// be tested in isolation.
fn keeping_seed() -> u64 {
    let d = doc([checker(64, 64)]);
    (0..).find(|&s| filter_document(&d, &cfg(), s, 0).is_kept()).unwrap()
}

#[test]
fn seven_images_are_capped_to_the_first_five() {
    let d = doc((0..7).map(|_| checker(80, 80)));
    let dec = filter_document(&d, &cfg(), 0, 0);
    assert_eq!(dec.verdict, Verdict::Keep);
    assert_eq!(dec.kept_images, vec![0, 1, 2, 3, 4]);
    assert!(dec.reasons.is_empty());
    assert_eq!(dec.apply(&d).unwrap().image_count(), 5);
}

#[test]
fn cap_counts_only_surviving_images() {
    let imgs = vec![checker(10, 10), checker(64, 64), checker(64, 64), checker(64, 64), checker(64, 64), checker(64, 64), checker(64, 64)];
    let dec = filter_document(&doc(imgs), &cfg(), 0, 0);
    assert_eq!(dec.kept_images, vec![1, 2, 3, 4, 5]);
}

#[test]
fn only_image_too_small_discards() {
    let dec = filter_document(&doc([checker(32, 32)]), &cfg(), 0, 0);
    assert_eq!(dec.verdict, Verdict::Discard);
    assert_eq!(dec.reasons, vec![Rule::ImageTooSmall, Rule::NoImagesLeft]);
}

#[test]
fn resolution_floor_is_inclusive() {
    let s = keeping_seed();
    assert!(filter_document(&doc([checker(64, 64)]), &cfg(), s, 0).is_kept());
    for (h, w) in [(63, 64), (64, 63), (200, 10)] {
        let dec = filter_document(&doc([checker(h, w)]), &cfg(), s, 0);
        assert_eq!(dec.reasons, vec![Rule::ImageTooSmall, Rule::NoImagesLeft], "{h}x{w}");
    }
}

#[test]
fn single_colored_images_are_removed() {
    let flat = ImageTensor::filled(128, 128, [0.4, 0.4, 0.4]).unwrap();
    let dec = filter_document(&doc([flat.clone()]), &cfg(), 0, 0);
    assert_eq!(dec.reasons, vec![Rule::ImageSingleColor, Rule::NoImagesLeft]);

    // A faint gradient below the variance threshold still counts as one colour.
    let faint = ImageTensor::from_fn(64, 64, |_, x| [0.5 + x as f32 * 1e-4, 0.5, 0.5]).unwrap();
    assert!(faint.max_channel_variance() < 1e-4);
    let dec = filter_document(&doc([faint, checker(64, 64), checker(64, 64)]), &cfg(), 0, 0);
    assert_eq!(dec.kept_images, vec![1, 2]);
    assert_eq!(dec.removals, vec![(1, Rule::ImageSingleColor)]);
}

#[test]
fn language_rule_trusts_the_tag_by_default() {
    let mut d = doc([checker(64, 64), checker(64, 64)]);
    assert!(filter_document(&d, &cfg(), 0, 0).is_kept());
    for lang in [Some("de"), None] {
        d.lang = lang.map(str::to_string);
        assert_eq!(filter_document(&d, &cfg(), 0, 0).reasons, vec![Rule::NotEnglish]);
    }
    let everything = FilterConfig {
        language: |_| true,
        ..cfg()
    };
    assert!(filter_document(&d, &everything, 0, 0).is_kept());
}

#[test]
fn documents_need_both_text_and_images() {
    let text_only = RawDocument::new(Some("en"), [Segment::Text("words".into())]);
    let image_only = RawDocument::new(Some("en"), [Segment::Image(checker(64, 64))]);
    let blank_text = RawDocument::new(Some("en"), [Segment::Text("  ".into()), Segment::Image(checker(64, 64))]);
    for d in [text_only, image_only, blank_text] {
        assert_eq!(filter_document(&d, &cfg(), 0, 0).reasons, vec![Rule::NoInterspersedImages]);
    }
}

#[test]
fn gibberish_segments_are_dropped() {
    let spam = (0..20).map(|i| format!("https://spam{i}.example/x")).collect::<Vec<_>>().join(" ");
    let s = gibberish_score(&spam, &GibberishConfig::default());
    assert_eq!(s.score, 1.0);
    assert!(s.discard);

    let d = RawDocument::new(
        Some("en"),
        [
            Segment::Text("A calm description.".into()),
            Segment::Image(checker(64, 64)),
            Segment::Image(checker(64, 64)),
            Segment::Text(spam.clone()),
        ],
    );
    let dec = filter_document(&d, &cfg(), 0, 0);
    assert!(dec.is_kept());
    assert_eq!(dec.kept_text, vec![0]);
    assert_eq!(dec.removals, vec![(3, Rule::GibberishText)]);

    let all_spam = RawDocument::new(Some("en"), [Segment::Text(spam), Segment::Image(checker(64, 64))]);
    let dec = filter_document(&all_spam, &cfg(), 0, 0);
    assert_eq!(dec.reasons, vec![Rule::GibberishText, Rule::NoTextLeft]);
}

#[test]
fn gibberish_score_matches_hand_count() {
    // 10 ordinary words, 4 URLs, 3 hashtags, 3 emoji: 10 of 20 tokens flagged.
    let text = "one two three four five six seven eight nine ten \
                http://a.b https://c.d/e ftp://f.g s3://bucket/key \
                #one #two #three 😀 🚀 ☀️";
    let s = gibberish_score(text, &GibberishConfig::default());
    assert_eq!((s.tokens, s.urls, s.hashtags, s.emoji), (20, 4, 3, 3));
    assert!((s.score - 0.5).abs() < 1e-9);
    assert!(s.discard);
    let s = gibberish_score("one two three four five six seven #eight nine ten", &GibberishConfig::default());
    assert!((s.score - 0.1).abs() < 1e-9);
    assert!(!s.discard);
}

proptest! {
    #[test]
    fn gibberish_score_is_the_flagged_fraction(kinds in prop::collection::vec(0u8..4, 1..60)) {
        let words = ["plain", "http://x.y/z", "#tag", "🎉"];
        let text = kinds.iter().map(|&k| words[k as usize]).collect::<Vec<_>>().join(" ");
        let flagged = kinds.iter().filter(|&&k| k > 0).count();
        let s = gibberish_score(&text, &GibberishConfig::default());
        prop_assert!((s.score - flagged as f64 / kinds.len() as f64).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s.score));
    }
}

#[test]
fn single_image_documents_drop_at_half_rate() {
    let d = doc([checker(64, 64)]);
    let n = 10_000;
    let kept = (0..n).filter(|&i| filter_document(&d, &cfg(), 42, i).is_kept()).count();
    let frac = kept as f64 / n as f64;
    assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    // Multi-image documents never draw.
    let two = doc([checker(64, 64), checker(64, 64)]);
    assert!((0..200).all(|i| filter_document(&two, &cfg(), 42, i).is_kept()));
}

fn image_strategy() -> impl Strategy<Value = ImageTensor> {
    (prop_oneof![Just(8usize), Just(63), Just(64), Just(70)], prop_oneof![Just(8usize), Just(64), Just(66)], any::<bool>())
        .prop_map(|(h, w, flat)| if flat { ImageTensor::filled(h, w, [0.3, 0.6, 0.9]).unwrap() } else { checker(h, w) })
}

fn raw_strategy() -> impl Strategy<Value = RawDocument> {
    let seg = prop_oneof![
        3 => prop_oneof![Just("plain words here"), Just(""), Just("#a #b http://c"), Just("fine #tag text here")]
            .prop_map(|t| Segment::Text(t.to_string())),
        2 => image_strategy().prop_map(Segment::Image),
    ];
    (prop::collection::vec(seg, 0..10), prop_oneof![Just(Some("en")), Just(Some("fr")), Just(None)])
        .prop_map(|(segs, lang)| RawDocument::new(lang, segs))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn decisions_satisfy_invariants(d in raw_strategy(), seed in any::<u64>(), index in 0u64..1000) {
        let dec = filter_document(&d, &cfg(), seed, index);
        prop_assert_eq!(dec.is_kept(), dec.reasons.is_empty());
        if dec.is_kept() {
            prop_assert!((1..=5).contains(&dec.kept_images.len()));
            let images: Vec<&ImageTensor> = d.segments.iter().filter_map(|s| match s {
                Segment::Image(i) => Some(i),
                _ => None,
            }).collect();
            for &k in &dec.kept_images {
                let img = images[k];
                prop_assert!(img.height() >= 64 && img.width() >= 64);
                prop_assert!(img.max_channel_variance() >= 1e-4);
            }
            let kept = dec.apply(&d).unwrap();
            prop_assert_eq!(kept.image_count(), dec.kept_images.len());
        }
        prop_assert_eq!(filter_document(&d, &cfg(), seed, index), dec);
    }
}

#[test]
fn pipeline_is_order_independent_per_document() {
    let docs: Vec<RawDocument> = (0..60)
        .map(|i| doc((0..(i % 3)).map(|_| checker(64 + i, 64))))
        .collect();
    let a = run_pipeline(&docs, &cfg(), 5);
    let b = run_pipeline(&docs, &cfg(), 5);
    assert_eq!(a.decisions, b.decisions);
    assert_eq!(a.report.to_json(), b.report.to_json());
    for (i, d) in docs.iter().enumerate() {
        assert_eq!(filter_document(d, &cfg(), 5, i as u64), a.decisions[i]);
    }
    let r = &a.report;
    assert_eq!(r.kept_documents + r.discarded_documents, 60);
    assert_eq!(r.discard_reasons["no-interspersed-images"], 20);
    assert_eq!(r.kept_documents, a.documents.len());
    let c = run_pipeline(&docs, &cfg(), 6);
    assert_ne!(a.decisions, c.decisions);
}
