use mmlm_core::image::ImageTensor;
use mmlm_eval::tasks::{cot_answer_prompt, cot_rationale_prompt, descriptions_prompt, raven_prompt, RavenInstance};
use mmlm_eval::template::{
    build_prompt, Example, Prompt, CAPTION, HATEFUL, IMAGENET, LANGUAGE, OBJECT_COLOR, OBJECT_SIZE, SST2, VQA, WEBSRC,
};
use mmlm_eval::EvalError;

fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn img(shade: f32) -> ImageTensor {
    ImageTensor::filled(4, 4, [shade, 0.5, 0.5]).unwrap()
}

fn check(name: &str, p: Prompt) {
    assert_eq!(p.render(), fixture(name), "{name}");
}

#[test]
fn captioning() {
    check("caption_k0.txt", build_prompt(&CAPTION, &Example::new(Some(img(0.0))), &[]).unwrap());
    let demos = [
        Example::new(Some(img(0.1))).answer("a red circle."),
        Example::new(Some(img(0.2))).answer("a blue square."),
    ];
    let p = build_prompt(&CAPTION, &Example::new(Some(img(0.3))), &demos).unwrap();
    assert_eq!(p.image_count(), 3);
    check("caption_k2.txt", p);
}

#[test]
fn question_answering() {
    let q = |s: &str, shade| Example::new(Some(img(shade))).field("question", s);
    check("vqa_k0.txt", build_prompt(&VQA, &q("What color is the shape?", 0.0), &[]).unwrap());
    let demos = [q("What color is it?", 0.1).answer("red"), q("What shape is it?", 0.2).answer("circle")];
    check("vqa_k2.txt", build_prompt(&VQA, &q("How many are there?", 0.3), &demos).unwrap());
}

#[test]
fn ocr_free_classification() {
    check("sst2_k0.txt", build_prompt(&SST2, &Example::new(Some(img(0.0))), &[]).unwrap());
    check("hateful_k0.txt", build_prompt(&HATEFUL, &Example::new(Some(img(0.0))), &[]).unwrap());
}

#[test]
fn web_reading() {
    let q = Example::new(Some(img(0.0)))
        .field("WebText", "Title: Deep Waters Publisher: Harbor Press")
        .field("question", "Who is the publisher of this book?");
    check("websrc_k0.txt", build_prompt(&WEBSRC, &q, &[]).unwrap());
    let demo = Example::new(Some(img(0.5)))
        .field("WebText", "Title: Cold Stars Year: 1998")
        .field("question", "When was this book published?")
        .answer("1998");
    check("websrc_k1.txt", build_prompt(&WEBSRC, &q, &[demo]).unwrap());
}

#[test]
fn image_classification() {
    check("imagenet_k0.txt", build_prompt(&IMAGENET, &Example::new(Some(img(0.0))), &[]).unwrap());
}

fn woodpeckers() -> Vec<(String, String)> {
    vec![
        (
            "three toed woodpecker".into(),
            "It has black and white stripes throughout the body and a yellow crown.".into(),
        ),
        (
            "downy woodpecker".into(),
            "It has white spots on its black wings and some red on its crown.".into(),
        ),
    ]
}

#[test]
fn classification_with_descriptions() {
    let opts = woodpeckers();
    let with = descriptions_prompt(&img(0.0), &opts, "woodpecker", true).unwrap();
    let without = descriptions_prompt(&img(0.0), &opts, "woodpecker", false).unwrap();
    check("cub_with_descriptions.txt", with.clone());
    check("cub_without_descriptions.txt", without.clone());
    // Removing the descriptions from one gives the other.
    let mut stripped = with.render();
    for (_, d) in &opts {
        stripped = stripped.replace(&format!(": {d}"), "");
    }
    assert_eq!(stripped, without.render());
}

#[test]
fn chain_of_thought() {
    check("cot_stage1.txt", cot_rationale_prompt(&img(0.0)).unwrap());
    let rationale = "The picture shows the words so good.";
    let p = cot_answer_prompt(&img(0.0), rationale).unwrap();
    assert!(p.render().contains(rationale));
    check("cot_stage2.txt", p);
}

#[test]
fn raven_layouts() {
    for (n, name) in [(3, "raven_three.txt"), (4, "raven_four.txt"), (8, "raven_eight.txt")] {
        let inst = RavenInstance::new(
            (0..n).map(|i| img(i as f32 / 10.0)).collect(),
            (0..6).map(|i| img(0.9 - i as f32 / 10.0)).collect(),
            2,
        )
        .unwrap();
        let p = raven_prompt(&inst, 4);
        assert_eq!(p.segments.iter().filter_map(|s| match s {
            mmlm_core::stream::Segment::Image(i) => Some(i),
            _ => None,
        }).last(), Some(&inst.candidates[4]));
        check(name, p);
    }
}

#[test]
fn language_tasks() {
    let size = Example::new(None).field("Item1", "sofa").field("Item2", "cat");
    check("object_size_k0.txt", build_prompt(&OBJECT_SIZE, &size, &[]).unwrap());
    let color = Example::new(None).field("Object", "the sky");
    check("object_color_k0.txt", build_prompt(&OBJECT_COLOR, &color, &[]).unwrap());
    let demo = Example::new(None).field("context", "The color of grass is?").answer("green");
    let q = Example::new(None).field("context", "Is sofa larger than cat?");
    check("lang_k1.txt", build_prompt(&LANGUAGE, &q, &[demo]).unwrap());
}

#[test]
fn missing_holes_are_named() {
    let err = build_prompt(&VQA, &Example::new(Some(img(0.0))), &[]).unwrap_err();
    assert!(matches!(&err, EvalError::MissingHole { hole, which } if hole == "question" && which == "query"));
    let demo = Example::new(None).field("question", "q");
    let q = Example::new(None).field("question", "q");
    let err = build_prompt(&VQA, &q, &[demo]).unwrap_err();
    assert_eq!(err.to_string(), "demonstration 1: missing value for hole `{answer}`");
    let web = Example::new(None).field("question", "q");
    let err = build_prompt(&WEBSRC, &web, &[]).unwrap_err();
    assert!(err.to_string().contains("`{WebText}`"), "{err}");
}
