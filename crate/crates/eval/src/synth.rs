//! Procedural evaluation sets: Raven-style matrices, shape captions and
//! questions, rendered-text sentiment and hate-speech images, web snippets,
//! fine-grained shape categories with descriptions, and object-property
//! language questions.

use crate::data::{
    CaptionItem, ClassItem, CubItem, Dataset, LangItem, OptionItem, RavenItem, TextImageItem, VqaItem, WebItem,
};
use crate::error::Result;
use crate::tasks::RavenInstance;
use mmlm_core::image::ImageTensor;
use mmlm_core::synth::{render, COLORS, SHAPES};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IMAGE_SIZE: usize = 32;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn cell(shape: usize, color: usize, extent: f32) -> ImageTensor {
    render(shape, color, IMAGE_SIZE, extent)
}

/// Repaints the background (the colour of the corner pixel) grey.
fn on_backdrop(img: ImageTensor, grey: f32) -> ImageTensor {
    let bg = img.pixel(0, 0);
    ImageTensor::from_fn(img.height(), img.width(), |y, x| {
        let p = img.pixel(y, x);
        if p == bg {
            [grey; 3]
        } else {
            p
        }
    })
    .expect("same size")
}

/// One instance. Grids (3 or 8 given) vary shape by row and colour by
/// column; the four-image kind is a row whose shape is fixed while its size
/// grows. The correct completion is shuffled among five distinct
/// distractors. Each instance has its own background shade, so identical
/// puzzles rarely repeat across a set.
pub fn raven_instance(r: &mut impl Rng) -> RavenInstance {
    let given_count = [3, 4, 8][r.random_range(0..3)];
    let shapes: Vec<usize> = {
        let mut s: Vec<usize> = (0..SHAPES.len()).collect();
        s.shuffle(r);
        s
    };
    let colors: Vec<usize> = {
        let mut c: Vec<usize> = (0..COLORS.len()).collect();
        c.shuffle(r);
        c
    };
    type Attr = (usize, usize, f32);
    let (given, answer): (Vec<Attr>, Attr) = match given_count {
        4 => {
            let (s, c) = (shapes[0], colors[0]);
            let sizes = [0.3, 0.4, 0.5, 0.6, 0.7];
            ((0..4).map(|i| (s, c, sizes[i])).collect(), (s, c, sizes[4]))
        }
        n => {
            let side = if n == 3 { 2 } else { 3 };
            let cells: Vec<Attr> = (0..side * side).map(|i| (shapes[i / side], colors[i % side], 0.6)).collect();
            (cells[..n].to_vec(), cells[n])
        }
    };
    let mut options = vec![answer];
    while options.len() < 6 {
        let cand = if given_count == 4 {
            // Same family, wrong step: other sizes or other shapes.
            if r.random_bool(0.5) {
                (answer.0, answer.1, [0.2, 0.3, 0.4, 0.5, 0.6, 0.8][r.random_range(0..6)])
            } else {
                (shapes[r.random_range(1..SHAPES.len())], answer.1, answer.2)
            }
        } else {
            (r.random_range(0..SHAPES.len()), colors[r.random_range(0..3)], 0.6)
        };
        if !options.contains(&cand) {
            options.push(cand);
        }
    }
    let answer_index = r.random_range(0..6);
    options.swap(0, answer_index);
    let grey = r.random_range(16u8..=96) as f32 / 255.0;
    let img = |&(s, c, e): &Attr| on_backdrop(cell(s, c, e), grey);
    RavenInstance::new(given.iter().map(img).collect(), options.iter().map(img).collect(), answer_index)
        .expect("generator respects the instance shape")
}

pub fn raven_instances(n: usize, seed: u64) -> Vec<RavenInstance> {
    (0..n).map(|i| raven_instance(&mut rng(seed, i as u64))).collect()
}

fn shape_color(i: usize) -> (usize, usize) {
    (i % SHAPES.len(), (i / SHAPES.len()) % COLORS.len())
}

fn shape_image(i: usize) -> ImageTensor {
    let (s, c) = shape_color(i);
    cell(s, c, 0.6)
}

pub fn captions(n: usize) -> Vec<CaptionItem> {
    (0..n)
        .map(|i| {
            let (s, c) = shape_color(i);
            CaptionItem {
                image: shape_image(i),
                captions: vec![format!("a {} {}.", COLORS[c].0, SHAPES[s])],
            }
        })
        .collect()
}

pub fn vqa(n: usize) -> Vec<VqaItem> {
    (0..n)
        .map(|i| {
            let (s, c) = shape_color(i / 2);
            let (question, answer) = if i % 2 == 0 {
                ("What color is the shape?", COLORS[c].0)
            } else {
                ("What shape is this?", SHAPES[s])
            };
            VqaItem {
                image: shape_image(i / 2),
                question: question.into(),
                answers: vec![answer.into(); 3],
            }
        })
        .collect()
}

/// 3×5 glyphs for a–z, rows top to bottom, `#` marks ink.
const GLYPHS: [[&str; 5]; 26] = [
    [".#.", "#.#", "###", "#.#", "#.#"],
    ["##.", "#.#", "##.", "#.#", "##."],
    [".##", "#..", "#..", "#..", ".##"],
    ["##.", "#.#", "#.#", "#.#", "##."],
    ["###", "#..", "##.", "#..", "###"],
    ["###", "#..", "##.", "#..", "#.."],
    [".##", "#..", "#.#", "#.#", ".##"],
    ["#.#", "#.#", "###", "#.#", "#.#"],
    ["###", ".#.", ".#.", ".#.", "###"],
    ["..#", "..#", "..#", "#.#", ".#."],
    ["#.#", "#.#", "##.", "#.#", "#.#"],
    ["#..", "#..", "#..", "#..", "###"],
    ["#.#", "###", "###", "#.#", "#.#"],
    ["##.", "#.#", "#.#", "#.#", "#.#"],
    [".#.", "#.#", "#.#", "#.#", ".#."],
    ["##.", "#.#", "##.", "#..", "#.."],
    [".#.", "#.#", "#.#", "##.", ".##"],
    ["##.", "#.#", "##.", "#.#", "#.#"],
    [".##", "#..", ".#.", "..#", "##."],
    ["###", ".#.", ".#.", ".#.", ".#."],
    ["#.#", "#.#", "#.#", "#.#", "###"],
    ["#.#", "#.#", "#.#", "#.#", ".#."],
    ["#.#", "#.#", "###", "###", "#.#"],
    ["#.#", "#.#", ".#.", "#.#", "#.#"],
    ["#.#", "#.#", ".#.", ".#.", ".#."],
    ["###", "..#", ".#.", "#..", "###"],
];

/// Dark text on a light background, up to four lines of eight characters.
/// Characters outside a–z render as blanks.
pub fn render_text(text: &str) -> ImageTensor {
    let lines: Vec<Vec<char>> = text
        .to_lowercase()
        .split_whitespace()
        .flat_map(|w| w.chars().collect::<Vec<_>>().chunks(8).map(<[char]>::to_vec).collect::<Vec<_>>())
        .take(4)
        .collect();
    ImageTensor::from_fn(IMAGE_SIZE, IMAGE_SIZE, |y, x| {
        let (row, gy) = (y / 8, y % 8);
        let (col, gx) = (x / 4, x % 4);
        let ink = lines
            .get(row)
            .and_then(|l| l.get(col))
            .filter(|ch| ch.is_ascii_lowercase())
            .is_some_and(|&ch| {
                (1..6).contains(&gy) && gx < 3 && GLYPHS[(ch as u8 - b'a') as usize][gy - 1].as_bytes()[gx] == b'#'
            });
        if ink {
            [0.05, 0.05, 0.05]
        } else {
            [0.95, 0.95, 0.9]
        }
    })
    .expect("valid size")
}

const POSITIVE: [&str; 6] = ["good fun", "great", "lovely", "so nice", "superb", "joyful"];
const NEGATIVE: [&str; 6] = ["bad", "awful", "dull", "so sad", "boring", "terrible"];

pub fn sentiment(n: usize) -> Vec<TextImageItem> {
    (0..n)
        .map(|i| {
            let (words, label) = if i % 2 == 0 {
                (POSITIVE[(i / 2) % POSITIVE.len()], "positive")
            } else {
                (NEGATIVE[(i / 2) % NEGATIVE.len()], "negative")
            };
            TextImageItem {
                image: render_text(words),
                text: words.into(),
                label: label.into(),
            }
        })
        .collect()
}

const HATEFUL_TEXT: [&str; 4] = ["we hate them", "go away you", "they are vile", "hate them all"];
const BENIGN_TEXT: [&str; 4] = ["we love cats", "happy monday", "nice weather", "lunch time"];

pub fn hateful(n: usize) -> Vec<TextImageItem> {
    (0..n)
        .map(|i| {
            let (words, label) = if i % 2 == 0 {
                (HATEFUL_TEXT[(i / 2) % HATEFUL_TEXT.len()], "yes")
            } else {
                (BENIGN_TEXT[(i / 2) % BENIGN_TEXT.len()], "no")
            };
            TextImageItem {
                image: render_text(words),
                text: words.into(),
                label: label.into(),
            }
        })
        .collect()
}

const BOOKS: [(&str, &str, &str); 4] = [
    ("Deep Waters", "Harbor Press", "2019"),
    ("Night Trains", "Lantern House", "2004"),
    ("Small Gardens", "Green Leaf Books", "2021"),
    ("Cold Stars", "Orbit Row", "1998"),
];

pub fn websrc(n: usize) -> Vec<WebItem> {
    (0..n)
        .map(|i| {
            let (title, publisher, year) = BOOKS[(i / 2) % BOOKS.len()];
            let context = format!("Title: {title} Publisher: {publisher} Year: {year}");
            let (question, answer) = if i % 2 == 0 {
                ("Who is the publisher of this book?", publisher)
            } else {
                ("When was this book published?", year)
            };
            WebItem {
                image: render_text(title),
                context,
                question: question.into(),
                answer: answer.into(),
            }
        })
        .collect()
}

/// Images labelled with their shape name; the label set is all shapes.
pub fn classification(n: usize) -> Vec<ClassItem> {
    (0..n)
        .map(|i| ClassItem {
            image: shape_image(i),
            label: SHAPES[shape_color(i).0].into(),
        })
        .collect()
}

/// Pairs of look-alike categories told apart by their descriptions.
const CUB_GROUPS: [[(&str, &str, usize); 2]; 2] = [
    [
        ("ring", "It is round and has no corners.", 0),
        ("block", "It has four straight sides and four corners.", 1),
    ],
    [
        ("wedge", "It is pointed at the top and wide at the bottom.", 2),
        ("plus", "It is made of two bars that cross in the middle.", 3),
    ],
];

pub fn cub(n: usize) -> Vec<CubItem> {
    (0..n)
        .map(|i| {
            let group = &CUB_GROUPS[(i / 2) % CUB_GROUPS.len()];
            let (name, _, shape) = group[i % 2];
            CubItem {
                image: cell(shape, (i / 4) % COLORS.len(), 0.6),
                general_category: "shape".into(),
                options: group
                    .iter()
                    .map(|(n, d, _)| OptionItem {
                        name: (*n).into(),
                        description: (*d).into(),
                    })
                    .collect(),
                label: name.into(),
            }
        })
        .collect()
}

const SIZE_PAIRS: [(&str, &str, bool); 4] = [
    ("a sofa", "a cat", true),
    ("a mouse", "a house", false),
    ("a truck", "a cup", true),
    ("an ant", "a dog", false),
];
const OBJECT_COLORS: [(&str, &str); 4] = [("the sky", "blue"), ("grass", "green"), ("snow", "white"), ("a lemon", "yellow")];
const COLOR_TERMS: [&str; 5] = ["blue", "green", "white", "yellow", "red"];

pub fn language(n: usize) -> Vec<LangItem> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                let (a, b, yes) = SIZE_PAIRS[(i / 2) % SIZE_PAIRS.len()];
                LangItem {
                    context: format!("Is {a} larger than {b}?"),
                    options: vec!["Yes".into(), "No".into()],
                    answer: if yes { 0 } else { 1 },
                }
            } else {
                let (obj, color) = OBJECT_COLORS[(i / 2) % OBJECT_COLORS.len()];
                LangItem {
                    context: format!("The color of {obj} is?"),
                    options: COLOR_TERMS.iter().map(|s| s.to_string()).collect(),
                    answer: COLOR_TERMS.iter().position(|c| *c == color).unwrap(),
                }
            }
        })
        .collect()
}

/// A dataset of `n` items for `task` (one of the names in
/// [`crate::data::TASKS`]).
pub fn dataset(task: &str, n: usize, seed: u64) -> Result<Dataset> {
    Ok(match task {
        "caption" => Dataset::Caption(captions(n)),
        "vqa" => Dataset::Vqa(vqa(n)),
        "sst2" => Dataset::Sst2(sentiment(n)),
        "hateful" => Dataset::Hateful(hateful(n)),
        "websrc" => Dataset::WebSrc(websrc(n)),
        "imagenet" => Dataset::ImageNet(classification(n)),
        "cub" => Dataset::Cub(cub(n)),
        "raven" => Dataset::Raven(
            raven_instances(n, seed)
                .into_iter()
                .map(|r| RavenItem {
                    given: r.given,
                    candidates: r.candidates,
                    answer_index: r.answer_index,
                })
                .collect(),
        ),
        "lang" => Dataset::Lang(language(n)),
        other => return Err(crate::error::EvalError::Usage(format!("unknown task `{other}`"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raven_instances_are_well_formed() {
        for inst in raven_instances(200, 1) {
            let correct = &inst.candidates[inst.answer_index];
            for (i, c) in inst.candidates.iter().enumerate() {
                if i != inst.answer_index {
                    assert_ne!(c, correct);
                }
            }
        }
    }

    #[test]
    fn rendered_words_differ() {
        assert_ne!(render_text("good"), render_text("bad"));
        assert!(render_text("x").max_channel_variance() > 1e-3);
    }
}
