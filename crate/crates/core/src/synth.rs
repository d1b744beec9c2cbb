//! Procedural images and documents for desk-scale experiments.

use crate::error::Result;
use crate::image::ImageTensor;
use crate::stream::{MultimodalDocument, Segment};

pub const COLORS: [(&str, [f32; 3]); 8] = [
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.8, 0.2]),
    ("blue", [0.15, 0.25, 0.95]),
    ("yellow", [0.95, 0.9, 0.1]),
    ("purple", [0.6, 0.2, 0.8]),
    ("orange", [1.0, 0.55, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("cyan", [0.1, 0.9, 0.9]),
];

pub const SHAPES: [&str; 4] = ["circle", "square", "triangle", "cross"];

const BACKGROUND: [f32; 3] = [0.2, 0.2, 0.2];

/// Whether the point `(u, v)`, centred and scaled to `[-1, 1]`, lies
/// inside a shape of half-extent `r`.
fn inside(shape: usize, u: f32, v: f32, r: f32) -> bool {
    match shape % SHAPES.len() {
        0 => u * u + v * v <= r * r,
        1 => u.abs() <= r && v.abs() <= r,
        2 => v <= r && v >= -r && u.abs() <= (v + r) / 2.0,
        _ => (u.abs() <= r / 3.0 && v.abs() <= r) || (v.abs() <= r / 3.0 && u.abs() <= r),
    }
}

/// A `size × size` image of one shape on a dark background. `extent` is the
/// shape's half-size as a fraction of the image half-size.
pub fn render(shape: usize, color: usize, size: usize, extent: f32) -> ImageTensor {
    let rgb = COLORS[color % COLORS.len()].1;
    ImageTensor::from_fn(size, size, |y, x| {
        let u = (2.0 * x as f32 + 1.0) / size as f32 - 1.0;
        let v = (2.0 * y as f32 + 1.0) / size as f32 - 1.0;
        if inside(shape, u, v, extent) {
            rgb
        } else {
            BACKGROUND
        }
    })
    .expect("valid size")
}

pub fn caption(shape: usize, color: usize) -> String {
    format!(" a {} {}.", COLORS[color % COLORS.len()].0, SHAPES[shape % SHAPES.len()])
}

pub const CAPTION_PREFIX: &str = "Look:";

/// Document `i` shows shape `i % 4` in colour `(i / 4) % 8`, so the first
/// 32 are pairwise distinct: `[Look:, image, " a <colour> <shape>."]`.
pub fn caption_documents(n: usize, size: usize) -> Result<Vec<MultimodalDocument>> {
    (0..n)
        .map(|i| {
            let (shape, color) = (i % SHAPES.len(), (i / SHAPES.len()) % COLORS.len());
            MultimodalDocument::new([
                Segment::Text(CAPTION_PREFIX.into()),
                Segment::Image(render(shape, color, size, 0.6)),
                Segment::Text(caption(shape, color)),
            ])
        })
        .collect()
}
