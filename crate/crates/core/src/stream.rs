//! Multimodal documents flattened into one token stream.
//!
//! A unit looks like `<s> text <image> slot×V </image> text </s>`. Slot
//! positions carry soft tokens from the vision path instead of embeddings
//! of their ids.
//!
//! `target_mask[t]` says whether `ids[t]` is a loss target, i.e. whether
//! the prediction made at position `t − 1` is scored. Position 0 is never
//! a target.

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;
use crate::tokenizer::{tokenize, TokenId, BOS, EOS, IMAGE_END, IMAGE_START, PAD, SLOT};

#[derive(Clone, Debug, PartialEq)]
pub enum Segment {
    Text(String),
    Image(ImageTensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDocument {
    segments: Vec<Segment>,
}

impl MultimodalDocument {
    /// Merges adjacent text segments and drops empty ones.
    pub fn new(segments: impl IntoIterator<Item = Segment>) -> Result<Self> {
        let mut out: Vec<Segment> = Vec::new();
        for seg in segments {
            match seg {
                Segment::Text(t) if t.is_empty() => {}
                Segment::Text(t) => match out.last_mut() {
                    Some(Segment::Text(prev)) => prev.push_str(&t),
                    _ => out.push(Segment::Text(t)),
                },
                img => out.push(img),
            }
        }
        if out.is_empty() {
            return Err(CoreError::EmptyDocument);
        }
        Ok(Self { segments: out })
    }

    pub fn text(text: impl Into<String>) -> Result<Self> {
        Self::new([Segment::Text(text.into())])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTensor> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Image(img) => Some(img),
            Segment::Text(_) => None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.images().count()
    }
}

/// Slot interior `start..start + len`; `image_index` points into the
/// owner's image list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageSlot {
    pub start: usize,
    pub len: usize,
    pub image_index: usize,
}

impl ImageSlot {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, pos: usize) -> bool {
        (self.start..self.end()).contains(&pos)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskPolicy {
    /// Score the `<image>` / `</image>` guard tokens as targets.
    pub include_guard_targets: bool,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            include_guard_targets: true,
        }
    }
}

/// Model input without loss information.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Context {
    pub ids: Vec<TokenId>,
    pub image_slots: Vec<ImageSlot>,
    pub images: Vec<ImageTensor>,
}

impl Context {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push_text(&mut self, text: &str) {
        self.ids.extend(tokenize(text));
    }

    pub fn push_tokens(&mut self, ids: &[TokenId]) {
        self.ids.extend_from_slice(ids);
    }

    pub fn push_image(&mut self, image: ImageTensor, v: usize) {
        self.ids.push(IMAGE_START);
        self.image_slots.push(ImageSlot {
            start: self.ids.len(),
            len: v,
            image_index: self.images.len(),
        });
        self.ids.extend(std::iter::repeat_n(SLOT, v));
        self.ids.push(IMAGE_END);
        self.images.push(image);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUnit {
    pub ids: Vec<TokenId>,
    pub image_slots: Vec<ImageSlot>,
    pub images: Vec<ImageTensor>,
    pub target_mask: Vec<bool>,
}

impl EncodedUnit {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn context(&self) -> Context {
        Context {
            ids: self.ids.clone(),
            image_slots: self.image_slots.clone(),
            images: self.images.clone(),
        }
    }
}

fn mask_for(id: TokenId, policy: MaskPolicy) -> bool {
    match id {
        SLOT | PAD | BOS => false,
        IMAGE_START | IMAGE_END => policy.include_guard_targets,
        _ => true,
    }
}

/// BOS + segments, without the closing EOS.
pub fn encode_prompt(segments: &[Segment], v: usize) -> Context {
    let mut ctx = Context {
        ids: vec![BOS],
        ..Context::default()
    };
    for seg in segments {
        match seg {
            Segment::Text(t) => ctx.push_text(t),
            Segment::Image(img) => ctx.push_image(img.clone(), v),
        }
    }
    ctx
}

pub fn encode_document(doc: &MultimodalDocument, v: usize) -> Result<EncodedUnit> {
    encode_document_with(doc, v, MaskPolicy::default())
}

pub fn encode_document_with(doc: &MultimodalDocument, v: usize, policy: MaskPolicy) -> Result<EncodedUnit> {
    if v == 0 {
        return Err(CoreError::Config("soft-token count V must be at least 1".into()));
    }
    let mut ctx = encode_prompt(doc.segments(), v);
    ctx.ids.push(EOS);
    let mut target_mask: Vec<bool> = ctx.ids.iter().map(|&id| mask_for(id, policy)).collect();
    target_mask[0] = false;
    Ok(EncodedUnit {
        ids: ctx.ids,
        image_slots: ctx.image_slots,
        images: ctx.images,
        target_mask,
    })
}

/// `<s> instruction input output </s>` as one text stream; only the
/// output and the closing EOS are targets.
pub fn build_instruction_unit(instruction: &str, input: &str, output: &str) -> Result<EncodedUnit> {
    if output.is_empty() {
        return Err(CoreError::EmptyOutput);
    }
    let mut ids = vec![BOS];
    ids.extend(tokenize(instruction));
    ids.extend(tokenize(input));
    let prefix = ids.len();
    ids.extend(tokenize(output));
    ids.push(EOS);
    let target_mask = (0..ids.len()).map(|t| t >= prefix).collect();
    Ok(EncodedUnit {
        ids,
        image_slots: Vec::new(),
        images: Vec::new(),
        target_mask,
    })
}

/// Fixed-length training sequence: whole units followed by tail padding.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSequence {
    pub ids: Vec<TokenId>,
    pub image_slots: Vec<ImageSlot>,
    pub images: Vec<ImageTensor>,
    pub target_mask: Vec<bool>,
    pub pad: usize,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions before the padding.
    pub fn valid_len(&self) -> usize {
        self.ids.len() - self.pad
    }

    pub fn payload(&self) -> &[TokenId] {
        &self.ids[..self.valid_len()]
    }

    pub fn context(&self) -> Context {
        Context {
            ids: self.ids.clone(),
            image_slots: self.image_slots.clone(),
            images: self.images.clone(),
        }
    }

    /// Per-row targets for logits: row `t` predicts `ids[t + 1]`. The last
    /// row has no target.
    pub fn shifted_targets(&self) -> (Vec<usize>, Vec<bool>) {
        shifted(&self.ids, &self.target_mask)
    }

    /// A unit treated as an unpadded sequence of its own length.
    pub fn from_unit(unit: EncodedUnit) -> Self {
        PackedSequence {
            ids: unit.ids,
            image_slots: unit.image_slots,
            images: unit.images,
            target_mask: unit.target_mask,
            pad: 0,
        }
    }
}

pub fn shifted(ids: &[TokenId], mask: &[bool]) -> (Vec<usize>, Vec<bool>) {
    let n = ids.len();
    let mut targets = vec![0; n];
    let mut m = vec![false; n];
    for t in 0..n.saturating_sub(1) {
        targets[t] = ids[t + 1] as usize;
        m[t] = mask[t + 1];
    }
    (targets, m)
}

/// Cuts a unit longer than `len` into pieces of at most `len` positions,
/// only at text boundaries, never between `<image>` and `</image>`. Pieces
/// after the first do not score their first position, which has no
/// in-unit predecessor once split off.
pub fn split_unit(unit: &EncodedUnit, len: usize, unit_index: usize) -> Result<Vec<EncodedUnit>> {
    if unit.len() <= len {
        return Ok(vec![unit.clone()]);
    }
    let n = unit.len();
    // blocked[i]: cutting before position i would break a slot span.
    let mut blocked = vec![false; n + 1];
    for s in &unit.image_slots {
        let span = s.len + 2;
        if span > len {
            return Err(CoreError::SpanTooLong {
                unit: unit_index,
                span,
                len,
            });
        }
        for b in &mut blocked[s.start..=s.end()] {
            *b = true;
        }
    }
    let mut pieces = Vec::new();
    let mut begin = 0;
    while begin < n {
        let mut end = (begin + len).min(n);
        while end < n && blocked[end] {
            end -= 1;
        }
        debug_assert!(end > begin);
        let mut target_mask = unit.target_mask[begin..end].to_vec();
        if begin > 0 {
            target_mask[0] = false;
        }
        let mut images = Vec::new();
        let mut image_slots = Vec::new();
        for s in unit.image_slots.iter().filter(|s| s.start >= begin && s.end() <= end) {
            image_slots.push(ImageSlot {
                start: s.start - begin,
                len: s.len,
                image_index: images.len(),
            });
            images.push(unit.images[s.image_index].clone());
        }
        pieces.push(EncodedUnit {
            ids: unit.ids[begin..end].to_vec(),
            image_slots,
            images,
            target_mask,
        });
        begin = end;
    }
    Ok(pieces)
}

/// Greedy full-sentence packer. Units go into the current sequence while
/// they fit; a unit that does not fit closes it (padded) and starts the
/// next one.
#[derive(Debug)]
pub struct Packer {
    len: usize,
    current: PackedSequence,
    units_seen: usize,
}

impl Packer {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            current: Self::empty(),
            units_seen: 0,
        }
    }

    fn empty() -> PackedSequence {
        PackedSequence {
            ids: Vec::new(),
            image_slots: Vec::new(),
            images: Vec::new(),
            target_mask: Vec::new(),
            pad: 0,
        }
    }

    /// Adds one unit, returning any sequences completed by it. Units longer
    /// than the sequence length are split first.
    pub fn push(&mut self, unit: EncodedUnit) -> Result<Vec<PackedSequence>> {
        let index = self.units_seen;
        self.units_seen += 1;
        let mut done = Vec::new();
        for piece in split_unit(&unit, self.len, index)? {
            if self.current.len() + piece.len() > self.len {
                done.push(self.close());
            }
            self.append(piece);
            if self.current.len() == self.len {
                done.push(self.close());
            }
        }
        Ok(done)
    }

    /// Pads and returns the partially filled sequence, if any.
    pub fn finish(mut self) -> Option<PackedSequence> {
        (!self.current.is_empty()).then(|| self.close())
    }

    fn append(&mut self, piece: EncodedUnit) {
        let c = &mut self.current;
        let offset = c.ids.len();
        let image_base = c.images.len();
        c.image_slots.extend(piece.image_slots.iter().map(|s| ImageSlot {
            start: s.start + offset,
            len: s.len,
            image_index: s.image_index + image_base,
        }));
        c.ids.extend(piece.ids);
        c.target_mask.extend(piece.target_mask);
        c.images.extend(piece.images);
    }

    fn close(&mut self) -> PackedSequence {
        let mut seq = std::mem::replace(&mut self.current, Self::empty());
        seq.pad = self.len - seq.ids.len();
        seq.ids.resize(self.len, PAD);
        seq.target_mask.resize(self.len, false);
        seq
    }
}

pub fn pack_full_sentences(units: impl IntoIterator<Item = EncodedUnit>, len: usize) -> Result<Vec<PackedSequence>> {
    let mut packer = Packer::new(len);
    let mut out = Vec::new();
    for unit in units {
        out.extend(packer.push(unit)?);
    }
    out.extend(packer.finish());
    Ok(out)
}
