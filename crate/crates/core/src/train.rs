//! Training: learning-rate schedule, mixed-source batches and the main
//! loop, shared by pretraining and instruction tuning.

use std::fmt::Write as _;
use std::path::Path;

use mmlm_numerics::{optim::AdamWConfig, optim::OptimizerState, Gradients, NumericsError, Tape};
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::layers::{seeded, Mode};
use crate::model::MultimodalLm;
use crate::stream::{
    encode_document_with, pack_full_sentences, EncodedUnit, MaskPolicy, MultimodalDocument, PackedSequence, Segment,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceTag {
    Text,
    Pair,
    Interleaved,
    Instruction,
}

impl SourceTag {
    pub const ALL: [SourceTag; 4] = [SourceTag::Text, SourceTag::Pair, SourceTag::Interleaved, SourceTag::Instruction];

    pub fn name(self) -> &'static str {
        match self {
            SourceTag::Text => "text",
            SourceTag::Pair => "pair",
            SourceTag::Interleaved => "interleaved",
            SourceTag::Instruction => "instruction",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Text-only documents are text corpus, a single image followed by a
    /// single text is an image-caption pair, anything else is interleaved.
    pub fn classify(doc: &MultimodalDocument) -> SourceTag {
        match doc.segments() {
            s if doc.image_count() == 0 => {
                debug_assert!(!s.is_empty());
                SourceTag::Text
            }
            [Segment::Image(_), Segment::Text(_)] => SourceTag::Pair,
            _ => SourceTag::Interleaved,
        }
    }
}

/// Sequences per step for each source, indexed like [`SourceTag::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quotas(pub [usize; 4]);

impl Quotas {
    pub fn get(&self, tag: SourceTag) -> usize {
        self.0[tag.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub adam: AdamWConfig,
    pub quotas: Quotas,
    /// Packed sequence length.
    pub seq_len: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Rescale gradients whose global norm exceeds this.
    pub grad_clip: Option<f64>,
    pub include_guard_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            warmup_steps: 25,
            peak_lr: 1e-3,
            adam: AdamWConfig::default(),
            quotas: Quotas([8, 8, 4, 0]),
            seq_len: 128,
            seed: 0,
            checkpoint_every: 100,
            grad_clip: None,
            include_guard_targets: true,
        }
    }
}

impl TrainConfig {
    /// Full-scale pretraining schedule and batch composition.
    pub fn paper_scale() -> Self {
        Self {
            total_steps: 300_000,
            warmup_steps: 375,
            peak_lr: 2e-4,
            quotas: Quotas([256, 6144, 128, 0]),
            seq_len: 2048,
            ..Self::default()
        }
    }

    /// Instruction-tuning stage derived from a pretraining config: a tenth
    /// of the peak rate and the instruction:text:pair:interleaved mix of
    /// 256:32:768:16 divided by 32 (the odd interleaved share rounds up).
    pub fn instruction_from(base: &TrainConfig) -> Self {
        Self {
            total_steps: 100,
            warmup_steps: 5,
            peak_lr: base.peak_lr * 0.1,
            quotas: Quotas([1, 24, 1, 8]),
            ..base.clone()
        }
    }

    /// Full-scale instruction-tuning stage.
    pub fn paper_instruction() -> Self {
        Self {
            total_steps: 10_000,
            warmup_steps: 375,
            peak_lr: 2e-5,
            quotas: Quotas([32, 768, 16, 256]),
            seq_len: 2048,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.into()));
        if self.warmup_steps >= self.total_steps {
            return bad("train.warmup_steps must be below train.total_steps");
        }
        if self.quotas.total() == 0 {
            return bad("at least one batch quota must be positive");
        }
        if !(self.peak_lr >= 0.0) {
            return bad("train.peak_lr must be non-negative");
        }
        if self.seq_len < 2 {
            return bad("train.seq_len must be at least 2");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("train.grad_clip must be positive");
        }
        Ok(())
    }

    /// Linear warmup from 0 to the peak, then linear decay to 0 at the
    /// last step.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        lr_at(step, self.warmup_steps, self.total_steps, self.peak_lr)
    }
}

pub fn lr_at(step: u64, warmup: u64, total: u64, peak: f64) -> Result<f64> {
    if step > total {
        return Err(CoreError::StepOutOfRange { step, total });
    }
    Ok(if step <= warmup {
        if warmup == 0 {
            peak
        } else {
            peak * (step as f64 / warmup as f64)
        }
    } else {
        peak * ((total - step) as f64 / (total - warmup) as f64)
    })
}

/// Sequences of one step, as (source, index into that source's pool).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedBatch {
    pub items: Vec<(SourceTag, usize)>,
}

#[derive(Clone, Debug)]
struct Cursor {
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

/// Cycles each source independently in a per-epoch shuffled order and
/// draws exactly the quota from each per batch.
#[derive(Clone, Debug)]
pub struct BatchMixer {
    sizes: [usize; 4],
    quotas: Quotas,
    seed: u64,
    cursors: [Cursor; 4],
}

impl BatchMixer {
    pub fn new(sizes: [usize; 4], quotas: Quotas, seed: u64) -> Result<Self> {
        for tag in SourceTag::ALL {
            if quotas.get(tag) > 0 && sizes[tag.index()] == 0 {
                return Err(CoreError::EmptySource(tag.name()));
            }
        }
        let cursors = SourceTag::ALL.map(|tag| Cursor {
            epoch: 0,
            pos: 0,
            order: Self::order(seed, tag, 0, sizes[tag.index()]),
        });
        Ok(Self {
            sizes,
            quotas,
            seed,
            cursors,
        })
    }

    fn order(seed: u64, tag: SourceTag, epoch: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seeded(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15), 100 + tag.index() as u64);
        order.shuffle(&mut rng);
        order
    }

    pub fn next_batch(&mut self) -> MixedBatch {
        let mut items = Vec::with_capacity(self.quotas.total());
        for tag in SourceTag::ALL {
            let n = self.sizes[tag.index()];
            for _ in 0..self.quotas.get(tag) {
                let c = &mut self.cursors[tag.index()];
                if c.pos == n {
                    c.epoch += 1;
                    c.pos = 0;
                    c.order = Self::order(self.seed, tag, c.epoch, n);
                }
                items.push((tag, c.order[c.pos]));
                c.pos += 1;
            }
        }
        MixedBatch { items }
    }
}

/// Training sequences grouped by source.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    pub pools: [Vec<PackedSequence>; 4],
}

impl Sources {
    pub fn get(&self, tag: SourceTag) -> &[PackedSequence] {
        &self.pools[tag.index()]
    }

    pub fn set(&mut self, tag: SourceTag, seqs: Vec<PackedSequence>) {
        self.pools[tag.index()] = seqs;
    }

    pub fn sizes(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.pools[i].len())
    }
}

/// Encodes documents, routes each to its source by [`SourceTag::classify`]
/// and packs every source separately. Instruction units form the
/// instruction source.
pub fn build_sources(
    docs: &[MultimodalDocument],
    instructions: Vec<EncodedUnit>,
    run: &RunConfig,
) -> Result<Sources> {
    let policy = MaskPolicy {
        include_guard_targets: run.train.include_guard_targets,
    };
    let mut units: [Vec<EncodedUnit>; 4] = Default::default();
    for doc in docs {
        let unit = encode_document_with(doc, run.model.soft_tokens, policy)?;
        units[SourceTag::classify(doc).index()].push(unit);
    }
    units[SourceTag::Instruction.index()] = instructions;
    let mut sources = Sources::default();
    for (tag, u) in SourceTag::ALL.into_iter().zip(units) {
        sources.set(tag, pack_full_sentences(u, run.train.seq_len)?);
    }
    Ok(sources)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Mean loss per source; `NaN` for sources absent from the batch.
    pub source_losses: [f64; 4],
    pub grad_norm: f64,
}

impl StepMetrics {
    /// `step=<n> lr=<f> loss=<f> source_losses=<text,pair,interleaved>`,
    /// plus `instruction_loss=<f>` when instruction data is in the batch.
    pub fn log_line(&self) -> String {
        let s = &self.source_losses;
        let mut line = format!(
            "step={} lr={} loss={} source_losses={},{},{}",
            self.step,
            self.lr,
            self.loss,
            fmt_loss(s[0]),
            fmt_loss(s[1]),
            fmt_loss(s[2])
        );
        if !s[3].is_nan() {
            let _ = write!(line, " instruction_loss={}", s[3]);
        }
        line
    }
}

fn fmt_loss(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        x.to_string()
    }
}

/// FNV-1a over the batch's sequence ids, identifying a batch in errors.
pub fn batch_fingerprint(seqs: &[&PackedSequence]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in seqs {
        for &id in &s.ids {
            for b in id.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

pub struct Trainer {
    pub model: MultimodalLm,
    pub run: RunConfig,
    pub optimizer: OptimizerState,
    /// Completed steps.
    pub step: u64,
    sources: Sources,
    mixer: BatchMixer,
}

impl Trainer {
    pub fn new(model: MultimodalLm, run: RunConfig, sources: Sources) -> Result<Self> {
        let optimizer = OptimizerState::new(&model.store, run.train.adam);
        Self::resume(model, run, sources, optimizer, 0)
    }

    /// Continues after `step` completed steps, replaying the batch schedule
    /// up to that point.
    pub fn resume(
        model: MultimodalLm,
        run: RunConfig,
        sources: Sources,
        optimizer: OptimizerState,
        step: u64,
    ) -> Result<Self> {
        run.train.validate()?;
        if step > run.train.total_steps {
            return Err(CoreError::StepOutOfRange {
                step,
                total: run.train.total_steps,
            });
        }
        let mut mixer = BatchMixer::new(sources.sizes(), run.train.quotas, run.train.seed)?;
        for _ in 0..step {
            mixer.next_batch();
        }
        Ok(Self {
            model,
            run,
            optimizer,
            step,
            sources,
            mixer,
        })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.run.train.total_steps
    }

    /// One optimization step: per-sequence forward and backward, loss
    /// averaged over every scored target in the batch, AdamW update.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let cfg = self.run.train.clone();
        let step = self.step + 1;
        let lr = cfg.lr_at(step)?;
        let batch = self.mixer.next_batch();
        let mut rng = seeded(cfg.seed, 1_000_000 + step);
        let mut grads = Gradients::new(self.model.store.len());
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        let seqs: Vec<&PackedSequence> = batch
            .items
            .iter()
            .map(|&(tag, i)| &self.sources.get(tag)[i])
            .collect();
        for (&(tag, _), seq) in batch.items.iter().zip(&seqs) {
            let mut tape = Tape::new(&self.model.store, self.model.precision);
            let (loss, count) = self.model.sequence_loss(&mut tape, seq, &mut Mode::Train(&mut rng))?;
            sums[tag.index()] += tape.scalar(loss);
            counts[tag.index()] += count;
            if count > 0 {
                grads.accumulate(&tape.backward(loss));
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(NumericsError::EmptyLoss.into());
        }
        let loss = sums.iter().sum::<f64>() / total as f64;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss {
                step,
                fingerprint: batch_fingerprint(&seqs),
            });
        }
        grads.scale(1.0 / total as f64);
        let grad_norm = grads.global_norm();
        if let Some(clip) = cfg.grad_clip {
            if grad_norm > clip {
                grads.scale(clip / grad_norm);
            }
        }
        self.optimizer.step(&mut self.model.store, &grads, lr)?;
        self.step = step;
        let source_losses = [0, 1, 2, 3].map(|i| if counts[i] == 0 { f64::NAN } else { sums[i] / counts[i] as f64 });
        Ok(StepMetrics {
            step,
            lr,
            loss,
            source_losses,
            grad_norm,
        })
    }

    /// Runs to the configured total, saving a checkpoint into `ckpt_dir`
    /// every `checkpoint_every` steps and at the end.
    pub fn run(&mut self, ckpt_dir: Option<&Path>, mut on_step: impl FnMut(&StepMetrics)) -> Result<()> {
        while !self.is_done() {
            let m = self.train_step()?;
            on_step(&m);
            let every = self.run.train.checkpoint_every;
            if let Some(dir) = ckpt_dir {
                if (every > 0 && self.step % every == 0) || self.is_done() {
                    self.save(dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::checkpoint::save(dir, &self.run, &self.model, Some(&self.optimizer), self.step)
    }
}
