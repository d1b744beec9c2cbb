//! The causal multimodal decoder.
//!
//! Each block has two sublayers with the extra inner normalization:
//!
//! ```text
//! x += drop(out(LN(attn(xpos(q(LN x)), xpos(k(LN x)), v(LN x)))))
//! x += drop(fc2(LN(gelu(fc1(LN x)))))
//! ```
//!
//! Soft tokens from the resampler replace the token embeddings at slot
//! positions. Positions count uniformly over text and slot positions.

use mmlm_numerics::{autograd::AttnMask, ops::log_softmax, ParamId, ParamStore, Precision, Tape, Var};

use crate::error::{CoreError, Result};
use crate::generate::LanguageModel;
use crate::image::ImageTensor;
use crate::layers::{normal_tensor, seeded, LayerNorm, Linear, Mode};
use crate::stream::{Context, ImageSlot, PackedSequence};
use crate::tokenizer::{TokenId, VOCAB_SIZE};
use crate::vision::{PatchEncoder, PatchEncoderConfig, Resampler, ResamplerConfig};
use crate::xpos::{Role, XPosConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub ffn_width: usize,
    pub heads: usize,
    pub vocab_size: usize,
    /// Soft tokens per image (`V`).
    pub soft_tokens: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub xpos: XPosConfig,
    /// Xavier gain of the value, output and feed-forward projections.
    /// `None` derives `sqrt(ln(2·layers))`.
    pub init_gain: Option<f64>,
    pub resampler_heads: usize,
    pub resampler_ffn: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 64,
            ffn_width: 256,
            heads: 4,
            vocab_size: VOCAB_SIZE,
            soft_tokens: 8,
            max_len: 256,
            dropout: 0.1,
            xpos: XPosConfig::default(),
            init_gain: None,
            resampler_heads: 4,
            resampler_ffn: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The full-size architecture: 24 layers, width 2048, 32 heads, 64 soft
    /// tokens, context 2048. Vocabulary stays byte-level.
    pub fn paper_scale() -> Self {
        Self {
            layers: 24,
            width: 2048,
            ffn_width: 8192,
            heads: 32,
            soft_tokens: 64,
            max_len: 2048,
            resampler_heads: 32,
            resampler_ffn: 8192,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.layers == 0 {
            return bad("model.layers must be at least 1".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("model.width {} is not divisible by model.heads {}", self.width, self.heads));
        }
        if (self.width / self.heads) % 2 != 0 {
            return bad("head dimension must be even for xPos".into());
        }
        if self.max_len < 2 {
            return bad("model.max_len must be at least 2".into());
        }
        if self.vocab_size < VOCAB_SIZE {
            return bad(format!("model.vocab_size must be at least {VOCAB_SIZE}"));
        }
        if self.soft_tokens == 0 {
            return bad("model.soft_tokens must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("model.dropout {} outside [0, 1)", self.dropout));
        }
        if self.resampler_heads == 0 || self.width % self.resampler_heads != 0 {
            return bad("model.resampler_heads must divide model.width".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn magneto_gain(&self) -> f64 {
        self.init_gain.unwrap_or_else(|| (2.0 * self.layers as f64).ln().sqrt())
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub attn_ln: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub attn_inner_ln: LayerNorm,
    pub out: Linear,
    pub ffn_ln: LayerNorm,
    pub fc1: Linear,
    pub ffn_inner_ln: LayerNorm,
    pub fc2: Linear,
}

/// Per-layer intermediate values recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Queries and keys after the position transform.
    pub q: Var,
    pub k: Var,
    pub attention: Var,
    /// Layer-norm applications in the attention and feed-forward sublayers.
    pub norm_counts: [usize; 2],
}

pub struct ForwardOutput {
    /// `[L × vocab]`; row `t` scores the token at `t + 1`.
    pub logits: Var,
    pub layers: Vec<LayerTrace>,
    pub resampler_attention: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Position of the first row.
    pub start_pos: usize,
    /// Rows at or past this index are padding and are never attended to.
    pub valid: Option<usize>,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            start_pos: 0,
            valid: None,
        }
    }
}

impl DecoderBlock {
    fn new(store: &mut ParamStore, i: usize, cfg: &ModelConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let name = |s: &str| format!("decoder.blocks.{i}.{s}");
        let (d, f, g) = (cfg.width, cfg.ffn_width, cfg.magneto_gain());
        Self {
            attn_ln: LayerNorm::new(store, &name("attn_ln"), d),
            q: Linear::new(store, &name("q"), d, d, 1.0, true, rng),
            k: Linear::new(store, &name("k"), d, d, 1.0, true, rng),
            v: Linear::new(store, &name("v"), d, d, g, true, rng),
            attn_inner_ln: LayerNorm::new(store, &name("attn_inner_ln"), d),
            out: Linear::new(store, &name("out"), d, d, g, true, rng),
            ffn_ln: LayerNorm::new(store, &name("ffn_ln"), d),
            fc1: Linear::new(store, &name("fc1"), d, f, g, true, rng),
            ffn_inner_ln: LayerNorm::new(store, &name("ffn_inner_ln"), f),
            fc2: Linear::new(store, &name("fc2"), f, d, g, true, rng),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        cfg: &ModelConfig,
        opts: ForwardOptions,
        mode: &mut Mode,
    ) -> Result<(Var, LayerTrace)> {
        let rows = tape.dims(x).0;
        let valid = opts.valid.unwrap_or(rows);
        let (heads, dh) = (cfg.heads, cfg.head_dim());

        let before = tape.layer_norm_count();
        let h = self.attn_ln.forward(tape, x)?;
        let q = self.q.forward(tape, h)?;
        let k = self.k.forward(tape, h)?;
        let v = self.v.forward(tape, h)?;
        let q = tape.pair_rotate(q, cfg.xpos.matrix_coefficients(opts.start_pos, rows, heads, dh, Role::Query))?;
        let k = tape.pair_rotate(k, cfg.xpos.matrix_coefficients(opts.start_pos, rows, heads, dh, Role::Key))?;
        let keep = mode.keep_mask(heads * rows * rows, cfg.dropout);
        let attention = tape.attention(q, k, v, heads, AttnMask::Causal { valid }, 1.0 / (dh as f64).sqrt(), keep)?;
        let a = self.attn_inner_ln.forward(tape, attention)?;
        let a = self.out.forward(tape, a)?;
        let a = mode.dropout(tape, a, cfg.dropout)?;
        let x = tape.add(x, a)?;
        let mid = tape.layer_norm_count();

        let h = self.ffn_ln.forward(tape, x)?;
        let f = self.fc1.forward(tape, h)?;
        let f = tape.gelu(f);
        let f = self.ffn_inner_ln.forward(tape, f)?;
        let f = self.fc2.forward(tape, f)?;
        let f = mode.dropout(tape, f, cfg.dropout)?;
        let x = tape.add(x, f)?;
        let after = tape.layer_norm_count();

        Ok((
            x,
            LayerTrace {
                q,
                k,
                attention,
                norm_counts: [mid - before, after - mid],
            },
        ))
    }
}

pub struct MultimodalLm {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub precision: Precision,
    pub encoder: PatchEncoder,
    pub resampler: Resampler,
    pub tok_emb: ParamId,
    pub blocks: Vec<DecoderBlock>,
    pub final_ln: LayerNorm,
    pub head: Linear,
}

impl MultimodalLm {
    /// Fresh model; parameters are drawn from a generator seeded by
    /// `config.seed`.
    pub fn new(config: ModelConfig, vision: PatchEncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded(config.seed, 1);
        let encoder = PatchEncoder::new(&mut store, &vision, &mut rng)?;
        let resampler = Resampler::new(
            &mut store,
            ResamplerConfig {
                v: config.soft_tokens,
                heads: config.resampler_heads,
                ffn_dim: config.resampler_ffn,
            },
            vision.embed_dim,
            config.width,
            &mut rng,
        )?;
        let tok_emb = store.add(
            "decoder.tok_emb",
            normal_tensor(vec![config.vocab_size, config.width], (config.width as f64).powf(-0.5), &mut rng),
            true,
        );
        let blocks = (0..config.layers)
            .map(|i| DecoderBlock::new(&mut store, i, &config, &mut rng))
            .collect();
        let final_ln = LayerNorm::new(&mut store, "decoder.final_ln", config.width);
        let head = Linear::new(&mut store, "decoder.head", config.width, config.vocab_size, 1.0, true, &mut rng);
        Ok(Self {
            config,
            store,
            precision: Precision::Single,
            encoder,
            resampler,
            tok_emb,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn vision_config(&self) -> &PatchEncoderConfig {
        self.encoder.config()
    }

    /// Soft tokens for one image, resized to the encoder's input size.
    pub fn encode_image(&self, tape: &mut Tape, img: &ImageTensor) -> Result<crate::vision::Resampled> {
        let size = self.vision_config().image_size;
        let img = img.resize(size, size)?;
        let patches = self.encoder.patch_embed(tape, &img)?;
        self.resampler.resample(tape, patches)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[TokenId],
        slots: &[ImageSlot],
        images: &[ImageTensor],
        opts: ForwardOptions,
        mode: &mut Mode,
    ) -> Result<ForwardOutput> {
        let mut per_image: Vec<Option<Var>> = vec![None; images.len()];
        let mut soft = Vec::with_capacity(slots.len());
        let mut resampler_attention = Vec::new();
        for s in slots {
            let img = images.get(s.image_index).ok_or(CoreError::SlotMismatch {
                slots: slots.len(),
                groups: images.len(),
            })?;
            let var = match per_image[s.image_index] {
                Some(v) => v,
                None => {
                    let r = self.encode_image(tape, img)?;
                    resampler_attention.push(r.attention);
                    per_image[s.image_index] = Some(r.tokens);
                    r.tokens
                }
            };
            soft.push(var);
        }
        let mut out = self.forward_with_soft_tokens(tape, ids, slots, &soft, opts, mode)?;
        out.resampler_attention = resampler_attention;
        Ok(out)
    }

    /// Forward pass with one `[len × width]` soft-token group per slot.
    pub fn forward_with_soft_tokens(
        &self,
        tape: &mut Tape,
        ids: &[TokenId],
        slots: &[ImageSlot],
        soft: &[Var],
        opts: ForwardOptions,
        mode: &mut Mode,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let len = ids.len();
        if len == 0 {
            return Err(CoreError::Config("empty input sequence".into()));
        }
        if len > cfg.max_len {
            return Err(CoreError::TooLong { len, max: cfg.max_len });
        }
        if slots.len() != soft.len() {
            return Err(CoreError::SlotMismatch {
                slots: slots.len(),
                groups: soft.len(),
            });
        }
        let mut picks: Vec<(usize, usize)> = Vec::with_capacity(len);
        let mut slot_iter = slots.iter().enumerate().peekable();
        let mut t = 0;
        while t < len {
            if let Some(&(k, s)) = slot_iter.peek() {
                if s.start == t {
                    if tape.dims(soft[k]) != (s.len, cfg.width) || s.end() > len {
                        return Err(CoreError::SlotMismatch {
                            slots: slots.len(),
                            groups: soft.len(),
                        });
                    }
                    picks.extend((0..s.len).map(|r| (1 + k, r)));
                    t = s.end();
                    slot_iter.next();
                    continue;
                }
            }
            let id = ids[t] as usize;
            if id >= cfg.vocab_size {
                return Err(CoreError::TokenOutOfRange {
                    id: ids[t],
                    vocab: cfg.vocab_size,
                });
            }
            picks.push((0, id));
            t += 1;
        }
        if slot_iter.next().is_some() {
            return Err(CoreError::SlotMismatch {
                slots: slots.len(),
                groups: soft.len(),
            });
        }
        let emb = tape.param(self.tok_emb);
        let sources: Vec<Var> = std::iter::once(emb).chain(soft.iter().copied()).collect();
        let mut x = tape.gather_rows(&sources, picks)?;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (nx, trace) = b.forward(tape, x, cfg, opts, mode)?;
            x = nx;
            layers.push(trace);
        }
        let x = self.final_ln.forward(tape, x)?;
        let logits = self.head.forward(tape, x)?;
        Ok(ForwardOutput {
            logits,
            layers,
            resampler_attention: Vec::new(),
        })
    }

    /// Summed masked next-token loss of one sequence and its target count.
    pub fn sequence_loss(&self, tape: &mut Tape, seq: &PackedSequence, mode: &mut Mode) -> Result<(Var, usize)> {
        let opts = ForwardOptions {
            start_pos: 0,
            valid: Some(seq.valid_len()),
        };
        let out = self.forward(tape, &seq.ids, &seq.image_slots, &seq.images, opts, mode)?;
        let (targets, mask) = seq.shifted_targets();
        let count = mask.iter().filter(|&&m| m).count();
        let loss = tape.nll_sum(out.logits, targets, mask, 1.0)?;
        Ok((loss, count))
    }

    /// Mean masked loss in evaluation mode.
    pub fn eval_loss(&self, seq: &PackedSequence) -> Result<f64> {
        let mut tape = Tape::inference(&self.store, self.precision);
        let (loss, count) = self.sequence_loss(&mut tape, seq, &mut Mode::Eval)?;
        if count == 0 {
            return Err(mmlm_numerics::NumericsError::EmptyLoss.into());
        }
        Ok(tape.scalar(loss) / count as f64)
    }

    /// Raw scaled attention logits `[head][t][s]` of one layer for causal
    /// pairs `s ≤ t`; other entries are zero.
    pub fn attention_logits(&self, ctx: &Context, layer: usize, start_pos: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.store, Precision::Double);
        let opts = ForwardOptions { start_pos, valid: None };
        let out = self.forward(&mut tape, &ctx.ids, &ctx.image_slots, &ctx.images, opts, &mut Mode::Eval)?;
        let tr = &out.layers[layer];
        let (q, k) = (tape.value(tr.q), tape.value(tr.k));
        let (n, d, heads) = (ctx.len(), self.config.width, self.config.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut logits = vec![0.0; heads * n * n];
        for h in 0..heads {
            for t in 0..n {
                for s in 0..=t {
                    let mut dot = 0.0;
                    for c in h * dh..(h + 1) * dh {
                        dot += q[t * d + c] * k[s * d + c];
                    }
                    logits[(h * n + t) * n + s] = dot * scale;
                }
            }
        }
        Ok(logits)
    }

    /// Logits of every row, evaluation mode.
    pub fn logits(&self, ctx: &Context) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.store, self.precision);
        let out = self.forward(
            &mut tape,
            &ctx.ids,
            &ctx.image_slots,
            &ctx.images,
            ForwardOptions::default(),
            &mut Mode::Eval,
        )?;
        Ok(tape.value(out.logits).to_vec())
    }
}

impl LanguageModel for MultimodalLm {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn log_probs(&self, ctx: &Context, from: usize) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits(ctx)?;
        let v = self.config.vocab_size;
        Ok((from..ctx.len()).map(|t| log_softmax(&logits[t * v..(t + 1) * v])).collect())
    }
}
