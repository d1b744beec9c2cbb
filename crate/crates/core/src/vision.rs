//! Image-side embedding path: a small patch encoder standing in for the
//! pretrained vision tower, and the attentive resampler.
//!
//! Only the last encoder block is trainable when `freeze_below_last` is set;
//! the patch projection, position embeddings and every earlier block are
//! registered as frozen parameters and never receive gradients.

use mmlm_numerics::{autograd::AttnMask, ParamId, ParamStore, Tape, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::image::{ImageTensor, CHANNELS};
use crate::layers::{normal_tensor, LayerNorm, Linear};

#[derive(Clone, Debug, PartialEq)]
pub struct PatchEncoderConfig {
    /// Images are resized to `image_size × image_size` before encoding.
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub freeze_below_last: bool,
}

impl Default for PatchEncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            embed_dim: 32,
            depth: 2,
            heads: 2,
            ffn_dim: 64,
            freeze_below_last: true,
        }
    }
}

impl PatchEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(CoreError::Config("vision.depth must be at least 1".into()));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(CoreError::NotDivisible {
                height: self.image_size,
                width: self.image_size,
                patch: self.patch_size,
            });
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "vision.embed_dim {} is not divisible by vision.heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_values(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }
}

/// Splits an image into non-overlapping patches, each flattened row-major
/// over `(y, x, channel)`. Patches are ordered row by row.
pub fn patchify(img: &ImageTensor, patch: usize) -> Result<(usize, Vec<f64>)> {
    let (h, w) = (img.height(), img.width());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(CoreError::NotDivisible { height: h, width: w, patch });
    }
    let (ph, pw) = (h / patch, w / patch);
    let mut out = Vec::with_capacity(h * w * CHANNELS);
    for py in 0..ph {
        for px in 0..pw {
            for y in py * patch..(py + 1) * patch {
                for x in px * patch..(px + 1) * patch {
                    out.extend(img.pixel(y, x).iter().map(|&v| v as f64));
                }
            }
        }
    }
    Ok((ph * pw, out))
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    ln1: LayerNorm,
    qkv: [Linear; 3],
    out: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderBlock {
    fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.ln1.params().into();
        for l in self.qkv.iter().chain([&self.out]) {
            p.extend(l.params());
        }
        p.extend(self.ln2.params());
        p.extend(self.fc1.params());
        p.extend(self.fc2.params());
        p
    }

    fn forward(&self, tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
        let h = self.ln1.forward(tape, x)?;
        let q = self.qkv[0].forward(tape, h)?;
        let k = self.qkv[1].forward(tape, h)?;
        let v = self.qkv[2].forward(tape, h)?;
        let dh = tape.dims(q).1 / heads;
        let a = tape.attention(q, k, v, heads, AttnMask::Full, 1.0 / (dh as f64).sqrt(), None)?;
        let o = self.out.forward(tape, a)?;
        let x = tape.add(x, o)?;
        let h = self.ln2.forward(tape, x)?;
        let f = self.fc1.forward(tape, h)?;
        let f = tape.gelu(f);
        let f = self.fc2.forward(tape, f)?;
        Ok(tape.add(x, f)?)
    }
}

#[derive(Clone, Debug)]
pub struct PatchEncoder {
    cfg: PatchEncoderConfig,
    proj: ParamId,
    pos: ParamId,
    blocks: Vec<EncoderBlock>,
}

impl PatchEncoder {
    pub fn new(store: &mut ParamStore, cfg: &PatchEncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let pv = cfg.patch_values();
        let proj = store.add(
            "vision.patch_proj",
            normal_tensor(vec![pv, d], crate::layers::xavier_std(pv, d, 1.0), rng),
            true,
        );
        let pos = store.add("vision.pos_emb", normal_tensor(vec![cfg.num_patches(), d], 0.02, rng), false);
        let blocks = (0..cfg.depth)
            .map(|i| {
                let name = format!("vision.blocks.{i}");
                let lin = |store: &mut ParamStore, n: &str, a, b, rng: &mut ChaCha8Rng| {
                    Linear::new(store, &format!("{name}.{n}"), a, b, 1.0, true, rng)
                };
                EncoderBlock {
                    ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
                    qkv: [
                        lin(store, "q", d, d, rng),
                        lin(store, "k", d, d, rng),
                        lin(store, "v", d, d, rng),
                    ],
                    out: lin(store, "out", d, d, rng),
                    ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
                    fc1: lin(store, "fc1", d, cfg.ffn_dim, rng),
                    fc2: lin(store, "fc2", cfg.ffn_dim, d, rng),
                }
            })
            .collect();
        let enc = Self {
            cfg: cfg.clone(),
            proj,
            pos,
            blocks,
        };
        if cfg.freeze_below_last {
            for id in enc.frozen_params() {
                store.set_trainable(id, false);
            }
        }
        Ok(enc)
    }

    pub fn config(&self) -> &PatchEncoderConfig {
        &self.cfg
    }

    /// Parameters that stay fixed under `freeze_below_last`.
    pub fn frozen_params(&self) -> Vec<ParamId> {
        let mut p = vec![self.proj, self.pos];
        for b in &self.blocks[..self.blocks.len() - 1] {
            p.extend(b.params());
        }
        p
    }

    pub fn block_params(&self, block: usize) -> Vec<ParamId> {
        self.blocks[block].params()
    }

    /// Patch projection plus position embeddings, before any block.
    pub fn embed_patches(&self, tape: &mut Tape, img: &ImageTensor) -> Result<Var> {
        let (n, values) = patchify(img, self.cfg.patch_size)?;
        if n != self.cfg.num_patches() {
            return Err(CoreError::InvalidImage(format!(
                "{}×{} image gives {n} patches, encoder expects {}",
                img.height(),
                img.width(),
                self.cfg.num_patches()
            )));
        }
        let x = tape.constant(n, self.cfg.patch_values(), values);
        let w = tape.param(self.proj);
        let x = tape.linear(x, w, None)?;
        let pos = tape.param(self.pos);
        Ok(tape.add(x, pos)?)
    }

    pub fn blocks_forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(tape, x, self.cfg.heads)?;
        }
        Ok(x)
    }

    /// `[patches × embed_dim]` features of an image of the configured size.
    pub fn patch_embed(&self, tape: &mut Tape, img: &ImageTensor) -> Result<Var> {
        let x = self.embed_patches(tape, img)?;
        self.blocks_forward(tape, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResamplerConfig {
    /// Soft tokens per image.
    pub v: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

/// Output of one resampling pass.
pub struct Resampled {
    /// `[V × width]` soft tokens.
    pub tokens: Var,
    /// Cross-attention node; its probabilities are `[head][latent][patch]`.
    pub attention: Var,
}

/// Learned latents that cross-attend over patch features. Keys and values
/// come from the patches alone, so each latent's output is a convex
/// combination of per-patch values.
#[derive(Clone, Debug)]
pub struct Resampler {
    cfg: ResamplerConfig,
    latents: ParamId,
    ln_latents: LayerNorm,
    ln_patches: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    ln_ffn: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    proj: Linear,
}

impl Resampler {
    pub fn new(
        store: &mut ParamStore,
        cfg: ResamplerConfig,
        patch_dim: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.v == 0 {
            return Err(CoreError::Config("model.soft_tokens must be at least 1".into()));
        }
        if cfg.heads == 0 || width % cfg.heads != 0 {
            return Err(CoreError::Config("resampler heads must divide the model width".into()));
        }
        let lin = |store: &mut ParamStore, n: &str, a, b, rng: &mut ChaCha8Rng| {
            Linear::new(store, &format!("resampler.{n}"), a, b, 1.0, true, rng)
        };
        Ok(Self {
            latents: store.add("resampler.latents", normal_tensor(vec![cfg.v, width], 0.02, rng), false),
            ln_latents: LayerNorm::new(store, "resampler.ln_latents", width),
            ln_patches: LayerNorm::new(store, "resampler.ln_patches", patch_dim),
            q: lin(store, "q", width, width, rng),
            k: lin(store, "k", patch_dim, width, rng),
            v: lin(store, "v", patch_dim, width, rng),
            out: lin(store, "out", width, width, rng),
            ln_ffn: LayerNorm::new(store, "resampler.ln_ffn", width),
            fc1: lin(store, "fc1", width, cfg.ffn_dim, rng),
            fc2: lin(store, "fc2", cfg.ffn_dim, width, rng),
            proj: lin(store, "proj", width, width, rng),
            cfg,
        })
    }

    pub fn soft_tokens(&self) -> usize {
        self.cfg.v
    }

    pub fn resample(&self, tape: &mut Tape, patches: Var) -> Result<Resampled> {
        if tape.dims(patches).0 == 0 {
            return Err(CoreError::NoPatches);
        }
        let lat = tape.param(self.latents);
        let hl = self.ln_latents.forward(tape, lat)?;
        let hp = self.ln_patches.forward(tape, patches)?;
        let q = self.q.forward(tape, hl)?;
        let k = self.k.forward(tape, hp)?;
        let v = self.v.forward(tape, hp)?;
        let dh = tape.dims(q).1 / self.cfg.heads;
        let attention = tape.attention(q, k, v, self.cfg.heads, AttnMask::Full, 1.0 / (dh as f64).sqrt(), None)?;
        let o = self.out.forward(tape, attention)?;
        let x = tape.add(lat, o)?;
        let h = self.ln_ffn.forward(tape, x)?;
        let f = self.fc1.forward(tape, h)?;
        let f = tape.gelu(f);
        let f = self.fc2.forward(tape, f)?;
        let x = tape.add(x, f)?;
        let tokens = self.proj.forward(tape, x)?;
        Ok(Resampled { tokens, attention })
    }
}
