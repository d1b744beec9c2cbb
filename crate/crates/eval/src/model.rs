//! The model interface the harness scores against, and two mock backends.

use mmlm_core::generate::LanguageModel;
use mmlm_core::stream::Context;
use mmlm_core::tokenizer::VOCAB_SIZE;
use mmlm_core::{MultimodalLm, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A next-token model that also says how many soft tokens an image takes.
pub trait EvalModel: LanguageModel {
    fn soft_tokens(&self) -> usize;
}

impl EvalModel for MultimodalLm {
    fn soft_tokens(&self) -> usize {
        self.config.soft_tokens
    }
}

impl<M: EvalModel + ?Sized> EvalModel for &M {
    fn soft_tokens(&self) -> usize {
        (**self).soft_tokens()
    }
}

pub const MOCK_SOFT_TOKENS: usize = 8;
pub const MOCK_MAX_LEN: usize = 4096;

/// Every token equally likely everywhere, so every score ties.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformModel;

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    fn max_len(&self) -> usize {
        MOCK_MAX_LEN
    }

    fn log_probs(&self, ctx: &Context, from: usize) -> Result<Vec<Vec<f64>>> {
        let lp = -(VOCAB_SIZE as f64).ln();
        Ok(vec![vec![lp; VOCAB_SIZE]; ctx.len() - from])
    }
}

impl EvalModel for UniformModel {
    fn soft_tokens(&self) -> usize {
        MOCK_SOFT_TOKENS
    }
}

/// Pseudo-random next-token distributions that are a pure function of the
/// seed and the context prefix, image pixels included.
#[derive(Clone, Copy, Debug)]
pub struct RandomModel {
    pub seed: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl LanguageModel for RandomModel {
    fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    fn max_len(&self) -> usize {
        MOCK_MAX_LEN
    }

    fn log_probs(&self, ctx: &Context, from: usize) -> Result<Vec<Vec<f64>>> {
        let mut h = fnv(FNV_OFFSET, &self.seed.to_le_bytes());
        let mut rows = Vec::with_capacity(ctx.len() - from);
        for (t, id) in ctx.ids.iter().enumerate() {
            h = fnv(h, &id.to_le_bytes());
            for slot in ctx.image_slots.iter().filter(|s| s.start == t) {
                for v in ctx.images[slot.image_index].data() {
                    h = fnv(h, &v.to_bits().to_le_bytes());
                }
            }
            if t < from {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            let logits: Vec<f64> = (0..VOCAB_SIZE).map(|_| rng.random_range(-2.0..2.0)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            rows.push(logits.iter().map(|l| l - lse).collect());
        }
        Ok(rows)
    }
}

impl EvalModel for RandomModel {
    fn soft_tokens(&self) -> usize {
        MOCK_SOFT_TOKENS
    }
}
