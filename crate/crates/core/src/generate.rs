//! Scoring and decoding against any next-token model.
//!
//! Scores are plain sums of log-probabilities with no length
//! normalization. Every argmax breaks ties toward the lowest token id.
//! Decoding only ever emits byte tokens or EOS; the other reserved ids
//! describe prompt structure and are never produced.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::stream::Context;
use crate::tokenizer::{tokenize, TokenId, EOS};

pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn max_len(&self) -> usize;

    /// Log-probabilities of the next token after each position `t` in
    /// `from..ctx.len()`.
    fn log_probs(&self, ctx: &Context, from: usize) -> Result<Vec<Vec<f64>>>;

    fn next_log_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        if ctx.is_empty() {
            return Err(CoreError::Config("cannot predict from an empty context".into()));
        }
        Ok(self.log_probs(ctx, ctx.len() - 1)?.pop().expect("one row"))
    }

    /// Total log-probability of `continuation` following `ctx`.
    fn score_continuation(&self, ctx: &Context, continuation: &[TokenId]) -> Result<f64> {
        if ctx.is_empty() {
            return Err(CoreError::Config("cannot score after an empty context".into()));
        }
        let total = ctx.len() + continuation.len();
        if total > self.max_len() {
            return Err(CoreError::TooLong {
                len: total,
                max: self.max_len(),
            });
        }
        if continuation.is_empty() {
            return Ok(0.0);
        }
        let mut full = ctx.clone();
        full.push_tokens(&continuation[..continuation.len() - 1]);
        let rows = self.log_probs(&full, ctx.len() - 1)?;
        let mut sum = 0.0;
        for (row, &tok) in rows.iter().zip(continuation) {
            sum += row[tok as usize];
        }
        Ok(sum)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn log_probs(&self, ctx: &Context, from: usize) -> Result<Vec<Vec<f64>>> {
        (**self).log_probs(ctx, from)
    }
    fn next_log_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        (**self).next_log_probs(ctx)
    }
    fn score_continuation(&self, ctx: &Context, continuation: &[TokenId]) -> Result<f64> {
        (**self).score_continuation(ctx, continuation)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Whether decoding may produce `id`.
pub fn emittable(id: TokenId) -> bool {
    id < 256 || id == EOS
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
    /// Beam search restricted to the given labels.
    Constrained { labels: Vec<String>, beam: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Generated ids, without the closing EOS.
    pub tokens: Vec<TokenId>,
    /// Total log-probability, including the EOS step when finished.
    pub score: f64,
    /// Running score after each decoding step.
    pub step_scores: Vec<f64>,
    pub finished: bool,
}

/// Prefix trie over tokenized labels; each label ends in an EOS edge.
#[derive(Clone, Debug, Default)]
pub struct LabelTrie {
    nodes: Vec<BTreeMap<TokenId, usize>>,
}

impl LabelTrie {
    pub fn new(labels: &[String]) -> Result<Self> {
        if labels.is_empty() {
            return Err(CoreError::EmptyLabels);
        }
        let mut trie = Self {
            nodes: vec![BTreeMap::new()],
        };
        for label in labels {
            let ids = tokenize(label);
            if ids.is_empty() {
                return Err(CoreError::UntokenizableLabel(label.clone()));
            }
            let mut node = 0;
            for id in ids.into_iter().chain([EOS]) {
                node = match trie.nodes[node].get(&id) {
                    Some(&n) => n,
                    None => {
                        trie.nodes.push(BTreeMap::new());
                        let n = trie.nodes.len() - 1;
                        trie.nodes[node].insert(id, n);
                        n
                    }
                };
            }
        }
        Ok(trie)
    }

    /// Ids allowed after `prefix`, ascending; empty if `prefix` leaves the
    /// trie.
    pub fn allowed(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let mut node = 0;
        for id in prefix {
            match self.nodes[node].get(id) {
                Some(&n) => node = n,
                None => return Vec::new(),
            }
        }
        self.nodes[node].keys().copied().collect()
    }

    /// Longest label in tokens, excluding EOS.
    pub fn depth(&self) -> usize {
        fn walk(t: &LabelTrie, n: usize) -> usize {
            t.nodes[n].values().map(|&c| 1 + walk(t, c)).max().unwrap_or(0)
        }
        walk(self, 0).saturating_sub(1)
    }
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<TokenId>,
    score: f64,
    steps: Vec<f64>,
}

pub fn generate<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &Context,
    strategy: &Strategy,
    max_new: usize,
) -> Result<Generation> {
    match strategy {
        Strategy::Greedy => greedy(model, prompt, max_new),
        Strategy::Beam(k) => beam(model, prompt, *k, max_new, None),
        Strategy::Constrained { labels, beam: k } => {
            let trie = LabelTrie::new(labels)?;
            beam(model, prompt, *k, trie.depth() + 1, Some(&trie))
        }
    }
}

fn check_room<M: LanguageModel + ?Sized>(model: &M, prompt: &Context, max_new: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(CoreError::Config("generation needs a non-empty prompt".into()));
    }
    if prompt.len() + max_new > model.max_len() {
        return Err(CoreError::TooLong {
            len: prompt.len() + max_new,
            max: model.max_len(),
        });
    }
    Ok(())
}

fn greedy<M: LanguageModel + ?Sized>(model: &M, prompt: &Context, max_new: usize) -> Result<Generation> {
    check_room(model, prompt, max_new)?;
    let mut ctx = prompt.clone();
    let mut out = Generation {
        tokens: Vec::new(),
        score: 0.0,
        step_scores: Vec::new(),
        finished: false,
    };
    for _ in 0..max_new {
        let mut lp = model.next_log_probs(&ctx)?;
        for (id, x) in lp.iter_mut().enumerate() {
            if !emittable(id as TokenId) {
                *x = f64::NEG_INFINITY;
            }
        }
        let id = argmax(&lp);
        out.score += lp[id];
        out.step_scores.push(out.score);
        if id as TokenId == EOS {
            out.finished = true;
            break;
        }
        out.tokens.push(id as TokenId);
        ctx.ids.push(id as TokenId);
    }
    Ok(out)
}

fn beam<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &Context,
    k: usize,
    max_new: usize,
    trie: Option<&LabelTrie>,
) -> Result<Generation> {
    if k == 0 {
        return Err(CoreError::Config("beam width must be at least 1".into()));
    }
    check_room(model, prompt, max_new)?;
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        steps: Vec::new(),
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_new {
        // (score, parent, token): parents are in rank order, so sorting by
        // score and then this tuple breaks ties deterministically.
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::new();
        for (p, h) in alive.iter().enumerate() {
            let mut ctx = prompt.clone();
            ctx.push_tokens(&h.tokens);
            let lp = model.next_log_probs(&ctx)?;
            let allowed: Vec<TokenId> = match trie {
                Some(t) => t.allowed(&h.tokens),
                None => (0..lp.len() as TokenId).filter(|&id| emittable(id)).collect(),
            };
            cands.extend(allowed.into_iter().map(|id| (h.score + lp[id as usize], p, id)));
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::new();
        for &(score, p, id) in cands.iter().take(k) {
            let parent = &alive[p];
            let mut steps = parent.steps.clone();
            steps.push(score);
            if id == EOS {
                finished.push(Hyp {
                    tokens: parent.tokens.clone(),
                    score,
                    steps,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(id);
                next.push(Hyp { tokens, score, steps });
            }
        }
        alive = next;
        let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        // Scores never increase, so no live hypothesis can overtake.
        if alive.is_empty() || alive.iter().all(|h| h.score <= best_done) {
            break;
        }
    }
    let pick = |hs: &[Hyp]| -> Option<Hyp> {
        let mut best: Option<&Hyp> = None;
        for h in hs {
            if best.is_none_or(|b| h.score > b.score) {
                best = Some(h);
            }
        }
        best.cloned()
    };
    let (h, done) = match pick(&finished) {
        Some(h) => (h, true),
        None => (pick(&alive).expect("beam keeps at least one hypothesis"), false),
    };
    Ok(Generation {
        tokens: h.tokens,
        score: h.score,
        step_scores: h.steps,
        finished: done,
    })
}
