//! Evaluation protocols built on the templates: open-ended generation,
//! close-ended option scoring, Raven matrices, two-stage chain-of-thought,
//! and constrained or description-conditioned classification.
//!
//! Every argmax breaks ties toward the lowest index.

use crate::error::{EvalError, Result};
use crate::model::EvalModel;
use crate::template::{
    build_prompt, Decoding, Example, Prompt, PromptTemplate, Stop, COT_ANSWER, COT_RATIONALE, CUB, IMAGENET,
    RAVEN_FOLLOWING, RAVEN_INTRO, RAVEN_QUESTION, RAVEN_YES,
};
use mmlm_core::generate::{argmax, generate, Strategy};
use mmlm_core::image::ImageTensor;
use mmlm_core::tokenizer::{detokenize_lossy, tokenize};
use mmlm_core::CoreError;
use std::collections::BTreeSet;

/// Generation budget for open-ended answers.
pub const DEFAULT_MAX_NEW: usize = 32;

fn room<M: EvalModel + ?Sized>(model: &M, prompt_len: usize, want: usize) -> Result<usize> {
    let room = model.max_len().saturating_sub(prompt_len);
    if room == 0 {
        return Err(CoreError::TooLong {
            len: prompt_len + 1,
            max: model.max_len(),
        }
        .into());
    }
    Ok(want.min(room))
}

fn apply_stop(text: String, stop: Stop) -> String {
    match stop {
        Stop::Eos => text,
        Stop::EosOrNewline => match text.find('\n') {
            Some(i) => text[..i].to_string(),
            None => text,
        },
    }
}

/// Open-ended generation with greedy or beam decoding.
pub fn generate_text<M: EvalModel + ?Sized>(
    model: &M,
    prompt: &Prompt,
    decoding: Decoding,
    stop: Stop,
    max_new: usize,
) -> Result<String> {
    let strategy = match decoding {
        Decoding::Greedy => Strategy::Greedy,
        Decoding::Beam(k) | Decoding::Constrained(k) => Strategy::Beam(k),
        Decoding::CloseEnded => return Err(EvalError::Usage("close-ended tasks are scored, not generated".into())),
    };
    let ctx = prompt.context(model.soft_tokens());
    let n = room(model, ctx.len(), max_new)?;
    let out = generate(model, &ctx, &strategy, n)?;
    Ok(apply_stop(detokenize_lossy(&out.tokens)?, stop))
}

/// Total log-probability of each continuation after the prompt.
pub fn score_options<M: EvalModel + ?Sized>(model: &M, prompt: &Prompt, continuations: &[String]) -> Result<Vec<f64>> {
    let ctx = prompt.context(model.soft_tokens());
    continuations
        .iter()
        .map(|c| Ok(model.score_continuation(&ctx, &tokenize(c))?))
        .collect()
}

/// Close-ended choice among `options` for a templated query.
pub fn choose_option<M: EvalModel + ?Sized>(
    model: &M,
    template: &PromptTemplate,
    query: &Example,
    demos: &[Example],
    options: &[String],
) -> Result<(usize, Vec<f64>)> {
    if options.is_empty() {
        return Err(EvalError::InvalidExample("close-ended scoring needs at least one option".into()));
    }
    let prompt = build_prompt(template, query, demos)?;
    let conts: Vec<String> = options.iter().map(|o| template.continuation(o)).collect();
    let scores = score_options(model, &prompt, &conts)?;
    Ok((argmax(&scores), scores))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RavenInstance {
    pub given: Vec<ImageTensor>,
    pub candidates: Vec<ImageTensor>,
    pub answer_index: usize,
}

impl RavenInstance {
    pub fn new(given: Vec<ImageTensor>, candidates: Vec<ImageTensor>, answer_index: usize) -> Result<Self> {
        if ![3, 4, 8].contains(&given.len()) {
            return Err(EvalError::InvalidExample(format!(
                "a Raven instance has 3, 4 or 8 given images, not {}",
                given.len()
            )));
        }
        if candidates.len() != 6 {
            return Err(EvalError::InvalidExample(format!(
                "a Raven instance has 6 candidates, not {}",
                candidates.len()
            )));
        }
        if answer_index >= 6 {
            return Err(EvalError::InvalidExample(format!("answer index {answer_index} out of 0..6")));
        }
        Ok(Self {
            given,
            candidates,
            answer_index,
        })
    }
}

/// How the probability of "Yes" is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum YesScoring {
    /// Log-probability of the whole word.
    #[default]
    FullWord,
    /// Log-probability of its first token only.
    FirstToken,
}

impl YesScoring {
    pub fn continuation(self) -> String {
        match self {
            YesScoring::FullWord => RAVEN_YES.to_string(),
            YesScoring::FirstToken => RAVEN_YES[..1].to_string(),
        }
    }
}

/// Instruction, the given images one by one, then the candidate and the
/// question.
pub fn raven_prompt(inst: &RavenInstance, candidate: usize) -> Prompt {
    let intro = match inst.given.len() {
        3 => RAVEN_INTRO[0],
        4 => RAVEN_INTRO[1],
        _ => RAVEN_INTRO[2],
    };
    let mut p = Prompt::default();
    p.push_text(intro);
    for img in &inst.given {
        p.push_image(img.clone());
    }
    p.push_text(RAVEN_FOLLOWING);
    p.push_image(inst.candidates[candidate].clone());
    p.push_text(RAVEN_QUESTION);
    p
}

pub fn raven_scores<M: EvalModel + ?Sized>(inst: &RavenInstance, model: &M, yes: YesScoring) -> Result<Vec<f64>> {
    let cont = [yes.continuation()];
    (0..inst.candidates.len())
        .map(|c| Ok(score_options(model, &raven_prompt(inst, c), &cont)?[0]))
        .collect()
}

/// The candidate whose "Yes" is most probable.
pub fn raven_predict<M: EvalModel + ?Sized>(inst: &RavenInstance, model: &M, yes: YesScoring) -> Result<usize> {
    Ok(argmax(&raven_scores(inst, model, yes)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CotOutcome {
    pub rationale: String,
    pub prediction: usize,
    pub scores: Vec<f64>,
}

pub fn cot_rationale_prompt(image: &ImageTensor) -> Result<Prompt> {
    build_prompt(&COT_RATIONALE, &Example::new(Some(image.clone())), &[])
}

pub fn cot_answer_prompt(image: &ImageTensor, rationale: &str) -> Result<Prompt> {
    build_prompt(&COT_ANSWER, &Example::new(Some(image.clone())).field("rationale", rationale), &[])
}

/// Second stage alone: choose among `options` given a rationale.
pub fn cot_answer<M: EvalModel + ?Sized>(
    model: &M,
    image: &ImageTensor,
    rationale: &str,
    options: &[String],
) -> Result<(usize, Vec<f64>)> {
    choose_option(
        model,
        &COT_ANSWER,
        &Example::new(Some(image.clone())).field("rationale", rationale),
        &[],
        options,
    )
}

/// Generate a rationale greedily, then answer with it in context. An empty
/// rationale is allowed and reduces to ordinary prompting.
pub fn cot_two_stage<M: EvalModel + ?Sized>(
    model: &M,
    image: &ImageTensor,
    options: &[String],
    max_rationale: usize,
) -> Result<CotOutcome> {
    let rationale = generate_text(
        model,
        &cot_rationale_prompt(image)?,
        COT_RATIONALE.decoding,
        COT_RATIONALE.stop,
        max_rationale,
    )?;
    let (prediction, scores) = cot_answer(model, image, &rationale, options)?;
    Ok(CotOutcome {
        rationale,
        prediction,
        scores,
    })
}

pub fn classification_prompt(image: &ImageTensor) -> Result<Prompt> {
    build_prompt(&IMAGENET, &Example::new(Some(image.clone())), &[])
}

/// Beam(2) decoding after "The photo of the". Constrained decoding walks a
/// trie of the labels and always returns one of them; unconstrained
/// decoding returns whatever the beam produced.
pub fn classify_constrained<M: EvalModel + ?Sized>(
    model: &M,
    image: &ImageTensor,
    labels: &[String],
    constrained: bool,
) -> Result<String> {
    if labels.is_empty() {
        return Err(CoreError::EmptyLabels.into());
    }
    let Decoding::Constrained(k) = IMAGENET.decoding else { unreachable!() };
    let prompt = classification_prompt(image)?;
    let gap = IMAGENET.continuation("");
    if !constrained {
        let text = generate_text(model, &prompt, Decoding::Beam(k), Stop::EosOrNewline, DEFAULT_MAX_NEW)?;
        return Ok(text.strip_prefix(&gap).unwrap_or(&text).to_string());
    }
    let conts: Vec<String> = labels.iter().map(|l| IMAGENET.continuation(l)).collect();
    let ctx = prompt.context(model.soft_tokens());
    let out = generate(model, &ctx, &Strategy::Constrained { labels: conts.clone(), beam: k }, 0)?;
    let text = detokenize_lossy(&out.tokens)?;
    let i = conts
        .iter()
        .position(|c| *c == text)
        .ok_or_else(|| EvalError::InvalidExample(format!("constrained decoding produced {text:?}")))?;
    Ok(labels[i].clone())
}

/// The option block: one line per option, `name: description` when
/// descriptions are shown and the bare name otherwise.
pub fn description_block(options: &[(String, String)], with_descriptions: bool) -> String {
    options
        .iter()
        .map(|(n, d)| {
            if with_descriptions {
                format!("{n}: {d}\n")
            } else {
                format!("{n}\n")
            }
        })
        .collect()
}

pub fn descriptions_prompt(
    image: &ImageTensor,
    options: &[(String, String)],
    general_category: &str,
    with_descriptions: bool,
) -> Result<Prompt> {
    if options.len() < 2 {
        return Err(EvalError::InvalidExample(format!(
            "description classification needs at least 2 options, got {}",
            options.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for (n, _) in options {
        if !seen.insert(n.as_str()) {
            return Err(EvalError::DuplicateOption(n.clone()));
        }
    }
    let mut p = Prompt::default();
    p.push_text(&description_block(options, with_descriptions));
    p.extend(build_prompt(
        &CUB,
        &Example::new(Some(image.clone())).field("general category", general_category),
        &[],
    )?);
    Ok(p)
}

/// Close-ended choice among option names after the description block.
pub fn classify_with_descriptions<M: EvalModel + ?Sized>(
    model: &M,
    image: &ImageTensor,
    options: &[(String, String)],
    general_category: &str,
    with_descriptions: bool,
) -> Result<(usize, Vec<f64>)> {
    let prompt = descriptions_prompt(image, options, general_category, with_descriptions)?;
    let conts: Vec<String> = options.iter().map(|(n, _)| CUB.continuation(n)).collect();
    let scores = score_options(model, &prompt, &conts)?;
    Ok((argmax(&scores), scores))
}
