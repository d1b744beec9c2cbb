//! Running a task over a dataset and the resulting report.

use crate::data::Dataset;
use crate::error::{EvalError, Result};
use crate::metrics::{accuracy, best_of, exact_match, mean, roc_auc, token_f1, vqa_accuracy};
use crate::model::EvalModel;
use crate::tasks::{
    choose_option, classify_constrained, classify_with_descriptions, cot_two_stage, generate_text, raven_scores,
    RavenInstance, YesScoring, DEFAULT_MAX_NEW,
};
use crate::template::{build_prompt, Decoding, Example, PromptTemplate, CAPTION, HATEFUL, LANGUAGE, SST2, VQA, WEBSRC};
use mmlm_core::generate::argmax;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Demonstrations per query, sampled from the other dataset items.
    pub shots: usize,
    pub seed: u64,
    pub max_new: usize,
    pub yes: YesScoring,
    /// Two-stage chain-of-thought for sst2.
    pub cot: bool,
    /// Label-constrained decoding for imagenet.
    pub constrained: bool,
    /// Show category descriptions for cub.
    pub descriptions: bool,
    /// Overrides the task's decoding for open-ended generation.
    pub beam: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            shots: 0,
            seed: 0,
            max_new: DEFAULT_MAX_NEW,
            yes: YesScoring::FullWord,
            cot: false,
            constrained: true,
            descriptions: true,
            beam: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub index: usize,
    pub prediction: String,
    pub references: Vec<String>,
    /// Per-option or per-candidate scores for scored tasks.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    /// The log-probability of "yes" for hate-speech detection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yes_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// Demonstration indices used for this query.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub demos: Vec<usize>,
}

impl Record {
    fn new(index: usize, prediction: String, references: Vec<String>) -> Self {
        Self {
            index,
            prediction,
            references,
            scores: Vec::new(),
            yes_score: None,
            rationale: None,
            demos: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub backend: String,
    pub seed: u64,
    pub shots: usize,
    pub records: Vec<Record>,
    pub metrics: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize") + "\n"
    }
}

/// Aggregates for `task` computed from its records alone.
pub fn compute_metrics(task: &str, records: &[Record]) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    let correct = || records.iter().map(|r| r.references.first() == Some(&r.prediction));
    match task {
        "caption" | "websrc" => {
            m.insert("exact_match".into(), mean(records.iter().map(|r| best_of(&r.prediction, &r.references, exact_match))));
            m.insert("f1".into(), mean(records.iter().map(|r| best_of(&r.prediction, &r.references, token_f1))));
        }
        "vqa" => {
            m.insert("vqa_accuracy".into(), mean(records.iter().map(|r| vqa_accuracy(&r.prediction, &r.references))));
            m.insert("exact_match".into(), mean(records.iter().map(|r| best_of(&r.prediction, &r.references, exact_match))));
        }
        "hateful" => {
            let scores: Vec<f64> = records.iter().map(|r| r.yes_score.unwrap_or(f64::NEG_INFINITY)).collect();
            let labels: Vec<bool> = records.iter().map(|r| r.references.first().is_some_and(|l| l == "yes")).collect();
            m.insert("roc_auc".into(), roc_auc(&scores, &labels)?);
            m.insert("accuracy".into(), accuracy(correct()));
        }
        _ => {
            m.insert("accuracy".into(), accuracy(correct()));
        }
    }
    Ok(m)
}

fn sample_demos(n: usize, query: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if k >= n {
        return Err(EvalError::Usage(format!("{k} demonstrations need at least {} items, have {n}", k + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query as u64);
    Ok(rand::seq::index::sample(&mut rng, n - 1, k)
        .into_iter()
        .map(|j| if j < query { j } else { j + 1 })
        .collect())
}

fn open_ended<M: EvalModel + ?Sized>(
    model: &M,
    t: &PromptTemplate,
    query: &Example,
    demos: &[Example],
    opts: &EvalOptions,
) -> Result<String> {
    let decoding = opts.beam.map_or(t.decoding, |k| if k <= 1 { Decoding::Greedy } else { Decoding::Beam(k) });
    let text = generate_text(model, &build_prompt(t, query, demos)?, decoding, t.stop, opts.max_new)?;
    let gap = t.continuation("");
    Ok(text.strip_prefix(&gap).unwrap_or(&text).to_string())
}

fn no_shots(task: &str, opts: &EvalOptions) -> Result<()> {
    if opts.shots > 0 {
        return Err(EvalError::Usage(format!("task `{task}` is zero-shot only")));
    }
    Ok(())
}

pub fn run_task<M: EvalModel + ?Sized>(data: &Dataset, model: &M, backend: &str, opts: &EvalOptions) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let n = data.len();
    let demos_for = |i: usize| sample_demos(n, i, opts.shots, opts.seed);
    let mut records = Vec::with_capacity(n);
    match data {
        Dataset::Caption(items) => {
            for (i, it) in items.iter().enumerate() {
                let d = demos_for(i)?;
                let demos: Vec<Example> = d
                    .iter()
                    .map(|&j| Example::new(Some(items[j].image.clone())).answer(&items[j].captions[0]))
                    .collect();
                let pred = open_ended(model, &CAPTION, &Example::new(Some(it.image.clone())), &demos, opts)?;
                let mut r = Record::new(i, pred, it.captions.clone());
                r.demos = d;
                records.push(r);
            }
        }
        Dataset::Vqa(items) => {
            for (i, it) in items.iter().enumerate() {
                let d = demos_for(i)?;
                let ex = |j: usize| Example::new(Some(items[j].image.clone())).field("question", &items[j].question);
                let demos: Vec<Example> = d.iter().map(|&j| ex(j).answer(&items[j].answers[0])).collect();
                let pred = open_ended(model, &VQA, &ex(i), &demos, opts)?;
                let mut r = Record::new(i, pred, it.answers.clone());
                r.demos = d;
                records.push(r);
            }
        }
        Dataset::Sst2(items) | Dataset::Hateful(items) => {
            let hateful = matches!(data, Dataset::Hateful(_));
            let (t, options): (&PromptTemplate, Vec<String>) = if hateful {
                (&HATEFUL, vec!["yes".into(), "no".into()])
            } else {
                (&SST2, vec!["positive".into(), "negative".into()])
            };
            if opts.cot && (hateful || opts.shots > 0) {
                return Err(EvalError::Usage("chain-of-thought applies to zero-shot sst2 only".into()));
            }
            for (i, it) in items.iter().enumerate() {
                let d = demos_for(i)?;
                let (choice, scores, rationale) = if opts.cot {
                    let out = cot_two_stage(model, &it.image, &options, opts.max_new)?;
                    (out.prediction, out.scores, Some(out.rationale))
                } else {
                    let demos: Vec<Example> = d
                        .iter()
                        .map(|&j| Example::new(Some(items[j].image.clone())).answer(&items[j].label))
                        .collect();
                    let (c, s) = choose_option(model, t, &Example::new(Some(it.image.clone())), &demos, &options)?;
                    (c, s, None)
                };
                let mut r = Record::new(i, options[choice].clone(), vec![it.label.clone()]);
                if hateful {
                    r.yes_score = Some(scores[0]);
                }
                r.scores = scores;
                r.rationale = rationale;
                r.demos = d;
                records.push(r);
            }
        }
        Dataset::WebSrc(items) => {
            for (i, it) in items.iter().enumerate() {
                let d = demos_for(i)?;
                let ex = |j: usize| {
                    Example::new(Some(items[j].image.clone()))
                        .field("WebText", &items[j].context)
                        .field("question", &items[j].question)
                };
                let demos: Vec<Example> = d.iter().map(|&j| ex(j).answer(&items[j].answer)).collect();
                let pred = open_ended(model, &WEBSRC, &ex(i), &demos, opts)?;
                let mut r = Record::new(i, pred, vec![it.answer.clone()]);
                r.demos = d;
                records.push(r);
            }
        }
        Dataset::ImageNet(items) => {
            no_shots("imagenet", opts)?;
            let labels: Vec<String> = items.iter().map(|it| it.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
            for (i, it) in items.iter().enumerate() {
                let pred = classify_constrained(model, &it.image, &labels, opts.constrained)?;
                records.push(Record::new(i, pred, vec![it.label.clone()]));
            }
        }
        Dataset::Cub(items) => {
            no_shots("cub", opts)?;
            for (i, it) in items.iter().enumerate() {
                let options: Vec<(String, String)> =
                    it.options.iter().map(|o| (o.name.clone(), o.description.clone())).collect();
                let (c, scores) =
                    classify_with_descriptions(model, &it.image, &options, &it.general_category, opts.descriptions)?;
                let mut r = Record::new(i, options[c].0.clone(), vec![it.label.clone()]);
                r.scores = scores;
                records.push(r);
            }
        }
        Dataset::Raven(items) => {
            no_shots("raven", opts)?;
            for (i, it) in items.iter().enumerate() {
                let inst = RavenInstance::new(it.given.clone(), it.candidates.clone(), it.answer_index)?;
                let scores = raven_scores(&inst, model, opts.yes)?;
                let mut r = Record::new(i, argmax(&scores).to_string(), vec![it.answer_index.to_string()]);
                r.scores = scores;
                records.push(r);
            }
        }
        Dataset::Lang(items) => {
            for (i, it) in items.iter().enumerate() {
                if it.answer >= it.options.len() {
                    return Err(EvalError::InvalidExample(format!("item {i}: answer index out of range")));
                }
                let d = demos_for(i)?;
                let ex = |j: usize| Example::new(None).field("context", &items[j].context);
                let demos: Vec<Example> = d.iter().map(|&j| ex(j).answer(&items[j].options[items[j].answer])).collect();
                let (c, scores) = choose_option(model, &LANGUAGE, &ex(i), &demos, &it.options)?;
                let mut r = Record::new(i, it.options[c].clone(), vec![it.options[it.answer].clone()]);
                r.scores = scores;
                r.demos = d;
                records.push(r);
            }
        }
    }
    let metrics = compute_metrics(data.task(), &records)?;
    Ok(EvalReport {
        task: data.task().into(),
        backend: backend.into(),
        seed: opts.seed,
        shots: opts.shots,
        records,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demos_exclude_the_query_and_are_seeded() {
        for q in 0..10 {
            let d = sample_demos(10, q, 4, 7).unwrap();
            assert_eq!(d.len(), 4);
            assert!(!d.contains(&q));
            assert_eq!(d, sample_demos(10, q, 4, 7).unwrap());
        }
        assert!(sample_demos(3, 0, 3, 0).is_err());
    }
}
