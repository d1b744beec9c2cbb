//! Filter a batch of raw documents and summarise what happened.

use crate::filter::{filter_document, FilterConfig, FilterDecision, Rule};
use crate::raw::RawDocument;
use mmlm_core::stream::MultimodalDocument;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub input_documents: usize,
    pub kept_documents: usize,
    pub discarded_documents: usize,
    pub input_images: usize,
    pub kept_images: usize,
    /// Documents discarded with each rule among their reasons.
    pub discard_reasons: BTreeMap<&'static str, usize>,
    /// Individual images and text segments removed by each rule.
    pub removals: BTreeMap<&'static str, usize>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes") + "\n"
    }
}

pub struct PipelineOutput {
    pub documents: Vec<MultimodalDocument>,
    pub decisions: Vec<FilterDecision>,
    pub report: PipelineReport,
}

/// Document `i` draws from rng stream `i`, so the output depends only on
/// the input order and the seed.
pub fn run_pipeline(docs: &[RawDocument], cfg: &FilterConfig, seed: u64) -> PipelineOutput {
    let zeros = || Rule::ALL.iter().map(|r| (r.id(), 0)).collect::<BTreeMap<_, _>>();
    let mut report = PipelineReport {
        seed,
        input_documents: docs.len(),
        kept_documents: 0,
        discarded_documents: 0,
        input_images: docs.iter().map(RawDocument::image_count).sum(),
        kept_images: 0,
        discard_reasons: zeros(),
        removals: zeros(),
    };
    let mut documents = Vec::new();
    let mut decisions = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        let d = filter_document(doc, cfg, seed, i as u64);
        for (_, r) in &d.removals {
            *report.removals.get_mut(r.id()).unwrap() += 1;
        }
        match d.apply(doc) {
            Some(kept) => {
                report.kept_documents += 1;
                report.kept_images += d.kept_images.len();
                documents.push(kept);
            }
            None => {
                report.discarded_documents += 1;
                for r in &d.reasons {
                    *report.discard_reasons.get_mut(r.id()).unwrap() += 1;
                }
            }
        }
        decisions.push(d);
    }
    PipelineOutput {
        documents,
        decisions,
        report,
    }
}
