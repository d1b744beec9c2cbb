//! Scoring rules.
//!
//! Answers are normalized by lowercasing, trimming and collapsing runs of
//! whitespace to one space. F1 compares the resulting whitespace tokens as
//! multisets.

use crate::error::{EvalError, Result};
use std::collections::HashMap;

pub fn normalize(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, reference: &str) -> f64 {
    (normalize(pred) == normalize(reference)) as u8 as f64
}

pub fn token_f1(pred: &str, reference: &str) -> f64 {
    let p = normalize(pred);
    let r = normalize(reference);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    if pt.is_empty() || rt.is_empty() {
        return (pt.is_empty() && rt.is_empty()) as u8 as f64;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &rt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / rt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best score of `pred` against any reference.
pub fn best_of(pred: &str, references: &[String], f: fn(&str, &str) -> f64) -> f64 {
    references.iter().map(|r| f(pred, r)).fold(0.0, f64::max)
}

/// VQA-style accuracy: min(matching references / 3, 1).
pub fn vqa_accuracy(pred: &str, answers: &[String]) -> f64 {
    let p = normalize(pred);
    let n = answers.iter().filter(|a| normalize(a) == p).count();
    (n as f64 / 3.0).min(1.0)
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn accuracy(correct: impl IntoIterator<Item = bool>) -> f64 {
    mean(correct.into_iter().map(|c| c as u8 as f64))
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, counting ties as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::SingleClass);
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}
