//! End-to-end acceptance suite. Each criterion runs under its own time
//! budget and prints one `PASS`/`FAIL` line; the test fails if any does.
//!
//! Run with `cargo test -p mmlm-cli --test acceptance -- --nocapture`.

use mmlm_core::checkpoint;
use mmlm_core::config::RunConfig;
use mmlm_core::generate::{generate, Strategy};
use mmlm_core::image::ImageTensor;
use mmlm_core::layers::{seeded, Mode};
use mmlm_core::model::{ModelConfig, MultimodalLm};
use mmlm_core::stream::{
    build_instruction_unit, encode_document, encode_prompt, Context, MultimodalDocument, PackedSequence, Packer, Segment,
};
use mmlm_core::synth::caption_documents;
use mmlm_core::tokenizer::{detokenize, tokenize, BOS, PAD, VOCAB_SIZE};
use mmlm_core::train::{build_sources, TrainConfig, Trainer};
use mmlm_core::vision::{PatchEncoderConfig, Resampler, ResamplerConfig};
use mmlm_core::xpos::XPosConfig;
use mmlm_corpus::archive::{read_archive, write_archive};
use mmlm_corpus::filter::{filter_document, FilterConfig, Rule, Verdict};
use mmlm_corpus::pipeline::run_pipeline;
use mmlm_corpus::raw::RawDocument;
use mmlm_eval::model::{EvalModel, RandomModel};
use mmlm_eval::synth;
use mmlm_eval::tasks::{
    classify_constrained, cot_answer_prompt, cot_rationale_prompt, descriptions_prompt, raven_predict, raven_prompt,
    raven_scores, RavenInstance, YesScoring,
};
use mmlm_eval::template::{
    build_prompt, Example, Prompt, CAPTION, HATEFUL, IMAGENET, LANGUAGE, OBJECT_COLOR, OBJECT_SIZE, SST2, VQA, WEBSRC,
};
use mmlm_numerics::gradcheck::{check_store, GradCheckOptions};
use mmlm_numerics::ops::masked_cross_entropy;
use mmlm_numerics::{ParamStore, Precision, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if took <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {:.0}s budget", budget.as_secs_f64())),
        Err(e) => (false, e),
    };
    println!(
        "criterion {n:>2} {} {name} ({:.1}s): {detail}",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    ok
}

fn checker(seed: u64) -> ImageTensor {
    ImageTensor::from_fn(32, 32, |y, x| {
        if ((y / 4 + x / 4) as u64 + seed) % 2 == 0 {
            [0.9, 0.2, 0.1]
        } else {
            [0.1, 0.3, (seed % 5) as f32 / 5.0]
        }
    })
    .unwrap()
}

fn desk(model: ModelConfig, vision: PatchEncoderConfig) -> MultimodalLm {
    MultimodalLm::new(model, vision).unwrap()
}

fn image_seq(v: usize) -> PackedSequence {
    let doc = MultimodalDocument::new([
        Segment::Text("a cat".into()),
        Segment::Image(checker(1)),
        Segment::Text(" on mat".into()),
    ])
    .unwrap();
    PackedSequence::from_unit(encode_document(&doc, v).unwrap())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_fidelity() -> Outcome {
    // Freezing off, so that every parameter has a gradient to check.
    let vision = PatchEncoderConfig {
        freeze_below_last: false,
        ..PatchEncoderConfig::default()
    };
    let mut m = desk(
        ModelConfig {
            dropout: 0.0,
            ..ModelConfig::default()
        },
        vision,
    );
    m.precision = Precision::Double;
    let seq = image_seq(m.config.soft_tokens);
    let loss_of = |store: &ParamStore| {
        let mut tape = Tape::inference(store, Precision::Double);
        let (loss, n) = m.sequence_loss(&mut tape, &seq, &mut Mode::Eval).unwrap();
        tape.scalar(loss) / n as f64
    };
    let grads = {
        let mut tape = Tape::new(&m.store, Precision::Double);
        let (loss, n) = m.sequence_loss(&mut tape, &seq, &mut Mode::Eval).unwrap();
        let scaled = tape.scale(loss, 1.0 / n as f64);
        tape.backward(scaled)
    };
    let mut store = m.store.clone();
    let total = store.ids().count();
    let report = check_store(loss_of, &mut store, &grads, &GradCheckOptions::default()).map_err(|e| e.to_string())?;
    ensure!(report.params.len() == total, "checked {} of {total} tensors", report.params.len());
    let failures: Vec<_> = report.failures().map(|p| format!("{} {:.2e}", p.name, p.max_rel_error)).collect();
    ensure!(failures.is_empty(), "{failures:?}");
    ensure!(report.worst() < 1e-4, "worst relative error {:.3e}", report.worst());
    Ok(format!("{total} tensors, worst relative error {:.2e}", report.worst()))
}

fn causality() -> Outcome {
    let m = desk(ModelConfig::default(), PatchEncoderConfig::default());
    let v = m.config.soft_tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut base = encode_prompt(&[Segment::Text("hello there".into()), Segment::Image(checker(2))], v);
    base.push_text(" and some more text");
    let reference = m.logits(&base).map_err(|e| e.to_string())?;
    for trial in 0..100 {
        let t = rng.random_range(1..base.len());
        let mut other = base.clone();
        // Byte tokens outside the image markup; the image itself when its
        // slot lies wholly after t.
        for pos in t + 1..other.len() {
            if !other.image_slots.iter().any(|s| s.contains(pos) || pos + 1 == s.start || pos == s.end()) {
                other.ids[pos] = rng.random_range(0..256);
            }
        }
        if other.image_slots[0].start > t {
            other.images[0] = checker(rng.random_range(3..100));
        }
        let l = m.logits(&other).map_err(|e| e.to_string())?;
        let n = (t + 1) * VOCAB_SIZE;
        ensure!(l[..n] == reference[..n], "trial {trial}: logits through position {t} changed");
    }
    Ok("100 suffix perturbations, prefixes bitwise equal".into())
}

fn relative_positions() -> Outcome {
    let cfg = ModelConfig::default();
    let mut m = desk(cfg.clone(), PatchEncoderConfig::default());
    m.precision = Precision::Double;
    let ctx = encode_prompt(&[Segment::Text("shift me around".into()), Segment::Image(checker(4))], cfg.soft_tokens);
    let mut worst: f64 = 0.0;
    for layer in 0..cfg.layers {
        let base = m.attention_logits(&ctx, layer, 0).map_err(|e| e.to_string())?;
        for shift in [1, 7, cfg.max_len, 2 * cfg.max_len] {
            let moved = m.attention_logits(&ctx, layer, shift).map_err(|e| e.to_string())?;
            let d = max_abs_diff(&base, &moved);
            ensure!(d < 1e-6, "layer {layer}, shift {shift}: {d:.3e}");
            worst = worst.max(d);
        }
    }
    let xpos = XPosConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dh = cfg.width / cfg.heads;
    for _ in 0..50 {
        let q: Vec<f64> = (0..dh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..dh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let env: Vec<f64> = (0..64).map(|o| xpos.envelope(&q, &k, o)).collect();
        ensure!(env.windows(2).all(|w| w[1] <= w[0]), "envelope rises somewhere in {env:?}");
    }
    Ok(format!("{} layers, worst shift difference {worst:.2e}; envelope non-increasing", cfg.layers))
}

fn loss_masking() -> Outcome {
    let m = desk(ModelConfig::default(), PatchEncoderConfig::default());
    let v = m.config.soft_tokens;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let check = |seq: &PackedSequence, what: &str, rng: &mut ChaCha8Rng, pick: &dyn Fn(usize) -> bool| -> Outcome {
        let (targets, mask) = seq.shifted_targets();
        let n = seq.len();
        let logits = Tensor::new(vec![n, VOCAB_SIZE], m.logits(&seq.context()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let base = masked_cross_entropy(&logits, &targets, &mask).map_err(|e| e.to_string())?;
        let corruptible: Vec<usize> = (0..n).filter(|&t| pick(t)).collect();
        ensure!(!corruptible.is_empty(), "{what}: nothing to corrupt");
        ensure!(corruptible.iter().all(|&t| !mask[t]), "{what}: a corruptible row is scored");
        for _ in 0..30 {
            let mut bad = targets.clone();
            for &t in &corruptible {
                bad[t] = rng.random_range(0..VOCAB_SIZE);
            }
            let l = masked_cross_entropy(&logits, &bad, &mask).map_err(|e| e.to_string())?;
            ensure!(l.to_bits() == base.to_bits(), "{what}: loss moved from {base} to {l}");
        }
        Ok(format!("{what} {}", corruptible.len()))
    };

    // Rows whose target is inside an image slot.
    let seq = image_seq(v);
    let slots = seq.image_slots.clone();
    let a = check(&seq, "slot", &mut rng, &|t| slots.iter().any(|s| s.contains(t + 1)))?;

    // Rows predicting padding, and the padded rows themselves.
    let mut packer = Packer::new(40);
    ensure!(packer.push(encode_document(&MultimodalDocument::text("short").unwrap(), v).unwrap()).unwrap().is_empty(), "packer closed early");
    let padded = packer.finish().ok_or("no sequence")?;
    let valid = padded.valid_len();
    ensure!(padded.ids[valid..].iter().all(|&i| i == PAD), "tail is not padding");
    let b = check(&padded, "padding", &mut rng, &|t| t + 1 >= valid)?;

    // Instruction and input bytes.
    let unit = build_instruction_unit("Translate to French: ", "cheese", " fromage").unwrap();
    let inst = PackedSequence::from_unit(unit);
    let (_, mask) = inst.shifted_targets();
    ensure!(mask.iter().filter(|&&x| x).count() == " fromage".len() + 1, "scored rows are not output + EOS");
    let prompt_rows = mask.iter().position(|&x| x).unwrap();
    let c = check(&inst, "instruction", &mut rng, &|t| t < prompt_rows)?;
    Ok(format!("corrupted rows: {a}, {b}, {c}; loss bitwise unchanged"))
}

fn vision_freezing() -> Outcome {
    let m = desk(ModelConfig::default(), PatchEncoderConfig::default());
    let seq = image_seq(m.config.soft_tokens);
    let g = {
        let mut tape = Tape::new(&m.store, Precision::Double);
        let (loss, _) = m.sequence_loss(&mut tape, &seq, &mut Mode::Eval).unwrap();
        tape.backward(loss)
    };
    let frozen = m.encoder.frozen_params();
    for &id in &frozen {
        ensure!(g.get(id).is_none_or(|g| g.iter().all(|&x| x == 0.0)), "{} has a gradient", m.store.name(id));
    }
    let blocks = PatchEncoderConfig::default().depth;
    for b in 0..blocks - 1 {
        for id in m.encoder.block_params(b) {
            ensure!(frozen.contains(&id), "{} is not frozen", m.store.name(id));
        }
    }
    let last = m.encoder.block_params(blocks - 1);
    ensure!(last.iter().all(|id| !frozen.contains(id)), "last block is frozen");
    ensure!(
        last.iter().any(|&id| g.get(id).is_some_and(|g| g.iter().any(|&x| x != 0.0))),
        "last block received no gradient"
    );
    Ok(format!("{} frozen tensors with zero gradient, last block trains", frozen.len()))
}

fn resampler_shape() -> Outcome {
    ensure!(ModelConfig::paper_scale().soft_tokens == 64, "paper-scale default is not 64");
    let desk_v = ModelConfig::default().soft_tokens;
    ensure!(desk_v == 8, "desk default is {desk_v}");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = vec![1, 1024];
    counts.extend((0..10).map(|_| rng.random_range(1..=1024)));
    for v in [desk_v, 64] {
        let mut store = ParamStore::new();
        let r = Resampler::new(&mut store, ResamplerConfig { v, heads: 4, ffn_dim: 32 }, 12, 16, &mut seeded(4, 0))
            .map_err(|e| e.to_string())?;
        for &n in &counts {
            let mut tape = Tape::inference(&store, Precision::Double);
            let data = (0..n * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = tape.constant(n, 12, data);
            let out = r.resample(&mut tape, p).map_err(|e| e.to_string())?;
            ensure!(tape.dims(out.tokens) == (v, 16), "v={v}, n={n}: got {:?}", tape.dims(out.tokens));
            let probs = tape.attention_probs(out.attention).ok_or("no attention probabilities")?;
            ensure!(probs.len() == 4 * v * n, "v={v}, n={n}: {} probabilities", probs.len());
            for row in probs.chunks(n) {
                let s: f64 = row.iter().sum();
                ensure!((s - 1.0).abs() < 1e-6, "v={v}, n={n}: row sums to {s}");
            }
        }
    }
    Ok(format!("V tokens for {} patch counts in 1..=1024, V in {{{desk_v}, 64}}", counts.len()))
}

fn overfit() -> Outcome {
    let run = RunConfig::desk_overfit();
    let docs = caption_documents(32, 32).map_err(|e| e.to_string())?;
    let sources = build_sources(&docs, Vec::new(), &run).map_err(|e| e.to_string())?;
    let model = MultimodalLm::new(run.model.clone(), run.vision.clone()).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(model, run.clone(), sources).map_err(|e| e.to_string())?;
    let mut last = f64::NAN;
    t.run(None, |m| last = m.loss).map_err(|e| e.to_string())?;
    let mut hits = 0;
    for doc in &docs {
        let segs = doc.segments();
        let prompt = encode_prompt(&segs[..2], run.model.soft_tokens);
        let out = generate(&t.model, &prompt, &Strategy::Greedy, 24).map_err(|e| e.to_string())?;
        let Segment::Text(want) = &segs[2] else { return Err("unexpected document layout".into()) };
        if detokenize(&out.tokens).ok().as_deref() == Some(want.as_str()) {
            hits += 1;
        }
    }
    ensure!(last < 0.1, "final loss {last:.4}");
    ensure!(hits >= 30, "{hits}/32 captions reproduced");
    Ok(format!("final loss {last:.4}, {hits}/32 captions reproduced"))
}

fn schedule() -> Outcome {
    let full = TrainConfig::paper_scale();
    ensure!(full.warmup_steps == 375 && full.total_steps == 300_000, "full-scale schedule shape");
    let at = |c: &TrainConfig, s| c.lr_at(s).map_err(|e| e.to_string());
    ensure!(at(&full, 375)? == 2e-4, "lr at 375 is {}", at(&full, 375)?);
    ensure!(at(&full, 300_000)? == 0.0, "lr at the end is {}", at(&full, 300_000)?);
    ensure!(at(&full, 0)? == 0.0, "lr at 0 is {}", at(&full, 0)?);
    // The desk schedule, checked step by step against the two line segments.
    let scaled = RunConfig::default().train;
    let (w, total, peak) = (scaled.warmup_steps as f64, scaled.total_steps as f64, scaled.peak_lr);
    for s in 0..=scaled.total_steps {
        let x = s as f64;
        let want = if x <= w { peak * x / w } else { peak * (total - x) / (total - w) };
        let got = at(&scaled, s)?;
        ensure!((got - want).abs() <= 1e-15 * peak.max(1.0), "step {s}: {got} vs {want}");
    }
    ensure!(scaled.lr_at(scaled.total_steps + 1).is_err(), "steps past the end are accepted");
    Ok(format!("full-scale endpoints exact; {} desk steps on the piecewise line", scaled.total_steps + 1))
}

/// Builds the scoring context by hand, one candidate at a time.
fn brute_force_raven<M: EvalModel>(inst: &RavenInstance, model: &M) -> Result<(usize, Vec<f64>), String> {
    let intro = match inst.given.len() {
        3 => "Here are three images:",
        4 => "Here are four images:",
        _ => "Here are eight images:",
    };
    let v = model.soft_tokens();
    let mut scores = Vec::new();
    for cand in &inst.candidates {
        let mut ctx = Context {
            ids: vec![BOS],
            ..Context::default()
        };
        ctx.push_text(intro);
        for g in &inst.given {
            ctx.push_image(g.clone(), v);
        }
        ctx.push_text("The following image is:");
        ctx.push_image(cand.clone(), v);
        ctx.push_text("Is it correct?");
        let mut total = 0.0;
        for t in tokenize("Yes") {
            total += model.next_log_probs(&ctx).map_err(|e| e.to_string())?[t as usize];
            ctx.push_tokens(&[t]);
        }
        scores.push(total);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

fn raven() -> Outcome {
    let insts = synth::raven_instances(2000, 99);
    let model = RandomModel { seed: 17 };
    let mut hits = 0;
    for (i, inst) in insts.iter().enumerate() {
        let (want, want_scores) = brute_force_raven(inst, &model)?;
        let got = raven_scores(inst, &model, YesScoring::FullWord).map_err(|e| e.to_string())?;
        ensure!(got == want_scores, "instance {i}: scores differ");
        let pick = raven_predict(inst, &model, YesScoring::FullWord).map_err(|e| e.to_string())?;
        ensure!(pick == want, "instance {i}: picked {pick}, brute force {want}");
        hits += usize::from(pick == inst.answer_index);
    }
    let acc = 100.0 * hits as f64 / insts.len() as f64;
    ensure!((acc - 100.0 / 6.0).abs() <= 3.0, "random scorer accuracy {acc:.2}%");
    Ok(format!("{} instances match brute force; random scorer {acc:.2}%", insts.len()))
}

fn decoding() -> Outcome {
    let m = desk(ModelConfig::default(), PatchEncoderConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..100 {
        let len = rng.random_range(1..20);
        let text: String = (0..len).map(|_| rng.random_range(b' '..=b'~') as char).collect();
        let mut segs = vec![Segment::Text(text)];
        if i % 4 == 0 {
            segs.push(Segment::Image(checker(i)));
        }
        let ctx = encode_prompt(&segs, m.config.soft_tokens);
        let greedy = generate(&m, &ctx, &Strategy::Greedy, 8).map_err(|e| e.to_string())?;
        let beam = generate(&m, &ctx, &Strategy::Beam(1), 8).map_err(|e| e.to_string())?;
        ensure!(greedy.tokens == beam.tokens, "prompt {i}: {:?} vs {:?}", greedy.tokens, beam.tokens);
    }
    let img = synth::render_text("x");
    let labels: Vec<String> = ["cat", "cattle", "car", "dog", "dogfish", "d"].iter().map(|s| s.to_string()).collect();
    for seed in 0..1000 {
        let got = classify_constrained(&RandomModel { seed }, &img, &labels, true).map_err(|e| e.to_string())?;
        ensure!(labels.contains(&got), "seed {seed}: {got:?} is not a label");
    }
    Ok("beam(1) equals greedy on 100 prompts; 1000 constrained runs return whole labels".into())
}

fn pattern(h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, |y, x| if (x / 4 + y / 4) % 2 == 0 { [0.9, 0.2, 0.1] } else { [0.1, 0.3, 0.8] }).unwrap()
}

fn raw_doc(images: impl IntoIterator<Item = ImageTensor>) -> RawDocument {
    let mut segs = vec![Segment::Text("An ordinary opening paragraph.".into())];
    for (i, img) in images.into_iter().enumerate() {
        segs.push(Segment::Image(img));
        segs.push(Segment::Text(format!("Paragraph {i} about the picture.")));
    }
    RawDocument::new(Some("en"), segs)
}

fn corpus_pipeline() -> Outcome {
    let cfg = FilterConfig::default();
    let capped = filter_document(&raw_doc((0..7).map(|_| pattern(80, 80))), &cfg, 0, 0);
    ensure!(capped.kept_images == vec![0, 1, 2, 3, 4], "cap kept {:?}", capped.kept_images);
    let small = filter_document(&raw_doc([pattern(63, 64), pattern(64, 64), pattern(64, 64)]), &cfg, 0, 0);
    ensure!(small.removals == vec![(1, Rule::ImageTooSmall)], "floor: {:?}", small.removals);
    let flat = ImageTensor::filled(96, 96, [0.4, 0.4, 0.4]).unwrap();
    let single = filter_document(&raw_doc([flat, pattern(64, 64), pattern(64, 64)]), &cfg, 0, 0);
    ensure!(single.removals == vec![(1, Rule::ImageSingleColor)], "single colour: {:?}", single.removals);
    let spam = (0..20).map(|i| format!("https://spam{i}.example/x")).collect::<Vec<_>>().join(" ");
    let mut gib = raw_doc([pattern(64, 64), pattern(64, 64)]);
    gib.segments.push(Segment::Text(spam));
    let g = filter_document(&gib, &cfg, 0, 0);
    ensure!(g.is_kept() && g.removals == vec![(gib.segments.len() - 1, Rule::GibberishText)], "gibberish: {:?}", g.removals);

    let one = raw_doc([pattern(64, 64)]);
    let dropped = (0..10_000u64)
        .filter(|&i| {
            let d = filter_document(&one, &cfg, 42, i);
            d.verdict == Verdict::Discard && d.reasons == vec![Rule::SingleImageDrop]
        })
        .count();
    let rate = dropped as f64 / 10_000.0;
    ensure!((rate - 0.5).abs() <= 0.02, "drop rate {rate}");

    let raw = mmlm_corpus::synth::raw_corpus(64, 5);
    let a = run_pipeline(&raw, &cfg, 9);
    let b = run_pipeline(&raw, &cfg, 9);
    let bytes = |docs: &[MultimodalDocument]| {
        let mut buf = Vec::new();
        write_archive(&mut buf, docs).unwrap();
        buf
    };
    let first = bytes(&a.documents);
    ensure!(first == bytes(&b.documents), "same seed, different archives");
    ensure!(a.report.to_json() == b.report.to_json(), "same seed, different reports");
    let back = read_archive(first.as_slice()).map_err(|e| e.to_string())?;
    ensure!(back == a.documents, "archive round trip changed the documents");
    ensure!(bytes(&back) == first, "archive round trip is not byte-exact");
    Ok(format!("rules hold; single-image drop rate {rate:.4}; {} kept documents round-trip", a.documents.len()))
}

fn golden_prompts() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../eval/tests/fixtures");
    let img = |shade: f32| ImageTensor::filled(4, 4, [shade, 0.5, 0.5]).unwrap();
    let q = |s: &str, shade| Example::new(Some(img(shade))).field("question", s);
    let web = Example::new(Some(img(0.0)))
        .field("WebText", "Title: Deep Waters Publisher: Harbor Press")
        .field("question", "Who is the publisher of this book?");
    let web_demo = Example::new(Some(img(0.5)))
        .field("WebText", "Title: Cold Stars Year: 1998")
        .field("question", "When was this book published?")
        .answer("1998");
    let birds: Vec<(String, String)> = vec![
        (
            "three toed woodpecker".into(),
            "It has black and white stripes throughout the body and a yellow crown.".into(),
        ),
        (
            "downy woodpecker".into(),
            "It has white spots on its black wings and some red on its crown.".into(),
        ),
    ];
    let raven = |n: usize| {
        let inst = RavenInstance::new(
            (0..n).map(|i| img(i as f32 / 10.0)).collect(),
            (0..6).map(|i| img(0.9 - i as f32 / 10.0)).collect(),
            2,
        )
        .unwrap();
        raven_prompt(&inst, 4)
    };
    let e = |r: mmlm_eval::Result<Prompt>| r.map_err(|e| e.to_string());
    let cases: Vec<(&str, Prompt)> = vec![
        ("caption_k0.txt", e(build_prompt(&CAPTION, &Example::new(Some(img(0.0))), &[]))?),
        (
            "caption_k2.txt",
            e(build_prompt(
                &CAPTION,
                &Example::new(Some(img(0.3))),
                &[
                    Example::new(Some(img(0.1))).answer("a red circle."),
                    Example::new(Some(img(0.2))).answer("a blue square."),
                ],
            ))?,
        ),
        ("vqa_k0.txt", e(build_prompt(&VQA, &q("What color is the shape?", 0.0), &[]))?),
        (
            "vqa_k2.txt",
            e(build_prompt(
                &VQA,
                &q("How many are there?", 0.3),
                &[q("What color is it?", 0.1).answer("red"), q("What shape is it?", 0.2).answer("circle")],
            ))?,
        ),
        ("sst2_k0.txt", e(build_prompt(&SST2, &Example::new(Some(img(0.0))), &[]))?),
        ("hateful_k0.txt", e(build_prompt(&HATEFUL, &Example::new(Some(img(0.0))), &[]))?),
        ("websrc_k0.txt", e(build_prompt(&WEBSRC, &web, &[]))?),
        ("websrc_k1.txt", e(build_prompt(&WEBSRC, &web, &[web_demo]))?),
        ("imagenet_k0.txt", e(build_prompt(&IMAGENET, &Example::new(Some(img(0.0))), &[]))?),
        ("cub_with_descriptions.txt", e(descriptions_prompt(&img(0.0), &birds, "woodpecker", true))?),
        ("cub_without_descriptions.txt", e(descriptions_prompt(&img(0.0), &birds, "woodpecker", false))?),
        ("cot_stage1.txt", e(cot_rationale_prompt(&img(0.0)))?),
        ("cot_stage2.txt", e(cot_answer_prompt(&img(0.0), "The picture shows the words so good."))?),
        ("raven_three.txt", raven(3)),
        ("raven_four.txt", raven(4)),
        ("raven_eight.txt", raven(8)),
        (
            "object_size_k0.txt",
            e(build_prompt(&OBJECT_SIZE, &Example::new(None).field("Item1", "sofa").field("Item2", "cat"), &[]))?,
        ),
        ("object_color_k0.txt", e(build_prompt(&OBJECT_COLOR, &Example::new(None).field("Object", "the sky"), &[]))?),
        (
            "lang_k1.txt",
            e(build_prompt(
                &LANGUAGE,
                &Example::new(None).field("context", "Is sofa larger than cat?"),
                &[Example::new(None).field("context", "The color of grass is?").answer("green")],
            ))?,
        ),
    ];
    let on_disk = std::fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))?.count();
    ensure!(on_disk == cases.len(), "{on_disk} fixtures on disk, {} rendered", cases.len());
    for (name, p) in &cases {
        let want = std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(p.render() == want, "{name} differs from its fixture");
    }
    Ok(format!("{} prompts match their fixtures byte for byte", cases.len()))
}

fn mmlm(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mmlm")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("mmlm {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline_run(dir: &Path) -> Result<Vec<u8>, String> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf");
    let p = |name: &str| -> String { dir.join(name).to_string_lossy().into_owned() };
    mmlm(&["synth", "corpus", "--n", "48", "--seed", "3", "--out", &p("raw.jsonl")])?;
    mmlm(&["build-corpus", "--in", &p("raw.jsonl"), "--out", &p("corpus.mmla"), "--seed", "1"])?;
    mmlm(&["train", "--config", &config.to_string_lossy(), "--data", &p("corpus.mmla"), "--out", &p("ckpt")])?;
    mmlm(&["synth", "dataset", "--task", "caption", "--n", "6", "--seed", "2", "--out", &p("caption.jsonl")])?;
    mmlm(&[
        "eval", "--task", "caption", "--ckpt", &p("ckpt"), "--data", &p("caption.jsonl"), "--report", &p("report.json"),
        "--shots", "1", "--seed", "4",
    ])?;
    std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())
}

fn reproducibility() -> Outcome {
    let dirs: Vec<PathBuf> = (0..2).map(|_| tempfile::tempdir().unwrap().keep()).collect();
    let reports: Vec<Vec<u8>> = dirs.iter().map(|d| pipeline_run(d)).collect::<Result<_, _>>()?;
    let same = reports[0] == reports[1];
    let ckpts_same = [checkpoint::MANIFEST, checkpoint::BLOB].iter().all(|f| {
        std::fs::read(dirs[0].join("ckpt").join(f)).ok() == std::fs::read(dirs[1].join("ckpt").join(f)).ok()
    });
    for d in &dirs {
        let _ = std::fs::remove_dir_all(d);
    }
    ensure!(same, "reports differ");
    ensure!(ckpts_same, "checkpoints differ");
    Ok(format!("two runs, identical {}-byte reports and checkpoints", reports[0].len()))
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "gradient fidelity", secs(60), gradient_fidelity),
        criterion(2, "causality", secs(60), causality),
        criterion(3, "relative positions", secs(60), relative_positions),
        criterion(4, "loss masking", secs(60), loss_masking),
        criterion(5, "vision freezing", secs(60), vision_freezing),
        criterion(6, "resampler shape", secs(60), resampler_shape),
        criterion(7, "overfit", secs(120), overfit),
        criterion(8, "learning-rate schedule", secs(10), schedule),
        criterion(9, "raven scoring", secs(120), raven),
        criterion(10, "decoding", secs(120), decoding),
        criterion(11, "corpus pipeline", secs(60), corpus_pipeline),
        criterion(12, "golden prompts", secs(10), golden_prompts),
        criterion(13, "reproducibility", secs(300), reproducibility),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
