//! One function per subcommand.

use crate::error::{Failure, Outcome};
use crate::{BuildCorpusArgs, Command, EvalArgs, GenerateArgs, InstructArgs, Mock, SynthCommand, TrainArgs, YesArg};
use mmlm_core::checkpoint::{self, Checkpoint, MANIFEST};
use mmlm_core::generate::{generate, Strategy};
use mmlm_core::image::ImageTensor;
use mmlm_core::stream::{build_instruction_unit, encode_prompt, MultimodalDocument, Segment};
use mmlm_core::tokenizer::detokenize_lossy;
use mmlm_core::train::{build_sources, TrainConfig, Trainer};
use mmlm_core::{LanguageModel, MultimodalLm, RunConfig};
use mmlm_corpus::{archive, raw, run_pipeline, FilterConfig};
use mmlm_eval::data::Dataset;
use mmlm_eval::model::{RandomModel, UniformModel};
use mmlm_eval::report::{run_task, EvalOptions};
use mmlm_eval::tasks::YesScoring;
use serde::Deserialize;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

pub fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    match cmd {
        Command::BuildCorpus(a) => build_corpus(a, out, err),
        Command::Train(a) => train(a, out, err),
        Command::Instruct(a) => instruct(a, out, err),
        Command::Eval(a) => eval(a, out, err),
        Command::Generate(a) => generate_cmd(a, out, err),
        Command::Synth(s) => synth(s, out),
    }
}

fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn open(path: &Path) -> Outcome<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::data(format!("cannot open {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn echo_config(err: &mut dyn Write, run: &RunConfig) -> Outcome {
    for (k, v) in run.entries() {
        writeln!(err, "config {k} = {v}")?;
    }
    Ok(())
}

fn load_config(path: &Path, base: RunConfig) -> Outcome<RunConfig> {
    let text = read_text(path)?;
    let mut run = base;
    run.overlay(&text).map_err(|e| Failure::from(e).context(path.display()))?;
    Ok(run)
}

fn load_checkpoint(dir: &Path) -> Outcome<Checkpoint> {
    checkpoint::load(dir).map_err(|e| Failure::from(e).context(dir.display()))
}

fn load_archives(paths: &[PathBuf]) -> Outcome<Vec<MultimodalDocument>> {
    let mut docs = Vec::new();
    for p in paths {
        docs.extend(archive::load(p).map_err(|e| Failure::from(e).context(p.display()))?);
    }
    Ok(docs)
}

fn build_corpus(a: BuildCorpusArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let cfg = FilterConfig::default();
    writeln!(
        err,
        "config seed = {}\nconfig min_side = {}\nconfig single_color_variance = {}\nconfig max_images = {}\nconfig single_image_drop = {}\nconfig gibberish_threshold = {}",
        a.seed, cfg.min_side, cfg.single_color_variance, cfg.max_images, cfg.single_image_drop, cfg.gibberish.threshold
    )?;
    let docs = raw::read_jsonl(open(&a.input)?).map_err(|e| Failure::from(e).context(a.input.display()))?;
    let result = run_pipeline(&docs, &cfg, a.seed);
    archive::save(&a.out, &result.documents).map_err(|e| Failure::from(e).context(a.out.display()))?;
    let report_path = a.report.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        p.into()
    });
    write_file(&report_path, result.report.to_json().as_bytes())?;
    let r = &result.report;
    writeln!(
        out,
        "kept {} of {} documents ({} of {} images) -> {}",
        r.kept_documents,
        r.input_documents,
        r.kept_images,
        r.input_images,
        a.out.display()
    )?;
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let run = load_config(&a.config, RunConfig::default())?;
    echo_config(err, &run)?;
    let docs = load_archives(&a.data)?;
    writeln!(err, "loaded {} documents from {} archive(s)", docs.len(), a.data.len())?;
    let sources = build_sources(&docs, Vec::new(), &run)?;
    let mut trainer = if a.resume && a.out.join(MANIFEST).exists() {
        let ck = load_checkpoint(&a.out)?;
        if ck.run != run {
            return Err(Failure::usage(format!(
                "checkpoint in {} was trained with a different configuration",
                a.out.display()
            )));
        }
        let opt = ck
            .optimizer
            .ok_or_else(|| Failure::data(format!("checkpoint in {} has no optimizer state", a.out.display())))?;
        writeln!(err, "resuming at step {}", ck.step)?;
        Trainer::resume(ck.model, run, sources, opt, ck.step)?
    } else {
        Trainer::new(MultimodalLm::new(run.model.clone(), run.vision.clone())?, run, sources)?
    };
    trainer.run(Some(&a.out), |m| {
        let _ = writeln!(err, "{}", m.log_line());
    })?;
    writeln!(out, "checkpoint {} at step {}", a.out.display(), trainer.step)?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstructionLine {
    instruction: String,
    #[serde(default)]
    input: String,
    output: String,
}

fn instruct(a: InstructArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let ck = load_checkpoint(&a.ckpt)?;
    let mut base = ck.run.clone();
    base.train = TrainConfig::instruction_from(&ck.run.train);
    let run = load_config(&a.config, base)?;
    if run.model != ck.run.model || run.vision != ck.run.vision {
        return Err(Failure::usage("instruction tuning cannot change model or vision settings"));
    }
    echo_config(err, &run)?;
    let mut units = Vec::new();
    for (n, line) in read_text(&a.instructions)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: InstructionLine = serde_json::from_str(line)
            .map_err(|e| Failure::data(format!("{} line {}: {e}", a.instructions.display(), n + 1)))?;
        units.push(
            build_instruction_unit(&l.instruction, &l.input, &l.output)
                .map_err(|e| Failure::from(e).context(format!("{} line {}", a.instructions.display(), n + 1)))?,
        );
    }
    let docs = load_archives(&a.data)?;
    writeln!(err, "loaded {} instructions and {} documents", units.len(), docs.len())?;
    let sources = build_sources(&docs, units, &run)?;
    let mut trainer = Trainer::new(ck.model, run, sources)?;
    let dest = a.out.unwrap_or(a.ckpt);
    trainer.run(Some(&dest), |m| {
        let _ = writeln!(err, "{}", m.log_line());
    })?;
    writeln!(out, "checkpoint {} at step {}", dest.display(), trainer.step)?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let data = Dataset::read(&a.task, open(&a.data)?).map_err(|e| Failure::from(e).context(a.data.display()))?;
    let opts = EvalOptions {
        shots: a.shots,
        seed: a.seed,
        max_new: a.max_new,
        yes: match a.yes {
            YesArg::FullWord => YesScoring::FullWord,
            YesArg::FirstToken => YesScoring::FirstToken,
        },
        cot: a.cot,
        constrained: !a.unconstrained,
        descriptions: !a.no_descriptions,
        beam: a.beam,
    };
    writeln!(err, "config {opts:?}")?;
    let report = match (&a.ckpt, a.mock) {
        (Some(dir), _) => {
            let ck = load_checkpoint(dir)?;
            echo_config(err, &ck.run)?;
            run_task(&data, &ck.model, &format!("checkpoint step {}", ck.step), &opts)?
        }
        (None, Some(Mock::Uniform)) => run_task(&data, &UniformModel, "mock uniform", &opts)?,
        (None, Some(Mock::Random)) => run_task(&data, &RandomModel { seed: a.seed }, "mock random", &opts)?,
        (None, None) => return Err(Failure::usage("either --ckpt or --mock is required")),
    };
    write_file(&a.report, report.to_json().as_bytes())?;
    for (k, v) in &report.metrics {
        writeln!(out, "{} {k}={v:.4}", report.task)?;
    }
    Ok(())
}

fn generate_cmd(a: GenerateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let ck = load_checkpoint(&a.ckpt)?;
    echo_config(err, &ck.run)?;
    let mut segments = Vec::new();
    match &a.image {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
            let img = ImageTensor::from_png_bytes(&bytes).map_err(|e| Failure::from(e).context(path.display()))?;
            let (before, after) = a.prompt.split_once("<image>").unwrap_or((&a.prompt, ""));
            if !before.is_empty() {
                segments.push(Segment::Text(before.into()));
            }
            segments.push(Segment::Image(img));
            if !after.is_empty() {
                segments.push(Segment::Text(after.into()));
            }
        }
        None => segments.push(Segment::Text(a.prompt.clone())),
    }
    let model = &ck.model;
    let ctx = encode_prompt(&segments, model.config.soft_tokens);
    let room = model.max_len().saturating_sub(ctx.len());
    let strategy = match a.beam {
        Some(k) if k > 1 => Strategy::Beam(k),
        Some(0) => return Err(Failure::usage("beam width must be at least 1")),
        _ => Strategy::Greedy,
    };
    let g = generate(model, &ctx, &strategy, a.max_new.min(room))?;
    writeln!(out, "{}", detokenize_lossy(&g.tokens)?)?;
    Ok(())
}

fn synth(cmd: SynthCommand, out: &mut dyn Write) -> Outcome {
    match cmd {
        SynthCommand::Corpus { n, seed, out: path } => {
            let docs = mmlm_corpus::synth::raw_corpus(n, seed);
            let mut buf = Vec::new();
            raw::write_jsonl(&mut buf, &docs)?;
            write_file(&path, &buf)?;
            writeln!(out, "{n} raw documents -> {}", path.display())?;
        }
        SynthCommand::Dataset { task, n, seed, out: path } => {
            let data = mmlm_eval::synth::dataset(&task, n, seed)?;
            let mut buf = Vec::new();
            data.write(&mut buf)?;
            write_file(&path, &buf)?;
            writeln!(out, "{n} {task} items -> {}", path.display())?;
        }
    }
    Ok(())
}
