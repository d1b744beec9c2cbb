//! Checkpoint directories: a text manifest plus one raw tensor blob.
//!
//! `manifest.txt`:
//!
//! ```text
//! mmlm-checkpoint 1
//! step <completed steps>
//! optimizer_t <AdamW step count, or `none`>
//! config <key> = <value>
//! tensor <name> f64 <trainable 0|1> <d0,d1,...> <offset> <bytes>
//! ```
//!
//! `tensors.bin` holds the tensors back to back as little-endian f64.
//! Optimizer moments are stored as tensors named `adam.m/<param>` and
//! `adam.v/<param>`.

use std::fs;
use std::path::Path;

use mmlm_numerics::{optim::OptimizerState, ParamId};

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::model::MultimodalLm;

pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "tensors.bin";
const HEADER: &str = "mmlm-checkpoint 1";

pub struct Checkpoint {
    pub run: RunConfig,
    pub step: u64,
    pub model: MultimodalLm,
    pub optimizer: Option<OptimizerState>,
}

struct Entry<'a> {
    name: String,
    trainable: bool,
    shape: Vec<usize>,
    data: &'a [f64],
}

pub fn save(
    dir: &Path,
    run: &RunConfig,
    model: &MultimodalLm,
    optimizer: Option<&OptimizerState>,
    step: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let store = &model.store;
    let mut entries = Vec::new();
    for id in store.ids() {
        let e = store.entry(id);
        entries.push(Entry {
            name: e.name.clone(),
            trainable: e.trainable,
            shape: e.tensor.shape().to_vec(),
            data: e.tensor.data(),
        });
    }
    if let Some(opt) = optimizer {
        for (prefix, moments) in [("adam.m/", &opt.m), ("adam.v/", &opt.v)] {
            for id in store.ids() {
                let e = store.entry(id);
                entries.push(Entry {
                    name: format!("{prefix}{}", e.name),
                    trainable: false,
                    shape: e.tensor.shape().to_vec(),
                    data: &moments[id.0],
                });
            }
        }
    }
    let mut manifest = format!("{HEADER}\nstep {step}\n");
    manifest += &match optimizer {
        Some(o) => format!("optimizer_t {}\n", o.t),
        None => "optimizer_t none\n".into(),
    };
    for (k, v) in run.entries() {
        manifest += &format!("config {k} = {v}\n");
    }
    let mut blob = Vec::new();
    for e in &entries {
        let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        let bytes = e.data.len() * 8;
        manifest += &format!(
            "tensor {} f64 {} {} {} {}\n",
            e.name,
            e.trainable as u8,
            dims.join(","),
            blob.len(),
            bytes
        );
        for v in e.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(BLOB), blob)?;
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| bad(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    let blob = fs::read(dir.join(BLOB)).map_err(|e| bad(format!("cannot read {}: {e}", dir.join(BLOB).display())))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("missing or unsupported manifest header"));
    }
    let mut step = None;
    let mut opt_t: Option<Option<u64>> = None;
    let mut config_text = String::new();
    let mut tensors = Vec::new();
    for line in lines {
        let (kind, rest) = line.split_once(' ').ok_or_else(|| bad(format!("bad manifest line {line:?}")))?;
        match kind {
            "step" => step = Some(rest.parse().map_err(|_| bad("bad step"))?),
            "optimizer_t" => {
                opt_t = Some(match rest {
                    "none" => None,
                    t => Some(t.parse().map_err(|_| bad("bad optimizer_t"))?),
                })
            }
            "config" => {
                config_text += rest;
                config_text.push('\n');
            }
            "tensor" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 6 || f[1] != "f64" {
                    return Err(bad(format!("bad tensor line {line:?}")));
                }
                let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number in {line:?}")));
                let shape = if f[3].is_empty() {
                    Vec::new()
                } else {
                    f[3].split(',').map(parse).collect::<Result<Vec<_>>>()?
                };
                let (offset, bytes) = (parse(f[4])?, parse(f[5])?);
                let end = offset.checked_add(bytes).filter(|&e| e <= blob.len());
                let end = end.ok_or_else(|| bad(format!("tensor {} lies outside the blob", f[0])))?;
                if bytes != shape.iter().product::<usize>() * 8 {
                    return Err(bad(format!("tensor {} size does not match its shape", f[0])));
                }
                let data: Vec<f64> = blob[offset..end]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect();
                tensors.push((f[0].to_string(), f[2] == "1", shape, data));
            }
            other => return Err(bad(format!("unknown manifest entry `{other}`"))),
        }
    }
    let step = step.ok_or_else(|| bad("manifest has no step"))?;
    let opt_t = opt_t.ok_or_else(|| bad("manifest has no optimizer_t"))?;
    let run = RunConfig::parse(&config_text)?;
    let mut model = MultimodalLm::new(run.model.clone(), run.vision.clone())?;
    let mut optimizer = opt_t.map(|t| {
        let mut o = OptimizerState::new(&model.store, run.train.adam);
        o.t = t;
        o
    });
    let mut seen = vec![false; model.store.len()];
    for (name, trainable, shape, data) in tensors {
        let (target, pname) = match name.split_once('/') {
            Some((p @ ("adam.m" | "adam.v"), rest)) => (Some(p), rest.to_string()),
            _ => (None, name.clone()),
        };
        let id: ParamId = model
            .store
            .id(&pname)
            .ok_or_else(|| bad(format!("checkpoint tensor `{name}` does not belong to this model")))?;
        if model.store.get(id).shape() != shape.as_slice() {
            return Err(bad(format!(
                "tensor `{name}` has shape {shape:?}, model expects {:?}",
                model.store.get(id).shape()
            )));
        }
        match (target, optimizer.as_mut()) {
            (None, _) => {
                model.store.get_mut(id).data_mut().copy_from_slice(&data);
                model.store.set_trainable(id, trainable);
                seen[id.0] = true;
            }
            (Some("adam.m"), Some(o)) => o.m[id.0] = data,
            (Some(_), Some(o)) => o.v[id.0] = data,
            (Some(_), None) => return Err(bad("optimizer moments without optimizer state")),
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(bad(format!("checkpoint lacks parameter `{}`", model.store.name(ParamId(i)))));
    }
    Ok(Checkpoint {
        run,
        step,
        model,
        optimizer,
    })
}
